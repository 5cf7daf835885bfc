// SPDX-License-Identifier: Apache-2.0
#include "editflow/judge.hpp"

#include "editflow/errors.hpp"
#include "editflow/io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <sstream>

namespace editflow::judge {

using world::Anchors;
using world::Edit;
using world::EditType;
using world::Palette;
using world::Rgb;
using world::ShapeKind;

namespace {

constexpr int S = world::ToyScene::kSize;
constexpr int HS = S / 2; // presence maps are pooled at half resolution

std::string verify_question(const std::string& instruction) {
    return "You are a professional digital artist and an expert image editor. You will be "
           "provided with two images.\n\n"
           "The first being the original real image, and the second being an edited version of "
           "the first.\n"
           "The objective is to evaluate if the editing instruction has been executed in the "
           "second image.\n\n"
           "Editing instruction: " + instruction + "\n\n"
           "Answer with a Yes or No.\n"
           "Note that sometimes the two images might look identical due to the failure of image "
           "editing. Answer No in that case.";
}

std::string removal_question(const std::string& object_name) {
    return "You are a professional digital artist and an expert image captioner. You will be "
           "provided with an image.\n\n"
           "Answer with a Yes or No if the image has " + object_name + ".";
}

std::string identity_question(const std::string& instruction) {
    return "You are a professional digital artist and an expert image editor. You will be "
           "provided with two images.\n\n"
           "Answer with a Yes or No if the second image is exactly the same as the first image. "
           "IGNORE the changes in the second image because of the edit: " + instruction +
           ". Everything else should be the same.";
}

} // namespace

std::array<QAPair, 2> build_qa(const world::EditRecord& record) {
    QAPair q1, q2;
    switch (record.edit_type) {
    case EditType::remove:
        q1.question = removal_question(record.object_name);
        q1.expected = Answer::no;
        break;
    case EditType::add:
    case EditType::color:
    case EditType::background:
    case EditType::replace:
    case EditType::do_nothing:
        q1.question = verify_question(record.instruction);
        q1.expected = Answer::yes;
        break;
    default:
        throw ConfigError("build_qa: unknown edit type");
    }
    q2.question = identity_question(record.instruction);
    q2.expected = Answer::yes;
    return {q1, q2};
}

std::array<QAPair, 2> customization_qa(const std::string& object_name) {
    QAPair q1, q2;
    q1.question =
        "You are a professional digital artist and an expert in image editing. You will be "
        "provided with two images.\n\n"
        "Answer with a Yes or No if the " + object_name +
        " in the second image is in a different pose and location than in the first image.\n"
        "Note that sometimes the second image might not have the same object because of the "
        "failure of image editing. Answer No in that case.";
    q1.expected = Answer::yes;
    q2.question =
        "You are a professional digital artist and an expert in image editing. You will be "
        "provided with two images.\n\n"
        "Answer with a Yes or No if the " + object_name +
        " in the second image is the exact same identity, with similar color, shape, and texture "
        "as in the first image.\n"
        "Note that sometimes the second image might not have the same object because of the "
        "failure of image editing. Answer No in that case.";
    q2.expected = Answer::yes;
    return {q1, q2};
}

double vlm_edit_loss(const std::vector<JudgeVerdict>& verdicts) {
    if (verdicts.empty()) throw InputError("vlm_edit_loss: empty verdict list");
    double loss = 0.0;
    for (const auto& v : verdicts) {
        if (!std::isfinite(v.logit_yes) || !std::isfinite(v.logit_no))
            throw NumericError("vlm_edit_loss: non-finite logits");
        double d = v.expected == Answer::yes ? static_cast<double>(v.logit_yes) - v.logit_no
                                             : static_cast<double>(v.logit_no) - v.logit_yes;
        // -log sigma(d) = softplus(-d)
        loss += std::max(-d, 0.0) + std::log1p(std::exp(-std::abs(d)));
    }
    return loss;
}

double standard_ce_loss(const std::vector<JudgeVerdict>& verdicts,
                        const std::vector<std::vector<float>>& vocab_logits, int yes_idx,
                        int no_idx) {
    if (verdicts.size() != vocab_logits.size())
        throw InputError("standard_ce_loss: verdict/logit count mismatch");
    double loss = 0.0;
    for (size_t i = 0; i < verdicts.size(); ++i) {
        const auto& logits = vocab_logits[i];
        if (yes_idx < 0 || no_idx < 0 || yes_idx >= static_cast<int>(logits.size()) ||
            no_idx >= static_cast<int>(logits.size()))
            throw ConfigError("standard_ce_loss: yes/no token index out of range");
        int correct = verdicts[i].expected == Answer::yes ? yes_idx : no_idx;
        double m = logits[0];
        for (float l : logits) m = std::max(m, static_cast<double>(l));
        double z = 0.0;
        for (float l : logits) z += std::exp(static_cast<double>(l) - m);
        loss += -(static_cast<double>(logits[static_cast<size_t>(correct)]) - m - std::log(z));
    }
    return loss;
}

// --- toy judge ---------------------------------------------------------------

namespace {

// Parsed meaning of one question produced by the template grammar above.
struct ParsedQuestion {
    enum class Kind { verify, remove_presence, identity } kind;
    Edit edit;          // verify / identity
    int obj_color = -1; // remove_presence
    ShapeKind obj_kind = ShapeKind::circle;
};

std::string slice_between(const std::string& text, const std::string& marker,
                          const std::string& terminator) {
    size_t at = text.find(marker);
    if (at == std::string::npos) return {};
    size_t b = at + marker.size();
    size_t e = terminator.empty() ? text.size() : text.find(terminator, b);
    if (e == std::string::npos) e = text.size();
    return text.substr(b, e - b);
}

ParsedQuestion parse_question(const std::string& q) {
    ParsedQuestion p;
    std::string inst = slice_between(q, "because of the edit: ", ". Everything else");
    if (!inst.empty()) {
        p.kind = ParsedQuestion::Kind::identity;
        p.edit = world::parse_instruction(inst);
        return p;
    }
    inst = slice_between(q, "Editing instruction: ", "\n");
    if (!inst.empty()) {
        p.kind = ParsedQuestion::Kind::verify;
        p.edit = world::parse_instruction(inst);
        return p;
    }
    std::string obj = slice_between(q, "if the image has ", "");
    if (!obj.empty()) {
        if (!obj.empty() && obj.back() == '.') obj.pop_back();
        std::istringstream is(obj);
        std::string color, kind;
        is >> color >> kind;
        p.kind = ParsedQuestion::Kind::remove_presence;
        p.obj_color = Palette::shape_color_index(color);
        if (p.obj_color < 0)
            throw ConfigError("toy judge: unknown object color in question: " + obj);
        if (kind == "circle") p.obj_kind = ShapeKind::circle;
        else if (kind == "square") p.obj_kind = ShapeKind::square;
        else if (kind == "triangle") p.obj_kind = ShapeKind::triangle;
        else throw ConfigError("toy judge: unknown object kind in question: " + obj);
        return p;
    }
    throw ConfigError("toy judge: question does not match the template grammar");
}

bool shape_inside(ShapeKind kind, float r, float dx, float dy) {
    switch (kind) {
    case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: return std::abs(dx) <= 0.82F * r && std::abs(dy) <= 0.82F * r;
    case ShapeKind::triangle: {
        float ay = -r, bx = -0.95F * r, by = 0.78F * r, cx = 0.95F * r, cy = 0.78F * r;
        auto side = [&](float x1, float y1, float x2, float y2) {
            return (x2 - x1) * (dy - y1) - (y2 - y1) * (dx - x1);
        };
        float d1 = side(0.0F, ay, bx, by), d2 = side(bx, by, cx, cy), d3 = side(cx, cy, 0.0F, ay);
        bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
        bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
        return !(has_neg && has_pos);
    }
    }
    return false;
}

// Signed half-resolution templates: positive (normalized) inside the shape,
// -0.5 (normalized) outside, so flat color fields score ~0.5 and matching
// shapes score ~1.
Tensor build_kind_kernels(int full_radius) {
    const int k = 7;
    const float r = static_cast<float>(full_radius) / 2.0F;
    Tensor ker({3, 1, k, k});
    for (int kind = 0; kind < 3; ++kind) {
        std::vector<float> cov(static_cast<size_t>(k) * k, 0.0F);
        float in_sum = 0.0F, out_sum = 0.0F;
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x) {
                int hits = 0;
                for (int sy = 0; sy < 3; ++sy)
                    for (int sx = 0; sx < 3; ++sx) {
                        float px = static_cast<float>(x - k / 2) + (sx + 0.5F) / 3.0F - 0.5F;
                        float py = static_cast<float>(y - k / 2) + (sy + 0.5F) / 3.0F - 0.5F;
                        if (shape_inside(static_cast<ShapeKind>(kind), r, px, py)) ++hits;
                    }
                float c = static_cast<float>(hits) / 9.0F;
                cov[static_cast<size_t>(y) * k + x] = c;
                in_sum += c;
                out_sum += 1.0F - c;
            }
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x) {
                float c = cov[static_cast<size_t>(y) * k + x];
                ker[((kind * 1 + 0) * k + y) * k + x] =
                    c / in_sum - 0.5F * (1.0F - c) / out_sum;
            }
    }
    return ker;
}

// Per-sample constant inputs for the differentiable pipeline. All gates are
// 0/1; unused slots hold benign defaults.
struct QuestionPlan {
    Rgb color_pri{0, 0, 0};
    Rgb color_sec{0, 0, 0};
    int kind_pri = 0;
    int kind_sec = 0;
    float g_pri = 0.0F;
    float g_sec = 0.0F;
    float g_ring = 0.0F;
    float g_id = 0.0F;
    float bias = 0.0F;
    bool loc_weighted = false;
    int loc_anchor = -1;
};

} // namespace

ToySoftJudge::ToySoftJudge(ToyJudgeConfig cfg) : cfg_(cfg) {
    kind_kernels_ = build_kind_kernels(cfg_.template_radius);
}

ad::Var ToySoftJudge::logit_diff_batch(const Tensor& refs, const ad::Var& gen,
                                       const std::vector<QAPair>& qs) const {
    const auto& gshape = gen.shape();
    if (gshape.size() != 4 || gshape[1] != 3 || gshape[2] != S || gshape[3] != S)
        throw InputError("toy judge: generated batch must be [B,3,32,32]");
    int B = gshape[0];
    if (static_cast<int>(qs.size()) != B)
        throw InputError("toy judge: one question per sample required");
    if (refs.ndim() != 4 || refs.dim(0) != B)
        throw InputError("toy judge: reference batch must match");

    const float a = cfg_.pool_sharpness;
    const auto& shape_palette = Palette::shape_colors();
    const auto& bg_palette = Palette::background_colors();

    std::vector<QuestionPlan> plans(static_cast<size_t>(B));
    Tensor id_w({B, 1, S, S});
    for (int b = 0; b < B; ++b) {
        QuestionPlan& plan = plans[static_cast<size_t>(b)];
        ParsedQuestion pq = parse_question(qs[static_cast<size_t>(b)].question);
        auto scolor = [&](int idx) { return shape_palette[static_cast<size_t>(idx)].second; };
        switch (pq.kind) {
        case ParsedQuestion::Kind::remove_presence:
            plan.color_pri = scolor(pq.obj_color);
            plan.kind_pri = static_cast<int>(pq.obj_kind);
            plan.g_pri = 1.0F;
            plan.bias = -0.30F;
            break;
        case ParsedQuestion::Kind::verify:
            switch (pq.edit.type) {
            case EditType::add:
                plan.color_pri = scolor(pq.edit.new_color);
                plan.kind_pri = static_cast<int>(pq.edit.new_kind);
                plan.g_pri = 1.0F;
                plan.bias = -0.30F;
                plan.loc_weighted = true;
                plan.loc_anchor = pq.edit.anchor;
                break;
            case EditType::color:
            case EditType::replace:
                plan.color_pri = scolor(pq.edit.new_color);
                plan.kind_pri = static_cast<int>(pq.edit.type == EditType::color
                                                     ? pq.edit.obj_kind
                                                     : pq.edit.new_kind);
                plan.color_sec = scolor(pq.edit.obj_color);
                plan.kind_sec = static_cast<int>(pq.edit.obj_kind);
                plan.g_pri = 1.0F;
                plan.g_sec = -1.0F;
                break;
            case EditType::background:
                plan.color_pri = bg_palette[static_cast<size_t>(pq.edit.new_bg)].second;
                plan.g_ring = 1.0F;
                plan.bias = -0.50F;
                break;
            case EditType::remove:
                // Generic verification for removal: absence of the object.
                plan.color_pri = scolor(pq.edit.obj_color);
                plan.kind_pri = static_cast<int>(pq.edit.obj_kind);
                plan.g_pri = -1.0F;
                plan.bias = 0.30F;
                break;
            case EditType::do_nothing:
                plan.g_id = 1.0F;
                plan.bias = cfg_.identity_margin;
                break;
            }
            break;
        case ParsedQuestion::Kind::identity:
            plan.g_id = 1.0F;
            plan.bias = cfg_.identity_margin;
            break;
        }

        // Identity attention: where the edit is allowed to change pixels.
        if (plan.g_id != 0.0F) {
            std::vector<float> att(static_cast<size_t>(S) * S, 0.0F);
            const Edit& e = pq.edit;
            if (pq.kind == ParsedQuestion::Kind::identity &&
                (e.type == EditType::remove || e.type == EditType::color ||
                 e.type == EditType::replace)) {
                // Soft match of the referenced object color on the reference image.
                Rgb oc = scolor(e.obj_color);
                std::vector<float> m(static_cast<size_t>(S) * S);
                const float* rp = refs.data() + static_cast<int64_t>(b) * 3 * S * S;
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x) {
                        float dr = rp[y * S + x] - oc.r;
                        float dg = rp[S * S + y * S + x] - oc.g;
                        float db = rp[2 * S * S + y * S + x] - oc.b;
                        float d2 = dr * dr + dg * dg + db * db;
                        m[static_cast<size_t>(y) * S + x] =
                            std::exp(-d2 / (2.0F * cfg_.color_tau * cfg_.color_tau));
                    }
                // Dilate with a 5x5 box and saturate.
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x) {
                        float acc = 0.0F;
                        for (int dy = -2; dy <= 2; ++dy)
                            for (int dx = -2; dx <= 2; ++dx) {
                                int yy = y + dy, xx = x + dx;
                                if (yy < 0 || yy >= S || xx < 0 || xx >= S) continue;
                                acc += m[static_cast<size_t>(yy) * S + xx];
                            }
                        att[static_cast<size_t>(y) * S + x] = std::min(1.0F, 3.0F * acc / 25.0F);
                    }
            } else if (pq.kind == ParsedQuestion::Kind::identity && e.type == EditType::add) {
                auto [ax, ay] = Anchors::coords()[static_cast<size_t>(e.anchor)];
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x) {
                        float d2 = static_cast<float>((x - ax) * (x - ax) + (y - ay) * (y - ay));
                        att[static_cast<size_t>(y) * S + x] = std::exp(-d2 / 50.0F);
                    }
            } else if (pq.kind == ParsedQuestion::Kind::identity &&
                       e.type == EditType::background) {
                // Allowed region: pixels matching the reference's border color.
                const float* rp = refs.data() + static_cast<int64_t>(b) * 3 * S * S;
                int best = 0;
                float best_score = 1e9F;
                for (size_t i = 0; i < bg_palette.size(); ++i) {
                    float acc = 0.0F;
                    int cnt = 0;
                    for (int y = 0; y < S; ++y)
                        for (int x = 0; x < S; ++x) {
                            if (x >= 2 && x < S - 2 && y >= 2 && y < S - 2) continue;
                            float dr = rp[y * S + x] - bg_palette[i].second.r;
                            float dg = rp[S * S + y * S + x] - bg_palette[i].second.g;
                            float db = rp[2 * S * S + y * S + x] - bg_palette[i].second.b;
                            acc += dr * dr + dg * dg + db * db;
                            ++cnt;
                        }
                    if (acc / static_cast<float>(cnt) < best_score) {
                        best_score = acc / static_cast<float>(cnt);
                        best = static_cast<int>(i);
                    }
                }
                Rgb bg = bg_palette[static_cast<size_t>(best)].second;
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x) {
                        float dr = rp[y * S + x] - bg.r;
                        float dg = rp[S * S + y * S + x] - bg.g;
                        float db = rp[2 * S * S + y * S + x] - bg.b;
                        float d2 = dr * dr + dg * dg + db * db;
                        att[static_cast<size_t>(y) * S + x] =
                            std::exp(-d2 / (2.0F * cfg_.color_tau * cfg_.color_tau));
                    }
            }
            // do_nothing keeps att == 0: every pixel must be preserved.
            double wsum = 0.0;
            for (size_t i = 0; i < att.size(); ++i) wsum += 1.0F - att[i];
            if (wsum < 1.0) wsum = 1.0;
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    id_w[(static_cast<int64_t>(b) * S + y) * S + x] =
                        (1.0F - att[static_cast<size_t>(y) * S + x]) / static_cast<float>(wsum);
        }
    }

    // Batched constant fields.
    Tensor c_pri({B, 3, S, S}), c_sec({B, 3, S, S});
    Tensor kindsel_pri({B, 3, HS, HS}), kindsel_sec({B, 3, HS, HS});
    Tensor locw({B, 1, HS, HS});
    Tensor ring_w({B, 1, S, S});
    Tensor g_pri({B}), g_sec({B}), g_ring({B}), g_id({B}), bias({B});
    double ring_norm = 0.0;
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
            if (!(x >= 2 && x < S - 2 && y >= 2 && y < S - 2)) ring_norm += 1.0;

    for (int b = 0; b < B; ++b) {
        const QuestionPlan& plan = plans[static_cast<size_t>(b)];
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                int64_t off = (static_cast<int64_t>(b) * 3) * S * S + y * S + x;
                c_pri[off] = plan.color_pri.r;
                c_pri[off + S * S] = plan.color_pri.g;
                c_pri[off + 2 * S * S] = plan.color_pri.b;
                c_sec[off] = plan.color_sec.r;
                c_sec[off + S * S] = plan.color_sec.g;
                c_sec[off + 2 * S * S] = plan.color_sec.b;
                bool on_ring = !(x >= 2 && x < S - 2 && y >= 2 && y < S - 2);
                ring_w[(static_cast<int64_t>(b) * S + y) * S + x] =
                    on_ring ? static_cast<float>(1.0 / ring_norm) : 0.0F;
            }
        for (int k = 0; k < 3; ++k) {
            float vp = k == plan.kind_pri ? 1.0F : 0.0F;
            float vs = k == plan.kind_sec ? 1.0F : 0.0F;
            for (int i = 0; i < HS * HS; ++i) {
                kindsel_pri[((static_cast<int64_t>(b) * 3 + k) * HS * HS) + i] = vp;
                kindsel_sec[((static_cast<int64_t>(b) * 3 + k) * HS * HS) + i] = vs;
            }
        }
        // Location log-weights at half resolution; 0 means global pooling.
        double wsum = 0.0;
        for (int y = 0; y < HS; ++y)
            for (int x = 0; x < HS; ++x) {
                float lw = 0.0F;
                if (plan.loc_weighted) {
                    auto [ax, ay] = Anchors::coords()[static_cast<size_t>(plan.loc_anchor)];
                    float fx = static_cast<float>(2 * x + 1) - static_cast<float>(ax);
                    float fy = static_cast<float>(2 * y + 1) - static_cast<float>(ay);
                    lw = -(fx * fx + fy * fy) / 32.0F; // log gaussian, sigma = 4
                }
                locw[(static_cast<int64_t>(b) * HS + y) * HS + x] = lw;
                wsum += std::exp(static_cast<double>(lw));
            }
        g_pri[b] = plan.g_pri;
        g_sec[b] = plan.g_sec;
        g_ring[b] = plan.g_ring;
        g_id[b] = plan.g_id;
        bias[b] = plan.bias;
        (void)wsum; // pooling partition handled inside presence()
    }

    ad::Var kernels = ad::constant(kind_kernels_);
    const float inv2tau2 = 1.0F / (2.0F * cfg_.color_tau * cfg_.color_tau);

    auto presence = [&](const Tensor& colors, const Tensor& kindsel,
                        bool use_loc) -> ad::Var {
        ad::Var d = ad::sum_channels(ad::square(ad::sub_const(gen, colors)));
        ad::Var m = ad::exp(ad::affine(d, -inv2tau2));
        ad::Var mh = ad::avgpool2x(m);
        ad::Var corr = ad::conv2d(mh, kernels, ad::Var(), 1, 3);
        ad::Var sel = ad::sum_channels(ad::mul_const(corr, kindsel));
        ad::Var scaled = ad::affine(sel, a);
        if (use_loc) scaled = ad::add_const(scaled, locw);
        // (lse - log sum w)/a: softmax-pooled presence above uniform baseline.
        ad::Var lse = ad::logsumexp_spatial(scaled);
        Tensor log_z({B});
        for (int b = 0; b < B; ++b) {
            double wsum = 0.0;
            for (int i = 0; i < HS * HS; ++i)
                wsum += std::exp(static_cast<double>(
                    use_loc ? locw[(static_cast<int64_t>(b) * HS * HS) + i] : 0.0F));
            log_z[b] = static_cast<float>(std::log(wsum));
        }
        return ad::affine(ad::sub_const(lse, log_z), 1.0F / a);
    };

    ad::Var pres_pri = presence(c_pri, kindsel_pri, true);
    ad::Var pres_sec = presence(c_sec, kindsel_sec, false);

    // Border-ring match of the primary color (background questions).
    ad::Var d_pri = ad::sum_channels(ad::square(ad::sub_const(gen, c_pri)));
    ad::Var m_pri = ad::exp(ad::affine(d_pri, -inv2tau2));
    ad::Var ring = ad::sum_per_sample(ad::mul_const(m_pri, ring_w));

    // Identity: weighted mean squared difference to the reference.
    ad::Var diff = ad::sum_channels(ad::square(ad::sub_const(gen, refs)));
    ad::Var id_term = ad::sum_per_sample(ad::mul_const(diff, id_w));

    ad::Var s = ad::add_const(
        ad::add(ad::add(ad::mul_const(pres_pri, g_pri), ad::mul_const(pres_sec, g_sec)),
                ad::add(ad::mul_const(ring, g_ring),
                        ad::mul_const(ad::affine(id_term, -cfg_.identity_gain), g_id))),
        bias);
    // logits are (+kappa tanh s, -kappa tanh s); their difference:
    return ad::affine(ad::tanh(s), 2.0F * cfg_.kappa);
}

JudgeVerdict ToySoftJudge::score(const std::optional<Tensor>& first, const Tensor& second,
                                 const QAPair& q) const {
    Tensor refs({1, 3, S, S});
    const Tensor& ref_src = first ? *first : second;
    if (ref_src.ndim() != 3) throw InputError("toy judge: images must be [3,32,32]");
    std::copy_n(ref_src.data(), ref_src.numel(), refs.data());
    Tensor genb({1, 3, S, S});
    std::copy_n(second.data(), second.numel(), genb.data());
    ad::Var gen = ad::constant(genb);
    ad::Var diff = logit_diff_batch(refs, gen, {q});
    float d = diff.value()[0];
    JudgeVerdict v;
    v.logit_yes = d / 2.0F;
    v.logit_no = -d / 2.0F;
    v.expected = q.expected;
    float da = v.expected == Answer::yes ? d : -d;
    v.p_correct = 1.0F / (1.0F + std::exp(-da));
    return v;
}

std::vector<float> ToySoftJudge::vocab_logits(const JudgeVerdict& v) const {
    return {v.logit_yes, v.logit_no, 0.0F, 0.0F};
}

ad::Var ToySoftJudge::standard_ce_batch(const ad::Var& logit_diff,
                                        const std::vector<float>& sign) const {
    // Logits are (d/2, -d/2, 0, 0); CE of the correct token, where sign
    // selects yes (+1) or no (-1) per sample:
    //   -s*d/2 + log(e^{d/2} + e^{-d/2} + 2)
    int B = logit_diff.shape()[0];
    if (static_cast<int>(sign.size()) != B)
        throw InputError("standard_ce_batch: sign size mismatch");
    Tensor sgn({B});
    for (int b = 0; b < B; ++b) sgn[b] = -sign[static_cast<size_t>(b)] * 0.5F;
    ad::Var ez = ad::add(ad::exp(ad::affine(logit_diff, 0.5F)),
                         ad::exp(ad::affine(logit_diff, -0.5F)));
    ad::Var lse = ad::log(ad::affine(ez, 1.0F, static_cast<float>(kVocabSize - 2)));
    return ad::add(ad::mul_const(logit_diff, sgn), lse);
}

// --- fixture judge -----------------------------------------------------------

uint64_t FixtureJudge::request_key(const std::optional<Tensor>& first, const Tensor& second,
                                   const std::string& question) {
    uint64_t h = io::fnv1a(question);
    auto hash_img = [&h](const Tensor& t) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            auto b = static_cast<unsigned char>(
                std::lround(std::min(1.0F, std::max(0.0F, t[i])) * 255.0F));
            h = io::fnv1a(&b, 1, h);
        }
    };
    if (first) hash_img(*first);
    hash_img(second);
    return h;
}

FixtureJudge::FixtureJudge(const std::string& fixture_path) {
    std::istringstream is(io::read_file(fixture_path));
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        uint64_t key = std::stoull(j.at("key").get<std::string>(), nullptr, 16);
        entries_.emplace_back(key, Entry{j.at("logit_yes").get<float>(),
                                         j.at("logit_no").get<float>()});
    }
}

JudgeVerdict FixtureJudge::score(const std::optional<Tensor>& first, const Tensor& second,
                                 const QAPair& q) const {
    uint64_t key = request_key(first, second, q.question);
    for (const auto& [k, e] : entries_) {
        if (k == key) {
            JudgeVerdict v;
            v.logit_yes = e.logit_yes;
            v.logit_no = e.logit_no;
            v.expected = q.expected;
            float d = v.expected == Answer::yes ? v.logit_yes - v.logit_no
                                                : v.logit_no - v.logit_yes;
            v.p_correct = 1.0F / (1.0F + std::exp(-d));
            return v;
        }
    }
    throw InputError("fixture judge: no recorded logits for this (images, question) request");
}

// --- http adapter ------------------------------------------------------------

HttpJudgeAdapter::HttpJudgeAdapter(std::string host, int port, std::string path)
    : host_(std::move(host)), port_(port), path_(std::move(path)) {}

JudgeVerdict HttpJudgeAdapter::score(const std::optional<Tensor>& first, const Tensor& second,
                                     const QAPair& q) const {
    nlohmann::json req;
    req["question"] = q.question;
    auto imgs = nlohmann::json::array();
    if (first) imgs.push_back(io::base64_encode(io::encode_png(*first)));
    imgs.push_back(io::base64_encode(io::encode_png(second)));
    req["images"] = imgs;

    httplib::Client cli(host_, port_);
    cli.set_connection_timeout(5, 0);
    cli.set_read_timeout(30, 0);
    auto res = cli.Post(path_, req.dump(), "application/json");
    if (!res)
        throw TransportError("http judge: endpoint " + host_ + ":" + std::to_string(port_) +
                             " unreachable; retriable");
    if (res->status != 200)
        throw TransportError("http judge: endpoint returned status " +
                             std::to_string(res->status) + "; retriable");
    nlohmann::json body;
    try {
        body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
        throw TransportError("http judge: malformed response body; retriable");
    }
    if (!body.contains("logit_yes") || !body.contains("logit_no"))
        throw TransportError("http judge: response missing logit fields; retriable");
    JudgeVerdict v;
    v.logit_yes = body["logit_yes"].get<float>();
    v.logit_no = body["logit_no"].get<float>();
    v.expected = q.expected;
    float d = v.expected == Answer::yes ? v.logit_yes - v.logit_no : v.logit_no - v.logit_yes;
    v.p_correct = 1.0F / (1.0F + std::exp(-d));
    return v;
}

} // namespace editflow::judge

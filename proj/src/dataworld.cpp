// SPDX-License-Identifier: Apache-2.0
#include "editflow/dataworld.hpp"

#include "editflow/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace editflow::world {

const char* edit_type_name(EditType t) {
    switch (t) {
    case EditType::add: return "add";
    case EditType::remove: return "remove";
    case EditType::color: return "color";
    case EditType::background: return "background";
    case EditType::replace: return "replace";
    case EditType::do_nothing: return "do_nothing";
    }
    return "?";
}

EditType edit_type_from_name(const std::string& name) {
    for (EditType t : {EditType::add, EditType::remove, EditType::color, EditType::background,
                       EditType::replace, EditType::do_nothing})
        if (name == edit_type_name(t)) return t;
    throw ConfigError("unknown edit type: " + name);
}

const std::vector<std::pair<std::string, Rgb>>& Palette::shape_colors() {
    static const std::vector<std::pair<std::string, Rgb>> c = {
        {"red", {0.90F, 0.10F, 0.10F}},    {"green", {0.10F, 0.75F, 0.15F}},
        {"blue", {0.15F, 0.25F, 0.90F}},   {"yellow", {0.95F, 0.90F, 0.05F}},
        {"cyan", {0.10F, 0.80F, 0.85F}},   {"magenta", {0.90F, 0.10F, 0.55F}},
        {"orange", {0.95F, 0.50F, 0.05F}}, {"purple", {0.50F, 0.10F, 0.80F}},
    };
    return c;
}

const std::vector<std::pair<std::string, Rgb>>& Palette::background_colors() {
    static const std::vector<std::pair<std::string, Rgb>> c = {
        {"black", {0.05F, 0.05F, 0.05F}},
        {"white", {0.95F, 0.95F, 0.95F}},
        {"gray", {0.50F, 0.50F, 0.50F}},
        {"navy", {0.05F, 0.15F, 0.45F}},
    };
    return c;
}

int Palette::shape_color_index(const std::string& name) {
    const auto& c = shape_colors();
    for (size_t i = 0; i < c.size(); ++i)
        if (c[i].first == name) return static_cast<int>(i);
    return -1;
}

int Palette::background_color_index(const std::string& name) {
    const auto& c = background_colors();
    for (size_t i = 0; i < c.size(); ++i)
        if (c[i].first == name) return static_cast<int>(i);
    return -1;
}

const std::array<std::pair<int, int>, Anchors::kCount>& Anchors::coords() {
    static const std::array<std::pair<int, int>, kCount> c = {{{8, 8},
                                                               {16, 8},
                                                               {24, 8},
                                                               {8, 16},
                                                               {16, 16},
                                                               {24, 16},
                                                               {8, 24},
                                                               {16, 24},
                                                               {24, 24}}};
    return c;
}

const std::array<const char*, Anchors::kCount>& Anchors::names() {
    static const std::array<const char*, kCount> n = {
        "top left", "top",    "top right", "left",        "center",
        "right",    "bottom left", "bottom", "bottom right"};
    // Note: order matches coords(): y grows downward, row-major.
    return n;
}

int Anchors::index_of(const std::string& name) {
    const auto& n = names();
    for (int i = 0; i < kCount; ++i)
        if (name == n[static_cast<size_t>(i)]) return i;
    return -1;
}

namespace {

const char* kind_name(ShapeKind k) {
    switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

std::optional<ShapeKind> kind_from_name(const std::string& s) {
    if (s == "circle") return ShapeKind::circle;
    if (s == "square") return ShapeKind::square;
    if (s == "triangle") return ShapeKind::triangle;
    return std::nullopt;
}

float center_dist(const Shape& a, const Shape& b) {
    float dx = static_cast<float>(a.cx - b.cx);
    float dy = static_cast<float>(a.cy - b.cy);
    return std::sqrt(dx * dx + dy * dy);
}

// Analytic inside test for a shape at sample point (x, y).
bool inside_shape(const Shape& s, float x, float y) {
    float dx = x - static_cast<float>(s.cx);
    float dy = y - static_cast<float>(s.cy);
    float r = static_cast<float>(s.radius);
    switch (s.kind) {
    case ShapeKind::circle:
        return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: {
        float h = 0.82F * r;
        return std::abs(dx) <= h && std::abs(dy) <= h;
    }
    case ShapeKind::triangle: {
        // Upward triangle: apex (0,-r), base corners (+-0.95r, +0.78r).
        float ax = 0.0F, ay = -r;
        float bx = -0.95F * r, by = 0.78F * r;
        float cx = 0.95F * r, cy = 0.78F * r;
        auto side = [&](float x1, float y1, float x2, float y2) {
            return (x2 - x1) * (dy - y1) - (y2 - y1) * (dx - x1);
        };
        float d1 = side(ax, ay, bx, by);
        float d2 = side(bx, by, cx, cy);
        float d3 = side(cx, cy, ax, ay);
        bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
        bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
        return !(has_neg && has_pos);
    }
    }
    return false;
}

constexpr float kMinCenterDist = 12.5F;

} // namespace

void validate_scene(const ToyScene& scene) {
    if (scene.background < 0 ||
        scene.background >= static_cast<int>(Palette::background_colors().size()))
        throw InputError("scene: background color out of palette");
    if (scene.shapes.size() > 3) throw InputError("scene: more than 3 shapes");
    for (const auto& s : scene.shapes) {
        if (s.color < 0 || s.color >= static_cast<int>(Palette::shape_colors().size()))
            throw InputError("scene: shape color out of palette");
        if (s.radius < 3 || s.radius > 6) throw InputError("scene: radius out of range [3,6]");
        if (s.cx - s.radius < 1 || s.cx + s.radius > ToyScene::kSize - 2 ||
            s.cy - s.radius < 1 || s.cy + s.radius > ToyScene::kSize - 2)
            throw InputError("scene: shape not fully inside canvas");
    }
    for (size_t i = 0; i < scene.shapes.size(); ++i)
        for (size_t j = i + 1; j < scene.shapes.size(); ++j) {
            if (scene.shapes[i].cx == scene.shapes[j].cx &&
                scene.shapes[i].cy == scene.shapes[j].cy)
                throw InputError("scene: two shapes share a center");
            if (center_dist(scene.shapes[i], scene.shapes[j]) < kMinCenterDist)
                throw InputError("scene: shapes too close");
            if (scene.shapes[i].color == scene.shapes[j].color &&
                scene.shapes[i].kind == scene.shapes[j].kind)
                throw InputError("scene: duplicate (color, kind) descriptor");
        }
}

Tensor render(const ToyScene& scene) {
    validate_scene(scene);
    constexpr int S = ToyScene::kSize;
    constexpr int kSS = 3; // 3x3 supersampling
    Tensor img({3, S, S});
    Rgb bg = Palette::background_colors()[static_cast<size_t>(scene.background)].second;
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            float r = bg.r, g = bg.g, b = bg.b;
            for (const auto& sh : scene.shapes) {
                // Cheap reject: shape bounding box.
                if (x < sh.cx - sh.radius - 1 || x > sh.cx + sh.radius + 1 ||
                    y < sh.cy - sh.radius - 1 || y > sh.cy + sh.radius + 1)
                    continue;
                int hits = 0;
                for (int sy = 0; sy < kSS; ++sy)
                    for (int sx = 0; sx < kSS; ++sx) {
                        float px = static_cast<float>(x) + (static_cast<float>(sx) + 0.5F) / kSS - 0.5F;
                        float py = static_cast<float>(y) + (static_cast<float>(sy) + 0.5F) / kSS - 0.5F;
                        if (inside_shape(sh, px, py)) ++hits;
                    }
                if (hits == 0) continue;
                float cov = static_cast<float>(hits) / (kSS * kSS);
                Rgb c = Palette::shape_colors()[static_cast<size_t>(sh.color)].second;
                r = (1.0F - cov) * r + cov * c.r;
                g = (1.0F - cov) * g + cov * c.g;
                b = (1.0F - cov) * b + cov * c.b;
            }
            img[0 * S * S + y * S + x] = r;
            img[1 * S * S + y * S + x] = g;
            img[2 * S * S + y * S + x] = b;
        }
    }
    return img;
}

Tensor render_quantized(const ToyScene& scene) {
    Tensor img = render(scene);
    for (int64_t i = 0; i < img.numel(); ++i) {
        float v = std::min(1.0F, std::max(0.0F, img[i]));
        img[i] = std::round(v * 255.0F) / 255.0F;
    }
    return img;
}

std::string instruction_text(const Edit& e) {
    const auto& sc = Palette::shape_colors();
    const auto& bc = Palette::background_colors();
    std::ostringstream os;
    switch (e.type) {
    case EditType::add:
        os << "add a " << sc[static_cast<size_t>(e.new_color)].first << " "
           << kind_name(e.new_kind) << " at the "
           << Anchors::names()[static_cast<size_t>(e.anchor)];
        break;
    case EditType::remove:
        os << "remove the " << sc[static_cast<size_t>(e.obj_color)].first << " "
           << kind_name(e.obj_kind);
        break;
    case EditType::color:
        os << "recolor the " << sc[static_cast<size_t>(e.obj_color)].first << " "
           << kind_name(e.obj_kind) << " to " << sc[static_cast<size_t>(e.new_color)].first;
        break;
    case EditType::background:
        os << "change the background to " << bc[static_cast<size_t>(e.new_bg)].first;
        break;
    case EditType::replace:
        os << "replace the " << sc[static_cast<size_t>(e.obj_color)].first << " "
           << kind_name(e.obj_kind) << " with a " << sc[static_cast<size_t>(e.new_color)].first
           << " " << kind_name(e.new_kind);
        break;
    case EditType::do_nothing:
        os << "do nothing";
        break;
    }
    return os.str();
}

namespace {

std::vector<std::string> tokenize(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

// Reads "<color> <kind>" starting at tokens[i]; advances i.
std::pair<int, ShapeKind> parse_descriptor(const std::vector<std::string>& tk, size_t& i,
                                           const std::string& text) {
    if (i + 1 >= tk.size()) throw InputError("instruction: truncated descriptor in '" + text + "'");
    int color = Palette::shape_color_index(tk[i]);
    auto kind = kind_from_name(tk[i + 1]);
    if (color < 0 || !kind)
        throw InputError("instruction: unknown descriptor '" + tk[i] + " " + tk[i + 1] + "'");
    i += 2;
    return {color, *kind};
}

} // namespace

Edit parse_instruction(const std::string& text) {
    auto tk = tokenize(text);
    if (tk.empty()) throw InputError("instruction: empty");
    Edit e;
    if (text == "do nothing") {
        e.type = EditType::do_nothing;
        return e;
    }
    size_t i = 0;
    if (tk[0] == "add") {
        // add a <color> <kind> at the <loc...>
        e.type = EditType::add;
        if (tk.size() < 6 || tk[1] != "a") throw InputError("instruction: bad add form: " + text);
        i = 2;
        auto d = parse_descriptor(tk, i, text);
        e.new_color = d.first;
        e.new_kind = d.second;
        if (i + 1 >= tk.size() || tk[i] != "at" || tk[i + 1] != "the")
            throw InputError("instruction: bad add location: " + text);
        i += 2;
        std::string loc;
        for (; i < tk.size(); ++i) {
            if (!loc.empty()) loc += " ";
            loc += tk[i];
        }
        e.anchor = Anchors::index_of(loc);
        if (e.anchor < 0) throw InputError("instruction: unknown location '" + loc + "'");
        return e;
    }
    if (tk[0] == "remove") {
        e.type = EditType::remove;
        if (tk.size() != 3 + 1 || tk[1] != "the")
            throw InputError("instruction: bad remove form: " + text);
        i = 2;
        auto d = parse_descriptor(tk, i, text);
        e.obj_color = d.first;
        e.obj_kind = d.second;
        return e;
    }
    if (tk[0] == "recolor") {
        e.type = EditType::color;
        if (tk.size() != 6 || tk[1] != "the" || tk[4] != "to")
            throw InputError("instruction: bad recolor form: " + text);
        i = 2;
        auto d = parse_descriptor(tk, i, text);
        e.obj_color = d.first;
        e.obj_kind = d.second;
        e.new_color = Palette::shape_color_index(tk[5]);
        if (e.new_color < 0) throw InputError("instruction: unknown color '" + tk[5] + "'");
        return e;
    }
    if (tk[0] == "change") {
        // change the background to <bg>
        e.type = EditType::background;
        if (tk.size() != 5 || tk[1] != "the" || tk[2] != "background" || tk[3] != "to")
            throw InputError("instruction: bad background form: " + text);
        e.new_bg = Palette::background_color_index(tk[4]);
        if (e.new_bg < 0) throw InputError("instruction: unknown background '" + tk[4] + "'");
        return e;
    }
    if (tk[0] == "replace") {
        e.type = EditType::replace;
        if (tk.size() != 8 || tk[1] != "the" || tk[4] != "with" || tk[5] != "a")
            throw InputError("instruction: bad replace form: " + text);
        i = 2;
        auto d = parse_descriptor(tk, i, text);
        e.obj_color = d.first;
        e.obj_kind = d.second;
        i = 6;
        auto d2 = parse_descriptor(tk, i, text);
        e.new_color = d2.first;
        e.new_kind = d2.second;
        return e;
    }
    throw InputError("instruction: not in toy grammar: " + text);
}

std::string caption_of(const ToyScene& scene) {
    const auto& sc = Palette::shape_colors();
    const auto& bc = Palette::background_colors();
    std::string bg = bc[static_cast<size_t>(scene.background)].first;
    if (scene.shapes.empty()) return "an empty " + bg + " background";
    // Canonical order keeps captions position-free and deterministic.
    std::vector<Shape> ordered = scene.shapes;
    std::sort(ordered.begin(), ordered.end(), [](const Shape& a, const Shape& b) {
        if (a.color != b.color) return a.color < b.color;
        return static_cast<int>(a.kind) < static_cast<int>(b.kind);
    });
    std::ostringstream os;
    for (size_t i = 0; i < ordered.size(); ++i) {
        if (i == 0)
            os << "a ";
        else if (i + 1 == ordered.size())
            os << " and a ";
        else
            os << ", a ";
        os << sc[static_cast<size_t>(ordered[i].color)].first << " " << kind_name(ordered[i].kind);
    }
    os << " on a " << bg << " background";
    return os.str();
}

ToyScene apply_edit(const ToyScene& scene, const Edit& edit) {
    ToyScene out = scene;
    auto find_shape = [&](int color, ShapeKind kind) -> int {
        for (size_t i = 0; i < out.shapes.size(); ++i)
            if (out.shapes[i].color == color && out.shapes[i].kind == kind)
                return static_cast<int>(i);
        return -1;
    };
    switch (edit.type) {
    case EditType::add: {
        Shape s;
        s.kind = edit.new_kind;
        s.color = edit.new_color;
        s.cx = Anchors::coords()[static_cast<size_t>(edit.anchor)].first;
        s.cy = Anchors::coords()[static_cast<size_t>(edit.anchor)].second;
        s.radius = 5;
        out.shapes.push_back(s);
        break;
    }
    case EditType::remove: {
        int idx = find_shape(edit.obj_color, edit.obj_kind);
        if (idx < 0) throw InputError("apply_edit: remove target not in scene");
        out.shapes.erase(out.shapes.begin() + idx);
        break;
    }
    case EditType::color: {
        int idx = find_shape(edit.obj_color, edit.obj_kind);
        if (idx < 0) throw InputError("apply_edit: recolor target not in scene");
        out.shapes[static_cast<size_t>(idx)].color = edit.new_color;
        break;
    }
    case EditType::background:
        out.background = edit.new_bg;
        break;
    case EditType::replace: {
        int idx = find_shape(edit.obj_color, edit.obj_kind);
        if (idx < 0) throw InputError("apply_edit: replace target not in scene");
        out.shapes[static_cast<size_t>(idx)].color = edit.new_color;
        out.shapes[static_cast<size_t>(idx)].kind = edit.new_kind;
        break;
    }
    case EditType::do_nothing:
        break;
    }
    return out;
}

std::vector<size_t> Dataset::indices_of(EditType t) const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < records.size(); ++i)
        if (records[i].edit_type == t) idx.push_back(i);
    return idx;
}

ToyScene sample_scene(Rng& rng) {
    ToyScene scene;
    scene.background =
        static_cast<int>(rng.uniform_index(Palette::background_colors().size()));
    double u = rng.uniform();
    size_t nshapes = u < 0.40 ? 1 : (u < 0.85 ? 2 : 3);
    const auto& anchors = Anchors::coords();
    for (int attempt = 0; attempt < 200 && scene.shapes.size() < nshapes; ++attempt) {
        Shape s;
        s.kind = static_cast<ShapeKind>(rng.uniform_index(3));
        s.color = static_cast<int>(rng.uniform_index(Palette::shape_colors().size()));
        int a = static_cast<int>(rng.uniform_index(Anchors::kCount));
        s.cx = anchors[static_cast<size_t>(a)].first;
        s.cy = anchors[static_cast<size_t>(a)].second;
        s.radius = 4 + static_cast<int>(rng.uniform_index(3));
        bool ok = true;
        for (const auto& other : scene.shapes) {
            if (center_dist(s, other) < kMinCenterDist) ok = false;
            if (other.color == s.color && other.kind == s.kind) ok = false;
        }
        if (ok) scene.shapes.push_back(s);
    }
    if (scene.shapes.empty()) {
        // Extremely unlikely; place a deterministic fallback shape.
        scene.shapes.push_back({ShapeKind::circle, 0, 16, 16, 5});
    }
    return scene;
}

namespace {

std::optional<Edit> sample_edit(const ToyScene& scene, EditType type, Rng& rng) {
    Edit e;
    e.type = type;
    const int n_colors = static_cast<int>(Palette::shape_colors().size());
    auto has_descriptor = [&](int color, ShapeKind kind) {
        for (const auto& s : scene.shapes)
            if (s.color == color && s.kind == kind) return true;
        return false;
    };
    switch (type) {
    case EditType::add: {
        std::vector<int> free_anchors;
        const auto& anchors = Anchors::coords();
        for (int a = 0; a < Anchors::kCount; ++a) {
            bool ok = true;
            for (const auto& s : scene.shapes) {
                float dx = static_cast<float>(anchors[static_cast<size_t>(a)].first - s.cx);
                float dy = static_cast<float>(anchors[static_cast<size_t>(a)].second - s.cy);
                if (std::sqrt(dx * dx + dy * dy) < kMinCenterDist) ok = false;
            }
            if (ok) free_anchors.push_back(a);
        }
        if (free_anchors.empty()) return std::nullopt;
        e.anchor = free_anchors[rng.uniform_index(free_anchors.size())];
        for (int tries = 0; tries < 50; ++tries) {
            e.new_color = static_cast<int>(rng.uniform_index(n_colors));
            e.new_kind = static_cast<ShapeKind>(rng.uniform_index(3));
            if (!has_descriptor(e.new_color, e.new_kind)) return e;
        }
        return std::nullopt;
    }
    case EditType::remove: {
        const Shape& s = scene.shapes[rng.uniform_index(scene.shapes.size())];
        e.obj_color = s.color;
        e.obj_kind = s.kind;
        return e;
    }
    case EditType::color: {
        const Shape& s = scene.shapes[rng.uniform_index(scene.shapes.size())];
        e.obj_color = s.color;
        e.obj_kind = s.kind;
        for (int tries = 0; tries < 50; ++tries) {
            e.new_color = static_cast<int>(rng.uniform_index(n_colors));
            if (e.new_color != s.color && !has_descriptor(e.new_color, s.kind)) return e;
        }
        return std::nullopt;
    }
    case EditType::background: {
        const int n_bg = static_cast<int>(Palette::background_colors().size());
        e.new_bg = static_cast<int>(rng.uniform_index(n_bg));
        while (e.new_bg == scene.background)
            e.new_bg = static_cast<int>(rng.uniform_index(n_bg));
        return e;
    }
    case EditType::replace: {
        const Shape& s = scene.shapes[rng.uniform_index(scene.shapes.size())];
        e.obj_color = s.color;
        e.obj_kind = s.kind;
        for (int tries = 0; tries < 50; ++tries) {
            e.new_color = static_cast<int>(rng.uniform_index(n_colors));
            e.new_kind = static_cast<ShapeKind>(rng.uniform_index(3));
            if (e.new_color != s.color && e.new_kind != s.kind &&
                !has_descriptor(e.new_color, e.new_kind))
                return e;
        }
        return std::nullopt;
    }
    case EditType::do_nothing:
        return e;
    }
    return std::nullopt;
}

const std::vector<std::string>& forbidden_caption_words() {
    static const std::vector<std::string> w = {"removed", "added",    "replaced",
                                               "changed", "modified", "edited"};
    return w;
}

} // namespace

Dataset generate_dataset(int n, uint64_t seed) {
    if (n < 1) throw InputError("generate_dataset: n must be >= 1");
    Dataset ds;
    ds.manifest.seed = seed;
    ds.manifest.n = n;
    Rng rng(seed);
    const EditType types[5] = {EditType::add, EditType::remove, EditType::color,
                               EditType::background, EditType::replace};
    while (static_cast<int>(ds.records.size()) < n) {
        ToyScene scene = sample_scene(rng);
        EditType type = types[rng.uniform_index(5)];
        auto edit = sample_edit(scene, type, rng);
        if (!edit) continue;
        EditRecord rec;
        rec.scene = scene;
        rec.image = render_quantized(scene);
        rec.instruction = instruction_text(*edit);
        rec.source_caption = caption_of(scene);
        rec.target_caption = caption_of(apply_edit(scene, *edit));
        rec.edit_type = type;
        const auto& sc = Palette::shape_colors();
        if (type == EditType::add) {
            rec.object_name = sc[static_cast<size_t>(edit->new_color)].first + " " +
                              kind_name(edit->new_kind);
        } else if (type == EditType::background) {
            rec.object_name = "";
        } else {
            rec.object_name = sc[static_cast<size_t>(edit->obj_color)].first + " " +
                              kind_name(edit->obj_kind);
        }
        for (const auto& w : forbidden_caption_words())
            if (rec.target_caption.find(w) != std::string::npos)
                throw NumericError("generate_dataset: forbidden verb in target caption");
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

bool record_is_valid(const EditRecord& rec) {
    Edit e;
    try {
        e = parse_instruction(rec.instruction);
    } catch (const InputError&) {
        return false;
    }
    if (e.type != rec.edit_type) return false;
    auto present = [&](int color, ShapeKind kind) {
        for (const auto& s : rec.scene.shapes)
            if (s.color == color && s.kind == kind) return true;
        return false;
    };
    switch (e.type) {
    case EditType::remove:
    case EditType::color:
    case EditType::replace:
        return present(e.obj_color, e.obj_kind);
    case EditType::add:
        return e.anchor >= 0;
    case EditType::background:
        return e.new_bg >= 0 && e.new_bg != rec.scene.background;
    case EditType::do_nothing:
        return true;
    }
    return false;
}

namespace {

constexpr int S = ToyScene::kSize;

float color_dist(const Tensor& img, int x, int y, const Rgb& c) {
    float dr = img[0 * S * S + y * S + x] - c.r;
    float dg = img[1 * S * S + y * S + x] - c.g;
    float db = img[2 * S * S + y * S + x] - c.b;
    return std::sqrt(dr * dr + dg * dg + db * db);
}

constexpr float kHardMatch = 0.22F; // palette min pairwise distance is ~0.39

// Fraction of pixels in the disk around (cx, cy) whose color is within
// kHardMatch of c.
float region_color_fraction(const Tensor& img, int cx, int cy, int radius, const Rgb& c) {
    int count = 0, match = 0;
    for (int y = std::max(0, cy - radius); y <= std::min(S - 1, cy + radius); ++y)
        for (int x = std::max(0, cx - radius); x <= std::min(S - 1, cx + radius); ++x) {
            int dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy > radius * radius) continue;
            ++count;
            if (color_dist(img, x, y, c) < kHardMatch) ++match;
        }
    return count == 0 ? 0.0F : static_cast<float>(match) / static_cast<float>(count);
}

// Index of the palette color with the highest match fraction in the disk.
int dominant_shape_color(const Tensor& img, int cx, int cy, int radius) {
    const auto& palette = Palette::shape_colors();
    int best = -1;
    float best_frac = 0.0F;
    for (size_t i = 0; i < palette.size(); ++i) {
        float f = region_color_fraction(img, cx, cy, radius, palette[i].second);
        if (f > best_frac) {
            best_frac = f;
            best = static_cast<int>(i);
        }
    }
    return best_frac >= 0.20F ? best : -1;
}

int dominant_border_background(const Tensor& img) {
    const auto& palette = Palette::background_colors();
    int best = -1;
    float best_frac = 0.0F;
    for (size_t i = 0; i < palette.size(); ++i) {
        int count = 0, match = 0;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                if (x >= 2 && x < S - 2 && y >= 2 && y < S - 2) continue; // border ring
                ++count;
                if (color_dist(img, x, y, palette[i].second) < kHardMatch) ++match;
            }
        float f = static_cast<float>(match) / static_cast<float>(count);
        if (f > best_frac) {
            best_frac = f;
            best = static_cast<int>(i);
        }
    }
    return best_frac >= 0.50F ? best : -1;
}

} // namespace

OracleVerdict oracle_evaluate(const EditRecord& rec, const Tensor& output) {
    if (output.ndim() != 3 || output.dim(0) != 3 || output.dim(1) != S || output.dim(2) != S)
        throw InputError("oracle_evaluate: output must be [3,32,32]");
    Edit e = parse_instruction(rec.instruction);
    if (e.type != rec.edit_type) throw InputError("oracle_evaluate: record type mismatch");
    const auto& sc = Palette::shape_colors();

    auto find_shape = [&](int color, ShapeKind kind) -> const Shape* {
        for (const auto& s : rec.scene.shapes)
            if (s.color == color && s.kind == kind) return &s;
        return nullptr;
    };

    OracleVerdict v;
    v.preservation_mask = Tensor::full({1, S, S}, 1.0F);
    auto carve_disk = [&](int cx, int cy, int radius) {
        for (int y = std::max(0, cy - radius); y <= std::min(S - 1, cy + radius); ++y)
            for (int x = std::max(0, cx - radius); x <= std::min(S - 1, cx + radius); ++x) {
                int dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= radius * radius)
                    v.preservation_mask[y * S + x] = 0.0F;
            }
    };

    switch (e.type) {
    case EditType::remove: {
        const Shape* s = find_shape(e.obj_color, e.obj_kind);
        if (!s) throw InputError("oracle_evaluate: remove target missing from scene graph");
        float frac =
            region_color_fraction(output, s->cx, s->cy, s->radius + 2, sc[static_cast<size_t>(s->color)].second);
        v.success = frac < 0.10F;
        carve_disk(s->cx, s->cy, s->radius + 3);
        break;
    }
    case EditType::add: {
        auto [ax, ay] = Anchors::coords()[static_cast<size_t>(e.anchor)];
        float frac = region_color_fraction(output, ax, ay, 7,
                                           sc[static_cast<size_t>(e.new_color)].second);
        v.success = frac >= 0.25F;
        carve_disk(ax, ay, 8);
        break;
    }
    case EditType::color: {
        const Shape* s = find_shape(e.obj_color, e.obj_kind);
        if (!s) throw InputError("oracle_evaluate: recolor target missing from scene graph");
        int dom = dominant_shape_color(output, s->cx, s->cy, s->radius + 1);
        v.success = dom == e.new_color;
        carve_disk(s->cx, s->cy, s->radius + 3);
        break;
    }
    case EditType::background: {
        int dom = dominant_border_background(output);
        v.success = dom == e.new_bg;
        // Background is the edit region; only shape interiors must persist.
        v.preservation_mask.zero();
        for (const auto& s : rec.scene.shapes)
            for (int y = std::max(0, s.cy - s.radius + 1); y <= std::min(S - 1, s.cy + s.radius - 1); ++y)
                for (int x = std::max(0, s.cx - s.radius + 1); x <= std::min(S - 1, s.cx + s.radius - 1);
                     ++x) {
                    int dx = x - s.cx, dy = y - s.cy;
                    if (dx * dx + dy * dy <= (s.radius - 2) * (s.radius - 2))
                        v.preservation_mask[y * S + x] = 1.0F;
                }
        break;
    }
    case EditType::replace: {
        const Shape* s = find_shape(e.obj_color, e.obj_kind);
        if (!s) throw InputError("oracle_evaluate: replace target missing from scene graph");
        float old_frac = region_color_fraction(output, s->cx, s->cy, s->radius + 2,
                                               sc[static_cast<size_t>(s->color)].second);
        float new_frac = region_color_fraction(output, s->cx, s->cy, s->radius + 2,
                                               sc[static_cast<size_t>(e.new_color)].second);
        v.success = old_frac < 0.10F && new_frac >= 0.25F;
        carve_disk(s->cx, s->cy, s->radius + 3);
        break;
    }
    case EditType::do_nothing:
        v.success = true; // refined below by drift on the full canvas
        break;
    }

    // Drift: MSE vs the reference outside the edit region.
    double acc = 0.0;
    double count = 0.0;
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            if (v.preservation_mask[y * S + x] < 0.5F) continue;
            for (int c = 0; c < 3; ++c) {
                double d = static_cast<double>(output[c * S * S + y * S + x]) -
                           rec.image[c * S * S + y * S + x];
                acc += d * d;
            }
            count += 3.0;
        }
    v.drift = count > 0 ? static_cast<float>(acc / count) : 0.0F;
    if (e.type == EditType::do_nothing) v.success = v.drift < 0.01F;
    return v;
}

} // namespace editflow::world

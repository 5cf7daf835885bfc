// SPDX-License-Identifier: Apache-2.0
#include "editflow/nn.hpp"

#include "editflow/errors.hpp"

#include <cmath>
#include <sstream>

namespace editflow::nn {

ad::Var ParamStore::add(const std::string& name, Tensor init) {
    for (const auto& [n, v] : params_)
        if (n == name) throw ConfigError("duplicate parameter name: " + name);
    ad::Var v(std::move(init), true);
    params_.emplace_back(name, v);
    return v;
}

ad::Var ParamStore::find(const std::string& name) const {
    for (const auto& [n, v] : params_)
        if (n == name) return v;
    throw ConfigError("unknown parameter: " + name);
}

void ParamStore::zero_grad() {
    for (auto& [n, v] : params_) v.zero_grad();
}

int64_t ParamStore::total_parameters() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v.value().numel();
    return n;
}

uint64_t params_hash(const ParamStore& store) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, v] : store.all()) {
        h = io::fnv1a(name, h);
        h = io::fnv1a(v.value().data(), static_cast<size_t>(v.value().numel()) * sizeof(float), h);
    }
    return h;
}

void copy_params(const ParamStore& src, ParamStore& dst) {
    if (src.all().size() != dst.all().size())
        throw ConfigError("copy_params: parameter count mismatch");
    for (size_t i = 0; i < src.all().size(); ++i) {
        const auto& [sn, sv] = src.all()[i];
        const auto& [dn, dv] = dst.all()[i];
        if (sn != dn || !sv.value().same_shape(dv.value()))
            throw ConfigError("copy_params: layout mismatch at " + sn);
        const_cast<ad::Var&>(dv).value_mut().vec() = sv.value().vec();
    }
}

std::string NetConfig::serialize() const {
    std::map<std::string, std::string> kv;
    kv["stem_channels"] = std::to_string(stem_channels);
    kv["mid_channels"] = std::to_string(mid_channels);
    kv["cond_dim"] = std::to_string(cond_dim);
    kv["t_feat_dim"] = std::to_string(t_feat_dim);
    kv["film_hidden"] = std::to_string(film_hidden);
    kv["init_seed"] = std::to_string(init_seed);
    return io::render_kv_text(kv);
}

NetConfig NetConfig::deserialize(const std::string& text) {
    auto kv = io::parse_kv_text(text);
    NetConfig c;
    c.stem_channels = std::stoi(kv.at("stem_channels"));
    c.mid_channels = std::stoi(kv.at("mid_channels"));
    c.cond_dim = std::stoi(kv.at("cond_dim"));
    c.t_feat_dim = std::stoi(kv.at("t_feat_dim"));
    c.film_hidden = std::stoi(kv.at("film_hidden"));
    c.init_seed = std::stoull(kv.at("init_seed"));
    return c;
}

namespace {

Tensor he_init(std::vector<int> shape, Rng& rng) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    float std = std::sqrt(2.0F / static_cast<float>(fan_in));
    return Tensor::randn(std::move(shape), rng, std);
}

} // namespace

VelocityNet::VelocityNet(NetConfig cfg) : cfg_(cfg) {
    Rng rng(cfg_.init_seed);
    const int c1 = cfg_.stem_channels;
    const int c2 = cfg_.mid_channels;
    auto conv = [&](const std::string& name, int out, int in, int k) {
        ad::Var w = params_.add(name + ".w", he_init({out, in, k, k}, rng));
        ad::Var b = params_.add(name + ".b", Tensor({out}));
        return std::make_pair(w, b);
    };
    std::tie(stem_w_, stem_b_) = conv("stem", c1, 6, 3);
    std::tie(enc_w_, enc_b_) = conv("enc", c2, c1, 3);
    std::tie(mid1_w_, mid1_b_) = conv("mid1", c2, c2, 3);
    std::tie(mid2_w_, mid2_b_) = conv("mid2", c2, c2, 3);
    std::tie(merge_w_, merge_b_) = conv("merge", c1, c2, 1);
    std::tie(up_w_, up_b_) = conv("up", c1, c1, 3);
    std::tie(head_w_, head_b_) = conv("head", 12, c1, 1);
    std::tie(skip_w_, skip_b_) = conv("skip", 3, 6, 3);
    // The output starts near zero so the initial model is close to the
    // identity flow.
    for (auto& x : const_cast<Tensor&>(head_w_.value()).vec()) x *= 0.1F;
    for (auto& x : const_cast<Tensor&>(skip_w_.value()).vec()) x *= 0.1F;

    int in_dim = cfg_.cond_dim + cfg_.t_feat_dim;
    trunk_w_ = params_.add("film.trunk.w", he_init({cfg_.film_hidden, in_dim}, rng));
    trunk_b_ = params_.add("film.trunk.b", Tensor({cfg_.film_hidden}));
    const int site_channels[6] = {c1, c2, c2, c2, c1, c1};
    for (int s = 0; s < 6; ++s) {
        FilmSite site;
        std::string base = "film.site" + std::to_string(s);
        // Zero-init keeps modulation neutral at the start of training.
        site.scale_w = params_.add(base + ".scale.w", Tensor({site_channels[s], cfg_.film_hidden}));
        site.scale_b = params_.add(base + ".scale.b", Tensor({site_channels[s]}));
        site.shift_w = params_.add(base + ".shift.w", Tensor({site_channels[s], cfg_.film_hidden}));
        site.shift_b = params_.add(base + ".shift.b", Tensor({site_channels[s]}));
        films_.push_back(site);
    }
}

ad::Var VelocityNet::modulate(const ad::Var& h, const FilmSite& site, const ad::Var& trunk) const {
    ad::Var scale = ad::linear(trunk, site.scale_w, site.scale_b);
    ad::Var shift = ad::linear(trunk, site.shift_w, site.shift_b);
    return ad::film(h, scale, shift);
}

ad::Var VelocityNet::forward(const ad::Var& x_t, const std::vector<float>& t, const Tensor& ref,
                             const Tensor& cond) const {
    const auto& xs = x_t.shape();
    if (xs.size() != 4 || xs[1] != 3) throw InputError("velocity net: x_t must be [B,3,H,W]");
    int B = xs[0];
    if (static_cast<int>(t.size()) != B) throw InputError("velocity net: one t per sample");
    if (ref.ndim() != 4 || ref.dim(0) != B) throw InputError("velocity net: ref batch mismatch");
    if (cond.ndim() != 2 || cond.dim(0) != B || cond.dim(1) != cfg_.cond_dim)
        throw InputError("velocity net: cond batch mismatch");
    ++forward_calls_;

    Tensor cond_full({B, cfg_.cond_dim + cfg_.t_feat_dim});
    for (int b = 0; b < B; ++b) {
        auto tf = t_features(t[static_cast<size_t>(b)], cfg_.t_feat_dim);
        float* dst = cond_full.data() + static_cast<int64_t>(b) * (cfg_.cond_dim + cfg_.t_feat_dim);
        std::copy_n(cond.data() + static_cast<int64_t>(b) * cfg_.cond_dim, cfg_.cond_dim, dst);
        std::copy_n(tf.data(), cfg_.t_feat_dim, dst + cfg_.cond_dim);
    }
    ad::Var trunk = ad::silu(ad::linear(ad::constant(std::move(cond_full)), trunk_w_, trunk_b_));

    ad::Var in = ad::concat_channels(x_t, ad::constant(ref));
    ad::Var h16 = ad::silu(modulate(ad::conv2d(in, stem_w_, stem_b_, 2, 1), films_[0], trunk));
    ad::Var h8 = ad::silu(modulate(ad::conv2d(h16, enc_w_, enc_b_, 2, 1), films_[1], trunk));
    ad::Var m = ad::add(h8, ad::silu(modulate(ad::conv2d(h8, mid1_w_, mid1_b_, 1, 1), films_[2], trunk)));
    m = ad::add(m, ad::silu(modulate(ad::conv2d(m, mid2_w_, mid2_b_, 1, 1), films_[3], trunk)));
    ad::Var u = ad::upsample_nearest2x(m);
    u = ad::silu(modulate(ad::conv2d(u, merge_w_, merge_b_, 1, 0), films_[4], trunk));
    u = ad::add(u, h16);
    u = ad::silu(modulate(ad::conv2d(u, up_w_, up_b_, 1, 1), films_[5], trunk));
    ad::Var head = ad::conv2d(u, head_w_, head_b_, 1, 0);
    ad::Var v = ad::pixel_shuffle2(head);
    ad::Var skip = ad::conv2d(in, skip_w_, skip_b_, 1, 1);
    return ad::add(v, skip);
}

void VelocityNet::save(io::Checkpoint& ck, const std::string& prefix) const {
    ck.meta[prefix + ".config"] = cfg_.serialize();
    for (const auto& [name, v] : params_.all())
        ck.tensors.emplace_back(prefix + "." + name, v.value());
}

void VelocityNet::load(const io::Checkpoint& ck, const std::string& prefix) {
    auto it = ck.meta.find(prefix + ".config");
    if (it == ck.meta.end()) throw VersionError("checkpoint missing config for " + prefix);
    NetConfig stored = NetConfig::deserialize(it->second);
    if (stored.stem_channels != cfg_.stem_channels || stored.mid_channels != cfg_.mid_channels ||
        stored.cond_dim != cfg_.cond_dim || stored.t_feat_dim != cfg_.t_feat_dim ||
        stored.film_hidden != cfg_.film_hidden)
        throw VersionError("checkpoint/config mismatch for " + prefix);
    for (auto& [name, v] : const_cast<std::vector<std::pair<std::string, ad::Var>>&>(params_.all())) {
        const Tensor* t = ck.find(prefix + "." + name);
        if (!t) throw VersionError("checkpoint missing tensor " + prefix + "." + name);
        if (!t->same_shape(v.value())) throw VersionError("checkpoint shape mismatch " + name);
        v.value_mut().vec() = t->vec();
    }
}

Adam::Adam(ParamStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
    for (const auto& [name, v] : store_.all()) {
        m_.emplace_back(v.value().shape());
        v_.emplace_back(v.value().shape());
    }
}

void Adam::step() {
    ++step_;
    float bc1 = 1.0F - std::pow(cfg_.beta1, static_cast<float>(step_));
    float bc2 = 1.0F - std::pow(cfg_.beta2, static_cast<float>(step_));
    for (size_t i = 0; i < store_.all().size(); ++i) {
        auto& var = const_cast<ad::Var&>(store_.all()[i].second);
        Tensor& p = var.value_mut();
        if (!var.has_grad()) continue;
        const Tensor& g = var.grad();
        float* mp = m_[i].data();
        float* vp = v_[i].data();
        for (int64_t j = 0; j < p.numel(); ++j) {
            float gj = g[j];
            mp[j] = cfg_.beta1 * mp[j] + (1.0F - cfg_.beta1) * gj;
            vp[j] = cfg_.beta2 * vp[j] + (1.0F - cfg_.beta2) * gj * gj;
            float mhat = mp[j] / bc1;
            float vhat = vp[j] / bc2;
            p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
    store_.zero_grad();
}

void Adam::save(io::Checkpoint& ck, const std::string& prefix) const {
    ck.meta[prefix + ".step"] = std::to_string(step_);
    for (size_t i = 0; i < store_.all().size(); ++i) {
        ck.tensors.emplace_back(prefix + ".m." + store_.all()[i].first, m_[i]);
        ck.tensors.emplace_back(prefix + ".v." + store_.all()[i].first, v_[i]);
    }
}

void Adam::load(const io::Checkpoint& ck, const std::string& prefix) {
    auto it = ck.meta.find(prefix + ".step");
    if (it == ck.meta.end()) throw VersionError("checkpoint missing optimizer state " + prefix);
    step_ = std::stoll(it->second);
    for (size_t i = 0; i < store_.all().size(); ++i) {
        const Tensor* m = ck.find(prefix + ".m." + store_.all()[i].first);
        const Tensor* v = ck.find(prefix + ".v." + store_.all()[i].first);
        if (!m || !v) throw VersionError("checkpoint missing optimizer moments " + prefix);
        m_[i] = *m;
        v_[i] = *v;
    }
}

Tensor embed_text(const std::string& text, int dim) {
    Tensor out({dim});
    std::istringstream is(text);
    std::string token;
    int pos = 0;
    while (is >> token) {
        uint64_t h = io::fnv1a(token);
        h = io::fnv1a(&pos, sizeof(pos), h);
        Rng trng(h);
        for (int i = 0; i < dim; ++i) out[i] += trng.normal();
        ++pos;
    }
    double norm = std::sqrt(out.sq_norm_double());
    if (norm > 1e-12) {
        for (int i = 0; i < dim; ++i) out[i] = static_cast<float>(out[i] / norm);
    }
    return out;
}

Tensor embed_batch(const std::vector<std::string>& texts, int dim) {
    Tensor out({static_cast<int>(texts.size()), dim});
    for (size_t b = 0; b < texts.size(); ++b) {
        Tensor e = embed_text(texts[b], dim);
        std::copy_n(e.data(), dim, out.data() + static_cast<int64_t>(b) * dim);
    }
    return out;
}

std::vector<float> t_features(float t, int dim) {
    if (dim % 2 != 0) throw ConfigError("t_features: dim must be even");
    std::vector<float> f(static_cast<size_t>(dim));
    for (int k = 0; k < dim / 2; ++k) {
        float angle = 3.14159265358979F * t * static_cast<float>(k + 1);
        f[static_cast<size_t>(2 * k)] = std::sin(angle);
        f[static_cast<size_t>(2 * k + 1)] = std::cos(angle);
    }
    return f;
}

} // namespace editflow::nn

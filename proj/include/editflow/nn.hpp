// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/autograd.hpp"
#include "editflow/io.hpp"
#include "editflow/rng.hpp"
#include "editflow/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace editflow::nn {

// Named trainable parameters.
class ParamStore {
public:
    ad::Var add(const std::string& name, Tensor init);
    const std::vector<std::pair<std::string, ad::Var>>& all() const { return params_; }
    ad::Var find(const std::string& name) const;
    void zero_grad();
    int64_t total_parameters() const;

private:
    std::vector<std::pair<std::string, ad::Var>> params_;
};

// FNV over raw parameter bytes, order-stable. Used by the frozen-teacher and
// resume-equivalence tests.
uint64_t params_hash(const ParamStore& store);

void copy_params(const ParamStore& src, ParamStore& dst);

struct NetConfig {
    int stem_channels = 12; // 16x16 feature width
    int mid_channels = 24;  // 8x8 feature width
    int cond_dim = 64;      // text embedding length
    int t_feat_dim = 16;
    int film_hidden = 160;
    uint64_t init_seed = 1234;

    std::string serialize() const;
    static NetConfig deserialize(const std::string& text);
};

// Velocity network v(x_t, t, cond): a small strided conv U-Net on 32x32 RGB
// with the reference image concatenated channel-wise and (t, text-embedding)
// injected through feature-wise modulation. The same architecture serves as
// generator, frozen teacher, and auxiliary model; teacher/auxiliary run with
// a zero reference plane.
class VelocityNet {
public:
    explicit VelocityNet(NetConfig cfg);

    // x_t [B,3,32,32] (graph input), t one scalar per sample, ref [B,3,32,32]
    // constant, cond [B,cond_dim] constant. Returns velocity [B,3,32,32].
    ad::Var forward(const ad::Var& x_t, const std::vector<float>& t, const Tensor& ref,
                    const Tensor& cond) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const NetConfig& config() const { return cfg_; }

    int64_t forward_calls() const { return forward_calls_; }
    void reset_forward_calls() { forward_calls_ = 0; }

    void save(io::Checkpoint& ck, const std::string& prefix) const;
    void load(const io::Checkpoint& ck, const std::string& prefix);

private:
    struct FilmSite {
        ad::Var scale_w, scale_b, shift_w, shift_b;
    };
    ad::Var modulate(const ad::Var& h, const FilmSite& site, const ad::Var& trunk) const;

    NetConfig cfg_;
    ParamStore params_;
    ad::Var stem_w_, stem_b_, enc_w_, enc_b_, mid1_w_, mid1_b_, mid2_w_, mid2_b_;
    ad::Var merge_w_, merge_b_, up_w_, up_b_, head_w_, head_b_, skip_w_, skip_b_;
    ad::Var trunk_w_, trunk_b_;
    std::vector<FilmSite> films_;
    mutable int64_t forward_calls_ = 0;
};

struct AdamConfig {
    float lr = 1e-4F;
    float beta1 = 0.0F;
    float beta2 = 0.9F;
    float eps = 1e-8F;
};

class Adam {
public:
    Adam(ParamStore& store, AdamConfig cfg);
    // Applies one update from accumulated gradients, then clears them.
    void step();
    int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(float lr) { cfg_.lr = lr; }

    void save(io::Checkpoint& ck, const std::string& prefix) const;
    void load(const io::Checkpoint& ck, const std::string& prefix);

private:
    ParamStore& store_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t step_ = 0;
};

// Deterministic bag-of-(position, token) hash embedding, unit L2 norm.
// Position salting keeps it injective across the toy grammar, where plain
// bags collide (e.g. the two orderings of a replace instruction).
Tensor embed_text(const std::string& text, int dim);
Tensor embed_batch(const std::vector<std::string>& texts, int dim);

// Sinusoidal features of t, dim must be even.
std::vector<float> t_features(float t, int dim);

} // namespace editflow::nn

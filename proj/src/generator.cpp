// SPDX-License-Identifier: Apache-2.0
#include "editflow/generator.hpp"

#include "editflow/errors.hpp"
#include "editflow/flowcore.hpp"

#include <algorithm>
#include <cmath>

namespace editflow::gen {

EditCondition make_condition(const std::vector<const world::EditRecord*>& records,
                             bool use_instruction, int cond_dim) {
    int B = static_cast<int>(records.size());
    EditCondition cond;
    cond.reference = Tensor({B, 3, 32, 32});
    std::vector<std::string> texts;
    texts.reserve(records.size());
    for (int b = 0; b < B; ++b) {
        const auto& r = *records[static_cast<size_t>(b)];
        if (!r.image.all_finite()) throw InputError("make_condition: non-finite reference image");
        std::copy_n(r.image.data(), r.image.numel(),
                    cond.reference.data() + static_cast<int64_t>(b) * 3 * 32 * 32);
        texts.push_back(use_instruction ? r.instruction : r.source_caption);
        cond.edit_types.push_back(r.edit_type);
    }
    cond.embedding = nn::embed_batch(texts, cond_dim);
    return cond;
}

EditCondition make_caption_condition(const std::vector<std::string>& captions, int batch,
                                     int cond_dim) {
    if (static_cast<int>(captions.size()) != batch)
        throw InputError("make_caption_condition: caption count mismatch");
    EditCondition cond;
    cond.reference = Tensor({batch, 3, 32, 32}); // zero reference plane
    cond.embedding = nn::embed_batch(captions, cond_dim);
    return cond;
}

void TimeGrid::validate() const {
    if (grid.empty()) throw ConfigError("time grid: empty");
    for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] <= 0.0F || grid[i] > 1.0F)
            throw ConfigError("time grid: entries must lie in (0,1]");
        if (i > 0 && grid[i] <= grid[i - 1])
            throw ConfigError("time grid: must be strictly increasing");
    }
    if (grid.back() != 1.0F) throw ConfigError("time grid: must contain t=1");
}

std::vector<float> TimeGrid::refinement_descending() const {
    validate();
    std::vector<float> pts(grid.begin(), grid.end() - 1);
    std::reverse(pts.begin(), pts.end());
    return pts;
}

namespace {

void check_finite(const ad::Var& v, const std::string& context) {
    if (!v.value().all_finite())
        throw NumericError("non-finite network output at " + context);
}

std::vector<float> same_t(int batch, float t) {
    return std::vector<float>(static_cast<size_t>(batch), t);
}

} // namespace

ad::Var one_step_from_noise(const nn::VelocityNet& net, const Tensor& eps,
                            const EditCondition& cond, const std::string& context) {
    int B = eps.dim(0);
    ad::Var v = net.forward(ad::constant(eps), same_t(B, 1.0F), cond.reference, cond.embedding);
    check_finite(v, context + " (one-step velocity)");
    return ad::sub_from_const(eps, v);
}

ad::Var two_step_unroll(const nn::VelocityNet& net, const Tensor& eps, const EditCondition& cond,
                        float t, const Tensor& fresh_eps, const std::string& context,
                        bool detach_first) {
    if (t >= 1.0F)
        throw ContractError("two_step_unroll: t=1 must use one_step_from_noise");
    if (t <= 0.0F) throw ContractError("two_step_unroll: t must be positive");
    check_same_shape(eps, fresh_eps, "two_step_unroll");
    ad::Var x0 = one_step_from_noise(net, eps, cond, context);
    if (detach_first) x0 = ad::detach(x0);
    int B = eps.dim(0);
    Tensor scaled_eps(fresh_eps.shape());
    for (int64_t i = 0; i < fresh_eps.numel(); ++i) scaled_eps[i] = t * fresh_eps[i];
    ad::Var x_t = ad::add_const(ad::affine(x0, 1.0F - t), scaled_eps);
    ad::Var v = net.forward(x_t, same_t(B, t), cond.reference, cond.embedding);
    check_finite(v, context + " (refinement velocity)");
    return flow::clean_from_velocity(x_t, v, t);
}

Tensor sample_inference(const nn::VelocityNet& net, const EditCondition& cond, Rng& rng,
                        int n_steps, const TimeGrid& grid) {
    grid.validate();
    if (n_steps < 1) throw ConfigError("sample_inference: n_steps must be >= 1");
    if (n_steps > static_cast<int>(grid.grid.size()))
        throw ConfigError("sample_inference: n_steps exceeds time grid size");
    int B = cond.reference.dim(0);
    Tensor eps = Tensor::randn({B, 3, 32, 32}, rng);
    Tensor x = one_step_from_noise(net, eps, cond, "inference step 1").value();

    auto pts = grid.refinement_descending();
    // n_steps=k applies the last k-1 refinement points, ending nearest clean.
    std::vector<float> chosen(pts.end() - (n_steps - 1), pts.end());
    for (float t : chosen) {
        Tensor fresh = Tensor::randn({B, 3, 32, 32}, rng);
        Tensor x_t(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) x_t[i] = (1.0F - t) * x[i] + t * fresh[i];
        ad::Var v = net.forward(ad::constant(x_t), same_t(B, t), cond.reference, cond.embedding);
        check_finite(v, "inference refinement at t=" + std::to_string(t));
        x = flow::clean_from_velocity(x_t, v.value(), t);
    }
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::min(1.0F, std::max(0.0F, x[i]));
    return x;
}

} // namespace editflow::gen

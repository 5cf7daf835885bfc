// SPDX-License-Identifier: Apache-2.0
#include "editflow/dmd.hpp"

#include "editflow/errors.hpp"
#include "editflow/flowcore.hpp"

#include <cmath>

namespace editflow::dmd {

float sample_dmd_timestep(Rng& rng) {
    return static_cast<float>(rng.uniform(0.02, 0.98));
}

ad::Var dmd_surrogate_loss(DMDContext& ctx, const ad::Var& x0_gen,
                           const gen::EditCondition& caption_cond, float t, const Tensor& eps,
                           DMDGradientReport* report) {
    if (t <= 0.0F || t >= 1.0F) throw ContractError("dmd_surrogate_loss: t must be in (0,1)");
    const auto& shape = x0_gen.shape();
    if (shape.size() != 4) throw InputError("dmd_surrogate_loss: x0_gen must be [B,3,H,W]");
    int B = shape[0];
    check_same_shape(x0_gen.value(), eps, "dmd_surrogate_loss");

    // Teacher/aux see a plain re-noised tensor; no gradient reaches them.
    Tensor x_t(x0_gen.value().shape());
    for (int64_t i = 0; i < x_t.numel(); ++i)
        x_t[i] = (1.0F - t) * x0_gen.value()[i] + t * eps[i];
    std::vector<float> tv(static_cast<size_t>(B), t);
    Tensor v_real = ctx.teacher
                        ->forward(ad::constant(x_t), tv, caption_cond.reference,
                                  caption_cond.embedding)
                        .value();
    Tensor v_gen = ctx.aux
                       ->forward(ad::constant(x_t), tv, caption_cond.reference,
                                 caption_cond.embedding)
                       .value();
    if (!v_real.all_finite() || !v_gen.all_finite())
        throw NumericError("dmd_surrogate_loss: non-finite teacher/aux velocity");

    // Injected direction: d = v_gen - v_real, so that d(surrogate)/d(x0) =
    // -(v_real - v_gen)/B.
    Tensor direction(v_real.shape());
    int64_t per = direction.numel() / B;
    double gap_sq = 0.0;
    for (int b = 0; b < B; ++b) {
        double mean_abs = 0.0;
        for (int64_t i = 0; i < per; ++i) {
            int64_t k = b * per + i;
            float d = v_gen[k] - v_real[k];
            direction[k] = d;
            mean_abs += std::abs(d);
            gap_sq += static_cast<double>(d) * d;
        }
        if (ctx.normalize) {
            float scale = 1.0F / (static_cast<float>(mean_abs / static_cast<double>(per)) + 1e-8F);
            for (int64_t i = 0; i < per; ++i) direction[b * per + i] *= scale;
        }
    }
    for (int64_t i = 0; i < direction.numel(); ++i)
        direction[i] /= static_cast<float>(B);

    if (report) {
        report->v_gap_norm = static_cast<float>(std::sqrt(gap_sq));
        report->grad_norm = static_cast<float>(std::sqrt(direction.sq_norm_double()));
    }
    return ad::sum_all(ad::mul_const(x0_gen, direction));
}

float aux_train_step(DMDContext& ctx, const Tensor& x0_gen_detached,
                     const gen::EditCondition& caption_cond, Rng& rng) {
    float t = sample_dmd_timestep(rng);
    Tensor eps = Tensor::randn(x0_gen_detached.shape(), rng);
    Tensor x_t(x0_gen_detached.shape());
    for (int64_t i = 0; i < x_t.numel(); ++i)
        x_t[i] = (1.0F - t) * x0_gen_detached[i] + t * eps[i];
    int B = x0_gen_detached.dim(0);
    std::vector<float> tv(static_cast<size_t>(B), t);
    ad::Var v = ctx.aux->forward(ad::constant(x_t), tv, caption_cond.reference,
                                 caption_cond.embedding);
    ad::Var loss = flow::flow_loss(v, x0_gen_detached, eps);
    float value = loss.value()[0];
    if (!std::isfinite(value)) throw NumericError("aux_train_step: non-finite loss");
    ad::backward(loss);
    ctx.aux_opt->step();
    return value;
}

} // namespace editflow::dmd

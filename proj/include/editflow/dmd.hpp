// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/generator.hpp"
#include "editflow/nn.hpp"
#include "editflow/rng.hpp"

namespace editflow::dmd {

struct DMDGradientReport {
    float grad_norm = 0.0F;
    float v_gap_norm = 0.0F; // ||v_real - v_gen|| over the batch
};

// Teacher (frozen) and auxiliary (trainable) velocity models plus the
// auxiliary optimizer. The teacher's parameters must never change after
// construction; teacher_hash lets tests assert that cheaply.
struct DMDContext {
    nn::VelocityNet* teacher = nullptr;
    nn::VelocityNet* aux = nullptr;
    nn::Adam* aux_opt = nullptr;
    bool normalize = true; // divide the injected direction by its per-sample
                           // mean absolute value + 1e-8
    uint64_t teacher_hash = 0;

    void freeze_teacher() { teacher_hash = nn::params_hash(teacher->params()); }
    bool teacher_unchanged() const { return nn::params_hash(teacher->params()) == teacher_hash; }
};

// Uniform on [0.02, 0.98]; clipping avoids endpoint degeneracy.
float sample_dmd_timestep(Rng& rng);

// Surrogate scalar whose gradient w.r.t. x0_gen is exactly
// -(v_real - v_gen)/B (per-sample normalized when ctx.normalize). Teacher and
// auxiliary are evaluated without gradient; only x0_gen receives gradient.
ad::Var dmd_surrogate_loss(DMDContext& ctx, const ad::Var& x0_gen,
                           const gen::EditCondition& caption_cond, float t, const Tensor& eps,
                           DMDGradientReport* report = nullptr);

// One auxiliary update: flow loss of the aux model on detached generator
// output, with freshly drawn t and noise. Returns the loss value.
float aux_train_step(DMDContext& ctx, const Tensor& x0_gen_detached,
                     const gen::EditCondition& caption_cond, Rng& rng);

} // namespace editflow::dmd

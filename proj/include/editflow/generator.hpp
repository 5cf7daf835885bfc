// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/dataworld.hpp"
#include "editflow/nn.hpp"
#include "editflow/rng.hpp"

#include <string>
#include <vector>

namespace editflow::gen {

// Conditioning for the editing generator: reference images concatenated
// channel-wise plus a hash embedding of the instruction (or caption) text.
struct EditCondition {
    Tensor reference; // [B,3,32,32]
    Tensor embedding; // [B,cond_dim]
    std::vector<world::EditType> edit_types;
};

EditCondition make_condition(const std::vector<const world::EditRecord*>& records,
                             bool use_instruction, int cond_dim);

// Caption-only conditioning with a zero reference plane (teacher/auxiliary).
EditCondition make_caption_condition(const std::vector<std::string>& captions, int batch,
                                     int cond_dim);

struct TimeGrid {
    std::vector<float> grid{0.25F, 0.5F, 0.75F, 1.0F};

    void validate() const;
    // The grid without the mandatory first step at t=1, descending.
    std::vector<float> refinement_descending() const;
};

// x_hat0 = eps - net(eps, t=1, cond). Gradient flows through the net call.
ad::Var one_step_from_noise(const nn::VelocityNet& net, const Tensor& eps,
                            const EditCondition& cond, const std::string& context);

// Second refinement step of the training unroll. t must come from the grid
// excluding 1; fresh_eps must be independent noise. Gradient flows through
// both net calls unless detach_first is set.
ad::Var two_step_unroll(const nn::VelocityNet& net, const Tensor& eps, const EditCondition& cond,
                        float t, const Tensor& fresh_eps, const std::string& context,
                        bool detach_first = false);

// Few-step stochastic re-noising sampler matching the training construction:
// one step from noise at t=1, then clean_from_velocity at the last
// (n_steps-1) grid points in descending order. Deterministic given rng.
// Output clamped to [0,1] at the final emission only.
Tensor sample_inference(const nn::VelocityNet& net, const EditCondition& cond, Rng& rng,
                        int n_steps = 4, const TimeGrid& grid = {});

} // namespace editflow::gen

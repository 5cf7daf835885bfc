// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/autograd.hpp"
#include "editflow/tensor.hpp"

namespace editflow::flow {

// Linear interpolation schedule: alpha(t) = 1-t on data, sigma(t) = t on noise.
struct NoiseSchedule {
    static float alpha(float t) { return 1.0F - t; }
    static float sigma(float t) { return t; }
};

struct NoisySample {
    Tensor x_t;
    float t = 0.0F;
    Tensor eps; // retained so callers can form loss targets
};

struct VelocityTarget {
    Tensor v; // eps - x
};

// x_t = (1-t) x + t eps. Endpoints are exact: t=0 returns x, t=1 returns eps.
NoisySample interpolate(const Tensor& x, const Tensor& eps, float t);
ad::Var interpolate(const ad::Var& x, const ad::Var& eps, float t);

VelocityTarget velocity_target(const Tensor& x, const Tensor& eps);

// w_t * mean ||(eps - x) - pred_v||^2. The norm is squared-L2 with mean
// reduction and w_t defaults to 1 everywhere in this codebase.
float flow_loss(const Tensor& pred_v, const Tensor& x, const Tensor& eps, float w_t = 1.0F);
ad::Var flow_loss(const ad::Var& pred_v, const Tensor& x, const Tensor& eps, float w_t = 1.0F);

// x0 = x_t - t v. Inverse of interpolate/velocity_target; t=0 is a no-op
// (returns x_t unchanged) rather than an error.
Tensor clean_from_velocity(const Tensor& x_t, const Tensor& v, float t);
ad::Var clean_from_velocity(const ad::Var& x_t, const ad::Var& v, float t);

} // namespace editflow::flow

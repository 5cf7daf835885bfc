// SPDX-License-Identifier: Apache-2.0
#include "editflow/flowcore.hpp"

namespace editflow::flow {

NoisySample interpolate(const Tensor& x, const Tensor& eps, float t) {
    check_same_shape(x, eps, "interpolate");
    if (t < 0.0F || t > 1.0F) throw InputError("interpolate: t must be in [0,1]");
    NoisySample s;
    s.t = t;
    s.eps = eps;
    s.x_t = Tensor(x.shape());
    float a = 1.0F - t;
    for (int64_t i = 0; i < x.numel(); ++i) s.x_t[i] = a * x[i] + t * eps[i];
    return s;
}

ad::Var interpolate(const ad::Var& x, const ad::Var& eps, float t) {
    if (t < 0.0F || t > 1.0F) throw InputError("interpolate: t must be in [0,1]");
    return ad::add(ad::affine(x, 1.0F - t), ad::affine(eps, t));
}

VelocityTarget velocity_target(const Tensor& x, const Tensor& eps) {
    check_same_shape(x, eps, "velocity_target");
    VelocityTarget vt;
    vt.v = Tensor(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) vt.v[i] = eps[i] - x[i];
    return vt;
}

float flow_loss(const Tensor& pred_v, const Tensor& x, const Tensor& eps, float w_t) {
    check_same_shape(pred_v, x, "flow_loss");
    check_same_shape(x, eps, "flow_loss");
    if (w_t <= 0.0F) throw InputError("flow_loss: w_t must be positive");
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double r = static_cast<double>(eps[i]) - x[i] - pred_v[i];
        acc += r * r;
    }
    return static_cast<float>(w_t * acc / static_cast<double>(x.numel()));
}

ad::Var flow_loss(const ad::Var& pred_v, const Tensor& x, const Tensor& eps, float w_t) {
    check_same_shape(x, eps, "flow_loss");
    if (w_t <= 0.0F) throw InputError("flow_loss: w_t must be positive");
    Tensor target = velocity_target(x, eps).v;
    ad::Var r = ad::sub_const(pred_v, target);
    return ad::affine(ad::mean_all(ad::square(r)), w_t);
}

Tensor clean_from_velocity(const Tensor& x_t, const Tensor& v, float t) {
    check_same_shape(x_t, v, "clean_from_velocity");
    if (t < 0.0F || t > 1.0F) throw InputError("clean_from_velocity: t must be in [0,1]");
    Tensor x0(x_t.shape());
    for (int64_t i = 0; i < x_t.numel(); ++i) x0[i] = x_t[i] - t * v[i];
    return x0;
}

ad::Var clean_from_velocity(const ad::Var& x_t, const ad::Var& v, float t) {
    if (t < 0.0F || t > 1.0F) throw InputError("clean_from_velocity: t must be in [0,1]");
    return ad::sub(x_t, ad::affine(v, t));
}

} // namespace editflow::flow

// SPDX-License-Identifier: Apache-2.0
#include "editflow/autograd.hpp"

#include "editflow/threadpool.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace editflow::ad {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

std::atomic<int64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    bool rg = false;
    if (g_grad_enabled) {
        for (auto& p : parents) rg = rg || p->requires_grad;
    }
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

void accum(Node& dst, const float* src, int64_t n) {
    float* g = dst.ensure_grad().data();
    for (int64_t i = 0; i < n; ++i) g[i] += src[i];
}

} // namespace

Var::Var(Tensor value, bool requires_grad) {
    node_ = std::make_shared<Node>();
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
}

void backward(const Var& root) {
    Node* r = root.node().get();
    if (r->value.numel() != 1)
        throw ContractError("backward: root must be a scalar");
    // Reverse-id order is topological because parents precede children.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{r};
    seen.insert(r);
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    r->ensure_grad().fill(1.0F);
    for (Node* n : order) {
        if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
    }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "add");
    Tensor out(a.shape());
    const float* pa = a.value().data();
    const float* pb = b.value().data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    return Var::from_node(make_node(std::move(out), {a.node(), b.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        for (auto& p : self.parents)
            if (p->requires_grad) accum(*p, g, n);
    }));
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "sub");
    Tensor out(a.shape());
    const float* pa = a.value().data();
    const float* pb = b.value().data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    return Var::from_node(make_node(std::move(out), {a.node(), b.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        if (self.parents[0]->requires_grad) accum(*self.parents[0], g, n);
        if (self.parents[1]->requires_grad) {
            float* pg = self.parents[1]->ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) pg[i] -= g[i];
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
    return Var::from_node(make_node(std::move(out), {a.node(), b.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            float* pg = self.parents[0]->ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * bv[i];
        }
        if (self.parents[1]->requires_grad) {
            float* pg = self.parents[1]->ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * av[i];
        }
    }));
}

Var affine(const Var& a, float k, float c) {
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = k * a.value()[i] + c;
    return Var::from_node(make_node(std::move(out), {a.node()}, [n, k](Node& self) {
        const float* g = self.grad.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += k * g[i];
    }));
}

Var neg(const Var& a) { return affine(a, -1.0F); }

Var add_const(const Var& a, const Tensor& c) {
    check_same_shape(a.value(), c, "add_const");
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + c[i];
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        accum(*self.parents[0], self.grad.data(), n);
    }));
}

Var sub_const(const Var& a, const Tensor& c) {
    check_same_shape(a.value(), c, "sub_const");
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - c[i];
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        accum(*self.parents[0], self.grad.data(), n);
    }));
}

Var sub_from_const(const Tensor& c, const Var& a) {
    check_same_shape(a.value(), c, "sub_from_const");
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = c[i] - a.value()[i];
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] -= g[i];
    }));
}

Var mul_const(const Var& a, const Tensor& c) {
    check_same_shape(a.value(), c, "mul_const");
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * c[i];
    Tensor cc = c;
    return Var::from_node(make_node(std::move(out), {a.node()}, [n, cc](Node& self) {
        const float* g = self.grad.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * cc[i];
    }));
}

Var add_channel_const(const Var& a, const std::vector<float>& c) {
    const auto& sh = a.shape();
    if (sh.size() != 4 || sh[1] != static_cast<int>(c.size()))
        throw InputError("add_channel_const: expects [N,C,H,W] with matching C");
    Tensor out = a.value();
    int N = sh[0], C = sh[1];
    int64_t hw = static_cast<int64_t>(sh[2]) * sh[3];
    float* po = out.data();
    for (int nidx = 0; nidx < N; ++nidx)
        for (int ch = 0; ch < C; ++ch) {
            float v = c[static_cast<size_t>(ch)];
            float* p = po + (static_cast<int64_t>(nidx) * C + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += v;
        }
    int64_t n = out.numel();
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        accum(*self.parents[0], self.grad.data(), n);
    }));
}

Var silu(const Var& a) {
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        float x = a.value()[i];
        out[i] = x / (1.0F + std::exp(-x));
    }
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* x = self.parents[0]->value.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) {
            float s = 1.0F / (1.0F + std::exp(-x[i]));
            pg[i] += g[i] * (s + x[i] * s * (1.0F - s));
        }
    }));
}

Var sigmoid(const Var& a) {
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = 1.0F / (1.0F + std::exp(-a.value()[i]));
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* y = self.value.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * y[i] * (1.0F - y[i]);
    }));
}

Var softplus(const Var& a) {
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        float x = a.value()[i];
        // Stable: log(1+e^x) = max(x,0) + log1p(e^{-|x|})
        out[i] = std::max(x, 0.0F) + std::log1p(std::exp(-std::abs(x)));
    }
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* x = self.parents[0]->value.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += g[i] / (1.0F + std::exp(-x[i]));
    }));
}

Var exp(const Var& a) {
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = std::exp(a.value()[i]);
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* y = self.value.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * y[i];
    }));
}

Var log(const Var& a) {
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = std::log(a.value()[i]);
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* x = self.parents[0]->value.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += g[i] / x[i];
    }));
}

Var square(const Var& a) {
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * a.value()[i];
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* x = self.parents[0]->value.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += 2.0F * g[i] * x[i];
    }));
}

Var tanh(const Var& a) {
    Tensor out(a.shape());
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = std::tanh(a.value()[i]);
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* y = self.value.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += g[i] * (1.0F - y[i] * y[i]);
    }));
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
        throw InputError("linear: need x [B,I], w [O,I]");
    int B = xs[0], I = xs[1], O = ws[0];
    Tensor out({B, O});
    {
        CMapMat X(x.value().data(), B, I);
        CMapMat W(w.value().data(), O, I);
        MapMat Y(out.data(), B, O);
        Y.noalias() = X * W.transpose();
        if (b.defined()) {
            CMapMat bv(b.value().data(), 1, O);
            Y.rowwise() += bv.row(0);
        }
    }
    std::vector<std::shared_ptr<Node>> parents{x.node(), w.node()};
    if (b.defined()) parents.push_back(b.node());
    return Var::from_node(make_node(std::move(out), std::move(parents), [B, I, O](Node& self) {
        CMapMat G(self.grad.data(), B, O);
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        CMapMat X(xn.value.data(), B, I);
        CMapMat W(wn.value.data(), O, I);
        if (xn.requires_grad) {
            MapMat GX(xn.ensure_grad().data(), B, I);
            GX.noalias() += G * W;
        }
        if (wn.requires_grad) {
            MapMat GW(wn.ensure_grad().data(), O, I);
            GW.noalias() += G.transpose() * X;
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            MapMat GB(self.parents[2]->ensure_grad().data(), 1, O);
            GB.row(0) += G.colwise().sum();
        }
    }));
}

namespace {

struct ConvDims {
    int N, C, H, W, O, kh, kw, Ho, Wo, stride, pad;
    int64_t K() const { return static_cast<int64_t>(C) * kh * kw; }
    int64_t M() const { return static_cast<int64_t>(Ho) * Wo; }
};

void im2col(const float* img, const ConvDims& d, float* cols) {
    // cols is [K x M] row-major.
    int64_t M = d.M();
    for (int c = 0; c < d.C; ++c) {
        const float* ch = img + static_cast<int64_t>(c) * d.H * d.W;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                float* row = cols + ((static_cast<int64_t>(c) * d.kh + ky) * d.kw + kx) * M;
                for (int oy = 0; oy < d.Ho; ++oy) {
                    int iy = oy * d.stride + ky - d.pad;
                    float* dst = row + static_cast<int64_t>(oy) * d.Wo;
                    if (iy < 0 || iy >= d.H) {
                        std::fill(dst, dst + d.Wo, 0.0F);
                        continue;
                    }
                    const float* src = ch + static_cast<int64_t>(iy) * d.W;
                    for (int ox = 0; ox < d.Wo; ++ox) {
                        int ix = ox * d.stride + kx - d.pad;
                        dst[ox] = (ix >= 0 && ix < d.W) ? src[ix] : 0.0F;
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, const ConvDims& d, float* img) {
    int64_t M = d.M();
    for (int c = 0; c < d.C; ++c) {
        float* ch = img + static_cast<int64_t>(c) * d.H * d.W;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const float* row = cols + ((static_cast<int64_t>(c) * d.kh + ky) * d.kw + kx) * M;
                for (int oy = 0; oy < d.Ho; ++oy) {
                    int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.H) continue;
                    const float* src = row + static_cast<int64_t>(oy) * d.Wo;
                    float* dst = ch + static_cast<int64_t>(iy) * d.W;
                    for (int ox = 0; ox < d.Wo; ++ox) {
                        int ix = ox * d.stride + kx - d.pad;
                        if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
        throw InputError("conv2d: need x [N,C,H,W], w [O,C,kh,kw]");
    ConvDims d;
    d.N = xs[0]; d.C = xs[1]; d.H = xs[2]; d.W = xs[3];
    d.O = ws[0]; d.kh = ws[2]; d.kw = ws[3];
    d.stride = stride; d.pad = pad;
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    int64_t K = d.K(), M = d.M();

    Tensor out({d.N, d.O, d.Ho, d.Wo});
    // Cache the unfolded inputs; backward reuses them for the weight grad.
    auto cols_cache = std::make_shared<std::vector<float>>(
        static_cast<size_t>(d.N) * K * M);

    const float* xv = x.value().data();
    const float* wv = w.value().data();
    const float* bv = b.defined() ? b.value().data() : nullptr;
    float* ov = out.data();
    ThreadPool::instance().parallel_chunks(d.N, [&](int, int64_t lo, int64_t hi) {
        CMapMat W(wv, d.O, K);
        for (int64_t i = lo; i < hi; ++i) {
            float* cols = cols_cache->data() + static_cast<size_t>(i) * K * M;
            im2col(xv + i * d.C * d.H * d.W, d, cols);
            MapMat Y(ov + i * d.O * M, d.O, M);
            CMapMat Cols(cols, K, M);
            Y.noalias() = W * Cols;
            if (bv)
                for (int o = 0; o < d.O; ++o) Y.row(o).array() += bv[o];
        }
    });

    std::vector<std::shared_ptr<Node>> parents{x.node(), w.node()};
    if (b.defined()) parents.push_back(b.node());
    return Var::from_node(make_node(std::move(out), std::move(parents),
                                    [d, K, M, cols_cache](Node& self) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node* bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const float* gv = self.grad.data();
        bool need_dx = xn.requires_grad;
        bool need_dw = wn.requires_grad;
        bool need_db = bn && bn->requires_grad;

        int nthreads = ThreadPool::instance().nthreads();
        std::vector<Tensor> dw_acc, db_acc;
        if (need_dw)
            for (int t = 0; t < nthreads; ++t) dw_acc.emplace_back(wn.value.shape());
        if (need_db)
            for (int t = 0; t < nthreads; ++t) db_acc.emplace_back(std::vector<int>{d.O});
        float* dxv = need_dx ? xn.ensure_grad().data() : nullptr;
        const float* wv = wn.value.data();

        std::vector<float> dcols_ws(static_cast<size_t>(nthreads) * K * M);
        ThreadPool::instance().parallel_chunks(d.N, [&](int t, int64_t lo, int64_t hi) {
            CMapMat W(wv, d.O, K);
            float* dcols = dcols_ws.data() + static_cast<size_t>(t) * K * M;
            for (int64_t i = lo; i < hi; ++i) {
                CMapMat G(gv + i * d.O * M, d.O, M);
                if (need_dw) {
                    CMapMat Cols(cols_cache->data() + static_cast<size_t>(i) * K * M, K, M);
                    MapMat DW(dw_acc[static_cast<size_t>(t)].data(), d.O, K);
                    DW.noalias() += G * Cols.transpose();
                }
                if (need_db) {
                    float* db = db_acc[static_cast<size_t>(t)].data();
                    for (int o = 0; o < d.O; ++o) db[o] += G.row(o).sum();
                }
                if (need_dx) {
                    MapMat DCols(dcols, K, M);
                    DCols.noalias() = W.transpose() * G;
                    col2im_add(dcols, d, dxv + i * d.C * d.H * d.W);
                }
            }
        });
        // Ordered reduction keeps the result independent of scheduling.
        if (need_dw) {
            float* gw = wn.ensure_grad().data();
            for (int t = 0; t < nthreads; ++t)
                for (int64_t i = 0; i < wn.value.numel(); ++i) gw[i] += dw_acc[static_cast<size_t>(t)][i];
        }
        if (need_db) {
            float* gb = bn->ensure_grad().data();
            for (int t = 0; t < nthreads; ++t)
                for (int o = 0; o < d.O; ++o) gb[o] += db_acc[static_cast<size_t>(t)][o];
        }
    }));
}

Var upsample_nearest2x(const Var& x) {
    const auto& s = x.shape();
    if (s.size() != 4) throw InputError("upsample_nearest2x: need [N,C,H,W]");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor out({N, C, 2 * H, 2 * W});
    const float* xv = x.value().data();
    float* ov = out.data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const float* src = xv + nc * H * W;
        float* dst = ov + nc * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int xq = 0; xq < W; ++xq) {
                float v = src[y * W + xq];
                float* p = dst + (2 * y) * (2 * W) + 2 * xq;
                p[0] = v;
                p[1] = v;
                p[2 * W] = v;
                p[2 * W + 1] = v;
            }
    }
    return Var::from_node(make_node(std::move(out), {x.node()}, [N, C, H, W](Node& self) {
        const float* g = self.grad.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
            const float* gs = g + nc * 4 * H * W;
            float* pd = pg + nc * H * W;
            for (int y = 0; y < H; ++y)
                for (int xq = 0; xq < W; ++xq) {
                    const float* p = gs + (2 * y) * (2 * W) + 2 * xq;
                    pd[y * W + xq] += p[0] + p[1] + p[2 * W] + p[2 * W + 1];
                }
        }
    }));
}

Var pixel_shuffle2(const Var& x) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] % 4 != 0) throw InputError("pixel_shuffle2: need [N,4C,H,W]");
    int N = s[0], C = s[1] / 4, H = s[2], W = s[3];
    Tensor out({N, C, 2 * H, 2 * W});
    const float* xv = x.value().data();
    float* ov = out.data();
    for (int nidx = 0; nidx < N; ++nidx)
        for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const float* src = xv + ((static_cast<int64_t>(nidx) * 4 * C) +
                                             (c * 4 + dy * 2 + dx)) * H * W;
                    float* dst = ov + (static_cast<int64_t>(nidx) * C + c) * 4 * H * W;
                    for (int y = 0; y < H; ++y)
                        for (int xq = 0; xq < W; ++xq)
                            dst[(2 * y + dy) * (2 * W) + 2 * xq + dx] = src[y * W + xq];
                }
    return Var::from_node(make_node(std::move(out), {x.node()}, [N, C, H, W](Node& self) {
        const float* g = self.grad.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int nidx = 0; nidx < N; ++nidx)
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        float* dst = pg + ((static_cast<int64_t>(nidx) * 4 * C) +
                                           (c * 4 + dy * 2 + dx)) * H * W;
                        const float* src = g + (static_cast<int64_t>(nidx) * C + c) * 4 * H * W;
                        for (int y = 0; y < H; ++y)
                            for (int xq = 0; xq < W; ++xq)
                                dst[y * W + xq] += src[(2 * y + dy) * (2 * W) + 2 * xq + dx];
                    }
    }));
}

Var avgpool2x(const Var& x) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0)
        throw InputError("avgpool2x: need even [N,C,H,W]");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    int Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    const float* xv = x.value().data();
    float* ov = out.data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const float* src = xv + nc * H * W;
        float* dst = ov + nc * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
            for (int xq = 0; xq < Wo; ++xq) {
                const float* p = src + (2 * y) * W + 2 * xq;
                dst[y * Wo + xq] = 0.25F * (p[0] + p[1] + p[W] + p[W + 1]);
            }
    }
    return Var::from_node(make_node(std::move(out), {x.node()}, [N, C, H, W, Ho, Wo](Node& self) {
        const float* g = self.grad.data();
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
            const float* gs = g + nc * Ho * Wo;
            float* pd = pg + nc * H * W;
            for (int y = 0; y < Ho; ++y)
                for (int xq = 0; xq < Wo; ++xq) {
                    float v = 0.25F * gs[y * Wo + xq];
                    float* p = pd + (2 * y) * W + 2 * xq;
                    p[0] += v;
                    p[1] += v;
                    p[W] += v;
                    p[W + 1] += v;
                }
        }
    }));
}

Var concat_channels(const Var& a, const Var& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw InputError("concat_channels: incompatible shapes");
    int N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    Tensor out({N, Ca + Cb, H, W});
    int64_t hw = static_cast<int64_t>(H) * W;
    for (int nidx = 0; nidx < N; ++nidx) {
        std::copy_n(a.value().data() + static_cast<int64_t>(nidx) * Ca * hw, Ca * hw,
                    out.data() + static_cast<int64_t>(nidx) * (Ca + Cb) * hw);
        std::copy_n(b.value().data() + static_cast<int64_t>(nidx) * Cb * hw, Cb * hw,
                    out.data() + static_cast<int64_t>(nidx) * (Ca + Cb) * hw + Ca * hw);
    }
    return Var::from_node(make_node(std::move(out), {a.node(), b.node()},
                                    [N, Ca, Cb, hw](Node& self) {
        const float* g = self.grad.data();
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        for (int nidx = 0; nidx < N; ++nidx) {
            const float* gn = g + static_cast<int64_t>(nidx) * (Ca + Cb) * hw;
            if (an.requires_grad) {
                float* pa = an.ensure_grad().data() + static_cast<int64_t>(nidx) * Ca * hw;
                for (int64_t i = 0; i < Ca * hw; ++i) pa[i] += gn[i];
            }
            if (bn.requires_grad) {
                float* pb = bn.ensure_grad().data() + static_cast<int64_t>(nidx) * Cb * hw;
                for (int64_t i = 0; i < Cb * hw; ++i) pb[i] += gn[Ca * hw + i];
            }
        }
    }));
}

Var film(const Var& x, const Var& scale, const Var& shift) {
    const auto& xs = x.shape();
    const auto& ss = scale.shape();
    if (xs.size() != 4 || ss.size() != 2 || ss[0] != xs[0] || ss[1] != xs[1] ||
        !scale.value().same_shape(shift.value()))
        throw InputError("film: need x [N,C,H,W], scale/shift [N,C]");
    int N = xs[0], C = xs[1];
    int64_t hw = static_cast<int64_t>(xs[2]) * xs[3];
    Tensor out(xs);
    for (int nidx = 0; nidx < N; ++nidx)
        for (int c = 0; c < C; ++c) {
            float s = 1.0F + scale.value()[static_cast<int64_t>(nidx) * C + c];
            float t = shift.value()[static_cast<int64_t>(nidx) * C + c];
            const float* px = x.value().data() + (static_cast<int64_t>(nidx) * C + c) * hw;
            float* po = out.data() + (static_cast<int64_t>(nidx) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) po[i] = px[i] * s + t;
        }
    return Var::from_node(make_node(std::move(out), {x.node(), scale.node(), shift.node()},
                                    [N, C, hw](Node& self) {
        const float* g = self.grad.data();
        Node& xn = *self.parents[0];
        Node& sn = *self.parents[1];
        Node& tn = *self.parents[2];
        for (int nidx = 0; nidx < N; ++nidx)
            for (int c = 0; c < C; ++c) {
                int64_t off = (static_cast<int64_t>(nidx) * C + c) * hw;
                const float* gp = g + off;
                if (xn.requires_grad) {
                    float s = 1.0F + sn.value[static_cast<int64_t>(nidx) * C + c];
                    float* px = xn.ensure_grad().data() + off;
                    for (int64_t i = 0; i < hw; ++i) px[i] += gp[i] * s;
                }
                if (sn.requires_grad) {
                    const float* xv = xn.value.data() + off;
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(gp[i]) * xv[i];
                    sn.ensure_grad()[static_cast<int64_t>(nidx) * C + c] += static_cast<float>(acc);
                }
                if (tn.requires_grad) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i) acc += gp[i];
                    tn.ensure_grad()[static_cast<int64_t>(nidx) * C + c] += static_cast<float>(acc);
                }
            }
    }));
}

Var mean_all(const Var& a) {
    int64_t n = a.value().numel();
    Tensor out({1});
    out[0] = static_cast<float>(a.value().sum_double() / static_cast<double>(n));
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        float g = self.grad[0] / static_cast<float>(n);
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += g;
    }));
}

Var sum_all(const Var& a) {
    int64_t n = a.value().numel();
    Tensor out({1});
    out[0] = static_cast<float>(a.value().sum_double());
    return Var::from_node(make_node(std::move(out), {a.node()}, [n](Node& self) {
        float g = self.grad[0];
        float* pg = self.parents[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) pg[i] += g;
    }));
}

Var sum_per_sample(const Var& a) {
    const auto& s = a.shape();
    if (s.empty()) throw InputError("sum_per_sample: needs batch dim");
    int N = s[0];
    int64_t per = a.value().numel() / (N == 0 ? 1 : N);
    Tensor out({N});
    for (int nidx = 0; nidx < N; ++nidx) {
        double acc = 0.0;
        const float* p = a.value().data() + nidx * per;
        for (int64_t i = 0; i < per; ++i) acc += p[i];
        out[nidx] = static_cast<float>(acc);
    }
    return Var::from_node(make_node(std::move(out), {a.node()}, [N, per](Node& self) {
        float* pg = self.parents[0]->ensure_grad().data();
        for (int nidx = 0; nidx < N; ++nidx) {
            float g = self.grad[nidx];
            float* p = pg + nidx * per;
            for (int64_t i = 0; i < per; ++i) p[i] += g;
        }
    }));
}

Var sum_channels(const Var& a) {
    const auto& s = a.shape();
    if (s.size() != 4) throw InputError("sum_channels: need [N,C,H,W]");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor out({N, 1, H, W});
    for (int nidx = 0; nidx < N; ++nidx) {
        float* dst = out.data() + nidx * hw;
        std::fill(dst, dst + hw, 0.0F);
        for (int c = 0; c < C; ++c) {
            const float* src = a.value().data() + (static_cast<int64_t>(nidx) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
    }
    return Var::from_node(make_node(std::move(out), {a.node()}, [N, C, hw](Node& self) {
        float* pg = self.parents[0]->ensure_grad().data();
        const float* g = self.grad.data();
        for (int nidx = 0; nidx < N; ++nidx) {
            const float* gs = g + nidx * hw;
            for (int c = 0; c < C; ++c) {
                float* dst = pg + (static_cast<int64_t>(nidx) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) dst[i] += gs[i];
            }
        }
    }));
}

Var logsumexp_spatial(const Var& a) {
    const auto& s = a.shape();
    if (s.size() != 4 || s[1] != 1) throw InputError("logsumexp_spatial: need [N,1,H,W]");
    int N = s[0];
    int64_t hw = static_cast<int64_t>(s[2]) * s[3];
    Tensor out({N});
    for (int nidx = 0; nidx < N; ++nidx) {
        const float* p = a.value().data() + nidx * hw;
        float m = p[0];
        for (int64_t i = 1; i < hw; ++i) m = std::max(m, p[i]);
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) acc += std::exp(static_cast<double>(p[i]) - m);
        out[nidx] = m + static_cast<float>(std::log(acc));
    }
    return Var::from_node(make_node(std::move(out), {a.node()}, [N, hw](Node& self) {
        float* pg = self.parents[0]->ensure_grad().data();
        for (int nidx = 0; nidx < N; ++nidx) {
            float lse = self.value[nidx];
            float g = self.grad[nidx];
            const float* p = self.parents[0]->value.data() + nidx * hw;
            float* d = pg + nidx * hw;
            for (int64_t i = 0; i < hw; ++i) d[i] += g * std::exp(p[i] - lse);
        }
    }));
}

Var detach(const Var& a) { return constant(a.value()); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Var select_samples(const Var& a, const std::vector<int>& indices) {
    const auto& s = a.shape();
    if (s.empty()) throw InputError("select_samples: needs batch dim");
    int N = s[0];
    int64_t per = a.value().numel() / (N == 0 ? 1 : N);
    std::vector<int> out_shape = s;
    out_shape[0] = static_cast<int>(indices.size());
    Tensor out(out_shape);
    for (size_t k = 0; k < indices.size(); ++k) {
        int idx = indices[k];
        if (idx < 0 || idx >= N) throw InputError("select_samples: index out of range");
        std::copy_n(a.value().data() + static_cast<int64_t>(idx) * per, per,
                    out.data() + static_cast<int64_t>(k) * per);
    }
    std::vector<int> idx_copy = indices;
    return Var::from_node(make_node(std::move(out), {a.node()}, [per, idx_copy](Node& self) {
        float* pg = self.parents[0]->ensure_grad().data();
        const float* g = self.grad.data();
        for (size_t k = 0; k < idx_copy.size(); ++k) {
            float* dst = pg + static_cast<int64_t>(idx_copy[k]) * per;
            const float* src = g + static_cast<int64_t>(k) * per;
            for (int64_t i = 0; i < per; ++i) dst[i] += src[i];
        }
    }));
}

} // namespace editflow::ad

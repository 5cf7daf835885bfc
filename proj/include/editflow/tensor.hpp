// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/errors.hpp"
#include "editflow/rng.hpp"

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

namespace editflow {

// Dense float32 tensor, row-major. Images are [N,C,H,W]; vectors are [N,F].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0F);
    }
    Tensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != numel_of(shape_))
            throw InputError("tensor data size does not match shape");
    }

    static int64_t numel_of(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw InputError("negative tensor dimension");
            n *= d;
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0F); }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double sum_double() const {
        double s = 0.0;
        for (float v : data_) s += v;
        return s;
    }

    double sq_norm_double() const {
        double s = 0.0;
        for (float v : data_) s += static_cast<double>(v) * v;
        return s;
    }

    static Tensor randn(std::vector<int> shape, Rng& rng, float stddev = 1.0F) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = rng.normal() * stddev;
        return t;
    }

    static Tensor full(std::vector<int> shape, float v) {
        Tensor t(std::move(shape));
        t.fill(v);
        return t;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw InputError(std::string(where) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
}

} // namespace editflow

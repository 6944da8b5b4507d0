// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace veggie {

/// Dense row-major n-dimensional array of doubles.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != numel_of(shape_))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
    double at(std::initializer_list<int> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(std::vector<int> shape) const {
        if (numel_of(shape) != numel())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        return Tensor(std::move(shape), data_);
    }

    static std::int64_t numel_of(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
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
    std::int64_t offset(std::initializer_list<int> idx) const {
        assert(idx.size() == shape_.size());
        std::int64_t off = 0;
        size_t k = 0;
        for (int i : idx) {
            assert(i >= 0 && i < shape_[k]);
            off = off * shape_[k] + i;
            ++k;
        }
        return off;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace veggie

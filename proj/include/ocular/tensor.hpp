#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocular/common.hpp"

namespace ocular {

// (channels, height, width) triple used for per-layer shape bookkeeping.
struct Shape3 {
    int c = 0, h = 0, w = 0;
    bool operator==(const Shape3&) const = default;
};

struct Shape4 {
    int n = 0, c = 0, h = 0, w = 0;
    bool operator==(const Shape4&) const = default;
    int64_t count() const {
        return static_cast<int64_t>(n) * c * h * w;
    }
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Dense rank-4 array, (batch, channels, height, width), row-major with width
// fastest. float is the production scalar; the double instantiation exists
// for finite-difference verification of the kernels.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(int n, int c, int h, int w) : shape_{n, c, h, w} {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw Error("tensor: negative dimension in shape " + shape_.str());
        data_.assign(static_cast<size_t>(shape_.count()), T(0));
    }

    explicit Tensor(const Shape4& s) : Tensor(s.n, s.c, s.h, s.w) {}

    const Shape4& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& at(int n, int c, int y, int x) { return data_[flat(n, c, y, x)]; }
    const T& at(int n, int c, int y, int x) const { return data_[flat(n, c, y, x)]; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Pointer to the start of one (n, c) plane of h*w contiguous values.
    T* plane(int n, int c) { return data_.data() + plane_offset(n, c); }
    const T* plane(int n, int c) const { return data_.data() + plane_offset(n, c); }

    void fill(T v) { data_.assign(data_.size(), v); }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_.n, shape_.c, shape_.h, shape_.w);
        for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    int64_t flat(int n, int c, int y, int x) const {
        return ((static_cast<int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    int64_t plane_offset(int n, int c) const {
        return (static_cast<int64_t>(n) * shape_.c + c) * shape_.h * shape_.w;
    }

    Shape4 shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace ocular

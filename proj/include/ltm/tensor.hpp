#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltm {

enum class Dtype { f32, f64 };

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor. Values are held as doubles; f32 tensors keep every
// element rounded through float so that the f32 training path is exact float
// arithmetic regardless of the accumulation width used inside kernels.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<int> shape, Dtype dtype) : shape_(std::move(shape)), dtype_(dtype) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0);
    }

    static Tensor zeros(std::vector<int> shape, Dtype dtype) { return Tensor(std::move(shape), dtype); }

    static Tensor full(std::vector<int> shape, double value, Dtype dtype) {
        Tensor t(std::move(shape), dtype);
        for (auto& v : t.data_) v = value;
        t.round_to_dtype();
        return t;
    }

    static Tensor scalar(double value, Dtype dtype) { return full({1}, value, dtype); }

    static Tensor from(std::vector<int> shape, std::vector<double> values, Dtype dtype) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.dtype_ = dtype;
        if (static_cast<int64_t>(values.size()) != count(t.shape_))
            throw ShapeError("tensor data length does not match shape");
        t.data_ = std::move(values);
        t.round_to_dtype();
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i < 0 ? ndim() + i : i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    Dtype dtype() const { return dtype_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
    double at(std::initializer_list<int> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != numel()) throw ShapeError("reshape changes element count");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    Tensor astype(Dtype d) const {
        Tensor t = *this;
        t.dtype_ = d;
        t.round_to_dtype();
        return t;
    }

    // f32 tensors store exactly float-representable values.
    void round_to_dtype() {
        if (dtype_ != Dtype::f32) return;
        for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
    }

    bool all_finite() const;

    void check_finite(const char* where) const;

    std::string shape_str() const;

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape");
            n *= d;
        }
        return n;
    }

    static bool same_shape(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_; }

private:
    int64_t offset(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != ndim()) throw ShapeError("index rank mismatch");
        int64_t off = 0;
        int i = 0;
        for (int v : idx) {
            off = off * shape_[static_cast<size_t>(i)] + v;
            ++i;
        }
        return off;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
    Dtype dtype_ = Dtype::f64;
};

}  // namespace ltm

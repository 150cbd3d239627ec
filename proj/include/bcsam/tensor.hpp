#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace bcsam {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + ")";
}

// Dense row-major double tensor. Copies are shallow (shared storage);
// use clone() for a deep copy. All training math runs in double; float32
// is only used at the checkpoint/store boundary.
class Tensor {
public:
    using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using VecMap = Eigen::Map<Eigen::VectorXd>;
    using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

    Tensor() = default;
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {}

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data(), t.data() + t.numel(), v);
        return t;
    }

    static Tensor scalar(double v) { return full({1}, v); }

    static Tensor from(Shape s, std::vector<double> values) {
        if (shape_numel(s) != static_cast<int64_t>(values.size()))
            throw std::invalid_argument("Tensor::from: size mismatch for shape " + shape_str(s));
        Tensor t;
        t.shape_ = std::move(s);
        t.data_ = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

    int64_t dim(int i) const {
        if (i < 0) i += rank();
        return shape_.at(static_cast<size_t>(i));
    }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }

    double& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<double>>(*data_);
        return t;
    }

    // Same storage, new shape.
    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw std::invalid_argument("reshape: numel mismatch " + shape_str(shape_) + " -> " + shape_str(s));
        Tensor t = *this;
        t.shape_ = std::move(s);
        return t;
    }

    void fill(double v) { std::fill(data(), data() + numel(), v); }

    MatMap mat(int64_t rows, int64_t cols) {
        if (rows * cols != numel()) throw std::invalid_argument("mat view: size mismatch");
        return MatMap(data(), rows, cols);
    }
    ConstMatMap mat(int64_t rows, int64_t cols) const {
        if (rows * cols != numel()) throw std::invalid_argument("mat view: size mismatch");
        return ConstMatMap(data(), rows, cols);
    }

    VecMap vec() { return VecMap(data(), numel()); }
    ConstVecMap vec() const { return ConstVecMap(data(), numel()); }

    bool all_finite() const {
        for (int64_t i = 0; i < numel(); ++i)
            if (!std::isfinite((*data_)[static_cast<size_t>(i)])) return false;
        return true;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

}  // namespace bcsam

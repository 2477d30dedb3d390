#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace camenn {

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// A tensor that requires grad carries a same-shape gradient buffer; one that
/// does not carries none. The "touched" flag records whether any backward
/// pass wrote into the gradient since the last `zero_grad()`, which lets the
/// optimizer leave untouched parameters (including their weight decay) alone.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const;

    /// Rows/cols of a rank-2 tensor (a rank-1 tensor is treated as one row).
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    /// Scalar value of a one-element tensor.
    double item() const;

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on);

    std::span<double> grad();
    std::span<const double> grad() const;
    void zero_grad();
    void mark_grad_touched() noexcept { grad_touched_ = true; }
    bool grad_touched() const noexcept { return grad_touched_; }

    /// Rows [begin, end) of a rank-2 tensor as a new tensor.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;

    bool same_values(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
    bool grad_touched_ = false;
    std::vector<double> grad_;
};

}  // namespace camenn

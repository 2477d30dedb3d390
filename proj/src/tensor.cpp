#include "camenn/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "camenn/errors.hpp"

namespace camenn {

std::size_t shape_volume(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

static void check_shape(const Shape& shape) {
    for (auto d : shape)
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_volume(shape_) != data_.size())
        throw DimensionError("shape " + shape_string(shape_) + " needs " + std::to_string(shape_volume(shape_)) +
                             " values, got " + std::to_string(data_.size()));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
    return shape_[axis];
}

std::size_t Tensor::rows() const {
    if (shape_.size() == 1) return 1;
    if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() == 1) return shape_[0];
    if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
    return shape_[1];
}

double Tensor::item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    grad_touched_ = false;
    if (on)
        grad_.assign(data_.size(), 0.0);
    else
        grad_.clear();
}

std::span<double> Tensor::grad() {
    if (!requires_grad_) throw ContractError("tensor does not require grad");
    return grad_;
}

std::span<const double> Tensor::grad() const {
    if (!requires_grad_) throw ContractError("tensor does not require grad");
    return grad_;
}

void Tensor::zero_grad() {
    std::fill(grad_.begin(), grad_.end(), 0.0);
    grad_touched_ = false;
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    const std::size_t c = cols();
    if (begin >= end || end > rows())
        throw DimensionError("row slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             shape_string(shape_));
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                            data_.begin() + static_cast<std::ptrdiff_t>(end * c));
    return Tensor({end - begin, c}, std::move(out));
}

bool Tensor::same_values(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

}  // namespace camenn

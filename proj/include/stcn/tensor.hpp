#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace stcn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mismatched extents between tensors (matmul inner dims, channel counts, ...).
class ShapeError : public Error { public: using Error::Error; };
// Invalid architecture or run configuration.
class ConfigError : public Error { public: using Error::Error; };
// Bad runtime input: labels out of range, empty datasets, length mismatches.
class InputError : public Error { public: using Error::Error; };
// Non-finite values where finite ones are required.
class NumericError : public Error { public: using Error::Error; };
// Serialization and filesystem failures.
class IoError : public Error { public: using Error::Error; };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<std::size_t> row_major_strides(const Shape& shape);

// Dense row-major tensor of 64-bit floats with an optional gradient slot.
// Value-semantic: copies are deep and instances are safe to share read-only.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor zeros_like(const Tensor& other);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const;

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Value of a one-element tensor.
    double item() const;

    bool all_finite() const;

    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    void ensure_grad();
    void zero_grad();

private:
    Shape shape_;
    std::vector<double> data_;
};

} // namespace stcn

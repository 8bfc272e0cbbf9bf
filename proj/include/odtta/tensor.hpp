#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace odtta {

// Dense row-major tensor of 64-bit reals. Construction validates that the
// shape matches the value count and that every value is finite; operations
// that could produce NaN/Inf throw instead of propagating them.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<std::size_t> shape);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    const std::vector<double>& values() const { return values_; }

    // 2-D accessors (row, col); the common case throughout the code base
    double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
    std::span<const double> row(std::size_t r) const {
        return {values_.data() + r * shape_[1], shape_[1]};
    }

    // Copy of rows [begin, end) of a 2-D tensor.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;
    // Copy of the selected rows of a 2-D tensor, in the given order.
    Tensor gather_rows(std::span<const std::size_t> rows) const;

    bool all_finite() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

// Throws std::runtime_error naming `what` if any value is non-finite.
void require_finite(const Tensor& t, const char* what);
void require_finite(std::span<const double> v, const char* what);

} // namespace odtta

#include "odtta/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace odtta {

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    std::size_t expect = 1;
    for (std::size_t d : shape_) expect *= d;
    if (shape_.empty()) expect = values_.empty() ? 0 : expect;
    if (expect != values_.size())
        throw std::invalid_argument("tensor: shape/value count mismatch (" +
                                    std::to_string(expect) + " vs " +
                                    std::to_string(values_.size()) + ")");
    if (!all_finite()) throw std::invalid_argument("tensor: non-finite value on construction");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    if (rank() != 2 || begin > end || end > shape_[0])
        throw std::invalid_argument("tensor: bad row slice");
    std::size_t cols = shape_[1];
    std::vector<double> out(values_.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                            values_.begin() + static_cast<std::ptrdiff_t>(end * cols));
    return Tensor({end - begin, cols}, std::move(out));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
    if (rank() != 2) throw std::invalid_argument("tensor: gather_rows needs rank 2");
    std::size_t cols = shape_[1];
    std::vector<double> out;
    out.reserve(rows.size() * cols);
    for (std::size_t r : rows) {
        if (r >= shape_[0]) throw std::invalid_argument("tensor: gather row out of range");
        out.insert(out.end(), values_.begin() + static_cast<std::ptrdiff_t>(r * cols),
                   values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
    }
    return Tensor({rows.size(), cols}, std::move(out));
}

bool Tensor::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw std::runtime_error(std::string("non-finite value in ") + what);
}

void require_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite value in ") + what);
}

} // namespace odtta

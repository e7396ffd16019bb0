#include "gvs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "gvs/errors.hpp"

namespace gvs {

namespace {
std::size_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (std::int64_t d : shape) {
        if (d < 0) throw InvalidInputError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, double fill)
    : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::bit_equal(const Tensor& other) const noexcept {
    if (shape_ != other.shape_) return false;
    if (data_.empty()) return true;
    return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::min() const {
    if (data_.empty()) throw InvalidInputError("min of empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    if (data_.empty()) throw InvalidInputError("max of empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::mean() const {
    if (data_.empty()) throw InvalidInputError("mean of empty tensor");
    return sum() / static_cast<double>(data_.size());
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ", ";
        os << shape_[i];
    }
    os << ')';
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
    if (!a.same_shape(b)) {
        throw InvalidInputError(what + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

}  // namespace gvs

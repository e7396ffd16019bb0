#pragma once

#include <cstdint>
#include <cstdlib>
#include <new>
#include <string>
#include <vector>

namespace gvs {

// 64-byte aligned allocator. Keeping every tensor buffer identically aligned
// pins the SIMD code paths (and therefore reduction orders) inside Eigen, so
// repeated runs are bit-identical regardless of heap layout.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        if (n == 0) return nullptr;
        const std::size_t bytes = (n * sizeof(T) + alignment - 1) / alignment * alignment;
        void* p = std::aligned_alloc(alignment, bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) noexcept { std::free(p); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

// Dense row-major double tensor. Shapes follow the (N, C, H, W) convention in
// network code and (H, W) for single images; the class itself is
// rank-agnostic.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, double fill);

    static Tensor scalar(double v) { return Tensor({1}, v); }

    const std::vector<std::int64_t>& shape() const noexcept { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

    void fill(double v);
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool bit_equal(const Tensor& other) const noexcept;
    bool all_finite() const noexcept;

    double min() const;
    double max() const;
    double sum() const;
    double mean() const;

    std::string shape_string() const;

private:
    std::vector<std::int64_t> shape_;
    AlignedBuffer data_;
};

// Throws InvalidInputError when shapes differ; `what` names the operation.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace gvs

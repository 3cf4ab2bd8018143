#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vidiff/error.hpp"

namespace vidiff {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Allocator with cache-line alignment. Vectorized reductions peel elements
/// up to the first aligned address, so a fixed alignment keeps their
/// summation order, and therefore their rounding, reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Storage = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array. Images use NCHW.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage<T>(data.begin(), data.end())) {}
    Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), Storage<T>(data)) {}
    Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ContractError("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    Storage<T>& vec() noexcept { return data_; }
    const Storage<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// NCHW element access.
    T& at(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Same data viewed under a new shape with identical element count.
    Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

    /// Items [begin, end) along the leading axis.
    Tensor slice_batch(int begin, int end) const {
        Shape s = shape_;
        std::size_t per = data_.size() / static_cast<std::size_t>(shape_[0]);
        s[0] = end - begin;
        return Tensor(std::move(s), Storage<T>(data_.begin() + begin * per, data_.begin() + end * per));
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, Storage<U>(data_.begin(), data_.end()));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    Storage<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Concatenates tensors along the leading axis; all trailing dims must agree.
template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
    if (parts.empty()) return {};
    Shape s = parts.front().shape();
    Storage<T> out;
    int n = 0;
    for (const auto& p : parts) {
        if (!std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1, s.end()))
            throw ContractError("concat_batch: trailing shape mismatch");
        n += p.dim(0);
        out.insert(out.end(), p.vec().begin(), p.vec().end());
    }
    s[0] = n;
    return Tensor<T>(std::move(s), std::move(out));
}

}  // namespace vidiff

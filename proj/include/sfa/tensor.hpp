#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sfa {

using Shape = std::vector<std::size_t>;

/// Product of dimensions. The empty shape is a scalar with one element.
std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// 64-byte aligned storage. Eigen's vectorised kernels peel leading elements
/// according to the runtime address, so a fixed alignment keeps float results
/// independent of where the allocator happened to place a buffer.
template <class T, std::size_t Align = 64>
struct AlignedAllocator {
    using value_type = T;
    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }

    template <class U>
    bool operator==(const AlignedAllocator<U, Align>&) const noexcept {
        return true;
    }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor. Value type; copies copy the buffer.
template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    BasicTensor(Shape shape, const std::vector<T>& data)
        : BasicTensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}

    BasicTensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    /// Length of the innermost dimension (1 for scalars).
    std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
    /// Number of innermost rows once leading dimensions are flattened.
    std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* raw() { return data_.data(); }
    const T* raw() const { return data_.data(); }
    AlignedVector<T>& storage() { return data_; }
    const AlignedVector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    /// Reinterprets the buffer under a new shape with the same element count.
    void reshape(Shape shape) {
        if (shape_numel(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
        }
        shape_ = std::move(shape);
    }

    /// Bitwise equality of shape and contents (distinguishes -0.0 and NaN payloads).
    bool bit_equal(const BasicTensor& other) const {
        return shape_ == other.shape_ &&
               (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
    }

    template <class U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

private:
    Shape shape_;
    AlignedVector<T> data_;
};

using Tensor = BasicTensor<float>;

}  // namespace sfa

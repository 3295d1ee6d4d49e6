#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lmtrace {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_to_string(const Shape& shape);

// Dense row-major f32 tensor. Rows are addressed by all but the last index.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<float> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> flat() noexcept { return data_; }
    std::span<const float> flat() const noexcept { return data_; }

    // Innermost vector at a (rank-1)-dimensional index.
    template <typename... Idx>
    std::span<const float> row(Idx... idx) const {
        return {data_.data() + row_offset({static_cast<std::size_t>(idx)...}), shape_.back()};
    }
    template <typename... Idx>
    std::span<float> row(Idx... idx) {
        return {data_.data() + row_offset({static_cast<std::size_t>(idx)...}), shape_.back()};
    }

    template <typename... Idx>
    float at(Idx... idx) const {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <typename... Idx>
    float& at(Idx... idx) {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t row_offset(std::initializer_list<std::size_t> idx) const;
    std::size_t offset(std::initializer_list<std::size_t> idx) const;

    Shape shape_;
    std::vector<float> data_;
};

}  // namespace lmtrace

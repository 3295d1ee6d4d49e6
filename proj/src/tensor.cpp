#include "lmtrace/tensor.hpp"

#include "lmtrace/errors.hpp"

namespace lmtrace {

std::string shape_to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeMismatch("tensor data has " + std::to_string(data_.size()) + " elements, shape " +
                            shape_to_string(shape_) + " needs " + std::to_string(shape_numel(shape_)));
    }
}

std::size_t Tensor::row_offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() + 1 != shape_.size()) {
        throw IndexError("row index of rank " + std::to_string(idx.size()) + " into tensor " +
                         shape_to_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= shape_[axis]) {
            throw IndexError("index " + std::to_string(i) + " out of range for axis " + std::to_string(axis) +
                             " of " + shape_to_string(shape_));
        }
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off * shape_.back();
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
        throw IndexError("element index of rank " + std::to_string(idx.size()) + " into tensor " +
                         shape_to_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= shape_[axis]) {
            throw IndexError("index " + std::to_string(i) + " out of range for axis " + std::to_string(axis) +
                             " of " + shape_to_string(shape_));
        }
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

}  // namespace lmtrace

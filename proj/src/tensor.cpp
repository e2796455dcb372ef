#include "sfa/tensor.hpp"

namespace sfa {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            s += ", ";
        }
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

}  // namespace sfa

#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "monetlab/common.hpp"

namespace monetlab {

// Dense row-major float tensor. This is the interchange type used at module
// boundaries and on disk; numeric kernels work on raw spans of its data.
struct Tensor {
    std::vector<uint32_t> dims;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<uint32_t> d, float fill = 0.f) : dims(std::move(d)) {
        data.assign(element_count(), fill);
    }

    size_t element_count() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

    uint32_t dim(size_t i) const { return dims.at(i); }

    float& at(size_t i) { return data[i]; }
    float at(size_t i) const { return data[i]; }

    // 3-D accessor for C x H x W planes.
    float& at3(size_t c, size_t y, size_t x) { return data[(c * dims[1] + y) * dims[2] + x]; }
    float at3(size_t c, size_t y, size_t x) const { return data[(c * dims[1] + y) * dims[2] + x]; }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < dims.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims[i]);
        }
        return s + "]";
    }
};

inline void require_shape(const Tensor& t, const std::vector<uint32_t>& dims, const char* what) {
    if (t.dims != dims) {
        Tensor want;
        want.dims = dims;
        throw data_error(std::string(what) + ": expected shape " + want.shape_str() + ", got " +
                         t.shape_str());
    }
}

}  // namespace monetlab

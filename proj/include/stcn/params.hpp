#pragma once

#include "stcn/tensor.hpp"

#include <string>
#include <vector>

namespace stcn {

// Named view of a trainable tensor. weight_decay marks convolution/affine
// weights; normalization scales/shifts and biases are excluded from decay.
struct ParamRef {
    std::string name;
    Tensor* tensor = nullptr;
    bool weight_decay = false;
};

} // namespace stcn

#pragma once

#include "stcn/tensor.hpp"

#include <string>

namespace stcn {

// A [T x C] sequence of short-term spatio-temporal features: the interface
// between the backbone stage and the sequence classifier.
struct FeatureSequence {
    Tensor values;
    std::size_t label = 0;
    std::string modality;  // producing stream tag, e.g. "rgb" or "rgb+depth"
};

} // namespace stcn

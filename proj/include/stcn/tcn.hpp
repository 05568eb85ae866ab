#pragma once

#include "stcn/feature.hpp"
#include "stcn/graph.hpp"
#include "stcn/io.hpp"
#include "stcn/params.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stcn {

// Architecture of the sequence classifier: a stack of residual blocks of
// dilated causal convolutions, each gated by a temporal squeeze-and-
// excitation layer on its input.
struct TcnConfig {
    std::size_t levels = 3;
    std::size_t kernel_size = 2;          // kF
    std::vector<std::size_t> channels;    // per level; defaults to in_channels
    std::vector<std::size_t> dilations;   // per level; defaults to 1,2,4,...
    std::size_t tse_reduction = 2;        // r
    double dropout = 0.0;
    std::size_t num_classes = 2;
    std::size_t convs_per_level = 2;
    bool tse_identity = false;            // ablation: gates pinned to 1
    std::size_t seq_len = 0;              // T; the gate weights pin it
    std::size_t in_channels = 0;

    // Applies the dilation/channel defaults and validates.
    void finalize();
    void validate() const;
    std::size_t bottleneck_width() const;  // ceil(T / r)
};

// Trailing input steps that can influence one output step:
// 1 + sum_level convs_per_level * (kF - 1) * dilation_level.
std::size_t receptive_field(const TcnConfig& cfg);

// Gate weights of Eq-style two-layer excitation; shapes are tied to the
// sequence length T, not to the channel count.
struct TseParams {
    Tensor w1;  // [ceil(T/r) x T]
    Tensor w2;  // [T x ceil(T/r)]
};

// One per-time-step gate vector, every element strictly inside (0, 1).
struct TemporalWeights {
    Tensor s;  // [T]
    std::size_t layer_index = 0;
};

// ---- the three TSE stages on a [T x C] sequence ----
// z_t = (1/C) * sum_i x_t(i)
Var tse_squeeze(const Var& x);  // -> [T x 1]
// s = sigmoid(W2 * relu(W1 * z)); no bias terms
Var tse_excite(const Var& z, const Var& w1, const Var& w2);  // -> [T x 1]
// row t of the output is s_t times row t of the input
Var tse_rescale(const Var& x, const Var& s);

struct TcnLevelParams {
    TseParams tse;
    std::vector<Tensor> convs;          // [C_out x C_in x kF] then [C_out x C_out x kF] ...
    std::optional<Tensor> residual_proj;  // [C_out x C_in x 1] when channels change
};

class TcnModel {
public:
    TcnModel() = default;
    static TcnModel init(const TcnConfig& cfg, std::uint64_t seed);

    struct LevelVars {
        Var w1, w2;
        std::vector<Var> convs;
        std::optional<Var> residual_proj;
    };
    struct Bound {
        std::vector<LevelVars> levels;
        Var head_weight, head_bias;
        std::vector<std::pair<std::string, Var>> named;
    };
    Bound bind(Graph& g, bool trainable) const;

    // One residual block: TSE gate on the block input, convs_per_level
    // dilated causal convolutions with relu and dropout, then the residual
    // add of the raw input (1x1-projected when the channel count changes).
    Var block(Graph& g, const Bound& b, std::size_t level, const Var& x, bool train, Rng* rng,
              std::vector<Var>* gates = nullptr) const;

    // x [T x C_in] -> class probabilities [1 x num_classes]; the final time
    // step of the last block is the sequence summary fed to the head.
    Var class_probs(Graph& g, const Bound& b, const Var& x, bool train, Rng* rng,
                    std::vector<Var>* gates = nullptr) const;

    // Eval-mode forward collecting the gate vector of every TSE layer.
    std::vector<TemporalWeights> temporal_weights(const Tensor& x) const;

    std::vector<ParamRef> parameters();
    NamedTensors state();
    void load_state(const NamedTensors& tensors);

    TcnConfig cfg;
    std::vector<TcnLevelParams> levels;
    Tensor head_weight;  // [C_last x num_classes]
    Tensor head_bias;    // [num_classes]
};

} // namespace stcn

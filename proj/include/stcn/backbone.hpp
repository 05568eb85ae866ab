#pragma once

#include "stcn/feature.hpp"
#include "stcn/graph.hpp"
#include "stcn/io.hpp"
#include "stcn/params.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace stcn {

struct ConvSpec {
    Dim3 kernel;
    Dim3 stride;
    Dim3 padding;
};

struct PoolSpec {
    PoolKind kind = PoolKind::max;
    Dim3 window;
    Dim3 stride;
    Dim3 padding;
    bool ceil_mode = true;
};

// Architecture of the 3D densely connected feature extractor. All Dim3
// triples are (temporal, height, width); every temporal stride is 1 so the
// frame count survives to the feature map.
struct BackboneConfig {
    std::vector<std::size_t> block_layers = {6, 12, 24, 16};
    std::size_t growth_rate = 12;
    double compression = 0.5;
    double dropout = 0.2;
    std::size_t num_classes = 2;
    std::size_t in_channels = 1;
    std::size_t frames = 32;  // k: temporal extent expected by forward
    std::size_t height = 112;
    std::size_t width = 112;
    std::size_t bottleneck_factor = 4;  // 1x1x1 conv widens to factor*growth

    ConvSpec stem = {{5, 5, 5}, {1, 2, 2}, {2, 2, 2}};
    PoolSpec stem_pool = {PoolKind::max, {3, 3, 3}, {1, 2, 2}, {1, 0, 0}, true};

    std::size_t stem_channels() const { return 2 * growth_rate; }
    void validate() const;
};

// Extent/channel propagation through every stage, without running data.
struct StageShape {
    std::string name;
    std::size_t channels;
    std::size_t t;
    std::size_t h;
    std::size_t w;
};
std::vector<StageShape> backbone_stage_shapes(const BackboneConfig& cfg);

// Spatially pooled feature map of one video: one C_feat vector per frame.
struct GlobalFeature {
    Tensor values;  // [k x C_feat]
};

struct BatchNormParams {
    Tensor gamma;
    Tensor beta;
    RunningStats stats;
    static BatchNormParams init(std::size_t channels);
};

struct DenseLayerParams {
    BatchNormParams bn1;
    Tensor conv1;  // [bottleneck*growth x C x 1 x 1 x 1]
    BatchNormParams bn2;
    Tensor conv2;  // [growth x bottleneck*growth x 3 x 3 x 3]
};

struct TransitionParams {
    BatchNormParams bn;
    Tensor conv;  // [floor(compression*C) x C x 1 x 1 x 1]
};

class Backbone {
public:
    Backbone() = default;
    static Backbone init(const BackboneConfig& cfg, std::uint64_t seed);

    struct LayerVars {
        Var bn1_gamma, bn1_beta, conv1;
        Var bn2_gamma, bn2_beta, conv2;
    };
    struct TransVars {
        Var bn_gamma, bn_beta, conv;
    };
    struct Bound {
        Var stem_kernel;
        std::vector<std::vector<LayerVars>> blocks;
        std::vector<TransVars> transitions;
        Var head_weight, head_bias;
        std::vector<std::pair<std::string, Var>> named;
    };
    Bound bind(Graph& g, bool trainable);

    // video [N x C_in x k x H x W] -> global feature map [N x k x C_feat].
    // The temporal axis is never reduced; only the spatial axes are pooled.
    Var features(Graph& g, Bound& b, const Var& video, NormMode mode, Rng* dropout_rng,
                 bool update_running);
    // Pretraining head: temporal mean, affine, softmax -> [N x num_classes].
    Var class_probs(Graph& g, Bound& b, const Var& feats);

    std::vector<ParamRef> parameters();
    std::vector<std::pair<std::string, Tensor*>> buffers();
    NamedTensors state();
    void load_state(const NamedTensors& tensors);

    std::size_t feature_channels() const;

    BackboneConfig cfg;
    Tensor stem_kernel;
    std::vector<std::vector<DenseLayerParams>> blocks;
    std::vector<TransitionParams> transitions;
    Tensor head_weight;  // [C_feat x num_classes]
    Tensor head_bias;    // [num_classes]
};

// Truncated backbone: the classification head is dropped and the shared
// weights are used purely as a short-term feature extractor in eval mode.
class FeatureExtractor {
public:
    explicit FeatureExtractor(std::shared_ptr<Backbone> net) : net_(std::move(net)) {}

    // video [C_in x k x H x W] for one sample
    GlobalFeature global_feature(const Tensor& video) const;
    FeatureSequence extract(const Tensor& video, std::size_t T, std::size_t label,
                            const std::string& modality) const;

    const Backbone& net() const { return *net_; }

private:
    std::shared_ptr<Backbone> net_;
};

FeatureExtractor truncate(std::shared_ptr<Backbone> pretrained);

} // namespace stcn

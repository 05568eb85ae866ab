#include "stcn/backbone.hpp"

#include <cmath>
#include <map>

namespace stcn {

void BackboneConfig::validate() const {
    if (block_layers.empty()) {
        throw ConfigError("backbone: block_layers must not be empty");
    }
    for (std::size_t n : block_layers) {
        if (n == 0) throw ConfigError("backbone: every dense block needs at least one layer");
    }
    if (compression <= 0.0 || compression > 1.0) {
        throw ConfigError("backbone: compression must lie in (0, 1], got " +
                          std::to_string(compression));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("backbone: dropout must lie in [0, 1), got " + std::to_string(dropout));
    }
    if (growth_rate == 0 || bottleneck_factor == 0) {
        throw ConfigError("backbone: growth_rate and bottleneck_factor must be positive");
    }
    if (in_channels == 0 || frames == 0 || height == 0 || width == 0) {
        throw ConfigError("backbone: input extents must be positive");
    }
    if (num_classes == 0) {
        throw ConfigError("backbone: num_classes must be positive");
    }
    if (stem.stride.t != 1 || stem_pool.stride.t != 1) {
        throw ConfigError("backbone: temporal strides in stem and stem pool must equal 1");
    }
}

namespace {

std::size_t transition_channels(double compression, std::size_t c) {
    const std::size_t out = static_cast<std::size_t>(std::floor(compression * static_cast<double>(c)));
    if (out == 0) {
        throw ConfigError("backbone: compression " + std::to_string(compression) +
                          " collapses " + std::to_string(c) + " channels to zero");
    }
    return out;
}

} // namespace

std::vector<StageShape> backbone_stage_shapes(const BackboneConfig& cfg) {
    cfg.validate();
    std::vector<StageShape> stages;
    std::size_t c = cfg.in_channels, t = cfg.frames, h = cfg.height, w = cfg.width;
    stages.push_back({"input", c, t, h, w});

    t = conv_out_extent(t, cfg.stem.kernel.t, cfg.stem.stride.t, cfg.stem.padding.t);
    h = conv_out_extent(h, cfg.stem.kernel.h, cfg.stem.stride.h, cfg.stem.padding.h);
    w = conv_out_extent(w, cfg.stem.kernel.w, cfg.stem.stride.w, cfg.stem.padding.w);
    c = cfg.stem_channels();
    stages.push_back({"stem_conv", c, t, h, w});

    const PoolSpec& sp = cfg.stem_pool;
    t = pool_out_extent(t, sp.window.t, sp.stride.t, sp.padding.t, sp.ceil_mode);
    h = pool_out_extent(h, sp.window.h, sp.stride.h, sp.padding.h, sp.ceil_mode);
    w = pool_out_extent(w, sp.window.w, sp.stride.w, sp.padding.w, sp.ceil_mode);
    stages.push_back({"stem_pool", c, t, h, w});

    for (std::size_t bi = 0; bi < cfg.block_layers.size(); ++bi) {
        c += cfg.block_layers[bi] * cfg.growth_rate;
        stages.push_back({"block" + std::to_string(bi), c, t, h, w});
        if (bi + 1 < cfg.block_layers.size()) {
            c = transition_channels(cfg.compression, c);
            h = pool_out_extent(h, 2, 2, 0, true);
            w = pool_out_extent(w, 2, 2, 0, true);
            stages.push_back({"transition" + std::to_string(bi), c, t, h, w});
        }
    }
    stages.push_back({"features", c, t, 1, 1});
    return stages;
}

BatchNormParams BatchNormParams::init(std::size_t channels) {
    BatchNormParams p;
    p.gamma = Tensor({channels}, 1.0);
    p.beta = Tensor({channels}, 0.0);
    p.stats = RunningStats::init(channels);
    return p;
}

namespace {

Tensor he_conv_kernel(std::size_t out_c, std::size_t in_c, Dim3 k, Rng& rng) {
    Tensor t({out_c, in_c, k.t, k.h, k.w});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_c * k.t * k.h * k.w));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * std_dev;
    return t;
}

} // namespace

Backbone Backbone::init(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Backbone net;
    net.cfg = cfg;
    Rng rng(derive_seed(seed, "backbone_init"));
    net.stem_kernel = he_conv_kernel(cfg.stem_channels(), cfg.in_channels, cfg.stem.kernel, rng);
    std::size_t c = cfg.stem_channels();
    const std::size_t bw = cfg.bottleneck_factor * cfg.growth_rate;
    for (std::size_t bi = 0; bi < cfg.block_layers.size(); ++bi) {
        std::vector<DenseLayerParams> layers;
        for (std::size_t li = 0; li < cfg.block_layers[bi]; ++li) {
            DenseLayerParams l;
            l.bn1 = BatchNormParams::init(c);
            l.conv1 = he_conv_kernel(bw, c, {1, 1, 1}, rng);
            l.bn2 = BatchNormParams::init(bw);
            l.conv2 = he_conv_kernel(cfg.growth_rate, bw, {3, 3, 3}, rng);
            layers.push_back(std::move(l));
            c += cfg.growth_rate;
        }
        net.blocks.push_back(std::move(layers));
        if (bi + 1 < cfg.block_layers.size()) {
            TransitionParams tr;
            tr.bn = BatchNormParams::init(c);
            const std::size_t oc = transition_channels(cfg.compression, c);
            tr.conv = he_conv_kernel(oc, c, {1, 1, 1}, rng);
            net.transitions.push_back(std::move(tr));
            c = oc;
        }
    }
    // Zero-initialized head: the initial loss is exactly ln(num_classes).
    net.head_weight = Tensor({c, cfg.num_classes}, 0.0);
    net.head_bias = Tensor({cfg.num_classes}, 0.0);
    return net;
}

std::size_t Backbone::feature_channels() const {
    return head_weight.extent(0);
}

Backbone::Bound Backbone::bind(Graph& g, bool trainable) {
    Bound b;
    auto put = [&](const std::string& name, Tensor& t) {
        Var v = g.leaf(t, trainable);
        b.named.emplace_back(name, v);
        return v;
    };
    b.stem_kernel = put("stem.conv", stem_kernel);
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        std::vector<LayerVars> lv;
        for (std::size_t li = 0; li < blocks[bi].size(); ++li) {
            DenseLayerParams& l = blocks[bi][li];
            const std::string p = "block" + std::to_string(bi) + ".layer" + std::to_string(li);
            LayerVars v;
            v.bn1_gamma = put(p + ".bn1.gamma", l.bn1.gamma);
            v.bn1_beta = put(p + ".bn1.beta", l.bn1.beta);
            v.conv1 = put(p + ".conv1", l.conv1);
            v.bn2_gamma = put(p + ".bn2.gamma", l.bn2.gamma);
            v.bn2_beta = put(p + ".bn2.beta", l.bn2.beta);
            v.conv2 = put(p + ".conv2", l.conv2);
            lv.push_back(v);
        }
        b.blocks.push_back(std::move(lv));
    }
    for (std::size_t ti = 0; ti < transitions.size(); ++ti) {
        TransitionParams& tr = transitions[ti];
        const std::string p = "transition" + std::to_string(ti);
        TransVars v;
        v.bn_gamma = put(p + ".bn.gamma", tr.bn.gamma);
        v.bn_beta = put(p + ".bn.beta", tr.bn.beta);
        v.conv = put(p + ".conv", tr.conv);
        b.transitions.push_back(v);
    }
    b.head_weight = put("head.weight", head_weight);
    b.head_bias = put("head.bias", head_bias);
    return b;
}

Var Backbone::features(Graph& /*g*/, Bound& b, const Var& video, NormMode mode,
                       Rng* dropout_rng, bool update_running) {
    const Tensor& v = video.value();
    if (v.rank() != 5) {
        throw ShapeError("backbone: expected video [NxCxTxHxW], got " + shape_str(v.shape()));
    }
    if (v.extent(1) != cfg.in_channels) {
        throw ConfigError("backbone: video has " + std::to_string(v.extent(1)) +
                          " channels, config expects " + std::to_string(cfg.in_channels));
    }
    if (v.extent(2) != cfg.frames) {
        throw InputError("backbone: video has " + std::to_string(v.extent(2)) +
                         " frames, config expects k = " + std::to_string(cfg.frames));
    }
    const bool train = mode == NormMode::train;
    if (train && cfg.dropout > 0.0 && dropout_rng == nullptr) {
        throw ConfigError("backbone: training forward with dropout needs an rng");
    }

    Var x = conv3d(video, b.stem_kernel, cfg.stem.stride, cfg.stem.padding,
                   TemporalPad::replicate);
    x = pool3d(x, cfg.stem_pool.kind, cfg.stem_pool.window, cfg.stem_pool.stride,
               cfg.stem_pool.padding, cfg.stem_pool.ceil_mode);

    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        for (std::size_t li = 0; li < blocks[bi].size(); ++li) {
            DenseLayerParams& l = blocks[bi][li];
            LayerVars& lv = b.blocks[bi][li];
            Var h = batch_norm(x, lv.bn1_gamma, lv.bn1_beta, 1, mode, &l.bn1.stats,
                               update_running);
            h = relu(h);
            h = conv3d(h, lv.conv1, {1, 1, 1}, {0, 0, 0});
            h = batch_norm(h, lv.bn2_gamma, lv.bn2_beta, 1, mode, &l.bn2.stats, update_running);
            h = relu(h);
            h = conv3d(h, lv.conv2, {1, 1, 1}, {1, 1, 1}, TemporalPad::replicate);
            if (cfg.dropout > 0.0 && train) {
                h = dropout(h, cfg.dropout, *dropout_rng, true);
            }
            x = concat({x, h}, 1);
        }
        if (bi + 1 < blocks.size()) {
            const std::size_t sh = x.value().extent(3), sw = x.value().extent(4);
            if (sh < 2 || sw < 2) {
                throw ConfigError("backbone: spatial extent " + std::to_string(sh) + "x" +
                                  std::to_string(sw) + " too small for transition " +
                                  std::to_string(bi) +
                                  "; use a larger input or fewer dense blocks");
            }
            TransitionParams& tr = transitions[bi];
            TransVars& tv = b.transitions[bi];
            Var t = batch_norm(x, tv.bn_gamma, tv.bn_beta, 1, mode, &tr.bn.stats, update_running);
            t = relu(t);
            t = conv3d(t, tv.conv, {1, 1, 1}, {0, 0, 0});
            x = pool3d(t, PoolKind::average, {1, 2, 2}, {1, 2, 2}, {0, 0, 0}, true);
        }
    }
    // global spatial average pool; [N x C x T] -> [N x T x C]
    Var pooled = mean_axes(x, {3, 4}, false);
    return permute(pooled, {0, 2, 1});
}

Var Backbone::class_probs(Graph& /*g*/, Bound& b, const Var& feats) {
    // global temporal average pool, then the affine softmax head
    Var pooled = mean_axes(feats, {1}, false);  // [N x C_feat]
    Var logits = add_rowvec(matmul(pooled, b.head_weight), b.head_bias);
    return softmax(logits, 1);
}

std::vector<ParamRef> Backbone::parameters() {
    std::vector<ParamRef> out;
    out.push_back({"stem.conv", &stem_kernel, true});
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        for (std::size_t li = 0; li < blocks[bi].size(); ++li) {
            DenseLayerParams& l = blocks[bi][li];
            const std::string p = "block" + std::to_string(bi) + ".layer" + std::to_string(li);
            out.push_back({p + ".bn1.gamma", &l.bn1.gamma, false});
            out.push_back({p + ".bn1.beta", &l.bn1.beta, false});
            out.push_back({p + ".conv1", &l.conv1, true});
            out.push_back({p + ".bn2.gamma", &l.bn2.gamma, false});
            out.push_back({p + ".bn2.beta", &l.bn2.beta, false});
            out.push_back({p + ".conv2", &l.conv2, true});
        }
    }
    for (std::size_t ti = 0; ti < transitions.size(); ++ti) {
        TransitionParams& tr = transitions[ti];
        const std::string p = "transition" + std::to_string(ti);
        out.push_back({p + ".bn.gamma", &tr.bn.gamma, false});
        out.push_back({p + ".bn.beta", &tr.bn.beta, false});
        out.push_back({p + ".conv", &tr.conv, true});
    }
    out.push_back({"head.weight", &head_weight, true});
    out.push_back({"head.bias", &head_bias, false});
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Backbone::buffers() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add = [&](const std::string& p, BatchNormParams& bn) {
        out.emplace_back(p + ".running_mean", &bn.stats.mean);
        out.emplace_back(p + ".running_var", &bn.stats.var);
    };
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        for (std::size_t li = 0; li < blocks[bi].size(); ++li) {
            const std::string p = "block" + std::to_string(bi) + ".layer" + std::to_string(li);
            add(p + ".bn1", blocks[bi][li].bn1);
            add(p + ".bn2", blocks[bi][li].bn2);
        }
    }
    for (std::size_t ti = 0; ti < transitions.size(); ++ti) {
        add("transition" + std::to_string(ti) + ".bn", transitions[ti].bn);
    }
    return out;
}

NamedTensors Backbone::state() {
    NamedTensors out;
    for (const ParamRef& p : parameters()) out.emplace_back(p.name, *p.tensor);
    for (const auto& [name, t] : buffers()) out.emplace_back(name, *t);
    return out;
}

void Backbone::load_state(const NamedTensors& tensors) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : tensors) by_name[name] = &t;
    auto assign = [&](const std::string& name, Tensor* dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw IoError("checkpoint is missing tensor \"" + name + "\"");
        }
        if (it->second->shape() != dst->shape()) {
            throw IoError("checkpoint tensor \"" + name + "\" has shape " +
                          shape_str(it->second->shape()) + ", model expects " +
                          shape_str(dst->shape()));
        }
        *dst = *it->second;
    };
    for (const ParamRef& p : parameters()) assign(p.name, p.tensor);
    for (const auto& [name, t] : buffers()) assign(name, t);
}

GlobalFeature FeatureExtractor::global_feature(const Tensor& video) const {
    if (video.rank() != 4) {
        throw ShapeError("extractor: expected one video [CxTxHxW], got " +
                         shape_str(video.shape()));
    }
    Tensor batched(Shape{1, video.extent(0), video.extent(1), video.extent(2), video.extent(3)},
                   video.values());
    Graph g;
    Backbone& net = *net_;
    Backbone::Bound b = net.bind(g, false);
    Var v = g.leaf(std::move(batched), false);
    Var f = net.features(g, b, v, NormMode::eval, nullptr, false);
    const Tensor& fv = f.value();  // [1 x k x C]
    return GlobalFeature{Tensor(Shape{fv.extent(1), fv.extent(2)}, fv.values())};
}

FeatureSequence FeatureExtractor::extract(const Tensor& video, std::size_t T, std::size_t label,
                                          const std::string& modality) const {
    GlobalFeature gf = global_feature(video);
    FeatureSequence seq;
    seq.values = ltap(gf.values, T);
    seq.label = label;
    seq.modality = modality;
    return seq;
}

FeatureExtractor truncate(std::shared_ptr<Backbone> pretrained) {
    return FeatureExtractor(std::move(pretrained));
}

} // namespace stcn

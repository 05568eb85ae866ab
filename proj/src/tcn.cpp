#include "stcn/tcn.hpp"

#include "stcn/log.hpp"

#include <cmath>
#include <map>

namespace stcn {

void TcnConfig::finalize() {
    if (dilations.empty()) {
        dilations.resize(levels);
        std::size_t d = 1;
        for (std::size_t i = 0; i < levels; ++i, d *= 2) dilations[i] = d;
    }
    if (channels.empty()) {
        channels.assign(levels, in_channels);
    }
    validate();
    if (receptive_field(*this) < seq_len) {
        log::warn("tcn: receptive field " + std::to_string(receptive_field(*this)) +
                  " does not cover the sequence length " + std::to_string(seq_len));
    }
}

void TcnConfig::validate() const {
    if (levels == 0) throw ConfigError("tcn: needs at least one level");
    if (kernel_size == 0) throw ConfigError("tcn: kernel_size must be >= 1");
    if (convs_per_level == 0) throw ConfigError("tcn: convs_per_level must be >= 1");
    if (dilations.size() != levels || channels.size() != levels) {
        throw ConfigError("tcn: dilations and channels must have one entry per level");
    }
    for (std::size_t d : dilations) {
        if (d == 0) throw ConfigError("tcn: dilations must be strictly positive");
    }
    for (std::size_t c : channels) {
        if (c == 0) throw ConfigError("tcn: channel counts must be strictly positive");
    }
    if (tse_reduction == 0) throw ConfigError("tcn: tse_reduction must be >= 1");
    if (seq_len == 0) throw ConfigError("tcn: seq_len must be set");
    if (in_channels == 0) throw ConfigError("tcn: in_channels must be set");
    if (num_classes == 0) throw ConfigError("tcn: num_classes must be positive");
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("tcn: dropout must lie in [0, 1), got " + std::to_string(dropout));
    }
}

std::size_t TcnConfig::bottleneck_width() const {
    return (seq_len + tse_reduction - 1) / tse_reduction;
}

std::size_t receptive_field(const TcnConfig& cfg) {
    std::size_t field = 1;
    for (std::size_t d : cfg.dilations) {
        field += cfg.convs_per_level * (cfg.kernel_size - 1) * d;
    }
    return field;
}

Var tse_squeeze(const Var& x) {
    const Tensor& tx = x.value();
    if (tx.rank() != 2) {
        throw ShapeError("tse_squeeze: expected [T x C], got " + shape_str(tx.shape()));
    }
    return mean_axes(x, {1}, true);
}

Var tse_excite(const Var& z, const Var& w1, const Var& w2) {
    return sigmoid(matmul(w2, relu(matmul(w1, z))));
}

Var tse_rescale(const Var& x, const Var& s) { return scale_rows(x, s); }

namespace {

Tensor he_kernel1d(std::size_t out_c, std::size_t in_c, std::size_t k, Rng& rng) {
    Tensor t({out_c, in_c, k});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_c * k));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * std_dev;
    return t;
}

Tensor xavier_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(rows + cols));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * std_dev;
    return t;
}

} // namespace

TcnModel TcnModel::init(const TcnConfig& cfg_in, std::uint64_t seed) {
    TcnConfig cfg = cfg_in;
    cfg.finalize();
    TcnModel m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, "tcn_init"));
    const std::size_t bw = cfg.bottleneck_width();
    std::size_t c_in = cfg.in_channels;
    for (std::size_t li = 0; li < cfg.levels; ++li) {
        TcnLevelParams lvl;
        lvl.tse.w1 = xavier_matrix(bw, cfg.seq_len, rng);
        lvl.tse.w2 = xavier_matrix(cfg.seq_len, bw, rng);
        const std::size_t c_out = cfg.channels[li];
        std::size_t c = c_in;
        for (std::size_t ci = 0; ci < cfg.convs_per_level; ++ci) {
            lvl.convs.push_back(he_kernel1d(c_out, c, cfg.kernel_size, rng));
            c = c_out;
        }
        if (c_in != c_out) {
            lvl.residual_proj = he_kernel1d(c_out, c_in, 1, rng);
        }
        m.levels.push_back(std::move(lvl));
        c_in = c_out;
    }
    // Zero-initialized head: uniform class probabilities at step zero.
    m.head_weight = Tensor({c_in, cfg.num_classes}, 0.0);
    m.head_bias = Tensor({cfg.num_classes}, 0.0);
    return m;
}

TcnModel::Bound TcnModel::bind(Graph& g, bool trainable) const {
    Bound b;
    auto put = [&](const std::string& name, const Tensor& t) {
        Var v = g.leaf(t, trainable);
        b.named.emplace_back(name, v);
        return v;
    };
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const TcnLevelParams& lvl = levels[li];
        const std::string p = "level" + std::to_string(li);
        LevelVars v;
        v.w1 = put(p + ".tse.w1", lvl.tse.w1);
        v.w2 = put(p + ".tse.w2", lvl.tse.w2);
        for (std::size_t ci = 0; ci < lvl.convs.size(); ++ci) {
            v.convs.push_back(put(p + ".conv" + std::to_string(ci), lvl.convs[ci]));
        }
        if (lvl.residual_proj) {
            v.residual_proj = put(p + ".residual_proj", *lvl.residual_proj);
        }
        b.levels.push_back(std::move(v));
    }
    b.head_weight = put("head.weight", head_weight);
    b.head_bias = put("head.bias", head_bias);
    return b;
}

Var TcnModel::block(Graph& g, const Bound& b, std::size_t level, const Var& x, bool train,
                    Rng* rng, std::vector<Var>* gates) const {
    if (level >= cfg.levels) {
        throw ConfigError("tcn: level " + std::to_string(level) + " out of range");
    }
    const Tensor& tx = x.value();
    if (tx.rank() != 2 || tx.extent(0) != cfg.seq_len) {
        throw InputError("tcn: block input " + shape_str(tx.shape()) +
                         " does not match the gate sizing T = " + std::to_string(cfg.seq_len));
    }
    const std::size_t t = tx.extent(0);
    if (train && cfg.dropout > 0.0 && rng == nullptr) {
        throw ConfigError("tcn: training forward with dropout needs an rng");
    }
    const LevelVars& lv = b.levels[level];

    Var gated = x;
    if (!cfg.tse_identity) {
        Var z = tse_squeeze(x);
        Var s = tse_excite(z, lv.w1, lv.w2);
        if (gates) gates->push_back(s);
        gated = tse_rescale(x, s);
    } else if (gates) {
        gates->push_back(g.leaf(Tensor({t, 1}, 1.0), false));
    }

    // [T x C] -> [1 x C x T] for the causal convolutions
    auto to_nct = [&](const Var& v) {
        const std::size_t c = v.value().extent(1);
        return reshape(transpose2d(v), {1, c, t});
    };
    Var h = to_nct(gated);
    for (std::size_t ci = 0; ci < lv.convs.size(); ++ci) {
        h = dilated_causal_conv1d(h, lv.convs[ci], cfg.dilations[level]);
        h = relu(h);
        if (cfg.dropout > 0.0 && train) h = dropout(h, cfg.dropout, *rng, true);
    }
    Var res = to_nct(x);
    if (lv.residual_proj) {
        res = dilated_causal_conv1d(res, *lv.residual_proj, 1);
    }
    Var sum = add(h, res);
    const std::size_t c_out = cfg.channels[level];
    return transpose2d(reshape(sum, {c_out, t}));
}

Var TcnModel::class_probs(Graph& g, const Bound& b, const Var& x, bool train, Rng* rng,
                          std::vector<Var>* gates) const {
    const Tensor& tx = x.value();
    if (tx.rank() != 2) {
        throw ShapeError("tcn: expected feature sequence [T x C], got " + shape_str(tx.shape()));
    }
    if (tx.extent(0) != cfg.seq_len) {
        throw InputError("tcn: sequence length " + std::to_string(tx.extent(0)) +
                         " does not match the gate sizing T = " + std::to_string(cfg.seq_len));
    }
    if (tx.extent(1) != cfg.in_channels) {
        throw InputError("tcn: sequence has " + std::to_string(tx.extent(1)) +
                         " channels, config expects " + std::to_string(cfg.in_channels));
    }
    Var h = x;
    for (std::size_t li = 0; li < cfg.levels; ++li) {
        h = block(g, b, li, h, train, rng, gates);
    }
    // the final time step carries the whole-sequence receptive field
    Var last = slice(h, 0, cfg.seq_len - 1, 1);  // [1 x C_last]
    Var logits = add_rowvec(matmul(last, b.head_weight), b.head_bias);
    return softmax(logits, 1);
}

std::vector<TemporalWeights> TcnModel::temporal_weights(const Tensor& x) const {
    Graph g;
    Bound b = bind(g, false);
    Var vx = g.leaf(x, false);
    std::vector<Var> gates;
    class_probs(g, b, vx, false, nullptr, &gates);
    std::vector<TemporalWeights> out;
    for (std::size_t li = 0; li < gates.size(); ++li) {
        const Tensor& s = gates[li].value();  // [T x 1]
        out.push_back({Tensor(Shape{s.extent(0)}, s.values()), li});
    }
    return out;
}

std::vector<ParamRef> TcnModel::parameters() {
    std::vector<ParamRef> out;
    for (std::size_t li = 0; li < levels.size(); ++li) {
        TcnLevelParams& lvl = levels[li];
        const std::string p = "level" + std::to_string(li);
        out.push_back({p + ".tse.w1", &lvl.tse.w1, true});
        out.push_back({p + ".tse.w2", &lvl.tse.w2, true});
        for (std::size_t ci = 0; ci < lvl.convs.size(); ++ci) {
            out.push_back({p + ".conv" + std::to_string(ci), &lvl.convs[ci], true});
        }
        if (lvl.residual_proj) {
            out.push_back({p + ".residual_proj", &*lvl.residual_proj, true});
        }
    }
    out.push_back({"head.weight", &head_weight, true});
    out.push_back({"head.bias", &head_bias, false});
    return out;
}

NamedTensors TcnModel::state() {
    NamedTensors out;
    for (const ParamRef& p : parameters()) out.emplace_back(p.name, *p.tensor);
    return out;
}

void TcnModel::load_state(const NamedTensors& tensors) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : tensors) by_name[name] = &t;
    for (const ParamRef& p : parameters()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw IoError("checkpoint is missing tensor \"" + p.name + "\"");
        }
        if (it->second->shape() != p.tensor->shape()) {
            throw IoError("checkpoint tensor \"" + p.name + "\" has shape " +
                          shape_str(it->second->shape()) + ", model expects " +
                          shape_str(p.tensor->shape()));
        }
        *p.tensor = *it->second;
    }
}

} // namespace stcn

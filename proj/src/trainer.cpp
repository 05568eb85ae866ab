#include "stcn/trainer.hpp"

#include "stcn/util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stcn {

void TrainConfig::validate() const {
    if (lr_init <= 0.0) throw ConfigError("train: lr_init must be positive");
    if (lr_decay_factor <= 0.0 || lr_decay_factor > 1.0) {
        throw ConfigError("train: lr_decay_factor must lie in (0, 1]");
    }
    if (lr_decay_every_epochs == 0) throw ConfigError("train: lr_decay_every_epochs must be >= 1");
    if (adam.eps <= 0.0) throw ConfigError("train: adam eps must be positive");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.lr_init *
           std::pow(cfg.lr_decay_factor,
                    static_cast<double>(epoch / cfg.lr_decay_every_epochs));
}

TrainState TrainState::init(const std::vector<ParamRef>& params, std::uint64_t seed) {
    TrainState s;
    s.rng_seed = seed;
    for (const ParamRef& p : params) {
        s.slots.push_back({p.name, p.tensor, Tensor::zeros_like(*p.tensor),
                           Tensor::zeros_like(*p.tensor), p.weight_decay});
    }
    return s;
}

void adam_step(TrainState& state, const GradMap& grads, double lr, const AdamParams& adam,
               double weight_decay) {
    // validate every gradient before mutating anything
    for (const TrainState::Slot& slot : state.slots) {
        auto it = grads.find(slot.name);
        if (it == grads.end()) {
            throw InputError("adam_step: no gradient supplied for \"" + slot.name + "\"");
        }
        if (it->second.size() != slot.param->size()) {
            throw ShapeError("adam_step: gradient size mismatch for \"" + slot.name + "\"");
        }
        for (double g : it->second) {
            if (!std::isfinite(g)) {
                throw NumericError("adam_step: non-finite gradient for \"" + slot.name +
                                   "\"; step aborted");
            }
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double corr1 = 1.0 - std::pow(adam.beta1, t);
    const double corr2 = 1.0 - std::pow(adam.beta2, t);
    for (TrainState::Slot& slot : state.slots) {
        const std::vector<double>& g = grads.at(slot.name);
        Tensor& p = *slot.param;
        for (std::size_t i = 0; i < p.size(); ++i) {
            slot.m[i] = adam.beta1 * slot.m[i] + (1.0 - adam.beta1) * g[i];
            slot.v[i] = adam.beta2 * slot.v[i] + (1.0 - adam.beta2) * g[i] * g[i];
            const double mhat = slot.m[i] / corr1;
            const double vhat = slot.v[i] / corr2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
        }
        if (slot.weight_decay && weight_decay > 0.0) {
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * weight_decay * p[i];
        }
    }
}

GradMap collect_grads(Graph& g, const std::vector<std::pair<std::string, Var>>& named) {
    GradMap out;
    for (const auto& [name, var] : named) {
        const Tensor& t = g.value(var);
        if (t.grad) {
            out.emplace(name, *t.grad);
        } else {
            out.emplace(name, std::vector<double>(t.size(), 0.0));
        }
    }
    return out;
}

namespace {

std::size_t argmax_row(const Tensor& probs, std::size_t row) {
    const std::size_t c = probs.extent(probs.rank() - 1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
        if (probs[row * c + j] > probs[row * c + best]) best = j;
    }
    return best;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + i,
                             order.begin() + std::min(n, i + batch_size));
    }
    return batches;
}

void check_loss_finite(double loss, const std::string& stage, std::size_t epoch) {
    if (!std::isfinite(loss)) {
        throw NumericError(stage + ": loss diverged to a non-finite value at epoch " +
                           std::to_string(epoch));
    }
}

} // namespace

std::vector<MetricRecord> pretrain_backbone(Backbone& net, const std::vector<VideoSample>& train,
                                            Modality modality, const TrainConfig& cfg,
                                            const MetricsSink& sink) {
    cfg.validate();
    if (train.empty()) throw InputError("pretrain: empty dataset");
    const std::size_t n = train.size();
    std::vector<Tensor> videos;  // [C x k x H x W]
    std::vector<std::size_t> labels(n);
    videos.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto it = train[i].streams.find(modality);
        if (it == train[i].streams.end()) {
            throw InputError("pretrain: sample " + train[i].id + " lacks modality " +
                             modality_name(modality));
        }
        if (train[i].label >= net.cfg.num_classes) {
            throw InputError("pretrain: label " + std::to_string(train[i].label) +
                             " out of range for " + std::to_string(net.cfg.num_classes) +
                             " classes");
        }
        videos.push_back(to_cthw(it->second));
        labels[i] = train[i].label;
    }
    const Shape& vs = videos[0].shape();

    TrainState state = TrainState::init(net.parameters(), cfg.seed);
    std::vector<MetricRecord> history;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        state.epoch = epoch;
        const double lr = lr_at(epoch, cfg);
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle/" + std::to_string(epoch)));
        Rng dropout_rng(derive_seed(cfg.seed, "dropout/" + std::to_string(epoch)));
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (const std::vector<std::size_t>& batch : make_batches(n, cfg.batch_size, shuffle_rng)) {
            const std::size_t b = batch.size();
            Tensor input({b, vs[0], vs[1], vs[2], vs[3]});
            std::vector<std::size_t> batch_labels(b);
            const std::size_t stride = videos[0].size();
            for (std::size_t i = 0; i < b; ++i) {
                std::copy(videos[batch[i]].data(), videos[batch[i]].data() + stride,
                          input.data() + i * stride);
                batch_labels[i] = labels[batch[i]];
            }
            Graph g;
            Backbone::Bound bound = net.bind(g, true);
            Var v = g.leaf(std::move(input), false);
            Var feats = net.features(g, bound, v, NormMode::train, &dropout_rng, true);
            Var probs = net.class_probs(g, bound, feats);
            Var loss = cross_entropy(probs, batch_labels);
            const double loss_val = loss.value().item();
            check_loss_finite(loss_val, "pretrain", epoch);
            g.backward(loss);
            adam_step(state, collect_grads(g, bound.named), lr, cfg.adam, cfg.weight_decay);
            loss_sum += loss_val * static_cast<double>(b);
            const Tensor& pv = probs.value();
            for (std::size_t i = 0; i < b; ++i) {
                if (argmax_row(pv, i) == batch_labels[i]) ++correct;
            }
        }
        MetricRecord rec{"backbone", modality_name(modality), epoch, lr,
                         loss_sum / static_cast<double>(n),
                         static_cast<double>(correct) / static_cast<double>(n)};
        if (sink) sink(rec);
        history.push_back(rec);
    }
    return history;
}

std::vector<FeatureSequence> extract_features(
    const std::vector<VideoSample>& samples,
    const std::vector<std::pair<Modality, FeatureExtractor>>& extractors, std::size_t T,
    std::size_t threads) {
    if (extractors.empty()) throw InputError("extract: no extractors supplied");
    std::vector<FeatureSequence> out(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const VideoSample& s = samples[i];
        std::vector<FeatureSequence> per_modality;
        for (const auto& [mod, extractor] : extractors) {
            auto it = s.streams.find(mod);
            if (it == s.streams.end()) {
                throw InputError("extract: sample " + s.id + " lacks modality " +
                                 modality_name(mod));
            }
            per_modality.push_back(
                extractor.extract(to_cthw(it->second), T, s.label, modality_name(mod)));
        }
        out[i] = fuse_modalities(per_modality);
    });
    return out;
}

std::vector<MetricRecord> train_tcn(TcnModel& model, const std::vector<FeatureSequence>& train,
                                    const TrainConfig& cfg, const MetricsSink& sink) {
    cfg.validate();
    if (train.empty()) throw InputError("train_tcn: empty feature cache");
    const std::size_t n = train.size();
    for (const FeatureSequence& f : train) {
        if (f.values.extent(0) != model.cfg.seq_len) {
            throw InputError("train_tcn: sequence length " + std::to_string(f.values.extent(0)) +
                             " does not match model T = " + std::to_string(model.cfg.seq_len));
        }
        if (f.label >= model.cfg.num_classes) {
            throw InputError("train_tcn: label " + std::to_string(f.label) + " out of range");
        }
    }
    TrainState state = TrainState::init(model.parameters(), cfg.seed);
    std::vector<MetricRecord> history;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        state.epoch = epoch;
        const double lr = lr_at(epoch, cfg);
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle/" + std::to_string(epoch)));
        Rng dropout_rng(derive_seed(cfg.seed, "dropout/" + std::to_string(epoch)));
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (const std::vector<std::size_t>& batch : make_batches(n, cfg.batch_size, shuffle_rng)) {
            Graph g;
            TcnModel::Bound bound = model.bind(g, true);
            Var loss_acc;
            for (std::size_t idx : batch) {
                Var x = g.leaf(train[idx].values, false);
                Var probs = model.class_probs(g, bound, x, true, &dropout_rng);
                Var ce = cross_entropy(probs, {train[idx].label});
                loss_acc = loss_acc.valid() ? add(loss_acc, ce) : ce;
                if (argmax_row(probs.value(), 0) == train[idx].label) ++correct;
            }
            Var loss = scale(loss_acc, 1.0 / static_cast<double>(batch.size()));
            const double loss_val = loss.value().item();
            check_loss_finite(loss_val, "train_tcn", epoch);
            g.backward(loss);
            adam_step(state, collect_grads(g, bound.named), lr, cfg.adam, cfg.weight_decay);
            loss_sum += loss_val * static_cast<double>(batch.size());
        }
        MetricRecord rec{"tcn", "", epoch, lr, loss_sum / static_cast<double>(n),
                         static_cast<double>(correct) / static_cast<double>(n)};
        if (sink) sink(rec);
        history.push_back(rec);
    }
    return history;
}

Evaluation evaluate_sequences(const TcnModel& model, const std::vector<FeatureSequence>& data,
                              std::size_t threads) {
    if (data.empty()) throw InputError("evaluate: empty evaluation set");
    const std::size_t nc = model.cfg.num_classes;
    std::vector<std::size_t> predicted(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        Graph g;
        TcnModel::Bound bound = model.bind(g, false);
        Var x = g.leaf(data[i].values, false);
        Var probs = model.class_probs(g, bound, x, false, nullptr);
        predicted[i] = argmax_row(probs.value(), 0);
    });
    Evaluation ev;
    ev.total = data.size();
    ev.confusion.assign(nc, std::vector<std::size_t>(nc, 0));
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].label >= nc) {
            throw InputError("evaluate: label " + std::to_string(data[i].label) +
                             " out of range");
        }
        ev.confusion[data[i].label][predicted[i]] += 1;
        if (predicted[i] == data[i].label) ++ev.correct;
    }
    ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.total);
    return ev;
}

} // namespace stcn

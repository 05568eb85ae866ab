#pragma once

#include "stcn/backbone.hpp"
#include "stcn/datapipe.hpp"
#include "stcn/tcn.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace stcn {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    double lr_init = 1e-3;
    double lr_decay_factor = 0.1;
    std::size_t lr_decay_every_epochs = 25;
    AdamParams adam;
    double weight_decay = 0.0;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    void validate() const;
};

// lr_init * decay_factor^floor(epoch / decay_every)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Parameters plus per-parameter Adam moments and the step counter.
struct TrainState {
    struct Slot {
        std::string name;
        Tensor* param = nullptr;
        Tensor m, v;
        bool weight_decay = false;
    };
    std::vector<Slot> slots;
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::uint64_t rng_seed = 0;
    static TrainState init(const std::vector<ParamRef>& params, std::uint64_t seed);
};

using GradMap = std::map<std::string, std::vector<double>>;

// Bias-corrected Adam update followed by decoupled weight decay on the
// slots flagged for it. A non-finite gradient aborts before any mutation.
void adam_step(TrainState& state, const GradMap& grads, double lr, const AdamParams& adam,
               double weight_decay);

// Gradients of bound parameters by name; parameters a forward pass never
// touched contribute zeros.
GradMap collect_grads(Graph& g, const std::vector<std::pair<std::string, Var>>& named);

struct MetricRecord {
    std::string stage;
    std::string modality;  // empty when not applicable
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double accuracy = 0.0;
};
using MetricsSink = std::function<void(const MetricRecord&)>;

// Minimizes head cross-entropy over the chosen modality of temporally
// normalized samples. Loss and accuracy come from the training forwards.
std::vector<MetricRecord> pretrain_backbone(Backbone& net, const std::vector<VideoSample>& train,
                                            Modality modality, const TrainConfig& cfg,
                                            const MetricsSink& sink = {});

// Runs every extractor over its modality stream, pools with ltap(T) and
// fuses the per-modality sequences; pure, so samples may run in parallel.
std::vector<FeatureSequence> extract_features(
    const std::vector<VideoSample>& samples,
    const std::vector<std::pair<Modality, FeatureExtractor>>& extractors, std::size_t T,
    std::size_t threads = 1);

std::vector<MetricRecord> train_tcn(TcnModel& model, const std::vector<FeatureSequence>& train,
                                    const TrainConfig& cfg, const MetricsSink& sink = {});

struct Evaluation {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

Evaluation evaluate_sequences(const TcnModel& model, const std::vector<FeatureSequence>& data,
                              std::size_t threads = 1);

} // namespace stcn

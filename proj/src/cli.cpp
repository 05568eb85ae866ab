#include "stcn/cli.hpp"

#include "stcn/backbone.hpp"
#include "stcn/datapipe.hpp"
#include "stcn/io.hpp"
#include "stcn/log.hpp"
#include "stcn/tcn.hpp"
#include "stcn/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

namespace stcn {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct SynthSpec {
    std::size_t num_classes = 4;
    std::size_t samples_per_class = 13;
    std::size_t frames = 8;
    std::size_t height = 16;
    std::size_t width = 16;
    double train_fraction = 0.8;
};

struct ReportSpec {
    std::size_t tse_samples = 4;
};

struct RunConfig {
    std::uint64_t seed = 0;
    fs::path out = "runs/out";
    std::size_t threads = 1;

    fs::path dataset_path;
    std::size_t frames_k = 8;
    std::size_t ltap_T = 4;
    SampleMode normalize_mode = SampleMode::random;
    std::optional<SynthSpec> synth;
    AugmentSpec augment_spec;
    std::optional<std::size_t> resize_smaller;          // aspect-preserving pre-resize
    std::optional<std::pair<std::size_t, std::size_t>> crop;  // random for train, centered for test

    BackboneConfig backbone;
    TcnConfig tcn;
    TrainConfig train_backbone;
    TrainConfig train_tcn;
    ReportSpec report;
};

template <typename T>
void read_into(const json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).template get<T>();
}

AugmentOp augment_op_from_name(const std::string& name) {
    if (name == "reverse") return AugmentOp::reverse;
    if (name == "mirror") return AugmentOp::mirror;
    if (name == "reverse_mirror") return AugmentOp::reverse_mirror;
    throw ConfigError("config: unknown augment op \"" + name + "\"");
}

TrainConfig parse_train(const json& j, std::uint64_t seed) {
    TrainConfig t;
    read_into(j, "lr_init", t.lr_init);
    read_into(j, "lr_decay_factor", t.lr_decay_factor);
    read_into(j, "lr_decay_every_epochs", t.lr_decay_every_epochs);
    read_into(j, "weight_decay", t.weight_decay);
    read_into(j, "epochs", t.epochs);
    read_into(j, "batch_size", t.batch_size);
    read_into(j, "beta1", t.adam.beta1);
    read_into(j, "beta2", t.adam.beta2);
    read_into(j, "eps", t.adam.eps);
    t.seed = seed;
    return t;
}

RunConfig parse_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
    RunConfig c;
    read_into(j, "seed", c.seed);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    read_into(j, "threads", c.threads);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        if (d.contains("path")) c.dataset_path = d.at("path").get<std::string>();
        read_into(d, "frames_k", c.frames_k);
        read_into(d, "ltap_T", c.ltap_T);
        if (d.contains("normalize")) {
            const std::string mode = d.at("normalize").get<std::string>();
            if (mode == "random") {
                c.normalize_mode = SampleMode::random;
            } else if (mode == "deterministic") {
                c.normalize_mode = SampleMode::deterministic;
            } else {
                throw ConfigError("config: normalize must be random or deterministic");
            }
        }
        if (d.contains("synth")) {
            const json& s = d.at("synth");
            SynthSpec spec;
            read_into(s, "num_classes", spec.num_classes);
            read_into(s, "samples_per_class", spec.samples_per_class);
            read_into(s, "frames", spec.frames);
            read_into(s, "height", spec.height);
            read_into(s, "width", spec.width);
            read_into(s, "train_fraction", spec.train_fraction);
            c.synth = spec;
        }
        if (d.contains("resize_smaller_side")) {
            c.resize_smaller = d.at("resize_smaller_side").get<std::size_t>();
        }
        if (d.contains("crop")) {
            const auto hw = d.at("crop").get<std::vector<std::size_t>>();
            if (hw.size() != 2) throw ConfigError("config: crop must be [height, width]");
            c.crop = {hw[0], hw[1]};
        }
        if (d.contains("augment")) {
            const json& a = d.at("augment");
            if (a.contains("ops")) {
                for (const json& op : a.at("ops")) {
                    c.augment_spec.ops.push_back(augment_op_from_name(op.get<std::string>()));
                }
            }
            if (a.contains("label_map")) {
                for (const auto& [op_name, mapping] : a.at("label_map").items()) {
                    const AugmentOp op = augment_op_from_name(op_name);
                    for (const auto& [from, to] : mapping.items()) {
                        c.augment_spec.label_map[{op, std::stoul(from)}] = to.get<std::size_t>();
                    }
                }
            }
        }
    }

    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        read_into(b, "block_layers", c.backbone.block_layers);
        read_into(b, "growth_rate", c.backbone.growth_rate);
        read_into(b, "compression", c.backbone.compression);
        read_into(b, "dropout", c.backbone.dropout);
        read_into(b, "num_classes", c.backbone.num_classes);
        read_into(b, "bottleneck_factor", c.backbone.bottleneck_factor);
    }
    if (j.contains("tcn")) {
        const json& t = j.at("tcn");
        read_into(t, "levels", c.tcn.levels);
        read_into(t, "kernel_size", c.tcn.kernel_size);
        read_into(t, "channels", c.tcn.channels);
        read_into(t, "dilations", c.tcn.dilations);
        read_into(t, "tse_reduction", c.tcn.tse_reduction);
        read_into(t, "dropout", c.tcn.dropout);
        read_into(t, "num_classes", c.tcn.num_classes);
        read_into(t, "convs_per_level", c.tcn.convs_per_level);
        read_into(t, "tse_identity", c.tcn.tse_identity);
    }
    c.train_backbone = j.contains("train_backbone") ? parse_train(j.at("train_backbone"), c.seed)
                                                    : TrainConfig{};
    c.train_tcn = j.contains("train_tcn") ? parse_train(j.at("train_tcn"), c.seed) : TrainConfig{};
    c.train_backbone.seed = c.seed;
    c.train_tcn.seed = c.seed;
    if (j.contains("report")) {
        read_into(j.at("report"), "tse_samples", c.report.tse_samples);
    }
    return c;
}

// Whole-config validation; runs before any artifact is written.
void validate_run_config(const RunConfig& c) {
    if (c.ltap_T == 0 || c.frames_k % c.ltap_T != 0) {
        throw ConfigError("config: frames_k = " + std::to_string(c.frames_k) +
                          " must be divisible by ltap_T = " + std::to_string(c.ltap_T));
    }
    if (c.dataset_path.empty()) throw ConfigError("config: dataset.path is required");
    c.train_backbone.validate();
    c.train_tcn.validate();
    // receptive-field coverage check (warning only)
    TcnConfig probe = c.tcn;
    probe.seq_len = c.ltap_T;
    probe.in_channels = 1;
    probe.num_classes = std::max<std::size_t>(probe.num_classes, 1);
    probe.finalize();
}

void require_dataset(const RunConfig& c) {
    if (!fs::exists(c.dataset_path / "manifest.json")) {
        throw InputError("dataset not found at " + c.dataset_path.string() +
                         "; run `stcn synth` (or point dataset.path at an existing dataset)");
    }
}

struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<VideoSample> train;  // normalized to k frames
    std::vector<VideoSample> test;
    std::vector<Modality> modalities;
};

// resize, crop (seeded for train, centered for test), augment, then resample
void spatially_size(const RunConfig& c, VideoSample& s, bool train_split) {
    if (c.resize_smaller) {
        for (auto& [mod, frames] : s.streams) {
            frames = resize_smaller_side(frames, *c.resize_smaller);
        }
    }
    if (c.crop) {
        const auto [ch, cw] = *c.crop;
        if (train_split) {
            Rng rng(derive_seed(c.seed, "crop/" + s.id));
            s = random_crop_sample(s, ch, cw, rng);
        } else {
            const Tensor& first = s.streams.begin()->second;
            const std::size_t top = (first.extent(1) - ch) / 2;
            const std::size_t left = (first.extent(2) - cw) / 2;
            for (auto& [mod, frames] : s.streams) {
                frames = crop_frames(frames, top, left, ch, cw);
            }
        }
    }
}

LoadedDataset load_normalized(const RunConfig& c) {
    LoadedDataset d;
    d.manifest = read_manifest(c.dataset_path);
    if (d.manifest.samples.empty()) throw InputError("dataset manifest lists no samples");
    d.modalities = d.manifest.samples.front().modalities;
    for (const DatasetEntry& e : d.manifest.samples) {
        VideoSample raw = load_sample(c.dataset_path, e);
        const bool train_split = e.split == "train";
        spatially_size(c, raw, train_split);
        std::vector<VideoSample> expanded;
        if (train_split && !c.augment_spec.ops.empty()) {
            expanded = augment(raw, c.augment_spec);
        } else {
            expanded.push_back(std::move(raw));
        }
        for (VideoSample& s : expanded) {
            VideoSample norm = normalize_sample(
                s, c.frames_k, c.normalize_mode, derive_seed(c.seed, "tnorm/" + s.id));
            if (train_split) {
                d.train.push_back(std::move(norm));
            } else {
                d.test.push_back(std::move(norm));
            }
        }
    }
    return d;
}

fs::path backbone_ckpt_path(const RunConfig& c, Modality m) {
    return c.out / ("backbone_" + std::string(modality_name(m)) + ".ckpt");
}

fs::path tcn_ckpt_path(const RunConfig& c) { return c.out / "tcn.ckpt"; }
fs::path features_dir(const RunConfig& c) { return c.out / "features"; }

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create directory " + p.string());
}

BackboneConfig backbone_config_for(const RunConfig& c, const VideoSample& probe, Modality m) {
    BackboneConfig b = c.backbone;
    const Tensor& frames = probe.streams.at(m);
    b.frames = c.frames_k;
    b.height = frames.extent(1);
    b.width = frames.extent(2);
    b.in_channels = frames.extent(3);
    b.validate();
    return b;
}

MetricsSink jsonl_sink(const fs::path& path) {
    auto out = std::make_shared<std::ofstream>(path, std::ios::trunc);
    if (!*out) throw IoError("cannot open metrics log " + path.string());
    return [out](const MetricRecord& r) {
        json j;
        j["stage"] = r.stage;
        if (!r.modality.empty()) j["modality"] = r.modality;
        j["epoch"] = r.epoch;
        j["lr"] = r.lr;
        j["loss"] = r.loss;
        j["accuracy"] = r.accuracy;
        *out << j.dump() << "\n";
        out->flush();
    };
}

std::vector<std::pair<Modality, FeatureExtractor>> load_extractors(const RunConfig& c,
                                                                   const LoadedDataset& d) {
    std::vector<std::pair<Modality, FeatureExtractor>> extractors;
    const VideoSample& probe = d.train.empty() ? d.test.front() : d.train.front();
    for (Modality m : d.modalities) {
        const fs::path ckpt = backbone_ckpt_path(c, m);
        if (!fs::exists(ckpt)) {
            throw InputError("backbone checkpoint not found: " + ckpt.string() +
                             "; run `stcn train --stage backbone` first");
        }
        auto net = std::make_shared<Backbone>(
            Backbone::init(backbone_config_for(c, probe, m), c.seed));
        net->load_state(load_archive(ckpt));
        extractors.emplace_back(m, truncate(std::move(net)));
    }
    return extractors;
}

// ---- commands -------------------------------------------------------------

void cmd_synth(const RunConfig& c) {
    if (!c.synth) throw ConfigError("config: dataset.synth section is required for synth");
    const SynthSpec& s = *c.synth;
    std::vector<VideoSample> samples = synth_gestures(s.num_classes, s.samples_per_class,
                                                      s.frames, s.height, s.width, c.seed);
    const std::size_t train_per_class = static_cast<std::size_t>(
        std::llround(s.train_fraction * static_cast<double>(s.samples_per_class)));
    std::vector<std::string> splits;
    splits.reserve(samples.size());
    for (std::size_t cls = 0; cls < s.num_classes; ++cls) {
        for (std::size_t i = 0; i < s.samples_per_class; ++i) {
            splits.push_back(i < train_per_class ? "train" : "test");
        }
    }
    std::vector<std::string> names;
    for (std::size_t cls = 0; cls < s.num_classes; ++cls) {
        names.push_back(gesture_name(static_cast<GestureClass>(cls)));
    }
    write_dataset(c.dataset_path, samples, splits, s.num_classes, names);
    std::cout << "dataset: " << c.dataset_path.string() << "\n"
              << "classes: " << s.num_classes << ", samples: " << samples.size() << " ("
              << train_per_class * s.num_classes << " train / "
              << samples.size() - train_per_class * s.num_classes << " test)\n";
}

void cmd_train_backbone(const RunConfig& c) {
    require_dataset(c);
    LoadedDataset d = load_normalized(c);
    if (d.train.empty()) throw InputError("dataset has no training split");
    ensure_dir(c.out);
    for (Modality m : d.modalities) {
        BackboneConfig bc = backbone_config_for(c, d.train.front(), m);
        Backbone net = Backbone::init(bc, derive_seed(c.seed, std::string("backbone/") +
                                                                  modality_name(m)));
        TrainConfig tc = c.train_backbone;
        MetricsSink sink = jsonl_sink(
            c.out / ("metrics_backbone_" + std::string(modality_name(m)) + ".jsonl"));
        std::vector<MetricRecord> hist = pretrain_backbone(net, d.train, m, tc, sink);
        save_archive(backbone_ckpt_path(c, m), net.state());
        log::info("backbone[" + std::string(modality_name(m)) +
                  "]: final train accuracy = " + std::to_string(hist.back().accuracy));
    }
    std::cout << "backbone checkpoints written to " << c.out.string() << "\n";
}

void cmd_extract(const RunConfig& c) {
    require_dataset(c);
    LoadedDataset d = load_normalized(c);
    auto extractors = load_extractors(c, d);
    const fs::path dir = features_dir(c);
    ensure_dir(dir);

    std::vector<FeatureSequence> train_fs =
        extract_features(d.train, extractors, c.ltap_T, c.threads);
    std::vector<FeatureSequence> test_fs =
        extract_features(d.test, extractors, c.ltap_T, c.threads);

    json manifest;
    manifest["T"] = c.ltap_T;
    manifest["channels"] = train_fs.empty() ? (test_fs.empty() ? 0 : test_fs[0].values.extent(1))
                                            : train_fs[0].values.extent(1);
    json list = json::array();
    auto emit = [&](const std::vector<VideoSample>& samples,
                    const std::vector<FeatureSequence>& features, const char* split) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const std::string file = samples[i].id + ".stcf";
            save_feature(dir / file, features[i]);
            json e;
            e["id"] = samples[i].id;
            e["label"] = features[i].label;
            e["split"] = split;
            e["file"] = file;
            list.push_back(e);
        }
    };
    emit(d.train, train_fs, "train");
    emit(d.test, test_fs, "test");
    manifest["samples"] = list;
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
    std::cout << "feature cache: " << dir.string() << " (" << list.size() << " entries)\n";
}

struct FeatureCache {
    std::size_t T = 0;
    std::size_t channels = 0;
    std::vector<FeatureSequence> train;
    std::vector<FeatureSequence> test;
};

FeatureCache load_feature_cache(const RunConfig& c) {
    const fs::path dir = features_dir(c);
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw InputError("feature cache not found at " + dir.string() +
                         "; run `stcn extract` first");
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed feature manifest: " + std::string(e.what()));
    }
    FeatureCache cache;
    cache.T = j.at("T").get<std::size_t>();
    cache.channels = j.at("channels").get<std::size_t>();
    for (const json& e : j.at("samples")) {
        FeatureSequence f = load_feature(dir / e.at("file").get<std::string>());
        if (e.at("split").get<std::string>() == "train") {
            cache.train.push_back(std::move(f));
        } else {
            cache.test.push_back(std::move(f));
        }
    }
    return cache;
}

void cmd_train_tcn(const RunConfig& c) {
    FeatureCache cache = load_feature_cache(c);
    if (cache.train.empty()) throw InputError("feature cache has no training split");
    ensure_dir(c.out);
    TcnConfig tc = c.tcn;
    tc.seq_len = cache.T;
    tc.in_channels = cache.channels;
    TcnModel model = TcnModel::init(tc, derive_seed(c.seed, "tcn"));
    MetricsSink sink = jsonl_sink(c.out / "metrics_tcn.jsonl");
    std::vector<MetricRecord> hist = train_tcn(model, cache.train, c.train_tcn, sink);
    save_archive(tcn_ckpt_path(c), model.state());
    log::info("tcn: final train accuracy = " + std::to_string(hist.back().accuracy));
    std::cout << "tcn checkpoint written to " << tcn_ckpt_path(c).string() << "\n";
}

void cmd_eval(const RunConfig& c) {
    require_dataset(c);
    LoadedDataset d = load_normalized(c);
    if (d.test.empty()) throw InputError("dataset has no test split");
    auto extractors = load_extractors(c, d);
    if (!fs::exists(tcn_ckpt_path(c))) {
        throw InputError("tcn checkpoint not found: " + tcn_ckpt_path(c).string() +
                         "; run `stcn train --stage tcn` first");
    }
    std::vector<FeatureSequence> test_fs =
        extract_features(d.test, extractors, c.ltap_T, c.threads);
    TcnConfig tc = c.tcn;
    tc.seq_len = c.ltap_T;
    tc.in_channels = test_fs.front().values.extent(1);
    TcnModel model = TcnModel::init(tc, derive_seed(c.seed, "tcn"));
    model.load_state(load_archive(tcn_ckpt_path(c)));

    Evaluation ev = evaluate_sequences(model, test_fs, c.threads);

    const fs::path report = c.out / "report";
    ensure_dir(report);
    {
        json j;
        j["accuracy"] = ev.accuracy;
        j["correct"] = ev.correct;
        j["total"] = ev.total;
        std::ofstream out(report / "accuracy.json", std::ios::trunc);
        if (!out) throw IoError("cannot write " + (report / "accuracy.json").string());
        out << j.dump(2) << "\n";
    }
    {
        std::ofstream out(report / "confusion.csv", std::ios::trunc);
        if (!out) throw IoError("cannot write " + (report / "confusion.csv").string());
        out << "class";
        for (const std::string& name : d.manifest.class_names) out << "," << name;
        out << "\n";
        for (std::size_t i = 0; i < ev.confusion.size(); ++i) {
            out << d.manifest.class_names[i];
            for (std::size_t v : ev.confusion[i]) out << "," << v;
            out << "\n";
        }
    }
    {
        const fs::path tse_dir = report / "tse";
        ensure_dir(tse_dir);
        const std::size_t count = std::min(c.report.tse_samples, d.test.size());
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<TemporalWeights> weights = model.temporal_weights(test_fs[i].values);
            json j;
            j["sample_id"] = d.test[i].id;
            json layers = json::array();
            for (const TemporalWeights& tw : weights) {
                json l;
                l["layer_index"] = tw.layer_index;
                l["s"] = tw.s.values();
                layers.push_back(l);
            }
            j["layers"] = layers;
            std::ofstream out(tse_dir / (d.test[i].id + ".json"), std::ios::trunc);
            if (!out) throw IoError("cannot write TSE dump for " + d.test[i].id);
            out << j.dump(2) << "\n";
        }
    }
    std::cout << "test accuracy: " << ev.accuracy << " (" << ev.correct << "/" << ev.total
              << "), report in " << report.string() << "\n";
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"two-stage video gesture recognition: 3d densely connected feature "
                 "extractor + temporally gated causal sequence classifier"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::string stage = "backbone";
    std::optional<std::uint64_t> seed_override;
    std::optional<std::size_t> threads_override;

    app.add_option("--config", config_path, "run configuration (json)")->required();
    app.add_option("--out", out_override, "output directory override");
    app.add_option("--seed", seed_override, "root seed override");
    app.add_option("--threads", threads_override, "worker threads for extraction/eval");

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic gesture dataset");
    CLI::App* train = app.add_subcommand("train", "train one pipeline stage");
    train->add_option("--stage", stage, "backbone | tcn")->check(CLI::IsMember({"backbone", "tcn"}));
    CLI::App* extract = app.add_subcommand("extract", "extract and cache feature sequences");
    CLI::App* eval = app.add_subcommand("eval", "evaluate the trained pipeline on the test split");
    CLI::App* pipeline = app.add_subcommand("pipeline", "synth, train both stages, extract, eval");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        RunConfig cfg = parse_run_config(config_path);
        if (!out_override.empty()) cfg.out = out_override;
        if (seed_override) {
            cfg.seed = *seed_override;
            cfg.train_backbone.seed = *seed_override;
            cfg.train_tcn.seed = *seed_override;
        }
        if (threads_override) cfg.threads = *threads_override;
        validate_run_config(cfg);

        if (synth->parsed()) {
            cmd_synth(cfg);
        } else if (train->parsed()) {
            if (stage == "backbone") {
                cmd_train_backbone(cfg);
            } else {
                cmd_train_tcn(cfg);
            }
        } else if (extract->parsed()) {
            cmd_extract(cfg);
        } else if (eval->parsed()) {
            cmd_eval(cfg);
        } else if (pipeline->parsed()) {
            cmd_synth(cfg);
            cmd_train_backbone(cfg);
            cmd_extract(cfg);
            cmd_train_tcn(cfg);
            cmd_eval(cfg);
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

} // namespace stcn

#include "stcn/datapipe.hpp"

#include "stcn/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace stcn {

using nlohmann::json;

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::rgb: return "rgb";
        case Modality::depth: return "depth";
        case Modality::flow: return "flow";
    }
    return "?";
}

Modality modality_from_name(const std::string& name) {
    if (name == "rgb") return Modality::rgb;
    if (name == "depth") return Modality::depth;
    if (name == "flow") return Modality::flow;
    throw InputError("unknown modality \"" + name + "\"");
}

std::size_t VideoSample::frame_count() const {
    if (streams.empty()) return 0;
    return streams.begin()->second.extent(0);
}

// ---------------------------------------------------------------------------
// temporal normalization

std::vector<std::size_t> temporal_indices(std::size_t n, std::size_t k, SampleMode mode,
                                          Rng& rng) {
    if (n == 0) throw InputError("temporal_normalize: empty video");
    if (k == 0) throw InputError("temporal_normalize: target length must be >= 1");
    std::vector<std::size_t> out;
    out.reserve(k);
    if (n == k) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(i);
        return out;
    }
    if (n > k) {
        // near-equal contiguous sections, remainder spread over the earliest
        const std::size_t base = n / k, rem = n % k;
        std::size_t start = 0;
        for (std::size_t s = 0; s < k; ++s) {
            const std::size_t len = base + (s < rem ? 1 : 0);
            if (mode == SampleMode::deterministic) {
                out.push_back(start + (len - 1) / 2);
            } else {
                out.push_back(start + rng.below(len));
            }
            start += len;
        }
        return out;
    }
    // n < k: duplicate chosen frames immediately after themselves
    const std::size_t m = k - n;
    std::vector<std::size_t> copies(n, 0);
    if (mode == SampleMode::deterministic) {
        for (std::size_t j = 0; j < m; ++j) copies[j * n / m] += 1;
    } else {
        for (std::size_t j = 0; j < m; ++j) copies[rng.below(n)] += 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r <= copies[i]; ++r) out.push_back(i);
    }
    return out;
}

namespace {

Tensor gather_frames(const Tensor& frames, const std::vector<std::size_t>& indices) {
    const std::size_t frame_sz = frames.size() / frames.extent(0);
    Shape shape = frames.shape();
    shape[0] = indices.size();
    Tensor out(shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* src = frames.data() + indices[i] * frame_sz;
        std::copy(src, src + frame_sz, out.data() + i * frame_sz);
    }
    return out;
}

} // namespace

NormalizedVideo temporal_normalize(const Tensor& frames, std::size_t k, SampleMode mode,
                                   std::uint64_t seed) {
    if (frames.rank() != 4) {
        throw ShapeError("temporal_normalize: expected frames [n x H x W x C], got " +
                         shape_str(frames.shape()));
    }
    Rng rng(seed);
    std::vector<std::size_t> indices = temporal_indices(frames.extent(0), k, mode, rng);
    return NormalizedVideo{gather_frames(frames, indices), std::move(indices)};
}

VideoSample normalize_sample(const VideoSample& sample, std::size_t k, SampleMode mode,
                             std::uint64_t seed) {
    if (sample.streams.empty()) throw InputError("temporal_normalize: empty video");
    Rng rng(seed);
    const std::vector<std::size_t> indices =
        temporal_indices(sample.frame_count(), k, mode, rng);
    VideoSample out;
    out.id = sample.id;
    out.label = sample.label;
    const Tensor& first = sample.streams.begin()->second;
    for (const auto& [mod, frames] : sample.streams) {
        if (frames.extent(0) != first.extent(0) || frames.extent(1) != first.extent(1) ||
            frames.extent(2) != first.extent(2)) {
            throw InputError("sample " + sample.id +
                             ": modalities must share frame count and spatial extents");
        }
        out.streams.emplace(mod, gather_frames(frames, indices));
    }
    return out;
}

// ---------------------------------------------------------------------------
// augmentation

const char* augment_op_name(AugmentOp op) {
    switch (op) {
        case AugmentOp::reverse: return "reverse";
        case AugmentOp::mirror: return "mirror";
        case AugmentOp::reverse_mirror: return "reverse_mirror";
    }
    return "?";
}

Tensor reverse_frames(const Tensor& frames) {
    if (frames.rank() != 4) {
        throw ShapeError("reverse: expected frames [n x H x W x C], got " +
                         shape_str(frames.shape()));
    }
    const std::size_t n = frames.extent(0);
    const std::size_t frame_sz = frames.size() / n;
    Tensor out(frames.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* src = frames.data() + (n - 1 - i) * frame_sz;
        std::copy(src, src + frame_sz, out.data() + i * frame_sz);
    }
    return out;
}

Tensor mirror_frames(const Tensor& frames, bool negate_horizontal) {
    if (frames.rank() != 4) {
        throw ShapeError("mirror: expected frames [n x H x W x C], got " +
                         shape_str(frames.shape()));
    }
    const std::size_t n = frames.extent(0), h = frames.extent(1), w = frames.extent(2),
                      c = frames.extent(3);
    Tensor out(frames.shape());
    for (std::size_t f = 0; f < n; ++f)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double* src = frames.data() + ((f * h + y) * w + (w - 1 - x)) * c;
                double* dst = out.data() + ((f * h + y) * w + x) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
                if (negate_horizontal) dst[0] = -dst[0];
            }
    return out;
}

namespace {

std::size_t mapped_label(const AugmentSpec& spec, AugmentOp op, std::size_t label) {
    if (spec.label_map.empty()) return label;
    auto it = spec.label_map.find({op, label});
    if (it == spec.label_map.end()) {
        throw ConfigError(std::string("augment: label_map has no entry for (") +
                          augment_op_name(op) + ", " + std::to_string(label) + ")");
    }
    return it->second;
}

} // namespace

std::vector<VideoSample> augment(const VideoSample& sample, const AugmentSpec& spec) {
    std::vector<VideoSample> out;
    out.push_back(sample);
    for (AugmentOp op : spec.ops) {
        VideoSample s;
        s.label = mapped_label(spec, op, sample.label);
        for (const auto& [mod, frames] : sample.streams) {
            const bool neg = mod == Modality::flow;
            Tensor t = frames;
            if (op == AugmentOp::mirror || op == AugmentOp::reverse_mirror) {
                t = mirror_frames(t, neg);
            }
            if (op == AugmentOp::reverse || op == AugmentOp::reverse_mirror) {
                t = reverse_frames(t);
            }
            s.streams.emplace(mod, std::move(t));
        }
        switch (op) {
            case AugmentOp::reverse: s.id = sample.id + "_rev"; break;
            case AugmentOp::mirror: s.id = sample.id + "_mir"; break;
            case AugmentOp::reverse_mirror: s.id = sample.id + "_revmir"; break;
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// spatial sizing

Tensor resize_bilinear(const Tensor& frames, std::size_t out_h, std::size_t out_w) {
    if (frames.rank() != 4) {
        throw ShapeError("resize: expected frames [n x H x W x C], got " +
                         shape_str(frames.shape()));
    }
    if (out_h == 0 || out_w == 0) throw InputError("resize: target extents must be positive");
    const std::size_t n = frames.extent(0), h = frames.extent(1), w = frames.extent(2),
                      c = frames.extent(3);
    Tensor out({n, out_h, out_w, c});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t f = 0; f < n; ++f) {
        for (std::size_t y = 0; y < out_h; ++y) {
            const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
            const double fy0 = std::floor(src_y);
            const double ty = src_y - fy0;
            const std::ptrdiff_t y0i = static_cast<std::ptrdiff_t>(fy0);
            const std::size_t y0 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y0i, 0, h - 1));
            const std::size_t y1 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y0i + 1, 0, h - 1));
            for (std::size_t x = 0; x < out_w; ++x) {
                const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
                const double fx0 = std::floor(src_x);
                const double tx = src_x - fx0;
                const std::ptrdiff_t x0i = static_cast<std::ptrdiff_t>(fx0);
                const std::size_t x0 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x0i, 0, w - 1));
                const std::size_t x1 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x0i + 1, 0, w - 1));
                for (std::size_t ch = 0; ch < c; ++ch) {
                    auto at = [&](std::size_t yy, std::size_t xx) {
                        return frames[((f * h + yy) * w + xx) * c + ch];
                    };
                    const double top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                    const double bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                    out[((f * out_h + y) * out_w + x) * c + ch] = top * (1.0 - ty) + bot * ty;
                }
            }
        }
    }
    return out;
}

Tensor resize_smaller_side(const Tensor& frames, std::size_t target) {
    const std::size_t h = frames.extent(1), w = frames.extent(2);
    if (target == 0) throw InputError("resize: target must be positive");
    if (h <= w) {
        const std::size_t out_w = static_cast<std::size_t>(std::llround(
            static_cast<double>(w) * static_cast<double>(target) / static_cast<double>(h)));
        return resize_bilinear(frames, target, std::max<std::size_t>(out_w, 1));
    }
    const std::size_t out_h = static_cast<std::size_t>(std::llround(
        static_cast<double>(h) * static_cast<double>(target) / static_cast<double>(w)));
    return resize_bilinear(frames, std::max<std::size_t>(out_h, 1), target);
}

Tensor crop_frames(const Tensor& frames, std::size_t top, std::size_t left, std::size_t out_h,
                   std::size_t out_w) {
    if (frames.rank() != 4) {
        throw ShapeError("crop: expected frames [n x H x W x C], got " +
                         shape_str(frames.shape()));
    }
    const std::size_t n = frames.extent(0), h = frames.extent(1), w = frames.extent(2),
                      c = frames.extent(3);
    if (out_h == 0 || out_w == 0 || top + out_h > h || left + out_w > w) {
        throw InputError("crop: " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " at (" + std::to_string(top) + ", " + std::to_string(left) +
                         ") does not fit frame " + std::to_string(h) + "x" + std::to_string(w));
    }
    Tensor out({n, out_h, out_w, c});
    for (std::size_t f = 0; f < n; ++f)
        for (std::size_t y = 0; y < out_h; ++y) {
            const double* src = frames.data() + ((f * h + top + y) * w + left) * c;
            std::copy(src, src + out_w * c, out.data() + (f * out_h + y) * out_w * c);
        }
    return out;
}

VideoSample random_crop_sample(const VideoSample& sample, std::size_t out_h, std::size_t out_w,
                               Rng& rng) {
    if (sample.streams.empty()) throw InputError("crop: sample has no streams");
    const Tensor& first = sample.streams.begin()->second;
    const std::size_t h = first.extent(1), w = first.extent(2);
    if (out_h > h || out_w > w) {
        throw InputError("crop: " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " larger than frame " + std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t top = static_cast<std::size_t>(rng.below(h - out_h + 1));
    const std::size_t left = static_cast<std::size_t>(rng.below(w - out_w + 1));
    VideoSample out;
    out.id = sample.id;
    out.label = sample.label;
    for (const auto& [mod, frames] : sample.streams) {
        out.streams.emplace(mod, crop_frames(frames, top, left, out_h, out_w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// modality fusion

FeatureSequence fuse_modalities(const std::vector<FeatureSequence>& seqs) {
    if (seqs.empty()) throw InputError("fuse: no feature sequences");
    if (seqs.size() == 1) return seqs[0];
    std::vector<const FeatureSequence*> ordered;
    for (const FeatureSequence& s : seqs) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(), [](const FeatureSequence* a, const FeatureSequence* b) {
        return static_cast<int>(modality_from_name(a->modality)) <
               static_cast<int>(modality_from_name(b->modality));
    });
    const std::size_t t = ordered[0]->values.extent(0);
    std::size_t total_c = 0;
    for (const FeatureSequence* s : ordered) {
        if (s->values.extent(0) != t) {
            throw InputError("fuse: sequence lengths differ: " + std::to_string(t) + " vs " +
                             std::to_string(s->values.extent(0)));
        }
        if (s->label != ordered[0]->label) {
            throw InputError("fuse: labels differ across modalities");
        }
        total_c += s->values.extent(1);
    }
    FeatureSequence out;
    out.label = ordered[0]->label;
    out.values = Tensor({t, total_c});
    std::size_t off = 0;
    std::string tag;
    for (const FeatureSequence* s : ordered) {
        const std::size_t c = s->values.extent(1);
        for (std::size_t row = 0; row < t; ++row) {
            const double* src = s->values.data() + row * c;
            std::copy(src, src + c, out.values.data() + row * total_c + off);
        }
        off += c;
        if (!tag.empty()) tag += "+";
        tag += s->modality;
    }
    out.modality = tag;
    return out;
}

// ---------------------------------------------------------------------------
// synthetic gestures

const char* gesture_name(GestureClass c) {
    switch (c) {
        case GestureClass::move_left: return "move_left";
        case GestureClass::move_right: return "move_right";
        case GestureClass::move_up: return "move_up";
        case GestureClass::move_down: return "move_down";
        case GestureClass::rotate_cw: return "rotate_cw";
        case GestureClass::rotate_ccw: return "rotate_ccw";
        case GestureClass::grow: return "grow";
        case GestureClass::shrink: return "shrink";
    }
    return "?";
}

BlobTrack gesture_track(GestureClass c, std::size_t frames, std::size_t h, std::size_t w,
                        const GestureStyle& style) {
    if (frames == 0) throw InputError("gesture_track: needs at least one frame");
    const double dim = static_cast<double>(std::min(h, w));
    const double cx0 = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy0 = (static_cast<double>(h) - 1.0) / 2.0;
    const double amp = 0.20 * dim * style.speed;
    const double radius = 0.18 * dim;
    const double sigma_move = 0.10 * dim * style.size;
    const double two_pi = 6.283185307179586476925286766559;
    BlobTrack track;
    track.cx.resize(frames);
    track.cy.resize(frames);
    track.sigma.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        // progress in [-1, 1]; s(n-1-f) = -s(f) exactly, so reversing a
        // linear-motion class reproduces its opposite class bit for bit
        const double s =
            frames > 1 ? (2.0 * static_cast<double>(f) - static_cast<double>(frames - 1)) /
                             static_cast<double>(frames - 1)
                       : 0.0;
        const double u = (s + 1.0) / 2.0;
        double cx = cx0, cy = cy0, sigma = sigma_move;
        switch (c) {
            case GestureClass::move_left:
                cx = cx0 - amp * s;
                cy = cy0 + style.offset;
                break;
            case GestureClass::move_right:
                cx = cx0 + amp * s;
                cy = cy0 + style.offset;
                break;
            case GestureClass::move_up:
                cy = cy0 - amp * s;
                cx = cx0 + style.offset;
                break;
            case GestureClass::move_down:
                cy = cy0 + amp * s;
                cx = cx0 + style.offset;
                break;
            case GestureClass::rotate_cw: {
                const double theta = style.phase - two_pi * u * style.speed;
                cx = cx0 + radius * std::cos(theta);
                cy = cy0 + radius * std::sin(theta);
                break;
            }
            case GestureClass::rotate_ccw: {
                const double theta = style.phase + two_pi * u * style.speed;
                cx = cx0 + radius * std::cos(theta);
                cy = cy0 + radius * std::sin(theta);
                break;
            }
            case GestureClass::grow:
                cx = cx0 + style.offset;
                sigma = dim * (0.06 + 0.10 * u) * style.size;
                break;
            case GestureClass::shrink:
                cx = cx0 + style.offset;
                sigma = dim * (0.16 - 0.10 * u) * style.size;
                break;
        }
        track.cx[f] = cx;
        track.cy[f] = cy;
        track.sigma[f] = sigma;
    }
    return track;
}

Tensor render_track(const BlobTrack& track, std::size_t h, std::size_t w) {
    const std::size_t n = track.cx.size();
    Tensor out({n, h, w, 1});
    for (std::size_t f = 0; f < n; ++f) {
        const double cx = track.cx[f], cy = track.cy[f];
        const double inv2s2 = 1.0 / (2.0 * track.sigma[f] * track.sigma[f]);
        for (std::size_t y = 0; y < h; ++y) {
            const double dy = static_cast<double>(y) - cy;
            for (std::size_t x = 0; x < w; ++x) {
                const double dx = static_cast<double>(x) - cx;
                out[(f * h + y) * w + x] = std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
        }
    }
    return out;
}

std::vector<VideoSample> synth_gestures(std::size_t num_classes, std::size_t per_class,
                                        std::size_t frames, std::size_t h, std::size_t w,
                                        std::uint64_t seed) {
    if (num_classes == 0 || num_classes > kGestureClassCount) {
        throw ConfigError("synth: num_classes must lie in [1, " +
                          std::to_string(kGestureClassCount) + "], got " +
                          std::to_string(num_classes));
    }
    if (per_class == 0) throw ConfigError("synth: samples_per_class must be positive");
    const double dim = static_cast<double>(std::min(h, w));
    std::vector<VideoSample> out;
    out.reserve(num_classes * per_class);
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            Rng rng(derive_seed(seed, "synth/" + std::to_string(c) + "/" + std::to_string(i)));
            GestureStyle style;
            style.offset = (rng.uniform() - 0.5) * 0.08 * dim;
            style.speed = rng.uniform(0.9, 1.1);
            style.phase = rng.uniform(0.0, 6.283185307179586);
            style.size = rng.uniform(0.9, 1.1);
            const BlobTrack track =
                gesture_track(static_cast<GestureClass>(c), frames, h, w, style);
            Tensor rgb = render_track(track, h, w);
            Tensor depth(rgb.shape());
            for (std::size_t j = 0; j < rgb.size(); ++j) depth[j] = 1.0 - rgb[j];
            VideoSample s;
            char idx[24];
            std::snprintf(idx, sizeof idx, "%03zu", i);
            s.id = "g" + std::to_string(c) + "_" + idx;
            s.label = c;
            s.streams.emplace(Modality::rgb, std::move(rgb));
            s.streams.emplace(Modality::depth, std::move(depth));
            out.push_back(std::move(s));
        }
    }
    return out;
}

Tensor to_cthw(const Tensor& frames) {
    if (frames.rank() != 4) {
        throw ShapeError("to_cthw: expected frames [n x H x W x C], got " +
                         shape_str(frames.shape()));
    }
    const std::size_t n = frames.extent(0), h = frames.extent(1), w = frames.extent(2),
                      c = frames.extent(3);
    Tensor out({c, n, h, w});
    for (std::size_t f = 0; f < n; ++f)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double* src = frames.data() + ((f * h + y) * w + x) * c;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    out[((ch * n + f) * h + y) * w + x] = src[ch];
                }
            }
    return out;
}

// ---------------------------------------------------------------------------
// on-disk dataset

void write_dataset(const std::filesystem::path& dir, const std::vector<VideoSample>& samples,
                   const std::vector<std::string>& splits, std::size_t num_classes,
                   const std::vector<std::string>& class_names) {
    if (samples.size() != splits.size()) {
        throw InputError("write_dataset: one split per sample required");
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string());

    json manifest;
    manifest["num_classes"] = num_classes;
    manifest["class_names"] = class_names;
    json sample_list = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const VideoSample& s = samples[i];
        if (splits[i] != "train" && splits[i] != "test") {
            throw InputError("write_dataset: split must be train or test, got \"" + splits[i] +
                             "\"");
        }
        const std::filesystem::path sdir = dir / s.id;
        std::filesystem::create_directories(sdir, ec);
        if (ec) throw IoError("cannot create sample directory " + sdir.string());
        json meta;
        meta["sample_id"] = s.id;
        meta["label"] = s.label;
        meta["n"] = s.frame_count();
        std::vector<std::string> mods;
        for (const auto& [mod, frames] : s.streams) {
            save_tensor(sdir / (std::string(modality_name(mod)) + ".stcn"), frames);
            mods.push_back(modality_name(mod));
        }
        meta["modalities"] = mods;
        std::ofstream mf(sdir / "meta.json", std::ios::trunc);
        if (!mf) throw IoError("cannot write " + (sdir / "meta.json").string());
        mf << meta.dump(2) << "\n";

        json entry;
        entry["id"] = s.id;
        entry["label"] = s.label;
        entry["frames"] = s.frame_count();
        entry["split"] = splits[i];
        entry["modalities"] = mods;
        sample_list.push_back(entry);
    }
    manifest["samples"] = sample_list;
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open dataset manifest " + (dir / "manifest.json").string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed dataset manifest: " + std::string(e.what()));
    }
    DatasetManifest m;
    try {
        m.num_classes = j.at("num_classes").get<std::size_t>();
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        for (const json& e : j.at("samples")) {
            DatasetEntry entry;
            entry.id = e.at("id").get<std::string>();
            entry.label = e.at("label").get<std::size_t>();
            entry.frames = e.at("frames").get<std::size_t>();
            entry.split = e.at("split").get<std::string>();
            for (const json& mod : e.at("modalities")) {
                entry.modalities.push_back(modality_from_name(mod.get<std::string>()));
            }
            m.samples.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw IoError("dataset manifest misses a field: " + std::string(e.what()));
    }
    return m;
}

VideoSample load_sample(const std::filesystem::path& dir, const DatasetEntry& entry) {
    VideoSample s;
    s.id = entry.id;
    s.label = entry.label;
    for (Modality mod : entry.modalities) {
        s.streams.emplace(
            mod, load_tensor(dir / entry.id / (std::string(modality_name(mod)) + ".stcn")));
    }
    return s;
}

} // namespace stcn

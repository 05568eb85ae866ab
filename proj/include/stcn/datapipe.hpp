#pragma once

#include "stcn/feature.hpp"
#include "stcn/random.hpp"
#include "stcn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace stcn {

enum class Modality { rgb = 0, depth = 1, flow = 2 };
const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Raw input record: one frame volume per modality, all sharing the frame
// count and spatial extents; channel counts may differ per modality.
struct VideoSample {
    std::string id;
    std::size_t label = 0;
    std::map<Modality, Tensor> streams;  // each [n x H x W x C]
    std::size_t frame_count() const;
};

enum class SampleMode { deterministic, random };

// Frame indices (0-based, non-decreasing, length exactly k) that resample an
// n-frame video to k frames: sectioned selection when n > k, adjacent
// duplication when n < k, identity when n == k.
std::vector<std::size_t> temporal_indices(std::size_t n, std::size_t k, SampleMode mode,
                                          Rng& rng);

struct NormalizedVideo {
    Tensor frames;  // [k x H x W x C]
    std::vector<std::size_t> source_indices;
};
NormalizedVideo temporal_normalize(const Tensor& frames, std::size_t k, SampleMode mode,
                                   std::uint64_t seed);
// Applies one shared index selection across every modality of the sample.
VideoSample normalize_sample(const VideoSample& sample, std::size_t k, SampleMode mode,
                             std::uint64_t seed);

enum class AugmentOp { reverse, mirror, reverse_mirror };
const char* augment_op_name(AugmentOp op);

struct AugmentSpec {
    std::vector<AugmentOp> ops;
    // (op, label) -> label; empty means identity. A non-empty map must cover
    // every (op, label) pair it is asked for.
    std::map<std::pair<AugmentOp, std::size_t>, std::size_t> label_map;
};

Tensor reverse_frames(const Tensor& frames);
// Flips the width axis; horizontal flow components additionally change sign.
Tensor mirror_frames(const Tensor& frames, bool negate_horizontal);
// Emits the original plus one sample per requested op.
std::vector<VideoSample> augment(const VideoSample& sample, const AugmentSpec& spec);

Tensor resize_bilinear(const Tensor& frames, std::size_t out_h, std::size_t out_w);
// Aspect-preserving resize so the smaller spatial side equals target.
Tensor resize_smaller_side(const Tensor& frames, std::size_t target);
Tensor crop_frames(const Tensor& frames, std::size_t top, std::size_t left, std::size_t out_h,
                   std::size_t out_w);
// One seeded offset shared by all frames and modalities of the sample.
VideoSample random_crop_sample(const VideoSample& sample, std::size_t out_h, std::size_t out_w,
                               Rng& rng);

// Channel-axis concatenation in canonical order (rgb, depth, flow). All
// inputs must share T and label.
FeatureSequence fuse_modalities(const std::vector<FeatureSequence>& seqs);

// ---- synthetic gestures ----

enum class GestureClass {
    move_left = 0,
    move_right,
    move_up,
    move_down,
    rotate_cw,
    rotate_ccw,
    grow,
    shrink,
};
inline constexpr std::size_t kGestureClassCount = 8;
const char* gesture_name(GestureClass c);

struct BlobTrack {
    std::vector<double> cx, cy, sigma;  // per frame
};

// Explicit path parameters; fixtures pass these directly for exact pairs.
struct GestureStyle {
    double offset = 0.0;  // perpendicular shift, px
    double speed = 1.0;   // travel scale
    double phase = 0.0;   // rotation start angle
    double size = 1.0;    // blob size scale
};

BlobTrack gesture_track(GestureClass c, std::size_t frames, std::size_t h, std::size_t w,
                        const GestureStyle& style);
Tensor render_track(const BlobTrack& track, std::size_t h, std::size_t w);

// Deterministic-from-seed dataset of Gaussian-blob gesture videos with two
// modalities (rgb intensity and inverted-intensity depth).
std::vector<VideoSample> synth_gestures(std::size_t num_classes, std::size_t per_class,
                                        std::size_t frames, std::size_t h, std::size_t w,
                                        std::uint64_t seed);

// Layout conversion for the backbone: [n x H x W x C] -> [C x n x H x W].
Tensor to_cthw(const Tensor& frames);

// ---- on-disk dataset ----

struct DatasetEntry {
    std::string id;
    std::size_t label = 0;
    std::size_t frames = 0;
    std::string split;  // "train" or "test"
    std::vector<Modality> modalities;
};

struct DatasetManifest {
    std::size_t num_classes = 0;
    std::vector<std::string> class_names;
    std::vector<DatasetEntry> samples;
};

void write_dataset(const std::filesystem::path& dir, const std::vector<VideoSample>& samples,
                   const std::vector<std::string>& splits, std::size_t num_classes,
                   const std::vector<std::string>& class_names);
DatasetManifest read_manifest(const std::filesystem::path& dir);
VideoSample load_sample(const std::filesystem::path& dir, const DatasetEntry& entry);

} // namespace stcn

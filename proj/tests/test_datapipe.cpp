#include "doctest.h"

#include "stcn/datapipe.hpp"
#include "stcn/random.hpp"

#include <cmath>
#include <filesystem>

using namespace stcn;

namespace {

Tensor random_frames(std::size_t n, std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
    Tensor t({n, h, w, c});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
}

VideoSample make_sample(std::size_t n, Rng& rng, std::size_t label = 0) {
    VideoSample s;
    s.id = "s";
    s.label = label;
    s.streams.emplace(Modality::rgb, random_frames(n, 6, 6, 1, rng));
    s.streams.emplace(Modality::depth, random_frames(n, 6, 6, 1, rng));
    return s;
}

} // namespace

TEST_CASE("temporal indices: identity when n == k") {
    Rng rng(1);
    const auto idx = temporal_indices(32, 32, SampleMode::deterministic, rng);
    REQUIRE(idx.size() == 32);
    for (std::size_t i = 0; i < 32; ++i) CHECK(idx[i] == i);
}

TEST_CASE("temporal indices: n=64, k=32 deterministic picks section lower-midpoints") {
    Rng rng(1);
    const auto idx = temporal_indices(64, 32, SampleMode::deterministic, rng);
    REQUIRE(idx.size() == 32);
    for (std::size_t i = 0; i < 32; ++i) CHECK(idx[i] == 2 * i);  // 1-based [1,3,5,...,63]
}

TEST_CASE("temporal indices: n=20, k=32 duplicates 12 frames in place") {
    Rng rng(1);
    const auto idx = temporal_indices(20, 32, SampleMode::deterministic, rng);
    REQUIRE(idx.size() == 32);
    std::size_t dups = 0;
    for (std::size_t i = 1; i < idx.size(); ++i) {
        CHECK(idx[i] >= idx[i - 1]);
        if (idx[i] == idx[i - 1]) ++dups;
    }
    CHECK(dups == 12);
}

TEST_CASE("temporal indices: full property sweep over n, k in [1, 64]") {
    for (std::size_t n = 1; n <= 64; ++n) {
        for (std::size_t k = 1; k <= 64; ++k) {
            for (SampleMode mode : {SampleMode::deterministic, SampleMode::random}) {
                Rng rng(derive_seed(5, std::to_string(n) + "/" + std::to_string(k)));
                const auto idx = temporal_indices(n, k, mode, rng);
                REQUIRE(idx.size() == k);
                CHECK(idx.front() < n);
                for (std::size_t i = 1; i < idx.size(); ++i) {
                    CHECK(idx[i] >= idx[i - 1]);  // non-decreasing
                    CHECK(idx[i] < n);
                }
            }
        }
    }
}

TEST_CASE("temporal indices: deterministic mode ignores the seed, random mode is seeded") {
    Rng a(1), b(99);
    CHECK(temporal_indices(50, 20, SampleMode::deterministic, a) ==
          temporal_indices(50, 20, SampleMode::deterministic, b));
    Rng c(7), d(7), e(8);
    const auto r1 = temporal_indices(50, 20, SampleMode::random, c);
    const auto r2 = temporal_indices(50, 20, SampleMode::random, d);
    const auto r3 = temporal_indices(50, 20, SampleMode::random, e);
    CHECK(r1 == r2);
    CHECK(r1 != r3);  // overwhelmingly likely for 20 sections of size 2-3
}

TEST_CASE("temporal_normalize rejects empty videos and records provenance") {
    Rng rng(2);
    CHECK_THROWS_AS(temporal_indices(0, 8, SampleMode::deterministic, rng), InputError);
    VideoSample s = make_sample(10, rng);
    VideoSample norm = normalize_sample(s, 4, SampleMode::deterministic, 0);
    CHECK(norm.frame_count() == 4);
    CHECK(norm.streams.size() == 2);
    NormalizedVideo nv =
        temporal_normalize(s.streams.at(Modality::rgb), 4, SampleMode::deterministic, 0);
    CHECK(nv.frames.extent(0) == 4);
    CHECK(nv.source_indices.size() == 4);
    // shared selection across modalities
    CHECK(norm.streams.at(Modality::rgb).values() == nv.frames.values());
}

TEST_CASE("reverse and mirror are involutions and commute") {
    Rng rng(3);
    Tensor frames = random_frames(5, 4, 6, 2, rng);
    CHECK(reverse_frames(reverse_frames(frames)).values() == frames.values());
    CHECK(mirror_frames(mirror_frames(frames, false), false).values() == frames.values());
    CHECK(mirror_frames(reverse_frames(frames), false).values() ==
          reverse_frames(mirror_frames(frames, false)).values());
    // flow: mirroring twice restores the negated horizontal channel too
    CHECK(mirror_frames(mirror_frames(frames, true), true).values() == frames.values());
}

TEST_CASE("mirror negates the horizontal flow channel") {
    Tensor flow({1, 1, 2, 2}, {1.0, 10.0, 2.0, 20.0});  // [x, y] per pixel
    Tensor m = mirror_frames(flow, true);
    CHECK(m.values() == std::vector<double>{-2.0, 20.0, -1.0, 10.0});
}

TEST_CASE("augment emits original plus one sample per op") {
    Rng rng(4);
    VideoSample s = make_sample(6, rng, 3);
    AugmentSpec spec;
    spec.ops = {AugmentOp::reverse, AugmentOp::mirror, AugmentOp::reverse_mirror};
    const auto out = augment(s, spec);
    REQUIRE(out.size() == 4);
    CHECK(out[0].id == "s");
    CHECK(out[1].id == "s_rev");
    CHECK(out[2].id == "s_mir");
    CHECK(out[3].id == "s_revmir");
    for (const VideoSample& v : out) CHECK(v.label == 3);
    CHECK(out[1].streams.at(Modality::rgb).values() ==
          reverse_frames(s.streams.at(Modality::rgb)).values());
    // reverse+mirror composes both
    CHECK(out[3].streams.at(Modality::rgb).values() ==
          reverse_frames(mirror_frames(s.streams.at(Modality::rgb), false)).values());
}

TEST_CASE("augment label_map remaps and rejects missing pairs") {
    Rng rng(5);
    VideoSample s = make_sample(4, rng, 0);
    AugmentSpec spec;
    spec.ops = {AugmentOp::reverse};
    spec.label_map[{AugmentOp::reverse, 0}] = 1;
    auto out = augment(s, spec);
    CHECK(out[0].label == 0);
    CHECK(out[1].label == 1);
    VideoSample other = make_sample(4, rng, 2);
    CHECK_THROWS_AS(augment(other, spec), ConfigError);
}

TEST_CASE("augmentation commutes with deterministic normalization when n == k") {
    Rng rng(6);
    VideoSample s = make_sample(8, rng, 1);
    AugmentSpec spec;
    spec.ops = {AugmentOp::reverse, AugmentOp::mirror};
    auto aug_then_norm = augment(s, spec);
    for (VideoSample& v : aug_then_norm) v = normalize_sample(v, 8, SampleMode::deterministic, 0);
    VideoSample norm = normalize_sample(s, 8, SampleMode::deterministic, 0);
    auto norm_then_aug = augment(norm, spec);
    REQUIRE(aug_then_norm.size() == norm_then_aug.size());
    for (std::size_t i = 0; i < aug_then_norm.size(); ++i) {
        CHECK(aug_then_norm[i].streams.at(Modality::rgb).values() ==
              norm_then_aug[i].streams.at(Modality::rgb).values());
    }
}

TEST_CASE("bilinear resize: identity at the same size, constants stay constant") {
    Rng rng(7);
    Tensor frames = random_frames(3, 5, 7, 2, rng);
    Tensor same = resize_bilinear(frames, 5, 7);
    CHECK(same.values() == frames.values());

    Tensor flat({2, 4, 4, 1}, 0.625);
    Tensor up = resize_bilinear(flat, 9, 6);
    for (std::size_t i = 0; i < up.size(); ++i) {
        CHECK(up[i] == doctest::Approx(0.625).epsilon(1e-12));
    }
}

TEST_CASE("smaller-side resize preserves aspect ratio") {
    Rng rng(8);
    Tensor frames = random_frames(2, 8, 16, 1, rng);
    Tensor out = resize_smaller_side(frames, 4);
    CHECK(out.extent(1) == 4);
    CHECK(out.extent(2) == 8);
    Tensor tall = random_frames(2, 16, 8, 1, rng);
    Tensor out2 = resize_smaller_side(tall, 4);
    CHECK(out2.extent(1) == 8);
    CHECK(out2.extent(2) == 4);
}

TEST_CASE("crop matches the index-slice oracle and validates bounds") {
    Rng rng(9);
    Tensor frames = random_frames(2, 6, 7, 2, rng);
    Tensor c = crop_frames(frames, 1, 2, 3, 4);
    for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 4; ++x)
                for (std::size_t ch = 0; ch < 2; ++ch)
                    CHECK(c[((f * 3 + y) * 4 + x) * 2 + ch] ==
                          frames[((f * 6 + (y + 1)) * 7 + (x + 2)) * 2 + ch]);
    CHECK_THROWS_AS(crop_frames(frames, 4, 0, 3, 4), InputError);
    VideoSample s = make_sample(4, rng);
    CHECK_THROWS_AS(random_crop_sample(s, 9, 9, rng), InputError);
}

TEST_CASE("random crop uses one offset for all frames and modalities") {
    Rng rng(10);
    VideoSample s = make_sample(4, rng);
    Rng crop_rng(77);
    VideoSample c = random_crop_sample(s, 3, 3, crop_rng);
    // find the offset by matching the rgb stream, then demand depth matches it
    const Tensor& rgb = s.streams.at(Modality::rgb);
    const Tensor& crgb = c.streams.at(Modality::rgb);
    bool found = false;
    for (std::size_t top = 0; top <= 3 && !found; ++top) {
        for (std::size_t left = 0; left <= 3 && !found; ++left) {
            if (crop_frames(rgb, top, left, 3, 3).values() == crgb.values()) {
                found = true;
                CHECK(crop_frames(s.streams.at(Modality::depth), top, left, 3, 3).values() ==
                      c.streams.at(Modality::depth).values());
            }
        }
    }
    CHECK(found);
}

TEST_CASE("fusion: identity for one modality, canonical order, slice recovery") {
    Rng rng(11);
    FeatureSequence rgb;
    rgb.values = Tensor({4, 3});
    rgb.label = 2;
    rgb.modality = "rgb";
    for (std::size_t i = 0; i < rgb.values.size(); ++i) rgb.values[i] = rng.uniform(0.0, 1.0);
    FeatureSequence depth;
    depth.values = Tensor({4, 2});
    depth.label = 2;
    depth.modality = "depth";
    for (std::size_t i = 0; i < depth.values.size(); ++i) depth.values[i] = rng.uniform(0.0, 1.0);

    FeatureSequence solo = fuse_modalities({rgb});
    CHECK(solo.values.values() == rgb.values.values());
    CHECK(solo.modality == "rgb");

    // order in the input list must not matter
    FeatureSequence f1 = fuse_modalities({rgb, depth});
    FeatureSequence f2 = fuse_modalities({depth, rgb});
    CHECK(f1.values.values() == f2.values.values());
    CHECK(f1.modality == "rgb+depth");
    REQUIRE(f1.values.shape() == Shape{4, 5});
    // slices recover the inputs exactly
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t j = 0; j < 3; ++j) CHECK(f1.values[t * 5 + j] == rgb.values[t * 3 + j]);
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(f1.values[t * 5 + 3 + j] == depth.values[t * 2 + j]);
    }
    CHECK(f1.label == 2);

    FeatureSequence bad_t;
    bad_t.values = Tensor({5, 2});
    bad_t.label = 2;
    bad_t.modality = "depth";
    CHECK_THROWS_AS(fuse_modalities({rgb, bad_t}), InputError);
    FeatureSequence bad_label;
    bad_label.values = Tensor({4, 2});
    bad_label.label = 3;
    bad_label.modality = "depth";
    CHECK_THROWS_AS(fuse_modalities({rgb, bad_label}), InputError);
}

TEST_CASE("synthetic gestures are deterministic from the seed") {
    const auto a = synth_gestures(4, 2, 6, 12, 12, 99);
    const auto b = synth_gestures(4, 2, 6, 12, 12, 99);
    REQUIRE(a.size() == 8);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].label == b[i].label);
        CHECK(a[i].streams.at(Modality::rgb).values() ==
              b[i].streams.at(Modality::rgb).values());
    }
    const auto c = synth_gestures(4, 2, 6, 12, 12, 100);
    CHECK(a[0].streams.at(Modality::rgb).values() != c[0].streams.at(Modality::rgb).values());
    CHECK_THROWS_AS(synth_gestures(9, 2, 6, 12, 12, 1), ConfigError);
    CHECK_THROWS_AS(synth_gestures(0, 2, 6, 12, 12, 1), ConfigError);
}

TEST_CASE("synthetic depth is the inverted intensity") {
    const auto data = synth_gestures(2, 1, 4, 10, 10, 5);
    for (const VideoSample& s : data) {
        const Tensor& rgb = s.streams.at(Modality::rgb);
        const Tensor& depth = s.streams.at(Modality::depth);
        for (std::size_t i = 0; i < rgb.size(); ++i) {
            CHECK(depth[i] == doctest::Approx(1.0 - rgb[i]).epsilon(1e-15));
        }
    }
}

TEST_CASE("reversed move-left equals move-right with the same style") {
    GestureStyle style;
    style.offset = 0.8;
    style.speed = 1.05;
    const std::size_t n = 8, hw = 16;
    Tensor left = render_track(gesture_track(GestureClass::move_left, n, hw, hw, style), hw, hw);
    Tensor right = render_track(gesture_track(GestureClass::move_right, n, hw, hw, style), hw, hw);
    // the track parameterization makes time reversal exact
    CHECK(reverse_frames(left).values() == right.values());
    // mirroring swaps the directions up to rounding in the center arithmetic
    Tensor mirrored = mirror_frames(left, false);
    for (std::size_t i = 0; i < mirrored.size(); ++i) {
        CHECK(mirrored[i] == doctest::Approx(right[i]).epsilon(1e-12));
    }
}

TEST_CASE("reversing a synthetic move-left sample relabels it move-right") {
    // move_left is class 0, move_right class 1 in the archetype order
    auto data = synth_gestures(2, 1, 6, 16, 16, 3);
    AugmentSpec spec;
    spec.ops = {AugmentOp::reverse};
    spec.label_map[{AugmentOp::reverse, 0}] = 1;
    spec.label_map[{AugmentOp::reverse, 1}] = 0;
    const auto out = augment(data[0], spec);
    REQUIRE(out.size() == 2);
    CHECK(out[1].label == 1);
    // and the reversed frames really are a rightward trajectory: the
    // intensity centroid must move to larger x over time
    const Tensor& frames = out[1].streams.at(Modality::rgb);
    auto centroid_x = [&](std::size_t f) {
        double mass = 0.0, mx = 0.0;
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const double v = frames[(f * 16 + y) * 16 + x];
                mass += v;
                mx += v * static_cast<double>(x);
            }
        return mx / mass;
    };
    CHECK(centroid_x(5) > centroid_x(0) + 2.0);
}

TEST_CASE("blob centroid follows the analytic track within half a pixel") {
    Rng rng(12);
    for (std::size_t cls = 0; cls < kGestureClassCount; ++cls) {
        GestureStyle style;
        style.offset = rng.uniform(-0.6, 0.6);
        style.speed = rng.uniform(0.95, 1.05);
        style.phase = rng.uniform(0.0, 6.28);
        const std::size_t n = 6, hw = 24;
        const BlobTrack track =
            gesture_track(static_cast<GestureClass>(cls), n, hw, hw, style);
        const Tensor video = render_track(track, hw, hw);
        for (std::size_t f = 0; f < n; ++f) {
            double mass = 0.0, mx = 0.0, my = 0.0;
            for (std::size_t y = 0; y < hw; ++y)
                for (std::size_t x = 0; x < hw; ++x) {
                    const double v = video[(f * hw + y) * hw + x];
                    mass += v;
                    mx += v * static_cast<double>(x);
                    my += v * static_cast<double>(y);
                }
            CHECK(std::fabs(mx / mass - track.cx[f]) < 0.5);
            CHECK(std::fabs(my / mass - track.cy[f]) < 0.5);
        }
    }
}

TEST_CASE("dataset round-trips through the on-disk layout") {
    const auto dir = std::filesystem::temp_directory_path() / "stcn_test_dataset";
    std::filesystem::remove_all(dir);
    const auto samples = synth_gestures(2, 3, 4, 8, 8, 7);
    std::vector<std::string> splits = {"train", "train", "test", "train", "train", "test"};
    std::vector<std::string> names = {"move_left", "move_right"};
    write_dataset(dir, samples, splits, 2, names);

    DatasetManifest m = read_manifest(dir);
    CHECK(m.num_classes == 2);
    CHECK(m.class_names == names);
    REQUIRE(m.samples.size() == 6);
    std::size_t train_count = 0;
    for (const DatasetEntry& e : m.samples) {
        if (e.split == "train") ++train_count;
        VideoSample s = load_sample(dir, e);
        CHECK(s.id == e.id);
        CHECK(s.frame_count() == 4);
        CHECK(s.streams.size() == 2);
    }
    CHECK(train_count == 4);
    // loaded bytes match the originals
    VideoSample round = load_sample(dir, m.samples[0]);
    CHECK(round.streams.at(Modality::rgb).values() ==
          samples[0].streams.at(Modality::rgb).values());
    std::filesystem::remove_all(dir);
}

TEST_CASE("to_cthw permutes frame volumes for the backbone") {
    Rng rng(13);
    Tensor frames = random_frames(3, 2, 4, 2, rng);
    Tensor v = to_cthw(frames);
    REQUIRE(v.shape() == Shape{2, 3, 2, 4});
    for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t x = 0; x < 4; ++x)
                for (std::size_t ch = 0; ch < 2; ++ch)
                    CHECK(v[((ch * 3 + f) * 2 + y) * 4 + x] ==
                          frames[((f * 2 + y) * 4 + x) * 2 + ch]);
}

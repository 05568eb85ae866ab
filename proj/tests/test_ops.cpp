#include "doctest.h"

#include "oracles.hpp"
#include "stcn/graph.hpp"
#include "stcn/random.hpp"

#include <cmath>

using namespace stcn;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

} // namespace

TEST_CASE("matmul: identity and hand-computed products") {
    Graph g;
    Var eye = g.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    Var a = g.leaf(Tensor({2, 2}, {3.5, -1, 2, 0.25}));
    CHECK(matmul(eye, a).value().values() == a.value().values());

    Var m = g.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    Var v = g.leaf(Tensor({2, 1}, {1, 1}));
    const Tensor& prod = matmul(m, v).value();
    CHECK(prod.shape() == Shape{2, 1});
    CHECK(prod[0] == 3.0);
    CHECK(prod[1] == 7.0);
}

TEST_CASE("matmul: shape errors name both operands") {
    Graph g;
    Var a = g.leaf(Tensor({2, 3}, 1.0));
    Var b = g.leaf(Tensor({4, 5}, 1.0));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("matmul matches the triple-loop oracle on random shapes") {
    Rng rng(101);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Graph g;
        const Tensor& got = matmul(g.leaf(a), g.leaf(b)).value();
        CHECK(oracle::max_abs_diff(got, oracle::matmul(a, b)) < 1e-12);
    }
}

TEST_CASE("conv3d: 1x1x1 unit kernel is the identity") {
    Rng rng(7);
    Tensor x = random_tensor({1, 1, 3, 4, 5}, rng);
    Graph g;
    Var k = g.leaf(Tensor({1, 1, 1, 1, 1}, {1.0}));
    const Tensor& y = conv3d(g.leaf(x), k, {1, 1, 1}, {0, 0, 0}).value();
    CHECK(y.shape() == x.shape());
    CHECK(y.values() == x.values());
}

TEST_CASE("conv3d: all-ones 3x3x3 kernel sums 27 ones") {
    Graph g;
    Var x = g.leaf(Tensor({1, 1, 4, 4, 4}, 1.0));
    Var k = g.leaf(Tensor({1, 1, 3, 3, 3}, 1.0));
    const Tensor& y = conv3d(x, k, {1, 1, 1}, {0, 0, 0}).value();
    CHECK(y.shape() == Shape{1, 1, 2, 2, 2});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(27.0));
}

TEST_CASE("conv3d matches the seven-loop oracle on random instances") {
    Rng rng(202);
    int done = 0;
    while (done < 100) {
        const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), co = 1 + rng.below(3);
        const std::size_t t = 1 + rng.below(6), h = 1 + rng.below(6), w = 1 + rng.below(6);
        const std::size_t kt = 1 + rng.below(t), kh = 1 + rng.below(h), kw = 1 + rng.below(w);
        const std::size_t st = 1 + rng.below(2), sh = 1 + rng.below(2), sw = 1 + rng.below(2);
        const std::size_t pt = rng.below(2), ph = rng.below(2), pw = rng.below(2);
        Tensor x = random_tensor({n, c, t, h, w}, rng);
        Tensor k = random_tensor({co, c, kt, kh, kw}, rng);
        Graph g;
        const Tensor& got = conv3d(g.leaf(x), g.leaf(k), {st, sh, sw}, {pt, ph, pw}).value();
        const Tensor want = oracle::conv3d(x, k, st, sh, sw, pt, ph, pw);
        CHECK(got.shape() == want.shape());
        CHECK(oracle::max_abs_diff(got, want) < 1e-9);
        ++done;
    }
}

TEST_CASE("conv3d with replicated temporal padding preserves constants in time") {
    Rng rng(909);
    // constant over t, varying spatially: every output step must be equal
    Tensor x({1, 1, 6, 5, 5});
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t z = 0; z < 5; ++z) {
            const double v = rng.uniform(-1.0, 1.0);
            for (std::size_t tt = 0; tt < 6; ++tt) x[(tt * 5 + y) * 5 + z] = v;
        }
    Tensor k = random_tensor({2, 1, 5, 3, 3}, rng);
    Graph g;
    const Tensor& out =
        conv3d(g.leaf(x), g.leaf(k), {1, 1, 1}, {2, 1, 1}, TemporalPad::replicate).value();
    const std::size_t co = 2, ot = 6, oh = 5, ow = 5;
    for (std::size_t oc = 0; oc < co; ++oc)
        for (std::size_t tt = 1; tt < ot; ++tt)
            for (std::size_t i = 0; i < oh * ow; ++i)
                CHECK(out[(oc * ot + tt) * oh * ow + i] == out[oc * ot * oh * ow + i]);

    // and it still matches the clamp-aware oracle on random data
    for (int rep = 0; rep < 30; ++rep) {
        Tensor xr = random_tensor({1, 2, 4, 4, 4}, rng);
        Tensor kr = random_tensor({2, 2, 3, 3, 3}, rng);
        Graph gg;
        const Tensor& got =
            conv3d(gg.leaf(xr), gg.leaf(kr), {1, 1, 1}, {1, 1, 1}, TemporalPad::replicate)
                .value();
        const Tensor want = oracle::conv3d(xr, kr, 1, 1, 1, 1, 1, 1, true);
        CHECK(oracle::max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv3d rejects impossible configurations") {
    Graph g;
    Var x = g.leaf(Tensor({1, 1, 2, 2, 2}, 1.0));
    Var k = g.leaf(Tensor({1, 1, 3, 3, 3}, 1.0));
    CHECK_THROWS_AS(conv3d(x, k, {1, 1, 1}, {0, 0, 0}), ConfigError);
    Var k2 = g.leaf(Tensor({1, 2, 1, 1, 1}, 1.0));
    CHECK_THROWS_AS(conv3d(x, k2, {1, 1, 1}, {0, 0, 0}), ShapeError);
}

TEST_CASE("dilated causal conv1d: unit tap is the identity") {
    Rng rng(5);
    Tensor x = random_tensor({1, 1, 8}, rng);
    for (std::size_t d : {1, 2, 4}) {
        Graph g;
        Var k = g.leaf(Tensor({1, 1, 2}, {1.0, 0.0}));
        const Tensor& y = dilated_causal_conv1d(g.leaf(x), k, d).value();
        CHECK(y.values() == x.values());
    }
}

TEST_CASE("dilated causal conv1d: pure delay shifts right") {
    Tensor x({1, 1, 6}, {1, 2, 3, 4, 5, 6});
    Graph g;
    Var k = g.leaf(Tensor({1, 1, 2}, {0.0, 1.0}));
    const Tensor& y = dilated_causal_conv1d(g.leaf(x), k, 2).value();
    CHECK(y.values() == std::vector<double>{0, 0, 1, 2, 3, 4});
}

TEST_CASE("dilated causal conv1d matches the index-enumeration oracle") {
    Rng rng(303);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), co = 1 + rng.below(3);
        const std::size_t t = 1 + rng.below(10);
        const std::size_t kf = 1 + rng.below(3);
        const std::size_t d = 1 + rng.below(4);
        Tensor x = random_tensor({n, c, t}, rng);
        Tensor k = random_tensor({co, c, kf}, rng);
        Graph g;
        const Tensor& got = dilated_causal_conv1d(g.leaf(x), g.leaf(k), d).value();
        const Tensor want = oracle::causal_conv1d(x, k, d);
        CHECK(got.shape() == want.shape());
        CHECK(oracle::max_abs_diff(got, want) < 1e-12);
    }
    // the d=4, kF=2 instance used elsewhere in the stack
    Tensor x = random_tensor({1, 2, 9}, rng);
    Tensor k = random_tensor({2, 2, 2}, rng);
    Graph g;
    CHECK(oracle::max_abs_diff(dilated_causal_conv1d(g.leaf(x), g.leaf(k), 4).value(),
                               oracle::causal_conv1d(x, k, 4)) < 1e-12);
}

TEST_CASE("pool3d: constant input stays constant under average pooling") {
    Graph g;
    Var x = g.leaf(Tensor({1, 2, 4, 4, 4}, 3.25));
    const Tensor& y =
        pool3d(x, PoolKind::average, {2, 2, 2}, {2, 2, 2}, {0, 0, 0}, false).value();
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 3.25);
    // ceil mode with partial windows still averages over the surviving cells
    Var x2 = g.leaf(Tensor({1, 1, 1, 5, 5}, 2.5));
    const Tensor& y2 =
        pool3d(x2, PoolKind::average, {1, 2, 2}, {1, 2, 2}, {0, 0, 0}, true).value();
    CHECK(y2.shape() == Shape{1, 1, 1, 3, 3});
    for (std::size_t i = 0; i < y2.size(); ++i) CHECK(y2[i] == 2.5);
}

TEST_CASE("pool3d: 2x2 spatial max over [[1,2],[3,4]] is 4") {
    Graph g;
    Var x = g.leaf(Tensor({1, 1, 1, 2, 2}, {1, 2, 3, 4}));
    const Tensor& y = pool3d(x, PoolKind::max, {1, 2, 2}, {1, 2, 2}).value();
    CHECK(y.size() == 1);
    CHECK(y[0] == 4.0);
}

TEST_CASE("pool3d matches the naive oracle on random volumes") {
    Rng rng(404);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3);
        const std::size_t t = 1 + rng.below(6), h = 1 + rng.below(6), w = 1 + rng.below(6);
        const std::size_t wt = 1 + rng.below(t), wh = 1 + rng.below(h), ww = 1 + rng.below(w);
        const std::size_t st = 1 + rng.below(3), sh = 1 + rng.below(3), sw = 1 + rng.below(3);
        const bool ceil_mode = rng.below(2) == 1;
        const bool max_kind = rng.below(2) == 1;
        Tensor x = random_tensor({n, c, t, h, w}, rng);
        Graph g;
        const Tensor& got = pool3d(g.leaf(x), max_kind ? PoolKind::max : PoolKind::average,
                                   {wt, wh, ww}, {st, sh, sw}, {0, 0, 0}, ceil_mode)
                                .value();
        const Tensor want =
            oracle::pool3d(x, max_kind, wt, wh, ww, st, sh, sw, 0, 0, 0, ceil_mode);
        CHECK(got.shape() == want.shape());
        CHECK(oracle::max_abs_diff(got, want) == 0.0);
    }
}

TEST_CASE("pool3d rejects windows that never fit") {
    Graph g;
    Var x = g.leaf(Tensor({1, 1, 2, 2, 2}, 1.0));
    CHECK_THROWS_AS(pool3d(x, PoolKind::max, {3, 1, 1}, {1, 1, 1}), ConfigError);
}

TEST_CASE("softmax: equal logits give the uniform distribution") {
    Graph g;
    Var x = g.leaf(Tensor({1, 4}, 0.7));
    const Tensor& y = softmax(x, 1).value();
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("softmax sums to one and stays strictly positive") {
    Rng rng(505);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor x = random_tensor({3, 5}, rng, -30.0, 30.0);
        Graph g;
        const Tensor& y = softmax(g.leaf(x), 1).value();
        for (std::size_t r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(y[r * 5 + j] > 0.0);
                sum += y[r * 5 + j];
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
        // argmax invariance under adding a constant to all logits
        Tensor shifted = x;
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 17.5;
        Graph g2;
        const Tensor& y2 = softmax(g2.leaf(shifted), 1).value();
        for (std::size_t r = 0; r < 3; ++r) {
            std::size_t a = 0, b = 0;
            for (std::size_t j = 1; j < 5; ++j) {
                if (y[r * 5 + j] > y[r * 5 + a]) a = j;
                if (y2[r * 5 + j] > y2[r * 5 + b]) b = j;
            }
            CHECK(a == b);
        }
    }
}

TEST_CASE("sigmoid and relu basics") {
    Graph g;
    Var x = g.leaf(Tensor({5}, {-2.0, -0.5, 0.0, 0.5, 2.0}));
    const Tensor& s = sigmoid(x).value();
    CHECK(s[2] == 0.5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(s[i] > 0.0);
        CHECK(s[i] < 1.0);
    }
    const Tensor& r = relu(x).value();
    CHECK(r.values() == std::vector<double>{0, 0, 0, 0.5, 2.0});
}

TEST_CASE("cross entropy: value and label validation") {
    Graph g;
    Var p = g.leaf(Tensor({1, 4}, 0.25));
    Var ce = cross_entropy(p, {2});
    CHECK(ce.value().item() == doctest::Approx(std::log(4.0)));
    CHECK(ce.value().item() >= 0.0);
    CHECK_THROWS_AS(cross_entropy(p, {4}), InputError);
    CHECK_THROWS_AS(cross_entropy(p, std::vector<std::size_t>{0, 1}), InputError);
}

TEST_CASE("batch norm: normalized batch passes through, constant batch maps to beta") {
    // zero-mean unit-variance column
    Tensor x({4, 1}, {-1.0, 1.0, -1.0, 1.0});
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += x[i] / 4.0;
    for (std::size_t i = 0; i < 4; ++i) var += (x[i] - mean) * (x[i] - mean) / 4.0;
    Graph g;
    Var gamma = g.leaf(Tensor({1}, 1.0));
    Var beta = g.leaf(Tensor({1}, 0.0));
    RunningStats stats = RunningStats::init(1);
    Var y = batch_norm(g.leaf(x), gamma, beta, 1, NormMode::train, &stats, false);
    for (std::size_t i = 0; i < 4; ++i) {
        const double want = (x[i] - mean) / std::sqrt(var + 1e-5);
        CHECK(y.value()[i] == doctest::Approx(want).epsilon(1e-12));
        CHECK(std::fabs(y.value()[i] - x[i]) < 1e-4);  // identity within the eps effect
    }

    Graph g2;
    Var beta2 = g2.leaf(Tensor({1}, 0.75));
    RunningStats stats2 = RunningStats::init(1);
    Var yc = batch_norm(g2.leaf(Tensor({4, 1}, 3.0)), g2.leaf(Tensor({1}, 1.0)), beta2, 1,
                        NormMode::train, &stats2, false);
    for (std::size_t i = 0; i < 4; ++i) CHECK(yc.value()[i] == doctest::Approx(0.75));
}

TEST_CASE("batch norm: running statistics update and drive eval mode") {
    Tensor x({4, 1}, {1.0, 2.0, 3.0, 4.0});  // mean 2.5, biased var 1.25
    RunningStats stats = RunningStats::init(1);
    {
        Graph g;
        batch_norm(g.leaf(x), g.leaf(Tensor({1}, 1.0)), g.leaf(Tensor({1}, 0.0)), 1,
                   NormMode::train, &stats, true, 0.9, 1e-5);
    }
    CHECK(stats.mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.5));
    CHECK(stats.var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.25));
    {
        Graph g;
        Var y = batch_norm(g.leaf(Tensor({2, 1}, {0.25, 0.25})), g.leaf(Tensor({1}, 1.0)),
                           g.leaf(Tensor({1}, 0.0)), 1, NormMode::eval, &stats, false, 0.9, 1e-5);
        const double want = (0.25 - stats.mean[0]) / std::sqrt(stats.var[0] + 1e-5);
        CHECK(y.value()[0] == doctest::Approx(want));
        CHECK(y.value()[1] == doctest::Approx(want));
    }
}

TEST_CASE("ltap: window enumeration for k=32, T=8") {
    // row r of the input holds the 1-based frame number in every channel
    const std::size_t k = 32, c = 2;
    Tensor f({k, c});
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < c; ++j) f[r * c + j] = static_cast<double>(r + 1);
    Tensor y = ltap(f, 8);
    REQUIRE(y.shape() == Shape{8, c});
    // window t=1 covers frames [1..7] -> mean 4; t=2 covers [4..11] -> 7.5
    CHECK(y[0] == doctest::Approx(4.0));
    CHECK(y[1 * c] == doctest::Approx(7.5));
    // t=8 covers [28..32] -> mean 30
    CHECK(y[7 * c] == doctest::Approx(30.0));
}

TEST_CASE("ltap: T = k gives two-frame means clipped at the ends") {
    const std::size_t k = 5;
    Tensor f({k, 1}, {10, 20, 30, 40, 50});
    Tensor y = ltap(f, k);  // w = 1, window [t-1, t]
    CHECK(y[0] == doctest::Approx(10.0));  // clipped to frame 1 alone
    CHECK(y[1] == doctest::Approx(15.0));
    CHECK(y[2] == doctest::Approx(25.0));
    CHECK(y[3] == doctest::Approx(35.0));
    CHECK(y[4] == doctest::Approx(45.0));
}

TEST_CASE("ltap: constants pass through, divisibility enforced, oracle agreement") {
    Tensor f({12, 3}, 2.5);
    Tensor y = ltap(f, 4);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(2.5));
    CHECK_THROWS_AS(ltap(f, 5), ConfigError);

    Rng rng(606);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t T = 1 + rng.below(8);
        const std::size_t mult = 1 + rng.below(6);
        const std::size_t kk = T * mult;
        const std::size_t c = 1 + rng.below(4);
        Tensor x = random_tensor({kk, c}, rng);
        CHECK(oracle::max_abs_diff(ltap(x, T), oracle::ltap(x, T)) < 1e-12);
    }
}

TEST_CASE("ltap is a linear operator") {
    Rng rng(707);
    Tensor a = random_tensor({12, 2}, rng);
    Tensor b = random_tensor({12, 2}, rng);
    const double ca = 1.75, cb = -0.5;
    Tensor combo({12, 2});
    for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = ca * a[i] + cb * b[i];
    Tensor la = ltap(a, 4), lb = ltap(b, 4), lc = ltap(combo, 4);
    for (std::size_t i = 0; i < lc.size(); ++i) {
        CHECK(lc[i] == doctest::Approx(ca * la[i] + cb * lb[i]).epsilon(1e-12));
    }
}

TEST_CASE("mean, concat, slice, permute, scale_rows behave") {
    Graph g;
    Var x = g.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(mean_axes(x, {0, 1}).value().item() == doctest::Approx(3.5));
    CHECK(mean_axes(x, {1}).value().values() == std::vector<double>{2, 5});

    Var c = concat({x, x}, 1);
    CHECK(c.value().shape() == Shape{2, 6});
    CHECK(c.value()[3] == 1.0);

    Var s = slice(c, 1, 3, 3);
    CHECK(s.value().values() == x.value().values());

    Var p = permute(x, {1, 0});
    CHECK(p.value().shape() == Shape{3, 2});
    CHECK(p.value().values() == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK(transpose2d(x).value().values() == p.value().values());

    Var scales = g.leaf(Tensor({2, 1}, {2.0, -1.0}));
    CHECK(scale_rows(x, scales).value().values() == std::vector<double>{2, 4, 6, -4, -5, -6});
}

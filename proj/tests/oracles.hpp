// Naive reference implementations used as independent oracles. These stay
// deliberately dumb (plain nested loops over the defining index formulas)
// and never call the library kernels they are checking.
#pragma once

#include "stcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using stcn::Tensor;

// y[i][j] = sum_k a[i][k] * b[k][j]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor y({m, n}, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t kk = 0; kk < k; ++kk)
                y[i * n + j] += a[i * k + kk] * b[kk * n + j];
    return y;
}

// direct summation over the cross-correlation indices; replicate_t clamps
// out-of-range temporal taps to the edge frames instead of dropping them
inline Tensor conv3d(const Tensor& x, const Tensor& k, std::size_t st, std::size_t sh,
                     std::size_t sw, std::size_t pt, std::size_t ph, std::size_t pw,
                     bool replicate_t = false) {
    const std::size_t n = x.extent(0), c = x.extent(1), t = x.extent(2), h = x.extent(3),
                      w = x.extent(4);
    const std::size_t co = k.extent(0), kt = k.extent(2), kh = k.extent(3), kw = k.extent(4);
    const std::size_t ot = (t + 2 * pt - kt) / st + 1;
    const std::size_t oh = (h + 2 * ph - kh) / sh + 1;
    const std::size_t ow = (w + 2 * pw - kw) / sw + 1;
    Tensor y({n, co, ot, oh, ow}, 0.0);
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t oc = 0; oc < co; ++oc)
            for (std::size_t zt = 0; zt < ot; ++zt)
                for (std::size_t zh = 0; zh < oh; ++zh)
                    for (std::size_t zw = 0; zw < ow; ++zw) {
                        double acc = 0.0;
                        for (std::size_t ic = 0; ic < c; ++ic)
                            for (std::size_t qt = 0; qt < kt; ++qt)
                                for (std::size_t qh = 0; qh < kh; ++qh)
                                    for (std::size_t qw = 0; qw < kw; ++qw) {
                                        long it = static_cast<long>(zt * st + qt) -
                                                  static_cast<long>(pt);
                                        const long ih = static_cast<long>(zh * sh + qh) -
                                                        static_cast<long>(ph);
                                        const long iw = static_cast<long>(zw * sw + qw) -
                                                        static_cast<long>(pw);
                                        if (replicate_t) {
                                            it = std::clamp<long>(it, 0, static_cast<long>(t) - 1);
                                        }
                                        if (it < 0 || it >= static_cast<long>(t)) continue;
                                        if (ih < 0 || ih >= static_cast<long>(h)) continue;
                                        if (iw < 0 || iw >= static_cast<long>(w)) continue;
                                        acc += x[(((in * c + ic) * t + it) * h + ih) * w + iw] *
                                               k[(((oc * c + ic) * kt + qt) * kh + qh) * kw + qw];
                                    }
                        y[(((in * co + oc) * ot + zt) * oh + zh) * ow + zw] = acc;
                    }
    return y;
}

// y_t = sum_m x_{t - d*m} h_m, out-of-range terms contribute zero
inline Tensor causal_conv1d(const Tensor& x, const Tensor& k, std::size_t d) {
    const std::size_t n = x.extent(0), c = x.extent(1), t = x.extent(2);
    const std::size_t co = k.extent(0), kf = k.extent(2);
    Tensor y({n, co, t}, 0.0);
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t oc = 0; oc < co; ++oc)
            for (std::size_t tt = 0; tt < t; ++tt) {
                double acc = 0.0;
                for (std::size_t ic = 0; ic < c; ++ic)
                    for (std::size_t m = 0; m < kf; ++m) {
                        const long src = static_cast<long>(tt) - static_cast<long>(d * m);
                        if (src < 0) continue;
                        acc += x[(in * c + ic) * t + src] * k[(oc * c + ic) * kf + m];
                    }
                y[(in * co + oc) * t + tt] = acc;
            }
    return y;
}

// windowed reduction; average divides by the in-bounds count
inline Tensor pool3d(const Tensor& x, bool max_kind, std::size_t wt, std::size_t wh,
                     std::size_t ww, std::size_t st, std::size_t sh, std::size_t sw,
                     std::size_t pt, std::size_t ph, std::size_t pw, bool ceil_mode) {
    auto extent = [&](std::size_t in, std::size_t win, std::size_t stride, std::size_t pad) {
        const std::size_t num = in + 2 * pad - win;
        std::size_t o = ceil_mode ? (num + stride - 1) / stride + 1 : num / stride + 1;
        if (ceil_mode && (o - 1) * stride >= in + pad) --o;
        return o;
    };
    const std::size_t n = x.extent(0), c = x.extent(1), t = x.extent(2), h = x.extent(3),
                      w = x.extent(4);
    const std::size_t ot = extent(t, wt, st, pt), oh = extent(h, wh, sh, ph),
                      ow = extent(w, ww, sw, pw);
    Tensor y({n, c, ot, oh, ow}, 0.0);
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t zt = 0; zt < ot; ++zt)
                for (std::size_t zh = 0; zh < oh; ++zh)
                    for (std::size_t zw = 0; zw < ow; ++zw) {
                        double best = -1e300;
                        double acc = 0.0;
                        std::size_t count = 0;
                        for (std::size_t qt = 0; qt < wt; ++qt)
                            for (std::size_t qh = 0; qh < wh; ++qh)
                                for (std::size_t qw = 0; qw < ww; ++qw) {
                                    const long it = static_cast<long>(zt * st + qt) -
                                                    static_cast<long>(pt);
                                    const long ih = static_cast<long>(zh * sh + qh) -
                                                    static_cast<long>(ph);
                                    const long iw = static_cast<long>(zw * sw + qw) -
                                                    static_cast<long>(pw);
                                    if (it < 0 || it >= static_cast<long>(t)) continue;
                                    if (ih < 0 || ih >= static_cast<long>(h)) continue;
                                    if (iw < 0 || iw >= static_cast<long>(w)) continue;
                                    const double v =
                                        x[(((in * c + ic) * t + it) * h + ih) * w + iw];
                                    best = std::max(best, v);
                                    acc += v;
                                    ++count;
                                }
                        y[(((in * c + ic) * ot + zt) * oh + zh) * ow + zw] =
                            max_kind ? best : acc / static_cast<double>(count);
                    }
    return y;
}

// x_t = mean of f over 1-based indices [t*w - w, t*w + w - 1], clipped
inline Tensor ltap(const Tensor& f, std::size_t T) {
    const std::size_t k = f.extent(0), c = f.extent(1);
    const std::size_t w = k / T;
    Tensor y({T, c}, 0.0);
    for (std::size_t t = 1; t <= T; ++t) {
        const long lo = static_cast<long>(t * w) - static_cast<long>(w);
        const long hi = static_cast<long>(t * w) + static_cast<long>(w) - 1;
        std::size_t count = 0;
        for (long f1 = lo; f1 <= hi; ++f1) {
            if (f1 < 1 || f1 > static_cast<long>(k)) continue;
            ++count;
            for (std::size_t j = 0; j < c; ++j)
                y[(t - 1) * c + j] += f[(f1 - 1) * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) y[(t - 1) * c + j] /= static_cast<double>(count);
    }
    return y;
}

// row means over the channel axis of [T x C]
inline std::vector<double> row_mean(const Tensor& x) {
    const std::size_t t = x.extent(0), c = x.extent(1);
    std::vector<double> z(t, 0.0);
    for (std::size_t r = 0; r < t; ++r) {
        for (std::size_t j = 0; j < c; ++j) z[r] += x[r * c + j];
        z[r] /= static_cast<double>(c);
    }
    return z;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

} // namespace oracle

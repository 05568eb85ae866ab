#include "stcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stcn {

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    const std::size_t padded = in + 2 * pad;
    if (k == 0 || stride == 0 || padded < k) {
        throw ConfigError("conv extent: kernel " + std::to_string(k) + " does not fit input " +
                          std::to_string(in) + " with padding " + std::to_string(pad));
    }
    return (padded - k) / stride + 1;
}

std::size_t pool_out_extent(std::size_t in, std::size_t window, std::size_t stride,
                            std::size_t pad, bool ceil_mode) {
    const std::size_t padded = in + 2 * pad;
    if (window == 0 || stride == 0 || padded < window) {
        throw ConfigError("pool extent: window " + std::to_string(window) +
                          " larger than padded input " + std::to_string(in) + "+2*" +
                          std::to_string(pad));
    }
    const std::size_t num = padded - window;
    std::size_t out = ceil_mode ? (num + stride - 1) / stride + 1 : num / stride + 1;
    // A trailing partial window must start inside the (left-padded) input.
    if (ceil_mode && (out - 1) * stride >= in + pad) --out;
    return out;
}

// ---------------------------------------------------------------------------
// conv3d

Var conv3d(const Var& input, const Var& kernel, Dim3 stride, Dim3 padding, TemporalPad tpad) {
    Graph& g = *input.graph();
    if (input.graph() != kernel.graph()) {
        throw InputError("conv3d: operands belong to different graphs");
    }
    const Tensor& x = input.value();
    const Tensor& k = kernel.value();
    if (x.rank() != 5 || k.rank() != 5) {
        throw ShapeError("conv3d: expected input [NxCxTxHxW] and kernel [C'xCxkTxkHxkW], got " +
                         shape_str(x.shape()) + " and " + shape_str(k.shape()));
    }
    const std::size_t n = x.extent(0), c = x.extent(1), t = x.extent(2), h = x.extent(3),
                      w = x.extent(4);
    const std::size_t co = k.extent(0), ci = k.extent(1), kt = k.extent(2), kh = k.extent(3),
                      kw = k.extent(4);
    if (ci != c) {
        throw ShapeError("conv3d: kernel channels " + shape_str(k.shape()) +
                         " do not match input " + shape_str(x.shape()));
    }
    const std::size_t ot = conv_out_extent(t, kt, stride.t, padding.t);
    const std::size_t oh = conv_out_extent(h, kh, stride.h, padding.h);
    const std::size_t ow = conv_out_extent(w, kw, stride.w, padding.w);

    Tensor out({n, co, ot, oh, ow}, 0.0);
    const double* px = x.data();
    const double* pk = k.data();
    double* po = out.data();
    const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(t);
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
    const bool replicate_t = tpad == TemporalPad::replicate;
    // maps a padded temporal index to a real frame, or -1 for a zero tap
    auto temporal_index = [T, replicate_t](std::ptrdiff_t it) -> std::ptrdiff_t {
        if (it >= 0 && it < T) return it;
        if (!replicate_t) return -1;
        return it < 0 ? 0 : T - 1;
    };
    for (std::size_t in_ = 0; in_ < n; ++in_) {
        for (std::size_t oc = 0; oc < co; ++oc) {
            for (std::size_t zt = 0; zt < ot; ++zt) {
                for (std::size_t zh = 0; zh < oh; ++zh) {
                    for (std::size_t zw = 0; zw < ow; ++zw) {
                        double acc = 0.0;
                        for (std::size_t icn = 0; icn < c; ++icn) {
                            const double* xbase = px + ((in_ * c + icn) * t) * h * w;
                            const double* kbase = pk + ((oc * c + icn) * kt) * kh * kw;
                            for (std::size_t qt = 0; qt < kt; ++qt) {
                                const std::ptrdiff_t it = temporal_index(
                                    static_cast<std::ptrdiff_t>(zt * stride.t + qt) -
                                    static_cast<std::ptrdiff_t>(padding.t));
                                if (it < 0) continue;
                                for (std::size_t qh = 0; qh < kh; ++qh) {
                                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(zh * stride.h + qh) -
                                                              static_cast<std::ptrdiff_t>(padding.h);
                                    if (ih < 0 || ih >= H) continue;
                                    for (std::size_t qw = 0; qw < kw; ++qw) {
                                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(zw * stride.w + qw) -
                                                                  static_cast<std::ptrdiff_t>(padding.w);
                                        if (iw < 0 || iw >= W) continue;
                                        acc += xbase[(it * H + ih) * W + iw] *
                                               kbase[(qt * kh + qh) * kw + qw];
                                    }
                                }
                            }
                        }
                        po[(((in_ * co + oc) * ot + zt) * oh + zh) * ow + zw] = acc;
                    }
                }
            }
        }
    }
    const std::size_t ix = input.id(), ik = kernel.id();
    return g.emit(std::move(out), {ix, ik},
                  [ix, ik, n, c, t, h, w, co, kt, kh, kw, ot, oh, ow, stride, padding,
                   replicate_t](Graph& gg, std::size_t self) {
                      const std::vector<double>& dy = *gg.node_value(self).grad;
                      const Tensor& vx = gg.node_value(ix);
                      const Tensor& vk = gg.node_value(ik);
                      const bool need_dx = gg.node_requires_grad(ix);
                      const bool need_dk = gg.node_requires_grad(ik);
                      double* dx = need_dx ? gg.node_grad(ix).data() : nullptr;
                      double* dk = need_dk ? gg.node_grad(ik).data() : nullptr;
                      const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(t);
                      const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h);
                      const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(w);
                      auto temporal_index = [T, replicate_t](std::ptrdiff_t it) -> std::ptrdiff_t {
                          if (it >= 0 && it < T) return it;
                          if (!replicate_t) return -1;
                          return it < 0 ? 0 : T - 1;
                      };
                      for (std::size_t in_ = 0; in_ < n; ++in_) {
                          for (std::size_t oc = 0; oc < co; ++oc) {
                              for (std::size_t zt = 0; zt < ot; ++zt) {
                                  for (std::size_t zh = 0; zh < oh; ++zh) {
                                      for (std::size_t zw = 0; zw < ow; ++zw) {
                                          const double go =
                                              dy[(((in_ * co + oc) * ot + zt) * oh + zh) * ow + zw];
                                          if (go == 0.0) continue;
                                          for (std::size_t icn = 0; icn < c; ++icn) {
                                              const std::size_t xoff = (in_ * c + icn) * t * h * w;
                                              const std::size_t koff = (oc * c + icn) * kt * kh * kw;
                                              for (std::size_t qt = 0; qt < kt; ++qt) {
                                                  const std::ptrdiff_t it = temporal_index(
                                                      static_cast<std::ptrdiff_t>(zt * stride.t + qt) -
                                                      static_cast<std::ptrdiff_t>(padding.t));
                                                  if (it < 0) continue;
                                                  for (std::size_t qh = 0; qh < kh; ++qh) {
                                                      const std::ptrdiff_t ih =
                                                          static_cast<std::ptrdiff_t>(zh * stride.h + qh) -
                                                          static_cast<std::ptrdiff_t>(padding.h);
                                                      if (ih < 0 || ih >= H) continue;
                                                      for (std::size_t qw = 0; qw < kw; ++qw) {
                                                          const std::ptrdiff_t iw =
                                                              static_cast<std::ptrdiff_t>(zw * stride.w + qw) -
                                                              static_cast<std::ptrdiff_t>(padding.w);
                                                          if (iw < 0 || iw >= W) continue;
                                                          const std::size_t xi =
                                                              xoff + (static_cast<std::size_t>(it) * h +
                                                                      static_cast<std::size_t>(ih)) * w +
                                                              static_cast<std::size_t>(iw);
                                                          const std::size_t ki =
                                                              koff + (qt * kh + qh) * kw + qw;
                                                          if (need_dx) dx[xi] += go * vk[ki];
                                                          if (need_dk) dk[ki] += go * vx[xi];
                                                      }
                                                  }
                                              }
                                          }
                                      }
                                  }
                              }
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// dilated causal conv1d

Var dilated_causal_conv1d(const Var& input, const Var& kernel, std::size_t dilation) {
    Graph& g = *input.graph();
    if (input.graph() != kernel.graph()) {
        throw InputError("dilated_causal_conv1d: operands belong to different graphs");
    }
    if (dilation == 0) {
        throw ConfigError("dilated_causal_conv1d: dilation must be >= 1");
    }
    const Tensor& x = input.value();
    const Tensor& k = kernel.value();
    if (x.rank() != 3 || k.rank() != 3) {
        throw ShapeError("dilated_causal_conv1d: expected input [NxCxT] and kernel [C'xCxkF], got " +
                         shape_str(x.shape()) + " and " + shape_str(k.shape()));
    }
    const std::size_t n = x.extent(0), c = x.extent(1), t = x.extent(2);
    const std::size_t co = k.extent(0), ci = k.extent(1), kf = k.extent(2);
    if (ci != c) {
        throw ShapeError("dilated_causal_conv1d: kernel channels " + shape_str(k.shape()) +
                         " do not match input " + shape_str(x.shape()));
    }
    Tensor out({n, co, t}, 0.0);
    for (std::size_t in_ = 0; in_ < n; ++in_) {
        for (std::size_t oc = 0; oc < co; ++oc) {
            double* orow = out.data() + (in_ * co + oc) * t;
            for (std::size_t icn = 0; icn < c; ++icn) {
                const double* xrow = x.data() + (in_ * c + icn) * t;
                const double* krow = k.data() + (oc * c + icn) * kf;
                for (std::size_t m = 0; m < kf; ++m) {
                    const double kv = krow[m];
                    if (kv == 0.0) continue;
                    const std::size_t shift = dilation * m;
                    for (std::size_t tt = shift; tt < t; ++tt) {
                        orow[tt] += xrow[tt - shift] * kv;
                    }
                }
            }
        }
    }
    const std::size_t ix = input.id(), ik = kernel.id();
    return g.emit(std::move(out), {ix, ik},
                  [ix, ik, n, c, t, co, kf, dilation](Graph& gg, std::size_t self) {
                      const std::vector<double>& dy = *gg.node_value(self).grad;
                      const Tensor& vx = gg.node_value(ix);
                      const Tensor& vk = gg.node_value(ik);
                      const bool need_dx = gg.node_requires_grad(ix);
                      const bool need_dk = gg.node_requires_grad(ik);
                      double* dx = need_dx ? gg.node_grad(ix).data() : nullptr;
                      double* dk = need_dk ? gg.node_grad(ik).data() : nullptr;
                      for (std::size_t in_ = 0; in_ < n; ++in_) {
                          for (std::size_t oc = 0; oc < co; ++oc) {
                              const double* dyrow = dy.data() + (in_ * co + oc) * t;
                              for (std::size_t icn = 0; icn < c; ++icn) {
                                  const std::size_t xoff = (in_ * c + icn) * t;
                                  const std::size_t koff = (oc * c + icn) * kf;
                                  for (std::size_t m = 0; m < kf; ++m) {
                                      const std::size_t shift = dilation * m;
                                      double kacc = 0.0;
                                      for (std::size_t tt = shift; tt < t; ++tt) {
                                          const double go = dyrow[tt];
                                          if (go == 0.0) continue;
                                          if (need_dx) dx[xoff + tt - shift] += go * vk[koff + m];
                                          kacc += go * vx[xoff + tt - shift];
                                      }
                                      if (need_dk) dk[koff + m] += kacc;
                                  }
                              }
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// pool3d

namespace {

struct PoolAxis {
    std::size_t out;
    std::size_t stride;
    std::size_t window;
    std::size_t pad;
    std::size_t in;
    // valid (clipped) input range of one output position
    void range(std::size_t z, std::size_t& lo, std::size_t& hi) const {
        const std::ptrdiff_t start =
            static_cast<std::ptrdiff_t>(z * stride) - static_cast<std::ptrdiff_t>(pad);
        const std::ptrdiff_t end = start + static_cast<std::ptrdiff_t>(window);
        lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(start, 0));
        hi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(end, static_cast<std::ptrdiff_t>(in)));
    }
};

} // namespace

Var pool3d(const Var& input, PoolKind kind, Dim3 window, Dim3 stride, Dim3 padding,
           bool ceil_mode) {
    Graph& g = *input.graph();
    const Tensor& x = input.value();
    if (x.rank() != 5) {
        throw ShapeError("pool3d: expected input [NxCxTxHxW], got " + shape_str(x.shape()));
    }
    const std::size_t n = x.extent(0), c = x.extent(1), t = x.extent(2), h = x.extent(3),
                      w = x.extent(4);
    const PoolAxis at{pool_out_extent(t, window.t, stride.t, padding.t, ceil_mode), stride.t,
                      window.t, padding.t, t};
    const PoolAxis ah{pool_out_extent(h, window.h, stride.h, padding.h, ceil_mode), stride.h,
                      window.h, padding.h, h};
    const PoolAxis aw{pool_out_extent(w, window.w, stride.w, padding.w, ceil_mode), stride.w,
                      window.w, padding.w, w};

    Tensor out({n, c, at.out, ah.out, aw.out});
    const bool is_max = kind == PoolKind::max;
    // flat input offset of the max element per output cell (max pooling only)
    std::vector<std::size_t> argmax(is_max ? out.size() : 0);
    std::size_t oi = 0;
    for (std::size_t in_ = 0; in_ < n; ++in_) {
        for (std::size_t icn = 0; icn < c; ++icn) {
            const double* xp = x.data() + (in_ * c + icn) * t * h * w;
            const std::size_t planeoff = (in_ * c + icn) * t * h * w;
            for (std::size_t zt = 0; zt < at.out; ++zt) {
                std::size_t t0, t1;
                at.range(zt, t0, t1);
                for (std::size_t zh = 0; zh < ah.out; ++zh) {
                    std::size_t h0, h1;
                    ah.range(zh, h0, h1);
                    for (std::size_t zw = 0; zw < aw.out; ++zw) {
                        std::size_t w0, w1;
                        aw.range(zw, w0, w1);
                        if (is_max) {
                            double best = -std::numeric_limits<double>::infinity();
                            std::size_t best_off = 0;
                            for (std::size_t it = t0; it < t1; ++it)
                                for (std::size_t ih = h0; ih < h1; ++ih)
                                    for (std::size_t iw = w0; iw < w1; ++iw) {
                                        const std::size_t off = (it * h + ih) * w + iw;
                                        if (xp[off] > best) {
                                            best = xp[off];
                                            best_off = off;
                                        }
                                    }
                            out[oi] = best;
                            argmax[oi] = planeoff + best_off;
                        } else {
                            double acc = 0.0;
                            for (std::size_t it = t0; it < t1; ++it)
                                for (std::size_t ih = h0; ih < h1; ++ih)
                                    for (std::size_t iw = w0; iw < w1; ++iw)
                                        acc += xp[(it * h + ih) * w + iw];
                            const std::size_t count = (t1 - t0) * (h1 - h0) * (w1 - w0);
                            out[oi] = acc / static_cast<double>(count);
                        }
                        ++oi;
                    }
                }
            }
        }
    }
    const std::size_t ix = input.id();
    if (is_max) {
        return g.emit(std::move(out), {ix}, [ix, argmax](Graph& gg, std::size_t self) {
            if (!gg.node_requires_grad(ix)) return;
            const std::vector<double>& dy = *gg.node_value(self).grad;
            std::vector<double>& dx = gg.node_grad(ix);
            for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
        });
    }
    return g.emit(std::move(out), {ix},
                  [ix, n, c, t, h, w, at, ah, aw](Graph& gg, std::size_t self) {
                      if (!gg.node_requires_grad(ix)) return;
                      const std::vector<double>& dy = *gg.node_value(self).grad;
                      std::vector<double>& dx = gg.node_grad(ix);
                      std::size_t oi = 0;
                      for (std::size_t in_ = 0; in_ < n; ++in_) {
                          for (std::size_t icn = 0; icn < c; ++icn) {
                              const std::size_t planeoff = (in_ * c + icn) * t * h * w;
                              for (std::size_t zt = 0; zt < at.out; ++zt) {
                                  std::size_t t0, t1;
                                  at.range(zt, t0, t1);
                                  for (std::size_t zh = 0; zh < ah.out; ++zh) {
                                      std::size_t h0, h1;
                                      ah.range(zh, h0, h1);
                                      for (std::size_t zw = 0; zw < aw.out; ++zw) {
                                          std::size_t w0, w1;
                                          aw.range(zw, w0, w1);
                                          const std::size_t count =
                                              (t1 - t0) * (h1 - h0) * (w1 - w0);
                                          const double go = dy[oi++] / static_cast<double>(count);
                                          for (std::size_t it = t0; it < t1; ++it)
                                              for (std::size_t ih = h0; ih < h1; ++ih)
                                                  for (std::size_t iw = w0; iw < w1; ++iw)
                                                      dx[planeoff + (it * h + ih) * w + iw] += go;
                                      }
                                  }
                              }
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// batch norm

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t feature_axis,
               NormMode mode, RunningStats* stats, bool update_running, double momentum,
               double eps) {
    Graph& g = *x.graph();
    if (gamma.graph() != &g || beta.graph() != &g) {
        throw InputError("batch_norm: operands belong to different graphs");
    }
    const Tensor& tx = x.value();
    if (feature_axis >= tx.rank()) {
        throw ShapeError("batch_norm: feature axis " + std::to_string(feature_axis) +
                         " out of range for " + shape_str(tx.shape()));
    }
    const std::size_t c = tx.extent(feature_axis);
    if (gamma.value().size() != c || beta.value().size() != c) {
        throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(c) + " elements");
    }
    const std::size_t m = tx.size() / c;
    const std::vector<std::size_t> strides = row_major_strides(tx.shape());
    const std::size_t fstride = strides[feature_axis];

    auto channel_of = [fstride, c](std::size_t flat) { return (flat / fstride) % c; };

    std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
    if (mode == NormMode::train) {
        for (std::size_t i = 0; i < tx.size(); ++i) mean[channel_of(i)] += tx[i];
        for (double& v : mean) v /= static_cast<double>(m);
        std::vector<double> var(c, 0.0);
        for (std::size_t i = 0; i < tx.size(); ++i) {
            const double d = tx[i] - mean[channel_of(i)];
            var[channel_of(i)] += d * d;
        }
        for (double& v : var) v /= static_cast<double>(m);
        for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
        if (update_running) {
            if (stats == nullptr) {
                throw ConfigError("batch_norm: running statistics requested but none supplied");
            }
            for (std::size_t j = 0; j < c; ++j) {
                stats->mean[j] = momentum * stats->mean[j] + (1.0 - momentum) * mean[j];
                stats->var[j] = momentum * stats->var[j] + (1.0 - momentum) * var[j];
            }
        }
    } else {
        if (stats == nullptr) {
            throw ConfigError("batch_norm: eval mode requires running statistics");
        }
        for (std::size_t j = 0; j < c; ++j) {
            mean[j] = stats->mean[j];
            inv_std[j] = 1.0 / std::sqrt(stats->var[j] + eps);
        }
    }

    const Tensor& tg = gamma.value();
    const Tensor& tb = beta.value();
    Tensor out(tx.shape());
    for (std::size_t i = 0; i < tx.size(); ++i) {
        const std::size_t j = channel_of(i);
        out[i] = tg[j] * (tx[i] - mean[j]) * inv_std[j] + tb[j];
    }

    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    const bool train = mode == NormMode::train;
    return g.emit(std::move(out), {ix, ig, ib},
                  [ix, ig, ib, mean, inv_std, c, m, fstride, train](Graph& gg, std::size_t self) {
                      const std::vector<double>& dy = *gg.node_value(self).grad;
                      const Tensor& vx = gg.node_value(ix);
                      const Tensor& vg = gg.node_value(ig);
                      auto channel_of = [fstride, c](std::size_t flat) {
                          return (flat / fstride) % c;
                      };
                      // per-channel sums over dy and dy * x_hat
                      std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
                      for (std::size_t i = 0; i < dy.size(); ++i) {
                          const std::size_t j = channel_of(i);
                          const double xhat = (vx[i] - mean[j]) * inv_std[j];
                          sum_dy[j] += dy[i];
                          sum_dy_xhat[j] += dy[i] * xhat;
                      }
                      if (gg.node_requires_grad(ig)) {
                          std::vector<double>& dg = gg.node_grad(ig);
                          for (std::size_t j = 0; j < c; ++j) dg[j] += sum_dy_xhat[j];
                      }
                      if (gg.node_requires_grad(ib)) {
                          std::vector<double>& db = gg.node_grad(ib);
                          for (std::size_t j = 0; j < c; ++j) db[j] += sum_dy[j];
                      }
                      if (gg.node_requires_grad(ix)) {
                          std::vector<double>& dx = gg.node_grad(ix);
                          const double inv_m = 1.0 / static_cast<double>(m);
                          for (std::size_t i = 0; i < dy.size(); ++i) {
                              const std::size_t j = channel_of(i);
                              if (train) {
                                  const double xhat = (vx[i] - mean[j]) * inv_std[j];
                                  dx[i] += vg[j] * inv_std[j] *
                                           (dy[i] - sum_dy[j] * inv_m - xhat * sum_dy_xhat[j] * inv_m);
                              } else {
                                  dx[i] += vg[j] * inv_std[j] * dy[i];
                              }
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// local temporal average pooling

namespace {

struct LtapWindow {
    std::size_t lo;  // inclusive, 0-based
    std::size_t hi;  // exclusive
};

std::vector<LtapWindow> ltap_windows(std::size_t k, std::size_t T) {
    if (T == 0 || k % T != 0) {
        throw ConfigError("ltap: sequence length " + std::to_string(k) +
                          " is not divisible by T = " + std::to_string(T));
    }
    const std::size_t w = k / T;
    std::vector<LtapWindow> wins(T);
    for (std::size_t t = 0; t < T; ++t) {
        // 1-based anchor (t+1)*w, window [anchor - w, anchor + w - 1], clipped
        const std::ptrdiff_t lo1 = static_cast<std::ptrdiff_t>((t + 1) * w) -
                                   static_cast<std::ptrdiff_t>(w);
        const std::ptrdiff_t hi1 = static_cast<std::ptrdiff_t>((t + 1) * w) +
                                   static_cast<std::ptrdiff_t>(w) - 1;
        const std::ptrdiff_t lo0 = std::max<std::ptrdiff_t>(lo1 - 1, 0);
        const std::ptrdiff_t hi0 = std::min<std::ptrdiff_t>(hi1 - 1, static_cast<std::ptrdiff_t>(k) - 1);
        wins[t] = {static_cast<std::size_t>(lo0), static_cast<std::size_t>(hi0) + 1};
    }
    return wins;
}

} // namespace

Tensor ltap(const Tensor& feature, std::size_t T) {
    if (feature.rank() != 2) {
        throw ShapeError("ltap: expected [k x C] feature map, got " + shape_str(feature.shape()));
    }
    const std::size_t k = feature.extent(0), c = feature.extent(1);
    const std::vector<LtapWindow> wins = ltap_windows(k, T);
    Tensor out({T, c}, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double inv = 1.0 / static_cast<double>(wins[t].hi - wins[t].lo);
        for (std::size_t f = wins[t].lo; f < wins[t].hi; ++f)
            for (std::size_t j = 0; j < c; ++j) out[t * c + j] += feature[f * c + j];
        for (std::size_t j = 0; j < c; ++j) out[t * c + j] *= inv;
    }
    return out;
}

Var ltap(const Var& feature, std::size_t T) {
    Graph& g = *feature.graph();
    const Tensor& tf = feature.value();
    Tensor out = ltap(tf, T);
    const std::size_t k = tf.extent(0), c = tf.extent(1);
    const std::vector<LtapWindow> wins = ltap_windows(k, T);
    const std::size_t fid = feature.id();
    return g.emit(std::move(out), {fid}, [fid, wins, c](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(fid)) return;
        const std::vector<double>& dy = *gg.node_value(self).grad;
        std::vector<double>& df = gg.node_grad(fid);
        for (std::size_t t = 0; t < wins.size(); ++t) {
            const double inv = 1.0 / static_cast<double>(wins[t].hi - wins[t].lo);
            for (std::size_t f = wins[t].lo; f < wins[t].hi; ++f)
                for (std::size_t j = 0; j < c; ++j) df[f * c + j] += dy[t * c + j] * inv;
        }
    });
}

} // namespace stcn

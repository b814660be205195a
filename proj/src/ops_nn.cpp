#include <algorithm>
#include <cmath>
#include <limits>

#include "op_common.hpp"
#include "pcn/ops.hpp"

namespace pcn {

using detail::Node;
using detail::op_output;
using detail::record_if;

Tensor softmax(const Tensor& a, int axis) {
  const auto& shape = a.shape();
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(shape));
  }
  for (double v : a.data()) {
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  }
  const int n = shape[axis];
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

  std::vector<double> out(a.data().size());
  const auto& ad = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < n; ++k) mx = std::max(mx, ad[base + k * inner]);
      double z = 0.0;
      for (int k = 0; k < n; ++k) {
        const double e = std::exp(ad[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (int k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  bool rg = a.requires_grad();
  Tensor result = op_output(shape, std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), on = result.node_ptr(), n, outer, inner](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              auto& ga = ctx.grad_of(an.get());
              const auto& y = on->data;
              for (int64_t o = 0; o < outer; ++o) {
                for (int64_t i = 0; i < inner; ++i) {
                  const int64_t base = o * n * inner + i;
                  double dot = 0.0;
                  for (int k = 0; k < n; ++k) dot += gout[base + k * inner] * y[base + k * inner];
                  for (int k = 0; k < n; ++k) {
                    const int64_t idx = base + k * inner;
                    ga[idx] += y[idx] * (gout[idx] - dot);
                  }
                }
              }
            });
  return result;
}

Tensor cross_entropy(const Tensor& scores, const Tensor& target,
                     const std::optional<Tensor>& class_weights,
                     std::optional<int> ignore_id) {
  if (scores.rank() != 2) {
    throw DimensionError("cross_entropy: scores must be [c,n], got " + shape_str(scores.shape()));
  }
  const int c = scores.dim(0);
  const int64_t n = scores.dim(1);
  if (target.size() != n) {
    throw DimensionError("cross_entropy: target length " + std::to_string(target.size()) +
                         " != pixel count " + std::to_string(n));
  }
  std::vector<double> weights(c, 1.0);
  if (class_weights) {
    if (class_weights->size() != c) {
      throw DimensionError("cross_entropy: class_weights length mismatch");
    }
    weights = class_weights->data();
  }

  const auto& sd = scores.data();
  const auto& td = target.data();

  // fused log-softmax per pixel column
  std::vector<int> tgt(n);
  for (int64_t i = 0; i < n; ++i) {
    const double t = td[i];
    const int id = static_cast<int>(t);
    if (ignore_id && id == *ignore_id) {
      tgt[i] = -1;
      continue;
    }
    if (t != std::floor(t) || id < 0 || id >= c) {
      throw LabelError("cross_entropy: target id " + std::to_string(t) +
                       " outside [0," + std::to_string(c) + ") at pixel " + std::to_string(i));
    }
    tgt[i] = id;
  }

  double loss_sum = 0.0, weight_sum = 0.0;
  std::vector<double> lse(n), mx(n);
  for (int64_t i = 0; i < n; ++i) {
    if (tgt[i] < 0) continue;
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < c; ++k) m = std::max(m, sd[k * n + i]);
    double z = 0.0;
    for (int k = 0; k < c; ++k) z += std::exp(sd[k * n + i] - m);
    mx[i] = m;
    lse[i] = m + std::log(z);
    const double w = weights[tgt[i]];
    loss_sum += w * (lse[i] - sd[tgt[i] * n + i]);
    weight_sum += w;
  }
  if (weight_sum == 0.0) {
    throw ContractError("cross_entropy: no non-ignored pixels");
  }
  const double loss = loss_sum / weight_sum;

  bool rg = scores.requires_grad();
  Tensor result = op_output({1}, {loss}, rg);
  record_if(rg, result,
            [sn = scores.node_ptr(), on = result.node_ptr(), tgt, weights, lse,
             weight_sum, c, n](BackwardCtx& ctx) {
              const double g = ctx.grad_of(on.get())[0];
              auto& gs = ctx.grad_of(sn.get());
              const auto& sd = sn->data;
              for (int64_t i = 0; i < n; ++i) {
                if (tgt[i] < 0) continue;
                const double w = weights[tgt[i]] / weight_sum;
                for (int k = 0; k < c; ++k) {
                  const double p = std::exp(sd[k * n + i] - lse[i]);
                  const double ind = (k == tgt[i]) ? 1.0 : 0.0;
                  gs[k * n + i] += g * w * (p - ind);
                }
              }
            });
  return result;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding, int stride) {
  if (input.rank() != 3 || kernel.rank() != 4) {
    throw DimensionError("conv2d: want input [cin,h,w] and kernel [cout,cin,k,k], got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: channel mismatch, input has " + std::to_string(cin) +
                         ", kernel expects " + std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(3) != k) throw DimensionError("conv2d: non-square kernel");
  if (k != 1 && k != 3) throw DimensionError("conv2d: kernel size must be 1 or 3");
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: negative padding");
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: empty output");

  std::vector<double> out(static_cast<size_t>(cout) * oh * ow, 0.0);
  const auto& in = input.data();
  const auto& kd = kernel.data();
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double kv = kd[((co * cin + ci) * k + ky) * k + kx];
          if (kv == 0.0) continue;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - padding;
            if (iy < 0 || iy >= h) continue;
            const double* irow = &in[(ci * h + iy) * w];
            double* orow = &out[(co * oh + oy) * ow];
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - padding;
              if (ix < 0 || ix >= w) continue;
              orow[ox] += kv * irow[ix];
            }
          }
        }
      }
    }
  }

  bool rg = input.requires_grad() || kernel.requires_grad();
  Tensor result = op_output({cout, oh, ow}, std::move(out), rg);
  record_if(rg, result,
            [in_n = input.node_ptr(), k_n = kernel.node_ptr(), on = result.node_ptr(),
             cin, h, w, cout, k, padding, stride, oh, ow](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              if (in_n->requires_grad) {
                auto& gi = ctx.grad_of(in_n.get());
                const auto& kd = k_n->data;
                for (int co = 0; co < cout; ++co) {
                  for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < k; ++ky) {
                      for (int kx = 0; kx < k; ++kx) {
                        const double kv = kd[((co * cin + ci) * k + ky) * k + kx];
                        if (kv == 0.0) continue;
                        for (int oy = 0; oy < oh; ++oy) {
                          const int iy = oy * stride + ky - padding;
                          if (iy < 0 || iy >= h) continue;
                          const double* grow = &gout[(co * oh + oy) * ow];
                          double* girow = &gi[(ci * h + iy) * w];
                          for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - padding;
                            if (ix < 0 || ix >= w) continue;
                            girow[ix] += kv * grow[ox];
                          }
                        }
                      }
                    }
                  }
                }
              }
              if (k_n->requires_grad) {
                auto& gk = ctx.grad_of(k_n.get());
                const auto& in = in_n->data;
                for (int co = 0; co < cout; ++co) {
                  for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < k; ++ky) {
                      for (int kx = 0; kx < k; ++kx) {
                        double acc = 0.0;
                        for (int oy = 0; oy < oh; ++oy) {
                          const int iy = oy * stride + ky - padding;
                          if (iy < 0 || iy >= h) continue;
                          const double* grow = &gout[(co * oh + oy) * ow];
                          const double* irow = &in[(ci * h + iy) * w];
                          for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - padding;
                            if (ix < 0 || ix >= w) continue;
                            acc += grow[ox] * irow[ix];
                          }
                        }
                        gk[((co * cin + ci) * k + ky) * k + kx] += acc;
                      }
                    }
                  }
                }
              }
            });
  return result;
}

Tensor adaptive_avg_pool(const Tensor& t, int bins_h, int bins_w) {
  if (t.rank() != 3) throw DimensionError("adaptive_avg_pool: want [c,h,w], got " + shape_str(t.shape()));
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  if (bins_h < 1 || bins_w < 1 || bins_h > h || bins_w > w) {
    throw DimensionError("adaptive_avg_pool: invalid bin grid");
  }
  auto lo = [](int i, int n, int bins) { return (i * n) / bins; };
  auto hi = [](int i, int n, int bins) { return ((i + 1) * n + bins - 1) / bins; };

  std::vector<double> out(static_cast<size_t>(c) * bins_h * bins_w, 0.0);
  const auto& td = t.data();
  for (int ch = 0; ch < c; ++ch) {
    for (int by = 0; by < bins_h; ++by) {
      const int y0 = lo(by, h, bins_h), y1 = hi(by, h, bins_h);
      for (int bx = 0; bx < bins_w; ++bx) {
        const int x0 = lo(bx, w, bins_w), x1 = hi(bx, w, bins_w);
        double s = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) s += td[(ch * h + y) * w + x];
        out[(ch * bins_h + by) * bins_w + bx] = s / ((y1 - y0) * (x1 - x0));
      }
    }
  }
  bool rg = t.requires_grad();
  Tensor result = op_output({c, bins_h, bins_w}, std::move(out), rg);
  record_if(rg, result,
            [tn = t.node_ptr(), on = result.node_ptr(), c, h, w, bins_h, bins_w,
             lo, hi](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              auto& gt = ctx.grad_of(tn.get());
              for (int ch = 0; ch < c; ++ch) {
                for (int by = 0; by < bins_h; ++by) {
                  const int y0 = lo(by, h, bins_h), y1 = hi(by, h, bins_h);
                  for (int bx = 0; bx < bins_w; ++bx) {
                    const int x0 = lo(bx, w, bins_w), x1 = hi(bx, w, bins_w);
                    const double g = gout[(ch * bins_h + by) * bins_w + bx] /
                                     ((y1 - y0) * (x1 - x0));
                    for (int y = y0; y < y1; ++y)
                      for (int x = x0; x < x1; ++x) gt[(ch * h + y) * w + x] += g;
                  }
                }
              }
            });
  return result;
}

Tensor upsample_nearest(const Tensor& t, int factor) {
  if (t.rank() != 3) throw DimensionError("upsample_nearest: want [c,h,w], got " + shape_str(t.shape()));
  if (factor < 1) throw DimensionError("upsample_nearest: factor must be >= 1");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  const int oh = h * factor, ow = w * factor;
  std::vector<double> out(static_cast<size_t>(c) * oh * ow);
  const auto& td = t.data();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y) {
      const double* irow = &td[(ch * h + y / factor) * w];
      double* orow = &out[(ch * oh + y) * ow];
      for (int x = 0; x < ow; ++x) orow[x] = irow[x / factor];
    }
  bool rg = t.requires_grad();
  Tensor result = op_output({c, oh, ow}, std::move(out), rg);
  record_if(rg, result,
            [tn = t.node_ptr(), on = result.node_ptr(), c, h, w, factor, oh,
             ow](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              auto& gt = ctx.grad_of(tn.get());
              for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < oh; ++y) {
                  const double* grow = &gout[(ch * oh + y) * ow];
                  double* trow = &gt[(ch * h + y / factor) * w];
                  for (int x = 0; x < ow; ++x) trow[x / factor] += grow[x];
                }
            });
  return result;
}

}  // namespace pcn

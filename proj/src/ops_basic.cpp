#include <algorithm>
#include <cmath>

#include "op_common.hpp"
#include "pcn/ops.hpp"

namespace pcn {

using detail::Node;
using detail::op_output;
using detail::record_if;

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: expected 2-D tensors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw DimensionError("matmul: inner dimensions disagree " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(p) * r, 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (int i = 0; i < p; ++i) {
    for (int k = 0; k < q; ++k) {
      const double aik = ad[i * q + k];
      const double* brow = &bd[k * r];
      double* orow = &out[i * r];
      for (int j = 0; j < r; ++j) orow[j] += aik * brow[j];
    }
  }
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor result = op_output({p, r}, std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr(), p, q,
             r](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              if (an->requires_grad) {
                auto& ga = ctx.grad_of(an.get());
                // ga[i,k] += dot(gout row i, b row k)
                for (int i = 0; i < p; ++i)
                  for (int k = 0; k < q; ++k) {
                    const double* grow = &gout[i * r];
                    const double* brow = &bn->data[k * r];
                    double acc = 0.0;
                    for (int j = 0; j < r; ++j) acc += grow[j] * brow[j];
                    ga[i * q + k] += acc;
                  }
              }
              if (bn->requires_grad) {
                auto& gb = ctx.grad_of(bn.get());
                // gb += a^T * gout
                for (int i = 0; i < p; ++i)
                  for (int k = 0; k < q; ++k) {
                    const double aik = an->data[i * q + k];
                    const double* grow = &gout[i * r];
                    double* gbrow = &gb[k * r];
                    for (int j = 0; j < r; ++j) gbrow[j] += aik * grow[j];
                  }
              }
            });
  return result;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected 2-D tensor, got " + shape_str(a.shape()));
  const int p = a.dim(0), q = a.dim(1);
  std::vector<double> out(static_cast<size_t>(p) * q);
  const auto& ad = a.data();
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) out[j * p + i] = ad[i * q + j];
  bool rg = a.requires_grad();
  Tensor result = op_output({q, p}, std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), on = result.node_ptr(), p, q](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              auto& ga = ctx.grad_of(an.get());
              for (int j = 0; j < q; ++j)
                for (int i = 0; i < p; ++i) ga[i * q + j] += gout[j * p + i];
            });
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor result = op_output(a.shape(), std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr()](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              if (an->requires_grad) {
                auto& ga = ctx.grad_of(an.get());
                for (size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
              }
              if (bn->requires_grad) {
                auto& gb = ctx.grad_of(bn.get());
                for (size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i];
              }
            });
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor result = op_output(a.shape(), std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr()](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              if (an->requires_grad) {
                auto& ga = ctx.grad_of(an.get());
                for (size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
              }
              if (bn->requires_grad) {
                auto& gb = ctx.grad_of(bn.get());
                for (size_t i = 0; i < gout.size(); ++i) gb[i] -= gout[i];
              }
            });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor result = op_output(a.shape(), std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr()](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              if (an->requires_grad) {
                auto& ga = ctx.grad_of(an.get());
                for (size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * bn->data[i];
              }
              if (bn->requires_grad) {
                auto& gb = ctx.grad_of(bn.get());
                for (size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i] * an->data[i];
              }
            });
  return result;
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= s;
  bool rg = a.requires_grad();
  Tensor result = op_output(a.shape(), std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), on = result.node_ptr(), s](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              auto& ga = ctx.grad_of(an.get());
              for (size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * s;
            });
  return result;
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v += s;
  bool rg = a.requires_grad();
  Tensor result = op_output(a.shape(), std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), on = result.node_ptr()](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              auto& ga = ctx.grad_of(an.get());
              for (size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
            });
  return result;
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.rank() != 1 || v.dim(0) != m.dim(1)) {
    throw DimensionError("add_rowvec: want [p,q] + [q], got " +
                         shape_str(m.shape()) + " + " + shape_str(v.shape()));
  }
  const int p = m.dim(0), q = m.dim(1);
  std::vector<double> out(m.data());
  const auto& vd = v.data();
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) out[i * q + j] += vd[j];
  bool rg = m.requires_grad() || v.requires_grad();
  Tensor result = op_output(m.shape(), std::move(out), rg);
  record_if(rg, result,
            [mn = m.node_ptr(), vn = v.node_ptr(), on = result.node_ptr(), p, q](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              if (mn->requires_grad) {
                auto& gm = ctx.grad_of(mn.get());
                for (size_t i = 0; i < gout.size(); ++i) gm[i] += gout[i];
              }
              if (vn->requires_grad) {
                auto& gv = ctx.grad_of(vn.get());
                for (int i = 0; i < p; ++i)
                  for (int j = 0; j < q; ++j) gv[j] += gout[i * q + j];
              }
            });
  return result;
}

Tensor add_channel_bias(const Tensor& t, const Tensor& b) {
  if (t.rank() < 1 || b.rank() != 1 || b.dim(0) != t.dim(0)) {
    throw DimensionError("add_channel_bias: want [c,...] + [c], got " +
                         shape_str(t.shape()) + " + " + shape_str(b.shape()));
  }
  const int c = t.dim(0);
  const int64_t inner = t.size() / c;
  std::vector<double> out(t.data());
  const auto& bd = b.data();
  for (int ch = 0; ch < c; ++ch) {
    double* row = &out[ch * inner];
    for (int64_t i = 0; i < inner; ++i) row[i] += bd[ch];
  }
  bool rg = t.requires_grad() || b.requires_grad();
  Tensor result = op_output(t.shape(), std::move(out), rg);
  record_if(rg, result,
            [tn = t.node_ptr(), bn = b.node_ptr(), on = result.node_ptr(), c,
             inner](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              if (tn->requires_grad) {
                auto& gt = ctx.grad_of(tn.get());
                for (size_t i = 0; i < gout.size(); ++i) gt[i] += gout[i];
              }
              if (bn->requires_grad) {
                auto& gb = ctx.grad_of(bn.get());
                for (int ch = 0; ch < c; ++ch) {
                  double s = 0.0;
                  const double* row = &gout[ch * inner];
                  for (int64_t i = 0; i < inner; ++i) s += row[i];
                  gb[ch] += s;
                }
              }
            });
  return result;
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  bool rg = a.requires_grad();
  Tensor result = op_output(a.shape(), std::move(out), rg);
  record_if(rg, result,
            [an = a.node_ptr(), on = result.node_ptr()](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              auto& ga = ctx.grad_of(an.get());
              for (size_t i = 0; i < gout.size(); ++i)
                if (an->data[i] > 0.0) ga[i] += gout[i];
            });
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const auto& base = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(base.size())) {
    throw DimensionError("concat: axis out of range");
  }
  std::vector<int> out_shape = base;
  int total_axis = 0;
  for (const Tensor& t : parts) {
    const auto& s = t.shape();
    if (s.size() != base.size()) throw DimensionError("concat: rank mismatch");
    for (size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != base[d]) {
        throw DimensionError("concat: shape mismatch off-axis " + shape_str(s) +
                             " vs " + shape_str(base));
      }
    }
    total_axis += s[axis];
  }
  out_shape[axis] = total_axis;

  // outer x axis x inner decomposition
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= base[d];
  for (size_t d = axis + 1; d < base.size(); ++d) inner *= base[d];

  std::vector<double> out(shape_size(out_shape));
  bool rg = false;
  int64_t offset = 0;  // in axis units
  for (const Tensor& t : parts) {
    rg = rg || t.requires_grad();
    const int a = t.dim(axis);
    const auto& td = t.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(td.begin() + o * a * inner, td.begin() + (o + 1) * a * inner,
                out.begin() + (o * total_axis + offset) * inner);
    }
    offset += a;
  }

  Tensor result = op_output(std::move(out_shape), std::move(out), rg);
  if (rg) {
    std::vector<std::shared_ptr<Node>> in_nodes;
    std::vector<int> axis_sizes;
    for (const Tensor& t : parts) {
      in_nodes.push_back(t.node_ptr());
      axis_sizes.push_back(t.dim(axis));
    }
    record_if(rg, result,
              [in_nodes, axis_sizes, on = result.node_ptr(), outer, inner,
               total_axis](BackwardCtx& ctx) {
                const std::vector<double> gout = ctx.grad_of(on.get());
                int64_t offset = 0;
                for (size_t p = 0; p < in_nodes.size(); ++p) {
                  const int a = axis_sizes[p];
                  if (in_nodes[p]->requires_grad) {
                    auto& gp = ctx.grad_of(in_nodes[p].get());
                    for (int64_t o = 0; o < outer; ++o) {
                      const double* src = &gout[(o * total_axis + offset) * inner];
                      double* dst = &gp[o * a * inner];
                      for (int64_t i = 0; i < a * inner; ++i) dst[i] += src[i];
                    }
                  }
                  offset += a;
                }
              });
  }
  return result;
}

Tensor reshape(const Tensor& t, std::vector<int> shape) {
  if (shape_size(shape) != t.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(t.shape()) +
                         " as " + shape_str(shape));
  }
  bool rg = t.requires_grad();
  Tensor result = op_output(std::move(shape), std::vector<double>(t.data()), rg);
  record_if(rg, result,
            [tn = t.node_ptr(), on = result.node_ptr()](BackwardCtx& ctx) {
              const std::vector<double> gout = ctx.grad_of(on.get());
              auto& gt = ctx.grad_of(tn.get());
              for (size_t i = 0; i < gout.size(); ++i) gt[i] += gout[i];
            });
  return result;
}

Tensor sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  bool rg = t.requires_grad();
  Tensor result = op_output({1}, {s}, rg);
  record_if(rg, result,
            [tn = t.node_ptr(), on = result.node_ptr()](BackwardCtx& ctx) {
              const double g = ctx.grad_of(on.get())[0];
              auto& gt = ctx.grad_of(tn.get());
              for (size_t i = 0; i < gt.size(); ++i) gt[i] += g;
            });
  return result;
}

Tensor mean(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  const double n = static_cast<double>(t.size());
  bool rg = t.requires_grad();
  Tensor result = op_output({1}, {s / n}, rg);
  record_if(rg, result,
            [tn = t.node_ptr(), on = result.node_ptr(), n](BackwardCtx& ctx) {
              const double g = ctx.grad_of(on.get())[0] / n;
              auto& gt = ctx.grad_of(tn.get());
              for (size_t i = 0; i < gt.size(); ++i) gt[i] += g;
            });
  return result;
}

}  // namespace pcn

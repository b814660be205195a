#pragma once

#include <optional>
#include <vector>

#include "pcn/tensor.hpp"

namespace pcn {

// All ops are differentiable w.r.t. their tensor inputs unless noted.
// Shapes must match exactly; the only broadcasting is scalar-vs-tensor
// (scale / add_scalar) plus the two explicit bias helpers below.

Tensor matmul(const Tensor& a, const Tensor& b);  // [p,q]x[q,r] -> [p,r]
Tensor transpose(const Tensor& a);                // 2-D only

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// out[i, j] = m[i, j] + v[j]  (v broadcast over rows)
Tensor add_rowvec(const Tensor& m, const Tensor& v);
// out[c, ...] = t[c, ...] + b[c]  (b broadcast over everything after dim 0)
Tensor add_channel_bias(const Tensor& t, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);

// scores [c, n], target [n] of integral class ids. Mean over non-ignored
// pixels of weighted -log softmax(score)[target]; weight normalization uses
// the sum of applied weights so uniform weights match the unweighted loss.
Tensor cross_entropy(const Tensor& scores, const Tensor& target,
                     const std::optional<Tensor>& class_weights = std::nullopt,
                     std::optional<int> ignore_id = std::nullopt);

// input [cin, h, w], kernel [cout, cin, k, k]; zero padding, k in {1, 3}.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding,
              int stride);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& t, std::vector<int> shape);

// [c, h, w] -> [c, bins_h, bins_w]; PyTorch-style uneven partitions.
Tensor adaptive_avg_pool(const Tensor& t, int bins_h, int bins_w);
// [c, h, w] -> [c, h*factor, w*factor]
Tensor upsample_nearest(const Tensor& t, int factor);

Tensor sum(const Tensor& t);   // -> scalar
Tensor mean(const Tensor& t);  // -> scalar

}  // namespace pcn

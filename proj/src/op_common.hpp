#pragma once

#include <utility>

#include "pcn/tensor.hpp"

namespace pcn::detail {

inline Tensor op_output(std::vector<int> shape, std::vector<double> data,
                        bool requires_grad) {
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

// Records the entry only when gradient can flow; pure inference stays off
// the tape entirely.
template <typename Fn>
inline void record_if(bool requires_grad, const Tensor& out, Fn&& fn) {
  if (!requires_grad) return;
  Tape::current().record(out.node_ptr(), std::forward<Fn>(fn));
}

}  // namespace pcn::detail

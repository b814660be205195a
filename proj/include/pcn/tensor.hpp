#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "pcn/errors.hpp"

namespace pcn {

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data once used
  bool requires_grad = false;
  int64_t id = -1;
  // Scratch bookkeeping owned by BackwardCtx (generation-stamped slot index).
  int64_t scratch_gen = -1;
  size_t scratch_slot = 0;
};

}  // namespace detail

// Dense row-major double tensor. Values are immutable after construction
// except through mutable_data() (optimizer / loader paths) and the grad
// buffer. Copies are shared handles to the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  int64_t size() const;

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();
  double value() const;  // scalar tensors only
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);

  // Gradient buffer; zeros until backward() touches this node.
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();

  int64_t node_id() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_tensor(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad);
};

Tensor make_tensor(std::vector<int> shape, std::vector<double> data,
                   bool requires_grad);

int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// -------- reverse-mode tape --------
//
// Ops append an entry onto the thread-local tape whenever at least one input
// requires grad. backward(loss) sweeps the tape in reverse, using scratch
// buffers for propagation and then adding results into each grad-requiring
// node's grad buffer (so repeated backward calls accumulate on leaves).

class BackwardCtx {
 public:
  BackwardCtx();

  // Scratch gradient for a node, zero-initialized on first access.
  std::vector<double>& grad_of(detail::Node* n);
  // Null if the node was never reached (nothing flows into it).
  const std::vector<double>* find_grad(detail::Node* n) const;

 private:
  friend void backward(const Tensor& loss);
  // deque: references handed out by grad_of stay valid as slots are added
  std::deque<std::pair<detail::Node*, std::vector<double>>> slots_;
  int64_t generation_;
};

struct TapeEntry {
  std::shared_ptr<detail::Node> out;
  std::function<void(BackwardCtx&)> backward_fn;
};

class Tape {
 public:
  static Tape& current();  // thread-local
  void reset();
  size_t size() const { return entries_.size(); }
  void record(std::shared_ptr<detail::Node> out,
              std::function<void(BackwardCtx&)> fn);
  int64_t next_id() { return next_id_++; }

 private:
  friend void backward(const Tensor& loss);
  std::vector<TapeEntry> entries_;
  int64_t next_id_ = 0;
};

// Populates grads of every grad-requiring node reachable from `loss`.
void backward(const Tensor& loss);

}  // namespace pcn

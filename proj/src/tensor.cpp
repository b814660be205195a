#include "pcn/tensor.hpp"

#include <sstream>

namespace pcn {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor make_tensor(std::vector<int> shape, std::vector<double> data,
                   bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = Tape::current().next_id();
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(std::vector<int> shape) {
  int64_t n = shape_size(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0), false);
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  int64_t n = shape_size(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value), false);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
  return make_tensor(std::move(shape), std::move(data), false);
}

Tensor Tensor::scalar(double value) { return make_tensor({1}, {value}, false); }

const std::vector<int>& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

int Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

int64_t Tensor::size() const { return static_cast<int64_t>(data().size()); }

const std::vector<double>& Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

double Tensor::value() const {
  if (size() != 1) throw ContractError("value() requires a scalar tensor, got " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const auto& s = shape();
  if (idx.size() != s.size()) throw DimensionError("index rank mismatch");
  int64_t flat = 0;
  int axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[axis]) throw DimensionError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return data()[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->requires_grad = v;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_) throw ContractError("use of undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  if (!node_) throw ContractError("use of undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->grad.assign(node_->data.size(), 0.0);
}

int64_t Tensor::node_id() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->id;
}

// -------- tape --------

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::reset() { entries_.clear(); }

void Tape::record(std::shared_ptr<detail::Node> out,
                  std::function<void(BackwardCtx&)> fn) {
  entries_.push_back({std::move(out), std::move(fn)});
}

namespace {
int64_t next_backward_generation() {
  thread_local int64_t gen = 0;
  return ++gen;
}
}  // namespace

BackwardCtx::BackwardCtx() : generation_(next_backward_generation()) {}

std::vector<double>& BackwardCtx::grad_of(detail::Node* n) {
  if (n->scratch_gen != generation_) {
    n->scratch_gen = generation_;
    n->scratch_slot = slots_.size();
    slots_.emplace_back(n, std::vector<double>(n->data.size(), 0.0));
  }
  return slots_[n->scratch_slot].second;
}

const std::vector<double>* BackwardCtx::find_grad(detail::Node* n) const {
  if (n->scratch_gen != generation_) return nullptr;
  return &slots_[n->scratch_slot].second;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  }
  Tape& tape = Tape::current();
  BackwardCtx ctx;
  ctx.grad_of(loss.node())[0] = 1.0;

  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    // Entries whose output never received gradient contribute nothing.
    if (ctx.find_grad(it->out.get()) == nullptr) continue;
    it->backward_fn(ctx);
  }

  // Publish additively into every grad-requiring node that was reached.
  for (auto& [node, g] : ctx.slots_) {
    if (!node->requires_grad) continue;
    if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
  }
}

}  // namespace pcn

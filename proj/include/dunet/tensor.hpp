#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dunet {

using Index = Eigen::Index;

/// (N, C, H, W); row-major with W fastest.
using Shape = std::array<Index, 4>;

inline Index numel(const Shape& s) { return s[0] * s[1] * s[2] * s[3]; }

std::string to_string(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

namespace detail {

template <typename Scalar>
struct TensorNode {
  Shape shape{0, 0, 0, 0};
  Vector<Scalar> value;
  Vector<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::int64_t tape_index = -1;
  std::uint64_t tape_generation = 0;

  Vector<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vector<Scalar>::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

template <typename Scalar>
class Tape;

/// Dense rank-4 tensor handle. Copies share storage; use clone() for a deep copy.
template <typename Scalar>
class Tensor {
 public:
  using Node = detail::TensorNode<Scalar>;
  using VectorType = Vector<Scalar>;
  using MapType = Eigen::Map<VectorType>;
  using ConstMapType = Eigen::Map<const VectorType>;

  Tensor() : node_(std::make_shared<Node>()) {}

  explicit Tensor(const Shape& shape, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    for (Index d : shape) {
      if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    }
    node_->shape = shape;
    node_->value = VectorType::Zero(numel(shape));
    node_->requires_grad = requires_grad;
  }

  Tensor(const Shape& shape, VectorType values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (values.size() != numel(shape)) {
      throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                       to_string(shape));
    }
    node_->shape = shape;
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor constant(const Shape& shape, Scalar v) {
    return Tensor(shape, VectorType::Constant(numel(shape), v));
  }
  static Tensor from(const Shape& shape, std::initializer_list<Scalar> values) {
    VectorType v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar x : values) v[i++] = x;
    return Tensor(shape, std::move(v));
  }

  const Shape& shape() const { return node_->shape; }
  Index n() const { return node_->shape[0]; }
  Index c() const { return node_->shape[1]; }
  Index h() const { return node_->shape[2]; }
  Index w() const { return node_->shape[3]; }
  Index size() const { return node_->value.size(); }
  bool empty() const { return size() == 0; }

  Scalar* data() { return node_->value.data(); }
  const Scalar* data() const { return node_->value.data(); }
  VectorType& values() { return node_->value; }
  const VectorType& values() const { return node_->value; }

  Index offset(Index n, Index c, Index y, Index x) const {
    const Shape& s = node_->shape;
    return ((n * s[1] + c) * s[2] + y) * s[3] + x;
  }
  Scalar& at(Index n, Index c, Index y, Index x) { return node_->value[offset(n, c, y, x)]; }
  Scalar at(Index n, Index c, Index y, Index x) const { return node_->value[offset(n, c, y, x)]; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && size() > 0; }
  /// Gradient buffer; zeros if no gradient has been accumulated yet.
  const VectorType& grad() const { return node_->grad_buffer(); }
  VectorType& grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0); }

  /// Same values, fresh storage, detached from any tape.
  Tensor clone() const {
    Tensor t(shape(), node_->value);
    return t;
  }

  /// Same storage viewed with a different shape of equal element count; untracked.
  Tensor reshaped(const Shape& s) const {
    if (numel(s) != size()) throw ShapeError("cannot reshape " + to_string(shape()) + " to " + to_string(s));
    Tensor t(s, node_->value);
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), node_->value.template cast<Other>());
  }

  bool same_storage(const Tensor& o) const { return node_ == o.node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend class Tape<Scalar>;
  std::shared_ptr<Node> node_;
};

/// Append-only record of differentiable operations for one thread.
///
/// Every op whose output requires a gradient appends one entry. backward()
/// walks the entries in reverse from the loss and then clears the tape, so a
/// recorded forward pass can be differentiated exactly once.
template <typename Scalar>
class Tape {
 public:
  using Node = detail::TensorNode<Scalar>;
  using NodePtr = std::shared_ptr<Node>;
  /// Reads the output gradient and accumulates into the inputs' grad buffers.
  using BackwardFn = std::function<void(const Vector<Scalar>& grad_out)>;

  struct Entry {
    std::string kind;
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };

  static Tape& active() {
    thread_local Tape tape;
    return tape;
  }

  bool recording() const { return enabled_; }

  bool wants_grad(std::initializer_list<const Tensor<Scalar>*> inputs) const {
    if (!enabled_) return false;
    for (const auto* t : inputs) {
      if (t->requires_grad()) return true;
    }
    return false;
  }

  /// Attaches `output` to the tape as the result of `kind` applied to `inputs`.
  void record(std::string_view kind, std::vector<Tensor<Scalar>> inputs, Tensor<Scalar>& output,
              BackwardFn backward) {
    Entry e;
    e.kind = std::string(kind);
    e.inputs.reserve(inputs.size());
    for (auto& t : inputs) e.inputs.push_back(t.node_);
    e.output = output.node_;
    e.backward = std::move(backward);
    output.node_->requires_grad = true;
    output.node_->tape_index = static_cast<std::int64_t>(entries_.size());
    output.node_->tape_generation = generation_;
    entries_.push_back(std::move(e));
  }

  /// Reverse-mode sweep from a scalar loss; consumes the tape.
  void backward(const Tensor<Scalar>& loss) {
    if (loss.size() != 1) {
      throw AutodiffError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
    }
    const auto& node = loss.node_;
    if (node->tape_index < 0 || node->tape_generation != generation_ ||
        node->tape_index >= static_cast<std::int64_t>(entries_.size()) ||
        entries_[static_cast<std::size_t>(node->tape_index)].output != node) {
      throw AutodiffError("backward() called on a loss that is not on the active tape");
    }
    node->grad_buffer().array() += Scalar(1);
    for (std::int64_t i = node->tape_index; i >= 0; --i) {
      Entry& e = entries_[static_cast<std::size_t>(i)];
      if (e.output->grad.size() == 0) continue;
      e.backward(e.output->grad);
    }
    clear();
  }

  void clear() {
    entries_.clear();
    ++generation_;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  template <typename S>
  friend class NoGradGuard;
  std::vector<Entry> entries_;
  std::uint64_t generation_ = 1;
  bool enabled_ = true;
};

/// Disables recording on the active tape for its lifetime.
template <typename Scalar>
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape<Scalar>::active().enabled_) { Tape<Scalar>::active().enabled_ = false; }
  ~NoGradGuard() { Tape<Scalar>::active().enabled_ = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>::active().backward(loss);
}

/// Adds `g` into the gradient buffer of a tape input when it takes part in differentiation.
template <typename Scalar, typename Fn>
void accumulate_if(const std::shared_ptr<detail::TensorNode<Scalar>>& node, Fn&& fn) {
  if (node->requires_grad) fn(node->grad_buffer());
}

/// Named trainable tensor.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
};

}  // namespace dunet

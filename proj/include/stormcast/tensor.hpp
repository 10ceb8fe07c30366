#pragma once

// Rank-4 double-precision tensors with tape-free reverse-mode autodiff.
//
// Every op that consumes a tensor requiring gradients records a node holding
// its inputs and a backward closure. backward() sorts the reachable nodes
// topologically and replays each closure exactly once, accumulating
// gradients into the inputs (fan-out sums naturally).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stormcast {

struct Shape {
  std::size_t n = 0;  // batch (or output filters for weights)
  std::size_t c = 0;  // channels
  std::size_t h = 0;  // rows
  std::size_t w = 0;  // cols

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows in
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  // Mutable access is meant for parameter updates and test setup; editing a
  // tensor that is already part of a recorded graph invalidates its gradients.
  std::span<double> mutable_values() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  double item() const;
  double at(std::size_t b, std::size_t ch, std::size_t r, std::size_t col) const {
    const Shape& s = shape();
    return node_->value[((b * s.c + ch) * s.h + r) * s.w + col];
  }

  // Detached deep copy (no graph, no grad).
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Gradient recording is on by default; a guard disables it for the current
// thread (inference, evaluation).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Populates grad() of every reachable leaf that requires gradients. The loss
// must hold exactly one value. The recorded graph is released afterwards.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Layer ops

// Zero-padded cross-correlation. weight is [N, M, k, k] with k in {1, 3};
// bias, when defined, is [1, N, 1, 1]. Spatial dims are preserved.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// 2x2 max pooling with stride two; gradient goes to the first argmax.
Tensor maxpool2(const Tensor& x);

// Bilinear x2 upsampling, half-pixel centres, edge clamped.
Tensor upsample_bilinear2(const Tensor& x);

struct BatchNormState {
  Tensor gamma;  // [1, C, 1, 1]
  Tensor beta;   // [1, C, 1, 1]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;  // running stats updated at least once
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormState make(std::size_t channels);
};

// Training mode normalizes with batch statistics over (B, H, W) and updates
// the running averages (unbiased variance); inference mode uses the running
// averages and throws Errc::uninitialized if they were never updated.
Tensor batchnorm2d(const Tensor& x, BatchNormState& state, bool training);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor concat_channels(std::span<const Tensor> xs);
Tensor concat_channels(std::initializer_list<Tensor> xs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);

// Mean over all elements of
//   -(p * y * log(sigmoid(x)) + (1 - y) * log(1 - sigmoid(x)))
// evaluated through softplus so saturated logits stay finite. targets must be
// 0 or 1 and carry no gradient.
Tensor weighted_bce(const Tensor& logits, const Tensor& targets, double pos_weight);

}  // namespace stormcast

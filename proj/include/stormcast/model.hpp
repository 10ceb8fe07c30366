#pragma once

// Nested-skip encoder/decoder (UNet++ topology, depth 4) built from either
// residual blocks or plain double-conv blocks, with 1x1 heads on the three
// top-row decoder nodes for deep supervision.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stormcast/tensor.hpp"

namespace stormcast {

enum class Variant { runetpp, unetpp };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);  // Errc::invalid_argument on unknown names

enum class Mode { training, inference };

struct ModelConfig {
  Variant variant = Variant::runetpp;
  std::size_t base_width = 16;
  std::size_t in_channels = 10;
  std::uint64_t seed = 0;
};

struct NodeId {
  int depth = 0;   // i: 0 (full resolution) .. 3
  int column = 0;  // j: position along the nested skip pathway
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

std::string node_name(NodeId id);  // "R0_1"

struct NodeSpec {
  NodeId id;
  std::size_t width = 0;     // N
  std::size_t in_width = 0;  // M, sum of in-edge widths
  std::vector<NodeId> skips;        // same depth, earlier columns (concat first, increasing j)
  std::optional<NodeId> down_from;  // max-pooled input (column 0 only)
  std::optional<NodeId> up_from;    // upsampled input (concat last)
};

struct Edge {
  NodeId from;
  NodeId to;
};

class NodeGraph {
 public:
  static constexpr int kDepth = 4;

  NodeGraph(std::size_t base_width, std::size_t in_channels);

  // Nodes in evaluation order: column-major by j, then depth i.
  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const NodeSpec& node(NodeId id) const;
  std::vector<Edge> down_edges() const;
  std::vector<Edge> up_edges() const;
  std::vector<Edge> skip_edges() const;
  std::size_t in_degree(NodeId id) const;

  // Output shape of every head for an input shape, without evaluating
  // anything. Throws Errc::shape if H or W is not divisible by 8.
  Shape output_shape(const Shape& input) const;

 private:
  std::vector<NodeSpec> nodes_;
};

struct Conv {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [1, out, 1, 1]
};

// Residual variant: fusion (1x1, M->N) -> conv1 (3x3) -> bn1 -> relu -> conv2
// (3x3) -> bn2, plus the fusion output, then relu. Plain variant has no
// fusion and conv1 maps M->N directly; its output is relu(bn2(conv2(...))).
struct BlockParams {
  Variant variant = Variant::runetpp;
  std::size_t in_width = 0;
  std::size_t width = 0;
  Conv fusion;
  Conv conv1;
  Conv conv2;
  BatchNormState bn1;
  BatchNormState bn2;
};

BlockParams make_block(Variant variant, std::size_t in_width, std::size_t width);

Tensor residual_block(const Tensor& x, BlockParams& p, Mode mode);
Tensor plain_block(const Tensor& x, BlockParams& p, Mode mode);

// Learnable-scalar count of one block, by construction of its tensors.
std::size_t count_parameters(const BlockParams& p);

enum class ParamKind { conv_weight, bias, bn_affine };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const NodeGraph& graph() const { return graph_; }

  // Training mode returns logits of heads F0_1, F0_2, F0_3 (in that order);
  // inference mode returns only F0_3 and records no gradients.
  std::vector<Tensor> forward(const Tensor& x, Mode mode);

  // Input channel count seen by each node during the last forward, in
  // evaluation order.
  const std::vector<std::size_t>& observed_in_widths() const { return observed_in_widths_; }

  std::vector<NamedParam> parameters();
  std::vector<NamedBuffer> buffers();
  std::size_t count_parameters() const;

  // Re-draws every parameter from the seed: conv weights ~ N(0, 2/fan_in),
  // zero biases, unit gamma, zero beta, fresh running statistics.
  void init_params(std::uint64_t seed);

  void zero_grad();
  bool batchnorm_initialized() const;
  void mark_batchnorm_initialized();

  BlockParams& block(NodeId id);
  Conv& head(int column);  // column in {1, 2, 3}

 private:
  ModelConfig config_;
  NodeGraph graph_;
  std::vector<BlockParams> blocks_;  // parallel to graph_.nodes()
  std::vector<Conv> heads_;          // F0_1, F0_2, F0_3
  std::vector<std::size_t> observed_in_widths_;
};

}  // namespace stormcast

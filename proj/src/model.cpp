#include "stormcast/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "stormcast/error.hpp"

namespace stormcast {

std::string_view to_string(Variant v) { return v == Variant::runetpp ? "runetpp" : "unetpp"; }

Variant parse_variant(std::string_view text) {
  if (text == "runetpp") return Variant::runetpp;
  if (text == "unetpp") return Variant::unetpp;
  throw Error(Errc::invalid_argument, "unknown variant '" + std::string(text) + "' (runetpp|unetpp)");
}

std::string node_name(NodeId id) { return "R" + std::to_string(id.depth) + "_" + std::to_string(id.column); }

// ---------------------------------------------------------------------------

NodeGraph::NodeGraph(std::size_t base_width, std::size_t in_channels) {
  if (base_width < 1) throw Error(Errc::invalid_argument, "base_width must be >= 1");
  auto width = [&](int depth) { return base_width << depth; };
  for (int j = 0; j < kDepth; ++j) {
    for (int i = 0; i + j < kDepth; ++i) {
      NodeSpec spec;
      spec.id = {i, j};
      spec.width = width(i);
      if (j == 0) {
        if (i == 0) {
          spec.in_width = in_channels;
        } else {
          spec.down_from = NodeId{i - 1, 0};
          spec.in_width = width(i - 1);
        }
      } else {
        for (int k = 0; k < j; ++k) spec.skips.push_back({i, k});
        spec.up_from = NodeId{i + 1, j - 1};
        spec.in_width = static_cast<std::size_t>(j) * width(i) + width(i + 1);
      }
      nodes_.push_back(std::move(spec));
    }
  }
}

const NodeSpec& NodeGraph::node(NodeId id) const {
  auto it = std::find_if(nodes_.begin(), nodes_.end(), [&](const NodeSpec& s) { return s.id == id; });
  if (it == nodes_.end()) throw Error(Errc::invalid_argument, "no node " + node_name(id));
  return *it;
}

std::vector<Edge> NodeGraph::down_edges() const {
  std::vector<Edge> edges;
  for (const NodeSpec& s : nodes_)
    if (s.down_from) edges.push_back({*s.down_from, s.id});
  return edges;
}

std::vector<Edge> NodeGraph::up_edges() const {
  std::vector<Edge> edges;
  for (const NodeSpec& s : nodes_)
    if (s.up_from) edges.push_back({*s.up_from, s.id});
  return edges;
}

std::vector<Edge> NodeGraph::skip_edges() const {
  std::vector<Edge> edges;
  for (const NodeSpec& s : nodes_)
    for (NodeId from : s.skips) edges.push_back({from, s.id});
  return edges;
}

std::size_t NodeGraph::in_degree(NodeId id) const {
  const NodeSpec& s = node(id);
  return s.skips.size() + (s.down_from ? 1 : 0) + (s.up_from ? 1 : 0);
}

Shape NodeGraph::output_shape(const Shape& input) const {
  constexpr std::size_t factor = 1u << (kDepth - 1);
  if (input.h % factor != 0 || input.w % factor != 0)
    throw Error(Errc::shape, "input H and W must be divisible by " + std::to_string(factor) + ", got " +
                                 to_string(input));
  if (input.c != nodes_.front().in_width)
    throw Error(Errc::shape, "model expects " + std::to_string(nodes_.front().in_width) + " input channels, got " +
                                 to_string(input));
  return {input.n, 1, input.h, input.w};
}

// ---------------------------------------------------------------------------

namespace {

Conv make_conv(std::size_t in, std::size_t out, std::size_t k) {
  return {Tensor::zeros({out, in, k, k}, true), Tensor::zeros({1, out, 1, 1}, true)};
}

void check_input(const Tensor& x, const BlockParams& p) {
  if (x.shape().c != p.in_width)
    throw Error(Errc::shape, "block expects " + std::to_string(p.in_width) + " input channels, got " +
                                 to_string(x.shape()));
}

bool training(Mode m) { return m == Mode::training; }

}  // namespace

BlockParams make_block(Variant variant, std::size_t in_width, std::size_t width) {
  BlockParams p;
  p.variant = variant;
  p.in_width = in_width;
  p.width = width;
  if (variant == Variant::runetpp) {
    p.fusion = make_conv(in_width, width, 1);
    p.conv1 = make_conv(width, width, 3);
  } else {
    p.conv1 = make_conv(in_width, width, 3);
  }
  p.conv2 = make_conv(width, width, 3);
  p.bn1 = BatchNormState::make(width);
  p.bn2 = BatchNormState::make(width);
  return p;
}

Tensor residual_block(const Tensor& x, BlockParams& p, Mode mode) {
  if (p.variant != Variant::runetpp) throw Error(Errc::invalid_argument, "residual_block needs residual params");
  check_input(x, p);
  const Tensor s = conv2d(x, p.fusion.weight, p.fusion.bias);
  Tensor y = relu(batchnorm2d(conv2d(s, p.conv1.weight, p.conv1.bias), p.bn1, training(mode)));
  y = batchnorm2d(conv2d(y, p.conv2.weight, p.conv2.bias), p.bn2, training(mode));
  return relu(add(y, s));
}

Tensor plain_block(const Tensor& x, BlockParams& p, Mode mode) {
  if (p.variant != Variant::unetpp) throw Error(Errc::invalid_argument, "plain_block needs plain params");
  check_input(x, p);
  Tensor y = relu(batchnorm2d(conv2d(x, p.conv1.weight, p.conv1.bias), p.bn1, training(mode)));
  return relu(batchnorm2d(conv2d(y, p.conv2.weight, p.conv2.bias), p.bn2, training(mode)));
}

std::size_t count_parameters(const BlockParams& p) {
  std::size_t n = 0;
  for (const Conv* c : {&p.fusion, &p.conv1, &p.conv2})
    if (c->weight.defined()) n += c->weight.size() + c->bias.size();
  for (const BatchNormState* bn : {&p.bn1, &p.bn2}) n += bn->gamma.size() + bn->beta.size();
  return n;
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& config) : config_(config), graph_(config.base_width, config.in_channels) {
  for (const NodeSpec& s : graph_.nodes()) blocks_.push_back(make_block(config.variant, s.in_width, s.width));
  for (int j = 1; j < NodeGraph::kDepth; ++j) heads_.push_back(make_conv(config.base_width, 1, 1));
  init_params(config.seed);
}

BlockParams& Model::block(NodeId id) {
  const auto& nodes = graph_.nodes();
  for (std::size_t k = 0; k < nodes.size(); ++k)
    if (nodes[k].id == id) return blocks_[k];
  throw Error(Errc::invalid_argument, "no node " + node_name(id));
}

Conv& Model::head(int column) {
  if (column < 1 || column >= NodeGraph::kDepth) throw Error(Errc::invalid_argument, "no head F0_" + std::to_string(column));
  return heads_[static_cast<std::size_t>(column - 1)];
}

std::vector<Tensor> Model::forward(const Tensor& x, Mode mode) {
  graph_.output_shape(x.shape());
  std::optional<NoGradGuard> no_grad;
  if (mode == Mode::inference) no_grad.emplace();

  const auto& nodes = graph_.nodes();
  std::vector<Tensor> outputs(nodes.size());
  auto output_of = [&](NodeId id) -> const Tensor& {
    for (std::size_t k = 0; k < nodes.size(); ++k)
      if (nodes[k].id == id) return outputs[k];
    throw Error(Errc::invalid_argument, "no node " + node_name(id));
  };

  observed_in_widths_.clear();
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const NodeSpec& spec = nodes[k];
    Tensor in;
    if (spec.id.depth == 0 && spec.id.column == 0) {
      in = x;
    } else if (spec.down_from) {
      in = maxpool2(output_of(*spec.down_from));
    } else {
      std::vector<Tensor> parts;
      for (NodeId s : spec.skips) parts.push_back(output_of(s));
      parts.push_back(upsample_bilinear2(output_of(*spec.up_from)));
      in = concat_channels(parts);
    }
    observed_in_widths_.push_back(in.shape().c);
    BlockParams& p = blocks_[k];
    outputs[k] = p.variant == Variant::runetpp ? residual_block(in, p, mode) : plain_block(in, p, mode);
  }

  std::vector<Tensor> heads;
  const int first = mode == Mode::training ? 1 : NodeGraph::kDepth - 1;
  for (int j = first; j < NodeGraph::kDepth; ++j) {
    const Conv& h = heads_[static_cast<std::size_t>(j - 1)];
    heads.push_back(conv2d(output_of({0, j}), h.weight, h.bias));
  }
  return heads;
}

std::vector<NamedParam> Model::parameters() {
  std::vector<NamedParam> out;
  auto conv = [&](const std::string& prefix, Conv& c) {
    if (!c.weight.defined()) return;
    out.push_back({prefix + ".weight", c.weight, ParamKind::conv_weight});
    out.push_back({prefix + ".bias", c.bias, ParamKind::bias});
  };
  auto bn = [&](const std::string& prefix, BatchNormState& s) {
    out.push_back({prefix + ".gamma", s.gamma, ParamKind::bn_affine});
    out.push_back({prefix + ".beta", s.beta, ParamKind::bn_affine});
  };
  const auto& nodes = graph_.nodes();
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const std::string name = node_name(nodes[k].id);
    BlockParams& p = blocks_[k];
    conv(name + ".fusion", p.fusion);
    conv(name + ".conv1", p.conv1);
    bn(name + ".bn1", p.bn1);
    conv(name + ".conv2", p.conv2);
    bn(name + ".bn2", p.bn2);
  }
  for (int j = 1; j < NodeGraph::kDepth; ++j) conv("F0_" + std::to_string(j), heads_[static_cast<std::size_t>(j - 1)]);
  return out;
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedBuffer> out;
  const auto& nodes = graph_.nodes();
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const std::string name = node_name(nodes[k].id);
    for (auto [suffix, bn] : {std::pair{".bn1", &blocks_[k].bn1}, std::pair{".bn2", &blocks_[k].bn2}}) {
      out.push_back({name + suffix + ".running_mean", &bn->running_mean});
      out.push_back({name + suffix + ".running_var", &bn->running_var});
    }
  }
  return out;
}

std::size_t Model::count_parameters() const {
  std::size_t n = 0;
  for (const BlockParams& b : blocks_) n += stormcast::count_parameters(b);
  for (const Conv& h : heads_) n += h.weight.size() + h.bias.size();
  return n;
}

void Model::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (NamedParam& p : parameters()) {
    auto values = p.tensor.mutable_values();
    switch (p.kind) {
      case ParamKind::conv_weight: {
        const Shape s = p.tensor.shape();
        const double fan_in = static_cast<double>(s.c * s.h * s.w);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (double& v : values) v = dist(rng);
        break;
      }
      case ParamKind::bias:
        std::fill(values.begin(), values.end(), 0.0);
        break;
      case ParamKind::bn_affine:
        std::fill(values.begin(), values.end(), p.name.ends_with(".gamma") ? 1.0 : 0.0);
        break;
    }
    p.tensor.zero_grad();
  }
  for (BlockParams& b : blocks_) {
    for (BatchNormState* bn : {&b.bn1, &b.bn2}) {
      std::fill(bn->running_mean.begin(), bn->running_mean.end(), 0.0);
      std::fill(bn->running_var.begin(), bn->running_var.end(), 1.0);
      bn->initialized = false;
    }
  }
}

void Model::zero_grad() {
  for (NamedParam& p : parameters()) p.tensor.zero_grad();
}

bool Model::batchnorm_initialized() const {
  return std::all_of(blocks_.begin(), blocks_.end(),
                     [](const BlockParams& b) { return b.bn1.initialized && b.bn2.initialized; });
}

void Model::mark_batchnorm_initialized() {
  for (BlockParams& b : blocks_) b.bn1.initialized = b.bn2.initialized = true;
}

}  // namespace stormcast

#include "stormcast/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "stormcast/error.hpp"

namespace stormcast {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

bool needs_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  node->op = op;
  if (needs_record(inputs)) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(t->defined() ? t->node() : nullptr);
    node->backward = std::move(bw);
  }
  return Tensor(std::move(node));
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

void require(bool ok, Errc code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// col has (channels*k*k) rows and h*w columns.
void im2col3(const double* x, std::size_t channels, std::size_t h, std::size_t w, double* col) {
  const std::size_t hw = h * w;
  for (std::size_t m = 0; m < channels; ++m) {
    const double* plane = x + m * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = col + ((m * 3 + ky) * 3 + kx) * hw;
        for (std::size_t r = 0; r < h; ++r) {
          const long rr = static_cast<long>(r) + ky - 1;
          double* drow = dst + r * w;
          if (rr < 0 || rr >= static_cast<long>(h)) {
            std::fill(drow, drow + w, 0.0);
            continue;
          }
          const double* srow = plane + rr * w;
          for (std::size_t c = 0; c < w; ++c) {
            const long cc = static_cast<long>(c) + kx - 1;
            drow[c] = (cc < 0 || cc >= static_cast<long>(w)) ? 0.0 : srow[cc];
          }
        }
      }
    }
  }
}

void col2im3_add(const double* col, std::size_t channels, std::size_t h, std::size_t w, double* dx) {
  const std::size_t hw = h * w;
  for (std::size_t m = 0; m < channels; ++m) {
    double* plane = dx + m * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = col + ((m * 3 + ky) * 3 + kx) * hw;
        for (std::size_t r = 0; r < h; ++r) {
          const long rr = static_cast<long>(r) + ky - 1;
          if (rr < 0 || rr >= static_cast<long>(h)) continue;
          const double* srow = src + r * w;
          double* drow = plane + rr * w;
          for (std::size_t c = 0; c < w; ++c) {
            const long cc = static_cast<long>(c) + kx - 1;
            if (cc >= 0 && cc < static_cast<long>(w)) drow[cc] += srow[c];
          }
        }
      }
    }
  }
}

struct Interp {
  std::size_t i0, i1;
  double frac;
};

std::vector<Interp> upsample_table(std::size_t in) {
  std::vector<Interp> t(2 * in);
  for (std::size_t i = 0; i < 2 * in; ++i) {
    const double src = std::max((static_cast<double>(i) + 0.5) / 2.0 - 0.5, 0.0);
    const auto i0 = std::min(static_cast<std::size_t>(src), in - 1);
    const auto i1 = std::min(i0 + 1, in - 1);
    t[i] = {i0, i1, src - static_cast<double>(i0)};
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.empty()) values.assign(shape.size(), 0.0);
  require(values.size() == shape.size(), Errc::shape,
          "value count " + std::to_string(values.size()) + " does not match shape " + to_string(shape));
  node_ = std::make_shared<Node>();
  node_->shape = shape;
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.size(), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.size(), value), requires_grad);
}

double Tensor::item() const {
  require(size() == 1, Errc::shape, "item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

Tensor Tensor::clone(bool requires_grad) const { return Tensor(shape(), node_->value, requires_grad); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  require(loss.defined() && loss.size() == 1, Errc::shape,
          "backward needs a scalar loss, got " + (loss.defined() ? to_string(loss.shape()) : "undefined"));
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reversed it is a valid reverse topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->inputs.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

// Eigen's vector kernels peel loops by buffer address, so their summation
// order (and last bits) would depend on where the heap put the tensor. The
// single-output-row case goes through these fixed-order loops instead.
double plain_sum(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i];
  return s;
}

// y[j] = sum_i w[i] * x[i][j]
void single_row_times(const double* w, const double* x, std::size_t rows, std::size_t n, double* y) {
  std::fill(y, y + n, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double wi = w[i];
    const double* xi = x + i * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += wi * xi[j];
  }
}

// dw[i] += sum_j dy[j] * x[i][j]
void add_row_dots(const double* dy, const double* x, std::size_t rows, std::size_t n, double* dw) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += dy[j] * xi[j];
    dw[i] += s;
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  require(ws.h == ws.w && (ws.h == 1 || ws.h == 3), Errc::shape,
          "conv2d kernel must be 1x1 or 3x3, got " + to_string(ws));
  require(xs.c == ws.c, Errc::shape,
          "conv2d channel mismatch: input " + to_string(xs) + " vs weight " + to_string(ws));
  if (bias.defined())
    require(bias.size() == ws.n, Errc::shape, "conv2d bias must hold " + std::to_string(ws.n) + " values");

  const std::size_t hw = xs.plane();
  const std::size_t k = ws.h;
  const std::size_t cols = xs.c * k * k;
  const Shape out_shape{xs.n, ws.n, xs.h, xs.w};
  std::vector<double> out(out_shape.size());

  ConstMapMat wm(weight.values().data(), ws.n, cols);
  std::vector<double> col(k == 3 ? cols * hw : 0);
  for (std::size_t b = 0; b < xs.n; ++b) {
    const double* xb = x.values().data() + b * xs.c * hw;
    MapMat yb(out.data() + b * ws.n * hw, ws.n, hw);
    const double* src = xb;
    if (k == 3) {
      im2col3(xb, xs.c, xs.h, xs.w, col.data());
      src = col.data();
    }
    if (ws.n == 1) {
      single_row_times(weight.values().data(), src, cols, hw, yb.data());
    } else {
      yb.noalias() = wm * ConstMapMat(src, cols, hw);
    }
    if (bias.defined()) {
      for (std::size_t n = 0; n < ws.n; ++n) yb.row(n).array() += bias.values()[n];
    }
  }

  return make_result(out_shape, std::move(out), "conv2d", {&x, &weight, &bias}, [=](Node& self) {
    const auto& xn = self.inputs[0];
    const auto& wn = self.inputs[1];
    const auto& bn = self.inputs[2];
    ConstMapMat w_mat(wn->value.data(), ws.n, cols);
    std::vector<double> colbuf(k == 3 ? cols * hw : 0);
    std::vector<double> dcol(k == 3 ? cols * hw : 0);
    for (std::size_t b = 0; b < xs.n; ++b) {
      ConstMapMat dy(self.grad.data() + b * ws.n * hw, ws.n, hw);
      const double* xb = xn->value.data() + b * xs.c * hw;
      if (wants_grad(wn)) {
        MapMat dw(wn->ensure_grad().data(), ws.n, cols);
        const double* src = xb;
        if (k == 3) {
          im2col3(xb, xs.c, xs.h, xs.w, colbuf.data());
          src = colbuf.data();
        }
        if (ws.n == 1) {
          add_row_dots(dy.data(), src, cols, hw, dw.data());
        } else {
          dw.noalias() += dy * ConstMapMat(src, cols, hw).transpose();
        }
      }
      if (wants_grad(bn)) {
        auto& db = bn->ensure_grad();
        for (std::size_t n = 0; n < ws.n; ++n) db[n] += plain_sum(dy.data() + n * hw, hw);
      }
      if (wants_grad(xn)) {
        double* dxb = xn->ensure_grad().data() + b * xs.c * hw;
        if (k == 1) {
          MapMat(dxb, xs.c, hw).noalias() += w_mat.transpose() * dy;
        } else {
          MapMat(dcol.data(), cols, hw).noalias() = w_mat.transpose() * dy;
          col2im3_add(dcol.data(), xs.c, xs.h, xs.w, dxb);
        }
      }
    }
  });
}

Tensor maxpool2(const Tensor& x) {
  const Shape s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0, Errc::shape, "maxpool2 needs even H and W, got " + to_string(s));
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<double> out(os.size());
  std::vector<std::size_t> argmax(os.size());
  const auto xv = x.values();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const std::size_t ibase = p * s.plane();
    const std::size_t obase = p * os.plane();
    for (std::size_t i = 0; i < os.h; ++i) {
      for (std::size_t j = 0; j < os.w; ++j) {
        std::size_t best = ibase + 2 * i * s.w + 2 * j;
        for (std::size_t idx : {best + 1, best + s.w, best + s.w + 1}) {
          if (xv[idx] > xv[best]) best = idx;
        }
        out[obase + i * os.w + j] = xv[best];
        argmax[obase + i * os.w + j] = best;
      }
    }
  }
  return make_result(os, std::move(out), "maxpool2", {&x},
                     [argmax = std::move(argmax)](Node& self) {
                       auto& dx = self.inputs[0]->ensure_grad();
                       for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += self.grad[o];
                     });
}

Tensor upsample_bilinear2(const Tensor& x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  const auto rows = upsample_table(s.h);
  const auto cols = upsample_table(s.w);
  std::vector<double> out(os.size());
  const auto xv = x.values();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const double* in = xv.data() + p * s.plane();
    double* o = out.data() + p * os.plane();
    for (std::size_t i = 0; i < os.h; ++i) {
      const auto& ry = rows[i];
      const double* r0 = in + ry.i0 * s.w;
      const double* r1 = in + ry.i1 * s.w;
      for (std::size_t j = 0; j < os.w; ++j) {
        const auto& cx = cols[j];
        const double top = r0[cx.i0] + cx.frac * (r0[cx.i1] - r0[cx.i0]);
        const double bot = r1[cx.i0] + cx.frac * (r1[cx.i1] - r1[cx.i0]);
        o[i * os.w + j] = top + ry.frac * (bot - top);
      }
    }
  }
  return make_result(os, std::move(out), "upsample_bilinear2", {&x}, [=](Node& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      double* d = dx.data() + p * s.plane();
      const double* g = self.grad.data() + p * os.plane();
      for (std::size_t i = 0; i < os.h; ++i) {
        const auto& ry = rows[i];
        for (std::size_t j = 0; j < os.w; ++j) {
          const auto& cx = cols[j];
          const double gv = g[i * os.w + j];
          const double top = gv * (1.0 - ry.frac);
          const double bot = gv * ry.frac;
          d[ry.i0 * s.w + cx.i0] += top * (1.0 - cx.frac);
          d[ry.i0 * s.w + cx.i1] += top * cx.frac;
          d[ry.i1 * s.w + cx.i0] += bot * (1.0 - cx.frac);
          d[ry.i1 * s.w + cx.i1] += bot * cx.frac;
        }
      }
    }
  });
}

BatchNormState BatchNormState::make(std::size_t channels) {
  BatchNormState st;
  st.gamma = Tensor::full({1, channels, 1, 1}, 1.0, true);
  st.beta = Tensor::zeros({1, channels, 1, 1}, true);
  st.running_mean.assign(channels, 0.0);
  st.running_var.assign(channels, 1.0);
  return st;
}

Tensor batchnorm2d(const Tensor& x, BatchNormState& state, bool training) {
  const Shape s = x.shape();
  require(state.gamma.size() == s.c && state.beta.size() == s.c && state.running_mean.size() == s.c,
          Errc::shape, "batchnorm channel count does not match input " + to_string(s));
  const std::size_t hw = s.plane();
  const std::size_t count = s.n * hw;
  const auto xv = x.values();
  const auto gamma = state.gamma.values();
  const auto beta = state.beta.values();

  std::vector<double> mean(s.c), invstd(s.c);
  if (training) {
    require(count >= 2, Errc::shape, "batchnorm training needs at least 2 values per channel");
    for (std::size_t ch = 0; ch < s.c; ++ch) {
      double acc = 0.0;
      for (std::size_t b = 0; b < s.n; ++b) {
        const double* p = xv.data() + (b * s.c + ch) * hw;
        acc = std::accumulate(p, p + hw, acc);
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < s.n; ++b) {
        const double* p = xv.data() + (b * s.c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = sq / static_cast<double>(count - 1);
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    }
    state.initialized = true;
  } else {
    require(state.initialized, Errc::uninitialized, "batchnorm inference before any training update");
    for (std::size_t ch = 0; ch < s.c; ++ch) {
      mean[ch] = state.running_mean[ch];
      invstd[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  std::vector<double> xhat(s.size());
  std::vector<double> out(s.size());
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t ch = 0; ch < s.c; ++ch) {
      const std::size_t base = (b * s.c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (xv[base + i] - mean[ch]) * invstd[ch];
        xhat[base + i] = xh;
        out[base + i] = gamma[ch] * xh + beta[ch];
      }
    }
  }

  return make_result(
      s, std::move(out), "batchnorm2d", {&x, &state.gamma, &state.beta},
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Node& self) {
        const auto& xn = self.inputs[0];
        const auto& gn = self.inputs[1];
        const auto& bn = self.inputs[2];
        std::vector<double> dbeta(s.c, 0.0), dgamma(s.c, 0.0);
        for (std::size_t b = 0; b < s.n; ++b) {
          for (std::size_t ch = 0; ch < s.c; ++ch) {
            const std::size_t base = (b * s.c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              dbeta[ch] += self.grad[base + i];
              dgamma[ch] += self.grad[base + i] * xhat[base + i];
            }
          }
        }
        if (wants_grad(gn)) {
          auto& g = gn->ensure_grad();
          for (std::size_t ch = 0; ch < s.c; ++ch) g[ch] += dgamma[ch];
        }
        if (wants_grad(bn)) {
          auto& g = bn->ensure_grad();
          for (std::size_t ch = 0; ch < s.c; ++ch) g[ch] += dbeta[ch];
        }
        if (wants_grad(xn)) {
          auto& dx = xn->ensure_grad();
          const auto& gam = gn->value;
          const double inv_count = 1.0 / static_cast<double>(count);
          for (std::size_t b = 0; b < s.n; ++b) {
            for (std::size_t ch = 0; ch < s.c; ++ch) {
              const std::size_t base = (b * s.c + ch) * hw;
              const double scale = gam[ch] * invstd[ch];
              for (std::size_t i = 0; i < hw; ++i) {
                const double dy = self.grad[base + i];
                if (training) {
                  dx[base + i] += scale * (dy - inv_count * (dbeta[ch] + xhat[base + i] * dgamma[ch]));
                } else {
                  dx[base + i] += scale * dy;
                }
              }
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), "relu", {&x}, [](Node& self) {
    const auto& xn = self.inputs[0];
    auto& dx = xn->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xn->value[i] > 0.0) dx[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  std::transform(x.values().begin(), x.values().end(), out.begin(), sigmoid_scalar);
  return make_result(x.shape(), std::move(out), "sigmoid", {&x}, [](Node& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double y = self.value[i];
      dx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor concat_channels(std::span<const Tensor> xs) {
  require(!xs.empty(), Errc::invalid_argument, "concat_channels needs at least one input");
  const Shape first = xs[0].shape();
  std::size_t channels = 0;
  for (const Tensor& t : xs) {
    const Shape s = t.shape();
    require(s.n == first.n && s.h == first.h && s.w == first.w, Errc::shape,
            "concat_channels mismatch: " + to_string(first) + " vs " + to_string(s));
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const std::size_t hw = first.plane();
  std::vector<double> out(os.size());
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& t : xs) {
    const std::size_t c = t.shape().c;
    for (std::size_t b = 0; b < os.n; ++b) {
      const auto src = t.values().subspan(b * c * hw, c * hw);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<long>((b * channels + offset) * hw));
    }
    offsets.push_back(offset);
    offset += c;
  }

  auto node = std::make_shared<Node>();
  node->shape = os;
  node->value = std::move(out);
  node->op = "concat_channels";
  const bool record =
      grad_enabled() && std::any_of(xs.begin(), xs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (record) {
    node->requires_grad = true;
    for (const Tensor& t : xs) node->inputs.push_back(t.node());
    node->backward = [=](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        const auto& in = self.inputs[k];
        if (!wants_grad(in)) continue;
        const std::size_t c = in->shape.c;
        auto& dx = in->ensure_grad();
        for (std::size_t b = 0; b < os.n; ++b) {
          const double* g = self.grad.data() + (b * channels + offsets[k]) * hw;
          double* d = dx.data() + b * c * hw;
          for (std::size_t i = 0; i < c * hw; ++i) d[i] += g[i];
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor concat_channels(std::initializer_list<Tensor> xs) {
  return concat_channels(std::span<const Tensor>(xs.begin(), xs.size()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), Errc::shape, "add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<double> out(a.size());
  std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::plus<>());
  return make_result(a.shape(), std::move(out), "add", {&a, &b}, [](Node& self) {
    for (const auto& in : self.inputs) {
      if (!wants_grad(in)) continue;
      auto& d = in->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), Errc::shape, "mul: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<double> out(a.size());
  std::transform(a.values().begin(), a.values().end(), b.values().begin(), out.begin(), std::multiplies<>());
  return make_result(a.shape(), std::move(out), "mul", {&a, &b}, [](Node& self) {
    const auto& an = self.inputs[0];
    const auto& bn = self.inputs[1];
    if (wants_grad(an)) {
      auto& d = an->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * bn->value[i];
    }
    if (wants_grad(bn)) {
      auto& d = bn->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({1, 1, 1, 1}, {total}, "sum", {&x}, [](Node& self) {
    auto& d = self.inputs[0]->ensure_grad();
    const double g = self.grad[0];
    for (double& v : d) v += g;
  });
}

Tensor weighted_bce(const Tensor& logits, const Tensor& targets, double pos_weight) {
  require(logits.shape() == targets.shape(), Errc::shape,
          "weighted_bce: logits " + to_string(logits.shape()) + " vs targets " + to_string(targets.shape()));
  require(pos_weight > 0.0 && std::isfinite(pos_weight), Errc::invalid_argument,
          "positive-class weight must be finite and > 0");
  const auto x = logits.values();
  const auto y = targets.values();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(y[i] == 0.0 || y[i] == 1.0, Errc::invalid_argument, "targets must be 0 or 1");
    require(std::isfinite(x[i]), Errc::non_finite, "non-finite logit");
    total += pos_weight * y[i] * softplus(-x[i]) + (1.0 - y[i]) * softplus(x[i]);
  }
  const double n = static_cast<double>(x.size());
  return make_result({1, 1, 1, 1}, {total / n}, "weighted_bce", {&logits, &targets},
                     [pos_weight, n](Node& self) {
                       const auto& xn = self.inputs[0];
                       const auto& yn = self.inputs[1];
                       if (!wants_grad(xn)) return;
                       auto& d = xn->ensure_grad();
                       const double g = self.grad[0] / n;
                       for (std::size_t i = 0; i < d.size(); ++i) {
                         const double s = sigmoid_scalar(xn->value[i]);
                         const double yi = yn->value[i];
                         d[i] += g * (s * (pos_weight * yi + 1.0 - yi) - pos_weight * yi);
                       }
                     });
}

}  // namespace stormcast

#include "stormcast/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "stormcast/error.hpp"
#include "stormcast/model.hpp"

namespace stormcast {

double max_relative_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double step, std::size_t max_probes,
                          std::uint64_t seed, std::size_t* probes) {
  for (const Tensor& t : inputs) {
    Tensor copy = t;
    copy.zero_grad();
  }
  const Tensor loss = f(inputs);
  if (loss.size() != 1) throw Error(Errc::invalid_argument, "gradient check needs a scalar function");
  backward(loss);

  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) where.emplace_back(k, i);
  if (max_probes != 0 && where.size() > max_probes) {
    std::mt19937_64 rng(seed);
    std::shuffle(where.begin(), where.end(), rng);
    where.resize(max_probes);
  }

  // Components far below the largest gradient are compared against it, so
  // roundoff on exact zeros (a conv bias ahead of batch norm) is not error.
  double floor = 1e-8;
  for (const Tensor& t : inputs)
    if (t.has_grad())
      for (double g : t.grad()) floor = std::max(floor, 1e-3 * std::abs(g));

  NoGradGuard no_grad;
  double worst = 0.0;
  for (const auto& [k, i] : where) {
    Tensor x = inputs[k];
    const double analytic = x.has_grad() ? x.grad()[i] : 0.0;
    const double saved = x.values()[i];
    // A relu or max-pool kink inside the stencil spoils one step size but not
    // all of them; a wrong analytic gradient disagrees at every step.
    double best = std::numeric_limits<double>::infinity();
    for (double h = step; h >= step / 256.0 && best > 1e-6; h /= 4.0) {
      x.mutable_values()[i] = saved + h;
      const double up = f(inputs).item();
      x.mutable_values()[i] = saved - h;
      const double down = f(inputs).item();
      x.mutable_values()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
      best = std::min(best, std::abs(analytic - numeric) / scale);
    }
    worst = std::max(worst, best);
  }
  if (probes) *probes = where.size();
  return worst;
}

namespace {

struct Rand {
  std::mt19937_64 rng;
  Tensor normal(Shape s, double scale = 1.0, bool grad = true) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(s.size());
    for (double& x : v) x = d(rng);
    return Tensor(s, std::move(v), grad);
  }
  // Values bounded away from zero so relu kinks sit outside the FD stencil.
  Tensor away_from_zero(Shape s) {
    std::uniform_real_distribution<double> d(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(s.size());
    for (double& x : v) x = sign(rng) ? d(rng) : -d(rng);
    return Tensor(s, std::move(v), true);
  }
  // Distinct values so every 2x2 block has a unique maximum.
  Tensor distinct(Shape s) {
    std::vector<double> v(s.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * double(i);
    std::shuffle(v.begin(), v.end(), rng);
    return Tensor(s, std::move(v), true);
  }
};

// Projects an output onto fixed random weights so every element matters.
Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

void randomize(BlockParams& p, Rand& r) {
  for (Conv* c : {&p.fusion, &p.conv1, &p.conv2}) {
    if (!c->weight.defined()) continue;
    c->weight = r.normal(c->weight.shape(), 0.3);
    c->bias = r.normal(c->bias.shape(), 0.1);
  }
  for (BatchNormState* bn : {&p.bn1, &p.bn2}) {
    bn->gamma = r.normal(bn->gamma.shape(), 0.5);
    bn->beta = r.normal(bn->beta.shape(), 0.5);
  }
}

std::vector<Tensor> block_tensors(BlockParams& p) {
  std::vector<Tensor> out;
  for (Conv* c : {&p.fusion, &p.conv1, &p.conv2})
    if (c->weight.defined()) {
      out.push_back(c->weight);
      out.push_back(c->bias);
    }
  for (BatchNormState* bn : {&p.bn1, &p.bn2}) {
    out.push_back(bn->gamma);
    out.push_back(bn->beta);
  }
  return out;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed) {
  Rand r{std::mt19937_64(seed)};
  std::vector<GradCheckResult> results;
  auto run = [&](const std::string& name, const ScalarFn& f, const std::vector<Tensor>& inputs,
                 std::size_t max_probes = 0, double tolerance = 1e-4) {
    GradCheckResult res;
    res.op = name;
    res.tolerance = tolerance;
    res.max_rel_error = max_relative_error(f, inputs, 1e-5, max_probes, seed, &res.probes);
    results.push_back(res);
  };

  const Shape xs{2, 3, 8, 8};
  {
    Tensor x = r.normal(xs), w = r.normal({4, 3, 1, 1}), b = r.normal({1, 4, 1, 1});
    Tensor proj = r.normal({2, 4, 8, 8}, 1.0, false);
    run("conv2d_1x1", [=](const auto& in) { return project(conv2d(in[0], in[1], in[2]), proj); }, {x, w, b});
  }
  {
    Tensor x = r.normal(xs), w = r.normal({4, 3, 3, 3}), b = r.normal({1, 4, 1, 1});
    Tensor proj = r.normal({2, 4, 8, 8}, 1.0, false);
    run("conv2d_3x3", [=](const auto& in) { return project(conv2d(in[0], in[1], in[2]), proj); }, {x, w, b});
  }
  {
    Tensor x = r.distinct(xs);
    Tensor proj = r.normal({2, 3, 4, 4}, 1.0, false);
    run("maxpool2", [=](const auto& in) { return project(maxpool2(in[0]), proj); }, {x});
  }
  {
    Tensor x = r.normal({2, 3, 4, 4});
    Tensor proj = r.normal(xs, 1.0, false);
    run("upsample_bilinear2", [=](const auto& in) { return project(upsample_bilinear2(in[0]), proj); }, {x});
  }
  {
    Tensor x = r.normal(xs);
    BatchNormState bn = BatchNormState::make(3);
    bn.gamma = r.normal({1, 3, 1, 1});
    bn.beta = r.normal({1, 3, 1, 1});
    Tensor proj = r.normal(xs, 1.0, false);
    run("batchnorm2d",
        [=](const auto& in) mutable {
          BatchNormState s = bn;
          s.gamma = in[1];
          s.beta = in[2];
          return project(batchnorm2d(in[0], s, true), proj);
        },
        {x, bn.gamma, bn.beta});
  }
  {
    Tensor x = r.away_from_zero(xs);
    Tensor proj = r.normal(xs, 1.0, false);
    run("relu", [=](const auto& in) { return project(relu(in[0]), proj); }, {x});
  }
  {
    Tensor x = r.normal(xs, 2.0);
    Tensor proj = r.normal(xs, 1.0, false);
    run("sigmoid", [=](const auto& in) { return project(sigmoid(in[0]), proj); }, {x});
  }
  {
    Tensor a = r.normal({2, 1, 8, 8}), b = r.normal({2, 2, 8, 8});
    Tensor proj = r.normal(xs, 1.0, false);
    run("concat_channels", [=](const auto& in) { return project(concat_channels({in[0], in[1]}), proj); }, {a, b});
  }
  {
    Tensor a = r.normal(xs), b = r.normal(xs);
    Tensor proj = r.normal(xs, 1.0, false);
    run("add", [=](const auto& in) { return project(add(in[0], in[1]), proj); }, {a, b});
    run("mul", [=](const auto& in) { return project(mul(in[0], in[1]), proj); }, {a, b});
  }
  {
    Tensor x = r.normal(xs, 3.0);
    std::vector<double> y(xs.size());
    std::bernoulli_distribution coin(0.3);
    for (double& v : y) v = coin(r.rng) ? 1.0 : 0.0;
    Tensor t(xs, std::move(y));
    run("weighted_bce", [=](const auto& in) { return weighted_bce(in[0], t, 7.5); }, {x});
  }
  for (Variant v : {Variant::runetpp, Variant::unetpp}) {
    BlockParams p = make_block(v, 3, 4);
    randomize(p, r);
    Tensor x = r.normal(xs);
    Tensor proj = r.normal({2, 4, 8, 8}, 1.0, false);
    std::vector<Tensor> inputs{x};
    for (const Tensor& t : block_tensors(p)) inputs.push_back(t);
    const std::string name = v == Variant::runetpp ? "residual_block" : "plain_block";
    run(name,
        [=](const auto& in) mutable {
          BlockParams q = p;
          std::size_t k = 1;
          for (Conv* c : {&q.fusion, &q.conv1, &q.conv2})
            if (c->weight.defined()) {
              c->weight = in[k++];
              c->bias = in[k++];
            }
          for (BatchNormState* bn : {&q.bn1, &q.bn2}) {
            bn->gamma = in[k++];
            bn->beta = in[k++];
          }
          return project(v == Variant::runetpp ? residual_block(in[0], q, Mode::training)
                                               : plain_block(in[0], q, Mode::training),
                         proj);
        },
        inputs);
  }
  {
    ModelConfig mc;
    mc.seed = seed;
    Model model(mc);
    model.init_params(seed);
    Tensor x = r.normal({1, 10, 16, 16}, 1.0, false);
    std::vector<Tensor> projs;
    for (int k = 0; k < 3; ++k) projs.push_back(r.normal({1, 1, 16, 16}, 1.0, false));
    std::vector<Tensor> params;
    for (const NamedParam& p : model.parameters()) params.push_back(p.tensor);
    run("model_1x10x16x16",
        [&model, x, projs](const auto&) {
          const auto heads = model.forward(x, Mode::training);
          Tensor total = project(heads[0], projs[0]);
          for (std::size_t k = 1; k < heads.size(); ++k) total = add(total, project(heads[k], projs[k]));
          return total;
        },
        params, 50, 1e-3);
  }
  return results;
}

}  // namespace stormcast

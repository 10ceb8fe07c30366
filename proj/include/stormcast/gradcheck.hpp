#pragma once

// Central finite-difference checks of the analytic gradients, used by the
// `gradcheck` subcommand.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stormcast/tensor.hpp"

namespace stormcast {

struct GradCheckResult {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  double tolerance = 1e-4;
  bool passed() const { return max_rel_error < tolerance; }
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares backward() against (f(x+h) - f(x-h)) / 2h for up to max_probes
// randomly chosen input elements (all of them when max_probes is 0).
// Relative error is |a - n| / max(|a|, |n|), and pairs where both sides are
// below 1e-8 count as exact.
double max_relative_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5,
                          std::size_t max_probes = 0, std::uint64_t seed = 0, std::size_t* probes = nullptr);

// Every layer op, both block variants and the full model.
std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed = 0);

}  // namespace stormcast

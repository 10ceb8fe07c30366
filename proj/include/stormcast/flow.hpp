#pragma once

// Dense TV-L1 optical flow (duality-based primal-dual scheme with
// coarse-to-fine warping) and the flow-extrapolation nowcast error.
//
// Flow convention: tvl1_flow(I0, I1) returns f with I0(x) ~ I1(x + f(x)),
// i.e. content located at x in I0 moved to x + f(x) in I1. u is the column
// (x) component, v the row (y) component, both in pixels per frame step.

#include <cstddef>
#include <vector>

#include "stormcast/raster.hpp"

namespace stormcast {

struct FlowField {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> u;
  std::vector<double> v;

  FlowField() = default;
  FlowField(std::size_t rows, std::size_t cols) : h(rows), w(cols), u(rows * cols, 0.0), v(rows * cols, 0.0) {}
  static FlowField uniform(std::size_t rows, std::size_t cols, double du, double dv);
};

struct FlowParams {
  double lambda = 0.15;      // data-attachment weight (on a 0..255 intensity scale)
  double theta = 0.3;        // coupling between primal and auxiliary flow
  double tau = 0.25;         // dual step, <= 0.25 for stability
  int n_scales = 5;
  double scale_factor = 0.5;
  int n_warps = 5;
  int n_inner_iters = 30;
  bool median_filter = true;  // 3x3 median of the flow after each warp

  // Throws Errc::invalid_argument when an invariant is violated.
  void validate() const;
};

// Number of pyramid levels actually used for an h x w image: levels whose
// smaller side would drop below 4 pixels are discarded.
int usable_scales(const FlowParams& p, std::size_t h, std::size_t w);

// Inputs are expected in [0, 1]; throws Errc::shape on dimension mismatch.
FlowField tvl1_flow(const Raster& i0, const Raster& i1, const FlowParams& p = {});

// Backward bilinear sampling out(x) = I(x - f(x)), border-clamped.
Raster warp(const Raster& image, const FlowField& flow);

// |warp(I_-15, tvl1_flow(I_-30, I_-15)) - I_0| per pixel.
Raster nowcast_error(const Raster& i_m30, const Raster& i_m15, const Raster& i_0, const FlowParams& p = {});

// Bilinear sample at fractional (row, col), clamped to the border.
double sample_bilinear(const Raster& image, double row, double col);

}  // namespace stormcast

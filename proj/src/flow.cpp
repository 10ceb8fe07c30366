#include "stormcast/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "stormcast/error.hpp"
#include "stormcast/log.hpp"

namespace stormcast {

namespace {

// The regularization constants are tuned for 8-bit intensity ranges, so the
// solver works on images scaled from [0, 1] to [0, 255].
constexpr double kIntensityScale = 255.0;
constexpr double kGradEpsilon = 1e-10;
constexpr std::size_t kMinLevelSide = 4;

std::size_t level_side(std::size_t side, double factor, int level) {
  return static_cast<std::size_t>(std::lround(static_cast<double>(side) * std::pow(factor, level)));
}

// Central differences, replicated borders.
void centered_gradient(const Raster& img, Raster& gx, Raster& gy) {
  gx = Raster(img.h, img.w);
  gy = Raster(img.h, img.w);
  for (std::size_t r = 0; r < img.h; ++r) {
    const std::size_t ru = r == 0 ? 0 : r - 1;
    const std::size_t rd = r + 1 == img.h ? r : r + 1;
    for (std::size_t c = 0; c < img.w; ++c) {
      const std::size_t cl = c == 0 ? 0 : c - 1;
      const std::size_t cr = c + 1 == img.w ? c : c + 1;
      gx(r, c) = 0.5 * (img(r, cr) - img(r, cl));
      gy(r, c) = 0.5 * (img(rd, c) - img(ru, c));
    }
  }
}

void forward_gradient(const std::vector<double>& f, std::size_t h, std::size_t w, std::vector<double>& fx,
                      std::vector<double>& fy) {
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      fx[i] = c + 1 < w ? f[i + 1] - f[i] : 0.0;
      fy[i] = r + 1 < h ? f[i + w] - f[i] : 0.0;
    }
  }
}

// Negative adjoint of forward_gradient.
void divergence(const std::vector<double>& p1, const std::vector<double>& p2, std::size_t h, std::size_t w,
                std::vector<double>& div) {
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      double d = 0.0;
      if (c + 1 < w) d += p1[i];
      if (c > 0) d -= p1[i - 1];
      if (r + 1 < h) d += p2[i];
      if (r > 0) d -= p2[i - w];
      div[i] = d;
    }
  }
}

void gaussian_blur(Raster& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    norm += kernel[k + radius];
  }
  for (double& k : kernel) k /= norm;

  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, n - 1)); };
  Raster tmp(img.h, img.w);
  for (std::size_t r = 0; r < img.h; ++r)
    for (std::size_t c = 0; c < img.w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img(r, clampi(long(c) + k, img.w));
      tmp(r, c) = acc;
    }
  for (std::size_t r = 0; r < img.h; ++r)
    for (std::size_t c = 0; c < img.w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(clampi(long(r) + k, img.h), c);
      img(r, c) = acc;
    }
}

// Resample to (h, w) with pixel-centre alignment.
Raster resample(const Raster& src, std::size_t h, std::size_t w) {
  Raster out(h, w);
  const double sy = static_cast<double>(src.h) / static_cast<double>(h);
  const double sx = static_cast<double>(src.w) / static_cast<double>(w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out(r, c) = sample_bilinear(src, (r + 0.5) * sy - 0.5, (c + 0.5) * sx - 0.5);
  return out;
}

Raster zoom_out(const Raster& src, std::size_t h, std::size_t w, double factor) {
  Raster smoothed = src;
  const double sigma = 0.6 * std::sqrt(1.0 / (factor * factor) - 1.0);
  if (sigma > 0.0) gaussian_blur(smoothed, sigma);
  return resample(smoothed, h, w);
}

// Sample img at x + flow(x) for every pixel.
Raster sample_forward(const Raster& img, const std::vector<double>& u, const std::vector<double>& v) {
  Raster out(img.h, img.w);
  for (std::size_t r = 0; r < img.h; ++r)
    for (std::size_t c = 0; c < img.w; ++c) {
      const std::size_t i = r * img.w + c;
      out.values[i] = sample_bilinear(img, static_cast<double>(r) + v[i], static_cast<double>(c) + u[i]);
    }
  return out;
}

void median3x3(std::vector<double>& f, std::size_t h, std::size_t w) {
  const std::vector<double> src = f;
  std::array<double, 9> window{};
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t n = 0;
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
          const long rr = std::clamp<long>(long(r) + dr, 0, long(h) - 1);
          const long cc = std::clamp<long>(long(c) + dc, 0, long(w) - 1);
          window[n++] = src[rr * w + cc];
        }
      std::nth_element(window.begin(), window.begin() + 4, window.end());
      f[r * w + c] = window[4];
    }
}

void solve_level(const Raster& i0, const Raster& i1, FlowField& flow, const FlowParams& p) {
  const std::size_t h = i0.h, w = i0.w, n = h * w;
  const double lt = p.lambda * p.theta;
  const double taut = p.tau / p.theta;

  Raster i1x, i1y;
  centered_gradient(i1, i1x, i1y);

  std::vector<double> p11(n, 0.0), p12(n, 0.0), p21(n, 0.0), p22(n, 0.0);
  std::vector<double> v1(n), v2(n), grad(n), rho_c(n);
  std::vector<double> div1(n), div2(n), u1x(n), u1y(n), u2x(n), u2y(n);
  auto& u1 = flow.u;
  auto& u2 = flow.v;

  for (int warp_i = 0; warp_i < p.n_warps; ++warp_i) {
    const Raster i1w = sample_forward(i1, u1, u2);
    const Raster i1wx = sample_forward(i1x, u1, u2);
    const Raster i1wy = sample_forward(i1y, u1, u2);
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = i1wx.values[i] * i1wx.values[i] + i1wy.values[i] * i1wy.values[i];
      rho_c[i] = i1w.values[i] - i1wx.values[i] * u1[i] - i1wy.values[i] * u2[i] - i0.values[i];
    }

    for (int it = 0; it < p.n_inner_iters; ++it) {
      // Pointwise thresholding of the linearized residual.
      for (std::size_t i = 0; i < n; ++i) {
        const double gx = i1wx.values[i], gy = i1wy.values[i];
        const double rho = rho_c[i] + gx * u1[i] + gy * u2[i];
        double d1 = 0.0, d2 = 0.0;
        if (rho < -lt * grad[i]) {
          d1 = lt * gx;
          d2 = lt * gy;
        } else if (rho > lt * grad[i]) {
          d1 = -lt * gx;
          d2 = -lt * gy;
        } else if (grad[i] >= kGradEpsilon) {
          const double fi = -rho / grad[i];
          d1 = fi * gx;
          d2 = fi * gy;
        }
        v1[i] = u1[i] + d1;
        v2[i] = u2[i] + d2;
      }

      divergence(p11, p12, h, w, div1);
      divergence(p21, p22, h, w, div2);
      for (std::size_t i = 0; i < n; ++i) {
        u1[i] = v1[i] + p.theta * div1[i];
        u2[i] = v2[i] + p.theta * div2[i];
      }

      // Dual ascent with reprojection.
      forward_gradient(u1, h, w, u1x, u1y);
      forward_gradient(u2, h, w, u2x, u2y);
      for (std::size_t i = 0; i < n; ++i) {
        const double ng1 = 1.0 + taut * std::sqrt(u1x[i] * u1x[i] + u1y[i] * u1y[i]);
        const double ng2 = 1.0 + taut * std::sqrt(u2x[i] * u2x[i] + u2y[i] * u2y[i]);
        p11[i] = (p11[i] + taut * u1x[i]) / ng1;
        p12[i] = (p12[i] + taut * u1y[i]) / ng1;
        p21[i] = (p21[i] + taut * u2x[i]) / ng2;
        p22[i] = (p22[i] + taut * u2y[i]) / ng2;
      }
    }

    if (p.median_filter) {
      median3x3(u1, h, w);
      median3x3(u2, h, w);
    }
  }
}

}  // namespace

FlowField FlowField::uniform(std::size_t rows, std::size_t cols, double du, double dv) {
  FlowField f(rows, cols);
  std::fill(f.u.begin(), f.u.end(), du);
  std::fill(f.v.begin(), f.v.end(), dv);
  return f;
}

void FlowParams::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::invalid_argument, "flow params: " + m); };
  if (!(tau > 0.0 && tau <= 0.25)) fail("tau must lie in (0, 0.25]");
  if (!(scale_factor > 0.0 && scale_factor < 1.0)) fail("scale_factor must lie in (0, 1)");
  if (n_scales < 1 || n_warps < 1 || n_inner_iters < 1) fail("counts must be >= 1");
  if (!(lambda >= 0.0) || !(theta > 0.0)) fail("lambda must be >= 0 and theta > 0");
}

int usable_scales(const FlowParams& p, std::size_t h, std::size_t w) {
  int levels = 1;
  while (levels < p.n_scales && level_side(std::min(h, w), p.scale_factor, levels) >= kMinLevelSide) ++levels;
  return levels;
}

double sample_bilinear(const Raster& image, double row, double col) {
  row = std::clamp(row, 0.0, static_cast<double>(image.h - 1));
  col = std::clamp(col, 0.0, static_cast<double>(image.w - 1));
  const auto r0 = static_cast<std::size_t>(row);
  const auto c0 = static_cast<std::size_t>(col);
  const std::size_t r1 = std::min(r0 + 1, image.h - 1);
  const std::size_t c1 = std::min(c0 + 1, image.w - 1);
  const double fr = row - static_cast<double>(r0);
  const double fc = col - static_cast<double>(c0);
  const double top = image(r0, c0) + fc * (image(r0, c1) - image(r0, c0));
  const double bot = image(r1, c0) + fc * (image(r1, c1) - image(r1, c0));
  return top + fr * (bot - top);
}

FlowField tvl1_flow(const Raster& i0, const Raster& i1, const FlowParams& p) {
  p.validate();
  if (!i0.same_dims(i1))
    throw Error(Errc::shape, "tvl1_flow: frames differ in size (" + std::to_string(i0.h) + "x" +
                                 std::to_string(i0.w) + " vs " + std::to_string(i1.h) + "x" +
                                 std::to_string(i1.w) + ")");
  if (i0.h < 2 || i0.w < 2) throw Error(Errc::shape, "tvl1_flow: frames must be at least 2x2");

  const int scales = usable_scales(p, i0.h, i0.w);
  if (scales < p.n_scales)
    warn("tvl1_flow: pyramid reduced from " + std::to_string(p.n_scales) + " to " + std::to_string(scales) +
         " scales for a " + std::to_string(i0.h) + "x" + std::to_string(i0.w) + " frame");

  std::vector<Raster> pyr0{i0}, pyr1{i1};
  for (double& v : pyr0[0].values) v *= kIntensityScale;
  for (double& v : pyr1[0].values) v *= kIntensityScale;
  for (int s = 1; s < scales; ++s) {
    const std::size_t h = level_side(i0.h, p.scale_factor, s);
    const std::size_t w = level_side(i0.w, p.scale_factor, s);
    pyr0.push_back(zoom_out(pyr0[s - 1], h, w, p.scale_factor));
    pyr1.push_back(zoom_out(pyr1[s - 1], h, w, p.scale_factor));
  }

  FlowField flow(pyr0.back().h, pyr0.back().w);
  for (int s = scales - 1; s >= 0; --s) {
    solve_level(pyr0[s], pyr1[s], flow, p);
    if (s == 0) break;
    const Raster& fine = pyr0[s - 1];
    const double ry = static_cast<double>(fine.h) / static_cast<double>(flow.h);
    const double rx = static_cast<double>(fine.w) / static_cast<double>(flow.w);
    Raster u = resample(Raster(flow.h, flow.w, flow.u), fine.h, fine.w);
    Raster v = resample(Raster(flow.h, flow.w, flow.v), fine.h, fine.w);
    flow = FlowField(fine.h, fine.w);
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
      flow.u[i] = u.values[i] * rx;
      flow.v[i] = v.values[i] * ry;
    }
  }
  return flow;
}

Raster warp(const Raster& image, const FlowField& flow) {
  if (image.h != flow.h || image.w != flow.w) throw Error(Errc::shape, "warp: flow and image dims differ");
  Raster out(image.h, image.w);
  for (std::size_t r = 0; r < image.h; ++r)
    for (std::size_t c = 0; c < image.w; ++c) {
      const std::size_t i = r * image.w + c;
      out.values[i] = sample_bilinear(image, static_cast<double>(r) - flow.v[i], static_cast<double>(c) - flow.u[i]);
    }
  return out;
}

Raster nowcast_error(const Raster& i_m30, const Raster& i_m15, const Raster& i_0, const FlowParams& p) {
  if (!i_m15.same_dims(i_0)) throw Error(Errc::shape, "nowcast_error: frames differ in size");
  const FlowField f = tvl1_flow(i_m30, i_m15, p);
  Raster err = warp(i_m15, f);
  for (std::size_t i = 0; i < err.size(); ++i) err.values[i] = std::abs(err.values[i] - i_0.values[i]);
  return err;
}

}  // namespace stormcast

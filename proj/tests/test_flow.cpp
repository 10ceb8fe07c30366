#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stormcast/error.hpp"
#include "stormcast/flow.hpp"
#include "stormcast/log.hpp"

using namespace stormcast;

namespace {

struct Bump {
  double r, c, s, a;
};

std::vector<Bump> bumps(unsigned seed, double h, double w, int n = 40) {
  std::mt19937 g(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Bump> out;
  for (int k = 0; k < n; ++k) out.push_back({u(g) * h, u(g) * w, 1.5 + 3 * u(g), u(g)});
  return out;
}

// Smooth random texture in [0, 1], displaced by (dy, dx).
Raster textured(std::size_t h, std::size_t w, unsigned seed, double dx = 0, double dy = 0) {
  const auto bs = bumps(seed, double(h), double(w));
  Raster out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double v = 0;
      for (const Bump& b : bs) {
        const double rr = double(r) - dy - b.r, cc = double(c) - dx - b.c;
        v += b.a * std::exp(-(rr * rr + cc * cc) / (2 * b.s * b.s));
      }
      out(r, c) = std::min(1.0, 0.5 * v);
    }
  return out;
}

Raster blob(std::size_t h, std::size_t w, double r0, double c0, double amp, double sigma) {
  Raster out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out(r, c) = amp * std::exp(-(std::pow(double(r) - r0, 2) + std::pow(double(c) - c0, 2)) / (2 * sigma * sigma));
  return out;
}

Raster circular_shift_cols(const Raster& in, std::size_t k) {
  Raster out(in.h, in.w);
  for (std::size_t r = 0; r < in.h; ++r)
    for (std::size_t c = 0; c < in.w; ++c) out(r, (c + k) % in.w) = in(r, c);
  return out;
}

template <class F>
double interior_mean(std::size_t h, std::size_t w, std::size_t margin, F&& f) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t r = margin; r + margin < h; ++r)
    for (std::size_t c = margin; c + margin < w; ++c, ++n) s += f(r, c);
  return s / double(n);
}

double mean_abs_diff(const Raster& a, const Raster& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return s / double(a.size());
}

double mean_magnitude(const FlowField& f) {
  double s = 0;
  for (std::size_t i = 0; i < f.u.size(); ++i) s += std::sqrt(f.u[i] * f.u[i] + f.v[i] * f.v[i]);
  return s / double(f.u.size());
}

}  // namespace

TEST(Tvl1, IdenticalFramesGiveZeroFlow) {
  const Raster a = textured(48, 48, 1);
  EXPECT_LT(mean_magnitude(tvl1_flow(a, a)), 0.05);
}

TEST(Tvl1, TexturelessFramesGiveExactlyZero) {
  const Raster a(32, 32, 0.4);
  const FlowField f = tvl1_flow(a, a);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    EXPECT_EQ(f.u[i], 0.0);
    EXPECT_EQ(f.v[i], 0.0);
  }
}

TEST(Tvl1, RecoversCircularTwoPixelShift) {
  const Raster a = textured(64, 64, 3);
  const Raster b = circular_shift_cols(a, 2);
  const FlowField f = tvl1_flow(a, b);
  const double u = interior_mean(64, 64, 8, [&](auto r, auto c) { return f.u[r * 64 + c]; });
  const double v = interior_mean(64, 64, 8, [&](auto r, auto c) { return f.v[r * 64 + c]; });
  EXPECT_NEAR(u, 2.0, 0.25);
  EXPECT_NEAR(v, 0.0, 0.25);
}

TEST(Tvl1, ShiftEquivariance) {
  // Same scene observed through two windows offset by (3, 5) pixels.
  const std::size_t big = 80, n = 64;
  const Raster a = textured(big, big, 4), b = textured(big, big, 4, 1.0, 0.5);
  auto crop = [&](const Raster& src, std::size_t r0, std::size_t c0) {
    Raster out(n, n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) out(r, c) = src(r + r0, c + c0);
    return out;
  };
  const FlowField f1 = tvl1_flow(crop(a, 0, 0), crop(b, 0, 0));
  const FlowField f2 = tvl1_flow(crop(a, 3, 5), crop(b, 3, 5));
  double worst_mean = interior_mean(n - 5, n - 5, 10, [&](auto r, auto c) {
    const std::size_t i1 = (r + 3) * n + (c + 5), i2 = r * n + c;
    return std::abs(f1.u[i1] - f2.u[i2]) + std::abs(f1.v[i1] - f2.v[i2]);
  });
  EXPECT_LT(worst_mean, 0.1);
}

TEST(Tvl1, LambdaToZeroShrinksFlow) {
  const Raster a = textured(48, 48, 5), b = textured(48, 48, 5, 1.5, -1.0);
  FlowParams p;
  const double m_default = mean_magnitude(tvl1_flow(a, b, p));
  p.lambda = 0.01;
  const double m_small = mean_magnitude(tvl1_flow(a, b, p));
  p.lambda = 0.0;
  const double m_zero = mean_magnitude(tvl1_flow(a, b, p));
  EXPECT_LT(m_small, m_default);
  EXPECT_LT(m_zero, m_small);
  EXPECT_EQ(m_zero, 0.0);
}

TEST(Tvl1, DimensionMismatch) {
  try {
    tvl1_flow(Raster(16, 16), Raster(16, 18));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::shape);
  }
}

TEST(Tvl1, DegeneratePyramidIsReduced) {
  FlowParams p;
  EXPECT_EQ(usable_scales(p, 64, 64), 5);
  EXPECT_EQ(usable_scales(p, 16, 40), 3);  // 16, 8, 4
  EXPECT_EQ(usable_scales(p, 6, 6), 1);
  set_warnings_enabled(false);
  const Raster a = textured(12, 12, 2);
  EXPECT_NO_THROW(tvl1_flow(a, a, p));
  set_warnings_enabled(true);
}

TEST(Tvl1, ParamValidation) {
  FlowParams p;
  p.tau = 0.3;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.scale_factor = 1.0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.n_warps = 0;
  EXPECT_THROW(p.validate(), Error);
  EXPECT_NO_THROW(FlowParams{}.validate());
}

TEST(Warp, ZeroFlowIsIdentity) {
  const Raster a = textured(20, 24, 6);
  const Raster w = warp(a, FlowField(20, 24));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(w.values[i], a.values[i]);
}

TEST(Warp, IntegerFlowShiftsByOnePixel) {
  const Raster a = textured(20, 24, 7);
  const Raster w = warp(a, FlowField::uniform(20, 24, 1.0, 0.0));
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 1; c < 24; ++c) EXPECT_EQ(w(r, c), a(r, c - 1));
  // Column 0 samples outside the frame and takes the border value.
  for (std::size_t r = 0; r < 20; ++r) EXPECT_EQ(w(r, 0), a(r, 0));
}

TEST(Warp, CornerOutsideFrameClampsToBorder) {
  Raster a(4, 4);
  for (std::size_t i = 0; i < a.size(); ++i) a.values[i] = double(i);
  FlowField f(4, 4);
  f.u[0] = 3.0;
  f.v[0] = 2.5;
  EXPECT_EQ(warp(a, f)(0, 0), a(0, 0));
}

TEST(Warp, FlowImprovesAlignment) {
  const Raster i0 = textured(48, 48, 8), i1 = textured(48, 48, 8, 1.3, 0.7);
  const FlowField f = tvl1_flow(i0, i1);
  EXPECT_LT(mean_abs_diff(warp(i0, f), i1), mean_abs_diff(i0, i1));
}

TEST(NowcastError, StaticScene) {
  const Raster a = textured(40, 40, 9);
  const Raster e = nowcast_error(a, a, a);
  for (double v : e.values) EXPECT_LT(v, 0.02);
}

TEST(NowcastError, UniformlyTranslatingBlob) {
  const Raster a = blob(48, 48, 20, 14, 0.8, 4.0), b = blob(48, 48, 20, 16, 0.8, 4.0), c = blob(48, 48, 20, 18, 0.8, 4.0);
  const Raster e = nowcast_error(a, b, c);
  EXPECT_LT(interior_mean(48, 48, 4, [&](auto r, auto k) { return e(r, k); }), 0.05);
}

TEST(NowcastError, NewBlobAppearsOnlyAtLastFrame) {
  const double amp = 0.4;
  const Raster bg = textured(48, 48, 10);
  Raster now = bg;
  const Raster add = blob(48, 48, 24, 24, amp, 2.5);
  for (std::size_t i = 0; i < now.size(); ++i) now.values[i] += add.values[i];
  const Raster e = nowcast_error(bg, bg, now);
  EXPECT_NEAR(e(24, 24), amp, 0.02);
  for (std::size_t r = 0; r < 48; ++r)
    for (std::size_t c = 0; c < 48; ++c)
      if (std::hypot(double(r) - 24, double(c) - 24) > 12) EXPECT_LT(e(r, c), 0.02);
}

TEST(NowcastError, NonNegative) {
  const Raster a = textured(32, 32, 11), b = textured(32, 32, 11, 1, 1), c = textured(32, 32, 12);
  for (double v : nowcast_error(a, b, c).values) EXPECT_GE(v, 0.0);
}

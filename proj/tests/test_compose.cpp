#include <gtest/gtest.h>

#include <cmath>

#include "advdoodle/compose.hpp"
#include "advdoodle/rng.hpp"

using namespace advdoodle;

namespace {

RgbImage random_image(Rng& rng, int h, int w) {
  RgbImage x(h, w);
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  return x;
}

}  // namespace

TEST(Doodle, OffCanvasDoodleLeavesImageExact) {
  Rng rng(1);
  const auto x = random_image(rng, 16, 16);
  ControlPointSet v(2, 4);
  for (auto& p : v.points()) p = {-100.0, -100.0};
  EXPECT_EQ(doodle(x, v, AffineParams::identity(canvas_center(x.canvas())), {}), x);
}

TEST(Composite, FullCoverageIsBlack) {
  Rng rng(2);
  const auto x = random_image(rng, 8, 8);
  CoverageMap cov({8, 8}, {});
  cov.at(3, 4) = 1.0;
  const auto out = composite(x, cov);
  for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(out.at(ch, 3, 4), 0.0f);
  EXPECT_EQ(out.at(0, 3, 5), x.at(0, 3, 5));
}

TEST(Composite, HalfCoverageHalvesChannels) {
  RgbImage x(8, 8);
  x.at(0, 2, 2) = 0.8f;
  x.at(1, 2, 2) = 0.6f;
  x.at(2, 2, 2) = 0.4f;
  CoverageMap cov({8, 8}, {});
  cov.at(2, 2) = 0.5;
  const auto out = composite(x, cov);
  EXPECT_FLOAT_EQ(out.at(0, 2, 2), 0.4f);
  EXPECT_FLOAT_EQ(out.at(1, 2, 2), 0.3f);
  EXPECT_FLOAT_EQ(out.at(2, 2, 2), 0.2f);
}

TEST(Composite, ShapeMismatchIsInvalidInput) {
  RgbImage x(8, 8);
  CoverageMap cov({8, 9}, {});
  try {
    composite(x, cov);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
}

TEST(Composite, RangeAndMonotonicity) {
  Rng rng(3);
  const auto x = random_image(rng, 16, 16);
  CoverageMap lo({16, 16}, {}), hi({16, 16}, {});
  for (std::size_t i = 0; i < lo.size(); ++i) {
    lo.values[i] = rng.uniform();
    hi.values[i] = std::min(1.0, lo.values[i] + rng.uniform(0, 0.3));
  }
  const auto a = composite(x, lo), b = composite(x, hi);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    EXPECT_GE(a.data[i], 0.0f);
    EXPECT_LE(a.data[i], 1.0f);
    EXPECT_LE(b.data[i], a.data[i]);
  }
}

TEST(BackpropDoodle, Examples) {
  const int h = 8, w = 8;
  RgbImage ones(h, w), black(h, w);
  for (auto& v : ones.data) v = 1.0f;
  std::vector<float> up(ones.data.size(), 1.0f), zero(ones.data.size(), 0.0f);
  for (double g : backprop_doodle<float>(up, ones)) EXPECT_EQ(g, -3.0);
  for (double g : backprop_doodle<float>(zero, ones)) EXPECT_EQ(g, 0.0);
  for (double g : backprop_doodle<float>(up, black)) EXPECT_EQ(g, 0.0);
  EXPECT_THROW(backprop_doodle<float>(std::vector<float>(3), ones), Error);
}

TEST(BackpropDoodle, MatchesFiniteDifferences) {
  Rng rng(4);
  BasicImage<double> x(8, 8);
  for (auto& v : x.data) v = rng.uniform();
  std::vector<double> up(x.data.size());
  for (auto& u : up) u = rng.uniform(-1, 1);
  CoverageMap cov({8, 8}, {});
  for (auto& c : cov.values) c = rng.uniform(0.1, 0.9);
  const auto grad = backprop_doodle<double>(up, x);
  auto f = [&](const CoverageMap& m) {
    const auto out = composite(x, m);
    double s = 0;
    for (std::size_t i = 0; i < up.size(); ++i) s += up[i] * out.data[i];
    return s;
  };
  for (std::size_t i = 0; i < cov.size(); i += 5) {
    auto p = cov, m = cov;
    p.values[i] += 1e-6;
    m.values[i] -= 1e-6;
    EXPECT_NEAR((f(p) - f(m)) / 2e-6, grad[i], 1e-7);
  }
}

TEST(Doodle, SharpStrokesApproachHardOverlay) {
  const Canvas c{32, 32};
  RgbImage x(32, 32);
  for (auto& v : x.data) v = 1.0f;
  ControlPointSet v(1, 4);
  v.at(0, 0) = {3.2, 5.1};
  v.at(0, 1) = {12.7, 28.3};
  v.at(0, 2) = {20.4, 2.9};
  v.at(0, 3) = {29.1, 26.6};
  RasterConfig sharp;
  sharp.softness_px = 0.05;
  CoverageMap cov;
  const auto out = doodle(x, v, AffineParams::identity(canvas_center(c)), sharp, &cov);
  const auto mask = hard_mask(cov);
  std::vector<detail::NearestHit> hits;
  detail::nearest_map(flatten(v.curve(0)), c, 10.0, hits);
  const double half = sharp.width_px / 2.0;
  int checked = 0;
  for (int h = 0; h < 32; ++h)
    for (int w = 0; w < 32; ++w) {
      const auto& hit = hits[static_cast<std::size_t>(h) * 32 + w];
      // Transition band: within 3 tau of the stroke edge.
      if (hit.active() && std::abs(hit.dist - half) < 3 * sharp.softness_px) continue;
      const double hard = mask.at(h, w) ? 0.0 : 1.0;
      EXPECT_LT(std::abs(out.at(0, h, w) - hard), 0.1);
      ++checked;
    }
  EXPECT_GT(checked, 900);
}

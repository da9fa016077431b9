#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "advdoodle/attack.hpp"
#include "support.hpp"

using namespace advdoodle;
using namespace testing_support;

namespace {

// 32x32 flat grey image; the darkness model flips once ~5% of it is inked.
struct DarkCase {
  int size = 32;
  RgbImage x = flat_image(32, 0.8, 0);
  tinynet::Model<float> model = darkness_model(32, 0.8, 0.05);

  AttackConfig config(int iterations = 150) const {
    AttackConfig cfg;
    cfg.curves = 1;
    cfg.iterations = iterations;
    cfg.transform_batch = 4;
    cfg.lr = 0.5;
    cfg.seed = 11;
    return cfg;
  }
};

double hard_size(const ControlPointSet& v, Canvas c, const AttackConfig& cfg) {
  return doodle_size(rasterize(v, c, cfg.raster), SizeMode::hard, cfg.hard_threshold);
}

}  // namespace

TEST(AttackLoss, UniformModelGivesLogOneOverC) {
  Rng rng(1);
  const auto model = mean_colour_model(16, 4);  // all-zero weights
  const auto x = random_image(rng, 16);
  const auto v = init_control_points(2, 4, {16, 16}, rng);
  const auto r = attack_loss(model, x, 0, v, EotConfig{}, 5, {}, rng);
  EXPECT_NEAR(r.loss, std::log(0.25), 1e-6);
  EXPECT_NEAR(r.mean_f_s, 0.25, 1e-6);
  for (double g : r.grad.coords()) EXPECT_EQ(g, 0.0);
}

TEST(AttackLoss, SingleIdentityDrawIsSingleSampleLoss) {
  Rng rng(2);
  const DarkCase dc;
  const auto v = init_control_points(1, 4, {32, 32}, rng);
  Rng r1(3);
  const auto r = attack_loss(dc.model, dc.x, 0, v, EotConfig::identity(), 1, {}, r1);
  const auto xd = doodle(dc.x, v, AffineParams::identity(canvas_center({32, 32})), {});
  const auto p = dc.model.forward(xd);
  EXPECT_NEAR(r.loss, std::log(p[0]), 1e-6);
}

TEST(AttackLoss, IdentityReuseMatchesFullComputation) {
  // The identity shortcut must give what B separate identical draws give.
  Rng rng(4);
  const DarkCase dc;
  const auto v = init_control_points(1, 4, {32, 32}, rng);
  Rng a(5), b(5);
  const auto batched = attack_loss(dc.model, dc.x, 0, v, EotConfig::identity(), 6, {}, a);
  double loss = 0;
  RasterGradient g(v);
  Rng c(5);
  for (int i = 0; i < 6; ++i) {
    const auto one = attack_loss(dc.model, dc.x, 0, v, EotConfig::identity(), 1, {}, c);
    loss += one.loss;
    g += one.grad;
  }
  EXPECT_DOUBLE_EQ(batched.loss, loss / 6);
  for (std::size_t k = 0; k < g.coords().size(); ++k) EXPECT_NEAR(batched.grad.coords()[k], g.coords()[k] / 6, 1e-12);
  for (int i = 0; i < 24; ++i) b.uniform();
  EXPECT_EQ(a.next(), b.next());  // four draws per transform consumed
}

TEST(AttackLoss, MatchesFiniteDifferencesWithFrozenDraws) {
  const Canvas c{16, 16};
  const RasterConfig raster;
  const EotConfig eot;
  const int batch = 3;
  // Small enough that no ReLU or max-pool switches inside the network.
  const double h = 1e-5;
  Rng rng(6);
  int compared = 0;
  double worst = 0;
  for (int trial = 0; trial < 6; ++trial) {
    auto model = tinynet::make_model<double>(trial % 2 ? "cnn-b" : "cnn-a", 3, 16);
    model.init_weights(rng);
    const auto x = random_image<double>(rng, 16);
    const auto v = init_control_points(1 + trial % 2, 4, c, rng);
    const std::uint64_t seed = 100 + trial;
    // The draws this seed produces, to screen out non-smooth pixels.
    std::vector<AffineParams> ts;
    Rng probe(seed);
    for (int b = 0; b < batch; ++b) ts.push_back(sample_affine(eot, c, probe));
    auto loss_at = [&](const ControlPointSet& w) {
      Rng r(seed);
      return attack_loss(model, x, 1, w, eot, batch, raster, r).loss;
    };
    Rng r(seed);
    const auto an = attack_loss(model, x, 1, v, eot, batch, raster, r);
    for (std::size_t k = 0; k < v.coords().size(); ++k) {
      auto plus = v, minus = v;
      plus.coords()[k] += h;
      minus.coords()[k] -= h;
      bool smooth = true;
      for (const auto& t : ts) {
        const auto bad = unsmooth_pixels({apply_affine(v, t, c), apply_affine(plus, t, c),
                                          apply_affine(minus, t, c)}, c, raster, 1e-2, true);
        for (bool b : bad) smooth = smooth && !b;
      }
      if (!smooth) continue;
      const double fd = (loss_at(plus) - loss_at(minus)) / (2 * h);
      const double a = an.grad.coords()[k];
      worst = std::max(worst, std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-4}));
      ++compared;
    }
  }
  EXPECT_GT(compared, 30);
  EXPECT_LT(worst, 1e-3);
}

TEST(AttackLoss, RejectsEmptyBatch) {
  Rng rng(7);
  const DarkCase dc;
  EXPECT_THROW(attack_loss(dc.model, dc.x, 0, init_control_points(1, 4, {32, 32}, rng), {}, 0, {}, rng), Error);
}

TEST(RegularizedLoss, Examples) {
  EXPECT_EQ(regularized_loss(0.3, 0.5, 0.0, true), 0.3);
  EXPECT_EQ(regularized_loss(0.3, 0.5, 7.0, false), 0.3);
  EXPECT_DOUBLE_EQ(regularized_loss(0.3, 0.01, 1.0, true), 0.31);
  ControlPointSet v(1, 4);
  for (int n = 0; n < 4; ++n) v.at(0, n) = {2.0 + 4 * n, 8.5};
  const double soft = doodle_size(rasterize(v, {16, 16}, {}), SizeMode::soft);
  EXPECT_DOUBLE_EQ(regularized_loss(-1.0, v, {16, 16}, {}, 2.0, true), -1.0 + 2.0 * soft);
  EXPECT_EQ(regularized_loss(-1.0, v, {16, 16}, {}, 2.0, false), -1.0);
}

TEST(Validate, NeverAndAlwaysTarget) {
  Rng rng(8);
  const auto x = random_image(rng, 16);
  const auto v = init_control_points(1, 4, {16, 16}, rng);
  const auto never = constant_model(16, 3, 2);
  EXPECT_TRUE(validate_attack(never, x, 0, v, EotConfig{}, 10, {}, rng));
  EXPECT_FALSE(validate_attack(never, x, 2, v, EotConfig{}, 10, {}, rng));
  EXPECT_EQ(AttackConfig{}.transform_batch, 10);
}

TEST(AttackConfig, PaperDefaultsAndValidation) {
  const AttackConfig cfg;
  EXPECT_EQ(cfg.iterations, 10000);
  EXPECT_EQ(cfg.transform_batch, 10);
  EXPECT_EQ(cfg.alpha, 1.0);
  EXPECT_EQ(cfg.lr, 1.0);
  EXPECT_EQ(cfg.max_restarts, 3);
  EXPECT_EQ(cfg.points_per_curve, 4);
  EXPECT_EQ(cfg.raster.width_px, 1.5);
  for (auto mutate : std::vector<std::function<void(AttackConfig&)>>{
           [](AttackConfig& c) { c.transform_batch = 0; }, [](AttackConfig& c) { c.iterations = 0; },
           [](AttackConfig& c) { c.alpha = -1; }, [](AttackConfig& c) { c.max_restarts = 0; },
           [](AttackConfig& c) { c.curves = 0; }, [](AttackConfig& c) { c.points_per_curve = 1; }}) {
    AttackConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), Error);
  }
}

TEST(InitControlPoints, ReproducibleAndCentral) {
  const Canvas c{64, 48};
  Rng a(9), b(9);
  EXPECT_EQ(init_control_points(3, 4, c, a), init_control_points(3, 4, c, b));
  Rng rng(10);
  double sx = 0, sy = 0;
  int n = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto v = init_control_points(1, 4, c, rng);
    double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
    for (const auto& p : v.points()) {
      ASSERT_GE(p.x, 0.2 * c.width);
      ASSERT_LE(p.x, 0.8 * c.width);
      ASSERT_GE(p.y, 0.2 * c.height);
      ASSERT_LE(p.y, 0.8 * c.height);
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
      sx += p.x, sy += p.y, ++n;
    }
    ASSERT_LE(x1 - x0, 0.4 * c.width);
    ASSERT_LE(y1 - y0, 0.4 * c.height);
  }
  EXPECT_NEAR(sx / n, c.width / 2.0, 0.02 * c.width);
  EXPECT_NEAR(sy / n, c.height / 2.0, 0.02 * c.height);
}

TEST(RunAttack, AlwaysFooledSucceedsAtFirstIteration) {
  Rng rng(11);
  const auto x = random_image(rng, 16, 0);
  const auto model = constant_model(16, 3, 1);
  AttackConfig cfg;
  cfg.iterations = 5;
  cfg.seed = 3;
  const auto rec = run_attack(model, x, 0, cfg);
  EXPECT_TRUE(rec.success);
  EXPECT_EQ(rec.first_pass_at, 1);
  EXPECT_EQ(rec.phase2_entered_at, 2);
  EXPECT_EQ(rec.restarts_used, 1);
  ASSERT_TRUE(rec.best_v.has_value());
  EXPECT_LT(rec.s_min, std::numeric_limits<double>::infinity());
  EXPECT_EQ(rec.iteration_log.size(), 5u);
}

TEST(RunAttack, UnfoolableModelFailsAfterThreeTrials) {
  Rng rng(12);
  const auto x = random_image(rng, 16, 0);
  const auto model = constant_model(16, 3, 0);
  AttackConfig cfg;
  cfg.iterations = 7;
  const auto rec = run_attack(model, x, 0, cfg);
  EXPECT_FALSE(rec.success);
  EXPECT_FALSE(rec.best_v.has_value());
  EXPECT_TRUE(std::isinf(rec.s_min));
  EXPECT_EQ(rec.restarts_used, 3);
  EXPECT_EQ(rec.iteration_log.size(), 21u);
  EXPECT_FALSE(rec.first_pass_at.has_value());
  EXPECT_FALSE(rec.phase2_entered_at.has_value());
  for (const auto& e : rec.iteration_log) {
    EXPECT_FALSE(e.size_term);
    EXPECT_FALSE(e.validation_passed);
  }
  EXPECT_EQ(rec.iteration_log.back().trial, 2);
}

TEST(RunAttack, NumericFailureConsumesATrial) {
  Rng rng(13);
  const auto x = random_image(rng, 16, 0);
  auto model = constant_model(16, 2, 0);
  model.params()[1].bias[1] = std::numeric_limits<float>::quiet_NaN();
  AttackConfig cfg;
  cfg.iterations = 4;
  const auto rec = run_attack(model, x, 0, cfg);
  EXPECT_FALSE(rec.success);
  EXPECT_EQ(rec.restarts_used, 3);
  EXPECT_EQ(rec.numeric_failures.size(), 3u);
}

TEST(RunAttack, DarknessModelTwoPhases) {
  const DarkCase dc;
  const auto cfg = dc.config(200);
  ASSERT_EQ(tinynet::predict(dc.model, dc.x), 0);
  const auto rec = run_attack(dc.model, dc.x, 0, cfg);
  ASSERT_TRUE(rec.success);
  ASSERT_TRUE(rec.first_pass_at.has_value());
  EXPECT_GT(*rec.first_pass_at, 1);  // the random start is too small to fool it
  // Phase gate: the size term starts right after the first validation pass.
  EXPECT_EQ(*rec.phase2_entered_at, *rec.first_pass_at + 1);
  for (const auto& e : rec.iteration_log) {
    if (e.trial != rec.iteration_log.back().trial) continue;
    EXPECT_EQ(e.size_term, e.iteration > *rec.first_pass_at) << e.iteration;
  }
  // success <=> best_v <=> finite s_min, and s_min is the hard size of best_v
  EXPECT_TRUE(rec.best_v.has_value());
  EXPECT_DOUBLE_EQ(rec.s_min, hard_size(*rec.best_v, {32, 32}, cfg));
  // Ink needed: at least the 5% threshold, allowing for the soft edge.
  EXPECT_GT(rec.s_min, 0.03);
}

TEST(RunAttack, SMinNeverIncreases) {
  // Runs are deterministic, so truncating N_itr replays a prefix of one run.
  const DarkCase dc;
  double prev = std::numeric_limits<double>::infinity();
  int finite = 0;
  for (int n : {20, 40, 60, 90, 130, 200}) {
    const auto rec = run_attack(dc.model, dc.x, 0, dc.config(n));
    if (rec.restarts_used > 1) continue;  // a different trial is not a prefix
    EXPECT_LE(rec.s_min, prev) << n;
    prev = rec.s_min;
    finite += std::isfinite(rec.s_min);
  }
  EXPECT_GE(finite, 3);

  // The logged running value agrees: it only drops, only on passes, and ends at s_min.
  const auto rec = run_attack(dc.model, dc.x, 0, dc.config(200));
  double logged = std::numeric_limits<double>::infinity();
  for (const auto& e : rec.iteration_log) {
    EXPECT_LE(e.s_min, logged) << e.iteration;
    if (!e.validation_passed) {
      EXPECT_EQ(e.s_min, logged) << e.iteration;
    }
    logged = e.s_min;
  }
  EXPECT_EQ(logged, rec.s_min);
}

TEST(RunAttack, SuccessfulDoodleIsRobust) {
  const DarkCase dc;
  const auto cfg = dc.config(200);
  const auto rec = run_attack(dc.model, dc.x, 0, cfg);
  ASSERT_TRUE(rec.success);
  Rng rng(14);
  EXPECT_GE(robustness_rate(dc.model, dc.x, 0, *rec.best_v, cfg.eot, 100, cfg.raster, rng), 0.9);
}

TEST(RunAttack, SeededRunsAreBitIdentical) {
  const DarkCase dc;
  const auto a = run_attack(dc.model, dc.x, 0, dc.config(60));
  const auto b = run_attack(dc.model, dc.x, 0, dc.config(60));
  EXPECT_TRUE(same_record(a, b));
  auto other = dc.config(60);
  other.seed = 12;
  EXPECT_FALSE(same_record(a, run_attack(dc.model, dc.x, 0, other)));
}

TEST(RunAttack, RejectsWrongInputSize) {
  const DarkCase dc;
  EXPECT_THROW(run_attack(dc.model, flat_image(16, 0.5), 0, dc.config(3)), Error);
}

TEST(RunAttackBatch, ThreadCountDoesNotChangeResults) {
  const DarkCase dc;
  std::vector<RgbImage> images;
  for (double level : {0.8, 0.82, 0.85, 0.9}) images.push_back(flat_image(32, level, 0));
  const std::vector<std::uint64_t> ids = {4, 9, 1, 7};
  const auto cfg = dc.config(30);
  const auto one = run_attack_batch<float>(dc.model, images, ids, cfg, 1);
  const auto three = run_attack_batch<float>(dc.model, images, ids, cfg, 3);
  ASSERT_EQ(one.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(same_record(one[i], three[i])) << i;
    auto c = cfg;
    c.seed = image_seed(cfg.seed, ids[i]);
    EXPECT_TRUE(same_record(one[i], run_attack(dc.model, images[i], 0, c))) << i;
  }
  EXPECT_THROW(run_attack_batch<float>(dc.model, images, std::vector<std::uint64_t>{1}, cfg, 1), Error);
}

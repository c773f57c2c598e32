#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "axmlp/errors.hpp"
#include "axmlp/optim.hpp"
#include "axmlp/train.hpp"

using namespace axmlp;

namespace {

nn::NamedParameter scalar_param(double value, double grad) {
  Tensor t = Tensor::scalar(value, true);
  if (grad != 0.0) t.grad()[0] = grad;
  return {"w", t};
}

nn::ModelConfig tiny_config() {
  nn::ModelConfig c;
  c.crop_shape = {16, 16, 16};
  c.patch = {8, 8, 8};
  c.hidden = 4;
  c.depth = 2;
  return c;
}

// Bright ball of radius 3 on a noisy background.
optim::Sample ball(std::uint64_t seed, const std::string& id) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_real_distribution<double> centre(6.0, 10.0);
  const double cd = centre(rng), ch = centre(rng), cw = centre(rng);
  optim::Sample s{id, data::Volume({16, 16, 16}), data::Volume({16, 16, 16})};
  for (std::size_t d = 0; d < 16; ++d)
    for (std::size_t h = 0; h < 16; ++h)
      for (std::size_t w = 0; w < 16; ++w) {
        const double r2 = (d - cd) * (d - cd) + (h - ch) * (h - ch) + (w - cw) * (w - cw);
        s.mask.at(d, h, w) = r2 < 9.0 ? 1.0 : 0.0;
        s.image.at(d, h, w) = s.mask.at(d, h, w) + noise(rng);
      }
  return s;
}

optim::TrainSchedule short_schedule(std::size_t epochs) {
  optim::TrainSchedule s;
  s.epochs = epochs;
  s.decay_epoch = epochs > 1 ? epochs - 1 : 0;
  s.lr_after = epochs > 1 ? 1e-3 : 1e-2;
  return s;
}

}  // namespace

TEST_SUITE("adam") {
  TEST_CASE("first step moves a scalar by lr against the gradient") {
    auto p = scalar_param(1.0, 0.5);
    optim::AdamState state;
    optim::adam_step({p}, state, 0.01);
    CHECK(std::abs(p.tensor.item() - 1.0 + 0.01) < 1e-6);
    CHECK(state.step == 1);
  }

  TEST_CASE("matches a hand-rolled Adam over several steps") {
    auto p = scalar_param(0.3, 0.0);
    optim::AdamState state;
    double w = 0.3, m = 0.0, v = 0.0;
    const double grads[] = {0.5, -1.5, 2.0, 0.1, -0.2};
    for (int t = 1; t <= 5; ++t) {
      const double g = grads[t - 1];
      p.tensor.zero_grad();
      p.tensor.grad()[0] = g;
      optim::adam_step({p}, state, 0.05);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      w -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(p.tensor.item() == doctest::Approx(w).epsilon(1e-14));
      CHECK(state.step == static_cast<std::size_t>(t));
      CHECK(state.v[0][0] >= 0.0);
    }
  }

  TEST_CASE("zero gradient leaves parameters unchanged") {
    auto a = scalar_param(2.5, 0.0);
    Tensor b = Tensor::from({3}, {1, 2, 3}, true);
    b.grad();
    optim::AdamState state;
    optim::adam_step({a, {"b", b}}, state, 0.01);
    CHECK(a.tensor.item() == 2.5);
    CHECK(b.data()[2] == 3.0);
  }

  TEST_CASE("gradients are left untouched") {
    auto p = scalar_param(0.0, 0.25);
    optim::AdamState state;
    optim::adam_step({p}, state, 0.1);
    CHECK(p.tensor.grad()[0] == 0.25);
  }

  TEST_CASE("positive gradient scaling keeps the first-step direction") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int trial = 0; trial < 100; ++trial) {
      const double g = u(rng);
      auto p1 = scalar_param(0.0, g), p2 = scalar_param(0.0, 2 * g);
      optim::AdamState s1, s2;
      optim::adam_step({p1}, s1, 0.01);
      optim::adam_step({p2}, s2, 0.01);
      CHECK(std::signbit(p1.tensor.item()) == std::signbit(p2.tensor.item()));
      CHECK(p1.tensor.item() == doctest::Approx(p2.tensor.item()).epsilon(1e-6));
    }
  }

  TEST_CASE("non-finite gradients abort and name the block") {
    Tensor bad = Tensor::from({2}, {0, 0}, true);
    bad.grad()[1] = std::numeric_limits<double>::quiet_NaN();
    optim::AdamState state;
    try {
      optim::adam_step({scalar_param(1, 1), {"block3.grid_h.weight", bad}}, state, 0.01);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("block3.grid_h.weight") != std::string::npos);
    }
    CHECK(state.step == 0);
    bad.grad()[1] = std::numeric_limits<double>::infinity();
    optim::AdamState fresh;
    CHECK_THROWS_AS(optim::adam_step({{"x", bad}}, fresh, 0.01), NumericalError);
  }

  TEST_CASE("state must match the parameter list") {
    optim::AdamState state;
    optim::adam_step({scalar_param(1, 1)}, state, 0.01);
    CHECK_THROWS_AS(optim::adam_step({scalar_param(1, 1), scalar_param(1, 1)}, state, 0.01), DimensionError);
  }
}

TEST_SUITE("schedule") {
  TEST_CASE("default step schedule") {
    const optim::TrainSchedule s;
    CHECK(optim::lr_at(s, 0) == 1e-2);
    CHECK(optim::lr_at(s, 149) == 1e-2);
    CHECK(optim::lr_at(s, 150) == 1e-3);
    CHECK(optim::lr_at(s, 199) == 1e-3);
    CHECK_THROWS_AS(optim::lr_at(s, 200), ParameterError);
    int jumps = 0;
    for (std::size_t e = 1; e < s.epochs; ++e) jumps += optim::lr_at(s, e) != optim::lr_at(s, e - 1);
    CHECK(jumps == 1);
  }

  TEST_CASE("invalid schedules are rejected") {
    optim::TrainSchedule s;
    s.decay_epoch = 200;
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s = {};
    s.batch_size = 0;
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s = {};
    s.lr_initial = -1;
    CHECK_THROWS_AS(s.validate(), ParameterError);
  }
}

TEST_SUITE("train") {
  TEST_CASE("input validation") {
    nn::AxialMLPModel model(tiny_config(), 0);
    const std::vector<optim::Sample> one{ball(1, "a")};
    data::AugmentConfig aug;
    CHECK_THROWS_AS(optim::train(model, {}, one, short_schedule(2), aug, {}), ParameterError);
    CHECK_THROWS_AS(optim::train(model, one, {}, short_schedule(2), aug, {}), ParameterError);
    optim::Sample wrong{"w", data::Volume({8, 8, 8}), data::Volume({8, 8, 8})};
    CHECK_THROWS_AS(optim::train(model, {wrong}, one, short_schedule(2), aug, {}), DimensionError);
  }

  TEST_CASE("a non-finite loss aborts training") {
    nn::AxialMLPModel model(tiny_config(), 0);
    auto bad = ball(12, "bad");
    bad.image.data[5] = std::numeric_limits<double>::quiet_NaN();
    data::AugmentConfig aug;
    aug.enabled = false;
    try {
      optim::train(model, {bad}, {ball(13, "ok")}, short_schedule(2), aug, {});
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("'bad'") != std::string::npos);
    }
  }

  TEST_CASE("default schedule yields 200 history entries and best-epoch selection") {
    nn::AxialMLPModel model(tiny_config(), 1);
    const std::vector<optim::Sample> set{ball(2, "a"), ball(3, "b")};
    data::AugmentConfig aug;
    aug.enabled = false;
    std::ostringstream log;
    optim::TrainOptions opts;
    opts.log = &log;
    const auto result = optim::train(model, set, set, optim::TrainSchedule{}, aug, opts);
    REQUIRE(result.history.size() == 200);
    double best = -1;
    std::size_t arg = 0;
    for (const auto& r : result.history) {
      CHECK(r.lr == optim::lr_at(optim::TrainSchedule{}, r.epoch));
      if (r.val_dice > best) best = r.val_dice, arg = r.epoch;
    }
    CHECK(result.best_val_dice == best);
    CHECK(result.best_epoch == arg);
    CHECK(result.best.meta.at("epoch") == arg);
    // The stored checkpoint reproduces the recorded validation Dice.
    CHECK(optim::mean_dice(result.best.instantiate(), set) == doctest::Approx(best).epsilon(1e-12));
    std::size_t lines = 0;
    for (char ch : log.str()) lines += ch == '\n';
    CHECK(lines == 200);
  }

  TEST_CASE("identical seeds give identical trajectories") {
    const std::vector<optim::Sample> set{ball(4, "a"), ball(5, "b"), ball(6, "c")};
    data::AugmentConfig aug;
    optim::TrainOptions opts;
    opts.seed = 77;
    auto run = [&] {
      nn::AxialMLPModel model(tiny_config(), 9);
      auto r = optim::train(model, set, set, short_schedule(3), aug, opts);
      return std::make_pair(r, model.flat_parameters());
    };
    const auto [a, pa] = run();
    const auto [b, pb] = run();
    CHECK(pa == pb);
    CHECK(a.best.parameters == b.best.parameters);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(a.history[e].train_loss == b.history[e].train_loss);
      CHECK(a.history[e].val_dice == b.history[e].val_dice);
    }
    opts.seed = 78;
    nn::AxialMLPModel other(tiny_config(), 9);
    optim::train(other, set, set, short_schedule(3), aug, opts);
    CHECK(other.flat_parameters() != pa);
  }

  TEST_CASE("one epoch on one sample lowers its loss for at least 95 of 100 seeds") {
    int improved = 0;
    data::AugmentConfig aug;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      nn::AxialMLPModel model(tiny_config(), seed);
      const std::vector<optim::Sample> set{ball(seed + 500, "s")};
      const double before = optim::sample_loss(model, set[0]);
      optim::TrainOptions opts;
      opts.seed = seed;
      optim::train(model, set, set, short_schedule(1), aug, opts);
      if (optim::sample_loss(model, set[0]) < before) ++improved;
    }
    MESSAGE("improved for " << improved << "/100 seeds");
    CHECK(improved >= 95);
  }
}

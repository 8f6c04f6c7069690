#include <doctest.h>

#include <cmath>
#include <sstream>

#include "tracer/calibration.hpp"
#include "tracer/synth.hpp"

using namespace tracer;

TEST_CASE("pairwise logistic loss") {
  CHECK(pairwise_logistic_loss({1.0}, {1.0}, 1.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(pairwise_logistic_loss({2.0}, {1.0}, 1.0) ==
        doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  // widely separated scores drive the loss to zero without overflowing
  CHECK(pairwise_logistic_loss({1e6}, {0.0}, 0.1) == doctest::Approx(0.0));
  CHECK(std::isfinite(pairwise_logistic_loss({0.0}, {1e6}, 0.1)));
  CHECK_THROWS_AS(pairwise_logistic_loss({}, {1.0}, 1.0), CalibrationError);
  CHECK_THROWS_AS(pairwise_logistic_loss({1.0}, {}, 1.0), CalibrationError);
}

TEST_CASE("loss does not increase when failures score higher") {
  const std::vector<double> fail = {1.0, 1.5};
  const std::vector<double> succ = {0.5, 0.8};
  const double base = pairwise_logistic_loss(fail, succ, 0.1);
  std::vector<double> shifted = fail;
  for (auto& s : shifted) s += 0.7;
  CHECK(pairwise_logistic_loss(shifted, succ, 0.1) <= base + 1e-12);
}

TEST_CASE("fit separates planted loops from clean episodes") {
  ScenarioSpec spec;
  spec.episodes = 120;
  spec.hazard_density = 0.5;
  spec.hazard_kinds = {HazardKind::loop};
  spec.seed = 21;
  const auto data = generate(spec);

  // sanity: the two classes are separable before fitting
  std::size_t failures = 0;
  for (const auto& t : data.trajectories) failures += *t.outcome;
  REQUIRE(failures > 10);
  REQUIRE(failures < data.trajectories.size() - 10);

  HashedBowEmbedder emb(256);
  ContentFilterConfig filter;
  RepetitionConfig rep;
  GridSpec grid;
  grid.alpha = {0.0, 1.0, 2.0};
  grid.beta = {0.0, 1.0};
  grid.gamma = {0.0, 1.0};
  grid.k = {0.1, 0.3};
  grid.refine_levels = 1;

  std::vector<TrajectoryRecord> train(data.trajectories.begin(),
                                      data.trajectories.begin() + 80);
  std::vector<TrajectoryRecord> held(data.trajectories.begin() + 80,
                                     data.trajectories.end());
  const auto report = fit(train, held, grid, filter, rep, emb);
  CHECK(report.best.alpha > 0.0);
  CHECK(report.validation_auroc > 0.9);
  // best attains the minimum over the sampled surface
  for (const auto& [p, loss] : report.surface)
    CHECK(report.loss <= loss + 1e-12);
}

TEST_CASE("single-candidate grid returns that theta") {
  ScenarioSpec spec;
  spec.episodes = 30;
  spec.hazard_density = 0.5;
  spec.seed = 3;
  const auto data = generate(spec);
  HashedBowEmbedder emb(128);
  GridSpec grid;
  grid.alpha = {1.5};
  grid.beta = {2.5};
  grid.gamma = {0.5};
  grid.k = {0.2};
  grid.refine_levels = 0;
  grid.w_step = 2.0;  // only w = 0 is visited after the pilot
  const auto report =
      fit(data.trajectories, {}, grid, ContentFilterConfig{},
          RepetitionConfig{}, emb);
  CHECK(report.best.alpha == 1.5);
  CHECK(report.best.beta == 2.5);
  CHECK(report.best.gamma == 0.5);
  CHECK(report.best.k == 0.2);
}

TEST_CASE("duplicating the dataset leaves the best theta unchanged") {
  ScenarioSpec spec;
  spec.episodes = 40;
  spec.hazard_density = 0.5;
  spec.seed = 13;
  auto data = generate(spec);
  HashedBowEmbedder emb(128);
  GridSpec grid;
  grid.alpha = {0.0, 1.0, 2.0};
  grid.beta = {0.0, 1.0};
  grid.gamma = {1.0};
  grid.k = {0.2, 0.5};
  grid.refine_levels = 0;

  const auto once = fit(data.trajectories, {}, grid, ContentFilterConfig{},
                        RepetitionConfig{}, emb);
  auto doubled = data.trajectories;
  for (auto t : data.trajectories) {
    t.episode_id += "-copy";
    doubled.push_back(std::move(t));
  }
  const auto twice = fit(doubled, {}, grid, ContentFilterConfig{},
                         RepetitionConfig{}, emb);
  CHECK(once.best == twice.best);
  CHECK(once.loss == doctest::Approx(twice.loss).epsilon(1e-12));
}

TEST_CASE("fit requires both classes") {
  ScenarioSpec spec;
  spec.episodes = 10;
  spec.hazard_density = 0.0;
  const auto data = generate(spec);
  HashedBowEmbedder emb(128);
  CHECK_THROWS_AS(fit(data.trajectories, {}, GridSpec{}, ContentFilterConfig{},
                      RepetitionConfig{}, emb),
                  CalibrationError);
}

TEST_CASE("fit is deterministic byte for byte") {
  ScenarioSpec spec;
  spec.episodes = 30;
  spec.hazard_density = 0.5;
  spec.seed = 5;
  const auto data = generate(spec);
  HashedBowEmbedder emb(128);
  GridSpec grid;
  grid.alpha = {0.0, 2.0};
  grid.beta = {0.0, 2.0};
  grid.gamma = {1.0};
  grid.k = {0.2};
  grid.refine_levels = 1;
  const auto run = [&] {
    HashedBowEmbedder local(128);
    const auto report = fit(data.trajectories, {}, grid, ContentFilterConfig{},
                            RepetitionConfig{}, local);
    std::ostringstream out;
    write_calibration_report(out, report);
    return out.str();
  };
  CHECK(run() == run());
}

TEST_CASE("calibration report round-trips") {
  CalibrationReport report;
  report.best = {1.0, 2.0, 0.5, 0.3, 0.15};
  report.loss = 0.125;
  report.validation_auroc = 0.91;
  report.surface.emplace_back(TracerParams{0.5, 1.0, 1.0, 0.1, 0.25}, 0.4);
  std::stringstream buf;
  write_calibration_report(buf, report);
  const auto back = read_calibration_report(buf);
  CHECK(back.best == report.best);
  CHECK(back.loss == report.loss);
  CHECK(back.surface.size() == 1);
}

TEST_CASE("ranking is invariant to scaling the situational weights") {
  ScenarioSpec spec;
  spec.episodes = 40;
  spec.hazard_density = 0.5;
  spec.seed = 29;
  const auto data = generate(spec);
  HashedBowEmbedder emb(128);
  ContentFilterConfig filter;
  RepetitionConfig rep;
  // scores scale by lambda when (alpha,beta,gamma) scale and U is absent
  auto stripped = data.trajectories;
  for (auto& t : stripped)
    for (auto& s : t.steps) s.token_logprobs.reset();

  TracerParams p1{1.0, 2.0, 1.0, 0.3, 0.25};
  TracerParams p2{3.0, 6.0, 3.0, 0.3, 0.25};
  std::vector<double> s1, s2;
  std::vector<int> labels;
  for (const auto& t : stripped) {
    const auto sig = compute_step_signals(t, filter, rep, emb);
    s1.push_back(tracer_score(risk_values(step_risks(t, sig, p1)), p1));
    s2.push_back(tracer_score(risk_values(step_risks(t, sig, p2)), p2));
    labels.push_back(*t.outcome);
  }
  for (std::size_t i = 0; i < s1.size(); ++i)
    CHECK(s2[i] == doctest::Approx(3.0 * s1[i]).epsilon(1e-9));
  CHECK(auroc(s1, labels) == doctest::Approx(auroc(s2, labels)));
}

TEST_CASE("select_threshold") {
  SUBCASE("perfect separation returns the gap midpoint") {
    CHECK(select_threshold({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) ==
          doctest::Approx(0.5));
  }
  SUBCASE("identical scores return that score") {
    CHECK(select_threshold({0.4, 0.4, 0.4}, {1, 0, 1}) == 0.4);
  }
  SUBCASE("one class is an error") {
    CHECK_THROWS_AS(select_threshold({0.1, 0.2}, {1, 1}), EvaluationError);
  }
}

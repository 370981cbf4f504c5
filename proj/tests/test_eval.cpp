#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ialstm/eval.hpp"
#include "reference.hpp"
#include "support.hpp"

using namespace ialstm;
using ialstm::testing::Walker;

namespace {

Position world(double x, double y) { return {x, y, Units::world}; }

std::vector<TrajectoryWindow> crowd_windows(std::uint64_t seed, int walkers = 5, long length = 26) {
  return ialstm::testing::synthetic_windows(seed, walkers, length);
}

EvalConfig greedy_config() {
  EvalConfig c;
  c.mode = RolloutMode::greedy;
  c.runs = 3;
  c.sigma = 2.0;
  return c;
}

}  // namespace

TEST_CASE("ade and fde closed forms") {
  const std::vector<Position> truth{world(0, 0), world(1, 1), world(2, 3)};
  std::vector<Position> shifted;
  for (const auto& p : truth) shifted.push_back(world(p.x + 0.3, p.y + 0.4));
  CHECK(ade(truth, truth) == 0.0);
  CHECK(fde(truth, truth) == 0.0);
  CHECK(ade(shifted, truth) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(fde(shifted, truth) == doctest::Approx(0.5).epsilon(1e-12));
  std::vector<Position> last = truth;
  last.back().x += 1.0;
  CHECK(fde(last, truth) == 1.0);
  CHECK(ade(last, truth) == doctest::Approx(1.0 / 3.0));

  const std::vector<Position> short_truth{world(0, 0)};
  CHECK_THROWS_AS(ade(truth, short_truth), DimensionError);
  CHECK_THROWS_AS(fde(truth, short_truth), DimensionError);
  CHECK_THROWS_AS(ade(std::vector<Position>{}, std::vector<Position>{}), DimensionError);
}

TEST_CASE("ade and fde against direct distances, translation invariant") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Position> a, b, a2, b2;
    const double tx = u(rng), ty = u(rng);
    double sum = 0.0, last = 0.0;
    for (int k = 0; k < 12; ++k) {
      a.push_back(world(u(rng), u(rng)));
      b.push_back(world(u(rng), u(rng)));
      a2.push_back(world(a.back().x + tx, a.back().y + ty));
      b2.push_back(world(b.back().x + tx, b.back().y + ty));
      last = std::sqrt((a.back().x - b.back().x) * (a.back().x - b.back().x) +
                       (a.back().y - b.back().y) * (a.back().y - b.back().y));
      sum += last;
    }
    CHECK(ade(a, b) == doctest::Approx(sum / 12).epsilon(1e-12));
    CHECK(fde(a, b) == doctest::Approx(last).epsilon(1e-12));
    CHECK(ade(a, b) >= 0.0);
    CHECK(ade(a2, b2) == doctest::Approx(ade(a, b)).epsilon(1e-9));
    CHECK(fde(a2, b2) == doctest::Approx(fde(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("sample variance") {
  const std::vector<double> v{1, 2, 3, 4};
  CHECK(sample_variance(v) == doctest::Approx(5.0 / 3.0));
  CHECK(sample_variance(std::vector<double>{7.0}) == 0.0);
}

TEST_CASE("greedy rollout with zero weights stays at the scene center") {
  const auto windows = crowd_windows(2);
  REQUIRE_FALSE(windows.empty());
  const auto& w = windows.front();
  const ModelParams p = ModelParams::zeros({3, 4});
  std::mt19937_64 rng(0);
  const InteractionConfig ic{4.0, CorrentropySpace::world, true, w.transform};
  const auto out = rollout(p, w, ic, rng, RolloutMode::greedy);
  REQUIRE(out.size() == w.targets.size());
  const Position center = w.transform.denormalize({0, 0, Units::normalized});
  for (const auto& t : out) {
    CHECK(t.observed.size() == 8);
    CHECK(t.truth.size() == 12);
    REQUIRE(t.predicted.size() == 12);
    for (const auto& p : t.predicted) {
      CHECK(p.units == Units::world);
      CHECK(p.x == doctest::Approx(center.x).epsilon(1e-12));
      CHECK(p.y == doctest::Approx(center.y).epsilon(1e-12));
    }
  }
}

TEST_CASE("sampled rollout is reproducible from the seed") {
  const auto windows = crowd_windows(3);
  const ModelParams p = ModelParams::initialize({3, 4}, 1);
  const InteractionConfig ic{4.0, CorrentropySpace::world, true, windows.front().transform};
  std::mt19937_64 a(11), b(11), c(12);
  const auto ra = rollout(p, windows.front(), ic, a, RolloutMode::sampled);
  const auto rb = rollout(p, windows.front(), ic, b, RolloutMode::sampled);
  const auto rc = rollout(p, windows.front(), ic, c, RolloutMode::sampled);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].predicted == rb[i].predicted);
    CHECK_FALSE(ra[i].predicted == rc[i].predicted);
  }
}

TEST_CASE("greedy rollout matches a hand-stepped feedback loop") {
  using namespace ialstm::reference;
  // Two walkers; both are targets.
  const Scene scene = normalize_scene(
      ialstm::testing::scene_of({{1, 0, 20, 0.0, 0.0, 0.4, 0.1}, {2, 0, 20, 2.0, 1.0, -0.3, 0.2}}));
  const auto windows = cut_windows(scene);
  REQUIRE(windows.size() == 1);
  const auto& w = windows.front();
  const ModelParams p = ModelParams::initialize({3, 4}, 21);
  const InteractionConfig ic{3.0, CorrentropySpace::world, true, w.transform};

  std::map<int, RefState> ref;
  for (std::size_t k = 0; k < 8; ++k) ref = reference_step(p, ref, w.frames[k], ic);
  std::map<int, std::vector<Position>> expected;
  for (std::size_t step = 0; step < 12; ++step) {
    std::map<int, Position> frame = w.frames[8 + step];
    for (const auto& [id, s] : ref) {
      const Position next = reference_mean(p, s.h);
      expected[id].push_back(w.transform.denormalize(next));
      frame[id] = next;
    }
    ref = reference_step(p, ref, frame, ic);
  }

  std::mt19937_64 rng(0);
  const auto got = rollout(p, w, ic, rng, RolloutMode::greedy);
  REQUIRE(got.size() == 2);
  for (const auto& t : got) {
    for (std::size_t k = 0; k < 12; ++k) {
      CHECK(t.predicted[k].x == doctest::Approx(expected[t.ped_id][k].x).epsilon(1e-10));
      CHECK(t.predicted[k].y == doctest::Approx(expected[t.ped_id][k].y).epsilon(1e-10));
    }
  }
}

TEST_CASE("feedback policy decides whether neighbor ground truth is used") {
  // Ped 1 is the only target; ped 2 leaves after frame 14. The two variants
  // differ only in ped 2's positions from frame 8 on.
  const std::vector<Walker> base{{1, 0, 20, 0.0, 0.0, 0.3, 0.0}, {2, 0, 15, 0.5, 0.5, 0.3, 0.0}};
  auto build = [](const std::vector<Walker>& ws, double late_shift) {
    std::ostringstream text;
    text.precision(17);
    for (const auto& w : ws)
      for (long k = 0; k < w.frames; ++k) {
        double y = w.y0 + w.vy * static_cast<double>(k);
        if (w.id == 2 && k >= 8) y += late_shift;
        text << (w.first_frame + k) * 10 << ' ' << w.id << ' ' << w.x0 + w.vx * static_cast<double>(k) << ' ' << y
             << '\n';
      }
    std::istringstream in(text.str());
    // Two far corner points pin the bounding box so both variants share one transform.
    Scene s = parse_dataset(in, FormatConfig{}, "f");
    s.frames.front().push_back({99, world(-20, -20)});
    s.frames.front().push_back({98, world(20, 20)});
    return cut_windows(normalize_scene(s)).front();
  };
  const TrajectoryWindow a = build(base, 0.0);
  const TrajectoryWindow b = build(base, 1.5);
  REQUIRE(a.targets == std::vector<int>{1});
  REQUIRE(a.transform == b.transform);
  const ModelParams p = ModelParams::initialize({3, 4}, 4);
  const InteractionConfig ic{4.0, CorrentropySpace::world, true, a.transform};
  std::mt19937_64 rng(0);
  const auto ta = rollout(p, a, ic, rng, RolloutMode::greedy, Feedback::targets_only);
  const auto tb = rollout(p, b, ic, rng, RolloutMode::greedy, Feedback::targets_only);
  CHECK_FALSE(ta[0].predicted == tb[0].predicted);
  const auto fa = rollout(p, a, ic, rng, RolloutMode::greedy, Feedback::all_predicted);
  const auto fb = rollout(p, b, ic, rng, RolloutMode::greedy, Feedback::all_predicted);
  CHECK(fa[0].predicted == fb[0].predicted);
}

TEST_CASE("evaluate statistics") {
  const auto windows = crowd_windows(4, 6, 30);
  const ModelParams p = ModelParams::initialize({3, 4}, 2);

  EvalConfig one = greedy_config();
  one.runs = 1;
  const MetricsReport r1 = evaluate(p, windows, "d", one);
  CHECK(r1.ade_var == 0.0);
  CHECK(r1.fde_var == 0.0);

  EvalConfig g = greedy_config();
  const MetricsReport rg = evaluate(p, windows, "d", g);
  CHECK(rg.ade_var == 0.0);
  CHECK(rg.ade_mean == r1.ade_mean);

  EvalConfig s = g;
  s.mode = RolloutMode::sampled;
  s.runs = 6;
  const MetricsReport a = evaluate(p, windows, "d", s);
  const MetricsReport b = evaluate(p, windows, "d", s);
  CHECK(a == b);
  s.threads = 3;
  CHECK(evaluate(p, windows, "d", s) == a);
  CHECK(a.run_ade.size() == 6);
  CHECK(a.ade_var > 0.0);

  double mean = 0.0;
  for (double v : a.run_ade) mean += v;
  mean /= 6.0;
  double var = 0.0;
  for (double v : a.run_ade) var += (v - mean) * (v - mean);
  var /= 5.0;
  CHECK(a.ade_mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(a.ade_var == doctest::Approx(var).epsilon(1e-12));

  // Run r draws from seed + r.
  EvalConfig single = s;
  single.runs = 1;
  single.seed = s.seed + 4;
  CHECK(evaluate(p, windows, "d", single).run_ade[0] == a.run_ade[4]);

  std::size_t targets = 0;
  for (const auto& w : windows) targets += w.targets.size();
  CHECK(a.trajectories == targets);
  CHECK(a.per_frame_ade.size() == 12);
  CHECK(a.per_frame_peds.size() == 12);

  CHECK_THROWS_AS(evaluate(p, std::span<const TrajectoryWindow>{}, "d", s), std::invalid_argument);
  EvalConfig zero = s;
  zero.runs = 0;
  CHECK_THROWS_AS(evaluate(p, windows, "d", zero), std::invalid_argument);
}

TEST_CASE("per-frame error and pedestrian counts") {
  // Staggered walkers so people leave during the prediction horizon.
  std::vector<Walker> walkers;
  for (int i = 0; i < 8; ++i) walkers.push_back({i, i, 20 + 2 * i, 0.5 * i, 0, 0.2, 0.1});
  walkers.push_back({50, 0, 12, 1, 1, 0.1, 0.1});
  walkers.push_back({51, 3, 14, -1, 1, 0.1, 0.1});
  const auto windows = cut_windows(normalize_scene(ialstm::testing::scene_of(walkers)));
  REQUIRE_FALSE(windows.empty());
  const ModelParams p = ModelParams::initialize({3, 4}, 2);
  EvalConfig c = greedy_config();
  c.runs = 1;
  const MetricsReport r = evaluate(p, windows, "d", c);
  for (std::size_t k = 1; k < 12; ++k) CHECK(r.per_frame_peds[k] <= r.per_frame_peds[k - 1]);

  std::vector<std::size_t> expected(12, 0);
  for (const auto& w : windows)
    for (const auto& [id, pos] : w.frames[7]) {
      for (std::size_t k = 0; k < 12; ++k) {
        bool present = true;
        for (std::size_t j = 8; j <= 8 + k; ++j) present = present && w.frames[j].count(id);
        expected[k] += present;
      }
    }
  CHECK(r.per_frame_peds == expected);

  // For one trajectory FDE is the last per-frame error.
  TrajectoryWindow solo = windows.front();
  solo.targets.resize(1);
  const std::vector<TrajectoryWindow> one{solo};
  const MetricsReport rs = evaluate(p, one, "d", c);
  CHECK(rs.fde_mean == doctest::Approx(rs.per_frame_ade[11]).epsilon(1e-12));
}

TEST_CASE("sigma sweep over one sigma equals a single evaluate") {
  const auto windows = crowd_windows(5);
  const ModelParams p = ModelParams::initialize({3, 4}, 3);
  std::vector<std::pair<std::string, double>> calls;
  auto provider = [&](const std::string& d, double s) {
    calls.emplace_back(d, s);
    return p;
  };
  const std::map<std::string, std::vector<TrajectoryWindow>> tests{{"d", windows}};
  const double one_sigma[] = {8.0};
  EvalConfig c = greedy_config();
  const auto reports = sigma_sweep(tests, one_sigma, provider, c);
  REQUIRE(reports.size() == 1);
  c.sigma = 8.0;
  CHECK(reports[0] == evaluate(p, windows, "d", c));

  const std::map<std::string, std::vector<TrajectoryWindow>> two{{"a", windows}, {"b", windows}};
  const double sigmas[] = {2.0, 4.0};
  calls.clear();
  const auto many = sigma_sweep(two, sigmas, provider, c);
  CHECK(many.size() == 4);
  CHECK(calls == std::vector<std::pair<std::string, double>>{{"a", 2}, {"a", 4}, {"b", 2}, {"b", 4}});
}

TEST_CASE("report writers") {
  MetricsReport a;
  a.dataset = "eth";
  a.sigma = 4;
  a.ade_mean = 0.5;
  a.ade_var = 0.001;
  a.fde_mean = 1.0;
  a.fde_var = 0.002;
  a.runs = 50;
  a.per_frame_ade.assign(12, 0.1);
  a.per_frame_peds.assign(12, 3);
  MetricsReport b = a;
  b.dataset = "zara01";
  b.ade_mean = 0.3;
  b.fde_mean = 0.6;
  const MetricsReport rs[] = {a, b};

  std::ostringstream table;
  write_metrics_table(table, rs);
  const std::string t = table.str();
  CHECK(t.find("sigma=4/Var") != std::string::npos);
  CHECK(t.find("0.5000/0.00100") != std::string::npos);
  CHECK(t.find("Average") != std::string::npos);
  CHECK(t.find("0.4000/0.00100") != std::string::npos);

  std::ostringstream json;
  write_metrics_json(json, rs);
  const auto parsed = nlohmann::json::parse(json.str());
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0]["dataset"] == "eth");
  CHECK(parsed[1]["ade_mean"].get<double>() == 0.3);
  CHECK(parsed[0]["per_frame_peds"].size() == 12);

  std::ostringstream curve;
  write_sigma_curve(curve, rs);
  CHECK(curve.str() == "sigma,ade_mean,fde_mean,datasets\n4,0.40000000000000002,0.80000000000000004,2\n");

  PredictedTrajectory tr;
  tr.ped_id = 3;
  tr.observed.assign(8, world(1, 2));
  tr.truth.assign(12, world(3, 4));
  tr.predicted.assign(12, world(5, 6));
  std::ostringstream csv;
  const PredictedTrajectory trs[] = {tr};
  write_trajectory_csv(csv, trs);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "ped_id,step,kind,x,y");
  std::size_t rows = 0;
  std::string last;
  while (std::getline(lines, line)) {
    ++rows;
    last = line;
  }
  CHECK(rows == 32);
  CHECK(last == "3,19,pred,5,6");
}

TEST_CASE("inference timing") {
  const ModelParams p = ModelParams::initialize({8, 16}, 1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::map<int, Position> frame;
  for (int i = 0; i < 10; ++i) frame[i] = {u(rng), u(rng), Units::normalized};
  const InteractionConfig ic{4.0, CorrentropySpace::normalized, true, {}};
  const InferenceTiming t = time_inference(p, frame, ic, 1);
  CHECK(t.seconds_per_step > 0.0);
  CHECK(std::isfinite(t.seconds_per_step));
  CHECK(t.pedestrians == 10);
  CHECK_FALSE(t.hardware_note.empty());
  CHECK_THROWS_AS(time_inference(p, frame, ic, 0), std::invalid_argument);
}

TEST_CASE("doubling the crowd stays within the quadratic bound") {
  const ModelParams p = ModelParams::initialize({64, 128}, 1);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  std::map<int, Position> small, large;
  for (int i = 0; i < 40; ++i) {
    const Position pos{u(rng), u(rng), Units::normalized};
    if (i < 20) small[i] = pos;
    large[i] = pos;
  }
  const InteractionConfig ic{4.0, CorrentropySpace::normalized, true, {}};
  // Best of a few trials to keep scheduler noise out of the ratio.
  double best_ratio = 1e9;
  for (int trial = 0; trial < 3; ++trial) {
    const double ts = time_inference(p, small, ic, 10).seconds_per_step;
    const double tl = time_inference(p, large, ic, 10).seconds_per_step;
    best_ratio = std::min(best_ratio, tl / ts);
  }
  CHECK(best_ratio < 4.5);
}

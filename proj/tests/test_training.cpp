#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "ialstm/training.hpp"
#include "support.hpp"

using namespace ialstm;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.dims = {4, 6};
  c.epochs = 3;
  c.batch_size = 2;
  c.learning_rate = 0.01;
  c.sigma = 2.0;
  return c;
}

std::string bytes_of(const Checkpoint& ck) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, ck);
  return out.str();
}

}  // namespace

TEST_CASE("adam first steps match the update rule") {
  std::vector<double> p{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  const std::vector<double> g{0.1, -4.0, 0.0};
  adam_step(p, g, m, v, 0.01, 1);
  // First bias-corrected step moves by lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.1 / (0.1 + 1e-8)).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
  CHECK(p[2] == 0.5);

  // Second step against an explicit recurrence.
  const std::vector<double> g2{0.3, 1.0, -0.2};
  std::vector<double> ref = p, rm = m, rv = v;
  for (int i = 0; i < 3; ++i) {
    rm[i] = 0.9 * rm[i] + 0.1 * g2[i];
    rv[i] = 0.999 * rv[i] + 0.001 * g2[i] * g2[i];
    const double mh = rm[i] / (1 - 0.81), vh = rv[i] / (1 - 0.999 * 0.999);
    ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
  }
  adam_step(p, g2, m, v, 0.01, 2);
  for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  std::vector<double> short_g{1.0};
  CHECK_THROWS_AS(adam_step(p, short_g, m, v, 0.01, 3), DimensionError);
  CHECK_THROWS_AS(adam_step(p, g, m, v, 0.01, 0), DomainError);
}

TEST_CASE("adam on model parameters and global norm") {
  const ModelDims dims{2, 3};
  ModelParams p = ModelParams::initialize(dims, 1);
  const ModelParams before = p;
  ModelParams g = ModelParams::zeros(dims);
  g.b_o[0] = 3.0;
  g.w_e(0, 0) = 4.0;
  CHECK(global_norm(g) == doctest::Approx(5.0));
  AdamState state = AdamState::zeros(dims);
  adam_step(p, g, state, 0.0);
  CHECK(state.step == 1);
  CHECK(p == before);
  adam_step(p, g, state, 0.1);
  CHECK(state.step == 2);
  CHECK(p.b_o[0] < before.b_o[0]);
  CHECK(p.b_o[1] == before.b_o[1]);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.sigma = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.dims.hidden = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("window loss with zero weights is a sum of unit Gaussian terms") {
  // Zero weights keep h = 0, so every step predicts mu = 0, sigma = 1, rho = 0.
  const auto windows = ialstm::testing::synthetic_windows(5);
  REQUIRE_FALSE(windows.empty());
  const auto& w = windows.front();
  const ModelParams p = ModelParams::zeros({3, 4});
  const InteractionConfig ic{4.0, CorrentropySpace::world, true, w.transform};
  double expected = 0.0;
  for (std::size_t k = w.obs_len; k < w.length(); ++k)
    for (int id : w.targets) {
      const Position& t = w.frames[k].at(id);
      expected += std::log(2 * std::numbers::pi) + 0.5 * (t.x * t.x + t.y * t.y);
    }
  CHECK(window_loss(p, w, ic) == doctest::Approx(expected).epsilon(1e-12));

  TrajectoryWindow empty = w;
  empty.targets.clear();
  CHECK_THROWS_AS(window_loss(p, empty, ic), std::invalid_argument);
}

TEST_CASE("window loss gradient matches central differences") {
  // Three walkers close together so interaction terms carry weight.
  const Scene scene = normalize_scene(ialstm::testing::scene_of(
      {{1, 0, 12, 0.0, 0.0, 0.3, 0.1}, {2, 0, 12, 1.0, 0.5, -0.2, 0.2}, {3, 0, 12, -0.5, 1.0, 0.1, -0.3}}));
  const auto windows = cut_windows(scene, 2, 2);
  REQUIRE_FALSE(windows.empty());
  const auto& w = windows.front();
  ModelParams p = ModelParams::initialize({3, 4}, 9);
  // Zero biases would put the first interaction ReLU exactly on its kink.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto& b : p.b_a.flat()) b = u(rng);
  for (auto& b : p.b_e.flat()) b = u(rng);
  const InteractionConfig ic{2.0, CorrentropySpace::world, true, w.transform};
  ModelParams g = ModelParams::zeros(p.dims);
  window_loss_and_gradient(p, w, ic, g);
  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> analytic;
  p.for_each_tensor([&](const char*, std::span<double> s) { params.push_back(s); });
  g.for_each_tensor([&](const char*, std::span<const double> s) { analytic.push_back(s); });
  const double err = gradient_check([&] { return window_loss(p, w, ic); }, params, analytic, 1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto pool = ialstm::testing::synthetic_windows(6);
  TrainConfig c = small_config();
  c.learning_rate = 0.0;
  const Checkpoint out = train(pool, c);
  CHECK(out.params == ModelParams::initialize(c.dims, c.seed));
  CHECK(out.epoch == c.epochs);
}

TEST_CASE("training is deterministic and independent of thread count") {
  const auto pool = ialstm::testing::synthetic_windows(7, 4, 30);
  TrainConfig c = small_config();
  const Checkpoint a = train(pool, c);
  const Checkpoint b = train(pool, c);
  CHECK(bytes_of(a) == bytes_of(b));
  c.threads = 4;
  const Checkpoint t = train(pool, c);
  CHECK(t.params == a.params);
  CHECK(t.adam == a.adam);
}

TEST_CASE("resuming matches an uninterrupted run bit for bit") {
  const auto pool = ialstm::testing::synthetic_windows(8, 4, 30);
  TrainConfig c = small_config();
  c.epochs = 4;
  const Checkpoint full = train(pool, c);

  TrainConfig first = c;
  first.epochs = 2;
  const Checkpoint half = train(pool, first);
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  write_checkpoint(buf, half);
  const Checkpoint restored = read_checkpoint(buf);
  const Checkpoint resumed = train(pool, c, {}, &restored);
  CHECK(resumed.params == full.params);
  CHECK(resumed.adam == full.adam);
  CHECK(bytes_of(resumed) == bytes_of(full));
}

TEST_CASE("hooks fire per epoch and per checkpoint interval") {
  const auto pool = ialstm::testing::synthetic_windows(9);
  TrainConfig c = small_config();
  c.epochs = 5;
  c.checkpoint_every = 2;
  std::vector<std::size_t> epochs, saved;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    epochs.push_back(r.epoch);
    CHECK(std::isfinite(r.mean_loss));
  };
  hooks.on_checkpoint = [&](const Checkpoint& ck) { saved.push_back(ck.epoch); };
  train(pool, c, hooks);
  CHECK(epochs == std::vector<std::size_t>{1, 2, 3, 4, 5});
  CHECK(saved == std::vector<std::size_t>{2, 4, 5});
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto pool = ialstm::testing::synthetic_windows(10);
  const Checkpoint ck = train(pool, small_config());
  const auto path = std::filesystem::temp_directory_path() / "ialstm_test_roundtrip.ckpt";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back == ck);

  std::string bytes = bytes_of(ck);
  CHECK(bytes.substr(0, 8) == "IALSTMCK");
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream bad_in(bad);
  CHECK_THROWS_AS(read_checkpoint(bad_in), DataError);
  std::istringstream cut_in(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(cut_in), DataError);
  CHECK_THROWS_AS(load_checkpoint(path.string() + ".missing"), DataError);
}

TEST_CASE("non-finite loss is reported with context") {
  const auto pool = ialstm::testing::synthetic_windows(11);
  TrainConfig c = small_config();
  c.epochs = 1;
  Checkpoint start;
  start.params = ModelParams::initialize(c.dims, 1);
  start.params.b_o[2] = 800.0;  // sigma_x overflows to infinity
  start.adam = AdamState::zeros(c.dims);
  try {
    train(pool, c, {}, &start);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("synthetic@") != std::string::npos);
  }
}

TEST_CASE("training pool gathers the four training scenes") {
  std::vector<Scene> scenes;
  std::mt19937_64 rng(12);
  for (const char* name : {"eth", "hotel", "zara01", "zara02", "ucy"})
    scenes.push_back(normalize_scene(ialstm::testing::scene_of(ialstm::testing::random_walkers(rng, 2, 21), name)));
  const std::vector<std::string> names{"eth", "hotel", "zara01", "zara02", "ucy"};
  const auto pool = training_pool(leave_one_out(names, "zara01"), scenes);
  for (const auto& w : pool) CHECK(w.dataset != "zara01");
  std::size_t expected = 0;
  for (const auto& s : scenes)
    if (s.name != "zara01") expected += cut_windows(s).size();
  CHECK(pool.size() == expected);
}

TEST_CASE("loss log format") {
  std::ostringstream out;
  const EpochRecord rows[] = {{1, 2.5, 0.125}, {2, 1.25, 0.5}};
  write_loss_log(out, rows);
  CHECK(out.str() == "epoch,mean_loss,wall_seconds\n1,2.5,0.125\n2,1.25,0.5\n");
}

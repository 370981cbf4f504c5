#include "ialstm/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ialstm/parallel.hpp"

namespace ialstm {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
    }
  };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be non-negative");
  }
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  positive(sigma, "sigma");
  if (dims.embed == 0 || dims.hidden == 0) throw ConfigError("model dimensions must be positive");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("gradient clip norm must be non-negative");
  positive(lr_decay, "learning-rate decay");
  if (window_stride == 0) throw ConfigError("window stride must be positive");
}

InteractionConfig interaction_config(const TrainConfig& config, const NormalizationTransform& t) {
  return {config.sigma, config.ce_space, config.interaction, t};
}

void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, double lr, std::size_t step, const AdamHyper& hyper) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw DimensionError("adam_step: params (" + std::to_string(params.size()) + "), grads (" +
                         std::to_string(grads.size()) + "), moments (" + std::to_string(m.size()) +
                         ", " + std::to_string(v.size()) + ")");
  }
  if (step == 0) throw DomainError("adam_step: step count starts at 1");
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
  }
}

AdamState AdamState::zeros(ModelDims dims) {
  return {0, ModelParams::zeros(dims), ModelParams::zeros(dims)};
}

namespace {

// Visits matching tensors of several same-shaped parameter sets.
template <class F>
void zip_tensors(ModelParams& a, const ModelParams& b, F&& f) {
  std::vector<std::span<const double>> bs;
  b.for_each_tensor([&](const char*, std::span<const double> s) { bs.push_back(s); });
  std::size_t k = 0;
  a.for_each_tensor([&](const char* name, std::span<double> s) {
    if (bs[k].size() != s.size()) {
      throw DimensionError(std::string("tensor ") + name + ": " + std::to_string(s.size()) +
                           " vs " + std::to_string(bs[k].size()) + " elements");
    }
    f(name, s, bs[k]);
    ++k;
  });
}

void add_into(ModelParams& total, const ModelParams& part) {
  zip_tensors(total, part, [](const char*, std::span<double> t, std::span<const double> p) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += p[i];
  });
}

void scale_in_place(ModelParams& p, double factor) {
  p.for_each_tensor([factor](const char*, std::span<double> s) {
    for (double& v : s) v *= factor;
  });
}

std::string parameter_norms(const ModelParams& p) {
  std::ostringstream out;
  out.precision(6);
  p.for_each_tensor([&out](const char* name, std::span<const double> s) {
    double acc = 0.0;
    for (double v : s) acc += v * v;
    out << ' ' << name << '=' << std::sqrt(acc);
  });
  return out.str();
}

}  // namespace

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               const AdamHyper& hyper) {
  ++state.step;
  std::vector<std::span<double>> ps, ms, vs;
  std::vector<std::span<const double>> gs;
  params.for_each_tensor([&](const char*, std::span<double> s) { ps.push_back(s); });
  state.m.for_each_tensor([&](const char*, std::span<double> s) { ms.push_back(s); });
  state.v.for_each_tensor([&](const char*, std::span<double> s) { vs.push_back(s); });
  grads.for_each_tensor([&](const char*, std::span<const double> s) { gs.push_back(s); });
  for (std::size_t k = 0; k < ps.size(); ++k) adam_step(ps[k], gs[k], ms[k], vs[k], lr, state.step, hyper);
}

double global_norm(const ModelParams& grads) {
  double acc = 0.0;
  grads.for_each_tensor([&acc](const char*, std::span<const double> s) {
    for (double v : s) acc += v * v;
  });
  return std::sqrt(acc);
}

Var window_loss(Tape& tape, const ModelBinding& model, const TrajectoryWindow& window,
                const InteractionConfig& interaction) {
  if (window.targets.empty()) throw std::invalid_argument("window_loss: window has no targets");
  if (window.frames.size() != window.length()) {
    throw std::invalid_argument("window_loss: window has " + std::to_string(window.frames.size()) +
                                " frames, expected " + std::to_string(window.length()));
  }
  std::vector<PedestrianState> states;
  std::vector<Var> terms;
  terms.reserve(window.targets.size() * window.pred_len);
  for (std::size_t k = 0; k + 1 < window.length(); ++k) {
    states = step_scene(tape, states, window.frames[k], model, interaction);
    if (k + 1 < window.obs_len) continue;
    const auto& next = window.frames[k + 1];
    for (int id : window.targets) {
      auto it = std::lower_bound(states.begin(), states.end(), id,
                                 [](const PedestrianState& s, int v) { return s.id < v; });
      if (it == states.end() || it->id != id) {
        throw std::invalid_argument("window_loss: target " + std::to_string(id) +
                                    " missing from a frame");
      }
      terms.push_back(nll_loss(output_head(it->h, model), next.at(id)));
    }
  }
  const std::vector<double> ones(terms.size(), 1.0);
  return weighted_sum(terms, ones);
}

double window_loss(const ModelParams& params, const TrajectoryWindow& window,
                   const InteractionConfig& interaction) {
  Tape tape;
  return window_loss(tape, ModelBinding{&params, nullptr}, window, interaction).scalar();
}

double window_loss_and_gradient(const ModelParams& params, const TrajectoryWindow& window,
                                const InteractionConfig& interaction, ModelParams& grads) {
  Tape tape;
  const Var loss = window_loss(tape, ModelBinding{&params, &grads}, window, interaction);
  tape.backward(loss);
  return loss.scalar();
}

Checkpoint train(std::span<const TrajectoryWindow> pool, const TrainConfig& config,
                 const TrainHooks& hooks, const Checkpoint* resume) {
  config.validate();
  if (pool.empty()) throw std::invalid_argument("train: training pool is empty");

  Checkpoint ckpt;
  if (resume) {
    ckpt = *resume;
    if (!(ckpt.params.dims == config.dims)) {
      throw ConfigError("resume: checkpoint dimensions differ from configuration");
    }
  } else {
    ckpt.params = ModelParams::initialize(config.dims, config.seed);
    ckpt.adam = AdamState::zeros(config.dims);
  }
  ckpt.config = config;

  std::vector<std::size_t> order(pool.size());
  for (std::size_t epoch = ckpt.epoch + 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = config.learning_rate * std::pow(config.lr_decay, static_cast<double>(epoch - 1));

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - begin);
      std::vector<ModelParams> grads(n, ModelParams::zeros(config.dims));
      std::vector<double> losses(n, 0.0);
      parallel_for(n, config.threads, [&](std::size_t i) {
        const TrajectoryWindow& w = pool[order[begin + i]];
        try {
          losses[i] = window_loss_and_gradient(ckpt.params, w, interaction_config(config, w.transform),
                                               grads[i]);
        } catch (const NumericError& e) {
          losses[i] = NAN;
          throw NumericError("epoch " + std::to_string(epoch) + ", window " + w.dataset + "@" +
                             std::to_string(w.start_index) + ": " + e.what() +
                             "; parameter norms:" + parameter_norms(ckpt.params));
        }
      });
      ModelParams total = ModelParams::zeros(config.dims);
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(losses[i])) {
          const TrajectoryWindow& w = pool[order[begin + i]];
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", window " +
                             w.dataset + "@" + std::to_string(w.start_index) +
                             "; parameter norms:" + parameter_norms(ckpt.params));
        }
        loss_sum += losses[i];
        add_into(total, grads[i]);
      }
      if (config.grad_clip_norm > 0.0) {
        const double norm = global_norm(total);
        if (!std::isfinite(norm)) {
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) +
                             "; parameter norms:" + parameter_norms(ckpt.params));
        }
        if (norm > config.grad_clip_norm) scale_in_place(total, config.grad_clip_norm / norm);
      }
      adam_step(ckpt.params, total, ckpt.adam, lr);
    }

    ckpt.epoch = epoch;
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    if (hooks.on_epoch) {
      hooks.on_epoch({epoch, loss_sum / static_cast<double>(pool.size()), elapsed.count()});
    }
    const bool periodic = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
    if (hooks.on_checkpoint && (periodic || epoch == config.epochs)) hooks.on_checkpoint(ckpt);
  }
  return ckpt;
}

std::vector<TrajectoryWindow> training_pool(const SplitPlan& split,
                                            std::span<const Scene> normalized_scenes,
                                            std::size_t window_stride) {
  std::vector<TrajectoryWindow> pool;
  for (const auto& name : split.train) {
    auto it = std::find_if(normalized_scenes.begin(), normalized_scenes.end(),
                           [&](const Scene& s) { return s.name == name; });
    if (it == normalized_scenes.end()) throw ConfigError("no scene named '" + name + "'");
    auto windows = cut_windows(*it, kObsLen, kPredLen, window_stride);
    pool.insert(pool.end(), std::make_move_iterator(windows.begin()),
                std::make_move_iterator(windows.end()));
  }
  return pool;
}

void write_loss_log(std::ostream& out, std::span<const EpochRecord> log) {
  out << "epoch,mean_loss,wall_seconds\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << std::setprecision(17) << r.mean_loss << ',' << std::setprecision(6)
        << r.wall_seconds << '\n';
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container:
//   "IALSTMCK" | u32 version | u64 header length | JSON header |
//   u32 array count | { u16 name length | name | u64 rows | u64 cols | f64[] }
// All integers and floats little-endian.

namespace {

constexpr char kMagic[8] = {'I', 'A', 'L', 'S', 'T', 'M', 'C', 'K'};

template <class T>
void put_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  U bits = std::bit_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("checkpoint truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"sigma", c.sigma},
          {"embed", c.dims.embed},
          {"hidden", c.dims.hidden},
          {"grad_clip_norm", c.grad_clip_norm},
          {"seed", c.seed},
          {"ce_units", c.ce_space == CorrentropySpace::world ? "world" : "normalized"},
          {"interaction", c.interaction},
          {"lr_decay", c.lr_decay},
          {"window_stride", c.window_stride},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.sigma = j.at("sigma").get<double>();
  c.dims.embed = j.at("embed").get<std::size_t>();
  c.dims.hidden = j.at("hidden").get<std::size_t>();
  c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.ce_space = j.at("ce_units").get<std::string>() == "world" ? CorrentropySpace::world
                                                              : CorrentropySpace::normalized;
  c.interaction = j.at("interaction").get<bool>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.window_stride = j.at("window_stride").get<std::size_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  return c;
}

struct NamedArray {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  std::span<const double> data;
};

void collect(const ModelParams& p, const std::string& prefix, std::vector<NamedArray>& out) {
  const std::map<std::string, std::pair<std::size_t, std::size_t>> shapes{
      {"w_e", {p.w_e.rows(), p.w_e.cols()}}, {"b_e", {p.b_e.size(), 1}},
      {"w_a", {p.w_a.rows(), p.w_a.cols()}}, {"b_a", {p.b_a.size(), 1}},
      {"w_l", {p.w_l.rows(), p.w_l.cols()}}, {"b_l", {p.b_l.size(), 1}},
      {"w_o", {p.w_o.rows(), p.w_o.cols()}}, {"b_o", {p.b_o.size(), 1}}};
  p.for_each_tensor([&](const char* name, std::span<const double> s) {
    const auto& [r, c] = shapes.at(name);
    out.push_back({prefix + name, r, c, s});
  });
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  nlohmann::json header = {
      {"format", "ialstm-checkpoint"},
      {"version", Checkpoint::kFormatVersion},
      {"epoch", ck.epoch},
      {"adam_step", ck.adam.step},
      {"dims", {{"embed", ck.params.dims.embed}, {"hidden", ck.params.dims.hidden}}},
      {"config", config_to_json(ck.config)},
      {"init",
       {{"gate_order", "input,forget,candidate,output"},
        {"forget_bias", 1.0},
        {"weights", "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); lstm fan_in = hidden"},
        {"head", "mu, log sigma (exp), atanh rho (tanh)"}}}};
  const std::string text = header.dump();

  std::vector<NamedArray> arrays;
  collect(ck.params, "", arrays);
  collect(ck.adam.m, "adam.m.", arrays);
  collect(ck.adam.v, "adam.v.", arrays);

  out.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, Checkpoint::kFormatVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put_le<std::uint64_t>(out, a.rows);
    put_le<std::uint64_t>(out, a.cols);
    for (double v : a.data) put_le<double>(out, v);
  }
  if (!out) throw DataError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic)) {
    throw DataError("not an ialstm checkpoint");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != Checkpoint::kFormatVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(in);
  if (header_len > (1u << 24)) throw DataError("checkpoint header too large");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw DataError("checkpoint truncated");

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.epoch = header.at("epoch").get<std::size_t>();
    ck.config = config_from_json(header.at("config"));
    ck.adam.step = header.at("adam_step").get<std::size_t>();
    ck.params.dims = {header.at("dims").at("embed").get<std::size_t>(),
                      header.at("dims").at("hidden").get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  const ModelDims dims = ck.params.dims;
  ck.params = ModelParams::zeros(dims);
  ck.adam.m = ModelParams::zeros(dims);
  ck.adam.v = ModelParams::zeros(dims);

  std::map<std::string, std::span<double>> slots;
  auto expose = [&slots](ModelParams& p, const std::string& prefix) {
    p.for_each_tensor([&](const char* name, std::span<double> s) { slots[prefix + name] = s; });
  };
  expose(ck.params, "");
  expose(ck.adam.m, "adam.m.");
  expose(ck.adam.v, "adam.v.");

  const auto count = get_le<std::uint32_t>(in);
  std::size_t filled = 0;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = get_le<std::uint16_t>(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("checkpoint truncated");
    const auto rows = get_le<std::uint64_t>(in);
    const auto cols = get_le<std::uint64_t>(in);
    auto it = slots.find(name);
    if (it == slots.end()) throw DataError("unknown checkpoint array '" + name + "'");
    if (rows * cols != it->second.size()) {
      throw DataError("checkpoint array '" + name + "' has " + std::to_string(rows * cols) +
                      " elements, expected " + std::to_string(it->second.size()));
    }
    for (double& v : it->second) v = get_le<double>(in);
    ++filled;
  }
  if (filled != slots.size()) throw DataError("checkpoint is missing arrays");
  ck.params.validate();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace ialstm

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ialstm/data.hpp"
#include "ialstm/model.hpp"

namespace ialstm {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 8;
  std::size_t epochs = 150;
  double sigma = 4.0;  // meters when correntropy runs in world space
  ModelDims dims{64, 128};
  double grad_clip_norm = 10.0;  // global L2 norm; 0 disables clipping
  std::uint64_t seed = 42;
  CorrentropySpace ce_space = CorrentropySpace::world;
  bool interaction = true;
  // Multiplies the learning rate after every epoch. 1 keeps it constant.
  double lr_decay = 1.0;
  std::size_t window_stride = 1;
  // Write a checkpoint every K epochs (0: only at the end).
  std::size_t checkpoint_every = 0;
  // Worker threads for per-window gradients. Results do not depend on it.
  std::size_t threads = 1;

  // ConfigError unless every field is in range.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

InteractionConfig interaction_config(const TrainConfig& config, const NormalizationTransform& t);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam on flat buffers; `step` is the 1-based update count.
void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, double lr, std::size_t step, const AdamHyper& hyper = {});

struct AdamState {
  std::size_t step = 0;
  ModelParams m;
  ModelParams v;

  static AdamState zeros(ModelDims dims);
  bool operator==(const AdamState&) const = default;
};

// Increments state.step and updates every tensor.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               const AdamHyper& hyper = {});

double global_norm(const ModelParams& grads);

// Teacher-forced NLL of one window summed over targets and prediction steps.
// std::invalid_argument when the window has no targets.
Var window_loss(Tape& tape, const ModelBinding& model, const TrajectoryWindow& window,
                const InteractionConfig& interaction);
double window_loss(const ModelParams& params, const TrajectoryWindow& window,
                   const InteractionConfig& interaction);
// Adds d(loss)/d(params) into `grads` and returns the loss.
double window_loss_and_gradient(const ModelParams& params, const TrajectoryWindow& window,
                                const InteractionConfig& interaction, ModelParams& grads);

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelParams params;
  TrainConfig config;
  std::size_t epoch = 0;  // completed epochs
  AdamState adam;

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Called every config.checkpoint_every epochs and after the last one.
  std::function<void(const Checkpoint&)> on_checkpoint;
};

// Starts fresh, or continues `resume` up to config.epochs. The shuffle for
// epoch k depends only on (seed, k), so a resumed run matches an
// uninterrupted one bit for bit. NumericError on a non-finite loss.
Checkpoint train(std::span<const TrajectoryWindow> pool, const TrainConfig& config,
                 const TrainHooks& hooks = {}, const Checkpoint* resume = nullptr);

// All windows of the split's training scenes (each normalized on its own).
std::vector<TrajectoryWindow> training_pool(const SplitPlan& split,
                                            std::span<const Scene> normalized_scenes,
                                            std::size_t window_stride = 1);

void write_loss_log(std::ostream& out, std::span<const EpochRecord> log);

}  // namespace ialstm

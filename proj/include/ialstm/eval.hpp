#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ialstm/data.hpp"
#include "ialstm/model.hpp"

namespace ialstm {

enum class RolloutMode { sampled, greedy };

// Which pedestrians get their predicted positions fed back during rollout.
// targets_only: non-target neighbors keep ground truth while present.
// all_predicted: everyone present at the end of observation is predicted.
enum class Feedback { targets_only, all_predicted };

struct PredictedTrajectory {
  int ped_id = 0;
  std::vector<Position> observed;   // world units
  std::vector<Position> truth;      // world units
  std::vector<Position> predicted;  // world units
};

std::vector<PredictedTrajectory> rollout(const ModelParams& params, const TrajectoryWindow& window,
                                         const InteractionConfig& interaction, std::mt19937_64& rng,
                                         RolloutMode mode, Feedback feedback = Feedback::targets_only);

// Mean Euclidean distance over all steps. DimensionError on length mismatch
// or empty input.
double ade(std::span<const Position> predicted, std::span<const Position> truth);
// Euclidean distance at the last step.
double fde(std::span<const Position> predicted, std::span<const Position> truth);

struct EvalConfig {
  double sigma = 4.0;
  CorrentropySpace ce_space = CorrentropySpace::world;
  bool interaction = true;
  RolloutMode mode = RolloutMode::sampled;
  Feedback feedback = Feedback::targets_only;
  std::size_t runs = 50;
  std::uint64_t seed = 42;
  std::size_t threads = 1;
};

struct MetricsReport {
  std::string dataset;
  double sigma = 0.0;
  double ade_mean = 0.0;
  double ade_var = 0.0;
  double fde_mean = 0.0;
  double fde_var = 0.0;
  std::size_t runs = 0;
  std::size_t trajectories = 0;  // per run
  std::vector<double> per_frame_ade;        // mean displacement at each predicted step
  std::vector<std::size_t> per_frame_peds;  // see evaluate()
  std::vector<double> run_ade;              // per-run means
  std::vector<double> run_fde;

  bool operator==(const MetricsReport&) const = default;
};

// Run r uses seed + r. ADE/FDE are averaged over every target trajectory of
// every window, then mean and unbiased variance are taken across runs.
// per_frame_peds[k] counts, over all windows, pedestrians present at the
// last observed frame that stay present through predicted step k.
// std::invalid_argument on an empty window set or runs == 0.
MetricsReport evaluate(const ModelParams& params, std::span<const TrajectoryWindow> windows,
                       const std::string& dataset, const EvalConfig& config);

double sample_variance(std::span<const double> values);

// Produces trained parameters for a (held-out dataset, sigma) pair; the CLI
// trains or reuses a cached checkpoint.
using ParamsProvider = std::function<ModelParams(const std::string& held_out, double sigma)>;

// One report per (dataset, sigma), datasets outer, sigmas inner.
std::vector<MetricsReport> sigma_sweep(
    const std::map<std::string, std::vector<TrajectoryWindow>>& test_windows,
    std::span<const double> sigmas, const ParamsProvider& provider, const EvalConfig& config);

// Dataset x sigma table with ADE/Var and FDE/Var columns plus an Average row.
void write_metrics_table(std::ostream& out, std::span<const MetricsReport> reports);
// One JSON record per report.
void write_metrics_json(std::ostream& out, std::span<const MetricsReport> reports);
// sigma, mean ADE and FDE over datasets.
void write_sigma_curve(std::ostream& out, std::span<const MetricsReport> reports);
// ped_id,step,kind,x,y with kind in {obs, truth, pred}.
void write_trajectory_csv(std::ostream& out, std::span<const PredictedTrajectory> trajectories);

struct InferenceTiming {
  double seconds_per_step = 0.0;
  std::size_t reps = 0;
  std::size_t pedestrians = 0;
  std::string hardware_note;
};

// Mean wall time of one step_scene + output_head pass over a frame,
// after one warm-up step.
InferenceTiming time_inference(const ModelParams& params, const std::map<int, Position>& frame,
                               const InteractionConfig& interaction, std::size_t reps = 100);

}  // namespace ialstm

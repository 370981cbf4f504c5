#include "ialstm/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ialstm/parallel.hpp"

namespace ialstm {

std::vector<PredictedTrajectory> rollout(const ModelParams& params, const TrajectoryWindow& window,
                                         const InteractionConfig& interaction, std::mt19937_64& rng,
                                         RolloutMode mode, Feedback feedback) {
  if (window.frames.size() != window.length() || window.obs_len == 0) {
    throw std::invalid_argument("rollout: malformed window");
  }
  Tape tape;
  const ModelBinding model{&params, nullptr};
  std::vector<PedestrianState> states;
  for (std::size_t k = 0; k < window.obs_len; ++k) {
    states = step_scene(tape, states, window.frames[k], model, interaction);
  }

  // Pedestrians whose predictions are fed back.
  std::set<int> fed_back(window.targets.begin(), window.targets.end());
  if (feedback == Feedback::all_predicted) {
    for (const auto& s : states) fed_back.insert(s.id);
  }

  std::map<int, std::vector<Position>> predicted;  // normalized
  for (std::size_t step = 0; step < window.pred_len; ++step) {
    const std::size_t k = window.obs_len + step;
    const auto& truth_frame = window.frames[k];
    std::map<int, Position> frame = truth_frame;
    for (const auto& s : states) {
      // A fed-back neighbor leaves the scene when its ground truth ends.
      if (!fed_back.contains(s.id) || !truth_frame.contains(s.id)) continue;
      const GaussianParams2D g = output_head(s.h, model).value();
      const Position next = mode == RolloutMode::greedy ? Position{g.mu_x, g.mu_y, Units::normalized}
                                                        : sample_position(g, rng);
      predicted[s.id].push_back(next);
      frame[s.id] = next;
    }
    if (step + 1 == window.pred_len) break;
    states = step_scene(tape, states, frame, model, interaction);
  }

  auto to_world = [&](const Position& p) {
    return p.units == Units::normalized ? window.transform.denormalize(p) : p;
  };
  std::vector<PredictedTrajectory> out;
  out.reserve(window.targets.size());
  for (int id : window.targets) {
    PredictedTrajectory t;
    t.ped_id = id;
    for (std::size_t k = 0; k < window.obs_len; ++k) t.observed.push_back(to_world(window.frames[k].at(id)));
    for (std::size_t k = window.obs_len; k < window.length(); ++k) {
      t.truth.push_back(to_world(window.frames[k].at(id)));
    }
    for (const auto& p : predicted.at(id)) t.predicted.push_back(to_world(p));
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

void check_pair(std::span<const Position> predicted, std::span<const Position> truth, const char* what) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw DimensionError(std::string(what) + ": predicted length " + std::to_string(predicted.size()) +
                         ", truth length " + std::to_string(truth.size()));
  }
}

}  // namespace

double ade(std::span<const Position> predicted, std::span<const Position> truth) {
  check_pair(predicted, truth, "ade");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) acc += distance(predicted[i], truth[i]);
  return acc / static_cast<double>(predicted.size());
}

double fde(std::span<const Position> predicted, std::span<const Position> truth) {
  check_pair(predicted, truth, "fde");
  return distance(predicted.back(), truth.back());
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(values.size() - 1);
}

MetricsReport evaluate(const ModelParams& params, std::span<const TrajectoryWindow> windows,
                       const std::string& dataset, const EvalConfig& config) {
  if (windows.empty()) throw std::invalid_argument("evaluate: no test windows for " + dataset);
  if (config.runs == 0) throw std::invalid_argument("evaluate: runs must be at least 1");
  const std::size_t pred_len = windows.front().pred_len;

  struct RunResult {
    double ade = 0.0;
    double fde = 0.0;
    std::size_t trajectories = 0;
    std::vector<double> per_frame;
  };
  std::vector<RunResult> results(config.runs);
  parallel_for(config.runs, config.threads, [&](std::size_t r) {
    std::mt19937_64 rng(config.seed + r);
    RunResult res;
    res.per_frame.assign(pred_len, 0.0);
    for (const auto& w : windows) {
      const InteractionConfig ic{config.sigma, config.ce_space, config.interaction, w.transform};
      for (const auto& t : rollout(params, w, ic, rng, config.mode, config.feedback)) {
        res.ade += ade(t.predicted, t.truth);
        res.fde += fde(t.predicted, t.truth);
        for (std::size_t k = 0; k < pred_len; ++k) res.per_frame[k] += distance(t.predicted[k], t.truth[k]);
        ++res.trajectories;
      }
    }
    results[r] = std::move(res);
  });

  MetricsReport report;
  report.dataset = dataset;
  report.sigma = config.sigma;
  report.runs = config.runs;
  report.trajectories = results.front().trajectories;
  report.per_frame_ade.assign(pred_len, 0.0);
  for (const auto& res : results) {
    const double n = static_cast<double>(res.trajectories);
    report.run_ade.push_back(res.ade / n);
    report.run_fde.push_back(res.fde / n);
    for (std::size_t k = 0; k < pred_len; ++k) report.per_frame_ade[k] += res.per_frame[k];
  }
  const double total = static_cast<double>(report.trajectories * config.runs);
  for (double& v : report.per_frame_ade) v /= total;
  const double runs = static_cast<double>(config.runs);
  report.ade_mean = std::accumulate(report.run_ade.begin(), report.run_ade.end(), 0.0) / runs;
  report.fde_mean = std::accumulate(report.run_fde.begin(), report.run_fde.end(), 0.0) / runs;
  report.ade_var = sample_variance(report.run_ade);
  report.fde_var = sample_variance(report.run_fde);

  report.per_frame_peds.assign(pred_len, 0);
  for (const auto& w : windows) {
    std::set<int> alive;
    for (const auto& [id, pos] : w.frames[w.obs_len - 1]) alive.insert(id);
    for (std::size_t k = 0; k < pred_len; ++k) {
      const auto& frame = w.frames[w.obs_len + k];
      std::erase_if(alive, [&](int id) { return !frame.contains(id); });
      report.per_frame_peds[k] += alive.size();
    }
  }
  return report;
}

std::vector<MetricsReport> sigma_sweep(
    const std::map<std::string, std::vector<TrajectoryWindow>>& test_windows,
    std::span<const double> sigmas, const ParamsProvider& provider, const EvalConfig& config) {
  std::vector<MetricsReport> reports;
  for (const auto& [dataset, windows] : test_windows) {
    for (double sigma : sigmas) {
      EvalConfig c = config;
      c.sigma = sigma;
      reports.push_back(evaluate(provider(dataset, sigma), windows, dataset, c));
    }
  }
  return reports;
}

namespace {

std::vector<double> distinct_sigmas(std::span<const MetricsReport> reports) {
  std::vector<double> sigmas;
  for (const auto& r : reports)
    if (std::find(sigmas.begin(), sigmas.end(), r.sigma) == sigmas.end()) sigmas.push_back(r.sigma);
  std::sort(sigmas.begin(), sigmas.end());
  return sigmas;
}

std::vector<std::string> distinct_datasets(std::span<const MetricsReport> reports) {
  std::vector<std::string> names;
  for (const auto& r : reports)
    if (std::find(names.begin(), names.end(), r.dataset) == names.end()) names.push_back(r.dataset);
  return names;
}

std::string sigma_label(double sigma) {
  std::ostringstream s;
  s << "sigma=" << sigma;
  return s.str();
}

}  // namespace

void write_metrics_table(std::ostream& out, std::span<const MetricsReport> reports) {
  const auto sigmas = distinct_sigmas(reports);
  const auto datasets = distinct_datasets(reports);
  auto find = [&](const std::string& d, double s) -> const MetricsReport* {
    for (const auto& r : reports)
      if (r.dataset == d && r.sigma == s) return &r;
    return nullptr;
  };
  out << std::left << std::setw(8) << "Metric" << std::setw(10) << "Dataset";
  for (double s : sigmas) out << std::setw(20) << (sigma_label(s) + "/Var");
  out << '\n';
  out << std::fixed;
  for (const bool is_ade : {true, false}) {
    std::vector<double> mean_sum(sigmas.size(), 0.0), var_sum(sigmas.size(), 0.0);
    std::vector<std::size_t> count(sigmas.size(), 0);
    for (const auto& d : datasets) {
      out << std::setw(8) << (is_ade ? "ADE" : "FDE") << std::setw(10) << d;
      for (std::size_t i = 0; i < sigmas.size(); ++i) {
        const MetricsReport* r = find(d, sigmas[i]);
        std::ostringstream cell;
        cell << std::fixed;
        if (r) {
          const double m = is_ade ? r->ade_mean : r->fde_mean;
          const double v = is_ade ? r->ade_var : r->fde_var;
          cell << std::setprecision(4) << m << '/' << std::setprecision(5) << v;
          mean_sum[i] += m;
          var_sum[i] += v;
          ++count[i];
        } else {
          cell << '-';
        }
        out << std::setw(20) << cell.str();
      }
      out << '\n';
    }
    out << std::setw(8) << (is_ade ? "ADE" : "FDE") << std::setw(10) << "Average";
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      std::ostringstream cell;
      cell << std::fixed;
      if (count[i] > 0) {
        const double n = static_cast<double>(count[i]);
        cell << std::setprecision(4) << mean_sum[i] / n << '/' << std::setprecision(5) << var_sum[i] / n;
      } else {
        cell << '-';
      }
      out << std::setw(20) << cell.str();
    }
    out << '\n';
  }
  out.unsetf(std::ios::fixed);
}

void write_metrics_json(std::ostream& out, std::span<const MetricsReport> reports) {
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    records.push_back({{"dataset", r.dataset},
                       {"sigma", r.sigma},
                       {"ade_mean", r.ade_mean},
                       {"ade_var", r.ade_var},
                       {"fde_mean", r.fde_mean},
                       {"fde_var", r.fde_var},
                       {"runs", r.runs},
                       {"trajectories", r.trajectories},
                       {"per_frame_ade", r.per_frame_ade},
                       {"per_frame_peds", r.per_frame_peds}});
  }
  out << records.dump(2) << '\n';
}

void write_sigma_curve(std::ostream& out, std::span<const MetricsReport> reports) {
  out << "sigma,ade_mean,fde_mean,datasets\n";
  for (double s : distinct_sigmas(reports)) {
    double a = 0.0, f = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) {
      if (r.sigma != s) continue;
      a += r.ade_mean;
      f += r.fde_mean;
      ++n;
    }
    out << s << ',' << std::setprecision(17) << a / static_cast<double>(n) << ','
        << f / static_cast<double>(n) << ',' << n << '\n';
    out << std::setprecision(6);
  }
}

void write_trajectory_csv(std::ostream& out, std::span<const PredictedTrajectory> trajectories) {
  out << "ped_id,step,kind,x,y\n";
  out << std::setprecision(10);
  for (const auto& t : trajectories) {
    std::size_t step = 0;
    for (const auto& p : t.observed) out << t.ped_id << ',' << step++ << ",obs," << p.x << ',' << p.y << '\n';
    const std::size_t first_pred = step;
    step = first_pred;
    for (const auto& p : t.truth) out << t.ped_id << ',' << step++ << ",truth," << p.x << ',' << p.y << '\n';
    step = first_pred;
    for (const auto& p : t.predicted) out << t.ped_id << ',' << step++ << ",pred," << p.x << ',' << p.y << '\n';
  }
  out << std::setprecision(6);
}

InferenceTiming time_inference(const ModelParams& params, const std::map<int, Position>& frame,
                               const InteractionConfig& interaction, std::size_t reps) {
  if (reps == 0) throw std::invalid_argument("time_inference: reps must be positive");
  const ModelBinding model{&params, nullptr};
  double total = 0.0;
  double sink = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    // The warm-up step gives every pedestrian a non-trivial state; only the
    // second step is timed.
    Tape tape;
    const auto states = step_scene(tape, {}, frame, model, interaction);
    const auto start = std::chrono::steady_clock::now();
    const auto next = step_scene(tape, states, frame, model, interaction);
    for (const auto& s : next) sink += output_head(s.h, model).value().mu_x;
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    total += dt.count();
  }
  InferenceTiming timing;
  timing.seconds_per_step = total / static_cast<double>(reps);
  timing.reps = reps;
  timing.pedestrians = frame.size();
  std::ostringstream note;
  note << "CPU, single thread, " << std::thread::hardware_concurrency() << " hardware threads";
#if defined(__clang__)
  note << ", clang " << __clang_major__ << '.' << __clang_minor__;
#elif defined(__GNUC__)
  note << ", gcc " << __GNUC__ << '.' << __GNUC_MINOR__;
#endif
  note << ", hidden " << params.dims.hidden << ", embed " << params.dims.embed;
  if (!std::isfinite(sink)) note << " (non-finite output)";
  timing.hardware_note = note.str();
  return timing;
}

}  // namespace ialstm

#include "ialstm/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

namespace ialstm {

namespace fs = std::filesystem;

std::vector<Scene> load_scenes(const fs::path& manifest) {
  std::vector<Scene> scenes;
  for (const auto& entry : read_manifest(manifest)) {
    scenes.push_back(normalize_scene(load_dataset(entry.path, entry.format, entry.name)));
  }
  return scenes;
}

std::string checkpoint_name(const std::string& holdout, const TrainConfig& config) {
  std::ostringstream name;
  name << holdout << "_sigma" << config.sigma;
  if (!config.interaction) name << "_nointeraction";
  if (config.ce_space == CorrentropySpace::normalized) name << "_cenorm";
  name << ".ckpt";
  return name.str();
}

namespace {

std::size_t env_threads() {
  if (const char* v = std::getenv("IALSTM_THREADS")) {
    try {
      const long n = std::stol(v);
      if (n > 0) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

const Scene& find_scene(const std::vector<Scene>& scenes, const std::string& name) {
  for (const auto& s : scenes)
    if (s.name == name) return s;
  std::string known;
  for (const auto& s : scenes) known += (known.empty() ? "" : ", ") + s.name;
  throw ConfigError("no dataset named '" + name + "' in manifest (known: " + known + ")");
}

std::vector<std::string> scene_names(const std::vector<Scene>& scenes) {
  std::vector<std::string> names;
  for (const auto& s : scenes) names.push_back(s.name);
  return names;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
}

// Runtime knobs are not part of a checkpoint's identity.
bool same_training(TrainConfig a, TrainConfig b) {
  a.threads = b.threads = 1;
  a.checkpoint_every = b.checkpoint_every = 0;
  return a == b;
}

struct TrainResult {
  fs::path checkpoint;
  Checkpoint state;
  bool reused = false;
};

TrainResult train_holdout(const std::vector<Scene>& scenes, const std::string& holdout,
                          const TrainConfig& config, const fs::path& out_dir, bool reuse,
                          std::ostream& log) {
  const fs::path path = out_dir / checkpoint_name(holdout, config);
  if (reuse && fs::exists(path)) {
    Checkpoint cached = load_checkpoint(path);
    if (same_training(cached.config, config) && cached.epoch == config.epochs) {
      log << "reusing " << path.string() << '\n';
      return {path, std::move(cached), true};
    }
  }
  const auto names = scene_names(scenes);
  const SplitPlan split = leave_one_out(names, holdout);
  const auto pool = training_pool(split, scenes, config.window_stride);
  log << "training on";
  for (const auto& n : split.train) log << ' ' << n;
  log << " (" << pool.size() << " windows), holding out " << split.test << '\n';

  fs::create_directories(out_dir);
  std::vector<EpochRecord> epochs;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    epochs.push_back(r);
    log << "epoch " << r.epoch << " mean_loss " << std::setprecision(6) << r.mean_loss << " ("
        << r.wall_seconds << " s)\n";
  };
  hooks.on_checkpoint = [&](const Checkpoint& ck) { save_checkpoint(path, ck); };
  Checkpoint result = train(pool, config, hooks);
  std::ostringstream loss_log;
  write_loss_log(loss_log, epochs);
  fs::path log_path = path;
  log_path.replace_extension(".loss.csv");
  write_file(log_path, loss_log.str());
  return {path, std::move(result), false};
}

EvalConfig eval_config(const TrainConfig& trained, const ExperimentConfig& exp) {
  EvalConfig c;
  c.sigma = trained.sigma;
  c.ce_space = trained.ce_space;
  c.interaction = trained.interaction;
  c.mode = exp.mode;
  c.feedback = exp.feedback;
  c.runs = exp.runs;
  c.seed = exp.train.seed;
  c.threads = exp.train.threads;
  return c;
}

std::vector<double> parse_sigmas(const std::string& text) {
  std::vector<double> sigmas;
  std::stringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t used = 0;
      const double s = std::stod(tok, &used);
      if (used != tok.size() || !(s > 0.0)) throw std::invalid_argument(tok);
      sigmas.push_back(s);
    } catch (const std::exception&) {
      throw ConfigError("bad sigma value '" + tok + "'");
    }
  }
  if (sigmas.empty()) throw ConfigError("no sigma values given");
  return sigmas;
}

std::vector<std::string> parse_holdouts(const std::string& text, const std::vector<Scene>& scenes) {
  if (text == "all") return scene_names(scenes);
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(tok);
  return out;
}

int cmd_prepare(const ExperimentConfig& exp, bool write_out, std::ostream& out) {
  std::vector<DatasetStats> stats;
  for (const auto& entry : read_manifest(exp.manifest)) {
    stats.push_back(dataset_stats(load_dataset(entry.path, entry.format, entry.name)));
  }
  std::ostringstream report;
  write_stats_report(report, stats);
  out << report.str();
  if (write_out) write_file(exp.out / "dataset_stats.tsv", report.str());
  return kExitOk;
}

int cmd_train(const ExperimentConfig& exp, std::ostream& out, std::ostream& err) {
  const auto scenes = load_scenes(exp.manifest);
  const auto result = train_holdout(scenes, exp.holdout, exp.train, exp.out, false, err);
  out << result.checkpoint.string() << '\n';
  return kExitOk;
}

int cmd_eval(const ExperimentConfig& exp, const fs::path& checkpoint, bool export_trajectories,
             bool timing, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto scenes = load_scenes(exp.manifest);
  const Scene& test = find_scene(scenes, exp.holdout);
  const auto windows = cut_windows(test);
  if (windows.empty()) throw DataError("dataset '" + test.name + "' has no complete 20-frame windows");
  const EvalConfig config = eval_config(ck.config, exp);
  const MetricsReport report = evaluate(ck.params, windows, test.name, config);
  const std::vector<MetricsReport> reports{report};

  std::ostringstream table, json;
  write_metrics_table(table, reports);
  write_metrics_json(json, reports);
  out << table.str();
  write_file(exp.out / "metrics.txt", table.str());
  write_file(exp.out / "metrics.json", json.str());

  if (export_trajectories) {
    std::mt19937_64 rng(config.seed);
    for (const auto& w : windows) {
      const InteractionConfig ic{config.sigma, config.ce_space, config.interaction, w.transform};
      std::ostringstream csv;
      write_trajectory_csv(csv, rollout(ck.params, w, ic, rng, config.mode, config.feedback));
      write_file(exp.out / "trajectories" / (test.name + "_w" + std::to_string(w.start_index) + ".csv"),
                 csv.str());
    }
  }
  if (timing) {
    const TrajectoryWindow* crowded = &windows.front();
    for (const auto& w : windows)
      if (w.frames[w.obs_len - 1].size() > crowded->frames[crowded->obs_len - 1].size()) crowded = &w;
    const auto& frame = crowded->frames[crowded->obs_len - 1];
    const InteractionConfig ic{config.sigma, config.ce_space, config.interaction, crowded->transform};
    const InferenceTiming t = time_inference(ck.params, frame, ic, 100);
    std::ostringstream text;
    text << "seconds_per_step " << t.seconds_per_step << "\npedestrians " << t.pedestrians << "\nreps "
         << t.reps << "\nhardware " << t.hardware_note << '\n';
    out << text.str();
  }
  return kExitOk;
}

int cmd_sweep(const ExperimentConfig& exp, const std::string& sigma_text, const std::string& holdout_text,
              std::ostream& out, std::ostream& err) {
  const auto scenes = load_scenes(exp.manifest);
  const auto sigmas = parse_sigmas(sigma_text);
  const auto holdouts = parse_holdouts(holdout_text, scenes);
  std::map<std::string, std::vector<TrajectoryWindow>> tests;
  for (const auto& h : holdouts) tests[h] = cut_windows(find_scene(scenes, h));

  const fs::path ckpt_dir = exp.out / "checkpoints";
  EvalConfig base = eval_config(exp.train, exp);
  auto provider = [&](const std::string& holdout, double sigma) {
    TrainConfig c = exp.train;
    c.sigma = sigma;
    return train_holdout(scenes, holdout, c, ckpt_dir, true, err).state.params;
  };
  const auto reports = sigma_sweep(tests, sigmas, provider, base);

  std::ostringstream table, json, curve;
  write_metrics_table(table, reports);
  write_metrics_json(json, reports);
  write_sigma_curve(curve, reports);
  out << table.str();
  write_file(exp.out / "sweep_table.txt", table.str());
  write_file(exp.out / "sweep.json", json.str());
  write_file(exp.out / "sigma_curve.csv", curve.str());
  return kExitOk;
}

int cmd_predict(const ExperimentConfig& exp, const fs::path& checkpoint, const std::string& dataset,
                long window_index, const fs::path& csv_path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto scenes = load_scenes(exp.manifest);
  const Scene& scene = find_scene(scenes, dataset.empty() ? exp.holdout : dataset);
  const auto windows = cut_windows(scene);
  if (window_index < 0 || static_cast<std::size_t>(window_index) >= windows.size()) {
    throw ConfigError("window index " + std::to_string(window_index) + " out of range [0, " +
                      std::to_string(windows.size()) + ")");
  }
  const auto& w = windows[static_cast<std::size_t>(window_index)];
  const EvalConfig config = eval_config(ck.config, exp);
  std::mt19937_64 rng(config.seed);
  const InteractionConfig ic{config.sigma, config.ce_space, config.interaction, w.transform};
  std::ostringstream csv;
  write_trajectory_csv(csv, rollout(ck.params, w, ic, rng, config.mode, config.feedback));
  if (csv_path.empty()) {
    out << csv.str();
  } else {
    write_file(csv_path, csv.str());
    out << csv_path.string() << '\n';
  }
  return kExitOk;
}

void add_train_options(CLI::App* cmd, ExperimentConfig& exp) {
  TrainConfig& t = exp.train;
  cmd->add_option("--sigma", t.sigma, "Correntropy bandwidth in meters")->capture_default_str();
  cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", t.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch", t.batch_size, "Windows per optimizer step")->capture_default_str();
  cmd->add_option("--hidden", t.dims.hidden, "LSTM hidden size D")->capture_default_str();
  cmd->add_option("--embed", t.dims.embed, "Embedding size E")->capture_default_str();
  cmd->add_option("--clip", t.grad_clip_norm, "Global gradient-norm clip (0 disables)")->capture_default_str();
  cmd->add_option("--lr-decay", t.lr_decay, "Per-epoch learning-rate factor")->capture_default_str();
  cmd->add_option("--window-stride", t.window_stride, "Frames between training windows")
      ->capture_default_str();
  cmd->add_option("--checkpoint-every", t.checkpoint_every, "Checkpoint every K epochs (0: end only)")
      ->capture_default_str();
  cmd->add_option("--ce-units", t.ce_space, "Correntropy coordinates")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, CorrentropySpace>{{"world", CorrentropySpace::world},
                                                  {"normalized", CorrentropySpace::normalized}},
          CLI::ignore_case).description(""))
      ->type_name("world|normalized")
      ->default_str("world");
  cmd->add_option_function<std::string>(
         "--ablation",
         [&t](const std::string& v) {
           if (v == "full") {
             t.interaction = true;
           } else if (v == "no-interaction") {
             t.interaction = false;
           } else {
             throw CLI::ValidationError("--ablation", "expected full or no-interaction");
           }
         },
         "Interaction input, or fixed at zero")
      ->type_name("full|no-interaction")
      ->default_str("full");
}

void add_eval_options(CLI::App* cmd, ExperimentConfig& exp) {
  cmd->add_option("--runs", exp.runs, "Monte-Carlo evaluation runs")->capture_default_str();
  cmd->add_option("--mode", exp.mode, "Sampled from the predicted Gaussian, or its mean")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, RolloutMode>{{"sampled", RolloutMode::sampled},
                                             {"greedy", RolloutMode::greedy}},
          CLI::ignore_case).description(""))
      ->type_name("sampled|greedy")
      ->default_str("sampled");
  cmd->add_option("--feedback", exp.feedback, "Whose predictions are fed back")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, Feedback>{{"targets", Feedback::targets_only},
                                          {"all", Feedback::all_predicted}},
          CLI::ignore_case).description(""))
      ->type_name("targets|all")
      ->default_str("targets");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  ExperimentConfig exp;
  exp.train.threads = env_threads();

  CLI::App app{
      "Interaction-aware LSTM pedestrian trajectory prediction.\n"
      "Defaults: observe 8 frames, predict 12; D=128, E=64; Adam lr 0.001; batch 8; "
      "150 epochs; 50 evaluation runs; sigma 4 m. IALSTM_THREADS sets the worker count.",
      "ialstm"};
  app.require_subcommand(1);

  std::string manifest;
  auto add_common = [&](CLI::App* cmd, bool needs_holdout) {
    cmd->add_option("--manifest", manifest, "Dataset manifest (INI sections per dataset)")->required();
    if (needs_holdout) {
      cmd->add_option("--holdout", exp.holdout, "Held-out (test) dataset")->capture_default_str();
    }
    cmd->add_option("--seed", exp.train.seed, "Seed for initialization, shuffling and sampling")
        ->capture_default_str();
    cmd->add_option("--out", exp.out, "Output directory")->capture_default_str();
  };

  auto* prepare = app.add_subcommand("prepare", "Print per-dataset statistics");
  add_common(prepare, false);

  auto* train_cmd = app.add_subcommand("train", "Leave-one-out training for one held-out dataset");
  add_common(train_cmd, true);
  add_train_options(train_cmd, exp);

  std::string checkpoint;
  bool no_trajectories = false;
  bool timing = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on its held-out dataset");
  add_common(eval_cmd, true);
  add_eval_options(eval_cmd, exp);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_flag("--no-trajectories", no_trajectories, "Skip per-window trajectory CSVs");
  eval_cmd->add_flag("--timing", timing, "Also time one inference step on the most crowded frame");

  std::string sigma_text = "2,4,8,16,32";
  std::string holdout_text = "zara01";
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate across correntropy bandwidths");
  sweep->add_option("--manifest", manifest, "Dataset manifest")->required();
  sweep->add_option("--holdout", holdout_text, "Comma-separated held-out datasets, or 'all'")
      ->capture_default_str();
  sweep->add_option("--sigmas", sigma_text, "Comma-separated sigma values")->capture_default_str();
  sweep->add_option("--seed", exp.train.seed, "Seed")->capture_default_str();
  sweep->add_option("--out", exp.out, "Output directory")->capture_default_str();
  add_train_options(sweep, exp);
  add_eval_options(sweep, exp);

  std::string dataset;
  long window_index = -1;
  std::string csv_path;
  auto* predict = app.add_subcommand("predict", "Export observed/true/predicted coordinates for one window");
  add_common(predict, true);
  add_eval_options(predict, exp);
  predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  predict->add_option("--dataset", dataset, "Dataset to draw the window from (default: --holdout)");
  predict->add_option("--window", window_index, "Window index")->required();
  predict->add_option("--csv", csv_path, "Write CSV here instead of stdout");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  exp.manifest = manifest;

  try {
    if (prepare->parsed()) return cmd_prepare(exp, prepare->count("--out") > 0, out);
    if (train_cmd->parsed()) return cmd_train(exp, out, err);
    if (eval_cmd->parsed()) return cmd_eval(exp, checkpoint, !no_trajectories, timing, out);
    if (sweep->parsed()) return cmd_sweep(exp, sigma_text, holdout_text, out, err);
    if (predict->parsed()) return cmd_predict(exp, checkpoint, dataset, window_index, csv_path, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const UnitsError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ialstm

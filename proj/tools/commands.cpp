#include "commands.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "vift/checkpoint.hpp"
#include "vift/data.hpp"
#include "vift/evaluation.hpp"

namespace vift::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

nlohmann::ordered_json to_json(const RunConfig& c) {
  const ViftConfig& m = c.model;
  const TrainConfig& t = c.train;
  ordered_json j;
  j["architecture"] = to_string(m.architecture);
  j["visual_dim"] = m.visual_dim;
  j["inertial_dim"] = m.inertial_dim;
  j["d_model"] = m.d_model;
  j["d_ff"] = m.d_ff;
  j["n_layers"] = m.n_layers;
  j["n_heads"] = m.n_heads;
  j["window"] = m.window;
  j["dropout"] = m.dropout;
  j["head_mode"] = to_string(m.head_mode);
  j["rotation_param"] = to_string(m.rotation_param);
  j["head_hidden"] = m.head_hidden;
  j["mlp_hidden"] = m.mlp_hidden;
  j["lr"] = t.lr;
  j["lr_min"] = t.lr_min;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["weight_decay"] = t.weight_decay;
  j["epochs"] = t.epochs;
  j["batch"] = t.batch;
  j["restart_period"] = t.restart_period;
  j["alpha"] = t.alpha;
  j["norm"] = to_string(t.norm);
  j["tau"] = t.rpmg.tau;
  j["lambda"] = t.rpmg.lambda;
  j["balance"] = t.balance;
  j["bins"] = t.bins;
  j["stride"] = t.stride;
  j["held_out_fraction"] = t.held_out_fraction;
  j["seed"] = t.seed;
  j["data"] = c.data;
  j["out"] = c.out;
  return j;
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& target) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_unsigned()) throw UsageError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw UsageError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw UsageError("");
    }
    target = it->get<T>();
  } catch (const std::exception&) {
    throw UsageError(std::string("config key '") + key + "' has the wrong type: " + it->dump());
  }
}

template <typename E, typename Parse>
void read_enum(const json& j, const char* key, E& target, Parse parse) {
  std::string s;
  if (!j.contains(key)) return;
  read(j, key, s);
  try {
    target = parse(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

RunConfig apply_json(RunConfig c, const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  const ordered_json known = to_json(RunConfig{});
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw UsageError("unknown config key '" + key + "'");

  ViftConfig& m = c.model;
  TrainConfig& t = c.train;
  read_enum(j, "architecture", m.architecture, parse_architecture);
  read(j, "visual_dim", m.visual_dim);
  read(j, "inertial_dim", m.inertial_dim);
  read(j, "d_model", m.d_model);
  read(j, "d_ff", m.d_ff);
  read(j, "n_layers", m.n_layers);
  read(j, "n_heads", m.n_heads);
  read(j, "window", m.window);
  read(j, "dropout", m.dropout);
  read_enum(j, "head_mode", m.head_mode, parse_head_mode);
  read_enum(j, "rotation_param", m.rotation_param, parse_rotation_param);
  read(j, "head_hidden", m.head_hidden);
  read(j, "mlp_hidden", m.mlp_hidden);
  read(j, "lr", t.lr);
  read(j, "lr_min", t.lr_min);
  read(j, "beta1", t.beta1);
  read(j, "beta2", t.beta2);
  read(j, "adam_eps", t.adam_eps);
  read(j, "weight_decay", t.weight_decay);
  read(j, "epochs", t.epochs);
  read(j, "batch", t.batch);
  read(j, "restart_period", t.restart_period);
  read(j, "alpha", t.alpha);
  read_enum(j, "norm", t.norm, parse_norm);
  read(j, "tau", t.rpmg.tau);
  read(j, "lambda", t.rpmg.lambda);
  read(j, "balance", t.balance);
  read(j, "bins", t.bins);
  read(j, "stride", t.stride);
  read(j, "held_out_fraction", t.held_out_fraction);
  read(j, "seed", t.seed);
  read(j, "data", c.data);
  read(j, "out", c.out);
  try {
    m.validate();
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

namespace {

// ---- flag plumbing ----------------------------------------------------------

std::string flag_name(const std::string& key) {
  std::string s = "--" + key;
  for (char& ch : s)
    if (ch == '_') ch = '-';
  return s;
}

std::string default_text(const ordered_json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

const std::map<std::string, std::string>& run_config_help() {
  static const std::map<std::string, std::string> help{
      {"architecture", "transformer or mlp"},
      {"visual_dim", "visual latent width"},
      {"inertial_dim", "inertial latent width"},
      {"d_model", "embedding width (visual_dim + inertial_dim)"},
      {"d_ff", "feed-forward hidden width"},
      {"n_layers", "encoder layers"},
      {"n_heads", "attention heads"},
      {"window", "sequence length N"},
      {"dropout", "dropout rate (must be 0)"},
      {"head_mode", "euler, rpmg-euler or rpmg-9d"},
      {"rotation_param", "euler or axis-angle for 3-parameter heads"},
      {"head_hidden", "pose head hidden width"},
      {"mlp_hidden", "MLP baseline hidden width"},
      {"lr", "peak learning rate"},
      {"lr_min", "learning rate at the end of each cosine cycle"},
      {"beta1", "AdamW beta1"},
      {"beta2", "AdamW beta2"},
      {"adam_eps", "AdamW epsilon"},
      {"weight_decay", "decoupled weight decay"},
      {"epochs", "training epochs"},
      {"batch", "windows per mini-batch"},
      {"restart_period", "epochs per warm-restart cycle"},
      {"alpha", "rotation loss weight"},
      {"norm", "l1 or l2"},
      {"tau", "RPMG Riemannian step"},
      {"lambda", "RPMG regularization"},
      {"balance", "rotation-histogram loss weights (true or false)"},
      {"bins", "histogram bins for balancing"},
      {"stride", "window stride"},
      {"held_out_fraction", "held-out fraction of windows per sequence"},
      {"seed", "random seed"},
  };
  return help;
}

json parse_flag_value(const ordered_json& like, const std::string& key, const std::string& text) {
  try {
    if (like.is_string()) return text;
    if (like.is_boolean()) {
      if (text == "true" || text == "on" || text == "1") return true;
      if (text == "false" || text == "off" || text == "0") return false;
      throw std::invalid_argument("");
    }
    std::size_t used = 0;
    if (like.is_number_unsigned()) {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument("");
      const unsigned long long v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument("");
      return v;
    }
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw UsageError("invalid value '" + text + "' for " + flag_name(key));
  }
}

struct RunFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::vector<std::string> data;
  CLI::Option* data_opt = nullptr;
  std::string out;
  CLI::Option* out_opt = nullptr;
  std::string config;

  void add_to(CLI::App& cmd) {
    const ordered_json defaults = to_json(RunConfig{});
    cmd.add_option("--config", config, "flat JSON config; flags override its values")->check(CLI::ExistingFile);
    data_opt = cmd.add_option("--data", data, "sequence directory (repeatable)")->check(CLI::ExistingDirectory);
    out_opt = cmd.add_option("--out", out, "output directory");
    for (const auto& [key, value] : defaults.items()) {
      if (key == "data" || key == "out") continue;
      options[key] =
          cmd.add_option(flag_name(key), values[key], run_config_help().at(key))->default_str(default_text(value));
    }
  }

  RunConfig resolve() const {
    json merged = json::object();
    if (!config.empty()) {
      std::ifstream in(config);
      try {
        merged = json::parse(in);
      } catch (const json::exception& e) {
        throw UsageError("cannot parse " + config + ": " + e.what());
      }
      if (!merged.is_object()) throw UsageError(config + " must contain a JSON object");
    }
    const ordered_json defaults = to_json(RunConfig{});
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) merged[key] = parse_flag_value(defaults[key], key, values.at(key));
    if (data_opt->count() > 0) merged["data"] = data;
    if (out_opt->count() > 0) merged["out"] = out;
    RunConfig c = apply_json(RunConfig{}, merged);
    if (c.data.empty()) throw UsageError("no training data: pass --data or set \"data\" in the config");
    for (const auto& d : c.data)
      if (!fs::is_directory(d)) throw UsageError("data directory does not exist: " + d);
    if (c.out.empty()) throw UsageError("no output directory: pass --out or set \"out\" in the config");
    return c;
  }
};

// ---- commands -----------------------------------------------------------------

struct SynthArgs {
  SyntheticSpec spec;
  std::string mixing = "linear";
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SyntheticSpec spec = a.spec;
  try {
    spec.mixing = parse_mixing(a.mixing);
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const SyntheticSequence s = generate_synthetic(spec);
  write_sequence(s.dataset, a.out);
  const auto d = cumulative_distance(s.dataset.absolute);
  out << "wrote " << a.out << ": T=" << spec.length << " latent_dim=" << s.dataset.latents.cols()
      << " mixing=" << to_string(spec.mixing) << " noise=" << spec.noise_std << " seed=" << spec.seed
      << " distance=" << std::fixed << std::setprecision(1) << d.back() << "m\n";
  return kExitOk;
}

WindowSplit load_windows(const RunConfig& c) {
  WindowSplit all;
  const std::size_t width = c.model.visual_dim + c.model.inertial_dim;
  for (const auto& dir : c.data) {
    const SequenceDataset seq = load_sequence(dir);
    if (static_cast<std::size_t>(seq.latents.cols()) != width)
      throw std::runtime_error(dir + ": latent width " + std::to_string(seq.latents.cols()) +
                               " does not match visual_dim + inertial_dim = " + std::to_string(width));
    if (seq.visual_dim != 0 && (seq.visual_dim != c.model.visual_dim || seq.inertial_dim != c.model.inertial_dim))
      throw std::runtime_error(dir + ": latent split " + std::to_string(seq.visual_dim) + "+" +
                               std::to_string(seq.inertial_dim) + " does not match the model's " +
                               std::to_string(c.model.visual_dim) + "+" + std::to_string(c.model.inertial_dim));
    const WindowSplit s = split_windows(window_dataset(seq, c.model.window, c.train.stride), c.train.held_out_fraction);
    all.train.insert(all.train.end(), s.train.begin(), s.train.end());
    all.held_out.insert(all.held_out.end(), s.held_out.begin(), s.held_out.end());
  }
  return all;
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

int cmd_train(const RunFlags& flags, bool resume, std::ostream& out) {
  const RunConfig c = flags.resolve();
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "resolved_config.json", to_json(c));

  const WindowSplit split = load_windows(c);
  if (split.train.empty()) throw std::runtime_error("no training windows after the held-out split");
  spdlog::info("{} training windows, {} held out", split.train.size(), split.held_out.size());

  TrainOptions opts;
  opts.out_dir = c.out;
  if (resume) {
    const fs::path w = fs::path(c.out) / "weights.vifw", s = fs::path(c.out) / "state.vifs";
    if (!fs::exists(w) || !fs::exists(s)) throw UsageError("--resume needs weights.vifw and state.vifs in " + c.out);
    opts.resume_weights = load_weights(w, c.model);
    opts.resume_state = load_training_state(s);
    out << "resuming after epoch " << opts.resume_state->epoch << '\n';
  }
  const TrainResult r = train(c.model, c.train, split.train, split.held_out, opts);
  if (r.log.empty()) {
    out << "nothing to do: " << c.train.epochs << " epochs already completed\n";
    return kExitOk;
  }
  const EpochRecord& last = r.log.back();
  out << "trained " << r.weights.parameter_count() << " parameters to epoch " << last.epoch << ": train_loss "
      << last.train_loss << " val_loss " << last.val_loss << "; weights in " << (fs::path(c.out) / "weights.vifw").string()
      << '\n';
  return kExitOk;
}

struct InferArgs {
  std::string weights, data, out;
  std::size_t batch_windows = 64;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const ViftWeights w = load_weights(a.weights);
  const SequenceDataset seq = load_sequence(a.data);
  const std::size_t width = w.config.visual_dim + w.config.inertial_dim;
  if (static_cast<std::size_t>(seq.latents.cols()) != width)
    throw std::runtime_error("checkpoint expects latent width " + std::to_string(width) + " but " + a.data +
                             " has " + std::to_string(seq.latents.cols()));
  if (a.batch_windows == 0) throw UsageError("--batch-windows must be at least 1");

  const RowMatrix outputs = sliding_window_infer(w, seq.latents, a.batch_windows);
  std::vector<SE3Pose> rel;
  rel.reserve(static_cast<std::size_t>(outputs.rows()));
  for (Eigen::Index t = 0; t < outputs.rows(); ++t) rel.push_back(to_se3(decode_pose(outputs, t, w.config), w.config));
  std::vector<SE3Pose> abs = accumulate(rel, seq.absolute.front());
  abs.insert(abs.begin(), seq.absolute.front());

  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_kitti_file(abs, dir / "poses.txt");
  write_kitti_file(rel, dir / "relative_poses.txt");
  export_trajectory(abs, dir / "trajectory", &seq.absolute);
  out << "wrote " << abs.size() << " poses to " << (dir / "poses.txt").string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string gt, est, out;
  std::size_t start_step = 10;
  std::vector<double> lengths{100, 200, 300, 400, 500, 600, 700, 800};
};

ordered_json metrics_json(const TrajectoryMetrics& m, const EvalArgs& a) {
  ordered_json j;
  j["t_rel_percent"] = m.t_rel;
  j["r_rel_deg_per_100m"] = m.r_rel;
  j["count"] = m.count;
  j["start_step"] = a.start_step;
  j["per_length"] = ordered_json::array();
  for (const auto& l : m.per_length) {
    ordered_json e;
    e["length_m"] = l.length;
    e["t_rel_percent"] = l.t_rel;
    e["r_rel_deg_per_100m"] = l.r_rel;
    e["count"] = l.count;
    j["per_length"].push_back(e);
  }
  return j;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  EvalProtocol p;
  p.start_step = a.start_step;
  p.lengths = a.lengths;
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto gt = read_kitti_file(a.gt);
  const auto est = read_kitti_file(a.est);
  const TrajectoryMetrics m = kitti_relative_errors(gt, est, p);
  out << std::fixed << std::setprecision(4);
  out << "length_m  t_rel_%  r_rel_deg/100m  count\n";
  for (const auto& l : m.per_length)
    out << std::setw(8) << l.length << ' ' << std::setw(8) << l.t_rel << ' ' << std::setw(15) << l.r_rel << ' '
        << std::setw(6) << l.count << '\n';
  out << "     all " << std::setw(8) << m.t_rel << ' ' << std::setw(15) << m.r_rel << ' ' << std::setw(6) << m.count
      << '\n';
  if (!a.out.empty()) write_json(a.out, metrics_json(m, a));
  return kExitOk;
}

struct PlotArgs {
  std::string poses, reference, out;
};

int cmd_plot(const PlotArgs& a, std::ostream& out) {
  const auto poses = read_kitti_file(a.poses);
  std::vector<SE3Pose> ref;
  if (!a.reference.empty()) ref = read_kitti_file(a.reference);
  const TrajectoryFiles f = export_trajectory(poses, a.out, ref.empty() ? nullptr : &ref);
  out << "wrote " << f.csv.string() << " and " << f.svg.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual-inertial odometry with a causal transformer over precomputed latents", "vift"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(34);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic latent sequence");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "random seed")->capture_default_str();
  synth_cmd->add_option("--length", synth.spec.length, "transitions T")->capture_default_str();
  synth_cmd->add_option("--mixing", synth.mixing, "linear or nonlinear")->capture_default_str();
  synth_cmd->add_option("--noise", synth.spec.noise_std, "visual noise std")->capture_default_str();
  synth_cmd->add_option("--inertial-noise-scale", synth.spec.inertial_noise_scale, "inertial noise / visual noise")
      ->capture_default_str();
  synth_cmd->add_option("--speed-min", synth.spec.speed_min, "m/s")->capture_default_str();
  synth_cmd->add_option("--speed-max", synth.spec.speed_max, "m/s")->capture_default_str();
  synth_cmd->add_option("--yaw-rate-max", synth.spec.yaw_rate_max, "rad/s")->capture_default_str();
  synth_cmd->add_option("--frame-dt", synth.spec.frame_dt, "seconds per frame")->capture_default_str();
  synth_cmd->add_option("--visual-dim", synth.spec.visual_dim, "visual latent width")->capture_default_str();
  synth_cmd->add_option("--inertial-dim", synth.spec.inertial_dim, "inertial latent width")->capture_default_str();
  synth_cmd->add_option("--id", synth.spec.id, "sequence id")->capture_default_str();

  RunFlags train_flags;
  bool resume = false;
  CLI::App* train_cmd = app.add_subcommand("train", "train on latent sequences");
  train_flags.add_to(*train_cmd);
  train_cmd->add_flag("--resume", resume, "continue from weights.vifw and state.vifs in the output directory");

  InferArgs infer;
  CLI::App* infer_cmd = app.add_subcommand("infer", "estimate a trajectory with sliding-window inference");
  infer_cmd->add_option("--weights", infer.weights, "weights file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--data", infer.data, "sequence directory")->required()->check(CLI::ExistingDirectory);
  infer_cmd->add_option("--out", infer.out, "output directory")->required();
  infer_cmd->add_option("--batch-windows", infer.batch_windows, "windows per forward pass")->capture_default_str();

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "KITTI relative errors of an estimate against ground truth");
  eval_cmd->add_option("--gt", eval.gt, "ground-truth poses (KITTI format)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--est", eval.est, "estimated poses (KITTI format)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval.out, "JSON report path");
  eval_cmd->add_option("--start-step", eval.start_step, "frames between subsequence starts")->capture_default_str();
  eval_cmd->add_option("--lengths", eval.lengths, "subsequence lengths in metres")
      ->delimiter(',')
      ->default_str("100,200,300,400,500,600,700,800");

  PlotArgs plot;
  CLI::App* plot_cmd = app.add_subcommand("plot", "export a trajectory as CSV and SVG");
  plot_cmd->add_option("--poses", plot.poses, "poses (KITTI format)")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--reference", plot.reference, "reference poses drawn underneath")->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", plot.out, "output path stem (.csv and .svg are appended)")->required();

  std::vector<std::string> argv_store{"vift"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth, out);
    if (train_cmd->parsed()) return cmd_train(train_flags, resume, out);
    if (infer_cmd->parsed()) return cmd_infer(infer, out);
    if (eval_cmd->parsed()) return cmd_eval(eval, out);
    if (plot_cmd->parsed()) return cmd_plot(plot, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace vift::cli

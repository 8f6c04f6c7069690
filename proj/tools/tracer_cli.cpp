// tracer: score, calibrate, evaluate, and synthesize dual-control trajectory
// logs. Exit codes: 0 ok, 2 input/spec error, 3 data-content error,
// 4 embedding-provider error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tracer/calibration.hpp"
#include "tracer/config.hpp"
#include "tracer/evaluation.hpp"
#include "tracer/http_embedder.hpp"
#include "tracer/risk.hpp"
#include "tracer/signals.hpp"
#include "tracer/synth.hpp"
#include "tracer/trajectory.hpp"

namespace fs = std::filesystem;
using namespace tracer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitData = 3;
constexpr int kExitProvider = 4;

struct CommonOpts {
  std::string input;
  std::string output_dir;
  std::string params;
  std::string config;
  std::string grid;
  std::string provider;
  long long seed = -1;  // negative: not set on the command line
  bool prefix = false;
  double threshold = std::numeric_limits<double>::quiet_NaN();
};

fs::path resolve_output_dir(const CommonOpts& opts) {
  if (!opts.output_dir.empty()) return fs::path(opts.output_dir);
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const auto stamp =
      std::chrono::duration_cast<std::chrono::seconds>(now).count();
  return fs::path("run-" + std::to_string(stamp) + "-seed" +
                  std::to_string(opts.seed < 0 ? 7 : opts.seed));
}

KeyValueConfig load_config(const CommonOpts& opts) {
  if (opts.config.empty()) return {};
  return KeyValueConfig::load(opts.config);
}

ContentFilterConfig filter_from_config(const KeyValueConfig& cfg) {
  ContentFilterConfig filter;
  filter.pi0 = cfg.get_double("filter.pi0", filter.pi0);
  filter.epsilon = cfg.get_double("filter.epsilon", filter.epsilon);
  const std::string stopwords = cfg.get_string("filter.stopwords_path");
  if (!stopwords.empty()) filter.stopwords = load_stopwords(stopwords);
  filter.validate();
  return filter;
}

RepetitionConfig repetition_from_config(const KeyValueConfig& cfg) {
  RepetitionConfig rep;
  rep.window = static_cast<int>(cfg.get_int("repetition.window", rep.window));
  rep.validate();
  return rep;
}

std::shared_ptr<EmbeddingProvider> provider_from_config(
    const KeyValueConfig& cfg, const std::string& provider_flag) {
  EmbeddingProviderConfig pc;
  std::string kind = provider_flag.empty()
                         ? cfg.get_string("embedding.kind", "builtin")
                         : provider_flag;
  if (kind == "builtin" || kind == "builtin_hashed_bow") {
    pc.kind = EmbeddingProviderConfig::Kind::builtin_hashed_bow;
  } else if (kind == "http" || kind == "external_http") {
    pc.kind = EmbeddingProviderConfig::Kind::external_http;
  } else {
    throw std::runtime_error("unknown embedding provider: " + kind);
  }
  pc.dimension = static_cast<std::size_t>(
      cfg.get_int("embedding.dimension", static_cast<long long>(pc.dimension)));
  pc.endpoint = cfg.get_string("embedding.endpoint");
  pc.timeout_ms =
      static_cast<int>(cfg.get_int("embedding.timeout_ms", pc.timeout_ms));
  pc.retries = static_cast<int>(cfg.get_int("embedding.retries", pc.retries));
  pc.cache_capacity = static_cast<std::size_t>(cfg.get_int(
      "embedding.cache_capacity", static_cast<long long>(pc.cache_capacity)));
  pc.fallback_to_builtin =
      cfg.get_bool("embedding.fallback_to_builtin", pc.fallback_to_builtin);
  if (const char* env = std::getenv("TRACER_EMBED_URL"))
    pc.endpoint = env;
  return make_provider(pc);
}

// --params accepts either a calibration-report file or an inline
// "alpha=..,beta=..,gamma=..,k=..,w=.." list.
TracerParams params_from_option(const std::string& spec) {
  if (spec.empty())
    throw std::runtime_error("--params is required (inline values or a "
                             "calibration report file)");
  if (fs::exists(spec)) {
    std::ifstream in(spec);
    return read_calibration_report(in).best;
  }
  TracerParams p;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("bad --params entry: " + item);
    const std::string key = item.substr(0, eq);
    const double value = std::stod(item.substr(eq + 1));
    if (key == "alpha") p.alpha = value;
    else if (key == "beta") p.beta = value;
    else if (key == "gamma") p.gamma = value;
    else if (key == "k") p.k = value;
    else if (key == "w") p.w = value;
    else throw std::runtime_error("unknown --params key: " + key);
  }
  p.validate();
  return p;
}

GridSpec grid_from_config(const KeyValueConfig& cfg) {
  GridSpec grid;
  grid.alpha = cfg.get_double_list("grid.alpha", grid.alpha);
  grid.beta = cfg.get_double_list("grid.beta", grid.beta);
  grid.gamma = cfg.get_double_list("grid.gamma", grid.gamma);
  grid.k = cfg.get_double_list("grid.k", grid.k);
  grid.refine_levels = static_cast<int>(
      cfg.get_int("grid.refine_levels", grid.refine_levels));
  grid.shrink = cfg.get_double("grid.shrink", grid.shrink);
  grid.tau = cfg.get_double("grid.tau", grid.tau);
  grid.pilot_w = cfg.get_double("grid.pilot_w", grid.pilot_w);
  grid.validate();
  return grid;
}

std::vector<TrajectoryRecord> load_input(const std::string& path) {
  if (!fs::exists(path))
    throw std::runtime_error("input file does not exist: " + path);
  return load_trajectory_log(path);
}

void write_score_csv(std::ostream& out, const std::vector<EpisodeScore>& rows) {
  out << "episode_id,score,score_agent,score_user,n_steps,argmax_step\n";
  for (const auto& r : rows)
    out << r.episode_id << ',' << format_double(r.score) << ','
        << format_double(r.score_agent) << ',' << format_double(r.score_user)
        << ',' << r.n_steps << ',' << r.argmax_step << '\n';
}

std::vector<std::pair<std::string, double>> read_score_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open score CSV: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty score CSV: " + path);
  std::vector<std::pair<std::string, double>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, score;
    std::getline(ss, id, ',');
    std::getline(ss, score, ',');
    out.emplace_back(id, std::stod(score));
  }
  return out;
}

int cmd_score(const CommonOpts& opts) {
  const auto cfg = load_config(opts);
  const auto filter = filter_from_config(cfg);
  const auto rep = repetition_from_config(cfg);
  auto provider = provider_from_config(cfg, opts.provider);
  const auto params = params_from_option(opts.params);
  const auto trajectories = load_input(opts.input);

  const auto dir = resolve_output_dir(opts);
  fs::create_directories(dir);
  std::vector<EpisodeScore> rows;
  std::ofstream prefix_out;
  if (opts.prefix) {
    prefix_out.open(dir / "prefix_scores.csv");
    prefix_out << "episode_id,step,score\n";
  }
  std::ofstream signal_out(dir / "signals.csv");
  bool first_signals = true;
  for (const auto& traj : trajectories) {
    const auto signals = compute_step_signals(traj, filter, rep, *provider);
    rows.push_back(score_episode(traj, signals, params));
    if (first_signals) {
      write_signal_csv(signal_out, traj, signals);
      first_signals = false;
    }
    if (opts.prefix) {
      const auto prefixes =
          prefix_scores(step_risks(traj, signals, params), params);
      for (std::size_t t = 0; t < prefixes.size(); ++t)
        prefix_out << traj.episode_id << ',' << (t + 1) << ','
                   << format_double(prefixes[t]) << '\n';
    }
  }
  std::ofstream out(dir / "scores.csv");
  write_score_csv(out, rows);
  std::cout << "scored " << rows.size() << " episodes -> "
            << (dir / "scores.csv").string() << '\n';
  return kExitOk;
}

int cmd_fit(const CommonOpts& opts) {
  const auto cfg = load_config(opts);
  const auto filter = filter_from_config(cfg);
  const auto rep = repetition_from_config(cfg);
  auto provider = provider_from_config(cfg, opts.provider);
  const auto grid =
      opts.grid.empty() ? GridSpec{} : grid_from_config(KeyValueConfig::load(opts.grid));
  const auto trajectories = load_input(opts.input);

  // Deterministic 70/30 split by position for the validation AUROC.
  std::vector<TrajectoryRecord> train, validation;
  for (std::size_t i = 0; i < trajectories.size(); ++i)
    (i % 10 < 7 ? train : validation).push_back(trajectories[i]);
  if (validation.empty()) train = trajectories;

  const auto report = fit(train, validation, grid, filter, rep, *provider);
  const auto dir = resolve_output_dir(opts);
  fs::create_directories(dir);
  std::ofstream out(dir / "calibration.json");
  write_calibration_report(out, report);
  std::cout << "best theta: alpha=" << format_double(report.best.alpha)
            << " beta=" << format_double(report.best.beta)
            << " gamma=" << format_double(report.best.gamma)
            << " k=" << format_double(report.best.k)
            << " w=" << format_double(report.best.w) << '\n'
            << "loss: " << format_double(report.loss) << '\n'
            << "validation AUROC: " << format_double(report.validation_auroc)
            << '\n';
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& scores_csv) {
  const auto cfg = load_config(opts);
  const auto filter = filter_from_config(cfg);
  const auto rep = repetition_from_config(cfg);
  auto provider = provider_from_config(cfg, opts.provider);
  const auto params = params_from_option(opts.params);
  const auto trajectories = load_input(opts.input);

  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::vector<double>> failed_prefixes;
  std::vector<std::vector<double>> failed_baseline_prefixes;
  std::vector<double> prefix_flat_scores;
  std::vector<int> prefix_flat_labels;
  std::vector<double> baseline_scores;

  std::optional<std::vector<std::pair<std::string, double>>> csv_scores;
  if (!scores_csv.empty()) csv_scores = read_score_csv(scores_csv);

  for (const auto& traj : trajectories) {
    if (!traj.outcome)
      throw EvaluationError("episode \"" + traj.episode_id +
                            "\" has no outcome label");
    const auto signals = compute_step_signals(traj, filter, rep, *provider);
    const auto risks = step_risks(traj, signals, params);
    double score = tracer_score(risk_values(risks), params);
    if (csv_scores) {
      auto it = std::find_if(csv_scores->begin(), csv_scores->end(),
                             [&](const auto& e) {
                               return e.first == traj.episode_id;
                             });
      if (it == csv_scores->end())
        throw EvaluationError("score CSV is missing episode \"" +
                              traj.episode_id + "\"");
      score = it->second;
    }
    scores.push_back(score);
    labels.push_back(*traj.outcome);
    baseline_scores.push_back(normalized_entropy_score(traj));
    const auto prefixes = prefix_scores(risks, params);
    for (double s : prefixes) {
      prefix_flat_scores.push_back(s);
      prefix_flat_labels.push_back(*traj.outcome);
    }
    if (*traj.outcome == 1) {
      failed_prefixes.push_back(prefixes);
      failed_baseline_prefixes.push_back(
          normalized_entropy_prefix_scores(traj));
    }
  }

  EvalReport report;
  report.auroc_episode = auroc(scores, labels);
  const auto arc = auarc(scores, labels);
  report.auarc_value = arc.area;
  report.arc_curve = arc.curve;
  report.roc = roc_curve(scores, labels);
  report.auroc_prefix = auroc(prefix_flat_scores, prefix_flat_labels);
  report.auroc_baseline = auroc(baseline_scores, labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    report.n_fail += labels[i] == 1;
    report.n_succ += labels[i] == 0;
  }
  // Permutation reference: AUROC under deterministically shuffled labels
  // should sit near 0.5.
  {
    std::vector<int> shuffled = labels;
    std::mt19937_64 rng(
        static_cast<std::uint64_t>(opts.seed < 0 ? 7 : opts.seed));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    bool pos = false, neg = false;
    for (int y : shuffled) (y == 1 ? pos : neg) = true;
    if (pos && neg) report.auroc_permuted = auroc(scores, shuffled);
  }
  report.threshold = std::isnan(opts.threshold)
                         ? select_threshold(scores, labels)
                         : opts.threshold;
  report.warning = early_warning(failed_prefixes, report.threshold);
  {
    const double baseline_thr =
        select_threshold(baseline_scores, labels);
    report.baseline_detected_by_20pct =
        early_warning(failed_baseline_prefixes, baseline_thr)
            .detected_by_20pct;
  }

  const auto dir = resolve_output_dir(opts);
  emit_report(report, dir);
  std::cout << "AUROC/AUARC: " << report.auroc_episode << " / "
            << report.auarc_value << " -> " << dir.string() << '\n';
  return kExitOk;
}

int cmd_synth(const CommonOpts& opts) {
  ScenarioSpec spec;
  if (!opts.config.empty())
    spec = ScenarioSpec::from_config(KeyValueConfig::load(opts.config));
  if (opts.seed >= 0) spec.seed = static_cast<std::uint64_t>(opts.seed);
  spec.validate();

  const auto data = generate(spec);
  const auto dir = resolve_output_dir(opts);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "trajectories.jsonl");
    write_trajectory_log(out, data.trajectories);
  }
  {
    std::ofstream out(dir / "annotations.csv");
    write_annotations(out, data.annotations);
  }
  std::size_t failures = 0, steps = 0;
  for (const auto& t : data.trajectories) {
    failures += t.outcome.value_or(0);
    steps += t.steps.size();
  }
  std::cout << "episodes: " << data.trajectories.size() << '\n'
            << "failures: " << failures << '\n'
            << "steps: " << steps << '\n'
            << "hazard annotations: " << data.annotations.size() << '\n'
            << "output: " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TRACER trajectory risk scoring"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string scores_csv;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--input", opts.input, "trajectory log (JSONL)");
    cmd->add_option("--output-dir", opts.output_dir, "run directory");
    cmd->add_option("--params", opts.params,
                    "theta values or calibration-report path");
    cmd->add_option("--config", opts.config, "key-value config file");
    cmd->add_option("--seed", opts.seed, "random seed");
    cmd->add_option("--grid", opts.grid, "grid spec config file");
    cmd->add_option("--threshold", opts.threshold,
                    "early-warning threshold override");
    cmd->add_option("--provider", opts.provider,
                    "embedding provider (builtin|http)");
    cmd->add_flag("--prefix", opts.prefix, "also write per-step prefix scores");
  };

  auto* score = app.add_subcommand("score", "score episodes under theta");
  auto* fit_cmd = app.add_subcommand("fit", "calibrate theta on labeled data");
  auto* eval = app.add_subcommand("eval", "evaluate failure prediction");
  auto* synth = app.add_subcommand("synth", "generate synthetic trajectories");
  for (auto* cmd : {score, fit_cmd, eval, synth}) add_common(cmd);
  eval->add_option("scores", scores_csv,
                   "optional score CSV from a previous `score` run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (score->parsed()) return cmd_score(opts);
    if (fit_cmd->parsed()) return cmd_fit(opts);
    if (eval->parsed()) return cmd_eval(opts, scores_csv);
    if (synth->parsed()) return cmd_synth(opts);
  } catch (const ProviderError& e) {
    std::cerr << "provider error: " << e.what() << '\n';
    return kExitProvider;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const SpecError& e) {
    std::cerr << "spec error: " << e.what() << '\n';
    return kExitInput;
  } catch (const CalibrationError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const EvaluationError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitOk;
}

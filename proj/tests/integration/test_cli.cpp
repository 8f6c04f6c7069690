#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "tracer-cli-test.log";
  const std::string cmd = std::string(TRACER_CLI_PATH) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult res;
#ifdef _WIN32
  res.exit_code = status;
#else
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#endif
  std::ifstream in(log);
  std::ostringstream buf;
  buf << in.rdbuf();
  res.output = buf.str();
  return res;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const std::string kParams = "alpha=1,beta=1,gamma=1,k=0.3,w=0.25";

}  // namespace

TEST_CASE("synth then score then eval compose") {
  TempDir dir("tracer-cli-pipeline");
  const auto synth_dir = dir.path / "synth";
  auto synth = run_cli("synth --seed 11 --output-dir " + synth_dir.string());
  REQUIRE(synth.exit_code == 0);
  REQUIRE(fs::exists(synth_dir / "trajectories.jsonl"));
  REQUIRE(fs::exists(synth_dir / "annotations.csv"));
  CHECK(synth.output.find("episodes: 1000") != std::string::npos);

  const auto input = (synth_dir / "trajectories.jsonl").string();
  const auto score_dir = dir.path / "score";
  auto score = run_cli("score --input " + input + " --params " + kParams +
                       " --prefix --output-dir " + score_dir.string());
  REQUIRE(score.exit_code == 0);
  REQUIRE(fs::exists(score_dir / "scores.csv"));
  REQUIRE(fs::exists(score_dir / "signals.csv"));
  REQUIRE(fs::exists(score_dir / "prefix_scores.csv"));
  CHECK(slurp(score_dir / "scores.csv")
            .rfind("episode_id,score,score_agent,score_user,n_steps,"
                   "argmax_step\n",
                   0) == 0);
  CHECK(slurp(score_dir / "signals.csv")
            .rfind("step,actor,u,u_available,d_rep,d_o_agent,d_o_user\n", 0) ==
        0);
  CHECK(slurp(score_dir / "prefix_scores.csv")
            .rfind("episode_id,step,score\n", 0) == 0);

  const auto eval_dir = dir.path / "eval";
  auto eval = run_cli("eval --input " + input + " --params " + kParams +
                      " --output-dir " + eval_dir.string());
  REQUIRE(eval.exit_code == 0);
  for (const char* f : {"summary.txt", "roc.csv", "arc.csv",
                        "early_warning.csv"})
    CHECK(fs::exists(eval_dir / f));
  CHECK(slurp(eval_dir / "summary.txt").find("AUROC/AUARC: ") !=
        std::string::npos);

  // feeding the score CSV back in reproduces the direct evaluation
  const auto eval2_dir = dir.path / "eval2";
  auto eval2 = run_cli("eval --input " + input + " --params " + kParams +
                       " --output-dir " + eval2_dir.string() + " " +
                       (score_dir / "scores.csv").string());
  REQUIRE(eval2.exit_code == 0);
  CHECK(slurp(eval2_dir / "summary.txt") == slurp(eval_dir / "summary.txt"));
}

TEST_CASE("reruns are byte-identical") {
  TempDir dir("tracer-cli-determinism");
  const auto a = dir.path / "a";
  const auto b = dir.path / "b";
  for (const auto& out : {a, b}) {
    auto res = run_cli("synth --seed 3 --output-dir " + out.string());
    REQUIRE(res.exit_code == 0);
  }
  CHECK(slurp(a / "trajectories.jsonl") == slurp(b / "trajectories.jsonl"));
  CHECK(slurp(a / "annotations.csv") == slurp(b / "annotations.csv"));

  const auto sa = dir.path / "sa";
  const auto sb = dir.path / "sb";
  for (const auto& out : {sa, sb}) {
    auto res = run_cli("score --input " +
                       (a / "trajectories.jsonl").string() + " --params " +
                       kParams + " --output-dir " + out.string());
    REQUIRE(res.exit_code == 0);
  }
  CHECK(slurp(sa / "scores.csv") == slurp(sb / "scores.csv"));
  CHECK(slurp(sa / "signals.csv") == slurp(sb / "signals.csv"));
}

TEST_CASE("fit produces a usable calibration report") {
  TempDir dir("tracer-cli-fit");
  const auto synth_dir = dir.path / "synth";
  std::ofstream cfg(dir.path / "scenario.cfg");
  cfg << "episodes = 80\nhazard_density = 0.5\nseed = 19\n";
  cfg.close();
  REQUIRE(run_cli("synth --config " + (dir.path / "scenario.cfg").string() +
                  " --output-dir " + synth_dir.string())
              .exit_code == 0);

  std::ofstream grid(dir.path / "grid.cfg");
  grid << "grid.alpha = 0, 1, 2\ngrid.beta = 0, 1\ngrid.gamma = 0, 1\n"
       << "grid.k = 0.1, 0.3\ngrid.refine_levels = 1\n";
  grid.close();

  const auto fit_dir = dir.path / "fit";
  auto fit = run_cli("fit --input " +
                     (synth_dir / "trajectories.jsonl").string() + " --grid " +
                     (dir.path / "grid.cfg").string() + " --output-dir " +
                     fit_dir.string());
  REQUIRE(fit.exit_code == 0);
  CHECK(fit.output.find("best theta:") != std::string::npos);
  CHECK(fit.output.find("validation AUROC:") != std::string::npos);
  REQUIRE(fs::exists(fit_dir / "calibration.json"));

  // the report file is accepted directly as --params
  const auto score_dir = dir.path / "score";
  auto score = run_cli("score --input " +
                       (synth_dir / "trajectories.jsonl").string() +
                       " --params " + (fit_dir / "calibration.json").string() +
                       " --output-dir " + score_dir.string());
  CHECK(score.exit_code == 0);
}

TEST_CASE("missing input exits 2 and names the path") {
  TempDir dir("tracer-cli-missing");
  auto res = run_cli("score --input " + (dir.path / "nope.jsonl").string() +
                     " --params " + kParams + " --output-dir " +
                     (dir.path / "out").string());
  CHECK(res.exit_code == 2);
  CHECK(res.output.find("nope.jsonl") != std::string::npos);
}

TEST_CASE("malformed input exits 2 with the line number") {
  TempDir dir("tracer-cli-bad-input");
  std::ofstream bad(dir.path / "bad.jsonl");
  bad << R"({"episode_id":"e","steps":[{"actor":"user","text":"x"}]})" << "\n"
      << "{broken\n";
  bad.close();
  auto res = run_cli("score --input " + (dir.path / "bad.jsonl").string() +
                     " --params " + kParams + " --output-dir " +
                     (dir.path / "out").string());
  CHECK(res.exit_code == 2);
  CHECK(res.output.find("line 2") != std::string::npos);
}

TEST_CASE("unlabeled data exits 3 on eval") {
  TempDir dir("tracer-cli-unlabeled");
  std::ofstream in(dir.path / "unlabeled.jsonl");
  in << R"({"episode_id":"e","steps":[{"actor":"user","text":"hello"},{"actor":"agent","text":"checking"}]})"
     << "\n";
  in.close();
  auto res = run_cli("eval --input " + (dir.path / "unlabeled.jsonl").string() +
                     " --params " + kParams + " --output-dir " +
                     (dir.path / "out").string());
  CHECK(res.exit_code == 3);
}

TEST_CASE("one-class data exits 3 on fit") {
  TempDir dir("tracer-cli-one-class");
  std::ofstream cfg(dir.path / "clean.cfg");
  cfg << "episodes = 20\nhazard_density = 0\n";
  cfg.close();
  REQUIRE(run_cli("synth --config " + (dir.path / "clean.cfg").string() +
                  " --output-dir " + (dir.path / "clean").string())
              .exit_code == 0);
  auto res = run_cli("fit --input " +
                     (dir.path / "clean" / "trajectories.jsonl").string() +
                     " --output-dir " + (dir.path / "fit").string());
  CHECK(res.exit_code == 3);
}

TEST_CASE("bad scenario config exits 2") {
  TempDir dir("tracer-cli-bad-spec");
  std::ofstream cfg(dir.path / "bad.cfg");
  cfg << "hazard_density = 2.0\n";
  cfg.close();
  auto res = run_cli("synth --config " + (dir.path / "bad.cfg").string() +
                     " --output-dir " + (dir.path / "out").string());
  CHECK(res.exit_code == 2);
}

TEST_CASE("unknown http endpoint exits 4") {
  TempDir dir("tracer-cli-provider");
  std::ofstream small(dir.path / "small.cfg");
  small << "episodes = 3\n";
  small.close();
  REQUIRE(run_cli("synth --config " + (dir.path / "small.cfg").string() +
                  " --output-dir " + (dir.path / "s").string())
              .exit_code == 0);
  std::ofstream cfg(dir.path / "provider.cfg");
  cfg << "embedding.endpoint = http://127.0.0.1:1/embed\n"
      << "embedding.retries = 0\n"
      << "embedding.timeout_ms = 200\n";
  cfg.close();
  auto res = run_cli("score --provider http --config " +
                     (dir.path / "provider.cfg").string() + " --input " +
                     (dir.path / "s" / "trajectories.jsonl").string() +
                     " --params " + kParams + " --output-dir " +
                     (dir.path / "out").string());
  CHECK(res.exit_code == 4);
}

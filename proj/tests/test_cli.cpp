#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "cnmgp/cli.hpp"

namespace fs = std::filesystem;
using cnmgp::cli::json;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cnmgp_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(CNMGP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

const std::string kQuick = "--set train.epochs=5 --set predict.draws=20 --set predict.grid.points=5";

}  // namespace

TEST(Config, DefaultsParse) {
  const auto rc = cnmgp::cli::parse_run_config(cnmgp::cli::default_config());
  EXPECT_EQ(rc.data.kind, "LF");
  EXPECT_EQ(rc.model.num_inducing, 20u);
  EXPECT_EQ(rc.train.epochs, 2000u);
  EXPECT_EQ(rc.train.coordinates, cnmgp::Coordinates::whitened);
  EXPECT_DOUBLE_EQ(rc.model.hypers.log_l_lengthscale, 2.0);
  EXPECT_FALSE(rc.model.hypers.trainable.l_lengthscale);
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(cnmgp::cli::resolve_config({{"trian", json::object()}}), cnmgp::ConfigError);
  EXPECT_THROW(cnmgp::cli::resolve_config({{"train", {{"epoch", 3}}}}), cnmgp::ConfigError);
  EXPECT_THROW(cnmgp::cli::resolve_config({{"train", {{"epochs", "many"}}}}), cnmgp::ConfigError);
  EXPECT_THROW(cnmgp::cli::resolve_config({{"data", 3}}), cnmgp::ConfigError);
  auto cfg = cnmgp::cli::resolve_config({{"train", {{"epochs", -1}}}});
  EXPECT_THROW(cnmgp::cli::parse_run_config(cfg), cnmgp::ConfigError);
  cfg = cnmgp::cli::resolve_config({{"train", {{"method", "exact"}}}});
  EXPECT_THROW(cnmgp::cli::parse_run_config(cfg), cnmgp::ConfigError);
}

TEST(Config, OverridesParseJsonValues) {
  json cfg = cnmgp::cli::default_config();
  cnmgp::cli::apply_override(cfg, "train.learning_rate=0.01");
  cnmgp::cli::apply_override(cfg, "data.kind=VF");
  cnmgp::cli::apply_override(cfg, "data.train_csv=\"a.csv\"");
  cnmgp::cli::apply_override(cfg, "data.train_csv=null");
  cnmgp::cli::apply_override(cfg, "model.trainable.inducing=true");
  EXPECT_EQ(cfg["train"]["learning_rate"].get<double>(), 0.01);
  EXPECT_EQ(cfg["data"]["kind"], "VF");
  EXPECT_TRUE(cfg["data"]["train_csv"].is_null());
  EXPECT_TRUE(cfg["model"]["trainable"]["inducing"].get<bool>());
  EXPECT_THROW(cnmgp::cli::apply_override(cfg, "train.nope=1"), cnmgp::ConfigError);
  EXPECT_THROW(cnmgp::cli::apply_override(cfg, "noequals"), cnmgp::ConfigError);
}

TEST(Config, SubSeedsDifferAndFollowTopSeed) {
  const auto a = cnmgp::cli::seeds_of(1), b = cnmgp::cli::seeds_of(2);
  EXPECT_NE(a.data, a.split);
  EXPECT_NE(a.data, a.predict);
  EXPECT_NE(a.predict, a.baseline);
  EXPECT_NE(a.data, b.data);
  EXPECT_EQ(a.data, cnmgp::cli::seeds_of(1).data);
}

TEST(Config, Fnv1aKnownValues) {
  EXPECT_EQ(cnmgp::cli::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(cnmgp::cli::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Cli, GenerateIsByteIdentical) {
  const auto a = temp_dir("gen_a"), b = temp_dir("gen_b");
  ASSERT_EQ(run("generate --seed 7 --out " + a.string()), 0);
  ASSERT_EQ(run("generate --seed 7 --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "train.csv"), slurp(b / "train.csv"));
  EXPECT_EQ(slurp(a / "test.csv"), slurp(b / "test.csv"));
  EXPECT_FALSE(slurp(a / "train.csv").empty());
  const auto c = temp_dir("gen_c");
  ASSERT_EQ(run("generate --seed 8 --out " + c.string()), 0);
  EXPECT_NE(slurp(a / "train.csv"), slurp(c / "train.csv"));
}

TEST(Cli, EvalOnPerfectPredictionsGivesZeroRmse) {
  const auto dir = temp_dir("eval");
  auto cfg = cnmgp::cli::default_config();
  cfg["seed"] = 4;
  const auto rc = cnmgp::cli::parse_run_config(cfg);
  const auto data = cnmgp::cli::load_data(rc.data, rc.seed);
  cnmgp::Matrix y = data.test.Y();
  for (double& v : y.data())
    if (!std::isfinite(v)) v = 0.0;
  cnmgp::write_predictions_csv(dir / "perfect.csv", data.test.X(), data.test.input_names, {y, y, y});
  ASSERT_EQ(run("eval --seed 4 --out " + dir.string() + " --set eval.predictions=" + (dir / "perfect.csv").string()), 0);
  const auto m = read(dir / "metrics.json");
  EXPECT_EQ(m["rmse"].get<double>(), 0.0);
  EXPECT_EQ(m["cr"].get<double>(), 1.0);
  EXPECT_EQ(m["count"].get<std::size_t>(), 200u);
}

TEST(Cli, PipelineWritesArtifactsAndManifests) {
  const auto dir = temp_dir("pipeline");
  const std::string common = " --seed 2 --out " + dir.string() + " " + kQuick;
  for (const std::string c : {"train", "predict", "eval", "correlations", "baseline"}) {
    ASSERT_EQ(run(c + common), 0) << c;
    const auto manifest = read(dir / ("manifest." + c + ".json"));
    EXPECT_EQ(manifest["command"], c);
    EXPECT_EQ(manifest["seed"].get<std::uint64_t>(), 2u);
    EXPECT_EQ(manifest["config_hash"].get<std::string>(),
              cnmgp::cli::hex(cnmgp::cli::fnv1a(manifest["config"].dump())));
    for (const auto& f : manifest["files"]) EXPECT_TRUE(fs::exists(dir / f.get<std::string>())) << f;
  }
  EXPECT_TRUE(fs::exists(dir / "model.json"));
  EXPECT_TRUE(fs::exists(dir / "predictions_grid.csv"));
  EXPECT_TRUE(fs::exists(dir / "correlations.csv"));
  const auto m = read(dir / "metrics.json");
  EXPECT_TRUE(std::isfinite(m["rmse"].get<double>()));
  EXPECT_EQ(m["per_output"].size(), 2u);
}

TEST(Cli, ArtifactsReproduceFromManifestConfig) {
  const auto a = temp_dir("repro_a"), b = temp_dir("repro_b");
  ASSERT_EQ(run("train --seed 5 --out " + a.string() + " " + kQuick), 0);
  json cfg = read(a / "manifest.train.json")["config"];
  cfg["output"]["dir"] = b.string();
  {
    std::ofstream out(b / "config.json");
    out << cfg.dump();
  }
  ASSERT_EQ(run("train --config " + (b / "config.json").string()), 0);
  EXPECT_EQ(slurp(a / "model.json"), slurp(b / "model.json"));
}

TEST(Cli, ExperimentSummaryRecomputesFromPerSeedFiles) {
  const auto dir = temp_dir("experiment");
  ASSERT_EQ(run("experiment --seed 10 --out " + dir.string() + " " + kQuick + " --set experiment.trials=3"), 0);
  const auto summary = read(dir / "summary.json");
  for (const std::string method : {"cnmgp", "igpr"})
    for (const std::string metric : {"rmse", "alci", "cr"}) {
      std::vector<double> v;
      for (int s = 10; s < 13; ++s) v.push_back(read(dir / "seeds" / ("seed_" + std::to_string(s) + ".json"))[method][metric].get<double>());
      const double mean = (v[0] + v[1] + v[2]) / 3.0;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      EXPECT_EQ(summary[method][metric]["mean"].get<double>(), mean) << method << metric;
      EXPECT_EQ(summary[method][metric]["sd"].get<double>(), std::sqrt(ss / 2.0)) << method << metric;
    }
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
}

TEST(Cli, ExperimentIsIndependentOfThreadCount) {
  const auto a = temp_dir("threads_a"), b = temp_dir("threads_b");
  const std::string args = " --seed 3 " + kQuick + " --set experiment.trials=2 --out ";
  ASSERT_EQ(run("experiment" + args + a.string()), 0);
  ASSERT_EQ(std::system(("CNMGP_THREADS=2 " + std::string(CNMGP_CLI_PATH) + " experiment" + args + b.string() +
                         " >/dev/null 2>&1")
                            .c_str()),
            0);
  for (const char* f : {"seeds/seed_3.json", "seeds/seed_4.json"}) {
    auto ja = read(a / f), jb = read(b / f);
    ja.erase("train_seconds");
    jb.erase("train_seconds");
    EXPECT_EQ(ja, jb) << f;
  }
}

TEST(Cli, ExitCodes) {
  const auto dir = temp_dir("exit");
  EXPECT_EQ(run("train --out " + dir.string() + " --set train.bogus=1"), 1);
  EXPECT_EQ(run("train --out " + dir.string() + " --set data.kind=XX"), 1);
  EXPECT_EQ(run("nosuchcommand"), 1);
  EXPECT_EQ(run("train --config " + (dir / "missing.json").string()), 1);
  EXPECT_EQ(run("train --out " + dir.string() + " --set data.kind=csv --set data.train_csv=" + (dir / "none.csv").string()), 2);
  {
    std::ofstream bad(dir / "bad.csv");
    bad << "t,y1,y2\n0.1,1,2\n0.2,oops,3\n";
  }
  EXPECT_EQ(run("train --out " + dir.string() + " --set data.kind=csv --set data.train_csv=" + (dir / "bad.csv").string()), 2);
  EXPECT_EQ(run("train --out " + dir.string() + " " + kQuick + " --set model.theta_l.variance=1e300"), 3);
}

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <json.hpp>

#include "support.hpp"

using namespace earl;
using earl::testing::read_file;
using earl::testing::TempDir;
using nlohmann::json;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

CliRun run_cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = env + " \"" EARL_CLI "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

std::filesystem::path scenario_csv(const TempDir& dir, const std::string& name, std::size_t n, std::size_t p,
                                   std::uint64_t seed) {
  const auto path = dir / name;
  write_csv(generate_scenario({2, n, p}, seed), path);
  return path;
}

json aipwe_entry(const json& estimates) {
  for (const auto& e : estimates)
    if (e.at("estimator") == "aipwe") return e;
  return {};
}

bool has_tmp_leftovers(const TempDir& dir) {
  for (const auto& e : std::filesystem::directory_iterator(dir.path()))
    if (e.path().extension() == ".tmp") return true;
  return false;
}

}  // namespace

TEST(Cli, FitThenEvaluateReproducesInSampleValue) {
  TempDir dir;
  const auto data = scenario_csv(dir, "d.csv", 300, 3, 110);
  const auto model = dir / "model.json";
  const CliRun fit = run_cli(dir, "fit --data " + q(data) + " --out " + q(model) + " --loss hinge --lambda 0.5");
  ASSERT_EQ(fit.code, 0) << fit.err;
  const json m = json::parse(read_file(model));
  EXPECT_EQ(m.at("method"), "earl");
  EXPECT_EQ(m.at("rule_type"), "linear");
  EXPECT_EQ(m.at("loss"), "hinge");
  EXPECT_EQ(m.at("p"), 3);
  EXPECT_EQ(m.at("beta").size(), 3u);
  EXPECT_FALSE(has_tmp_leftovers(dir));

  const CliRun ev = run_cli(dir, "evaluate --data " + q(data) + " --model " + q(model));
  ASSERT_EQ(ev.code, 0) << ev.err;
  const json e = json::parse(ev.out);
  EXPECT_EQ(e.at("n"), 300);
  EXPECT_NEAR(aipwe_entry(e.at("estimates")).at("value").get<double>(),
              aipwe_entry(m.at("in_sample")).at("value").get<double>(), 1e-10);
}

TEST(Cli, FitIsByteDeterministicAndThreadInvariant) {
  TempDir dir;
  const auto data = scenario_csv(dir, "d.csv", 200, 3, 111);
  const std::string base = "fit --data " + q(data) + " --select-lambda --cv-folds 4 --lambda-grid 0.1,1,10 --seed 4";
  ASSERT_EQ(run_cli(dir, base + " --out " + q(dir / "a.json")).code, 0);
  ASSERT_EQ(run_cli(dir, base + " --out " + q(dir / "b.json")).code, 0);
  ASSERT_EQ(run_cli(dir, base + " --threads 4 --out " + q(dir / "c.json")).code, 0);
  EXPECT_EQ(read_file(dir / "a.json"), read_file(dir / "b.json"));
  EXPECT_EQ(read_file(dir / "a.json"), read_file(dir / "c.json"));
  EXPECT_EQ(json::parse(read_file(dir / "a.json")).at("cv_table").size(), 3u);
}

TEST(Cli, CrossfitAndBaselinesFit) {
  TempDir dir;
  const auto data = scenario_csv(dir, "d.csv", 200, 3, 112);
  const CliRun cf = run_cli(dir, "fit --data " + q(data) + " --crossfit --folds 3");
  ASSERT_EQ(cf.code, 0) << cf.err;
  const json j = json::parse(cf.out);
  EXPECT_EQ(j.at("per_fold").size(), 3u);
  EXPECT_TRUE(j.contains("crossfit_value"));
  for (const std::string m : {"qlearning", "owl", "aipwe"}) {
    const CliRun r = run_cli(dir, "fit --data " + q(data) + " --method " + m + " --generations 5");
    ASSERT_EQ(r.code, 0) << m << ": " << r.err;
    EXPECT_EQ(json::parse(r.out).at("rule_type"), m == "qlearning" ? "argmax" : "linear");
  }
}

TEST(Cli, MissingTreatmentColumnIsDataError) {
  TempDir dir;
  const auto data = dir.write("bad.csv", "y,x1,x2\n1,0.5,0.25\n2,1.5,-1\n");
  const CliRun r = run_cli(dir, "fit --data " + q(data));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("'a'"), std::string::npos) << r.err;
}

TEST(Cli, UnknownConfigKeyIsConfigError) {
  TempDir dir;
  const auto data = scenario_csv(dir, "d.csv", 50, 2, 113);
  const auto cfg = dir.write("c.json", R"({"lambda": 1.0, "lamda": 2.0})");
  const CliRun r = run_cli(dir, "fit --data " + q(data) + " --config " + q(cfg));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("lamda"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli(dir, "fit --data " + q(data) + " --loss squared").code, 2);
  EXPECT_EQ(run_cli(dir, "fit --no-such-flag").code, 2);
}

TEST(Cli, SeparationIsNumericalError) {
  TempDir dir;
  const auto data = dir.write("sep.csv", "y,a,x1\n1,-1,-3\n2,-1,-2\n0,-1,-1\n1,1,1\n3,1,2\n2,1,3\n");
  const CliRun r = run_cli(dir, "fit --data " + q(data));
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("ridge"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli(dir, "fit --data " + q(data) + " --ridge 1").code, 0);
}

TEST(Cli, FlagsOverrideConfigFile) {
  TempDir dir;
  const auto data = scenario_csv(dir, "d.csv", 100, 2, 114);
  const auto cfg = dir.write("c.json", R"({"lambda": 3.0, "loss": "exp", "seed": 9})");
  const CliRun a = run_cli(dir, "fit --data " + q(data) + " --config " + q(cfg));
  ASSERT_EQ(a.code, 0) << a.err;
  const json ja = json::parse(a.out);
  EXPECT_EQ(ja.at("lambda"), 3.0);
  EXPECT_EQ(ja.at("loss"), "exp");
  EXPECT_EQ(ja.at("seed"), 9);
  const CliRun b = run_cli(dir, "fit --data " + q(data) + " --config " + q(cfg) + " --lambda 0.25");
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(json::parse(b.out).at("lambda"), 0.25);
  EXPECT_EQ(json::parse(b.out).at("loss"), "exp");
}

TEST(Cli, EnvironmentSuppliesDefaultSeed) {
  TempDir dir;
  const auto data = scenario_csv(dir, "d.csv", 60, 2, 115);
  EXPECT_EQ(json::parse(run_cli(dir, "fit --data " + q(data), "EARL_SEED=77").out).at("seed"), 77);
  EXPECT_EQ(json::parse(run_cli(dir, "fit --data " + q(data) + " --seed 5", "EARL_SEED=77").out).at("seed"), 5);
  EXPECT_EQ(run_cli(dir, "fit --data " + q(data), "EARL_SEED=abc").code, 2);
}

TEST(Cli, EvaluateWithZeroOutcomeModelMatchesIpwe) {
  TempDir dir;
  const auto data = scenario_csv(dir, "d.csv", 150, 2, 116);
  const auto model = dir / "m.json";
  ASSERT_EQ(run_cli(dir, "fit --data " + q(data) + " --out " + q(model)).code, 0);
  json m = json::parse(read_file(model));
  for (auto& t : m.at("nuisance").at("outcome").at("theta")) t = 0.0;
  std::ofstream(dir / "zero.json") << m.dump();
  const CliRun r = run_cli(dir, "evaluate --data " + q(data) + " --model " + q(dir / "zero.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  double ipwe = 0, aipwe = 1;
  const json out = json::parse(r.out);
  for (const auto& e : out.at("estimates")) {
    if (e.at("estimator") == "ipwe") ipwe = e.at("value");
    if (e.at("estimator") == "aipwe") aipwe = e.at("value");
  }
  EXPECT_EQ(ipwe, aipwe);
}

TEST(Cli, EvaluateReportsUnsupportedNormalizedEstimate) {
  TempDir dir;
  const auto data = dir.write("d.csv", "y,a,x1\n1,1,0.5\n2,1,-0.5\n3,1,1.5\n4,1,0\n");
  const auto fitdata = scenario_csv(dir, "f.csv", 100, 1 + 1, 117);
  const auto model = dir / "m.json";
  ASSERT_EQ(run_cli(dir, "fit --data " + q(fitdata) + " --out " + q(model)).code, 0);
  json m = json::parse(read_file(model));
  // Reduce the model to one covariate and a rule that always says -1.
  m["p"] = 1;
  m["beta0"] = -1.0;
  m["beta"] = json::array({0.0});
  m["rule_map"] = "terms:x1";
  m["nuisance"]["propensity"]["map"] = "terms:1";
  m["nuisance"]["propensity"]["gamma"] = json::array({0.0});
  m["nuisance"]["outcome"]["map"] = "terms:1";
  m["nuisance"]["outcome"]["theta"] = json::array({0.0});
  std::ofstream(dir / "neg.json") << m.dump();
  const CliRun r = run_cli(dir, "evaluate --data " + q(data) + " --model " + q(dir / "neg.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  bool saw_error = false;
  const json out = json::parse(r.out);
  for (const auto& e : out.at("estimates"))
    if (e.at("estimator") == "ipwe_normalized") saw_error = e.contains("error");
  EXPECT_TRUE(saw_error);

  const CliRun wrong_p = run_cli(dir, "evaluate --data " + q(fitdata) + " --model " + q(dir / "neg.json"));
  EXPECT_EQ(wrong_p.code, 3);
}

TEST(Cli, SimulateIsFastDeterministicAndThreadInvariant) {
  TempDir dir;
  const std::string base =
      "simulate --scenarios 1,2 --specs CC,II --methods earl-logistic,qlearning,owl,aipwe --n 100 "
      "--replicates 2 --validation-draws 2000 --generations 10 --seed 3";
  const auto t0 = std::chrono::steady_clock::now();
  const CliRun a = run_cli(dir, base + " --out " + q(dir / "a.csv"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_LT(secs, 60.0);
  ASSERT_EQ(run_cli(dir, base + " --out " + q(dir / "b.csv")).code, 0);
  ASSERT_EQ(run_cli(dir, base + " --threads 3 --out " + q(dir / "c.csv")).code, 0);
  const std::string csv = read_file(dir / "a.csv");
  EXPECT_EQ(csv, read_file(dir / "b.csv"));
  EXPECT_EQ(csv, read_file(dir / "c.csv"));
  EXPECT_EQ(csv.rfind("method,scenario,spec,n,replicate,value,seconds\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 2 * 4 * 2);
  EXPECT_FALSE(has_tmp_leftovers(dir));
}

TEST(Cli, PermtestReport) {
  TempDir dir;
  const auto data = scenario_csv(dir, "d.csv", 50, 2, 118);
  const CliRun r = run_cli(dir, "permtest --data " + q(data) + " --permutations 20 --seed 1");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "covariate,coefficient,p_value");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("intercept,", 0), 0u);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    const double p = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_GE(p, 1.0 / 21.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_EQ(rows, 2);
  const CliRun one = run_cli(dir, "permtest --data " + q(data) + " --permutations 20 --covariate 2");
  ASSERT_EQ(one.code, 0) << one.err;
  EXPECT_NE(one.out.find("\nx2,"), std::string::npos);
  EXPECT_EQ(one.out.find("\nx1,"), std::string::npos);
}

TEST(Cli, HelpExitsZero) {
  TempDir dir;
  EXPECT_EQ(run_cli(dir, "--help").code, 0);
  EXPECT_EQ(run_cli(dir, "fit --help").code, 0);
}

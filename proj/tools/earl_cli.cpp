// Command-line front end: fit, evaluate, simulate, permtest.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure. EARL_SEED supplies the seed when neither --seed nor the config
// file does.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "earl/earl.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunConfig {
  std::string data;
  std::string out;
  std::string model;

  std::string method = "earl";
  std::string loss = "logistic";
  double lambda = 1.0;
  bool select_lambda = false;
  bool crossfit = false;
  int folds = 2;
  int cv_folds = 10;
  std::vector<double> lambda_grid = earl::default_lambda_grid();
  double tolerance = 1e-8;
  int max_iterations = 5000;
  int hinge_iterations = 20000;
  std::string rule_map = "linear";
  std::string propensity_map = "linear";
  std::string outcome_map = "linear*a";
  double ridge = 0.0;
  std::vector<double> clip{0.01, 0.99};
  std::uint64_t seed = 0;
  unsigned threads = 1;

  int population = 100;
  int generations = 200;
  double mutation_sd = 0.1;
  int tournament = 4;

  std::vector<int> scenarios{1, 2};
  std::vector<std::string> specs{"CC", "CI", "IC", "II"};
  std::vector<std::string> methods{"earl-logistic", "qlearning", "owl", "aipwe"};
  std::vector<std::size_t> n_grid{200, 500, 1000, 2500};
  int replicates = 100;
  std::size_t validation_draws = 10000;
  bool timing = false;

  int permutations = 2000;
  int covariate = 0;  // 1-based; 0 tests every covariate
};

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void apply_json(RunConfig& c, const json& j) {
  static const std::vector<std::string> known{
      "data", "out", "model", "method", "loss", "lambda", "select_lambda", "crossfit", "folds", "cv_folds",
      "lambda_grid", "tolerance", "max_iterations", "hinge_iterations", "rule_map", "propensity_map",
      "outcome_map", "ridge", "clip", "seed", "threads", "population", "generations", "mutation_sd",
      "tournament", "scenarios", "specs", "methods", "n_grid", "replicates", "validation_draws", "timing",
      "permutations", "covariate"};
  if (!j.is_object()) throw earl::ConfigError("config file must hold a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw earl::ConfigError("unknown config key '" + k + "'");
  try {
    take(j, "data", c.data), take(j, "out", c.out), take(j, "model", c.model);
    take(j, "method", c.method), take(j, "loss", c.loss), take(j, "lambda", c.lambda);
    take(j, "select_lambda", c.select_lambda), take(j, "crossfit", c.crossfit);
    take(j, "folds", c.folds), take(j, "cv_folds", c.cv_folds), take(j, "lambda_grid", c.lambda_grid);
    take(j, "tolerance", c.tolerance), take(j, "max_iterations", c.max_iterations);
    take(j, "hinge_iterations", c.hinge_iterations), take(j, "rule_map", c.rule_map);
    take(j, "propensity_map", c.propensity_map), take(j, "outcome_map", c.outcome_map);
    take(j, "ridge", c.ridge), take(j, "clip", c.clip), take(j, "seed", c.seed), take(j, "threads", c.threads);
    take(j, "population", c.population), take(j, "generations", c.generations);
    take(j, "mutation_sd", c.mutation_sd), take(j, "tournament", c.tournament);
    take(j, "scenarios", c.scenarios), take(j, "specs", c.specs), take(j, "methods", c.methods);
    take(j, "n_grid", c.n_grid), take(j, "replicates", c.replicates);
    take(j, "validation_draws", c.validation_draws), take(j, "timing", c.timing);
    take(j, "permutations", c.permutations), take(j, "covariate", c.covariate);
  } catch (const json::exception& e) {
    throw earl::ConfigError(std::string("bad config value: ") + e.what());
  }
}

earl::Clip make_clip(const RunConfig& c) {
  if (c.clip.size() != 2) throw earl::ConfigError("clip needs exactly two values");
  earl::Clip clip{c.clip[0], c.clip[1]};
  clip.validate();
  return clip;
}

earl::EarlConfig make_earl_config(const RunConfig& c, std::size_t p) {
  earl::EarlConfig e;
  e.loss = earl::parse_loss(c.loss);
  e.lambda = c.lambda;
  e.rule_map = earl::FeatureMap::parse(c.rule_map, p, false);
  e.tolerance = c.tolerance;
  e.max_iterations = c.max_iterations;
  e.hinge_iterations = c.hinge_iterations;
  e.folds = c.folds;
  e.cv_folds = c.cv_folds;
  e.lambda_grid = c.lambda_grid;
  e.seed = c.seed;
  e.threads = std::max(1u, c.threads);
  e.validate();
  return e;
}

earl::NuisanceSpec make_nuisance_spec(const RunConfig& c, std::size_t p) {
  earl::NuisanceSpec s;
  s.propensity_map = earl::FeatureMap::parse(c.propensity_map, p, true);
  s.outcome_map = earl::FeatureMap::parse(c.outcome_map, p, true);
  s.ridge = c.ridge;
  s.clip = make_clip(c);
  if (s.ridge < 0) throw earl::ConfigError("ridge must be nonnegative");
  return s;
}

earl::SearchConfig make_search_config(const RunConfig& c, std::size_t p) {
  earl::SearchConfig s;
  s.population = c.population;
  s.generations = c.generations;
  s.mutation_sd = c.mutation_sd;
  s.tournament = c.tournament;
  s.seed = c.seed;
  s.rule_map = earl::FeatureMap::parse(c.rule_map, p, false);
  s.validate();
  return s;
}

// Writes through a temporary file in the destination directory, then renames.
void write_atomically(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  const fs::path dst(path);
  fs::path tmp = dst;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw earl::ParseError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw earl::ParseError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, dst);
}

earl::Dataset read_data(const RunConfig& c) {
  if (c.data.empty()) throw earl::ConfigError("--data is required");
  std::vector<std::string> warnings;
  earl::Dataset d = earl::load_csv(c.data, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return d;
}

json to_json(const earl::Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

earl::Vector vector_from_json(const json& j) {
  earl::Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

json nuisance_json(const earl::NuisanceFit& nf) {
  return {{"propensity",
           {{"map", nf.propensity.map().to_string()},
            {"gamma", to_json(nf.propensity.gamma())},
            {"clip", {nf.propensity.clip().lo, nf.propensity.clip().hi}},
            {"ridge", nf.propensity.ridge()}}},
          {"outcome", {{"map", nf.outcome.map().to_string()}, {"theta", to_json(nf.outcome.theta())}}}};
}

json estimates_json(const earl::Dataset& data, const Eigen::VectorXi& d, const earl::NuisanceFit& nf) {
  const auto pred = earl::predict_nuisance(nf, data);
  json arr = json::array();
  auto rec = [](const earl::ValueEstimate& v) {
    return json{{"estimator", earl::estimator_name(v.kind)}, {"value", v.estimate}, {"n_effective", v.n_effective}};
  };
  arr.push_back(rec(earl::value_ipwe(data, d, pred)));
  arr.push_back(rec(earl::value_aipwe(data, d, pred)));
  try {
    arr.push_back(rec(earl::value_ipwe_normalized(data, d, pred)));
  } catch (const earl::DomainError& e) {
    arr.push_back({{"estimator", "ipwe_normalized"}, {"error", e.what()}, {"n_effective", 0}});
  }
  return arr;
}

int cmd_fit(const RunConfig& c) {
  const earl::Dataset data = read_data(c);
  const std::size_t p = data.p();
  earl::EarlConfig ec = make_earl_config(c, p);
  const earl::NuisanceSpec spec = make_nuisance_spec(c, p);
  const earl::Method method = earl::parse_method(c.method);

  json out;
  out["method"] = earl::method_name(method);
  out["p"] = p;
  json warnings = json::array();
  earl::NuisanceFit nf;
  Eigen::VectorXi decisions;

  if (method == earl::Method::qlearning) {
    const earl::BaselineFit bf = earl::qlearning_fit(data, spec.outcome_map);
    nf = {earl::fit_propensity(data, spec.propensity_map, spec.ridge, spec.clip), bf.rule.argmax_model()};
    out["rule_type"] = "argmax";
    decisions = bf.rule.decisions(data.X());
    for (const auto& w : bf.warnings) warnings.push_back(w);
  } else {
    out["rule_type"] = "linear";
    out["loss"] = earl::loss_name(ec.loss);
    earl::LinearRule rule;
    if (method == earl::Method::earl) {
      if (c.select_lambda) {
        const earl::LambdaSelection sel = earl::select_lambda(data, spec, ec);
        ec.lambda = sel.lambda;
        json table = json::array();
        for (const auto& row : sel.table)
          table.push_back({{"lambda", row.lambda}, {"mean_value", row.mean_value},
                           {"fold_values", row.fold_values}});
        out["cv_table"] = table;
      }
      if (c.crossfit) {
        const earl::EarlFit cf = earl::earl_fit_crossfit(data, spec, ec);
        rule = cf.rule;
        json folds = json::array();
        for (const auto& f : cf.per_fold)
          folds.push_back({{"beta0", f.rule.beta0()}, {"beta", to_json(f.rule.beta())},
                           {"nuisance_rows", f.nuisance_rows}});
        out["per_fold"] = folds;
        out["crossfit_value"] = earl::value_crossfit_aggregate(data, cf.per_fold).estimate;
        out["objective"] = cf.objective_value;
        for (const auto& w : cf.warnings) warnings.push_back(w);
        nf = earl::fit_nuisance(data, spec);
      } else {
        const earl::PipelineFit pf = earl::fit_pipeline(data, spec, ec, false);
        rule = pf.fit.rule;
        nf = pf.nuisance;
        out["objective"] = pf.fit.objective_value;
        out["converged"] = pf.fit.diagnostics.converged;
        for (const auto& w : pf.fit.warnings) warnings.push_back(w);
      }
    } else if (method == earl::Method::owl) {
      const earl::PropensityModel pi = earl::fit_propensity(data, spec.propensity_map, spec.ridge, spec.clip);
      const earl::BaselineFit bf = earl::owl_fit(data, pi, ec);
      rule = bf.rule.linear();
      nf = {pi, earl::OutcomeModel::zero(p)};
      out["objective"] = bf.objective_value;
      for (const auto& w : bf.warnings) warnings.push_back(w);
    } else {
      nf = earl::fit_nuisance(data, spec);
      const earl::BaselineFit bf = earl::aipwe_direct_search(data, nf, make_search_config(c, p));
      rule = bf.rule.linear();
      out["objective"] = bf.objective_value;
    }
    out["lambda"] = ec.lambda;
    out["rule_map"] = rule.map().to_string();
    out["beta0"] = rule.beta0();
    out["beta"] = to_json(rule.beta());
    decisions = rule.decisions(data.X());
  }
  out["nuisance"] = nuisance_json(nf);
  out["in_sample"] = estimates_json(data, decisions, nf);
  out["seed"] = c.seed;
  out["warnings"] = warnings;
  write_atomically(c.out, out.dump(2) + "\n");
  return 0;
}

struct LoadedModel {
  earl::NuisanceFit nuisance;
  earl::TreatmentRule rule;
};

LoadedModel load_model(const std::string& path, std::size_t p) {
  std::ifstream in(path);
  if (!in) throw earl::ConfigError("cannot open model '" + path + "'");
  json j;
  try {
    in >> j;
    if (j.at("p").get<std::size_t>() != p)
      throw earl::ShapeError("model was fitted with p = " + std::to_string(j.at("p").get<std::size_t>()) +
                             " but the data has p = " + std::to_string(p));
    const json& pj = j.at("nuisance").at("propensity");
    const json& qj = j.at("nuisance").at("outcome");
    const auto clip = pj.at("clip").get<std::vector<double>>();
    if (clip.size() != 2) throw earl::ConfigError("model clip needs two values");
    earl::PropensityModel pi(earl::FeatureMap::parse(pj.at("map").get<std::string>(), p),
                             vector_from_json(pj.at("gamma")), {clip[0], clip[1]}, pj.at("ridge").get<double>());
    earl::OutcomeModel q(earl::FeatureMap::parse(qj.at("map").get<std::string>(), p), vector_from_json(qj.at("theta")));
    LoadedModel m{{pi, q}, {}};
    if (j.at("rule_type").get<std::string>() == "argmax")
      m.rule = earl::TreatmentRule(q);
    else
      m.rule = earl::TreatmentRule(earl::LinearRule(earl::FeatureMap::parse(j.at("rule_map").get<std::string>(), p, false),
                                                    j.at("beta0").get<double>(), vector_from_json(j.at("beta"))));
    return m;
  } catch (const json::exception& e) {
    throw earl::ConfigError("malformed model file '" + path + "': " + e.what());
  }
}

int cmd_evaluate(const RunConfig& c) {
  const earl::Dataset data = read_data(c);
  if (c.model.empty()) throw earl::ConfigError("--model is required");
  const LoadedModel m = load_model(c.model, data.p());
  json out{{"n", data.n()}, {"estimates", estimates_json(data, m.rule.decisions(data.X()), m.nuisance)}};
  write_atomically(c.out, out.dump(2) + "\n");
  return 0;
}

int cmd_simulate(const RunConfig& c) {
  earl::ExperimentConfig e;
  e.scenarios = c.scenarios;
  e.specs.clear();
  for (const auto& s : c.specs) e.specs.push_back(earl::parse_spec(s));
  e.methods.clear();
  for (const auto& m : c.methods) e.methods.push_back(earl::parse_method_spec(m));
  e.n_grid = c.n_grid;
  e.replicates = c.replicates;
  e.seed = c.seed;
  e.validation_draws = c.validation_draws;
  e.earl = make_earl_config(c, 10);
  e.earl.rule_map.reset();
  e.select_lambda = c.select_lambda;
  e.crossfit = c.crossfit;
  e.search = make_search_config(c, 10);
  e.search.rule_map.reset();
  e.ridge = c.ridge;
  e.clip = make_clip(c);
  e.record_time = c.timing;
  const auto rows = earl::run_experiment(e);
  std::ostringstream out;
  earl::write_results_csv(rows, out, c.timing);
  write_atomically(c.out, out.str());
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.failed;
  if (failed) std::cerr << "warning: " << failed << " replicate fits failed (value NA)\n";
  return 0;
}

int cmd_permtest(const RunConfig& c) {
  const earl::Dataset data = read_data(c);
  const earl::EarlConfig ec = make_earl_config(c, data.p());
  const auto pipeline = earl::make_earl_pipeline(make_nuisance_spec(c, data.p()), ec, c.select_lambda);
  earl::PermutationReport rep;
  if (c.covariate > 0) {
    const auto e = earl::permutation_test(data, pipeline, static_cast<std::size_t>(c.covariate - 1),
                                          c.permutations, c.seed, ec.threads);
    rep.intercept = pipeline(data).beta0();
    rep.permutations = c.permutations;
    rep.entries.push_back(e);
  } else {
    rep = earl::permutation_report(data, pipeline, c.permutations, c.seed, ec.threads);
  }
  std::ostringstream out;
  earl::write_permutation_report(rep, out);
  write_atomically(c.out, out.str());
  return 0;
}

std::optional<std::string> find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

void add_common(CLI::App* cmd, RunConfig& c, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON config; flags override its values");
  cmd->add_option("--out", c.out, "Output path ('-' for stdout)");
  cmd->add_option("--seed", c.seed, "Random seed (default: $EARL_SEED or 0)");
  cmd->add_option("--threads", c.threads, "Worker threads; results do not depend on it");
}

void add_estimator(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--loss", c.loss, "hinge | exp | logistic | sqhinge");
  cmd->add_option("--lambda", c.lambda, "Penalty weight");
  cmd->add_option("--select-lambda", c.select_lambda, "Choose lambda by cross-validated value")->expected(0, 1)
      ->default_str("true");
  cmd->add_option("--crossfit", c.crossfit, "Use K-fold sample splitting")->expected(0, 1)->default_str("true");
  cmd->add_option("--folds", c.folds, "K for sample splitting");
  cmd->add_option("--cv-folds", c.cv_folds, "Cross-validation folds");
  cmd->add_option("--lambda-grid", c.lambda_grid, "Candidate lambdas")->delimiter(',');
  cmd->add_option("--tolerance", c.tolerance, "Gradient-norm tolerance");
  cmd->add_option("--max-iterations", c.max_iterations, "Newton iteration cap");
  cmd->add_option("--hinge-iterations", c.hinge_iterations, "Subgradient iteration cap");
  cmd->add_option("--rule-map", c.rule_map, "Feature map of the rule");
  cmd->add_option("--propensity-map", c.propensity_map, "Feature map of the propensity model");
  cmd->add_option("--outcome-map", c.outcome_map, "Feature map of the outcome model");
  cmd->add_option("--ridge", c.ridge, "Propensity ridge penalty");
  cmd->add_option("--clip", c.clip, "Propensity clip lo,hi")->delimiter(',')->expected(2);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const earl::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const earl::NumericalError*>(&e)) return 4;
  if (dynamic_cast<const earl::Error*>(&e)) return 3;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig c;
  std::string config_path;
  if (const char* env = std::getenv("EARL_SEED")) {
    try {
      c.seed = std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "error: EARL_SEED must be a nonnegative integer\n";
      return 2;
    }
  }
  try {
    if (auto path = find_config_path(argc, argv)) {
      std::ifstream in(*path);
      if (!in) throw earl::ConfigError("cannot open config '" + *path + "'");
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw earl::ConfigError("config '" + *path + "' is not valid JSON: " + e.what());
      }
      apply_json(c, j);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }

  CLI::App app{"Individualized treatment rules by efficient augmentation and relaxation learning"};
  app.require_subcommand(1);

  auto* fit = app.add_subcommand("fit", "Fit a treatment rule from a CSV file");
  add_common(fit, c, config_path);
  add_estimator(fit, c);
  fit->add_option("--data", c.data, "Input CSV (y,a,x1..xp)");
  fit->add_option("--method", c.method, "earl | qlearning | owl | aipwe");
  fit->add_option("--population", c.population);
  fit->add_option("--generations", c.generations);
  fit->add_option("--mutation-sd", c.mutation_sd);
  fit->add_option("--tournament", c.tournament);

  auto* evaluate = app.add_subcommand("evaluate", "Value estimates of a fitted rule");
  add_common(evaluate, c, config_path);
  evaluate->add_option("--data", c.data, "Input CSV (y,a,x1..xp)");
  evaluate->add_option("--model", c.model, "Model JSON written by 'fit'");

  auto* simulate = app.add_subcommand("simulate", "Run the simulation benchmark grid");
  add_common(simulate, c, config_path);
  add_estimator(simulate, c);
  simulate->add_option("--scenarios", c.scenarios)->delimiter(',');
  simulate->add_option("--specs", c.specs)->delimiter(',');
  simulate->add_option("--methods", c.methods, "e.g. earl-logistic,qlearning,owl,aipwe")->delimiter(',');
  simulate->add_option("--n", c.n_grid, "Training sizes")->delimiter(',');
  simulate->add_option("--replicates", c.replicates);
  simulate->add_option("--validation-draws", c.validation_draws);
  simulate->add_option("--timing", c.timing, "Record wall time per fit")->expected(0, 1)->default_str("true");
  simulate->add_option("--population", c.population);
  simulate->add_option("--generations", c.generations);
  simulate->add_option("--mutation-sd", c.mutation_sd);
  simulate->add_option("--tournament", c.tournament);

  auto* permtest = app.add_subcommand("permtest", "Permutation p-values for rule coefficients");
  add_common(permtest, c, config_path);
  add_estimator(permtest, c);
  permtest->add_option("--data", c.data, "Input CSV (y,a,x1..xp)");
  permtest->add_option("--permutations", c.permutations, "Permutations per covariate");
  permtest->add_option("--covariate", c.covariate, "1-based covariate to test (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*fit) return cmd_fit(c);
    if (*evaluate) return cmd_evaluate(c);
    if (*simulate) {
      if (c.out.empty()) throw earl::ConfigError("--out is required");
      return cmd_simulate(c);
    }
    if (*permtest) return cmd_permtest(c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 2;
}

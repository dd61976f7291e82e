// mixforge: command-line front end for the UHPC property-prediction pipeline.
// Exit codes: 0 ok, 1 domain error, 2 usage error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mixforge/baselines.hpp"
#include "mixforge/data.hpp"
#include "mixforge/error.hpp"
#include "mixforge/explain.hpp"
#include "mixforge/gbtree.hpp"
#include "mixforge/log.hpp"
#include "mixforge/pipeline.hpp"
#include "mixforge/preprocess.hpp"
#include "mixforge/service.hpp"
#include "mixforge/tune.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mixforge;

namespace {

struct Common {
  std::string config;
  std::string schema;
  std::string out;
  std::vector<std::string> params;
  std::optional<std::uint64_t> seed;
  bool strict = false;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
}

json read_json(const fs::path& p) {
  const std::string text = read_file(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::pair<std::string, std::string> split_assignment(const std::string& text, const char* flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError(std::string(flag) + " expects NAME=VALUE, got '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

// defaults < --config file < --param overrides < --seed
PipelineConfig resolve_config(const Common& c, json* resolved_doc = nullptr) {
  json doc = json::object();
  if (!c.config.empty()) doc = read_json(c.config);
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& p : c.params) {
    auto [key, raw] = split_assignment(p, "--param");
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    doc[json::json_pointer(pointer)] = value;
  }
  if (c.seed) doc["seed"] = *c.seed;
  PipelineConfig cfg = PipelineConfig::from_json(doc);
  if (resolved_doc) *resolved_doc = cfg.to_json();
  return cfg;
}

std::shared_ptr<const FeatureSchema> load_schema(const Common& c) {
  if (c.schema.empty()) return std::make_shared<const FeatureSchema>(FeatureSchema::uhpc());
  return std::make_shared<const FeatureSchema>(FeatureSchema::from_json(read_json(c.schema)));
}

fs::path out_dir(const Common& c, const char* fallback) { return c.out.empty() ? fs::path(fallback) : fs::path(c.out); }

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                    const PipelineConfig& cfg, json extra = json::object()) {
  const auto seeds = PipelineSeeds::from(cfg.seed);
  json manifest = {{"command", command},
                   {"argv", argv},
                   {"created_at", timestamp()},
                   {"config", cfg.to_json()},
                   {"seeds", {{"root", seeds.root}, {"split", seeds.split}, {"forest", seeds.forest}}}};
  manifest.update(extra);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

FeatureValues parse_features(const std::vector<std::string>& sets, const std::string& input_path) {
  FeatureValues values;
  if (!input_path.empty()) {
    json doc = read_json(input_path);
    if (doc.contains("features")) doc = doc.at("features");
    for (const auto& [k, v] : doc.items()) {
      if (!v.is_number()) throw ParseError("feature '" + k + "' must be a number");
      values[k] = v.get<double>();
    }
  }
  for (const auto& s : sets) {
    auto [name, raw] = split_assignment(s, "--set");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(raw, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != raw.size()) throw UsageError("--set " + name + ": '" + raw + "' is not a number");
    values[name] = v;
  }
  return values;
}

void add_common(CLI::App* sub, Common& c, bool with_out = true) {
  sub->add_option("--config", c.config, "JSON config file (flags override file values)")->check(CLI::ExistingFile);
  sub->add_option("--schema", c.schema, "JSON schema file (default: built-in UHPC schema)")->check(CLI::ExistingFile);
  sub->add_option("--param", c.params, "Config override KEY=VALUE; dotted keys reach nested fields")
      ->take_all();
  sub->add_option("--seed", c.seed, "Root seed for every random component");
  if (with_out) sub->add_option("--out", c.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixforge: tabular gradient-boosted property prediction for UHPC mixtures"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mixforge 0.1.0");
  const std::vector<std::string> args(argv, argv + argc);

  Common c;
  std::string data_path, train_path, test_path, target, bundle_path, input_path, external_path, host = "127.0.0.1";
  std::vector<std::string> sets, kinds;
  double fraction = 0.7, rmse_max = 30.0, r2_min = 0.18;
  std::optional<double> threshold, contamination;
  std::optional<std::size_t> trials, folds;
  int port = 8080;
  bool all_targets = false;

  auto* validate = app.add_subcommand("validate", "Check a CSV against the schema");
  validate->add_option("--data", data_path, "CSV file")->required()->check(CLI::ExistingFile);
  validate->add_flag("--strict", c.strict, "Treat out-of-range values as errors");
  add_common(validate, c, false);

  auto* split_cmd = app.add_subcommand("split", "Seeded train/test split");
  split_cmd->add_option("--data", data_path, "CSV file")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--fraction", fraction, "Training fraction")->check(CLI::Range(0.0, 1.0));
  add_common(split_cmd, c);

  auto* preselect_cmd = app.add_subcommand("preselect", "Train the baseline zoo and apply the selection gate");
  preselect_cmd->add_option("--data", data_path, "CSV file (split with --fraction)")->check(CLI::ExistingFile);
  preselect_cmd->add_option("--train", train_path, "Training CSV")->check(CLI::ExistingFile);
  preselect_cmd->add_option("--test", test_path, "Test CSV")->check(CLI::ExistingFile);
  preselect_cmd->add_option("--target", target, "Target column or alias");
  preselect_cmd->add_option("--kinds", kinds, "Baseline kinds (default: all)")->delimiter(',');
  preselect_cmd->add_option("--external", external_path, "JSON array of externally measured rows")
      ->check(CLI::ExistingFile);
  preselect_cmd->add_option("--rmse-max", rmse_max, "Gate: test RMSE must be below this");
  preselect_cmd->add_option("--r2-min", r2_min, "Gate: test R2 must be above this");
  preselect_cmd->add_option("--fraction", fraction, "Training fraction when splitting --data");
  add_common(preselect_cmd, c);

  auto* tune_cmd = app.add_subcommand("tune", "Random search with k-fold cross-validation");
  tune_cmd->add_option("--data", data_path, "Training CSV")->required()->check(CLI::ExistingFile);
  tune_cmd->add_option("--target", target, "Target column or alias")->required();
  tune_cmd->add_option("--trials", trials, "Number of sampled configurations");
  tune_cmd->add_option("--folds", folds, "k for k-fold CV");
  add_common(tune_cmd, c);

  auto* train_cmd = app.add_subcommand("train", "Fit one gradient-boosted model (config key 'gbt')");
  train_cmd->add_option("--data", data_path, "Training CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--test", test_path, "Optional test CSV for metrics")->check(CLI::ExistingFile);
  train_cmd->add_option("--target", target, "Target column or alias")->required();
  add_common(train_cmd, c);

  auto* clean_cmd = app.add_subcommand("clean", "Correlation pruning and isolation-forest outlier removal");
  clean_cmd->add_option("--data", data_path, "CSV file")->required()->check(CLI::ExistingFile);
  clean_cmd->add_option("--threshold", threshold, "Prune pairs with |r| above this");
  clean_cmd->add_option("--contamination", contamination, "Fraction of rows removed as outliers");
  add_common(clean_cmd, c);

  auto* explain_cmd = app.add_subcommand("explain", "SHAP importance ranking of a bundle's models");
  explain_cmd->add_option("--bundle", bundle_path, "Bundle JSON")->required()->check(CLI::ExistingFile);
  explain_cmd->add_option("--data", data_path, "Rows to explain (CSV)")->required()->check(CLI::ExistingFile);
  explain_cmd->add_option("--target", target, "Target (default: every bundled target)");
  add_common(explain_cmd, c);

  auto* pipeline_cmd = app.add_subcommand("pipeline", "Stage 1 + Stage 2 end to end; writes a bundle");
  pipeline_cmd->add_option("--data", data_path, "CSV file")->required()->check(CLI::ExistingFile);
  add_common(pipeline_cmd, c);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Out-of-set percentage errors of a bundle");
  evaluate_cmd->add_option("--bundle", bundle_path, "Bundle JSON")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--data", data_path, "Held-out CSV")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--target", target, "Target (default: every bundled target)");
  add_common(evaluate_cmd, c);

  auto* predict_cmd = app.add_subcommand("predict", "Predict every bundled target for one mixture");
  predict_cmd->add_option("--bundle", bundle_path, "Bundle JSON")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--set", sets, "Feature value NAME=VALUE (repeatable)")->take_all();
  predict_cmd->add_option("--input", input_path, "JSON object of feature values")->check(CLI::ExistingFile);
  predict_cmd->add_flag("--all-targets", all_targets, "Also print Model 1 predictions");
  add_common(predict_cmd, c);

  auto* serve_cmd = app.add_subcommand("serve", "HTTP JSON API over a bundle");
  serve_cmd->add_option("--bundle", bundle_path, "Bundle JSON")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));
  serve_cmd->add_flag("--strict", c.strict, "Reject out-of-range inputs (default: warn)");
  add_common(serve_cmd, c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    json resolved;
    const PipelineConfig cfg = resolve_config(c, &resolved);
    const auto schema = load_schema(c);
    auto load = [&](const std::string& path) { return load_dataset(path, schema, c.strict); };
    auto resolve_target = [&](const FeatureSchema& s) {
      if (target.empty()) throw UsageError("--target is required");
      return s.resolve_target(target);
    };

    if (*validate) {
      const Dataset data = load(data_path);
      json out_of_range = json::object();
      for (std::size_t col = 0; col < data.cols(); ++col) {
        const ColumnSpec& spec = data.schema().column(col);
        std::size_t n = 0;
        for (std::size_t r = 0; r < data.rows(); ++r) n += spec.in_range(data.at(r, col)) ? 0 : 1;
        if (n) out_of_range[spec.name] = n;
      }
      std::cout << json{{"file", data_path},
                        {"rows", data.rows()},
                        {"columns", data.cols()},
                        {"schema_version", data.schema().version()},
                        {"out_of_range", out_of_range}}
                       .dump(2)
                << "\n";
      if (!c.out.empty()) write_manifest(c.out, "validate", args, cfg);
      return 0;
    }

    if (*split_cmd) {
      const fs::path dir = out_dir(c, "split");
      const auto [train, test] = split(load(data_path), fraction, PipelineSeeds::from(cfg.seed).split);
      write_dataset(train, dir / "train.csv");
      write_dataset(test, dir / "test.csv");
      write_manifest(dir, "split", args, cfg, {{"train_rows", train.rows()}, {"test_rows", test.rows()}});
      std::cout << "train " << train.rows() << " rows, test " << test.rows() << " rows -> " << dir.string() << "\n";
      return 0;
    }

    if (*preselect_cmd) {
      const fs::path dir = out_dir(c, "preselect");
      std::vector<LabeledReport> external;
      if (!external_path.empty()) external = load_external_reports(read_json(external_path));
      PreselectReport report;
      const SelectionGate gate{rmse_max, r2_min};
      if (data_path.empty() && train_path.empty()) {
        if (external.empty()) throw UsageError("preselect needs --data, --train/--test or --external");
        report = preselect_reports(external, gate);
      } else {
        auto parts = [&]() -> std::pair<Dataset, Dataset> {
          if (!data_path.empty()) return split(load(data_path), fraction, PipelineSeeds::from(cfg.seed).split);
          if (train_path.empty() || test_path.empty()) throw UsageError("--train and --test go together");
          return {load(train_path), load(test_path)};
        };
        const auto [train, test] = parts();
        std::vector<BaselineKind> ks;
        for (const auto& k : kinds) ks.push_back(parse_baseline_kind(k));
        if (ks.empty()) ks = all_baseline_kinds();
        report = preselect(train, test, resolve_target(*schema), ks, gate, BaselineParams{}, cfg.seed, external);
      }
      write_file(dir / "preselect.csv", report.to_csv());
      write_file(dir / "preselect.json", report.to_json().dump(2) + "\n");
      write_manifest(dir, "preselect", args, cfg);
      std::cout << report.to_table();
      return 0;
    }

    if (*tune_cmd) {
      const fs::path dir = out_dir(c, "tune");
      const Dataset data = load(data_path);
      const std::string t = resolve_target(*schema);
      SearchOptions opts;
      opts.n_trials = trials.value_or(cfg.n_trials);
      opts.k = folds.value_or(cfg.k);
      opts.seed = cfg.seed;
      opts.threads = cfg.threads;
      opts.base = cfg.base;
      const auto inputs = schema->input_names();
      const auto result = random_search(cfg.space, TuningData::from(data, t, inputs), opts);
      write_file(dir / "trials.jsonl", result.trial_log());
      write_file(dir / "best.json", result.best.to_json().dump(2) + "\n");
      write_manifest(dir, "tune", args, cfg);
      std::cout << "best trial " << result.best.index << ": mean CV RMSE " << result.best.mean_rmse << "\n"
                << result.best.config.to_json().dump(2) << "\n";
      return 0;
    }

    if (*train_cmd) {
      const fs::path dir = out_dir(c, "train");
      const Dataset train = load(data_path);
      const std::string t = resolve_target(*schema);
      GbtConfig gc = cfg.base;
      gc.seed = cfg.seed;
      const Ensemble model = fit_gbt(train, t, gc);
      json metrics = {{"train", evaluate(train.column(t), model.predict(train.extract(model.features))).to_json()}};
      if (!test_path.empty()) {
        const Dataset test = load(test_path);
        metrics["test"] = evaluate(test.column(t), model.predict(test.extract(model.features))).to_json();
      }
      write_file(dir / "model.json", model.to_json().dump() + "\n");
      write_file(dir / "metrics.json", metrics.dump(2) + "\n");
      write_manifest(dir, "train", args, cfg);
      std::cout << metrics.dump(2) << "\n";
      return 0;
    }

    if (*clean_cmd) {
      const fs::path dir = out_dir(c, "clean");
      const Dataset data = load(data_path);
      const auto inputs = data.schema().input_names();
      const auto corr = correlation_matrix(data, inputs);
      const auto prune = prune_multicollinear(corr, threshold.value_or(cfg.prune_threshold), cfg.keep_overrides);
      const double frac = contamination.value_or(cfg.contamination);
      const auto forest = fit_isolation_forest(data, prune.kept, cfg.isolation_trees,
                                               std::min(cfg.isolation_subsample, data.rows()),
                                               PipelineSeeds::from(cfg.seed).forest);
      const auto filtered = filter_outliers(data, score_anomalies(forest, data), frac);
      std::ostringstream audit;
      audit << "rank,row_id,score\n";
      for (std::size_t i = 0; i < filtered.removed.size(); ++i) {
        audit << i + 1 << ',' << filtered.removed[i] << ',' << json(filtered.removed_scores[i]).dump() << '\n';
      }
      write_file(dir / "correlation.csv", corr.to_csv());
      write_file(dir / "pruning.json", prune.to_json().dump(2) + "\n");
      write_file(dir / "audit.csv", audit.str());
      write_dataset(filtered.kept, dir / "cleaned.csv");
      write_manifest(dir, "clean", args, cfg);
      std::cout << "dropped " << prune.dropped.size() << " correlated column(s), removed " << filtered.removed.size()
                << " of " << data.rows() << " rows -> " << dir.string() << "\n";
      return 0;
    }

    if (*pipeline_cmd) {
      const fs::path dir = out_dir(c, "run");
      const Dataset data = load(data_path);
      const auto start = std::chrono::steady_clock::now();
      const PipelineRun run = run_pipeline(data, cfg);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      save_bundle(run.bundle, dir / "bundle.json");
      write_file(dir / "trials.jsonl", run.trials_jsonl);
      write_file(dir / "audit.csv", run.audit_csv);
      json report = run.report;
      report["seconds"] = seconds;
      write_file(dir / "report.json", report.dump(2) + "\n");
      write_manifest(dir, "pipeline", args, cfg, {{"data", data_path}, {"rows", data.rows()}});
      for (const auto& e : run.bundle.entries) {
        std::cout << e.target << ": test RMSE " << e.metrics1.test.rmse << " -> " << e.metrics2.test.rmse
                  << ", R2 " << e.metrics1.test.r2.value_or(NAN) << " -> " << e.metrics2.test.r2.value_or(NAN)
                  << "\n";
      }
      std::cout << "wrote " << dir.string() << " in " << seconds << " s\n";
      return 0;
    }

    // Remaining subcommands read a bundle.
    const ModelBundle bundle = load_bundle(bundle_path);
    std::vector<std::string> targets = bundle.targets();
    if (!target.empty()) targets = {bundle.entry(target).target};

    if (*predict_cmd) {
      const FeatureValues values = parse_features(sets, input_path);
      json out = json::object();
      for (const auto& t : targets) {
        const auto& e = bundle.entry(t);
        json item = {{"value", bundle.predict(t, values)}, {"unit", e.unit}, {"features_used", e.model2.features}};
        if (all_targets) item["model1"] = e.model1.predict_row(bundle.model_row(e.model1, values));
        out[t] = item;
      }
      std::cout << json{{"predictions", out}}.dump(2) << "\n";
      if (!c.out.empty()) write_manifest(c.out, "predict", args, cfg);
      return 0;
    }

    if (*evaluate_cmd) {
      const fs::path dir = out_dir(c, "evaluate");
      const Dataset data = load(data_path);
      json summary = json::array();
      for (const auto& t : targets) {
        const auto report = validate_out_of_set(bundle, data, t);
        const std::string stem = "evaluate_" + std::to_string(bundle.schema.require_index(t));
        write_file(dir / (stem + ".csv"), report.to_csv());
        write_file(dir / (stem + ".json"), report.to_json().dump(2) + "\n");
        summary.push_back({{"target", t},
                           {"rows", report.rows.size()},
                           {"flagged", report.flagged},
                           {"max_abs_percent_error", report.max_abs_percent_error.value_or(NAN)},
                           {"signed_at_max", report.signed_at_max.value_or(NAN)},
                           {"files", stem}});
      }
      write_manifest(dir, "evaluate", args, cfg);
      std::cout << summary.dump(2) << "\n";
      return 0;
    }

    if (*explain_cmd) {
      const fs::path dir = out_dir(c, "explain");
      const Dataset data = load(data_path);
      const Dataset std_data = apply_standardizer(bundle.standardizer, data);
      json out = json::object();
      for (const auto& t : targets) {
        const auto& e = bundle.entry(t);
        const auto ranking = rank_features(e.model2, std_data.extract(e.model2.features), e.background);
        out[t] = to_json(ranking);
      }
      write_file(dir / "importance.json", out.dump(2) + "\n");
      write_manifest(dir, "explain", args, cfg);
      std::cout << out.dump(2) << "\n";
      return 0;
    }

    if (*serve_cmd) {
      Service service(bundle, ServiceOptions{c.strict});
      service.listen(host, port);
      return 0;
    }
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

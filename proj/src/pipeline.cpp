#include "mixforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include "mixforge/error.hpp"
#include "mixforge/log.hpp"
#include "mixforge/rng.hpp"

namespace mixforge {

namespace {

constexpr const char* kTrialLogName = "trials.jsonl";

const std::vector<std::string> kConfigKeys = {
    "targets",         "train_fraction", "seed",    "prune_threshold", "keep_overrides", "contamination",
    "isolation_trees", "isolation_subsample",        "selection",       "n_trials",       "k",
    "filter_scope",    "retune",         "gbt",     "search_space",    "threads",        "background_rows"};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json matrix_to_json(const FeatureMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"names", m.names}, {"rows", rows}};
}

FeatureMatrix matrix_from_json(const nlohmann::json& doc) {
  FeatureMatrix m;
  m.names = doc.at("names").get<std::vector<std::string>>();
  for (const auto& row : doc.at("rows")) {
    auto v = row.get<std::vector<double>>();
    if (v.size() != m.names.size()) throw ParseError("background row width does not match its column names");
    m.values.insert(m.values.end(), v.begin(), v.end());
    ++m.rows;
  }
  return m;
}

ModelMetrics score(const Ensemble& model, const Dataset& train, const Dataset& test, std::string_view target) {
  const auto& f = model.features;
  ModelMetrics m;
  m.train = evaluate(train.column(target), model.predict(train.extract(f)));
  m.test = evaluate(test.column(target), model.predict(test.extract(f)));
  return m;
}

nlohmann::json metrics_json(const ModelMetrics& m) { return {{"train", m.train.to_json()}, {"test", m.test.to_json()}}; }

ModelMetrics metrics_from_json(const nlohmann::json& doc) {
  return {MetricsReport::from_json(doc.at("train")), MetricsReport::from_json(doc.at("test"))};
}

std::size_t target_slot(const FeatureSchema& schema, const std::string& target) { return schema.require_index(target); }

bool skip_ranking(const SelectionPolicy& p) {
  return p.kind == SelectionPolicyKind::fixed_list || (p.kind == SelectionPolicyKind::bottom_k && p.k == 0) ||
         (p.kind == SelectionPolicyKind::threshold && p.fraction <= 0.0);
}

SearchOptions search_options(const PipelineConfig& config, std::uint64_t seed) {
  SearchOptions opts;
  opts.n_trials = config.n_trials;
  opts.k = config.k;
  opts.seed = seed;
  opts.threads = config.threads;
  opts.base = config.base;
  return opts;
}

}  // namespace

std::string_view to_string(FilterScope scope) { return scope == FilterScope::full ? "full" : "train-only"; }

FilterScope parse_filter_scope(std::string_view text) {
  if (text == "full") return FilterScope::full;
  if (text == "train-only") return FilterScope::train_only;
  throw ConfigError("filter_scope must be 'full' or 'train-only', got '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Config

PipelineConfig PipelineConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("pipeline config must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  PipelineConfig c;
  try {
    if (doc.contains("targets")) c.targets = doc.at("targets").get<std::vector<std::string>>();
    c.train_fraction = doc.value("train_fraction", c.train_fraction);
    c.seed = doc.value("seed", c.seed);
    c.prune_threshold = doc.value("prune_threshold", c.prune_threshold);
    if (doc.contains("keep_overrides")) c.keep_overrides = doc.at("keep_overrides").get<std::vector<std::string>>();
    c.contamination = doc.value("contamination", c.contamination);
    c.isolation_trees = doc.value("isolation_trees", c.isolation_trees);
    c.isolation_subsample = doc.value("isolation_subsample", c.isolation_subsample);
    if (doc.contains("selection")) {
      for (const auto& [target, policy] : doc.at("selection").items()) {
        c.selection[target] = SelectionPolicy::from_json(policy);
      }
    }
    c.n_trials = doc.value("n_trials", c.n_trials);
    c.k = doc.value("k", c.k);
    if (doc.contains("filter_scope")) c.filter_scope = parse_filter_scope(doc.at("filter_scope").get<std::string>());
    c.retune = doc.value("retune", c.retune);
    if (doc.contains("gbt")) {
      nlohmann::json merged = c.base.to_json();
      merged.update(doc.at("gbt"));
      c.base = GbtConfig::from_json(merged);
    }
    if (doc.contains("search_space")) c.space = SearchSpace::from_json(doc.at("search_space"));
    c.threads = doc.value("threads", c.threads);
    c.background_rows = doc.value("background_rows", c.background_rows);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid pipeline config: ") + e.what());
  }
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (!(c.contamination >= 0.0 && c.contamination < 0.5)) throw ConfigError("contamination must lie in [0, 0.5)");
  if (!(c.prune_threshold > 0.0 && c.prune_threshold <= 1.0)) throw ConfigError("prune_threshold must lie in (0, 1]");
  if (c.n_trials == 0) throw ConfigError("n_trials must be at least 1");
  if (c.k < 2) throw ConfigError("k must be at least 2");
  c.base.validate();
  return c;
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json sel = nlohmann::json::object();
  for (const auto& [target, policy] : selection) sel[target] = policy.to_json();
  return {{"targets", targets},
          {"train_fraction", train_fraction},
          {"seed", seed},
          {"prune_threshold", prune_threshold},
          {"keep_overrides", keep_overrides},
          {"contamination", contamination},
          {"isolation_trees", isolation_trees},
          {"isolation_subsample", isolation_subsample},
          {"selection", sel},
          {"n_trials", n_trials},
          {"k", k},
          {"filter_scope", to_string(filter_scope)},
          {"retune", retune},
          {"gbt", base.to_json()},
          {"search_space", space.to_json()},
          {"threads", threads},
          {"background_rows", background_rows}};
}

std::vector<std::string> PipelineConfig::resolved_targets(const FeatureSchema& schema) const {
  if (targets.empty()) return schema.target_names();
  std::vector<std::string> out;
  for (const auto& t : targets) {
    const std::string name = schema.resolve_target(t);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  }
  return out;
}

SelectionPolicy PipelineConfig::policy_for(std::string_view target) const {
  if (auto it = selection.find(target); it != selection.end()) return it->second;
  try {
    return uhpc_default_selection(target);
  } catch (const LookupError&) {
    return SelectionPolicy::bottom(0);
  }
}

PipelineSeeds PipelineSeeds::from(std::uint64_t seed) {
  PipelineSeeds s;
  s.root = seed;
  s.split = derive_seed(seed, 0x5b1);
  s.forest = derive_seed(seed, 0xf0e);
  s.background = derive_seed(seed, 0xb6);
  return s;
}

std::uint64_t PipelineSeeds::search(std::size_t target_index) const { return derive_seed(root, 0x5e00 + target_index); }

// ---------------------------------------------------------------------------
// Stages

Stage1Result run_stage1(const Dataset& data, const PipelineConfig& config) {
  const FeatureSchema& schema = data.schema();
  const auto targets = config.resolved_targets(schema);
  const auto inputs = schema.input_names();
  const auto seeds = PipelineSeeds::from(config.seed);

  Stage1Result out;
  out.standardizer = fit_standardizer(data, inputs);
  const Dataset std_data = apply_standardizer(out.standardizer, data);
  const auto [train, test] = split(std_data, config.train_fraction, seeds.split);
  out.train_ids = train.row_ids();
  out.test_ids = test.row_ids();

  for (const auto& target : targets) {
    log().info("stage 1: tuning '{}' ({} trials x {} folds)", target, config.n_trials, config.k);
    Stage1Entry e;
    e.target = target;
    e.features = inputs;
    const auto td = TuningData::from(train, target, inputs);
    e.search = random_search(config.space, td, search_options(config, seeds.search(target_slot(schema, target))));
    e.model = fit_gbt(train, target, inputs, e.search.best.config);
    e.metrics = score(e.model, train, test, target);
    out.entries.push_back(std::move(e));
  }
  return out;
}

ModelBundle run_stage2(const Dataset& data, const Stage1Result& stage1, const PipelineConfig& config,
                       Stage2Searches* searches) {
  const FeatureSchema& schema = data.schema();
  const auto inputs = schema.input_names();
  const auto seeds = PipelineSeeds::from(config.seed);

  PipelineConfig cfg = config;
  cfg.selection.clear();
  for (const auto& [key, policy] : config.selection) cfg.selection[schema.resolve_target(key)] = policy;

  const Dataset std_data = apply_standardizer(stage1.standardizer, data);
  const Dataset scope =
      config.filter_scope == FilterScope::full ? std_data : std_data.select_ids(stage1.train_ids);

  ModelBundle bundle;
  bundle.schema = schema;
  bundle.standardizer = stage1.standardizer;
  bundle.pruning = prune_multicollinear(correlation_matrix(scope, inputs), config.prune_threshold,
                                        config.keep_overrides);

  std::vector<RowId> removed;
  std::vector<double> removed_scores;
  Dataset cleaned = scope;
  if (config.contamination > 0.0) {
    const std::size_t psi = std::min(config.isolation_subsample, scope.rows());
    const auto forest =
        fit_isolation_forest(scope, bundle.pruning.kept, config.isolation_trees, psi, seeds.forest);
    auto filtered = filter_outliers(scope, score_anomalies(forest, scope), config.contamination);
    removed = std::move(filtered.removed);
    removed_scores = std::move(filtered.removed_scores);
    cleaned = std::move(filtered.kept);
  }

  Dataset train2 = cleaned;
  Dataset test2 = cleaned;
  if (config.filter_scope == FilterScope::full) {
    std::tie(train2, test2) = split(cleaned, config.train_fraction, seeds.split);
  } else {
    test2 = std_data.select_ids(stage1.test_ids);
  }
  const Dataset train1 = std_data.select_ids(stage1.train_ids);
  const Dataset test1 = std_data.select_ids(stage1.test_ids);

  for (const auto& s1 : stage1.entries) {
    const std::string& target = s1.target;
    const std::size_t slot = target_slot(schema, target);
    const SelectionPolicy policy = cfg.policy_for(target);

    std::vector<FeatureImportance> ranking;
    if (!skip_ranking(policy)) {
      const FeatureMatrix x = train2.extract(s1.model.features);
      const FeatureMatrix bg = sample_background(x, config.background_rows, derive_seed(seeds.background, slot));
      const FeatureMatrix rows = sample_background(x, config.background_rows, derive_seed(seeds.background, ~slot));
      ranking = rank_features(s1.model, rows, bg);
    }
    FeatureSelection selection = select_features(target, inputs, ranking, policy);
    std::vector<std::string> features;
    for (const auto& f : selection.included) {
      if (std::find(bundle.pruning.kept.begin(), bundle.pruning.kept.end(), f) != bundle.pruning.kept.end()) {
        features.push_back(f);
      }
    }
    if (features.empty()) throw DataError("feature selection left no inputs for '" + target + "'");
    selection.excluded.clear();
    for (const auto& f : inputs) {
      if (std::find(features.begin(), features.end(), f) == features.end()) selection.excluded.push_back(f);
    }
    selection.included = features;

    GbtConfig config2 = s1.search.best.config;
    std::size_t best2 = s1.search.best.index;
    if (config.retune) {
      log().info("stage 2: tuning '{}' on {} features, {} rows", target, features.size(), train2.rows());
      const auto td = TuningData::from(train2, target, features);
      SearchResult sr = random_search(config.space, td, search_options(config, seeds.search(slot)));
      config2 = sr.best.config;
      best2 = sr.best.index;
      if (searches) searches->emplace_back(target, std::move(sr));
    }

    BundleEntry e;
    e.target = target;
    e.unit = schema.column(target).unit;
    e.selection = std::move(selection);
    e.model1 = s1.model;
    e.metrics1 = score(s1.model, train1, test1, target);
    e.model2 = fit_gbt(train2, target, features, config2);
    e.metrics2 = score(e.model2, train2, test2, target);
    e.removed = removed;
    e.removed_scores = removed_scores;
    e.train1_ids = stage1.train_ids;
    e.test1_ids = stage1.test_ids;
    e.train2_ids = train2.row_ids();
    e.test2_ids = test2.row_ids();
    e.background = sample_background(train2.extract(features), config.background_rows,
                                     derive_seed(seeds.background, slot));
    e.best_trial1 = s1.search.best.index;
    e.best_trial2 = best2;
    e.trial_log = kTrialLogName;
    bundle.entries.push_back(std::move(e));
  }

  nlohmann::json search_seeds = nlohmann::json::object();
  for (const auto& e : bundle.entries) search_seeds[e.target] = seeds.search(target_slot(schema, e.target));
  bundle.metadata = {{"created_at", utc_timestamp()},
                     {"generator", "mixforge"},
                     {"rows", data.rows()},
                     {"filter_scope", to_string(config.filter_scope)},
                     {"seeds",
                      {{"root", seeds.root},
                       {"split", seeds.split},
                       {"forest", seeds.forest},
                       {"background", seeds.background},
                       {"search", search_seeds}}},
                     {"config", config.to_json()}};
  bundle.validate();
  return bundle;
}

PipelineRun run_pipeline(const Dataset& data, const PipelineConfig& config) {
  const Stage1Result s1 = run_stage1(data, config);
  Stage2Searches s2;
  PipelineRun run;
  run.bundle = run_stage2(data, s1, config, &s2);
  run.trials_jsonl = trial_log_lines(s1, s2);
  run.audit_csv = audit_csv(run.bundle);
  run.report = comparison_report(run.bundle);
  return run;
}

std::string trial_log_lines(const Stage1Result& stage1, const Stage2Searches& stage2) {
  std::string out;
  auto emit = [&](const std::string& target, int stage, const SearchResult& sr) {
    for (const auto& t : sr.trials) {
      nlohmann::json j = t.to_json();
      j["target"] = target;
      j["stage"] = stage;
      out += j.dump();
      out += '\n';
    }
  };
  for (const auto& e : stage1.entries) emit(e.target, 1, e.search);
  for (const auto& [target, sr] : stage2) emit(target, 2, sr);
  return out;
}

std::string audit_csv(const ModelBundle& bundle) {
  std::ostringstream os;
  os << "target,rank,row_id,score\n";
  for (const auto& e : bundle.entries) {
    for (std::size_t i = 0; i < e.removed.size(); ++i) {
      nlohmann::json score = e.removed_scores[i];
      os << '"' << e.target << "\"," << i + 1 << ',' << e.removed[i] << ',' << score.dump() << '\n';
    }
  }
  return os.str();
}

nlohmann::json comparison_report(const ModelBundle& bundle) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& e : bundle.entries) {
    const double r1 = e.metrics1.test.rmse, r2 = e.metrics2.test.rmse;
    targets.push_back({{"target", e.target},
                       {"unit", e.unit},
                       {"model1", metrics_json(e.metrics1)},
                       {"model2", metrics_json(e.metrics2)},
                       {"test_rmse_change_percent", r1 > 0.0 ? 100.0 * (r2 - r1) / r1 : 0.0},
                       {"model2_rows", e.train2_ids.size() + e.test2_ids.size()},
                       {"removed_rows", e.removed.size()},
                       {"included", e.selection.included},
                       {"excluded", e.selection.excluded},
                       {"config1", e.model1.config.to_json()},
                       {"config2", e.model2.config.to_json()}});
  }
  return {{"targets", targets},
          {"pruning", bundle.pruning.to_json()},
          {"filter_scope", bundle.metadata.value("filter_scope", std::string("full"))}};
}

// ---------------------------------------------------------------------------
// Bundle

nlohmann::json BundleEntry::to_json() const {
  auto model = [](const Ensemble& m, const ModelMetrics& metrics, std::size_t best, const std::vector<RowId>& tr,
                  const std::vector<RowId>& te) {
    return nlohmann::json{{"ensemble", m.to_json()},
                          {"metrics", metrics_json(metrics)},
                          {"best_trial", best},
                          {"train_ids", tr},
                          {"test_ids", te}};
  };
  return {{"target", target},
          {"unit", unit},
          {"selection", selection.to_json()},
          {"model1", model(model1, metrics1, best_trial1, train1_ids, test1_ids)},
          {"model2", model(model2, metrics2, best_trial2, train2_ids, test2_ids)},
          {"outliers", {{"removed", removed}, {"scores", removed_scores}}},
          {"background", matrix_to_json(background)},
          {"trial_log", trial_log}};
}

BundleEntry BundleEntry::from_json(const nlohmann::json& doc) {
  BundleEntry e;
  e.target = doc.at("target").get<std::string>();
  e.unit = doc.at("unit").get<std::string>();
  e.selection = FeatureSelection::from_json(doc.at("selection"));
  const auto& m1 = doc.at("model1");
  const auto& m2 = doc.at("model2");
  e.model1 = Ensemble::from_json(m1.at("ensemble"));
  e.model2 = Ensemble::from_json(m2.at("ensemble"));
  e.metrics1 = metrics_from_json(m1.at("metrics"));
  e.metrics2 = metrics_from_json(m2.at("metrics"));
  e.best_trial1 = m1.at("best_trial").get<std::size_t>();
  e.best_trial2 = m2.at("best_trial").get<std::size_t>();
  e.train1_ids = m1.at("train_ids").get<std::vector<RowId>>();
  e.test1_ids = m1.at("test_ids").get<std::vector<RowId>>();
  e.train2_ids = m2.at("train_ids").get<std::vector<RowId>>();
  e.test2_ids = m2.at("test_ids").get<std::vector<RowId>>();
  e.removed = doc.at("outliers").at("removed").get<std::vector<RowId>>();
  e.removed_scores = doc.at("outliers").at("scores").get<std::vector<double>>();
  e.background = matrix_from_json(doc.at("background"));
  e.trial_log = doc.value("trial_log", std::string());
  return e;
}

const BundleEntry& ModelBundle::entry(std::string_view target) const {
  std::string name(target);
  try {
    name = schema.resolve_target(target);
  } catch (const LookupError&) {
  }
  for (const auto& e : entries) {
    if (e.target == name) return e;
  }
  throw LookupError("bundle has no model for target '" + std::string(target) + "'");
}

std::vector<std::string> ModelBundle::targets() const {
  std::vector<std::string> out;
  for (const auto& e : entries) out.push_back(e.target);
  return out;
}

std::vector<double> ModelBundle::model_row(const Ensemble& model, const FeatureValues& raw) const {
  std::vector<double> row(model.features.size());
  for (std::size_t i = 0; i < model.features.size(); ++i) {
    const auto& f = model.features[i];
    const auto it = raw.find(f);
    if (it == raw.end()) throw LookupError("missing feature '" + f + "'");
    const auto slot = standardizer.index_of(f);
    row[i] = slot ? (it->second - standardizer.mean[*slot]) / standardizer.sd[*slot] : it->second;
  }
  return row;
}

double ModelBundle::predict(std::string_view target, const FeatureValues& raw) const {
  const auto& m = entry(target).model2;
  return m.predict_row(model_row(m, raw));
}

Attribution ModelBundle::explain(std::string_view target, const FeatureValues& raw) const {
  const auto& e = entry(target);
  return shap_values(e.model2, model_row(e.model2, raw), e.background);
}

void ModelBundle::validate() const {
  for (const auto& e : entries) {
    const auto& cols = schema.columns();
    const auto idx = schema.index_of(e.target);
    if (!idx || cols[*idx].kind != ColumnKind::target) {
      throw SchemaError("bundle entry '" + e.target + "' is not a target of the schema");
    }
    for (const auto& f : e.model2.features) {
      if (std::find(e.selection.included.begin(), e.selection.included.end(), f) == e.selection.included.end()) {
        throw SchemaError("model for '" + e.target + "' uses '" + f + "', which its selection excludes");
      }
    }
    for (const Ensemble* m : {&e.model1, &e.model2}) {
      for (const auto& f : m->features) {
        if (!standardizer.index_of(f)) throw SchemaError("no standardization parameters for '" + f + "'");
      }
    }
    if (e.background.names != e.model2.features) {
      throw SchemaError("background columns of '" + e.target + "' do not match its model");
    }
    if (e.removed.size() != e.removed_scores.size()) throw SchemaError("outlier audit is inconsistent");
  }
}

nlohmann::json ModelBundle::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : entries) list.push_back(e.to_json());
  return {{"format_version", format_version},
          {"schema", schema.to_json()},
          {"standardizer", standardizer.to_json()},
          {"pruning", pruning.to_json()},
          {"entries", list},
          {"metadata", metadata}};
}

ModelBundle ModelBundle::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("format_version")) throw ParseError("not a model bundle: no format_version");
  const int version = doc.at("format_version").get<int>();
  if (version > kFormatVersion) {
    throw VersionError("bundle format version " + std::to_string(version) + " is newer than supported version " +
                       std::to_string(kFormatVersion));
  }
  if (version < 1) throw VersionError("bundle format version " + std::to_string(version) + " is not supported");
  ModelBundle b;
  b.format_version = version;
  b.schema = FeatureSchema::from_json(doc.at("schema"));
  b.standardizer = StandardizationParams::from_json(doc.at("standardizer"));
  b.pruning = PruneResult::from_json(doc.at("pruning"));
  for (const auto& e : doc.at("entries")) b.entries.push_back(BundleEntry::from_json(e));
  b.metadata = doc.value("metadata", nlohmann::json::object());
  b.validate();
  return b;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << bundle.to_json().dump(1) << '\n';
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

ModelBundle parse_bundle(std::string_view text, std::string_view source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string(source) + ": " + e.what());
  }
  try {
    return ModelBundle::from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string(source) + ": malformed bundle: " + e.what());
  }
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open bundle '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_bundle(ss.str(), path.string());
}

// ---------------------------------------------------------------------------
// Out-of-set validation

OutOfSetReport percent_errors(std::span<const RowId> ids, std::span<const double> actual,
                              std::span<const double> predicted) {
  if (ids.size() != actual.size() || actual.size() != predicted.size()) {
    throw DataError("percent_errors: length mismatch");
  }
  OutOfSetReport r;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    OutOfSetRow row{ids[i], actual[i], predicted[i], std::nullopt};
    if (std::abs(actual[i]) < kPmaeZeroTolerance) {
      ++r.flagged;
    } else {
      const double pe = 100.0 * (predicted[i] - actual[i]) / actual[i];
      row.percent_error = pe;
      if (!r.max_abs_percent_error || std::abs(pe) > *r.max_abs_percent_error) {
        r.max_abs_percent_error = std::abs(pe);
        r.signed_at_max = pe;
      }
    }
    r.rows.push_back(row);
  }
  if (!actual.empty()) r.metrics = evaluate(actual, predicted);
  return r;
}

OutOfSetReport validate_out_of_set(const ModelBundle& bundle, const Dataset& data, std::string_view target) {
  const auto& e = bundle.entry(target);
  const auto& model = e.model2;
  std::vector<std::size_t> slots;
  for (const auto& f : model.features) slots.push_back(data.schema().require_index(f));
  const auto y = data.column(e.target);
  std::vector<double> pred(data.rows());
  for (std::size_t r = 0; r < data.rows(); ++r) {
    FeatureValues raw;
    for (std::size_t i = 0; i < slots.size(); ++i) raw[model.features[i]] = data.at(r, slots[i]);
    pred[r] = model.predict_row(bundle.model_row(model, raw));
  }
  OutOfSetReport report = percent_errors(data.row_ids(), y, pred);
  report.target = e.target;
  return report;
}

nlohmann::json OutOfSetReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"row_id", r.row_id},
                         {"actual", r.actual},
                         {"predicted", r.predicted},
                         {"percent_error", r.percent_error ? nlohmann::json(*r.percent_error) : nlohmann::json()}});
  }
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  return {{"target", target},
          {"rows", rows_json},
          {"flagged", flagged},
          {"max_abs_percent_error", opt(max_abs_percent_error)},
          {"signed_at_max", opt(signed_at_max)},
          {"metrics", rows.empty() ? nlohmann::json() : metrics.to_json()}};
}

std::string OutOfSetReport::to_csv() const {
  std::ostringstream os;
  os << "row_id,actual,predicted,percent_error\n";
  for (const auto& r : rows) {
    os << r.row_id << ',' << nlohmann::json(r.actual).dump() << ',' << nlohmann::json(r.predicted).dump() << ','
       << (r.percent_error ? nlohmann::json(*r.percent_error).dump() : std::string("flagged")) << '\n';
  }
  return os.str();
}

}  // namespace mixforge

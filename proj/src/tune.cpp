#include "mixforge/tune.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "mixforge/error.hpp"
#include "mixforge/log.hpp"
#include "mixforge/metrics.hpp"

namespace mixforge {

// ---------------------------------------------------------------------------
// Search space

SearchSpace::SearchSpace(std::vector<SearchDimension> dims) : dims_(std::move(dims)) {
  static const std::vector<std::string> known = {"learning_rate", "max_depth", "subsample",
                                                 "colsample_bytree", "lambda_l1", "lambda_l2",
                                                 "max_bin", "min_child_weight", "gamma", "n_rounds"};
  for (const auto& d : dims_) {
    if (std::find(known.begin(), known.end(), d.name) == known.end()) {
      throw ConfigError("unknown search dimension '" + d.name + "'");
    }
    if (!(d.lower < d.upper)) throw ConfigError("search dimension '" + d.name + "' needs lower < upper");
    if (d.log_scale && d.lower <= 0.0) throw ConfigError("log-scale dimension '" + d.name + "' needs lower > 0");
  }
}

SearchSpace SearchSpace::gbt_default() {
  return SearchSpace({
      {"learning_rate", 0.01, 0.3, false, false},
      {"max_depth", 2, 20, true, false},
      {"subsample", 0.5, 1.0, false, false},
      {"colsample_bytree", 0.5, 1.0, false, false},
      {"lambda_l1", 0.05, 1.0, false, false},
      {"lambda_l2", 0.05, 1.0, false, false},
      {"max_bin", 10, 2000, true, false},
      {"min_child_weight", 1, 10, true, false},
      {"gamma", 0.0, 0.9, false, false},
  });
}

namespace {

void assign(GbtConfig& c, const std::string& name, double v) {
  if (name == "learning_rate") c.learning_rate = v;
  else if (name == "max_depth") c.max_depth = static_cast<int>(v);
  else if (name == "subsample") c.subsample = v;
  else if (name == "colsample_bytree") c.colsample_bytree = v;
  else if (name == "lambda_l1") c.lambda_l1 = v;
  else if (name == "lambda_l2") c.lambda_l2 = v;
  else if (name == "max_bin") c.max_bin = static_cast<int>(v);
  else if (name == "min_child_weight") c.min_child_weight = v;
  else if (name == "gamma") c.gamma = v;
  else if (name == "n_rounds") c.n_rounds = static_cast<int>(v);
}

double read(const GbtConfig& c, const std::string& name) {
  if (name == "learning_rate") return c.learning_rate;
  if (name == "max_depth") return c.max_depth;
  if (name == "subsample") return c.subsample;
  if (name == "colsample_bytree") return c.colsample_bytree;
  if (name == "lambda_l1") return c.lambda_l1;
  if (name == "lambda_l2") return c.lambda_l2;
  if (name == "max_bin") return c.max_bin;
  if (name == "min_child_weight") return c.min_child_weight;
  if (name == "gamma") return c.gamma;
  if (name == "n_rounds") return c.n_rounds;
  return 0.0;
}

}  // namespace

GbtConfig SearchSpace::sample(Rng& rng, const GbtConfig& base) const {
  GbtConfig c = base;
  for (const auto& d : dims_) {
    double v;
    if (d.integer) {
      // uniform over the integers in [lower, upper]
      const auto lo = static_cast<long long>(std::ceil(d.lower));
      const auto hi = static_cast<long long>(std::floor(d.upper));
      if (d.log_scale) {
        v = std::round(std::exp(rng.uniform(std::log(d.lower), std::log(d.upper))));
      } else {
        v = static_cast<double>(lo + static_cast<long long>(rng.index(static_cast<std::size_t>(hi - lo + 1))));
      }
      v = std::clamp(v, static_cast<double>(lo), static_cast<double>(hi));
    } else if (d.log_scale) {
      v = std::exp(rng.uniform(std::log(d.lower), std::log(d.upper)));
    } else {
      v = rng.uniform(d.lower, d.upper);
    }
    assign(c, d.name, v);
  }
  return c;
}

bool SearchSpace::contains(const GbtConfig& config) const {
  return std::all_of(dims_.begin(), dims_.end(), [&](const SearchDimension& d) {
    const double v = read(config, d.name);
    return v >= d.lower && v <= d.upper;
  });
}

nlohmann::json SearchSpace::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : dims_) {
    arr.push_back({{"name", d.name}, {"lower", d.lower}, {"upper", d.upper}, {"integer", d.integer}, {"log", d.log_scale}});
  }
  return arr;
}

SearchSpace SearchSpace::from_json(const nlohmann::json& doc) {
  std::vector<SearchDimension> dims;
  for (const auto& d : doc) {
    dims.push_back({d.at("name").get<std::string>(), d.at("lower").get<double>(), d.at("upper").get<double>(),
                    d.value("integer", false), d.value("log", false)});
  }
  return SearchSpace(std::move(dims));
}

// ---------------------------------------------------------------------------
// Folds and cross-validation

std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  if (k > n) throw ConfigError("k-fold: k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> folds(k);
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return folds;
}

TuningData TuningData::from(const Dataset& data, std::string_view target, std::span<const std::string> features) {
  const auto t = data.schema().require_index(target);
  if (data.schema().column(t).kind != ColumnKind::target) {
    throw ConfigError("'" + std::string(target) + "' is not a target column");
  }
  return {data.extract(features), data.column(t)};
}

namespace {

FeatureMatrix take_rows(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  FeatureMatrix out;
  out.names = x.names;
  out.rows = rows.size();
  out.values.reserve(rows.size() * x.cols());
  for (auto r : rows) {
    const auto row = x.row(r);
    out.values.insert(out.values.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace

TrialResult cross_validate(const GbtConfig& config, const TuningData& data,
                           const std::vector<std::vector<std::size_t>>& folds) {
  TrialResult result;
  result.config = config;
  result.seed = config.seed;
  try {
    const std::size_t n = data.x.rows;
    std::vector<int> fold_of(n, -1);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      for (auto r : folds[f]) fold_of.at(r) = static_cast<int>(f);
    }
    for (std::size_t f = 0; f < folds.size(); ++f) {
      std::vector<std::size_t> train_rows;
      for (std::size_t r = 0; r < n; ++r) {
        if (fold_of[r] != static_cast<int>(f)) train_rows.push_back(r);
      }
      std::vector<double> y_train;
      for (auto r : train_rows) y_train.push_back(data.y[r]);
      const auto model = fit_gbt(take_rows(data.x, train_rows), y_train, config);

      std::vector<double> y_true, y_pred;
      for (auto r : folds[f]) {
        y_true.push_back(data.y[r]);
        y_pred.push_back(model.predict_row(data.x.row(r)));
      }
      result.fold_rmse.push_back(evaluate(y_true, y_pred).rmse);
    }
    result.mean_rmse = std::accumulate(result.fold_rmse.begin(), result.fold_rmse.end(), 0.0) /
                       static_cast<double>(result.fold_rmse.size());
  } catch (const std::exception& e) {
    result.failure = e.what();
    result.fold_rmse.clear();
    result.mean_rmse = std::numeric_limits<double>::infinity();
  }
  return result;
}

TrialResult cross_validate(const GbtConfig& config, const Dataset& data, std::string_view target, std::size_t k,
                           std::uint64_t seed) {
  const auto features = data.schema().input_names();
  const auto td = TuningData::from(data, target, features);
  return cross_validate(config, td, kfold_indices(data.rows(), k, seed));
}

// ---------------------------------------------------------------------------
// Random search

nlohmann::json TrialResult::to_json() const {
  nlohmann::json j = {{"trial", index}, {"config", config.to_json()}, {"fold_rmse", fold_rmse}, {"seed", seed}};
  j["mean_rmse"] = failure ? nlohmann::json(nullptr) : nlohmann::json(mean_rmse);
  if (failure) j["failure"] = *failure;
  return j;
}

TrialResult TrialResult::from_json(const nlohmann::json& doc) {
  TrialResult t;
  t.index = doc.at("trial").get<std::size_t>();
  t.config = GbtConfig::from_json(doc.at("config"));
  t.fold_rmse = doc.at("fold_rmse").get<std::vector<double>>();
  t.seed = doc.at("seed").get<std::uint64_t>();
  if (doc.contains("failure")) {
    t.failure = doc.at("failure").get<std::string>();
    t.mean_rmse = std::numeric_limits<double>::infinity();
  } else {
    t.mean_rmse = doc.at("mean_rmse").get<double>();
  }
  return t;
}

std::string SearchResult::trial_log() const {
  std::string out;
  for (const auto& t : trials) {
    out += t.to_json().dump();
    out += '\n';
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

SearchResult random_search(const SearchSpace& space, const TuningData& data, const SearchOptions& options) {
  if (options.n_trials == 0 && options.extra_candidates.empty()) throw ConfigError("random search needs >= 1 trial");
  const auto folds = kfold_indices(data.x.rows, options.k, derive_seed(options.seed, 0xF01D));

  const std::size_t total = options.n_trials + options.extra_candidates.size();
  std::vector<GbtConfig> configs(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::uint64_t trial_seed = derive_seed(options.seed, i + 1);
    if (i < options.n_trials) {
      Rng rng(trial_seed);
      configs[i] = space.sample(rng, options.base);
    } else {
      configs[i] = options.extra_candidates[i - options.n_trials];
    }
    configs[i].seed = trial_seed;
  }

  SearchResult result;
  result.trials.resize(total);
  parallel_for(total, options.threads, [&](std::size_t i) {
    auto trial = cross_validate(configs[i], data, folds);
    trial.index = i;
    result.trials[i] = std::move(trial);
    log().debug("trial {}: mean rmse {}", i, result.trials[i].mean_rmse);
  });

  const TrialResult* best = nullptr;
  for (const auto& t : result.trials) {
    if (!t.ok()) continue;
    if (!best || t.mean_rmse < best->mean_rmse) best = &t;
  }
  if (!best) {
    throw DataError("random search: all " + std::to_string(total) + " trials failed\n" + result.trial_log());
  }
  result.best = *best;
  return result;
}

SearchResult random_search(const SearchSpace& space, std::size_t n_trials, const Dataset& data,
                           std::string_view target, std::size_t k, std::uint64_t seed) {
  const auto features = data.schema().input_names();
  SearchOptions opts;
  opts.n_trials = n_trials;
  opts.k = k;
  opts.seed = seed;
  return random_search(space, TuningData::from(data, target, features), opts);
}

}  // namespace mixforge

#include "mixforge/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mixforge/error.hpp"
#include "mixforge/rng.hpp"

namespace mixforge {

// ---------------------------------------------------------------------------
// Correlation

CorrelationMatrix::CorrelationMatrix(std::vector<std::string> labels, std::vector<double> values)
    : labels_(std::move(labels)), values_(std::move(values)) {
  if (values_.size() != labels_.size() * labels_.size()) throw DataError("correlation matrix shape mismatch");
}

bool CorrelationMatrix::defined(std::size_t i, std::size_t j) const { return !std::isnan((*this)(i, j)); }

std::string CorrelationMatrix::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "column";
  for (const auto& l : labels_) out << ",\"" << l << '"';
  out << '\n';
  for (std::size_t i = 0; i < size(); ++i) {
    out << '"' << labels_[i] << '"';
    for (std::size_t j = 0; j < size(); ++j) {
      out << ',';
      if (defined(i, j)) out << (*this)(i, j);
    }
    out << '\n';
  }
  return out.str();
}

nlohmann::json CorrelationMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < size(); ++j) {
      row.push_back(defined(i, j) ? nlohmann::json((*this)(i, j)) : nlohmann::json(nullptr));
    }
    rows.push_back(std::move(row));
  }
  return {{"labels", labels_}, {"r", rows}};
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) throw DataError("pearson: need two equal-length samples of size >= 2");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix correlation_matrix(const Dataset& data, std::span<const std::string> columns) {
  if (columns.size() < 2) throw DataError("correlation matrix needs at least 2 columns");
  if (data.rows() < 3) throw DataError("correlation matrix needs at least 3 rows");
  const std::size_t d = columns.size();
  std::vector<std::vector<double>> cols;
  for (const auto& c : columns) cols.push_back(data.column(c));
  std::vector<double> r(d * d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double v = pearson(cols[i], cols[j]);
      if (i == j && !std::isnan(v)) v = 1.0;
      r[i * d + j] = r[j * d + i] = v;
    }
  }
  return CorrelationMatrix({columns.begin(), columns.end()}, std::move(r));
}

nlohmann::json PruneResult::to_json() const {
  auto records = [](const std::vector<DropRecord>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : v) arr.push_back({{"column", d.column}, {"partner", d.partner}, {"r", d.r}});
    return arr;
  };
  return {{"kept", kept}, {"dropped", records(dropped)}, {"unresolved", records(unresolved)}};
}

PruneResult PruneResult::from_json(const nlohmann::json& doc) {
  auto records = [](const nlohmann::json& arr) {
    std::vector<DropRecord> out;
    for (const auto& d : arr) {
      out.push_back({d.at("column").get<std::string>(), d.at("partner").get<std::string>(), d.at("r").get<double>()});
    }
    return out;
  };
  PruneResult r;
  r.kept = doc.at("kept").get<std::vector<std::string>>();
  r.dropped = records(doc.at("dropped"));
  r.unresolved = records(doc.at("unresolved"));
  return r;
}

PruneResult prune_multicollinear(const CorrelationMatrix& corr, double threshold,
                                 std::span<const std::string> keep_overrides) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("prune threshold must lie in (0, 1]");
  const std::size_t d = corr.size();
  const std::unordered_set<std::string> protect(keep_overrides.begin(), keep_overrides.end());
  auto abs_r = [&](std::size_t i, std::size_t j) { return corr.defined(i, j) ? std::abs(corr(i, j)) : 0.0; };

  std::vector<bool> kept(d, true);
  std::vector<std::vector<bool>> exempt(d, std::vector<bool>(d, false));
  PruneResult out;
  for (;;) {
    // worst remaining pair; first-found wins ties (lowest i, then j)
    double worst = threshold;
    std::size_t wi = d, wj = d;
    for (std::size_t i = 0; i < d; ++i) {
      if (!kept[i]) continue;
      for (std::size_t j = i + 1; j < d; ++j) {
        if (!kept[j] || exempt[i][j]) continue;
        if (abs_r(i, j) > worst) {
          worst = abs_r(i, j);
          wi = i;
          wj = j;
        }
      }
    }
    if (wi == d) break;

    auto mean_abs = [&](std::size_t a) {
      double s = 0.0;
      std::size_t cnt = 0;
      for (std::size_t k = 0; k < d; ++k) {
        if (k == a || !kept[k]) continue;
        s += abs_r(a, k);
        ++cnt;
      }
      return cnt ? s / static_cast<double>(cnt) : 0.0;
    };
    const bool pi = protect.contains(corr.labels()[wi]);
    const bool pj = protect.contains(corr.labels()[wj]);
    const DropRecord pair_record{corr.labels()[wi], corr.labels()[wj], corr(wi, wj)};
    if (pi && pj) {
      exempt[wi][wj] = true;
      out.unresolved.push_back(pair_record);
      continue;
    }
    std::size_t victim;
    if (pi) {
      victim = wj;
    } else if (pj) {
      victim = wi;
    } else {
      victim = mean_abs(wi) > mean_abs(wj) ? wi : wj;  // equal: larger index (wj)
    }
    const std::size_t partner = victim == wi ? wj : wi;
    kept[victim] = false;
    out.dropped.push_back({corr.labels()[victim], corr.labels()[partner], corr(wi, wj)});
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (kept[i]) out.kept.push_back(corr.labels()[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Isolation forest

double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  if (n == 2) return 1.0;
  constexpr double kEulerGamma = 0.5772156649;
  const double m = static_cast<double>(n - 1);
  const double harmonic = std::log(m) + kEulerGamma;
  return 2.0 * harmonic - 2.0 * m / static_cast<double>(n);
}

std::size_t IsolationTree::height() const {
  // iterative depth walk
  std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
  std::size_t best = 0;
  while (!stack.empty()) {
    auto [node, depth] = stack.back();
    stack.pop_back();
    best = std::max(best, depth);
    const auto& n = nodes[static_cast<std::size_t>(node)];
    if (n.feature >= 0) {
      stack.emplace_back(n.left, depth + 1);
      stack.emplace_back(n.right, depth + 1);
    }
  }
  return best;
}

double IsolationForestModel::path_length(std::span<const double> x, std::size_t tree) const {
  const auto& nodes = trees[tree].nodes;
  std::size_t idx = 0;
  double depth = 0.0;
  while (nodes[idx].feature >= 0) {
    const auto& n = nodes[idx];
    idx = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.split ? n.left : n.right);
    depth += 1.0;
  }
  return depth + average_path_length(nodes[idx].size);
}

double IsolationForestModel::score(std::span<const double> x) const {
  if (x.size() != columns.size()) throw SchemaError("isolation forest: feature count mismatch");
  double total = 0.0;
  for (std::size_t t = 0; t < trees.size(); ++t) total += path_length(x, t);
  const double mean = total / static_cast<double>(trees.size());
  if (normalizer <= 0.0) return 1.0;
  return std::exp2(-mean / normalizer);
}

namespace {

class IsolationTreeBuilder {
 public:
  IsolationTreeBuilder(const FeatureMatrix& data, std::size_t height_limit, Rng& rng)
      : data_(data), limit_(height_limit), rng_(rng) {}

  IsolationTree build(std::vector<std::size_t> rows) {
    tree_.nodes.clear();
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  int grow(std::span<std::size_t> rows, std::size_t depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    if (rows.size() <= 1 || depth >= limit_) return leaf(id, rows.size());

    // candidate features: those not constant on this node
    std::vector<std::size_t> features;
    std::vector<std::pair<double, double>> ranges;
    for (std::size_t f = 0; f < data_.cols(); ++f) {
      double lo = data_.at(rows[0], f), hi = lo;
      for (std::size_t r : rows) {
        lo = std::min(lo, data_.at(r, f));
        hi = std::max(hi, data_.at(r, f));
      }
      if (hi > lo) {
        features.push_back(f);
        ranges.emplace_back(lo, hi);
      }
    }
    if (features.empty()) return leaf(id, rows.size());  // all duplicates

    const std::size_t pick = rng_.index(features.size());
    const std::size_t f = features[pick];
    const auto [lo, hi] = ranges[pick];
    double split = rng_.uniform(lo, hi);
    if (split <= lo) split = std::nextafter(lo, hi);  // keeps both sides non-empty

    auto mid = std::stable_partition(rows.begin(), rows.end(),
                                     [&](std::size_t r) { return data_.at(r, f) < split; });
    const auto n_left = static_cast<std::size_t>(mid - rows.begin());
    const int left = grow(rows.subspan(0, n_left), depth + 1);
    const int right = grow(rows.subspan(n_left), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = static_cast<int>(f);
    node.split = split;
    node.left = left;
    node.right = right;
    node.size = rows.size();
    return id;
  }

  int leaf(int id, std::size_t size) {
    tree_.nodes[static_cast<std::size_t>(id)].size = size;
    return id;
  }

  const FeatureMatrix& data_;
  std::size_t limit_;
  Rng& rng_;
  IsolationTree tree_;
};

}  // namespace

IsolationForestModel fit_isolation_forest(const FeatureMatrix& data, std::size_t n_trees, std::size_t psi,
                                          std::uint64_t seed) {
  if (n_trees == 0) throw ConfigError("isolation forest needs at least one tree");
  if (psi < 2) throw ConfigError("isolation forest subsample size must be >= 2");
  if (psi > data.rows) {
    throw DataError("isolation forest subsample size " + std::to_string(psi) + " exceeds row count " +
                    std::to_string(data.rows));
  }
  IsolationForestModel model;
  model.columns = data.names;
  model.subsample_size = psi;
  model.height_limit = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(psi))));
  model.normalizer = average_path_length(psi);
  model.trees.reserve(n_trees);
  for (std::size_t t = 0; t < n_trees; ++t) {
    Rng rng(derive_seed(seed, t));
    auto rows = rng.sample_without_replacement(data.rows, psi);
    IsolationTreeBuilder builder(data, model.height_limit, rng);
    model.trees.push_back(builder.build(std::move(rows)));
  }
  return model;
}

IsolationForestModel fit_isolation_forest(const Dataset& data, std::span<const std::string> columns,
                                          std::size_t n_trees, std::size_t psi, std::uint64_t seed) {
  return fit_isolation_forest(data.extract(columns), n_trees, psi, seed);
}

std::vector<double> score_anomalies(const IsolationForestModel& model, const FeatureMatrix& data) {
  if (data.names != model.columns) throw SchemaError("isolation forest: column mismatch");
  std::vector<double> scores(data.rows);
  for (std::size_t r = 0; r < data.rows; ++r) scores[r] = model.score(data.row(r));
  return scores;
}

std::vector<double> score_anomalies(const IsolationForestModel& model, const Dataset& data) {
  for (const auto& c : model.columns) {
    if (!data.schema().index_of(c)) throw SchemaError("isolation forest column '" + c + "' missing from data");
  }
  return score_anomalies(model, data.extract(model.columns));
}

OutlierFilterResult filter_outliers(const Dataset& data, std::span<const double> scores, double contamination) {
  if (!(contamination >= 0.0 && contamination < 0.5)) throw ConfigError("contamination must lie in [0, 0.5)");
  if (scores.size() != data.rows()) throw DataError("score count does not match row count");
  const std::size_t n = data.rows();
  const auto n_remove = static_cast<std::size_t>(std::floor(contamination * static_cast<double>(n) + 1e-9));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<bool> removed(n, false);
  std::vector<RowId> removed_ids;
  std::vector<double> removed_scores;
  for (std::size_t i = 0; i < n_remove; ++i) {
    removed[order[i]] = true;
    removed_ids.push_back(data.row_ids()[order[i]]);
    removed_scores.push_back(scores[order[i]]);
  }
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < n; ++r) {
    if (!removed[r]) keep.push_back(r);
  }
  return {data.select_rows(keep), std::move(removed_ids), std::move(removed_scores)};
}

}  // namespace mixforge

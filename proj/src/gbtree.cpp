#include "mixforge/gbtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mixforge/error.hpp"
#include "mixforge/rng.hpp"

namespace mixforge {

// ---------------------------------------------------------------------------
// Config

void GbtConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid gbt config: ") + what);
  };
  require(learning_rate > 0.0 && learning_rate <= 1.0, "learning_rate must lie in (0, 1]");
  require(max_depth >= 1, "max_depth must be >= 1");
  require(subsample > 0.0 && subsample <= 1.0, "subsample must lie in (0, 1]");
  require(colsample_bytree > 0.0 && colsample_bytree <= 1.0, "colsample_bytree must lie in (0, 1]");
  require(lambda_l1 >= 0.0, "lambda_l1 must be >= 0");
  require(lambda_l2 >= 0.0, "lambda_l2 must be >= 0");
  require(max_bin >= 2 && max_bin <= 65535, "max_bin must lie in [2, 65535]");
  require(min_child_weight >= 0.0, "min_child_weight must be >= 0");
  require(gamma >= 0.0, "gamma must be >= 0");
  require(n_rounds >= 1, "n_rounds must be >= 1");
}

nlohmann::json GbtConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"max_depth", max_depth},
          {"subsample", subsample},
          {"colsample_bytree", colsample_bytree},
          {"lambda_l1", lambda_l1},
          {"lambda_l2", lambda_l2},
          {"max_bin", max_bin},
          {"min_child_weight", min_child_weight},
          {"gamma", gamma},
          {"n_rounds", n_rounds},
          {"seed", seed}};
}

GbtConfig GbtConfig::from_json(const nlohmann::json& doc) {
  GbtConfig c;
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.max_depth = doc.value("max_depth", c.max_depth);
  c.subsample = doc.value("subsample", c.subsample);
  c.colsample_bytree = doc.value("colsample_bytree", c.colsample_bytree);
  c.lambda_l1 = doc.value("lambda_l1", c.lambda_l1);
  c.lambda_l2 = doc.value("lambda_l2", c.lambda_l2);
  c.max_bin = doc.value("max_bin", c.max_bin);
  c.min_child_weight = doc.value("min_child_weight", c.min_child_weight);
  c.gamma = doc.value("gamma", c.gamma);
  c.n_rounds = doc.value("n_rounds", c.n_rounds);
  c.seed = doc.value("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Gain and weights

double soft_threshold(double g, double l1) {
  const double mag = std::abs(g) - l1;
  if (mag <= 0.0) return 0.0;
  return g > 0.0 ? mag : -mag;
}

namespace {

double score_term(double g, double h, double l1, double l2) {
  const double denom = h + l2;
  if (denom <= 0.0) return 0.0;
  const double s = soft_threshold(g, l1);
  return s * s / denom;
}

}  // namespace

double split_gain(double gl, double hl, double gr, double hr, double l1, double l2, double gamma) {
  return 0.5 * (score_term(gl, hl, l1, l2) + score_term(gr, hr, l1, l2) - score_term(gl + gr, hl + hr, l1, l2)) -
         gamma;
}

double leaf_weight(double g, double h, double l1, double l2) {
  const double denom = h + l2;
  if (denom <= 0.0) return 0.0;
  return -soft_threshold(g, l1) / denom;
}

// ---------------------------------------------------------------------------
// Trees and ensembles

std::size_t RegressionTree::leaf_index(std::span<const double> x) const {
  std::size_t idx = 0;
  while (nodes[idx].feature >= 0) {
    const auto& n = nodes[idx];
    idx = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
  }
  return idx;
}

double RegressionTree::predict(std::span<const double> x) const { return nodes[leaf_index(x)].value; }

std::size_t RegressionTree::depth() const {
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  std::size_t best = 0;
  while (!stack.empty()) {
    const auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (nodes[i].feature >= 0) {
      stack.emplace_back(static_cast<std::size_t>(nodes[i].left), d + 1);
      stack.emplace_back(static_cast<std::size_t>(nodes[i].right), d + 1);
    }
  }
  return best;
}

double Ensemble::predict_row(std::span<const double> x) const {
  if (x.size() != features.size()) throw DataError("ensemble: row width does not match feature count");
  double sum = base_score;
  for (const auto& t : trees) sum += t.predict(x);
  return sum;
}

std::vector<double> Ensemble::predict(const FeatureMatrix& x) const {
  std::vector<std::size_t> slot(features.size());
  for (std::size_t f = 0; f < features.size(); ++f) {
    const auto it = std::find(x.names.begin(), x.names.end(), features[f]);
    if (it == x.names.end()) throw LookupError("missing feature '" + features[f] + "'");
    slot[f] = static_cast<std::size_t>(it - x.names.begin());
  }
  std::vector<double> out(x.rows);
  std::vector<double> row(features.size());
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t f = 0; f < features.size(); ++f) row[f] = x.at(r, slot[f]);
    out[r] = predict_row(row);
  }
  return out;
}

double predict(const Ensemble& model, const FeatureValues& values) {
  std::vector<double> row(model.features.size());
  for (std::size_t f = 0; f < model.features.size(); ++f) {
    const auto it = values.find(model.features[f]);
    if (it == values.end()) throw LookupError("missing feature '" + model.features[f] + "'");
    row[f] = it->second;
  }
  return model.predict_row(row);
}

nlohmann::json Ensemble::to_json() const {
  nlohmann::json trees_json = nlohmann::json::array();
  for (const auto& t : trees) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
    }
    trees_json.push_back(
        {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}});
  }
  return {{"base_score", base_score}, {"features", features}, {"config", config.to_json()}, {"trees", trees_json}};
}

Ensemble Ensemble::from_json(const nlohmann::json& doc) {
  Ensemble e;
  e.base_score = doc.at("base_score").get<double>();
  e.features = doc.at("features").get<std::vector<std::string>>();
  e.config = GbtConfig::from_json(doc.at("config"));
  for (const auto& tj : doc.at("trees")) {
    const auto feature = tj.at("feature").get<std::vector<int>>();
    const auto threshold = tj.at("threshold").get<std::vector<double>>();
    const auto left = tj.at("left").get<std::vector<int>>();
    const auto right = tj.at("right").get<std::vector<int>>();
    const auto value = tj.at("value").get<std::vector<double>>();
    const std::size_t n = feature.size();
    if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || value.size() != n) {
      throw ParseError("tree node arrays have inconsistent lengths");
    }
    RegressionTree t;
    for (std::size_t i = 0; i < n; ++i) {
      if (feature[i] >= static_cast<int>(e.features.size())) throw ParseError("tree references unknown feature");
      if (feature[i] >= 0) {
        // children must point forward so traversal terminates
        if (left[i] <= static_cast<int>(i) || right[i] <= static_cast<int>(i) || left[i] >= static_cast<int>(n) ||
            right[i] >= static_cast<int>(n)) {
          throw ParseError("tree has invalid child index");
        }
      }
      t.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i]});
    }
    e.trees.push_back(std::move(t));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Histogram binning

std::vector<double> histogram_cuts(std::span<const double> values, int max_bin) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  // boundary strictly between a and its successor b
  auto between = [](double a, double b) {
    const double mid = a + (b - a) / 2.0;
    return mid > a ? mid : b;
  };
  std::vector<double> cuts;
  if (distinct.size() <= static_cast<std::size_t>(max_bin)) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) cuts.push_back(between(distinct[i], distinct[i + 1]));
    return cuts;
  }
  const std::size_t n = sorted.size();
  for (int b = 1; b < max_bin; ++b) {
    const std::size_t rank = static_cast<std::size_t>(b) * n / static_cast<std::size_t>(max_bin);
    if (rank == 0) continue;
    const double lo = sorted[rank - 1];
    const auto next = std::upper_bound(distinct.begin(), distinct.end(), lo);
    if (next == distinct.end()) continue;
    const double cut = between(lo, *next);
    if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
  }
  return cuts;
}

namespace {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  int bin = -1;  // rows with bin <= this go left
};

class TreeGrower {
 public:
  TreeGrower(const std::vector<std::vector<double>>& cuts, const std::vector<std::uint16_t>& bins, std::size_t n_rows,
             const std::vector<double>& grad, const GbtConfig& config)
      : cuts_(cuts), bins_(bins), n_(n_rows), grad_(grad), cfg_(config) {
    std::size_t max_bins = 1;
    for (const auto& c : cuts_) max_bins = std::max(max_bins, c.size() + 1);
    hist_g_.assign(max_bins, 0.0);
    hist_c_.assign(max_bins, 0.0);
  }

  // Grows one tree over `rows` (ascending positions) using `features`.
  // Returns the tree plus, for every node, the split bin (training routing).
  RegressionTree grow(std::vector<std::uint32_t>& rows, const std::vector<std::size_t>& features,
                      std::vector<int>& split_bins, std::vector<double>& pred) {
    tree_ = RegressionTree{};
    split_bins_.clear();
    features_ = &features;
    scratch_.resize(rows.size());
    pred_ = &pred;
    build(std::span<std::uint32_t>(rows), 0);
    split_bins = std::move(split_bins_);
    return std::move(tree_);
  }

 private:
  std::uint16_t bin(std::size_t f, std::uint32_t r) const { return bins_[f * n_ + r]; }

  int build(std::span<std::uint32_t> rows, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    split_bins_.push_back(-1);

    double G = 0.0;
    for (auto r : rows) G += grad_[r];
    const double H = static_cast<double>(rows.size());

    SplitCandidate best;
    if (depth < cfg_.max_depth && rows.size() >= 2 && H >= 2.0 * cfg_.min_child_weight) {
      best = find_split(rows, G, H);
    }
    if (best.feature < 0) {
      const double w = cfg_.learning_rate * leaf_weight(G, H, cfg_.lambda_l1, cfg_.lambda_l2);
      tree_.nodes[static_cast<std::size_t>(id)].value = w;
      for (auto r : rows) (*pred_)[r] += w;
      return id;
    }

    // stable partition through the scratch buffer
    const auto f = static_cast<std::size_t>(best.feature);
    std::size_t nl = 0, nr = 0;
    auto* right_buf = scratch_.data();
    for (auto r : rows) {
      if (bin(f, r) <= best.bin) {
        rows[nl++] = r;
      } else {
        right_buf[nr++] = r;
      }
    }
    std::copy(right_buf, right_buf + nr, rows.begin() + static_cast<std::ptrdiff_t>(nl));

    const int left = build(rows.subspan(0, nl), depth + 1);
    const int right = build(rows.subspan(nl), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = cuts_[f][static_cast<std::size_t>(best.bin)];
    node.left = left;
    node.right = right;
    split_bins_[static_cast<std::size_t>(id)] = best.bin;
    return id;
  }

  SplitCandidate find_split(std::span<const std::uint32_t> rows, double G, double H) {
    SplitCandidate best;
    best.gain = 0.0;
    const double mcw = cfg_.min_child_weight;
    const double l1 = cfg_.lambda_l1;
    const double l2 = cfg_.lambda_l2;
    // split_gain() with the parent term hoisted out of the bin sweep
    auto term = [l1, l2](double g, double h) {
      const double s = l1 > 0.0 ? soft_threshold(g, l1) : g;
      return s * s / (h + l2);
    };
    const double parent = (H + l2) > 0.0 ? term(G, H) : 0.0;
    for (std::size_t f : *features_) {
      const std::size_t n_bins = cuts_[f].size() + 1;
      if (n_bins < 2) continue;

      auto consider = [&](double gl, double hl, std::size_t b) {
        const double hr = H - hl;
        if (hl < mcw || hr < mcw || hl <= 0.0 || hr <= 0.0) return;
        const double gain = 0.5 * (term(gl, hl) + term(G - gl, hr) - parent) - cfg_.gamma;
        // the same partition reached through two features differs only by
        // summation order; the earlier feature/bin keeps such ties
        if (gain > best.gain + kGainTieTolerance * (parent + std::abs(best.gain))) {
          best.gain = gain;
          best.feature = static_cast<int>(f);
          best.bin = static_cast<int>(b);
        }
      };

      const std::uint16_t* col = bins_.data() + f * n_;
      if (rows.size() * 2 < n_bins) {
        // sparse path: sort (bin, position) keys instead of sweeping every bin
        keys_.clear();
        for (std::size_t i = 0; i < rows.size(); ++i) {
          keys_.push_back((static_cast<std::uint64_t>(col[rows[i]]) << 32) | i);
        }
        std::sort(keys_.begin(), keys_.end());
        double gl = 0.0, hl = 0.0;
        for (std::size_t i = 0; i < keys_.size();) {
          const std::uint64_t b = keys_[i] >> 32;
          double bg = 0.0, bc = 0.0;
          for (; i < keys_.size() && (keys_[i] >> 32) == b; ++i) {
            bg += grad_[rows[keys_[i] & 0xffffffffULL]];
            bc += 1.0;
          }
          gl += bg;
          hl += bc;
          if (b + 1 < n_bins) consider(gl, hl, b);
        }
      } else {
        // histograms are kept all-zero between uses; the sweep clears them
        for (auto r : rows) {
          hist_g_[col[r]] += grad_[r];
          hist_c_[col[r]] += 1.0;
        }
        double gl = 0.0, hl = 0.0;
        for (std::size_t b = 0; b < n_bins; ++b) {
          const double c = hist_c_[b];
          if (c == 0.0) continue;  // same partition as the previous boundary
          gl += hist_g_[b];
          hl += c;
          hist_g_[b] = 0.0;
          hist_c_[b] = 0.0;
          if (b + 1 < n_bins) consider(gl, hl, b);
        }
      }
    }
    return best;
  }

  const std::vector<std::vector<double>>& cuts_;
  const std::vector<std::uint16_t>& bins_;
  std::size_t n_;
  const std::vector<double>& grad_;
  const GbtConfig& cfg_;

  RegressionTree tree_;
  std::vector<int> split_bins_;
  const std::vector<std::size_t>* features_ = nullptr;
  std::vector<double>* pred_ = nullptr;
  std::vector<std::uint32_t> scratch_;
  std::vector<double> hist_g_, hist_c_;
  std::vector<std::uint64_t> keys_;
};

}  // namespace

Ensemble fit_gbt(const FeatureMatrix& x, std::span<const double> y, const GbtConfig& config) {
  config.validate();
  const std::size_t n = x.rows;
  const std::size_t d = x.cols();
  if (d == 0) throw ConfigError("gbt: empty feature set");
  if (n < 2) throw DataError("gbt: need at least 2 training rows");
  if (y.size() != n) throw DataError("gbt: target length does not match rows");

  Ensemble model;
  model.features = x.names;
  model.config = config;
  model.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

  std::vector<std::vector<double>> cuts(d);
  std::vector<std::uint16_t> bins(n * d);
  std::vector<double> column(n);
  for (std::size_t f = 0; f < d; ++f) {
    for (std::size_t r = 0; r < n; ++r) column[r] = x.at(r, f);
    cuts[f] = histogram_cuts(column, config.max_bin);
    for (std::size_t r = 0; r < n; ++r) {
      bins[f * n + r] = static_cast<std::uint16_t>(std::upper_bound(cuts[f].begin(), cuts[f].end(), column[r]) -
                                                   cuts[f].begin());
    }
  }

  std::vector<double> pred(n, model.base_score);
  std::vector<double> grad(n);
  std::vector<std::uint32_t> rows;
  std::vector<char> in_sample(n);
  std::vector<int> split_bins;
  TreeGrower grower(cuts, bins, n, grad, config);
  Rng rng(config.seed);

  const auto n_sub = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.subsample * static_cast<double>(n))));
  const auto n_cols =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.colsample_bytree * static_cast<double>(d))));
  std::vector<std::size_t> all_features(d);
  std::iota(all_features.begin(), all_features.end(), 0);

  model.trees.reserve(static_cast<std::size_t>(config.n_rounds));
  for (int round = 0; round < config.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) grad[i] = pred[i] - y[i];

    rows.clear();
    if (n_sub >= n) {
      for (std::size_t i = 0; i < n; ++i) rows.push_back(static_cast<std::uint32_t>(i));
    } else {
      for (auto i : rng.sample_without_replacement(n, n_sub)) rows.push_back(static_cast<std::uint32_t>(i));
    }
    const auto features = n_cols >= d ? all_features : rng.sample_without_replacement(d, n_cols);

    std::fill(in_sample.begin(), in_sample.end(), 0);
    for (auto r : rows) in_sample[r] = 1;

    auto tree = grower.grow(rows, features, split_bins, pred);

    // rows outside the subsample are routed on their bins
    if (n_sub < n) {
      for (std::size_t r = 0; r < n; ++r) {
        if (in_sample[r]) continue;
        std::size_t idx = 0;
        while (tree.nodes[idx].feature >= 0) {
          const auto f = static_cast<std::size_t>(tree.nodes[idx].feature);
          idx = static_cast<std::size_t>(bins[f * n + r] <= split_bins[idx] ? tree.nodes[idx].left
                                                                            : tree.nodes[idx].right);
        }
        pred[r] += tree.nodes[idx].value;
      }
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

Ensemble fit_gbt(const Dataset& train, std::string_view target, std::span<const std::string> features,
                 const GbtConfig& config) {
  const auto tcol = train.schema().require_index(target);
  if (train.schema().column(tcol).kind != ColumnKind::target) {
    throw ConfigError("'" + std::string(target) + "' is not a target column");
  }
  if (features.empty()) throw ConfigError("gbt: empty feature set");
  const auto y = train.column(tcol);
  return fit_gbt(train.extract(features), y, config);
}

Ensemble fit_gbt(const Dataset& train, std::string_view target, const GbtConfig& config) {
  const auto features = train.schema().input_names();
  return fit_gbt(train, target, features, config);
}

}  // namespace mixforge

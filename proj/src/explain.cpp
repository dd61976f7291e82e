#include "mixforge/explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "mixforge/error.hpp"
#include "mixforge/rng.hpp"

namespace mixforge {

nlohmann::json Attribution::to_json() const {
  nlohmann::json contrib = nlohmann::json::array();
  for (std::size_t i = 0; i < features.size(); ++i) {
    contrib.push_back({{"feature", features[i]}, {"value", contributions[i]}});
  }
  return {{"base_value", base_value}, {"prediction", prediction}, {"contributions", contrib}};
}

namespace {

// Background columns reordered to match the model's feature order.
FeatureMatrix align(const Ensemble& model, const FeatureMatrix& background) {
  if (background.rows == 0) throw DataError("shap: empty background");
  if (background.names == model.features) return background;
  FeatureMatrix out;
  out.names = model.features;
  out.rows = background.rows;
  std::vector<std::size_t> slot;
  for (const auto& f : model.features) {
    const auto it = std::find(background.names.begin(), background.names.end(), f);
    if (it == background.names.end()) throw LookupError("background lacks feature '" + f + "'");
    slot.push_back(static_cast<std::size_t>(it - background.names.begin()));
  }
  out.values.resize(out.rows * slot.size());
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < slot.size(); ++c) out.values[r * slot.size() + c] = background.at(r, slot[c]);
  }
  return out;
}

// For the game v(S) = f(x_S, z_rest) restricted to one tree and one
// reference z, each reachable leaf contributes value * [A subset of S,
// B disjoint from S], where A (B) are the features whose x-side (z-side)
// branch was taken. The Shapley value of that indicator game is
// 1/(a*C(a+b,a)) for members of A and -1/(b*C(a+b,b)) for members of B.
class InterventionalWalker {
 public:
  InterventionalWalker(std::size_t n_features, std::vector<double>& phi) : state_(n_features, 0), phi_(phi) {
    const std::size_t m = n_features + 1;
    binom_.assign(m * m, 0.0);
    for (std::size_t n = 0; n < m; ++n) {
      binom_[n * m] = 1.0;
      for (std::size_t k = 1; k <= n; ++k) {
        binom_[n * m + k] = binom_[(n - 1) * m + k - 1] + (k <= n - 1 ? binom_[(n - 1) * m + k] : 0.0);
      }
    }
    stride_ = m;
  }

  void walk(const RegressionTree& tree, std::span<const double> x, std::span<const double> z) {
    tree_ = &tree;
    x_ = x;
    z_ = z;
    visit(0, 0, 0);
  }

 private:
  double binom(std::size_t n, std::size_t k) const { return binom_[n * stride_ + k]; }

  void visit(std::size_t idx, std::size_t a, std::size_t b) {
    const auto& node = tree_->nodes[idx];
    if (node.feature < 0) {
      if (a + b == 0 || node.value == 0.0) return;
      const double w_in = a > 0 ? 1.0 / (static_cast<double>(a) * binom(a + b, a)) : 0.0;
      const double w_out = b > 0 ? 1.0 / (static_cast<double>(b) * binom(a + b, b)) : 0.0;
      for (auto f : path_) {
        phi_[f] += state_[f] == 1 ? node.value * w_in : -node.value * w_out;
      }
      return;
    }
    const auto f = static_cast<std::size_t>(node.feature);
    const auto left = static_cast<std::size_t>(node.left);
    const auto right = static_cast<std::size_t>(node.right);
    const bool x_left = x_[f] < node.threshold;
    const bool z_left = z_[f] < node.threshold;
    if (state_[f] == 1) return visit(x_left ? left : right, a, b);
    if (state_[f] == 2) return visit(z_left ? left : right, a, b);
    if (x_left == z_left) return visit(x_left ? left : right, a, b);

    path_.push_back(f);
    state_[f] = 1;
    visit(x_left ? left : right, a + 1, b);
    state_[f] = 2;
    visit(z_left ? left : right, a, b + 1);
    state_[f] = 0;
    path_.pop_back();
  }

  std::vector<char> state_;  // 0 free, 1 forced in S, 2 forced out of S
  std::vector<std::size_t> path_;
  std::vector<double>& phi_;
  std::vector<double> binom_;
  std::size_t stride_ = 0;
  const RegressionTree* tree_ = nullptr;
  std::span<const double> x_, z_;
};

}  // namespace

Attribution shap_values(const Ensemble& model, std::span<const double> row, const FeatureMatrix& background) {
  const auto bg = align(model, background);
  const std::size_t d = model.features.size();
  if (row.size() != d) throw DataError("shap: row width does not match model features");

  Attribution out;
  out.features = model.features;
  out.contributions.assign(d, 0.0);
  out.prediction = model.predict_row(row);

  InterventionalWalker walker(d, out.contributions);
  double base = 0.0;
  for (std::size_t r = 0; r < bg.rows; ++r) {
    const auto z = bg.row(r);
    base += model.predict_row(z);
    for (const auto& tree : model.trees) walker.walk(tree, row, z);
  }
  const double n = static_cast<double>(bg.rows);
  out.base_value = base / n;
  for (auto& v : out.contributions) v /= n;
  return out;
}

Attribution brute_force_shapley(const Ensemble& model, std::span<const double> row, const FeatureMatrix& background) {
  const auto bg = align(model, background);
  const std::size_t d = model.features.size();
  if (d > kBruteForceMaxFeatures) {
    throw ConfigError("brute-force Shapley refuses d = " + std::to_string(d) + " > " +
                      std::to_string(kBruteForceMaxFeatures));
  }
  if (row.size() != d) throw DataError("shap: row width does not match model features");

  const std::size_t n_sets = std::size_t{1} << d;
  std::vector<double> value(n_sets, 0.0);
  std::vector<double> mixed(d);
  for (std::size_t mask = 0; mask < n_sets; ++mask) {
    double sum = 0.0;
    for (std::size_t r = 0; r < bg.rows; ++r) {
      const auto z = bg.row(r);
      for (std::size_t j = 0; j < d; ++j) mixed[j] = (mask >> j) & 1U ? row[j] : z[j];
      sum += model.predict_row(mixed);
    }
    value[mask] = sum / static_cast<double>(bg.rows);
  }

  // |S|! (d - |S| - 1)! / d!
  std::vector<double> weight(d, 0.0);
  for (std::size_t s = 0; s < d; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s) + 1.0) + std::lgamma(static_cast<double>(d - s)) -
                         std::lgamma(static_cast<double>(d) + 1.0));
  }

  Attribution out;
  out.features = model.features;
  out.contributions.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t mask = 0; mask < n_sets; ++mask) {
      if (mask & bit) continue;
      const auto s = static_cast<std::size_t>(std::popcount(mask));
      out.contributions[i] += weight[s] * (value[mask | bit] - value[mask]);
    }
  }
  out.base_value = value[0];
  out.prediction = value[n_sets - 1];
  return out;
}

std::vector<FeatureImportance> rank_features(const Ensemble& model, const FeatureMatrix& data,
                                             const FeatureMatrix& background) {
  if (data.rows == 0) throw DataError("rank_features: no rows");
  const auto rows = align(model, data);
  const auto bg = align(model, background);
  const std::size_t d = model.features.size();
  std::vector<double> total(d, 0.0);
  for (std::size_t r = 0; r < rows.rows; ++r) {
    const auto a = shap_values(model, rows.row(r), bg);
    for (std::size_t j = 0; j < d; ++j) total[j] += std::abs(a.contributions[j]);
  }
  std::vector<FeatureImportance> out;
  for (std::size_t j = 0; j < d; ++j) out.push_back({model.features[j], total[j] / static_cast<double>(rows.rows)});
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.mean_abs_shap > b.mean_abs_shap; });
  return out;
}

nlohmann::json to_json(const std::vector<FeatureImportance>& ranking) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : ranking) arr.push_back({{"feature", r.feature}, {"mean_abs_shap", r.mean_abs_shap}});
  return arr;
}

// ---------------------------------------------------------------------------
// Feature selection

SelectionPolicy SelectionPolicy::fixed(std::vector<std::string> excluded) {
  SelectionPolicy p;
  p.kind = SelectionPolicyKind::fixed_list;
  p.excluded = std::move(excluded);
  return p;
}

SelectionPolicy SelectionPolicy::bottom(std::size_t k) {
  SelectionPolicy p;
  p.kind = SelectionPolicyKind::bottom_k;
  p.k = k;
  return p;
}

SelectionPolicy SelectionPolicy::below_fraction(double fraction) {
  SelectionPolicy p;
  p.kind = SelectionPolicyKind::threshold;
  p.fraction = fraction;
  return p;
}

nlohmann::json SelectionPolicy::to_json() const {
  switch (kind) {
    case SelectionPolicyKind::fixed_list:
      return {{"kind", "fixed-list"}, {"excluded", excluded}};
    case SelectionPolicyKind::bottom_k:
      return {{"kind", "bottom-k"}, {"k", k}};
    case SelectionPolicyKind::threshold:
      return {{"kind", "threshold"}, {"fraction", fraction}};
  }
  return {};
}

SelectionPolicy SelectionPolicy::from_json(const nlohmann::json& doc) {
  const auto kind = doc.at("kind").get<std::string>();
  if (kind == "fixed-list") return fixed(doc.at("excluded").get<std::vector<std::string>>());
  if (kind == "bottom-k") return bottom(doc.at("k").get<std::size_t>());
  if (kind == "threshold") return below_fraction(doc.at("fraction").get<double>());
  throw ConfigError("unknown selection policy '" + kind + "'");
}

nlohmann::json FeatureSelection::to_json() const {
  return {{"target", target}, {"included", included}, {"excluded", excluded}, {"policy", policy.to_json()}};
}

FeatureSelection FeatureSelection::from_json(const nlohmann::json& doc) {
  return {doc.at("target").get<std::string>(), doc.at("included").get<std::vector<std::string>>(),
          doc.at("excluded").get<std::vector<std::string>>(), SelectionPolicy::from_json(doc.at("policy"))};
}

FeatureSelection select_features(std::string_view target, std::span<const std::string> all_inputs,
                                 std::span<const FeatureImportance> ranking, const SelectionPolicy& policy) {
  std::unordered_set<std::string> drop;
  switch (policy.kind) {
    case SelectionPolicyKind::fixed_list:
      for (const auto& e : policy.excluded) {
        if (std::find(all_inputs.begin(), all_inputs.end(), e) == all_inputs.end()) {
          throw LookupError("selection names unknown column '" + e + "'");
        }
        drop.insert(e);
      }
      break;
    case SelectionPolicyKind::bottom_k:
    case SelectionPolicyKind::threshold: {
      // full ranking: ranked features first, then unranked inputs (zero mass)
      std::vector<FeatureImportance> full(ranking.begin(), ranking.end());
      for (const auto& in : all_inputs) {
        const bool ranked = std::any_of(ranking.begin(), ranking.end(), [&](const auto& r) { return r.feature == in; });
        if (!ranked) full.push_back({in, 0.0});
      }
      std::stable_sort(full.begin(), full.end(),
                       [](const auto& a, const auto& b) { return a.mean_abs_shap > b.mean_abs_shap; });
      if (policy.kind == SelectionPolicyKind::bottom_k) {
        const std::size_t k = std::min(policy.k, full.size());
        for (std::size_t i = full.size() - k; i < full.size(); ++i) drop.insert(full[i].feature);
      } else {
        double total = 0.0;
        for (const auto& r : full) total += r.mean_abs_shap;
        for (const auto& r : full) {
          if (r.mean_abs_shap < policy.fraction * total) drop.insert(r.feature);
        }
      }
      break;
    }
  }
  FeatureSelection out;
  out.target = std::string(target);
  out.policy = policy;
  for (const auto& in : all_inputs) (drop.contains(in) ? out.excluded : out.included).push_back(in);
  return out;
}

SelectionPolicy uhpc_default_selection(std::string_view target) {
  static const std::unordered_map<std::string, std::vector<std::string>> excluded = {
      {"Compressive strength", {"Coarse aggregate", "Fly ash content", "Steel fiber length", "Hydration Temperature"}},
      {"Flexural strength",
       {"Silica fume content", "Slag powder content", "Steel fiber length", "Hydration Temperature"}},
      {"Tensile strength", {"Coarse aggregate", "Fly ash content", "HPWR", "Steel fiber length"}},
      {"Slump flow",
       {"Fly ash content", "Slag powder content", "HPWR", "Steel fiber length", "SF Tensile strength",
        "SF Elastic modulus", "Hydration Temperature"}},
      {"Porosity",
       {"Fly ash content", "Slag powder content", "HPWR", "Steel fiber content", "SF Tensile strength",
        "SF Elastic modulus", "Hydration Temperature"}},
  };
  const auto it = excluded.find(std::string(target));
  if (it == excluded.end()) throw LookupError("no default selection for target '" + std::string(target) + "'");
  return SelectionPolicy::fixed(it->second);
}

FeatureMatrix sample_background(const FeatureMatrix& data, std::size_t max_rows, std::uint64_t seed) {
  if (data.rows <= max_rows) return data;
  Rng rng(seed);
  const auto rows = rng.sample_without_replacement(data.rows, max_rows);
  FeatureMatrix out;
  out.names = data.names;
  out.rows = rows.size();
  for (auto r : rows) {
    const auto row = data.row(r);
    out.values.insert(out.values.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace mixforge

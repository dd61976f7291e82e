#include "mixforge/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "mixforge/error.hpp"
#include "mixforge/log.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/tune.hpp"

namespace mixforge {

namespace {

constexpr std::pair<BaselineKind, std::string_view> kKindNames[] = {
    {BaselineKind::ols_linear, "ols_linear"},
    {BaselineKind::ridge, "ridge"},
    {BaselineKind::ridge_cv, "ridge_cv"},
    {BaselineKind::lasso, "lasso"},
    {BaselineKind::decision_tree, "decision_tree"},
    {BaselineKind::random_forest, "random_forest"},
    {BaselineKind::extra_trees, "extra_trees"},
    {BaselineKind::bagging, "bagging"},
    {BaselineKind::adaboost_r2, "adaboost_r2"},
    {BaselineKind::gradient_boosting, "gradient_boosting"},
    {BaselineKind::least_squares_boosting, "least_squares_boosting"},
    {BaselineKind::voting_mean, "voting_mean"},
};

using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Centered copy of the design plus the column means and mean(y).
struct Centered {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd x_mean;
  double y_mean = 0.0;
};

Centered center(const FeatureMatrix& fm, std::span<const double> y) {
  if (fm.rows == 0) throw DataError("cannot fit a linear model on zero rows");
  if (y.size() != fm.rows) throw DataError("target length does not match the number of rows");
  Eigen::Map<const MatrixXdR> x(fm.values.data(), static_cast<Eigen::Index>(fm.rows),
                                static_cast<Eigen::Index>(fm.cols()));
  Centered c;
  c.x_mean = x.colwise().mean().transpose();
  c.x = x.rowwise() - c.x_mean.transpose();
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  c.y_mean = yv.mean();
  c.y = yv.array() - c.y_mean;
  return c;
}

LinearRegressor finish(const Centered& c, const Eigen::VectorXd& beta) {
  std::vector<double> coef(beta.data(), beta.data() + beta.size());
  return LinearRegressor(std::move(coef), c.y_mean - c.x_mean.dot(beta));
}

FeatureMatrix take_rows(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  FeatureMatrix out;
  out.names = x.names;
  out.rows = rows.size();
  out.values.reserve(rows.size() * x.cols());
  for (std::size_t r : rows) {
    auto row = x.row(r);
    out.values.insert(out.values.end(), row.begin(), row.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CART builder

class CartBuilder {
 public:
  CartBuilder(const FeatureMatrix& x, std::span<const double> y, std::span<const double> w, const CartParams& p,
              std::uint64_t seed)
      : x_(x), y_(y), w_(w), p_(p), rng_(seed) {
    const std::size_t d = x.cols();
    n_try_ = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(p.max_features * d)), 1, d);
  }

  RegressionTree build(std::vector<std::size_t> rows) {
    RegressionTree tree;
    tree.nodes.emplace_back();
    grow(tree, 0, rows, 0);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double score = 0.0;
  };

  void grow(RegressionTree& tree, std::size_t node, std::vector<std::size_t>& rows, int depth) {
    double sw = 0.0, swy = 0.0;
    for (std::size_t r : rows) {
      sw += w_[r];
      swy += w_[r] * y_[r];
    }
    tree.nodes[node].value = sw > 0.0 ? swy / sw : 0.0;
    if (p_.max_depth >= 0 && depth >= p_.max_depth) return;
    if (rows.size() < std::max<std::size_t>(p_.min_samples_split, 2) || sw <= 0.0) return;
    const double y0 = y_[rows.front()];
    if (std::all_of(rows.begin(), rows.end(), [&](std::size_t r) { return y_[r] == y0; })) return;

    const Split best = find_split(rows, sw, swy);
    if (best.feature < 0) return;

    const auto f = static_cast<std::size_t>(best.feature);
    auto mid = std::stable_partition(rows.begin(), rows.end(),
                                     [&](std::size_t r) { return x_.at(r, f) < best.threshold; });
    std::vector<std::size_t> left(rows.begin(), mid);
    std::vector<std::size_t> right(mid, rows.end());
    rows.clear();
    rows.shrink_to_fit();

    const int l = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    tree.nodes[node].feature = best.feature;
    tree.nodes[node].threshold = best.threshold;
    tree.nodes[node].left = l;
    tree.nodes[node].right = l + 1;
    grow(tree, static_cast<std::size_t>(l), left, depth + 1);
    grow(tree, static_cast<std::size_t>(l + 1), right, depth + 1);
  }

  std::vector<std::size_t> candidate_features() {
    const std::size_t d = x_.cols();
    if (n_try_ >= d) {
      std::vector<std::size_t> all(d);
      std::iota(all.begin(), all.end(), 0);
      return all;
    }
    return rng_.sample_without_replacement(d, n_try_);
  }

  // Maximizes SL^2/WL + SR^2/WR, equivalent to minimizing weighted SSE.
  Split find_split(const std::vector<std::size_t>& rows, double sw, double swy) {
    Split best;
    best.score = swy * swy / sw * (1.0 + 1e-12) + 1e-12;
    const std::size_t min_leaf = std::max<std::size_t>(p_.min_samples_leaf, 1);
    for (std::size_t f : candidate_features()) {
      if (p_.random_thresholds) {
        double lo = x_.at(rows.front(), f), hi = lo;
        for (std::size_t r : rows) {
          lo = std::min(lo, x_.at(r, f));
          hi = std::max(hi, x_.at(r, f));
        }
        if (!(hi > lo)) continue;
        double t = rng_.uniform(lo, hi);
        if (t <= lo) t = hi;
        double lw = 0.0, lwy = 0.0;
        std::size_t ln = 0;
        for (std::size_t r : rows) {
          if (x_.at(r, f) < t) {
            lw += w_[r];
            lwy += w_[r] * y_[r];
            ++ln;
          }
        }
        const double rw = sw - lw, rwy = swy - lwy;
        if (ln < min_leaf || rows.size() - ln < min_leaf || lw <= 0.0 || rw <= 0.0) continue;
        const double score = lwy * lwy / lw + rwy * rwy / rw;
        if (score > best.score) best = {static_cast<int>(f), t, score};
        continue;
      }
      order_.assign(rows.begin(), rows.end());
      std::sort(order_.begin(), order_.end(),
                [&](std::size_t a, std::size_t b) { return x_.at(a, f) < x_.at(b, f); });
      double lw = 0.0, lwy = 0.0;
      for (std::size_t i = 0; i + 1 < order_.size(); ++i) {
        const std::size_t r = order_[i];
        lw += w_[r];
        lwy += w_[r] * y_[r];
        const double a = x_.at(r, f), b = x_.at(order_[i + 1], f);
        if (a == b) continue;
        const std::size_t ln = i + 1;
        if (ln < min_leaf || order_.size() - ln < min_leaf) continue;
        const double rw = sw - lw, rwy = swy - lwy;
        if (lw <= 0.0 || rw <= 0.0) continue;
        const double score = lwy * lwy / lw + rwy * rwy / rw;
        if (score > best.score) {
          double t = 0.5 * (a + b);
          if (t <= a) t = b;
          best = {static_cast<int>(f), t, score};
        }
      }
    }
    return best;
  }

  const FeatureMatrix& x_;
  std::span<const double> y_;
  std::span<const double> w_;
  CartParams p_;
  Rng rng_;
  std::size_t n_try_ = 1;
  std::vector<std::size_t> order_;
};

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

std::optional<double> optional_number(const nlohmann::json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

MetricsReport lenient_report(const nlohmann::json& doc) {
  MetricsReport r;
  r.mae = doc.value("mae", 0.0);
  r.pmae_percent = optional_number(doc, "pmae_percent");
  r.mse = doc.value("mse", 0.0);
  r.rmse = doc.at("rmse").get<double>();
  r.maxae = doc.value("maxae", 0.0);
  r.r2 = optional_number(doc, "r2");
  r.m = doc.value("m", std::size_t{0});
  r.pmae_skipped = doc.value("pmae_skipped", std::size_t{0});
  return r;
}

std::string fmt_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_number(*v) : std::string(); }

}  // namespace

std::string_view to_string(BaselineKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

BaselineKind parse_baseline_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown baseline kind '" + std::string(name) + "'");
}

std::vector<BaselineKind> all_baseline_kinds() {
  std::vector<BaselineKind> out;
  for (const auto& entry : kKindNames) out.push_back(entry.first);
  return out;
}

std::vector<double> Regressor::predict(const FeatureMatrix& x) const {
  std::vector<double> out(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) out[r] = predict(x.row(r));
  return out;
}

double LinearRegressor::predict(std::span<const double> x) const {
  double s = intercept_;
  for (std::size_t j = 0; j < coef_.size(); ++j) s += coef_[j] * x[j];
  return s;
}

LinearRegressor fit_ols(const FeatureMatrix& x, std::span<const double> y) {
  const Centered c = center(x, y);
  const auto d = c.x.cols();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(c.x);
  if (qr.rank() < d) {
    throw DataError("OLS design matrix is singular (rank " + std::to_string(qr.rank()) + " of " +
                    std::to_string(d) + " centered columns); use ridge or lasso instead");
  }
  return finish(c, qr.solve(c.y));
}

LinearRegressor fit_ridge(const FeatureMatrix& x, std::span<const double> y, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("ridge lambda must be >= 0");
  const Centered c = center(x, y);
  const auto d = c.x.cols();
  Eigen::MatrixXd a = c.x.transpose() * c.x;
  a.diagonal().array() += lambda;
  const Eigen::VectorXd rhs = c.x.transpose() * c.y;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      (d > 0 && ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-12 * std::max(1.0, a.diagonal().maxCoeff()))) {
    throw DataError("ridge system is singular; increase lambda");
  }
  Eigen::VectorXd beta = ldlt.solve(rhs);
  // One step of iterative refinement keeps the normal-equation residual tight.
  beta += ldlt.solve(rhs - a * beta);
  return finish(c, beta);
}

std::vector<double> default_ridge_grid() {
  std::vector<double> grid(10);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = std::pow(10.0, -3.0 + 6.0 * static_cast<double>(i) / 9.0);
  return grid;
}

LinearRegressor fit_ridge_cv(const FeatureMatrix& x, std::span<const double> y, std::span<const double> grid,
                             std::size_t k, std::uint64_t seed, double* chosen) {
  if (grid.empty()) throw ConfigError("ridge_cv needs a non-empty lambda grid");
  if (k < 2 || k > x.rows) throw ConfigError("ridge_cv needs 2 <= k <= rows");
  const auto folds = kfold_indices(x.rows, k, seed);
  double best_rmse = std::numeric_limits<double>::infinity();
  double best_lambda = grid.front();
  for (double lambda : grid) {
    double sum = 0.0;
    bool ok = true;
    for (std::size_t f = 0; f < folds.size() && ok; ++f) {
      std::vector<char> held(x.rows, 0);
      for (std::size_t r : folds[f]) held[r] = 1;
      std::vector<std::size_t> tr;
      std::vector<double> ytr;
      for (std::size_t r = 0; r < x.rows; ++r) {
        if (!held[r]) {
          tr.push_back(r);
          ytr.push_back(y[r]);
        }
      }
      try {
        const auto model = fit_ridge(take_rows(x, tr), ytr, lambda);
        double se = 0.0;
        for (std::size_t r : folds[f]) {
          const double e = model.predict(x.row(r)) - y[r];
          se += e * e;
        }
        sum += std::sqrt(se / static_cast<double>(folds[f].size()));
      } catch (const DataError&) {
        ok = false;
      }
    }
    if (!ok) continue;
    const double mean = sum / static_cast<double>(folds.size());
    if (mean < best_rmse) {
      best_rmse = mean;
      best_lambda = lambda;
    }
  }
  if (!std::isfinite(best_rmse)) throw DataError("ridge_cv: every lambda in the grid gave a singular system");
  if (chosen) *chosen = best_lambda;
  return fit_ridge(x, y, best_lambda);
}

LinearRegressor fit_lasso(const FeatureMatrix& x, std::span<const double> y, double alpha, double tol,
                          std::size_t max_iter) {
  if (!(alpha >= 0.0)) throw ConfigError("lasso alpha must be >= 0");
  const Centered c = center(x, y);
  const auto n = static_cast<double>(c.x.rows());
  const auto d = c.x.cols();
  const Eigen::VectorXd norms = c.x.colwise().squaredNorm().transpose();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd resid = c.y;
  const double shrink = n * alpha;
  std::size_t iter = 0;
  for (; iter < max_iter; ++iter) {
    double max_step = 0.0, max_beta = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (norms[j] <= 0.0) continue;
      const double old = beta[j];
      const double rho = c.x.col(j).dot(resid) + norms[j] * old;
      const double next = soft_threshold(rho, shrink) / norms[j];
      if (next != old) {
        resid -= (next - old) * c.x.col(j);
        beta[j] = next;
      }
      max_step = std::max(max_step, std::abs(next - old));
      max_beta = std::max(max_beta, std::abs(next));
    }
    if (max_step <= tol * std::max(1.0, max_beta)) break;
  }
  if (iter == max_iter) log().warn("lasso: coordinate descent stopped at {} sweeps before converging", max_iter);
  return finish(c, beta);
}

double DecisionTreeRegressor::predict(std::span<const double> x) const { return tree_.predict(x); }

DecisionTreeRegressor DecisionTreeRegressor::fit(const FeatureMatrix& x, std::span<const double> y,
                                                 std::span<const double> weights, std::span<const std::size_t> rows,
                                                 const CartParams& params, std::uint64_t seed) {
  if (y.size() != x.rows) throw DataError("target length does not match the number of rows");
  if (x.cols() == 0) throw DataError("cannot fit a tree without feature columns");
  std::vector<double> unit;
  if (weights.empty()) {
    unit.assign(x.rows, 1.0);
    weights = unit;
  }
  std::vector<std::size_t> sel = rows.empty() ? iota_rows(x.rows) : std::vector<std::size_t>(rows.begin(), rows.end());
  if (sel.empty()) throw DataError("cannot fit a tree on zero rows");
  CartBuilder builder(x, y, weights, params, seed);
  DecisionTreeRegressor out;
  out.tree_ = builder.build(std::move(sel));
  return out;
}

double MeanEnsemble::predict(std::span<const double> x) const {
  double s = 0.0;
  for (const auto& m : members_) s += m->predict(x);
  return s / static_cast<double>(members_.size());
}

MeanEnsemble fit_bagged_trees(const FeatureMatrix& x, std::span<const double> y, const BaggingParams& params,
                              std::uint64_t seed) {
  if (params.n_estimators == 0) throw ConfigError("bagging needs at least one estimator");
  if (!(params.max_samples > 0.0 && params.max_samples <= 1.0)) throw ConfigError("max_samples must be in (0, 1]");
  const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(params.max_samples * x.rows)));
  std::vector<std::unique_ptr<Regressor>> members;
  for (std::size_t t = 0; t < params.n_estimators; ++t) {
    const std::uint64_t s = derive_seed(seed, t);
    Rng rng(derive_seed(s, 0xB00));
    std::vector<std::size_t> rows;
    if (params.bootstrap) {
      rows.resize(m);
      for (auto& r : rows) r = rng.index(x.rows);
      std::sort(rows.begin(), rows.end());
    } else if (m < x.rows) {
      rows = rng.sample_without_replacement(x.rows, m);
    } else {
      rows = iota_rows(x.rows);
    }
    members.push_back(
        std::make_unique<DecisionTreeRegressor>(DecisionTreeRegressor::fit(x, y, {}, rows, params.tree, s)));
  }
  return MeanEnsemble(std::move(members));
}

double AdaBoostR2::predict(std::span<const double> x) const {
  std::vector<std::pair<double, double>> votes(trees_.size());
  double total = 0.0;
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    votes[t] = {trees_[t].predict(x), weights_[t]};
    total += weights_[t];
  }
  std::sort(votes.begin(), votes.end());
  double acc = 0.0;
  for (const auto& [value, weight] : votes) {
    acc += weight;
    if (acc >= 0.5 * total) return value;
  }
  return votes.back().first;
}

AdaBoostR2 fit_adaboost_r2(const FeatureMatrix& x, std::span<const double> y, std::size_t n_estimators,
                           const CartParams& tree, std::uint64_t seed) {
  if (n_estimators == 0) throw ConfigError("adaboost needs at least one estimator");
  const std::size_t n = x.rows;
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  std::vector<DecisionTreeRegressor> trees;
  std::vector<double> alphas;
  const auto rows = iota_rows(n);
  for (std::size_t t = 0; t < n_estimators; ++t) {
    auto model = DecisionTreeRegressor::fit(x, y, w, rows, tree, derive_seed(seed, t));
    std::vector<double> err(n);
    double max_err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      err[i] = std::abs(model.predict(x.row(i)) - y[i]);
      max_err = std::max(max_err, err[i]);
    }
    if (max_err <= 0.0) {  // perfect fit: nothing left to reweight
      trees.push_back(std::move(model));
      alphas.push_back(1.0);
      break;
    }
    double avg_loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) avg_loss += w[i] * err[i] / max_err;
    if (avg_loss >= 0.5) {
      if (trees.empty()) {
        trees.push_back(std::move(model));
        alphas.push_back(1.0);
      }
      break;
    }
    const double beta = avg_loss / (1.0 - avg_loss);
    trees.push_back(std::move(model));
    alphas.push_back(std::log(1.0 / beta));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] *= std::pow(beta, 1.0 - err[i] / max_err);
      total += w[i];
    }
    for (auto& v : w) v /= total;
  }
  return AdaBoostR2(std::move(trees), std::move(alphas));
}

GbtConfig BaselineParams::default_gbt() {
  GbtConfig c;
  c.learning_rate = 0.1;
  c.max_depth = 3;
  c.n_rounds = 100;
  return c;
}

BaselineParams BaselineParams::from_json(const nlohmann::json& doc) {
  BaselineParams p;
  if (!doc.is_object()) throw ConfigError("baseline params must be a JSON object");
  p.alpha = doc.value("alpha", p.alpha);
  if (doc.contains("alpha_grid")) p.alpha_grid = doc.at("alpha_grid").get<std::vector<double>>();
  p.cv_folds = doc.value("cv_folds", p.cv_folds);
  if (doc.contains("n_estimators")) p.n_estimators = doc.at("n_estimators").get<std::size_t>();
  p.tree.max_depth = doc.value("max_depth", p.tree.max_depth);
  p.tree.min_samples_split = doc.value("min_samples_split", p.tree.min_samples_split);
  p.tree.min_samples_leaf = doc.value("min_samples_leaf", p.tree.min_samples_leaf);
  p.tree.max_features = doc.value("max_features", p.tree.max_features);
  if (doc.contains("gbt")) {
    nlohmann::json merged = p.gbt.to_json();
    merged.update(doc.at("gbt"));
    p.gbt = GbtConfig::from_json(merged);
  }
  return p;
}

std::unique_ptr<Regressor> fit_baseline(BaselineKind kind, const FeatureMatrix& x, std::span<const double> y,
                                        const BaselineParams& params, std::uint64_t seed) {
  if (x.rows == 0) throw DataError("cannot fit a baseline on zero rows");
  auto trees = [&](std::size_t default_n, bool bootstrap, bool random) {
    BaggingParams bp;
    bp.n_estimators = params.n_estimators.value_or(default_n);
    bp.bootstrap = bootstrap;
    bp.tree = params.tree;
    bp.tree.random_thresholds = random;
    return std::make_unique<MeanEnsemble>(fit_bagged_trees(x, y, bp, seed));
  };
  switch (kind) {
    case BaselineKind::ols_linear:
      return std::make_unique<LinearRegressor>(fit_ols(x, y));
    case BaselineKind::ridge:
      return std::make_unique<LinearRegressor>(fit_ridge(x, y, params.alpha));
    case BaselineKind::ridge_cv: {
      const auto grid = params.alpha_grid.empty() ? default_ridge_grid() : params.alpha_grid;
      return std::make_unique<LinearRegressor>(fit_ridge_cv(x, y, grid, params.cv_folds, seed));
    }
    case BaselineKind::lasso:
      return std::make_unique<LinearRegressor>(fit_lasso(x, y, params.alpha));
    case BaselineKind::decision_tree:
      return std::make_unique<DecisionTreeRegressor>(DecisionTreeRegressor::fit(x, y, {}, {}, params.tree, seed));
    case BaselineKind::random_forest:
      return trees(100, true, false);
    case BaselineKind::extra_trees:
      return trees(100, false, true);
    case BaselineKind::bagging:
      return trees(10, true, false);
    case BaselineKind::adaboost_r2: {
      CartParams tp = params.tree;
      if (tp.max_depth < 0) tp.max_depth = 3;
      return std::make_unique<AdaBoostR2>(fit_adaboost_r2(x, y, params.n_estimators.value_or(50), tp, seed));
    }
    case BaselineKind::gradient_boosting: {
      GbtConfig c = params.gbt;
      c.seed = seed;
      return std::make_unique<GbtRegressor>(fit_gbt(x, y, c));
    }
    case BaselineKind::least_squares_boosting: {
      GbtConfig c = params.gbt;
      c.lambda_l1 = 0.0;
      c.lambda_l2 = 0.0;
      c.gamma = 0.0;
      c.seed = seed;
      return std::make_unique<GbtRegressor>(fit_gbt(x, y, c));
    }
    case BaselineKind::voting_mean: {
      std::vector<std::unique_ptr<Regressor>> members;
      members.push_back(fit_baseline(BaselineKind::ridge, x, y, params, derive_seed(seed, 1)));
      members.push_back(fit_baseline(BaselineKind::random_forest, x, y, params, derive_seed(seed, 2)));
      members.push_back(fit_baseline(BaselineKind::gradient_boosting, x, y, params, derive_seed(seed, 3)));
      return std::make_unique<MeanEnsemble>(std::move(members));
    }
  }
  throw ConfigError("unsupported baseline kind");
}

std::unique_ptr<Regressor> fit_baseline(BaselineKind kind, const Dataset& train, std::string_view target,
                                        const BaselineParams& params, std::uint64_t seed) {
  const auto inputs = train.schema().input_names();
  const FeatureMatrix x = train.extract(inputs);
  const std::vector<double> y = train.column(target);
  return fit_baseline(kind, x, y, params, seed);
}

std::vector<LabeledReport> load_external_reports(const nlohmann::json& doc) {
  if (!doc.is_array()) throw ParseError("external reports must be a JSON array");
  std::vector<LabeledReport> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& item = doc[i];
    try {
      LabeledReport r;
      r.label = item.at("label").get<std::string>();
      if (item.contains("train")) r.train = lenient_report(item.at("train"));
      r.test = lenient_report(item.at("test"));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("external report #" + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

PreselectReport preselect_reports(std::span<const LabeledReport> reports, const SelectionGate& gate) {
  PreselectReport out;
  out.gate = gate;
  out.selection = select_optimal(reports, gate);
  for (const auto& label : out.selection.ranked) {
    const auto it = std::find_if(reports.begin(), reports.end(), [&](const auto& r) { return r.label == label; });
    PreselectRow row;
    row.label = it->label;
    row.train = it->train;
    row.test = it->test;
    row.external = true;
    row.passes = gate.passes(it->test);
    out.rows.push_back(std::move(row));
  }
  return out;
}

PreselectReport preselect(const Dataset& train, const Dataset& test, std::string_view target,
                          std::span<const BaselineKind> kinds, const SelectionGate& gate,
                          const BaselineParams& params, std::uint64_t seed,
                          std::span<const LabeledReport> external) {
  if (kinds.empty() && external.empty()) throw ConfigError("preselect needs at least one model kind");
  const auto inputs = train.schema().input_names();
  const FeatureMatrix xtr = train.extract(inputs);
  const FeatureMatrix xte = test.extract(inputs);
  const std::vector<double> ytr = train.column(target);
  const std::vector<double> yte = test.column(target);

  std::vector<PreselectRow> fitted(kinds.size());
  parallel_for(kinds.size(), 0, [&](std::size_t i) {
    PreselectRow& row = fitted[i];
    row.label = std::string(to_string(kinds[i]));
    try {
      const auto model = fit_baseline(kinds[i], xtr, ytr, params, derive_seed(seed, static_cast<std::uint64_t>(kinds[i])));
      row.train = evaluate(ytr, model->predict(xtr));
      row.test = evaluate(yte, model->predict(xte));
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });

  std::vector<LabeledReport> ok(external.begin(), external.end());
  std::vector<PreselectRow> failed;
  for (auto& row : fitted) {
    if (row.error) {
      log().warn("preselect: {} failed: {}", row.label, *row.error);
      failed.push_back(std::move(row));
    } else {
      ok.push_back({row.label, *row.train, *row.test});
    }
  }
  PreselectReport out = preselect_reports(ok, gate);
  for (auto& row : out.rows) {
    row.external = std::any_of(external.begin(), external.end(), [&](const auto& e) { return e.label == row.label; });
  }
  for (auto& row : failed) out.rows.push_back(std::move(row));
  return out;
}

std::string PreselectReport::to_csv() const {
  std::ostringstream os;
  os << "label,source,train_mae,train_pmae_percent,train_mse,train_rmse,train_maxae,train_r2,"
        "test_mae,test_pmae_percent,test_mse,test_rmse,test_maxae,test_r2,passes,error\n";
  auto metrics = [&](const std::optional<MetricsReport>& m) {
    if (!m) {
      os << ",,,,,,";
      return;
    }
    os << fmt_number(m->mae) << ',' << fmt_optional(m->pmae_percent) << ',' << fmt_number(m->mse) << ','
       << fmt_number(m->rmse) << ',' << fmt_number(m->maxae) << ',' << fmt_optional(m->r2) << ',';
  };
  for (const auto& row : rows) {
    os << row.label << ',' << (row.external ? "external" : "fitted") << ',';
    metrics(row.train);
    metrics(row.test);
    os << (row.passes ? "yes" : "no") << ',';
    if (row.error) {
      std::string e = *row.error;
      std::replace(e.begin(), e.end(), '"', '\'');
      os << '"' << e << '"';
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json PreselectReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json r = {{"label", row.label}, {"source", row.external ? "external" : "fitted"}, {"passes", row.passes}};
    r["train"] = row.train ? row.train->to_json() : nlohmann::json(nullptr);
    r["test"] = row.test ? row.test->to_json() : nlohmann::json(nullptr);
    r["error"] = row.error ? nlohmann::json(*row.error) : nlohmann::json(nullptr);
    rows_json.push_back(std::move(r));
  }
  return {{"gate", {{"rmse_max", gate.rmse_max}, {"r2_min", gate.r2_min}}},
          {"rows", std::move(rows_json)},
          {"ranked", selection.ranked},
          {"passing", selection.passing}};
}

std::string PreselectReport::to_table() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %10s %10s %10s %10s  %s\n", "model", "train RMSE", "test RMSE", "test R2",
                "test MAE", "gate");
  os << line;
  for (const auto& row : rows) {
    if (row.error) {
      std::snprintf(line, sizeof line, "%-24s  failed: ", row.label.c_str());
      os << line << *row.error << '\n';
      continue;
    }
    const std::string r2 = row.test->r2 ? fmt_number(*row.test->r2) : "n/a";
    std::snprintf(line, sizeof line, "%-24s %10.4g %10.4g %10s %10.4g  %s\n", row.label.c_str(),
                  row.train ? row.train->rmse : 0.0, row.test->rmse, r2.c_str(), row.test->mae,
                  row.passes ? "pass" : "-");
    os << line;
  }
  os << "passing (" << selection.passing.size() << "):";
  for (const auto& p : selection.passing) os << ' ' << p;
  os << '\n';
  return os.str();
}

}  // namespace mixforge

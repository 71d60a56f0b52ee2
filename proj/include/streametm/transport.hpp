#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streametm/common.hpp"
#include "streametm/embeddings.hpp"

namespace streametm {

struct Metric {
  enum class Kind { cosine, euclidean, minkowski } kind = Kind::cosine;
  double p = 2.0;  // minkowski order

  static Metric cosine() { return {Kind::cosine, 2.0}; }
  static Metric euclidean() { return {Kind::euclidean, 2.0}; }
  static Metric minkowski(double p) { return {Kind::minkowski, p}; }

  static Metric parse(const std::string& name, double p = 3.0) {
    if (name == "cosine") return cosine();
    if (name == "euclidean") return euclidean();
    if (name == "minkowski") return minkowski(p);
    throw InvalidConfigError("unknown metric: " + name);
  }

  std::string name() const {
    switch (kind) {
      case Kind::cosine: return "cosine";
      case Kind::euclidean: return "euclidean";
      default: return "minkowski(" + std::to_string(p) + ")";
    }
  }
};

struct CostMatrix {
  Mat C;  // J x K, C(j,k) = cost of moving new topic j onto previous topic k
  Metric metric;
};

struct TransportPlan {
  Mat T;  // J x K, nonnegative
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct UotConfig {
  double lambda_a = 0.09;       // penalty on the previous-topic marginal
  double lambda_atilde = 0.09;  // penalty on the new-topic marginal
  int max_iter = 1000;
  double tol = 1e-6;
  double mass_tol = 1e-8;

  void validate() const {
    if (lambda_a <= 0.0 || lambda_atilde <= 0.0 || max_iter < 1 || tol <= 0.0 ||
        mass_tol <= 0.0)
      throw InvalidConfigError("UotConfig: all fields must be positive");
  }
};

inline double minkowski_distance(const Vec& u, const Vec& v, double p) {
  if (p < 1.0) throw InvalidConfigError("minkowski order must be >= 1");
  return std::pow((u - v).array().abs().pow(p).sum(), 1.0 / p);
}

inline CostMatrix cost_matrix(const Mat& alpha_new, const Mat& alpha_prev, Metric metric) {
  if (alpha_new.rows() != alpha_prev.rows())
    throw DimensionError("cost_matrix: embedding dimension mismatch");
  const int J = static_cast<int>(alpha_new.cols());
  const int K = static_cast<int>(alpha_prev.cols());
  CostMatrix cm;
  cm.metric = metric;
  cm.C.resize(J, K);
  for (int j = 0; j < J; ++j) {
    for (int k = 0; k < K; ++k) {
      switch (metric.kind) {
        case Metric::Kind::cosine:
          cm.C(j, k) = cosine_distance(alpha_new.col(j), alpha_prev.col(k));
          break;
        case Metric::Kind::euclidean:
          cm.C(j, k) = (alpha_new.col(j) - alpha_prev.col(k)).norm();
          break;
        case Metric::Kind::minkowski:
          cm.C(j, k) = minkowski_distance(alpha_new.col(j), alpha_prev.col(k), metric.p);
          break;
      }
    }
  }
  return cm;
}

// Generalized KL for unnormalized nonnegative vectors, with 0 ln 0 = 0.
inline double generalized_kl(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0) s += x[i] * std::log(x[i] / y[i]) - x[i] + y[i];
    else s += y[i];
  }
  return s;
}

// F(T) = <C,T> + lambda_atilde GKL(T 1 || a_tilde) + lambda_a GKL(T^T 1 || a)
inline double uot_objective(const Mat& C, const Mat& T, const Vec& a_tilde, const Vec& a,
                            double lambda_atilde, double lambda_a) {
  const Vec row_sums = T.rowwise().sum();
  const Vec col_sums = T.colwise().sum();
  return (C.cwiseProduct(T)).sum() + lambda_atilde * generalized_kl(row_sums, a_tilde) +
         lambda_a * generalized_kl(col_sums, a);
}

// Multiplicative majorization-minimization updates for KL-relaxed UOT;
// every iterate stays entrywise nonnegative and the objective is monotone
// non-increasing. Entries below mass_tol are truncated to exact zeros on
// output.
inline TransportPlan uot_solve(const CostMatrix& cost, const Vec& a_tilde, const Vec& a,
                               const UotConfig& cfg = {}) {
  cfg.validate();
  const Mat& C = cost.C;
  const int J = static_cast<int>(C.rows());
  const int K = static_cast<int>(C.cols());
  if (J == 0 || K == 0) throw DimensionError("uot_solve: empty cost matrix");
  if (a_tilde.size() != J || a.size() != K)
    throw DimensionError("uot_solve: marginal mass size mismatch");
  if (a_tilde.minCoeff() <= 0.0 || a.minCoeff() <= 0.0)
    throw InvalidConfigError("uot_solve: masses must be positive");

  const double l_rows = cfg.lambda_atilde;
  const double l_cols = cfg.lambda_a;
  const double denom = l_rows + l_cols;
  const Vec log_at = a_tilde.array().log();
  const Vec log_a = a.array().log();

  TransportPlan plan;
  plan.T = a_tilde * a.transpose();  // outer product of the marginals
  double prev_obj = uot_objective(C, plan.T, a_tilde, a, l_rows, l_cols);

  for (int it = 1; it <= cfg.max_iter; ++it) {
    const Vec u = plan.T.rowwise().sum();
    const Vec v = plan.T.colwise().sum();
    for (int j = 0; j < J; ++j) {
      if (u[j] <= 0.0) continue;  // fully decayed row stays zero
      const double row_term = l_rows * (log_at[j] - std::log(u[j]));
      for (int k = 0; k < K; ++k) {
        if (plan.T(j, k) <= 0.0 || v[k] <= 0.0) continue;
        const double col_term = l_cols * (log_a[k] - std::log(v[k]));
        plan.T(j, k) *= std::exp((row_term + col_term - C(j, k)) / denom);
      }
    }
    const double obj = uot_objective(C, plan.T, a_tilde, a, l_rows, l_cols);
    if (!std::isfinite(obj)) throw NumericalError("uot_solve: non-finite objective");
    plan.iterations = it;
    if (std::abs(prev_obj - obj) <= cfg.tol * std::max(std::abs(prev_obj), 1.0)) {
      plan.converged = true;
      prev_obj = obj;
      break;
    }
    prev_obj = obj;
  }

  plan.T = (plan.T.array() < cfg.mass_tol).select(0.0, plan.T);
  plan.objective = uot_objective(C, plan.T, a_tilde, a, l_rows, l_cols);
  return plan;
}

// Assignment target for one new topic: a previous-topic index, or New.
constexpr int kNewTopic = -1;

// Baseline matcher: per-row argmin of the cost if it clears the threshold.
inline std::vector<int> match_by_distance(const CostMatrix& cost, double threshold) {
  if (threshold <= 0.0) throw InvalidConfigError("match_by_distance: threshold must be > 0");
  std::vector<int> out(cost.C.rows(), kNewTopic);
  for (int j = 0; j < cost.C.rows(); ++j) {
    int best = 0;
    for (int k = 1; k < cost.C.cols(); ++k)
      if (cost.C(j, k) < cost.C(j, best)) best = k;
    if (cost.C(j, best) < threshold) out[j] = best;
  }
  return out;
}

// Transport-plan matcher: per-row argmax of the transported mass; a row whose
// total mass is at most mass_tol carries no transport and marks a new topic.
inline std::vector<int> assign_from_plan(const TransportPlan& plan, double mass_tol = 1e-8) {
  std::vector<int> out(plan.T.rows(), kNewTopic);
  for (int j = 0; j < plan.T.rows(); ++j) {
    if (plan.T.row(j).sum() <= mass_tol) continue;
    int best = 0;
    for (int k = 1; k < plan.T.cols(); ++k)
      if (plan.T(j, k) > plan.T(j, best)) best = k;
    out[j] = best;
  }
  return out;
}

inline nlohmann::json plan_to_json(const CostMatrix& cost, const TransportPlan& plan) {
  auto mat = [](const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  return nlohmann::json{{"C", mat(cost.C)},
                        {"T", mat(plan.T)},
                        {"objective", plan.objective},
                        {"iterations", plan.iterations},
                        {"converged", plan.converged},
                        {"metric", cost.metric.name()}};
}

inline void save_plan(const CostMatrix& cost, const TransportPlan& plan,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << plan_to_json(cost, plan) << "\n";
}

}  // namespace streametm

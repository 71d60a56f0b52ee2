#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streametm/common.hpp"

namespace streametm {

// Normal-Inverse-Gamma observation prior plus a constant hazard H = 1/lambda.
// When mu0 is unset, detectors anchor it to the first observation of each
// series.
struct OcpdPrior {
  std::optional<double> mu0;
  double kappa0 = 1.0;
  double alpha0 = 1.0;
  double beta0 = 0.01;
  double hazard_lambda = 10.0;

  double hazard() const { return 1.0 / hazard_lambda; }

  void validate() const {
    if (kappa0 <= 0.0 || alpha0 <= 0.0 || beta0 <= 0.0 || hazard_lambda <= 1.0)
      throw InvalidConfigError(
          "OcpdPrior: kappa0, alpha0, beta0 must be > 0 and hazard_lambda > 1");
  }
};

namespace detail {

struct SuffStats {
  long long n = 0;
  double mean = 0.0;
  double m2 = 0.0;  // sum of squared deviations from the mean

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
};

// Student-t predictive implied by the NIG posterior of the given run.
inline double log_predictive(const SuffStats& s, double x, double mu0, double kappa0,
                             double alpha0, double beta0) {
  const double n = static_cast<double>(s.n);
  const double kappa_n = kappa0 + n;
  const double mu_n = (kappa0 * mu0 + n * s.mean) / kappa_n;
  const double alpha_n = alpha0 + 0.5 * n;
  const double beta_n =
      beta0 + 0.5 * s.m2 + 0.5 * kappa0 * n * (s.mean - mu0) * (s.mean - mu0) / kappa_n;
  const double df = 2.0 * alpha_n;
  const double scale2 = beta_n * (kappa_n + 1.0) / (alpha_n * kappa_n);
  const double z2 = (x - mu_n) * (x - mu_n) / scale2;
  return std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
         0.5 * std::log(df * M_PI * scale2) - 0.5 * (df + 1.0) * std::log1p(z2 / df);
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

// Posterior over the size of the current run (number of observations since
// the last change point, including the newest). Slot r of the exposed
// posterior is P(current run holds exactly r observations); slot 0 carries
// mass only before any data has arrived.
class RunLengthState {
 public:
  explicit RunLengthState(const OcpdPrior& prior) : prior_(prior) {
    prior_.validate();
    log_probs_ = {0.0};                  // P(run size 0) = 1 before any data
    stats_.emplace_back();               // empty-run sufficient statistics
  }

  int steps_consumed() const { return t_; }

  // log P(run size = r) for r in 0..t
  const std::vector<double>& run_length_log_posterior() const { return log_probs_; }

  // Absorbs one observation; returns the posterior probability that a change
  // point occurred immediately before it (run size 1). The first observation
  // trivially starts a run, so the first call returns 1.
  double update(double x, int max_run_cap = 0) {
    const double mu0 = prior_.mu0.value_or(first_obs_.value_or(x));
    if (!first_obs_) first_obs_ = x;
    const double h = prior_.hazard();
    const double log_h = std::log(h);
    const double log_1mh = std::log1p(-h);
    const double neg_inf = -std::numeric_limits<double>::infinity();

    const int slots = static_cast<int>(log_probs_.size());
    std::vector<double> next(slots + 1, neg_inf);

    // growth: the run keeps absorbing observations
    double total_prev = neg_inf;
    for (int s = 0; s < slots; ++s) {
      if (log_probs_[s] == neg_inf) continue;
      total_prev = detail::log_add(total_prev, log_probs_[s]);
      const double lp = detail::log_predictive(stats_[s], x, mu0, prior_.kappa0,
                                               prior_.alpha0, prior_.beta0);
      next[s + 1] = detail::log_add(next[s + 1], log_probs_[s] + log_1mh + lp);
    }
    // change: a fresh run starts with this observation (prior predictive)
    const double lp0 = detail::log_predictive(detail::SuffStats{}, x, mu0, prior_.kappa0,
                                              prior_.alpha0, prior_.beta0);
    next[1] = detail::log_add(next[1], total_prev + log_h + lp0);

    // normalize in log space
    double norm = neg_inf;
    for (double v : next) norm = detail::log_add(norm, v);
    if (!std::isfinite(norm)) throw NumericalError("ocpd_update: vanished posterior");
    for (double& v : next) v -= norm;

    // shift the sufficient statistics: new run of size s+1 = old run of size s + x
    std::vector<detail::SuffStats> next_stats(stats_.size() + 1);
    for (std::size_t s = 0; s < stats_.size(); ++s) {
      next_stats[s + 1] = stats_[s];
      next_stats[s + 1].add(x);
    }
    log_probs_ = std::move(next);
    stats_ = std::move(next_stats);
    log_probs_[0] = neg_inf;  // a run of size zero is impossible once data exists
    ++t_;

    if (max_run_cap > 0 && static_cast<int>(log_probs_.size()) - 1 > max_run_cap) {
      // collapse the longest-run hypothesis into the cap slot (approximate)
      const int cap = max_run_cap;
      log_probs_[cap] = detail::log_add(log_probs_[cap], log_probs_[cap + 1]);
      log_probs_.resize(cap + 1);
      stats_.resize(cap + 1);
    }
    return std::exp(log_probs_[1]);
  }

 private:
  OcpdPrior prior_;
  std::optional<double> first_obs_;
  std::vector<double> log_probs_;
  std::vector<detail::SuffStats> stats_;
  int t_ = 0;
};

inline double ocpd_update(RunLengthState& state, double x, int max_run_cap = 0) {
  return state.update(x, max_run_cap);
}

struct ChangepointAlert {
  int step = 0;
  int topic_id = 0;
  double probability = 0.0;
};

// Runs OCPD independently per topic; emits an alert whenever the change
// probability clears the threshold at a step past the burn-in.
inline std::vector<ChangepointAlert> detect(const std::map<int, std::vector<double>>& series,
                                            const OcpdPrior& prior, double threshold,
                                            int burn_in = 3, int max_run_cap = 0) {
  std::vector<ChangepointAlert> alerts;
  for (const auto& [topic_id, xs] : series) {
    if (xs.size() < 2) throw InvalidConfigError("detect: series must have length >= 2");
    RunLengthState state(prior);
    for (int t = 0; t < static_cast<int>(xs.size()); ++t) {
      const double cp = state.update(xs[t], max_run_cap);
      if (t >= burn_in && cp > threshold)
        alerts.push_back({t, topic_id, cp});
    }
  }
  std::sort(alerts.begin(), alerts.end(), [](const auto& a, const auto& b) {
    if (a.step != b.step) return a.step < b.step;
    return a.topic_id < b.topic_id;
  });
  return alerts;
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

// A truth step counts as detected when any topic alerts within one step of
// it; alert steps (deduplicated) not within one step of any truth step are
// false positives against the T - |truth| negative steps.
inline std::vector<RocPoint> evaluate_roc(
    const std::set<int>& truth_steps,
    const std::function<std::vector<ChangepointAlert>(double)>& detect_fn,
    const std::vector<double>& grid, int total_steps) {
  if (grid.empty()) throw InvalidConfigError("evaluate_roc: empty threshold grid");
  std::vector<RocPoint> points;
  points.reserve(grid.size());
  for (double thr : grid) {
    if (thr < 0.0 || thr > 1.0)
      throw InvalidConfigError("evaluate_roc: thresholds must be in [0,1]");
    std::set<int> alert_steps;
    for (const auto& a : detect_fn(thr)) alert_steps.insert(a.step);

    int tp = 0;
    for (int s : truth_steps) {
      bool hit = false;
      for (int d = -1; d <= 1 && !hit; ++d) hit = alert_steps.count(s + d) > 0;
      if (hit) ++tp;
    }
    int fp = 0;
    for (int a : alert_steps) {
      bool near_truth = false;
      for (int d = -1; d <= 1 && !near_truth; ++d) near_truth = truth_steps.count(a + d) > 0;
      if (!near_truth) ++fp;
    }
    const int positives = static_cast<int>(truth_steps.size());
    const int negatives = total_steps - positives;
    RocPoint pt;
    pt.threshold = thr;
    pt.tpr = positives > 0 ? static_cast<double>(tp) / positives : 0.0;
    pt.fpr = negatives > 0 ? static_cast<double>(fp) / negatives : 0.0;
    points.push_back(pt);
  }
  return points;
}

// ---------------------------------------------------------------------------
// File formats

inline void save_alerts(const std::vector<ChangepointAlert>& alerts,
                        const nlohmann::json& metadata,
                        const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& a : alerts)
    arr.push_back({{"step", a.step}, {"topic_id", a.topic_id},
                   {"probability", a.probability}});
  nlohmann::json j{{"alerts", arr}, {"metadata", metadata}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline void save_roc_csv(const std::vector<RocPoint>& points,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "threshold,fpr,tpr\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", p.threshold, p.fpr, p.tpr);
    out << buf << '\n';
  }
}

// Reads the stream module's `step,topic_id,proportion` export; topics absent
// at a step contribute observation 0.
inline std::map<int, std::vector<double>> load_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(1, "empty series file");
  std::map<int, std::map<int, double>> raw;  // topic -> step -> value
  int max_step = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    int step = 0, topic = 0;
    double value = 0.0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf", &step, &topic, &value) != 3)
      throw FormatError(lineno, "expected `step,topic_id,proportion`");
    raw[topic][step] = value;
    max_step = std::max(max_step, step);
  }
  if (max_step < 0) throw FormatError(lineno, "no data rows");
  std::map<int, std::vector<double>> series;
  for (const auto& [topic, by_step] : raw) {
    auto& xs = series[topic];
    xs.assign(max_step + 1, 0.0);
    for (const auto& [step, value] : by_step) xs[step] = value;
  }
  return series;
}

}  // namespace streametm

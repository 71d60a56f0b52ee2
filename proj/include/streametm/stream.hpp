#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "streametm/common.hpp"
#include "streametm/corpus.hpp"
#include "streametm/etm.hpp"
#include "streametm/rng.hpp"
#include "streametm/transport.hpp"

namespace streametm {

struct MergeConfig {
  double omega = 0.5;  // memory parameter: weight of the new embedding
  UotConfig uot;
  Metric metric = Metric::cosine();

  void validate() const {
    if (omega < 0.0 || omega > 1.0) throw InvalidConfigError("omega must be in [0,1]");
    uot.validate();
  }
};

// Stable topic ids. Ids are assigned in column order, never reused, and a
// column is never removed, so registry id == column index for the whole run.
struct TopicRegistry {
  std::vector<int> ids;
  Mat alpha;  // L x live-id-count
  std::vector<int> birth_step;
  std::vector<std::map<int, double>> history;  // per step: id -> mean proportion

  int size() const { return static_cast<int>(ids.size()); }
};

struct MatchEntry {
  int new_topic;    // j, index into the freshly trained topics
  int registry_id;  // claimed previous topic
  double mass;      // transported mass T(j, k*)
};

struct DiscoveryEntry {
  int new_topic;
  int registry_id;     // freshly created id
  std::string reason;  // "no_mass" or "contention"
};

struct MergeReport {
  std::vector<MatchEntry> matches;
  std::vector<DiscoveryEntry> discoveries;
  TransportPlan plan;
  CostMatrix cost;
};

struct MergedAlphas {
  Mat alpha;  // L x (K + appended)
  MergeReport report;
};

// alpha_j^(t) = omega * alpha_tilde_j + (1-omega) * alpha_{k*}^(t-1) for each
// matched row; zero-mass rows are appended unchanged as new topics. When
// several rows claim the same previous topic, the largest transported mass
// wins the id and the others are appended as new ids (with their own merged
// value). Previous topics nobody claims keep their embedding.
inline MergedAlphas merge_alphas(const Mat& alpha_new, const Mat& alpha_prev,
                                 const TransportPlan& plan, double omega,
                                 double mass_tol = 1e-8) {
  const int J = static_cast<int>(alpha_new.cols());
  const int K = static_cast<int>(alpha_prev.cols());
  if (alpha_new.rows() != alpha_prev.rows())
    throw DimensionError("merge_alphas: embedding dimension mismatch");
  if (plan.T.rows() != J || plan.T.cols() != K)
    throw DimensionError("merge_alphas: plan shape mismatch");

  const std::vector<int> assigned = assign_from_plan(plan, mass_tol);

  std::vector<int> winner(K, -1);
  for (int j = 0; j < J; ++j) {
    const int k = assigned[j];
    if (k == kNewTopic) continue;
    if (winner[k] < 0 || plan.T(j, k) > plan.T(winner[k], k)) winner[k] = j;
  }

  std::vector<int> appended;  // j's that become new columns, ascending
  for (int j = 0; j < J; ++j) {
    const int k = assigned[j];
    if (k == kNewTopic || winner[k] != j) appended.push_back(j);
  }

  MergedAlphas out;
  out.report.plan = plan;
  out.alpha.resize(alpha_prev.rows(), K + static_cast<int>(appended.size()));
  out.alpha.leftCols(K) = alpha_prev;

  for (int k = 0; k < K; ++k) {
    if (winner[k] < 0) continue;
    const int j = winner[k];
    out.alpha.col(k) = omega * alpha_new.col(j) + (1.0 - omega) * alpha_prev.col(k);
    out.report.matches.push_back({j, k, plan.T(j, k)});
  }
  for (std::size_t i = 0; i < appended.size(); ++i) {
    const int j = appended[i];
    const int id = K + static_cast<int>(i);
    if (assigned[j] == kNewTopic) {
      out.alpha.col(id) = alpha_new.col(j);
      out.report.discoveries.push_back({j, id, "no_mass"});
    } else {
      out.alpha.col(id) =
          omega * alpha_new.col(j) + (1.0 - omega) * alpha_prev.col(assigned[j]);
      out.report.discoveries.push_back({j, id, "contention"});
    }
  }
  return out;
}

struct StreamConfig {
  TrainConfig train;
  MergeConfig merge;
  int initial_topics = 3;
  int hidden_dim = 800;
  int top_n_words = 5;
  std::uint64_t seed = 0;

  void validate() const {
    train.validate();
    merge.validate();
    if (initial_topics < 1 || hidden_dim < 1 || top_n_words < 1)
      throw InvalidConfigError("StreamConfig: counts must be positive");
  }
};

struct StepRecord {
  int step = 0;
  std::map<int, double> proportions;               // id -> mean theta
  std::map<int, std::vector<int>> top_word_ids;    // id -> top-n word ids
  std::optional<MergeReport> merge;                // absent at the first step
  double final_epoch_loss = 0.0;
};

struct StreamState {
  TopicRegistry registry;
  EtmModel model;
  std::vector<StepRecord> per_step;
  int steps_done = 0;
};

namespace detail {

inline void append_head_rows(EtmModel& model, int new_k, std::uint64_t seed) {
  const int old_k = model.topic_count();
  const int H = model.hidden_dim();
  if (new_k == old_k) return;
  Rng rng(seed);
  Mat grown_mu(new_k, H), grown_sig(new_k, H);
  Mat fresh(new_k - old_k, H);
  grown_mu.topRows(old_k) = model.encoder.Wmu;
  xavier_uniform(fresh, H, new_k, rng);
  grown_mu.bottomRows(new_k - old_k) = fresh;
  grown_sig.topRows(old_k) = model.encoder.Wsig;
  xavier_uniform(fresh, H, new_k, rng);
  grown_sig.bottomRows(new_k - old_k) = fresh;
  model.encoder.Wmu = std::move(grown_mu);
  model.encoder.Wsig = std::move(grown_sig);
  Vec bmu = Vec::Zero(new_k), bsig = Vec::Zero(new_k);
  bmu.head(old_k) = model.encoder.bmu;
  bsig.head(old_k) = model.encoder.bsig;
  model.encoder.bmu = std::move(bmu);
  model.encoder.bsig = std::move(bsig);
}

inline std::vector<int> top_n_ids(const Vec& column, int n) {
  std::vector<int> ids(column.size());
  std::iota(ids.begin(), ids.end(), 0);
  const int keep = std::min<int>(n, static_cast<int>(ids.size()));
  std::partial_sort(ids.begin(), ids.begin() + keep, ids.end(), [&](int a, int b) {
    if (column[a] != column[b]) return column[a] > column[b];
    return a < b;
  });
  ids.resize(keep);
  return ids;
}

}  // namespace detail

// One pass of the online loop. First step: train a fresh model and register
// its topics. Later steps: free-train from the registry embeddings, compute
// the transport plan against the previous embeddings, merge, grow the encoder
// heads to the new registry size, and retrain with alpha frozen.
inline void stream_step(StreamState& state, const Batch& batch,
                        std::shared_ptr<const EmbeddingMatrix> rho,
                        const StreamConfig& cfg) {
  cfg.validate();
  if (batch.docs.empty()) throw InvalidConfigError("stream_step: empty batch");
  const int t = state.steps_done;
  const int V = rho->vocab_size();
  const int L = rho->dim();

  TrainConfig train_cfg = cfg.train;
  StepRecord record;
  record.step = t;

  if (t == 0) {
    EtmModel model =
        init_model(V, cfg.initial_topics, L, cfg.hidden_dim, rho, derive_seed(cfg.seed, 1, 0));
    train_cfg.seed = derive_seed(cfg.seed, 2, 0);
    TrainResult trained = train(std::move(model), batch, train_cfg, false);
    state.model = std::move(trained.model);
    record.final_epoch_loss = trained.loss_trace.back();

    state.registry.ids.resize(cfg.initial_topics);
    std::iota(state.registry.ids.begin(), state.registry.ids.end(), 0);
    state.registry.birth_step.assign(cfg.initial_topics, 0);
    state.registry.alpha = state.model.alpha;
  } else {
    const Mat alpha_prev = state.registry.alpha;

    // (a) free training, topic embeddings inherited from the registry
    EtmModel model = state.model;
    model.alpha = alpha_prev;
    train_cfg.seed = derive_seed(cfg.seed, 2, t);
    TrainResult trained = train(std::move(model), batch, train_cfg, false);
    const Mat alpha_tilde = trained.model.alpha;

    // (b) transport plan and merge
    const int J = static_cast<int>(alpha_tilde.cols());
    const int K = static_cast<int>(alpha_prev.cols());
    CostMatrix cost = cost_matrix(alpha_tilde, alpha_prev, cfg.merge.metric);
    TransportPlan plan = uot_solve(cost, Vec::Constant(J, 1.0 / J),
                                   Vec::Constant(K, 1.0 / K), cfg.merge.uot);
    MergedAlphas merged = merge_alphas(alpha_tilde, alpha_prev, plan, cfg.merge.omega,
                                       cfg.merge.uot.mass_tol);
    merged.report.cost = std::move(cost);

    for (const auto& d : merged.report.discoveries) {
      state.registry.ids.push_back(d.registry_id);
      state.registry.birth_step.push_back(t);
    }
    state.registry.alpha = merged.alpha;

    // (c) grow encoder heads and retrain with alpha frozen
    EtmModel retrain_model = std::move(trained.model);
    detail::append_head_rows(retrain_model, state.registry.size(),
                             derive_seed(cfg.seed, 4, t));
    retrain_model.alpha = merged.alpha;
    train_cfg.seed = derive_seed(cfg.seed, 3, t);
    TrainResult retrained = train(std::move(retrain_model), batch, train_cfg, true);
    state.model = std::move(retrained.model);
    record.final_epoch_loss = retrained.loss_trace.back();
    record.merge = std::move(merged.report);
  }

  // (d) per-topic mean proportions and top words
  Vec mean_theta = Vec::Zero(state.registry.size());
  for (const auto& doc : batch.docs) mean_theta += doc_theta_mean(state.model, doc);
  mean_theta /= static_cast<double>(batch.docs.size());

  const Mat beta = compute_beta(rho->rho, state.model.alpha);
  std::map<int, double> proportions;
  for (int k = 0; k < state.registry.size(); ++k) {
    proportions[state.registry.ids[k]] = mean_theta[k];
    record.top_word_ids[state.registry.ids[k]] =
        detail::top_n_ids(beta.col(k), cfg.top_n_words);
  }
  record.proportions = proportions;
  state.registry.history.push_back(std::move(proportions));
  state.per_step.push_back(std::move(record));
  ++state.steps_done;
}

// ---------------------------------------------------------------------------
// Schedules

struct Schedule {
  Mat tau;  // steps x K_true; an all-zero row marks an inactive step
  std::string kind;
  std::uint64_t seed = 0;

  int steps() const { return static_cast<int>(tau.rows()); }
  int topics() const { return static_cast<int>(tau.cols()); }
  bool active(int row) const { return tau.row(row).sum() > 0.0; }
};

// Per step: z_k ~ Bernoulli(p), tau_k = z_k * Dirichlet_k(alpha), then
// renormalized. A step whose z draw is all zero is redrawn.
inline Schedule generate_dynamic_schedule(int k_true, int t_steps, double p,
                                          double dir_alpha, std::uint64_t seed) {
  if (k_true < 1 || t_steps < 1) throw InvalidConfigError("schedule dims must be positive");
  if (!(p > 0.0 && p <= 1.0))
    throw InvalidConfigError("dynamic schedule requires 0 < p <= 1");
  if (!(dir_alpha > 1.0)) throw InvalidConfigError("dynamic schedule requires alpha > 1");

  Rng rng(seed);
  Schedule s;
  s.kind = "dynamic";
  s.seed = seed;
  s.tau.resize(t_steps, k_true);
  for (int t = 0; t < t_steps; ++t) {
    Vec z(k_true);
    do {
      for (int k = 0; k < k_true; ++k) z[k] = rng.bernoulli(p) ? 1.0 : 0.0;
    } while (z.sum() == 0.0);
    const Vec dir = rng.dirichlet(k_true, dir_alpha);
    Vec row = z.cwiseProduct(dir);
    s.tau.row(t) = row / row.sum();
  }
  return s;
}

inline Schedule load_custom_schedule_json(const nlohmann::json& tau_json) {
  if (!tau_json.is_array() || tau_json.empty())
    throw ScheduleError(0, "tau must be a nonempty array of rows");
  const std::size_t k = tau_json.at(0).size();
  Schedule s;
  s.kind = "custom";
  s.tau.resize(tau_json.size(), k);
  for (std::size_t r = 0; r < tau_json.size(); ++r) {
    const auto& row = tau_json.at(r);
    if (row.size() != k) throw ScheduleError(r, "ragged schedule row");
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = row.at(c).get<double>();
      if (v < 0.0) throw ScheduleError(r, "negative proportion");
      s.tau(r, c) = v;
      sum += v;
    }
    if (sum == 0.0) continue;  // inactive step
    if (std::abs(sum - 1.0) > 1e-6)
      throw ScheduleError(r, "active row must sum to 1 (got " + std::to_string(sum) + ")");
    s.tau.row(r) /= sum;
  }
  return s;
}

// Schedule file: {"kind":"custom","tau":[[...]]} or
// {"kind":"dynamic","K":5,"T":11,"p":0.7,"alpha":2.0,"seed":7}.
inline Schedule load_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  const std::string kind = j.value("kind", "custom");
  if (kind == "custom") return load_custom_schedule_json(j.at("tau"));
  if (kind == "dynamic")
    return generate_dynamic_schedule(j.at("K").get<int>(), j.at("T").get<int>(),
                                     j.at("p").get<double>(), j.at("alpha").get<double>(),
                                     j.value("seed", 0ull));
  throw ScheduleError(0, "unknown schedule kind: " + kind);
}

// ---------------------------------------------------------------------------
// Batch sampling from labeled pools

struct LabeledPools {
  std::vector<std::string> labels;                // topic order of tau columns
  std::vector<std::vector<BowDocument>> pools;    // one pool per label
};

inline LabeledPools pools_from_docs(const std::vector<BowDocument>& docs,
                                    const std::vector<std::string>& label_order) {
  LabeledPools p;
  p.labels = label_order;
  p.pools.resize(label_order.size());
  std::map<std::string, int> pos;
  for (std::size_t i = 0; i < label_order.size(); ++i) pos[label_order[i]] = static_cast<int>(i);
  for (const auto& d : docs) {
    auto it = pos.find(d.label);
    if (it != pos.end()) p.pools[it->second].push_back(d);
  }
  return p;
}

// Draws n_docs documents with replacement; the topic of each document is
// drawn categorically from tau_row.
inline Batch sample_batch(const LabeledPools& pools, const Vec& tau_row, int n_docs,
                          std::uint64_t seed, int step_index) {
  if (tau_row.size() != static_cast<Eigen::Index>(pools.pools.size()))
    throw DimensionError("sample_batch: tau width does not match pool count");
  for (int k = 0; k < tau_row.size(); ++k)
    if (tau_row[k] > 0.0 && pools.pools[k].empty())
      throw PoolError(k, "no documents for active topic");

  Rng rng(seed);
  Batch batch;
  batch.step_index = step_index;
  batch.docs.reserve(n_docs);
  for (int i = 0; i < n_docs; ++i) {
    const int topic = rng.categorical(tau_row);
    const auto& pool = pools.pools[topic];
    batch.docs.push_back(pool[rng.below(pool.size())]);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Result serialization

inline nlohmann::json merge_report_to_json(const MergeReport& r) {
  nlohmann::json matches = nlohmann::json::array();
  for (const auto& m : r.matches)
    matches.push_back({{"new_topic", m.new_topic}, {"registry_id", m.registry_id},
                       {"mass", m.mass}});
  nlohmann::json discoveries = nlohmann::json::array();
  for (const auto& d : r.discoveries)
    discoveries.push_back({{"new_topic", d.new_topic}, {"registry_id", d.registry_id},
                           {"reason", d.reason}});
  return nlohmann::json{{"matches", matches}, {"discoveries", discoveries}};
}

inline nlohmann::json stream_result_to_json(const StreamState& state,
                                            const Vocabulary& vocab) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& rec : state.per_step) {
    nlohmann::json proportions = nlohmann::json::object();
    for (const auto& [id, v] : rec.proportions) proportions[std::to_string(id)] = v;
    nlohmann::json top_words = nlohmann::json::object();
    for (const auto& [id, ids] : rec.top_word_ids) {
      nlohmann::json words = nlohmann::json::array();
      for (int w : ids) words.push_back(vocab.tokens[w]);
      top_words[std::to_string(id)] = words;
    }
    nlohmann::json step_json{{"step", rec.step},
                             {"proportions", proportions},
                             {"top_words", top_words}};
    if (rec.merge) step_json["merge"] = merge_report_to_json(*rec.merge);
    steps.push_back(std::move(step_json));
  }
  nlohmann::json registry{{"ids", state.registry.ids},
                          {"birth_step", state.registry.birth_step}};
  return nlohmann::json{{"steps", steps}, {"registry", registry}};
}

inline void write_proportions_csv(const StreamState& state,
                                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,topic_id,proportion\n";
  char buf[64];
  for (const auto& rec : state.per_step) {
    for (const auto& [id, v] : rec.proportions) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << rec.step << ',' << id << ',' << buf << '\n';
    }
  }
}

// series[topic_id][step]; steps where a topic is absent (not yet born) are 0.
inline std::map<int, std::vector<double>> proportion_series(const StreamState& state) {
  std::map<int, std::vector<double>> series;
  const int steps = static_cast<int>(state.per_step.size());
  for (int id : state.registry.ids) series[id] = std::vector<double>(steps, 0.0);
  for (int t = 0; t < steps; ++t)
    for (const auto& [id, v] : state.per_step[t].proportions) series[id][t] = v;
  return series;
}

}  // namespace streametm

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streametm/common.hpp"
#include "streametm/corpus.hpp"
#include "streametm/embeddings.hpp"
#include "streametm/rng.hpp"

namespace streametm {

struct TrainConfig {
  int epochs = 3000;
  int batch_size = 1000;
  double learning_rate = 0.01;
  double weight_decay = 0.006;
  std::uint64_t seed = 0;
  int mc_samples = 1;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || learning_rate <= 0.0 || weight_decay < 0.0 ||
        mc_samples < 1)
      throw InvalidConfigError("TrainConfig: all fields must be positive");
  }
};

struct EncoderParams {
  Mat W1;    // H x V
  Vec b1;    // H
  Mat Wmu;   // K x H
  Vec bmu;   // K
  Mat Wsig;  // K x H
  Vec bsig;  // K
};

struct EtmModel {
  Mat alpha;  // L x K, latent topic embeddings
  EncoderParams encoder;
  std::shared_ptr<const EmbeddingMatrix> rho;

  int vocab_size() const { return static_cast<int>(encoder.W1.cols()); }
  int topic_count() const { return static_cast<int>(alpha.cols()); }
  int embed_dim() const { return static_cast<int>(alpha.rows()); }
  int hidden_dim() const { return static_cast<int>(encoder.W1.rows()); }
};

namespace detail {

inline void xavier_uniform(Mat& m, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (int j = 0; j < m.cols(); ++j)
    for (int i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
}

inline Vec softmax(const Vec& x) {
  Vec y = x.array() - x.maxCoeff();
  y = y.array().exp();
  return y / y.sum();
}

}  // namespace detail

// Xavier-uniform weights, zero biases; deterministic given seed.
inline EtmModel init_model(int V, int K, int L, int H,
                           std::shared_ptr<const EmbeddingMatrix> rho,
                           std::uint64_t seed) {
  if (V < 1 || K < 1 || L < 1 || H < 1) throw InvalidConfigError("init_model: bad dims");
  if (rho && (rho->dim() != L || rho->vocab_size() != V))
    throw DimensionError("init_model: rho shape mismatch");
  Rng rng(seed);
  EtmModel m;
  m.rho = std::move(rho);
  m.encoder.W1.resize(H, V);
  detail::xavier_uniform(m.encoder.W1, V, H, rng);
  m.encoder.b1 = Vec::Zero(H);
  m.encoder.Wmu.resize(K, H);
  detail::xavier_uniform(m.encoder.Wmu, H, K, rng);
  m.encoder.bmu = Vec::Zero(K);
  m.encoder.Wsig.resize(K, H);
  detail::xavier_uniform(m.encoder.Wsig, H, K, rng);
  m.encoder.bsig = Vec::Zero(K);
  m.alpha.resize(L, K);
  detail::xavier_uniform(m.alpha, L, K, rng);
  return m;
}

// beta_k = softmax over the vocabulary of rho^T alpha_k, max-subtracted.
inline Mat compute_beta(const Mat& rho, const Mat& alpha) {
  if (rho.rows() != alpha.rows()) throw DimensionError("compute_beta: L mismatch");
  Mat logits = rho.transpose() * alpha;  // V x K
  Mat beta(logits.rows(), logits.cols());
  for (int k = 0; k < logits.cols(); ++k) beta.col(k) = detail::softmax(logits.col(k));
  return beta;
}

// Variational parameters for one count-normalized bag-of-words vector.
inline std::pair<Vec, Vec> encode(const EtmModel& m, const Vec& x_norm) {
  Vec pre = m.encoder.W1 * x_norm + m.encoder.b1;
  Vec h = pre.cwiseMax(0.0);
  return {m.encoder.Wmu * h + m.encoder.bmu, m.encoder.Wsig * h + m.encoder.bsig};
}

struct ElboBreakdown {
  double total = 0.0;  // recon - kl
  double recon = 0.0;
  double kl = 0.0;
};

struct Gradients {
  Mat dW1;
  Vec db1;
  Mat dWmu;
  Vec dbmu;
  Mat dWsig;
  Vec dbsig;
  Mat dalpha;

  void resize_like(const EtmModel& m) {
    dW1.setZero(m.encoder.W1.rows(), m.encoder.W1.cols());
    db1.setZero(m.encoder.b1.size());
    dWmu.setZero(m.encoder.Wmu.rows(), m.encoder.Wmu.cols());
    dbmu.setZero(m.encoder.bmu.size());
    dWsig.setZero(m.encoder.Wsig.rows(), m.encoder.Wsig.cols());
    dbsig.setZero(m.encoder.bsig.size());
    dalpha.setZero(m.alpha.rows(), m.alpha.cols());
  }
};

// per-document standard-normal draws, one K-column per (doc, sample)
struct NoiseBlock {
  Mat eps;  // K x (num_docs * mc_samples)
  int mc_samples = 1;

  static NoiseBlock draw(int K, int num_docs, int mc_samples, Rng& rng) {
    NoiseBlock n;
    n.mc_samples = mc_samples;
    n.eps.resize(K, static_cast<Eigen::Index>(num_docs) * mc_samples);
    for (Eigen::Index j = 0; j < n.eps.cols(); ++j)
      for (int i = 0; i < K; ++i) n.eps(i, j) = rng.normal();
    return n;
  }
};

namespace detail {

constexpr double kReconFloor = 1e-10;

// Forward pass (and, when grads != nullptr, the hand-derived backward pass
// of the negative ELBO) over the given documents. Document contributions are
// summed in input order. `doc_ids` indexes into batch.docs; noise column
// (slot * mc_samples + s) belongs to slot-th listed document.
inline ElboBreakdown elbo_backward(const EtmModel& m, const Batch& batch,
                                   const std::vector<int>& doc_ids, const NoiseBlock& noise,
                                   bool freeze_alpha, Gradients* grads) {
  const int K = m.topic_count();
  const int S = noise.mc_samples;
  if (S < 1) throw InvalidConfigError("mc_samples must be >= 1");
  if (doc_ids.empty()) throw InvalidConfigError("elbo over an empty batch");
  if (noise.eps.rows() != K ||
      noise.eps.cols() != static_cast<Eigen::Index>(doc_ids.size()) * S)
    throw DimensionError("noise shape does not match batch");

  const Mat beta = compute_beta(m.rho->rho, m.alpha);  // V x K
  Mat wbar;                                            // d(-recon)/d(beta), V x K
  if (grads && !freeze_alpha) wbar.setZero(beta.rows(), K);

  double recon_sum = 0.0;
  double kl_sum = 0.0;

  Vec pre, h, mu, lv, sigma, theta, gtheta, gdelta, gmu, glv, gh, gpre;
  for (std::size_t slot = 0; slot < doc_ids.size(); ++slot) {
    const BowDocument& doc = batch.docs[doc_ids[slot]];
    const double nd = doc.total();

    pre = m.encoder.b1;
    for (const auto& [v, c] : doc.counts) pre += m.encoder.W1.col(v) * (c / nd);
    h = pre.cwiseMax(0.0);
    mu = m.encoder.Wmu * h + m.encoder.bmu;
    lv = m.encoder.Wsig * h + m.encoder.bsig;
    sigma = (0.5 * lv.array()).exp();

    const double kl_d =
        0.5 * (mu.array().square() + lv.array().exp() - lv.array() - 1.0).sum();
    kl_sum += kl_d;

    gmu = mu;                                  // d(kl)/d(mu)
    glv = 0.5 * (lv.array().exp() - 1.0);      // d(kl)/d(logvar)

    double recon_d = 0.0;
    for (int s = 0; s < S; ++s) {
      const auto eps = noise.eps.col(slot * S + s);
      theta = detail::softmax(mu + sigma.cwiseProduct(eps));

      gtheta.setZero(K);
      double recon_s = 0.0;
      for (const auto& [v, c] : doc.counts) {
        const double p = beta.row(v).dot(theta);
        recon_s += c * std::log(p + kReconFloor);
        if (grads) {
          const double w = c / (p + kReconFloor);
          gtheta.noalias() += w * beta.row(v).transpose();
          if (!freeze_alpha) wbar.row(v).noalias() -= (w / S) * theta.transpose();
        }
      }
      recon_d += recon_s / S;

      if (grads) {
        // softmax backward: J^T g = theta .* g - (theta . g) theta
        gdelta = theta.cwiseProduct(gtheta) - theta.dot(gtheta) * theta;
        gmu.noalias() -= gdelta / S;
        glv.array() -= (gdelta.array() * sigma.array() * eps.array()) * (0.5 / S);
      }
    }
    recon_sum += recon_d;

    if (grads) {
      gh = m.encoder.Wmu.transpose() * gmu + m.encoder.Wsig.transpose() * glv;
      gpre = (pre.array() > 0.0).select(gh, 0.0);
      for (const auto& [v, c] : doc.counts) grads->dW1.col(v).noalias() += gpre * (c / nd);
      grads->db1.noalias() += gpre;
      grads->dWmu.noalias() += gmu * h.transpose();
      grads->dbmu.noalias() += gmu;
      grads->dWsig.noalias() += glv * h.transpose();
      grads->dbsig.noalias() += glv;
    }
  }

  if (grads && !freeze_alpha) {
    // back through beta_k = softmax(rho^T alpha_k), all topics at once
    Mat gy(beta.rows(), K);
    for (int k = 0; k < K; ++k) {
      const Vec bw = beta.col(k).cwiseProduct(wbar.col(k));
      gy.col(k) = bw.array() - beta.col(k).dot(wbar.col(k)) * beta.col(k).array();
    }
    grads->dalpha.noalias() += m.rho->rho * gy;
  }

  ElboBreakdown out;
  out.recon = recon_sum;
  out.kl = kl_sum;
  out.total = recon_sum - kl_sum;
  return out;
}

inline std::vector<int> all_doc_ids(const Batch& batch) {
  std::vector<int> ids(batch.docs.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace detail

// ELBO decomposition; deterministic given (model, batch, noise).
inline ElboBreakdown elbo(const EtmModel& m, const Batch& batch, const NoiseBlock& noise) {
  return detail::elbo_backward(m, batch, detail::all_doc_ids(batch), noise, true, nullptr);
}

// Exact analytic gradients of the negative ELBO. With freeze_alpha, dalpha
// stays identically zero.
inline Gradients gradients(const EtmModel& m, const Batch& batch, const NoiseBlock& noise,
                           bool freeze_alpha = false) {
  Gradients g;
  g.resize_like(m);
  detail::elbo_backward(m, batch, detail::all_doc_ids(batch), noise, freeze_alpha, &g);
  return g;
}

namespace detail {

struct AdamState {
  Mat m1, m2;
  void init(Eigen::Index rows, Eigen::Index cols) {
    m1.setZero(rows, cols);
    m2.setZero(rows, cols);
  }
};

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long long t = 0;

  template <typename ParamT, typename GradT>
  void step_param(ParamT& param, const GradT& grad, AdamState& st) const {
    st.m1 = beta1 * st.m1 + (1.0 - beta1) * grad;
    st.m2 = beta2 * st.m2 + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    param.array() -= lr * (st.m1.array() / c1) / ((st.m2.array() / c2).sqrt() + eps);
  }
};

}  // namespace detail

struct TrainResult {
  EtmModel model;
  std::vector<double> loss_trace;  // one entry per epoch, negative ELBO summed over minibatches
};

// Adam training over shuffled minibatches. L2 weight decay is added to the
// gradients of every trained parameter group; with freeze_alpha the topic
// embeddings are left bit-identical.
inline TrainResult train(EtmModel model, const Batch& corpus, const TrainConfig& config,
                         bool freeze_alpha = false) {
  config.validate();
  if (corpus.docs.empty()) throw InvalidConfigError("train: empty corpus");

  Rng rng(config.seed);
  const int K = model.topic_count();
  const int num_docs = static_cast<int>(corpus.docs.size());

  detail::Adam adam{config.learning_rate};
  detail::AdamState sW1, sb1, sWmu, sbmu, sWsig, sbsig, salpha;
  sW1.init(model.encoder.W1.rows(), model.encoder.W1.cols());
  sb1.init(model.encoder.b1.size(), 1);
  sWmu.init(model.encoder.Wmu.rows(), model.encoder.Wmu.cols());
  sbmu.init(model.encoder.bmu.size(), 1);
  sWsig.init(model.encoder.Wsig.rows(), model.encoder.Wsig.cols());
  sbsig.init(model.encoder.bsig.size(), 1);
  if (!freeze_alpha) salpha.init(model.alpha.rows(), model.alpha.cols());

  Gradients g;
  g.resize_like(model);

  std::vector<int> order(num_docs);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> trace(config.epochs, 0.0);

  const double wd = config.weight_decay;
  std::vector<int> minibatch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (int start = 0; start < num_docs; start += config.batch_size) {
      const int stop = std::min(start + config.batch_size, num_docs);
      minibatch.assign(order.begin() + start, order.begin() + stop);
      NoiseBlock noise = NoiseBlock::draw(K, static_cast<int>(minibatch.size()),
                                          config.mc_samples, rng);

      g.dW1.setZero();
      g.db1.setZero();
      g.dWmu.setZero();
      g.dbmu.setZero();
      g.dWsig.setZero();
      g.dbsig.setZero();
      g.dalpha.setZero();
      ElboBreakdown eb =
          detail::elbo_backward(model, corpus, minibatch, noise, freeze_alpha, &g);
      epoch_loss += -eb.total;

      if (wd > 0.0) {
        g.dW1.noalias() += wd * model.encoder.W1;
        g.db1.noalias() += wd * model.encoder.b1;
        g.dWmu.noalias() += wd * model.encoder.Wmu;
        g.dbmu.noalias() += wd * model.encoder.bmu;
        g.dWsig.noalias() += wd * model.encoder.Wsig;
        g.dbsig.noalias() += wd * model.encoder.bsig;
        if (!freeze_alpha) g.dalpha.noalias() += wd * model.alpha;
      }

      ++adam.t;
      adam.step_param(model.encoder.W1, g.dW1, sW1);
      adam.step_param(model.encoder.b1, g.db1, sb1);
      adam.step_param(model.encoder.Wmu, g.dWmu, sWmu);
      adam.step_param(model.encoder.bmu, g.dbmu, sbmu);
      adam.step_param(model.encoder.Wsig, g.dWsig, sWsig);
      adam.step_param(model.encoder.bsig, g.dbsig, sbsig);
      if (!freeze_alpha) adam.step_param(model.alpha, g.dalpha, salpha);
    }
    if (!std::isfinite(epoch_loss)) throw DivergenceError(epoch, "non-finite training loss");
    trace[epoch] = epoch_loss;
  }
  return {std::move(model), std::move(trace)};
}

// Posterior-mean topic proportions softmax(mu); the deterministic statistic
// recorded in the stream history.
inline Vec doc_theta_mean(const EtmModel& m, const BowDocument& doc) {
  const double nd = doc.total();
  Vec pre = m.encoder.b1;
  for (const auto& [v, c] : doc.counts) pre += m.encoder.W1.col(v) * (c / nd);
  Vec h = pre.cwiseMax(0.0);
  return detail::softmax(m.encoder.Wmu * h + m.encoder.bmu);
}

// ---------------------------------------------------------------------------
// Checkpoint format

namespace detail {

inline nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Mat mat_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw FormatError(0, "expected nested array");
  Mat m(j.size(), j.at(0).size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto& row = j.at(i);
    if (static_cast<Eigen::Index>(row.size()) != m.cols())
      throw FormatError(0, "ragged matrix");
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = row.at(k).get<double>();
  }
  return m;
}

inline Vec vec_from_json(const nlohmann::json& j) {
  Vec v(j.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::json model_to_json(const EtmModel& m, std::uint64_t vocab_hash) {
  return nlohmann::json{
      {"V", m.vocab_size()},
      {"K", m.topic_count()},
      {"L", m.embed_dim()},
      {"H", m.hidden_dim()},
      {"alpha", detail::mat_to_json(m.alpha)},
      {"encoder",
       {{"W1", detail::mat_to_json(m.encoder.W1)},
        {"b1", detail::vec_to_json(m.encoder.b1)},
        {"Wmu", detail::mat_to_json(m.encoder.Wmu)},
        {"bmu", detail::vec_to_json(m.encoder.bmu)},
        {"Wsig", detail::mat_to_json(m.encoder.Wsig)},
        {"bsig", detail::vec_to_json(m.encoder.bsig)}}},
      {"vocab_hash", vocab_hash}};
}

inline void save_model(const EtmModel& m, std::uint64_t vocab_hash,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << model_to_json(m, vocab_hash) << "\n";
}

inline EtmModel load_model(const std::filesystem::path& path,
                           std::shared_ptr<const EmbeddingMatrix> rho,
                           std::uint64_t* vocab_hash = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  EtmModel m;
  m.alpha = detail::mat_from_json(j.at("alpha"));
  const auto& enc = j.at("encoder");
  m.encoder.W1 = detail::mat_from_json(enc.at("W1"));
  m.encoder.b1 = detail::vec_from_json(enc.at("b1"));
  m.encoder.Wmu = detail::mat_from_json(enc.at("Wmu"));
  m.encoder.bmu = detail::vec_from_json(enc.at("bmu"));
  m.encoder.Wsig = detail::mat_from_json(enc.at("Wsig"));
  m.encoder.bsig = detail::vec_from_json(enc.at("bsig"));
  m.rho = std::move(rho);
  if (m.rho && (m.rho->dim() != m.embed_dim() || m.rho->vocab_size() != m.vocab_size()))
    throw DimensionError("load_model: rho shape mismatch");
  if (vocab_hash) *vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
  return m;
}

}  // namespace streametm

#pragma once

// SA optimization loops: unsupervised JSA, semi-supervised JSA, the confident
// and self-normalization regularizers, optimizers and the learning-rate
// schedule. Each iteration draws fresh proposals (multiple moves = the batch
// size), revises them, and ascends the stochastic update direction.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jrf/mcmc.hpp"
#include "jrf/nets.hpp"
#include "jrf/rng.hpp"
#include "jrf/synthdata.hpp"
#include "jrf/tensor.hpp"

namespace jrf {

using GradVec = std::vector<std::vector<double>>;

// Large constant rate early, 1/t tail afterwards.
struct SaSchedule {
  double base_rate = 3e-4;
  long hold_iters = 10000;

  double rate(long t) const {
    return t <= hold_iters ? base_rate : base_rate * double(hold_iters) / double(t);
  }
};

struct SslWeights {
  double alpha = 1.0;
  double lambda_c = 0.0;
  double lambda_s = 0.0;
};

enum class OptKind { adam, rmsprop };

// Gradient-ascent optimizer with checkpointable accumulator state.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptKind kind) : kind_(kind) {}

  void init(const std::vector<Tensor>& params) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
    t_ = 0;
  }

  void step(const std::vector<Tensor>& params, const GradVec& grads, double rate) {
    if (m_.empty()) init(params);
    if (grads.size() != params.size()) throw ContractError("optimizer gradient count");
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor p = params[i];
      const auto& g = grads[i];
      if (kind_ == OptKind::adam) {
        const double bc1 = 1.0 - std::pow(beta1_, double(t_));
        const double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t j = 0; j < g.size(); ++j) {
          m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
          v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
          p.at(j) += rate * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
        }
      } else {
        for (std::size_t j = 0; j < g.size(); ++j) {
          v_[i][j] = rms_decay_ * v_[i][j] + (1.0 - rms_decay_) * g[j] * g[j];
          p.at(j) += rate * g[j] / (std::sqrt(v_[i][j]) + eps_);
        }
      }
    }
  }

  OptKind kind() const { return kind_; }

  void save(const std::string& path) const {
    nlohmann::json hdr;
    hdr["type"] = "optimizer";
    hdr["kind"] = kind_ == OptKind::adam ? "adam" : "rmsprop";
    hdr["t"] = t_;
    for (const auto& b : m_) hdr["sizes"].push_back(b.size());
    std::vector<const std::vector<double>*> blocks;
    for (const auto& b : m_) blocks.push_back(&b);
    for (const auto& b : v_) blocks.push_back(&b);
    detail::write_container(path, hdr, blocks);
  }

  void load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    nlohmann::json hdr = detail::read_header(is, path);
    if (hdr.value("type", "") != "optimizer")
      throw FormatError("'" + path + "' is not an optimizer state file");
    kind_ = hdr.at("kind").get<std::string>() == "adam" ? OptKind::adam : OptKind::rmsprop;
    t_ = hdr.at("t").get<long>();
    m_.clear();
    v_.clear();
    for (const auto& s : hdr.at("sizes")) m_.emplace_back(s.get<std::size_t>(), 0.0);
    v_ = m_;
    for (auto& b : m_) detail::read_block(is, b);
    for (auto& b : v_) detail::read_block(is, b);
  }

 private:
  OptKind kind_ = OptKind::adam;
  double eps_ = 1e-8;
  double rms_decay_ = 0.9;
  double beta1_ = 0.9, beta2_ = 0.999;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

namespace detail {

inline GradVec copy_grads(const std::vector<Tensor>& params) {
  GradVec out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.grad_vec());
  return out;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw DimensionError("concat_rows width mismatch");
  Tensor out({a.rows() + b.rows(), a.cols()});
  std::copy(a.vec().begin(), a.vec().end(), out.vec().begin());
  std::copy(b.vec().begin(), b.vec().end(), out.vec().begin() + std::ptrdiff_t(a.size()));
  return out;
}

}  // namespace detail

// Mean over data of du/dtheta minus mean over revised samples, both through
// the marginal potential. This is the stochastic ascent direction for the
// data log-likelihood.
inline GradVec unsup_theta_grad(const EnergyModel& m, const Tensor& data_batch,
                                const JointSample& joint) {
  if (data_batch.rows() == 0 || joint.x_rev.rows() == 0)
    throw ContractError("unsup_theta_grad: empty batch");
  auto params = m.params();
  m.zero_grads();
  Tape tape;
  Tensor j = tape.sub(tape.mean(m.marginal(tape, data_batch)),
                      tape.mean(m.marginal(tape, joint.x_rev)));
  tape.backward(j);
  return detail::copy_grads(params);
}

// Mean over the batch of d/dphi log q(x_rev, h).
inline GradVec phi_grad(Generator& g, const JointSample& joint, bool train_mode = true) {
  if (joint.x_rev.rows() == 0) throw ContractError("phi_grad: empty batch");
  if (joint.x_rev.rows() != joint.h.rows())
    throw ContractError("phi_grad: unmatched (x_rev, h)");
  auto params = g.params();
  g.zero_grads();
  Tape tape;
  Tensor j = tape.mean(g.log_q_joint(tape, joint.x_rev, joint.h, train_mode));
  tape.backward(j);
  return detail::copy_grads(params);
}

namespace detail {

// Entropy of p(y|x) averaged over the batch, as a tape node.
inline Tensor confident_loss_node(Tape& tape, const EnergyModel& m, const Tensor& x) {
  Tensor logits = m.joint(tape, x);
  Tensor lse = tape.logsumexp_rows(logits);
  Tensor logp = tape.sub_cols(logits, lse);
  Tensor p = tape.softmax_rows(logits);
  return tape.mean(tape.scale(tape.sum_rows(tape.mul(p, logp)), -1.0));
}

// (batch mean of u(x))^2 as a tape node.
inline Tensor self_norm_loss_node(Tape& tape, const EnergyModel& m, const Tensor& x) {
  return tape.apply(OpKind::square, tape.mean(m.marginal(tape, x)));
}

// Mean supervised log-posterior log p(y|x) as a tape node.
inline Tensor sup_logp_node(Tape& tape, const EnergyModel& m, const Tensor& x,
                            const std::vector<int>& y) {
  Tensor logits = m.joint(tape, x);
  return tape.mean(tape.sub(tape.gather_cols(logits, y), tape.logsumexp_rows(logits)));
}

}  // namespace detail

inline double confident_loss(const EnergyModel& m, const Tensor& x) {
  if (x.rows() == 0) throw ContractError("confident_loss: empty batch");
  Tape tape;
  GradPause pause(m.params());
  return detail::confident_loss_node(tape, m, x).value();
}

inline double self_norm_loss(const EnergyModel& m, const Tensor& x) {
  if (x.rows() == 0) throw ContractError("self_norm_loss: empty batch");
  Tape tape;
  GradPause pause(m.params());
  return detail::self_norm_loss_node(tape, m, x).value();
}

// Semi-supervised theta update direction: the unsupervised contrast term over
// the pooled unsupervised+supervised draws, the supervised posterior term,
// minus the weighted regularizers (both evaluated on the unlabeled batch).
// The contrast term is the mean over the pooled batch, so the whole direction
// reduces exactly to unsup_theta_grad when alpha and both lambdas are zero;
// the per-batch rescaling relative to the two-sum form is absorbed into the
// learning rate and alpha.
inline GradVec ssl_theta_grad(const EnergyModel& m, const Tensor& unsup_x,
                              const JointSample& joint_u, const Tensor& sup_x,
                              const std::vector<int>& sup_y, const JointSample& joint_s,
                              const SslWeights& w) {
  if (unsup_x.rows() == 0 || sup_x.rows() == 0) throw ContractError("ssl_theta_grad: empty batch");
  for (int y : sup_y)
    if (y < 0 || y >= m.num_classes)
      throw DataError("supervised label " + std::to_string(y) + " out of range");
  auto params = m.params();
  m.zero_grads();
  Tape tape;
  Tensor data_all = detail::concat_rows(unsup_x, sup_x);
  Tensor rev_all = detail::concat_rows(joint_u.x_rev, joint_s.x_rev);
  Tensor j = tape.sub(tape.mean(m.marginal(tape, data_all)),
                      tape.mean(m.marginal(tape, rev_all)));
  if (w.alpha != 0.0)
    j = tape.add(j, tape.scale(detail::sup_logp_node(tape, m, sup_x, sup_y), w.alpha));
  if (w.lambda_c != 0.0)
    j = tape.sub(j, tape.scale(detail::confident_loss_node(tape, m, unsup_x), w.lambda_c));
  if (w.lambda_s != 0.0)
    j = tape.sub(j, tape.scale(detail::self_norm_loss_node(tape, m, unsup_x), w.lambda_s));
  tape.backward(j);
  return detail::copy_grads(params);
}

// ---- training loop -----------------------------------------------------

enum class TrainMode { unsup, ssl };

struct TrainConfig {
  TrainMode mode = TrainMode::unsup;
  long iterations = 10000;
  std::size_t batch_unsup = 100;
  std::size_t batch_sup = 100;
  RevisionConfig revision;
  SaSchedule schedule;
  OptKind optimizer = OptKind::adam;
  SslWeights ssl;
  bool proposal_noise = false;  // noise-free training by default
  long checkpoint_every = 0;    // 0 = only final
  std::string out_dir;          // empty = no files written
  std::uint64_t seed = 0;
};

struct TrainRow {
  long iter = 0;
  double lr = 0, u_data_mean = 0, u_model_mean = 0, sup_ce = 0, r_c = 0, r_s = 0, phi_mse = 0;
};

struct TrainResult {
  std::vector<TrainRow> log;
  bool aborted = false;
  long revision_clips = 0;
};

namespace detail {

inline void write_train_log(const std::string& path, const std::vector<TrainRow>& rows) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "iter,lr,u_data_mean,u_model_mean,sup_ce,r_c,r_s,phi_mse\n";
  for (const auto& r : rows)
    os << r.iter << "," << fmt_double(r.lr) << "," << fmt_double(r.u_data_mean) << ","
       << fmt_double(r.u_model_mean) << "," << fmt_double(r.sup_ce) << ","
       << fmt_double(r.r_c) << "," << fmt_double(r.r_s) << "," << fmt_double(r.phi_mse)
       << "\n";
}

inline Tensor sample_rows(const Tensor& x, std::size_t n, Rng& rng,
                          const std::vector<std::size_t>* pool = nullptr,
                          std::vector<int>* labels_out = nullptr,
                          const std::vector<int>* labels = nullptr) {
  const std::size_t limit = pool ? pool->size() : x.rows();
  Tensor out({n, x.cols()});
  if (labels_out) labels_out->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = pool ? (*pool)[rng.integer(limit)] : rng.integer(limit);
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(r, j);
    if (labels_out) (*labels_out)[i] = (*labels)[r];
  }
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

inline void save_checkpoint(const std::string& dir, const EnergyModel& m, const Generator& g,
                            const Optimizer& ot, const Optimizer& op) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_energy_model(dir + "/energy.jrfm", m);
  save_generator(dir + "/generator.jrfm", g);
  ot.save(dir + "/opt_theta.jrfm");
  op.save(dir + "/opt_phi.jrfm");
}

}  // namespace detail

// Runs the SA loop. In ssl mode `data.labeled_idx` must be non-empty; in
// unsup mode labels are ignored. Emits per-iteration scalars and, when
// out_dir is set, a CSV log plus checkpoints. A non-finite diagnostic aborts
// the run; the last written checkpoint is left in place.
inline TrainResult train(EnergyModel& m, Generator& g, const LabeledSplit& data,
                         const TrainConfig& cfg) {
  if (data.size() == 0) throw DataError("empty dataset");
  if (data.x.cols() != m.input_dim()) throw DimensionError("data width vs energy model");
  if (cfg.mode == TrainMode::ssl && data.labeled_idx.empty())
    throw DataError("ssl training requires a labeled subset");

  Rng rng_data = Rng::derive(cfg.seed, "data");
  Rng rng_proposal = Rng::derive(cfg.seed, "proposal");
  Rng rng_revision = Rng::derive(cfg.seed, "revision");

  Optimizer opt_theta(cfg.optimizer), opt_phi(cfg.optimizer);
  auto theta = m.params();
  auto phi = g.params();
  opt_theta.init(theta);
  opt_phi.init(phi);

  TrainResult res;
  RevisionStats rstats;

  for (long t = 1; t <= cfg.iterations; ++t) {
    const double lr = cfg.schedule.rate(t);
    TrainRow row;
    row.iter = t;
    row.lr = lr;

    Tensor xu = detail::sample_rows(data.x, cfg.batch_unsup, rng_data);
    JointSample ju = propose_and_revise(m, g, cfg.batch_unsup, cfg.revision, rng_proposal,
                                        cfg.proposal_noise, /*train_mode=*/true, &rstats);

    GradVec gt, gp;
    if (cfg.mode == TrainMode::unsup) {
      gt = unsup_theta_grad(m, xu, ju);
      gp = phi_grad(g, ju);
      {
        Tape tape;
        GradPause pause(m.params());
        row.u_data_mean = tape.mean(m.marginal(tape, xu)).value();
      }
      row.u_model_mean = detail::mean_of(ju.energy_after);
    } else {
      std::vector<int> ys;
      Tensor xs = detail::sample_rows(data.x, cfg.batch_sup, rng_data, &data.labeled_idx, &ys,
                                      &data.labels);
      JointSample js = propose_and_revise(m, g, cfg.batch_sup, cfg.revision, rng_proposal,
                                          cfg.proposal_noise, true, &rstats);
      gt = ssl_theta_grad(m, xu, ju, xs, ys, js, cfg.ssl);
      JointSample pooled;
      pooled.h = detail::concat_rows(ju.h, js.h);
      pooled.x_rev = detail::concat_rows(ju.x_rev, js.x_rev);
      pooled.x_prop = detail::concat_rows(ju.x_prop, js.x_prop);
      gp = phi_grad(g, pooled);
      {
        Tape tape;
        GradPause pause(m.params());
        row.u_data_mean =
            tape.mean(m.marginal(tape, detail::concat_rows(xu, xs))).value();
        row.sup_ce = -detail::sup_logp_node(tape, m, xs, ys).value();
      }
      row.u_model_mean =
          0.5 * (detail::mean_of(ju.energy_after) + detail::mean_of(js.energy_after));
      row.r_c = confident_loss(m, xu);
      row.r_s = self_norm_loss(m, xu);
    }

    // Generator regression residual against its own proposals.
    {
      Tape tape;
      GradPause pause(g.params());
      Tensor gx = g.decode(tape, ju.h, /*train_mode=*/false);
      double s = 0.0;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double dd = ju.x_rev.at(i) - gx.at(i);
        s += dd * dd;
      }
      row.phi_mse = s / double(gx.size());
    }

    opt_theta.step(theta, gt, lr);
    opt_phi.step(phi, gp, lr);
    res.log.push_back(row);

    const bool finite = std::isfinite(row.u_data_mean) && std::isfinite(row.u_model_mean) &&
                        std::isfinite(row.sup_ce) && std::isfinite(row.r_c) &&
                        std::isfinite(row.r_s) && std::isfinite(row.phi_mse);
    if (!finite) {
      res.aborted = true;
      break;
    }
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0)
      detail::save_checkpoint(cfg.out_dir, m, g, opt_theta, opt_phi);
  }

  res.revision_clips = rstats.clipped_rows;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    detail::write_train_log(cfg.out_dir + "/train_log.csv", res.log);
    if (!res.aborted) detail::save_checkpoint(cfg.out_dir, m, g, opt_theta, opt_phi);
  }
  return res;
}

}  // namespace jrf

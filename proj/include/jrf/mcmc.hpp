#pragma once

// Sample revision: finite-step SGLD / SGHMC trajectories that move generator
// proposals toward high-potential regions of the random field. The generator
// acts as a Metropolis independence proposal whose accept/reject step is
// skipped; revised pairs (h, x) are treated as draws from p(x) q(h|x).

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "jrf/nets.hpp"
#include "jrf/rng.hpp"
#include "jrf/tensor.hpp"

namespace jrf {

enum class RevisionKernel { sgld, sghmc };

struct RevisionConfig {
  RevisionKernel kernel = RevisionKernel::sgld;
  int steps = 30;         // M
  double gamma = 0.01;    // SGLD step size
  double beta = 0.9;      // SGHMC momentum decay
  double eta = 0.01;      // SGHMC step size
  double delta = 0.0;     // noise scale; 0 = noise-free revision
  double clip_norm = 100.0;  // per-sample max norm of du/dx
};

struct RevisionStats {
  long clipped_rows = 0;  // row-steps where the gradient was clipped
};

// Target potential for revision. Implementations expose per-row values of
// u(x) (or u(x,y) for a fixed class) and the gradient w.r.t. x.
struct Potential {
  virtual ~Potential() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> value(const Tensor& x, std::optional<int> cls) const = 0;
  virtual Tensor grad(const Tensor& x, std::optional<int> cls) const = 0;
};

// Adapts an EnergyModel: marginal potential, or the fixed-class column when
// conditioning. Parameter gradients are paused during the x-gradient pass.
class EnergyPotential final : public Potential {
 public:
  explicit EnergyPotential(const EnergyModel& m) : m_(&m) {}

  std::size_t dim() const override { return m_->input_dim(); }

  std::vector<double> value(const Tensor& x, std::optional<int> cls) const override {
    Tape tape;
    GradPause pause(m_->params());
    Tensor u = cls ? potential_for_class(tape, x, *cls) : m_->marginal(tape, x);
    return u.vec();
  }

  Tensor grad(const Tensor& x, std::optional<int> cls) const override {
    Tape tape;
    GradPause pause(m_->params());
    Tensor xin = x;
    xin.set_requires_grad(true);
    xin.zero_grad();
    Tensor u = cls ? potential_for_class(tape, xin, *cls) : m_->marginal(tape, xin);
    tape.backward(tape.sum(u));
    Tensor g(x.shape());
    g.vec() = xin.grad_vec();
    xin.set_requires_grad(false);
    return g;
  }

 private:
  Tensor potential_for_class(Tape& tape, const Tensor& x, int cls) const {
    if (cls < 0 || cls >= m_->num_classes)
      throw DataError("conditioning class " + std::to_string(cls) + " out of range");
    return tape.gather_cols(m_->joint(tape, x), std::vector<int>(x.rows(), cls));
  }

  const EnergyModel* m_;
};

namespace detail {

inline void clip_rows(Tensor& g, double max_norm, RevisionStats* stats) {
  const std::size_t n = g.rows(), d = g.cols();
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += g.at(r, j) * g.at(r, j);
    const double nrm = std::sqrt(s);
    if (nrm > max_norm) {
      const double f = max_norm / nrm;
      for (std::size_t j = 0; j < d; ++j) g.at(r, j) *= f;
      if (stats) ++stats->clipped_rows;
    }
  }
}

inline void check_finite_grad(const Tensor& g, int step) {
  if (!g.all_finite())
    throw RevisionError("non-finite potential gradient at revision step " +
                        std::to_string(step));
}

}  // namespace detail

// x <- x + gamma * du/dx + delta * U for cfg.steps iterations. The partition
// function is x-free, so du/dx is the full gradient of log p(x).
inline Tensor sgld_revise(const Potential& pot, const Tensor& x0, const RevisionConfig& cfg,
                          Rng& rng, std::optional<int> conditional_class = std::nullopt,
                          RevisionStats* stats = nullptr) {
  Tensor x = Tensor::from(x0.shape(), x0.vec());
  for (int t = 1; t <= cfg.steps; ++t) {
    Tensor g = pot.grad(x, conditional_class);
    detail::check_finite_grad(g, t);
    detail::clip_rows(g, cfg.clip_norm, stats);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double step = cfg.gamma * g.at(i);
      if (cfg.delta > 0.0) step += cfg.delta * rng.normal();
      x.at(i) += step;
    }
  }
  return x;
}

// v <- beta*v + eta * du/dx + delta * U;  x <- x + v. v starts at zero.
inline Tensor sghmc_revise(const Potential& pot, const Tensor& x0, const RevisionConfig& cfg,
                           Rng& rng, std::optional<int> conditional_class = std::nullopt,
                           RevisionStats* stats = nullptr) {
  Tensor x = Tensor::from(x0.shape(), x0.vec());
  std::vector<double> v(x.size(), 0.0);
  for (int t = 1; t <= cfg.steps; ++t) {
    Tensor g = pot.grad(x, conditional_class);
    detail::check_finite_grad(g, t);
    detail::clip_rows(g, cfg.clip_norm, stats);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double vi = cfg.beta * v[i] + cfg.eta * g.at(i);
      if (cfg.delta > 0.0) vi += cfg.delta * rng.normal();
      v[i] = vi;
      x.at(i) += vi;
    }
  }
  return x;
}

inline Tensor revise(const Potential& pot, const Tensor& x0, const RevisionConfig& cfg,
                     Rng& rng, std::optional<int> conditional_class = std::nullopt,
                     RevisionStats* stats = nullptr) {
  return cfg.kernel == RevisionKernel::sgld
             ? sgld_revise(pot, x0, cfg, rng, conditional_class, stats)
             : sghmc_revise(pot, x0, cfg, rng, conditional_class, stats);
}

struct JointSample {
  Tensor h;       // latent draws
  Tensor x_prop;  // ancestral proposals x'
  Tensor x_rev;   // revised samples x
  std::vector<double> energy_before;  // marginal u at x'
  std::vector<double> energy_after;   // marginal u at x
};

// Ancestral proposal followed by revision. h is kept unchanged so (x, h)
// approximates p(x) q(h|x); no accept/reject step is performed.
inline JointSample propose_and_revise(const EnergyModel& m, Generator& g, std::size_t n,
                                      const RevisionConfig& cfg, Rng& rng, bool with_noise,
                                      bool train_mode = true,
                                      RevisionStats* stats = nullptr) {
  GenDraw draw = g.generate(n, rng, with_noise, train_mode);
  EnergyPotential pot(m);
  JointSample js;
  js.h = draw.h;
  js.x_prop = draw.x_prop;
  js.energy_before = pot.value(draw.x_prop, std::nullopt);
  js.x_rev = revise(pot, draw.x_prop, cfg, rng, std::nullopt, stats);
  js.energy_after = pot.value(js.x_rev, std::nullopt);
  return js;
}

}  // namespace jrf

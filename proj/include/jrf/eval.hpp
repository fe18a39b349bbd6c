#pragma once

// Evaluation protocol: mode coverage / realistic ratio, energy-density grids,
// classification error, latent interpolation and class-conditional generation.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "jrf/mcmc.hpp"
#include "jrf/nets.hpp"
#include "jrf/synthdata.hpp"
#include "jrf/tensor.hpp"

namespace jrf {

struct ModeReport {
  double covered_modes_mean = 0, covered_modes_std = 0;
  double realistic_ratio_mean = 0, realistic_ratio_std = 0;
  double threshold = 0;
  int repetitions = 0;
  int samples_per_rep = 0;
};

// Per-repetition sample batch (n x 2 for the toys).
using SampleSource = std::function<Tensor(int rep)>;

// A mode is covered iff some sample lies within `threshold` of it; a sample
// is realistic iff it lies within `threshold` of some mode. Means/stds are
// across repetitions (sample std, n-1 normalization).
inline ModeReport mode_coverage(const SampleSource& source, const std::vector<ModeCenter>& modes,
                                double threshold, int reps, int n_per_rep) {
  if (modes.empty()) throw ContractError("mode_coverage: empty mode list");
  if (!(threshold > 0.0) || reps < 1 || n_per_rep < 1)
    throw ContractError("mode_coverage: bad threshold/reps");
  std::vector<double> covered(reps), ratio(reps);
  const double t2 = threshold * threshold;
  for (int r = 0; r < reps; ++r) {
    Tensor s = source(r);
    if (s.cols() != 2) throw DimensionError("mode_coverage expects 2-D samples");
    const std::size_t n = s.rows();
    std::vector<bool> mode_hit(modes.size(), false);
    std::size_t realistic = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool hit = false;
      for (std::size_t k = 0; k < modes.size(); ++k) {
        const double dx = s.at(i, 0) - modes[k].x, dy = s.at(i, 1) - modes[k].y;
        if (dx * dx + dy * dy <= t2) {
          mode_hit[k] = true;
          hit = true;
        }
      }
      if (hit) ++realistic;
    }
    std::size_t c = 0;
    for (bool b : mode_hit) c += b ? 1 : 0;
    covered[r] = double(c);
    ratio[r] = double(realistic) / double(n);
  }
  auto mean_std = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    s = v.size() > 1 ? std::sqrt(s / double(v.size() - 1)) : 0.0;
    return std::pair<double, double>(m, s);
  };
  ModeReport rep;
  std::tie(rep.covered_modes_mean, rep.covered_modes_std) = mean_std(covered);
  std::tie(rep.realistic_ratio_mean, rep.realistic_ratio_std) = mean_std(ratio);
  rep.threshold = threshold;
  rep.repetitions = reps;
  rep.samples_per_rep = n_per_rep;
  return rep;
}

inline void save_mode_report_csv(const std::string& path, const ModeReport& r,
                                 const std::string& tag) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "tag,covered_modes_mean,covered_modes_std,realistic_ratio_mean,realistic_ratio_std,"
        "threshold,repetitions,samples_per_rep\n";
  os << tag << "," << fmt_double(r.covered_modes_mean) << "," << fmt_double(r.covered_modes_std)
     << "," << fmt_double(r.realistic_ratio_mean) << "," << fmt_double(r.realistic_ratio_std)
     << "," << fmt_double(r.threshold) << "," << r.repetitions << "," << r.samples_per_rep
     << "\n";
}

struct EnergyGrid {
  double x_lo = -5, x_hi = 5, y_lo = -5, y_hi = 5;
  std::size_t res_x = 2, res_y = 2;
  std::vector<double> values;  // row-major, iy * res_x + ix

  double x_at(std::size_t ix) const {
    return res_x == 1 ? x_lo : x_lo + (x_hi - x_lo) * double(ix) / double(res_x - 1);
  }
  double y_at(std::size_t iy) const {
    return res_y == 1 ? y_lo : y_lo + (y_hi - y_lo) * double(iy) / double(res_y - 1);
  }
};

// Evaluates u(x) (or u(x, cls)) on a uniform grid covering the region
// inclusively; exp(u) is the unnormalized density.
inline EnergyGrid energy_grid(const EnergyModel& m, double x_lo, double x_hi, double y_lo,
                              double y_hi, std::size_t res_x, std::size_t res_y,
                              std::optional<int> cls = std::nullopt) {
  if (res_x < 2 || res_y < 2) throw ContractError("energy_grid resolution must be >= 2");
  if (!(x_hi > x_lo) || !(y_hi > y_lo)) throw ContractError("energy_grid degenerate region");
  EnergyGrid grid{x_lo, x_hi, y_lo, y_hi, res_x, res_y, {}};
  grid.values.resize(res_x * res_y);
  EnergyPotential pot(m);
  Tensor row({res_x, 2});
  for (std::size_t iy = 0; iy < res_y; ++iy) {
    for (std::size_t ix = 0; ix < res_x; ++ix) {
      row.at(ix, 0) = grid.x_at(ix);
      row.at(ix, 1) = grid.y_at(iy);
    }
    std::vector<double> u = pot.value(row, cls);
    for (std::size_t ix = 0; ix < res_x; ++ix) grid.values[iy * res_x + ix] = u[ix];
  }
  return grid;
}

inline void save_energy_grid_csv(const std::string& path, const EnergyGrid& g) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "x,y,u\n";
  for (std::size_t iy = 0; iy < g.res_y; ++iy)
    for (std::size_t ix = 0; ix < g.res_x; ++ix)
      os << fmt_double(g.x_at(ix)) << "," << fmt_double(g.y_at(iy)) << ","
         << fmt_double(g.values[iy * g.res_x + ix]) << "\n";
}

// 8-bit PGM, min-max normalized, white = low energy.
inline void save_energy_grid_pgm(const std::string& path, const EnergyGrid& g) {
  double lo = g.values[0], hi = g.values[0];
  for (double v : g.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << "P5\n" << g.res_x << " " << g.res_y << "\n255\n";
  for (std::size_t iy = 0; iy < g.res_y; ++iy)
    for (std::size_t ix = 0; ix < g.res_x; ++ix) {
      const double t = (g.values[iy * g.res_x + ix] - lo) / span;
      os.put(char(int(std::lround(255.0 * (1.0 - t)))));
    }
}

struct ClassifyResult {
  double error_rate = 0.0;
  std::size_t error_count = 0;
  std::size_t total = 0;
};

// Argmax of p(y|x) against labels; ties break toward the smaller class index.
inline ClassifyResult classify_error(const EnergyModel& m, const Tensor& x_test,
                                     const std::vector<int>& y_test) {
  if (x_test.rows() != y_test.size()) throw DimensionError("classify_error label count");
  Tape tape;
  GradPause pause(m.params());
  Tensor logits = m.joint(tape, x_test);
  ClassifyResult res;
  res.total = x_test.rows();
  for (std::size_t i = 0; i < x_test.rows(); ++i) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < logits.cols(); ++k)
      if (logits.at(i, k) > logits.at(i, arg)) arg = k;
    if (int(arg) != y_test[i]) ++res.error_count;
  }
  res.error_rate = res.total ? double(res.error_count) / double(res.total) : 0.0;
  return res;
}

// Decodes G((1-t) h_a + t h_b) at `steps` evenly spaced t in [0,1], noise-free
// with inference-mode batch norm.
inline Tensor interpolate(Generator& g, const std::vector<double>& h_a,
                          const std::vector<double>& h_b, int steps) {
  if (steps < 2) throw ContractError("interpolate needs steps >= 2");
  if (h_a.size() != g.latent_dim || h_b.size() != g.latent_dim)
    throw DimensionError("interpolate latent dim mismatch");
  Tensor h({std::size_t(steps), g.latent_dim});
  for (int s = 0; s < steps; ++s) {
    const double t = double(s) / double(steps - 1);
    for (std::size_t j = 0; j < g.latent_dim; ++j)
      h.at(std::size_t(s), j) = (1.0 - t) * h_a[j] + t * h_b[j];
  }
  GradPause pause(g.params());
  Tape tape;
  return g.decode(tape, h, /*train_mode=*/false);
}

struct ConditionalResult {
  Tensor samples;       // up to n revised samples of the requested class
  std::size_t drawn = 0;  // unconditional draws consumed
  double yield = 0.0;     // keepers / drawn
};

// Unconditional oversampling, posterior-argmax selection, then class-
// conditional revision of the keepers.
inline ConditionalResult conditional_generate(const EnergyModel& m, Generator& g, int cls,
                                              std::size_t n, const RevisionConfig& cfg,
                                              Rng& rng, std::size_t oversample_cap = 0) {
  if (cls < 0 || cls >= m.num_classes) throw DataError("conditional class out of range");
  if (oversample_cap == 0) oversample_cap = 200 * n;
  EnergyPotential pot(m);
  std::vector<double> kept;
  std::size_t drawn = 0, keepers = 0;
  const std::size_t chunk = std::max<std::size_t>(n, 64);
  while (keepers < n && drawn < oversample_cap) {
    GenDraw d = g.generate(chunk, rng, /*with_noise=*/true, /*train_mode=*/false);
    drawn += chunk;
    Tape tape;
    GradPause pause(m.params());
    Tensor logits = m.joint(tape, d.x_prop);
    for (std::size_t i = 0; i < chunk && keepers < n; ++i) {
      std::size_t arg = 0;
      for (std::size_t k = 1; k < logits.cols(); ++k)
        if (logits.at(i, k) > logits.at(i, arg)) arg = k;
      if (int(arg) == cls) {
        for (std::size_t j = 0; j < d.x_prop.cols(); ++j) kept.push_back(d.x_prop.at(i, j));
        ++keepers;
      }
    }
  }
  if (keepers == 0)
    throw YieldError("no samples of class " + std::to_string(cls) + " within cap " +
                     std::to_string(oversample_cap));
  Tensor x0 = Tensor::from({keepers, g.output_dim()}, std::move(kept));
  ConditionalResult res;
  res.samples = revise(pot, x0, cfg, rng, cls);
  res.drawn = drawn;
  res.yield = double(keepers) / double(drawn);
  return res;
}

}  // namespace jrf

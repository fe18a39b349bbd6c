#pragma once

// Dense 64-bit tensors with a define-by-run reverse-mode tape.
// Tensors have shared-storage copy semantics: copying a Tensor aliases the
// same data/grad buffers, which is what lets parameter gradients accumulate
// across tapes.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jrf/errors.hpp"

namespace jrf {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {
struct Storage {
  Shape shape;
  std::vector<double> v;
  std::vector<double> g;  // allocated iff requires_grad
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() : s_(std::make_shared<detail::Storage>()) {}

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : s_(std::make_shared<detail::Storage>()) {
    s_->shape = std::move(shape);
    s_->v.assign(count(s_->shape), fill);
    set_requires_grad(requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    Tensor t;
    if (count(shape) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    t.s_->shape = std::move(shape);
    t.s_->v = std::move(data);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  const Shape& shape() const { return s_->shape; }
  std::size_t size() const { return s_->v.size(); }
  std::size_t ndim() const { return s_->shape.size(); }

  // 2-D accessors; a 1-D tensor behaves as a single row.
  std::size_t rows() const { return ndim() == 2 ? s_->shape[0] : 1; }
  std::size_t cols() const { return ndim() == 2 ? s_->shape[1] : size(); }

  // Shared-storage semantics: accessors are shallow-const, like shared_ptr.
  double* data() const { return s_->v.data(); }
  std::vector<double>& vec() const { return s_->v; }

  double& at(std::size_t i) const { return s_->v[i]; }
  double& at(std::size_t r, std::size_t c) const { return s_->v[r * cols() + c]; }

  double value() const {
    if (size() != 1) throw ContractError("value() on non-scalar tensor " + shape_str(shape()));
    return s_->v[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool rg) const {
    s_->requires_grad = rg;
    if (rg && s_->g.size() != s_->v.size()) s_->g.assign(s_->v.size(), 0.0);
  }

  double* grad() const { return s_->g.data(); }
  std::vector<double>& grad_vec() const { return s_->g; }
  void zero_grad() const { std::fill(s_->g.begin(), s_->g.end(), 0.0); }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

  bool all_finite() const {
    for (double x : s_->v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  static std::size_t count(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
  }

 private:
  std::shared_ptr<detail::Storage> s_;
};

enum class OpKind { identity, leaky_relu, softplus, sigmoid, tanh, exp, log, negate, square };

namespace detail {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

inline MatMap mat(const Tensor& t, std::size_t r, std::size_t c) { return MatMap(t.data(), r, c); }
inline CMatMap cmat(const Tensor& t, std::size_t r, std::size_t c) {
  return CMatMap(t.data(), r, c);
}
inline MatMap gmat(const Tensor& t, std::size_t r, std::size_t c) { return MatMap(t.grad(), r, c); }
inline CMatMap cgmat(const Tensor& t, std::size_t r, std::size_t c) {
  return CMatMap(t.grad(), r, c);
}

inline double unary_f(OpKind k, double x, double slope) {
  switch (k) {
    case OpKind::identity: return x;
    case OpKind::leaky_relu: return x >= 0.0 ? x : slope * x;
    case OpKind::softplus: return x > 30.0 ? x : std::log1p(std::exp(x));
    case OpKind::sigmoid: return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                          : std::exp(x) / (1.0 + std::exp(x));
    case OpKind::tanh: return std::tanh(x);
    case OpKind::exp: return std::exp(x);
    case OpKind::log: return std::log(x);
    case OpKind::negate: return -x;
    case OpKind::square: return x * x;
  }
  return x;
}

// Derivative in terms of the input x and the saved output y.
inline double unary_df(OpKind k, double x, double y, double slope) {
  switch (k) {
    case OpKind::identity: return 1.0;
    case OpKind::leaky_relu: return x >= 0.0 ? 1.0 : slope;
    case OpKind::softplus: return unary_f(OpKind::sigmoid, x, slope);
    case OpKind::sigmoid: return y * (1.0 - y);
    case OpKind::tanh: return 1.0 - y * y;
    case OpKind::exp: return y;
    case OpKind::log: return 1.0 / x;
    case OpKind::negate: return -1.0;
    case OpKind::square: return 2.0 * x;
  }
  return 1.0;
}

}  // namespace detail

// Records primitive ops as they execute; backward() replays the records in
// reverse. A tape is built per forward pass and discarded afterwards.
class Tape {
 public:
  std::size_t size() const { return recs_.size(); }

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
      throw DimensionError("matmul " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    detail::mat(out, m, n).noalias() = detail::cmat(a, m, k) * detail::cmat(b, k, n);
    if (track(out, {a, b})) {
      record([a, b, out, m, k, n]() mutable {
        if (a.requires_grad())
          detail::gmat(a, m, k).noalias() +=
              detail::cgmat(out, m, n) * detail::cmat(b, k, n).transpose();
        if (b.requires_grad())
          detail::gmat(b, k, n).noalias() +=
              detail::cmat(a, m, k).transpose() * detail::cgmat(out, m, n);
      });
    }
    return out;
  }

  // y = x * W^T + b, with W stored out x in and b of length out.
  Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.cols() != w.cols())
      throw DimensionError("linear input " + shape_str(x.shape()) + " vs weight " +
                           shape_str(w.shape()));
    const std::size_t n = x.rows(), in = x.cols(), out = w.rows();
    if (b.size() != out) throw DimensionError("bias length " + std::to_string(b.size()));
    Tensor y({n, out});
    auto ym = detail::mat(y, n, out);
    ym.noalias() = detail::cmat(x, n, in) * detail::cmat(w, out, in).transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), out);
    if (track(y, {x, w, b})) {
      record([x, w, b, y, n, in, out]() mutable {
        auto gy = detail::cgmat(y, n, out);
        if (x.requires_grad())
          detail::gmat(x, n, in).noalias() += gy * detail::cmat(w, out, in);
        if (w.requires_grad())
          detail::gmat(w, out, in).noalias() += gy.transpose() * detail::cmat(x, n, in);
        if (b.requires_grad())
          Eigen::Map<Eigen::RowVectorXd>(b.grad(), out) += gy.colwise().sum();
      });
    }
    return y;
  }

  // Weight-normalized dense layer: effective row i of W is
  // scale[i] * dir[i] / ||dir[i]||.
  Tensor weight_norm_linear(const Tensor& x, const Tensor& dir, const Tensor& scale,
                            const Tensor& b) {
    if (x.ndim() != 2 || dir.ndim() != 2 || x.cols() != dir.cols())
      throw DimensionError("weight_norm_linear input " + shape_str(x.shape()) +
                           " vs direction " + shape_str(dir.shape()));
    const std::size_t n = x.rows(), in = x.cols(), out = dir.rows();
    if (scale.size() != out || b.size() != out)
      throw DimensionError("weight_norm_linear scale/bias length");
    auto norms = std::make_shared<std::vector<double>>(out);
    Tensor w({out, in});
    for (std::size_t i = 0; i < out; ++i) {
      double nrm = detail::cmat(dir, out, in).row(i).norm();
      if (!(nrm > 0.0)) throw DomainError("weight-norm direction row has zero norm");
      (*norms)[i] = nrm;
      detail::mat(w, out, in).row(i) = detail::cmat(dir, out, in).row(i) * (scale.at(i) / nrm);
    }
    Tensor y({n, out});
    auto ym = detail::mat(y, n, out);
    ym.noalias() = detail::cmat(x, n, in) * detail::cmat(w, out, in).transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), out);
    if (track(y, {x, dir, scale, b})) {
      record([x, dir, scale, b, y, w, norms, n, in, out]() mutable {
        auto gy = detail::cgmat(y, n, out);
        if (x.requires_grad())
          detail::gmat(x, n, in).noalias() += gy * detail::cmat(w, out, in);
        if (dir.requires_grad() || scale.requires_grad()) {
          detail::Mat gw = gy.transpose() * detail::cmat(x, n, in);  // out x in
          for (std::size_t i = 0; i < out; ++i) {
            const double nrm = (*norms)[i];
            Eigen::RowVectorXd vhat = detail::cmat(dir, out, in).row(i) / nrm;
            const double proj = gw.row(i).dot(vhat);
            if (scale.requires_grad()) scale.grad()[i] += proj;
            if (dir.requires_grad())
              detail::gmat(dir, out, in).row(i) +=
                  (scale.at(i) / nrm) * (gw.row(i) - proj * vhat);
          }
        }
        if (b.requires_grad())
          Eigen::Map<Eigen::RowVectorXd>(b.grad(), out) += gy.colwise().sum();
      });
    }
    return y;
  }

  // Batch norm over the leading (batch) axis using minibatch statistics.
  // Saved normalized values drive the backward pass; running stats are the
  // caller's business (see nets).
  Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                          std::vector<double>* batch_mean_out = nullptr,
                          std::vector<double>* batch_var_out = nullptr) {
    const std::size_t n = x.rows(), f = x.cols();
    if (n < 1 || gamma.size() != f || beta.size() != f)
      throw DimensionError("batch_norm_train shapes");
    auto mu = std::make_shared<std::vector<double>>(f);
    auto ivar = std::make_shared<std::vector<double>>(f);
    auto xhat = std::make_shared<std::vector<double>>(n * f);
    Tensor y({n, f});
    for (std::size_t j = 0; j < f; ++j) {
      double m = 0.0;
      for (std::size_t r = 0; r < n; ++r) m += x.at(r, j);
      m /= double(n);
      double v = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double d = x.at(r, j) - m;
        v += d * d;
      }
      v /= double(n);
      (*mu)[j] = m;
      (*ivar)[j] = 1.0 / std::sqrt(v + eps);
      for (std::size_t r = 0; r < n; ++r) {
        const double xh = (x.at(r, j) - m) * (*ivar)[j];
        (*xhat)[r * f + j] = xh;
        y.at(r, j) = gamma.at(j) * xh + beta.at(j);
      }
      if (batch_mean_out) (*batch_mean_out)[j] = m;
      if (batch_var_out) (*batch_var_out)[j] = v;
    }
    if (track(y, {x, gamma, beta})) {
      record([x, gamma, beta, y, mu, ivar, xhat, n, f]() mutable {
        for (std::size_t j = 0; j < f; ++j) {
          double sum_gy = 0.0, sum_gy_xh = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            const double gy = y.grad()[r * f + j];
            sum_gy += gy;
            sum_gy_xh += gy * (*xhat)[r * f + j];
          }
          if (gamma.requires_grad()) gamma.grad()[j] += sum_gy_xh;
          if (beta.requires_grad()) beta.grad()[j] += sum_gy;
          if (x.requires_grad()) {
            const double g = gamma.at(j), iv = (*ivar)[j];
            for (std::size_t r = 0; r < n; ++r) {
              const double gy = y.grad()[r * f + j];
              const double xh = (*xhat)[r * f + j];
              x.grad()[r * f + j] +=
                  g * iv * (gy - sum_gy / double(n) - xh * sum_gy_xh / double(n));
            }
          }
        }
      });
    }
    return y;
  }

  // Batch norm with fixed (running) statistics: a per-feature affine map.
  Tensor batch_norm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          const std::vector<double>& running_mean,
                          const std::vector<double>& running_var, double eps) {
    const std::size_t n = x.rows(), f = x.cols();
    if (gamma.size() != f || running_mean.size() != f || running_var.size() != f)
      throw DimensionError("batch_norm_infer shapes");
    auto ivar = std::make_shared<std::vector<double>>(f);
    for (std::size_t j = 0; j < f; ++j) (*ivar)[j] = 1.0 / std::sqrt(running_var[j] + eps);
    Tensor y({n, f});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < f; ++j)
        y.at(r, j) = gamma.at(j) * (x.at(r, j) - running_mean[j]) * (*ivar)[j] + beta.at(j);
    if (track(y, {x, gamma, beta})) {
      auto rm = std::make_shared<std::vector<double>>(running_mean);
      record([x, gamma, beta, y, ivar, rm, n, f]() mutable {
        for (std::size_t j = 0; j < f; ++j) {
          for (std::size_t r = 0; r < n; ++r) {
            const double gy = y.grad()[r * f + j];
            if (x.requires_grad()) x.grad()[r * f + j] += gy * gamma.at(j) * (*ivar)[j];
            if (gamma.requires_grad())
              gamma.grad()[j] += gy * (x.at(r, j) - (*rm)[j]) * (*ivar)[j];
            if (beta.requires_grad()) beta.grad()[j] += gy;
          }
        }
      });
    }
    return y;
  }

  Tensor apply(OpKind k, const Tensor& a, double slope = 0.2) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (k == OpKind::log && !(a.at(i) > 0.0))
        throw DomainError("log of nonpositive input " + std::to_string(a.at(i)));
      out.at(i) = detail::unary_f(k, a.at(i), slope);
      if (!std::isfinite(out.at(i)))
        throw DomainError("non-finite result of elementwise op");
    }
    if (track(out, {a})) {
      record([a, out, k, slope]() mutable {
        for (std::size_t i = 0; i < a.size(); ++i)
          a.grad()[i] += out.grad()[i] * detail::unary_df(k, a.at(i), out.at(i), slope);
      });
    }
    return out;
  }

  Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, +1.0); }
  Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, -1.0); }

  Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * b.at(i);
    if (track(out, {a, b})) {
      record([a, b, out]() mutable {
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (a.requires_grad()) a.grad()[i] += out.grad()[i] * b.at(i);
          if (b.requires_grad()) b.grad()[i] += out.grad()[i] * a.at(i);
        }
      });
    }
    return out;
  }

  Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * c;
    if (track(out, {a})) {
      record([a, out, c]() mutable {
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i] * c;
      });
    }
    return out;
  }

  Tensor add_const(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + c;
    if (track(out, {a})) {
      record([a, out]() mutable {
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i];
      });
    }
    return out;
  }

  // Numerically stabilized log-sum-exp over the class (column) axis.
  Tensor logsumexp_rows(const Tensor& a) {
    if (a.ndim() != 2 || a.cols() < 1)
      throw DimensionError("logsumexp_rows needs n x K with K >= 1, got " +
                           shape_str(a.shape()));
    const std::size_t n = a.rows(), k = a.cols();
    Tensor out({n});
    for (std::size_t r = 0; r < n; ++r) {
      double mx = a.at(r, 0);
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, a.at(r, j));
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::exp(a.at(r, j) - mx);
      out.at(r) = mx + std::log(s);
    }
    if (track(out, {a})) {
      record([a, out, n, k]() mutable {
        for (std::size_t r = 0; r < n; ++r) {
          const double go = out.grad()[r];
          if (go == 0.0) continue;
          for (std::size_t j = 0; j < k; ++j)
            a.grad()[r * k + j] += go * std::exp(a.at(r, j) - out.at(r));
        }
      });
    }
    return out;
  }

  Tensor softmax_rows(const Tensor& a) {
    if (a.ndim() != 2 || a.cols() < 1)
      throw DimensionError("softmax_rows needs n x K, got " + shape_str(a.shape()));
    const std::size_t n = a.rows(), k = a.cols();
    Tensor out({n, k});
    for (std::size_t r = 0; r < n; ++r) {
      double mx = a.at(r, 0);
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, a.at(r, j));
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::exp(a.at(r, j) - mx);
      for (std::size_t j = 0; j < k; ++j) out.at(r, j) = std::exp(a.at(r, j) - mx) / s;
    }
    if (track(out, {a})) {
      record([a, out, n, k]() mutable {
        for (std::size_t r = 0; r < n; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < k; ++j) dot += out.grad()[r * k + j] * out.at(r, j);
          for (std::size_t j = 0; j < k; ++j)
            a.grad()[r * k + j] += out.at(r, j) * (out.grad()[r * k + j] - dot);
        }
      });
    }
    return out;
  }

  Tensor sum(const Tensor& a) {
    Tensor out = Tensor::scalar(std::accumulate(a.vec().begin(), a.vec().end(), 0.0));
    if (track(out, {a})) {
      record([a, out]() mutable {
        const double go = out.grad()[0];
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += go;
      });
    }
    return out;
  }

  Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ContractError("mean of empty tensor");
    const double inv = 1.0 / double(a.size());
    Tensor out = Tensor::scalar(std::accumulate(a.vec().begin(), a.vec().end(), 0.0) * inv);
    if (track(out, {a})) {
      record([a, out, inv]() mutable {
        const double go = out.grad()[0] * inv;
        for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += go;
      });
    }
    return out;
  }

  // n x d -> {n}: sum over the feature axis.
  Tensor sum_rows(const Tensor& a) {
    const std::size_t n = a.rows(), d = a.cols();
    Tensor out({n});
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += a.at(r, j);
      out.at(r) = s;
    }
    if (track(out, {a})) {
      record([a, out, n, d]() mutable {
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < d; ++j) a.grad()[r * d + j] += out.grad()[r];
      });
    }
    return out;
  }

  // Picks column idx[r] from each row r: {n,K}, idx -> {n}.
  Tensor gather_cols(const Tensor& a, const std::vector<int>& idx) {
    const std::size_t n = a.rows(), k = a.cols();
    if (idx.size() != n) throw DimensionError("gather_cols index count");
    Tensor out({n});
    for (std::size_t r = 0; r < n; ++r) {
      if (idx[r] < 0 || std::size_t(idx[r]) >= k)
        throw DataError("class label " + std::to_string(idx[r]) + " out of range [0," +
                        std::to_string(k) + ")");
      out.at(r) = a.at(r, std::size_t(idx[r]));
    }
    if (track(out, {a})) {
      auto ix = std::make_shared<std::vector<int>>(idx);
      record([a, out, ix, n, k]() mutable {
        for (std::size_t r = 0; r < n; ++r)
          a.grad()[r * k + std::size_t((*ix)[r])] += out.grad()[r];
      });
    }
    return out;
  }

  // {n,K} minus per-row value {n}, broadcast across columns.
  Tensor sub_cols(const Tensor& a, const Tensor& v) {
    const std::size_t n = a.rows(), k = a.cols();
    if (v.size() != n) throw DimensionError("sub_cols length");
    Tensor out({n, k});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j) out.at(r, j) = a.at(r, j) - v.at(r);
    if (track(out, {a, v})) {
      record([a, v, out, n, k]() mutable {
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < k; ++j) {
            if (a.requires_grad()) a.grad()[r * k + j] += out.grad()[r * k + j];
            if (v.requires_grad()) v.grad()[r] -= out.grad()[r * k + j];
          }
      });
    }
    return out;
  }

  // Seeds d(loss)/d(loss) = 1 and replays records in reverse. Gradients
  // accumulate; zero them between passes.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ContractError("backward requires a scalar loss");
    if (!loss.requires_grad())
      throw ContractError("loss does not require grad (was it produced under this tape?)");
    loss.grad()[0] += 1.0;
    for (auto it = recs_.rbegin(); it != recs_.rend(); ++it) (*it)();
  }

 private:
  static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
      throw DimensionError(std::string(op) + " shapes " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
  }

  Tensor binary(const Tensor& a, const Tensor& b, double sign) {
    check_same_shape(a, b, sign > 0 ? "add" : "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + sign * b.at(i);
    if (track(out, {a, b})) {
      record([a, b, out, sign]() mutable {
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (a.requires_grad()) a.grad()[i] += out.grad()[i];
          if (b.requires_grad()) b.grad()[i] += sign * out.grad()[i];
        }
      });
    }
    return out;
  }

  bool track(const Tensor& out, std::initializer_list<std::reference_wrapper<const Tensor>> ins) {
    bool any = false;
    for (const Tensor& t : ins) any = any || t.requires_grad();
    if (any) out.set_requires_grad(true);
    return any;
  }

  void record(std::function<void()> back) { recs_.push_back(std::move(back)); }

  std::vector<std::function<void()>> recs_;
};

}  // namespace jrf

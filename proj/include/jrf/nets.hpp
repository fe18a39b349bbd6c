#pragma once

// Model definitions: the random-field potential u(x,y) over K classes and the
// directed generator with Gaussian observation noise. Checkpoints are a JSON
// header followed by raw little-endian float64 parameter blocks.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jrf/rng.hpp"
#include "jrf/tensor.hpp"

namespace jrf {

enum class Activation { identity, leaky_relu, softplus, sigmoid, tanh };

inline const char* act_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::softplus: return "softplus";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

inline Activation act_from_name(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "softplus") return Activation::softplus;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  throw FormatError("unknown activation '" + s + "'");
}

inline OpKind act_op(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return OpKind::leaky_relu;
    case Activation::softplus: return OpKind::softplus;
    case Activation::sigmoid: return OpKind::sigmoid;
    case Activation::tanh: return OpKind::tanh;
    default: return OpKind::identity;
  }
}

// Temporarily drops requires_grad on a parameter set; restores on scope exit.
// Used where a forward/backward pass only needs input gradients.
class GradPause {
 public:
  explicit GradPause(std::vector<Tensor> params) : params_(std::move(params)) {
    prev_.reserve(params_.size());
    for (auto& p : params_) {
      prev_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~GradPause() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(prev_[i]);
  }
  GradPause(const GradPause&) = delete;
  GradPause& operator=(const GradPause&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> prev_;
};

struct DenseLayer {
  Tensor direction;  // out x in; raw weights when weight_norm is off
  Tensor scale;      // {out}, weight-norm gain
  Tensor bias;       // {out}
  bool weight_norm = false;
  Activation act = Activation::identity;
  double lrelu_slope = 0.2;

  static DenseLayer make(std::size_t in, std::size_t out, bool wn, Activation act, Rng& rng,
                         double init_std = 0.05, double lrelu_slope = 0.2) {
    DenseLayer l;
    l.direction = Tensor({out, in}, 0.0, true);
    for (std::size_t i = 0; i < l.direction.size(); ++i)
      l.direction.at(i) = init_std * rng.normal();
    l.scale = Tensor({out}, 1.0, true);
    l.bias = Tensor({out}, 0.0, true);
    l.weight_norm = wn;
    l.act = act;
    l.lrelu_slope = lrelu_slope;
    return l;
  }

  std::size_t in_dim() const { return direction.cols(); }
  std::size_t out_dim() const { return direction.rows(); }

  Tensor forward(Tape& tape, const Tensor& x) const {
    Tensor y = weight_norm ? tape.weight_norm_linear(x, direction, scale, bias)
                           : tape.linear(x, direction, bias);
    if (act == Activation::identity) return y;
    return tape.apply(act_op(act), y, lrelu_slope);
  }

  std::vector<Tensor> params() const {
    if (weight_norm) return {direction, scale, bias};
    return {direction, bias};
  }
};

struct BatchNormLayer {
  Tensor gamma, beta;  // {f}
  std::vector<double> running_mean, running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormLayer make(std::size_t f) {
    BatchNormLayer l;
    l.gamma = Tensor({f}, 1.0, true);
    l.beta = Tensor({f}, 0.0, true);
    l.running_mean.assign(f, 0.0);
    l.running_var.assign(f, 1.0);
    return l;
  }

  Tensor forward(Tape& tape, const Tensor& x, bool train_mode) {
    if (!train_mode)
      return tape.batch_norm_infer(x, gamma, beta, running_mean, running_var, epsilon);
    std::vector<double> bm(gamma.size()), bv(gamma.size());
    Tensor y = tape.batch_norm_train(x, gamma, beta, epsilon, &bm, &bv);
    for (std::size_t j = 0; j < bm.size(); ++j) {
      running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * bm[j];
      running_var[j] = momentum * running_var[j] + (1.0 - momentum) * bv[j];
    }
    return y;
  }

  std::vector<Tensor> params() const { return {gamma, beta}; }
};

// Potential u(x,y): an MLP from d inputs to K per-class potentials.
struct EnergyModel {
  std::vector<DenseLayer> layers;
  int num_classes = 1;

  std::size_t input_dim() const { return layers.front().in_dim(); }

  void check_input(const Tensor& x) const {
    if (x.ndim() != 2 || x.cols() != input_dim())
      throw DimensionError("energy model expects n x " + std::to_string(input_dim()) +
                           ", got " + shape_str(x.shape()));
  }

  // Per-class potentials u(x,y), n x K.
  Tensor joint(Tape& tape, const Tensor& x) const {
    check_input(x);
    Tensor a = x;
    for (const auto& l : layers) a = l.forward(tape, a);
    return a;
  }

  // u(x) = logsumexp_y u(x,y), {n}.
  Tensor marginal(Tape& tape, const Tensor& x) const {
    return tape.logsumexp_rows(joint(tape, x));
  }

  // p(y|x), rows sum to 1.
  Tensor posterior(Tape& tape, const Tensor& x) const {
    return tape.softmax_rows(joint(tape, x));
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (const auto& l : layers)
      for (auto& p : l.params()) out.push_back(p);
    return out;
  }

  void zero_grads() const {
    for (auto& p : params()) p.zero_grad();
  }
};

struct GenLayer {
  DenseLayer dense;  // identity activation; activation applied after optional BN
  std::optional<BatchNormLayer> bn;
  Activation act = Activation::identity;
};

struct GenDraw {
  Tensor h;       // n x latent_dim
  Tensor x_prop;  // n x d
};

// Latent prior N(0,I) plus decoder; q(x|h) = N(G(h), sigma^2 I).
struct Generator {
  std::size_t latent_dim = 2;
  double sigma = 0.05;
  std::vector<GenLayer> layers;

  std::size_t output_dim() const { return layers.back().dense.out_dim(); }

  Tensor decode(Tape& tape, const Tensor& h, bool train_mode) {
    if (h.ndim() != 2 || h.cols() != latent_dim)
      throw DimensionError("generator expects n x " + std::to_string(latent_dim) +
                           " latents, got " + shape_str(h.shape()));
    Tensor a = h;
    for (auto& l : layers) {
      a = l.dense.forward(tape, a);
      if (l.bn) a = l.bn->forward(tape, a, train_mode);
      if (l.act != Activation::identity) a = tape.apply(act_op(l.act), a);
    }
    return a;
  }

  GenDraw generate(std::size_t n, Rng& rng, bool with_noise, bool train_mode) {
    Tensor h({n, latent_dim});
    for (std::size_t i = 0; i < h.size(); ++i) h.at(i) = rng.normal();
    GradPause pause(params());
    Tape tape;
    Tensor x = decode(tape, h, train_mode);
    if (with_noise) {
      if (!(sigma > 0.0)) throw ConfigError("generator sigma must be positive");
      for (std::size_t i = 0; i < x.size(); ++i) x.at(i) += sigma * rng.normal();
    }
    return {h, x};
  }

  // log q(x,h) = log q(h) + log N(x; G(h), sigma^2 I), per row, with all
  // normalizing constants included.
  Tensor log_q_joint(Tape& tape, const Tensor& x, const Tensor& h, bool train_mode) {
    if (!(sigma > 0.0)) throw ConfigError("generator sigma must be positive");
    if (x.rows() != h.rows())
      throw DimensionError("log_q_joint batch mismatch " + shape_str(x.shape()) + " vs " +
                           shape_str(h.shape()));
    const double d = double(output_dim());
    const double log2pi = std::log(2.0 * 3.14159265358979323846);
    Tensor gx = decode(tape, h, train_mode);
    Tensor diff = tape.sub(x, gx);
    Tensor sq = tape.apply(OpKind::square, diff);
    Tensor lik = tape.scale(tape.sum_rows(sq), -1.0 / (2.0 * sigma * sigma));
    Tensor hsq = tape.apply(OpKind::square, h);
    Tensor prior = tape.scale(tape.sum_rows(hsq), -0.5);
    const double c = -0.5 * double(latent_dim) * log2pi -
                     0.5 * d * (log2pi + 2.0 * std::log(sigma));
    return tape.add_const(tape.add(lik, prior), c);
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) {
      for (auto& p : l.dense.params()) out.push_back(p);
      if (l.bn)
        for (auto& p : l.bn->params()) out.push_back(p);
    }
    return out;
  }

  void zero_grads() const {
    for (auto& p : params()) p.zero_grad();
  }
};

// ---- presets ----------------------------------------------------------

inline EnergyModel make_energy_mlp(const std::vector<std::size_t>& dims, int num_classes,
                                   Rng& rng, double slope = 0.2) {
  EnergyModel m;
  m.num_classes = num_classes;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = (i + 2 == dims.size());
    m.layers.push_back(DenseLayer::make(dims[i], dims[i + 1], /*wn=*/true,
                                        last ? Activation::identity : Activation::leaky_relu,
                                        rng, 0.05, slope));
  }
  return m;
}

inline Generator make_generator_mlp(std::size_t latent, const std::vector<std::size_t>& dims,
                                    Activation hidden_act, Activation out_act, bool batch_norm,
                                    double sigma, Rng& rng) {
  Generator g;
  g.latent_dim = latent;
  g.sigma = sigma;
  std::size_t prev = latent;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const bool last = (i + 1 == dims.size());
    GenLayer l;
    l.dense = DenseLayer::make(prev, dims[i], /*wn=*/false, Activation::identity, rng);
    if (batch_norm && !last) l.bn = BatchNormLayer::make(dims[i]);
    l.act = last ? out_act : hidden_act;
    g.layers.push_back(std::move(l));
    prev = dims[i];
  }
  return g;
}

struct ModelPair {
  EnergyModel energy;
  Generator gen;
};

// Named architecture presets. K is fixed per preset: the unsupervised toy
// uses a single potential head, the SSL toy one head per circle.
inline ModelPair make_preset(const std::string& name, Rng& rng) {
  if (name == "toy32")
    return {make_energy_mlp({2, 100, 100, 1}, 1, rng),
            make_generator_mlp(2, {50, 50, 2}, Activation::softplus, Activation::identity,
                               true, 0.05, rng)};
  if (name == "toy2circ")
    return {make_energy_mlp({2, 100, 100, 2}, 2, rng),
            make_generator_mlp(2, {50, 50, 2}, Activation::softplus, Activation::identity,
                               true, 0.05, rng)};
  if (name == "mnist-mlp")
    return {make_energy_mlp({784, 1000, 500, 250, 250, 250, 10}, 10, rng),
            make_generator_mlp(100, {500, 500, 784}, Activation::softplus, Activation::sigmoid,
                               true, 0.1, rng)};
  throw ConfigError("unknown model preset '" + name + "'");
}

// ---- checkpoint container ---------------------------------------------

namespace detail {

constexpr char kModelMagic[8] = {'J', 'R', 'F', 'M', 'D', 'L', '0', '1'};

inline void write_block(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           std::streamsize(v.size() * sizeof(double)));
}

inline void read_block(std::istream& is, std::vector<double>& v) {
  is.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
  if (!is) throw FormatError("model file truncated in parameter block");
}

inline void write_container(const std::string& path, const nlohmann::json& header,
                            const std::vector<const std::vector<double>*>& blocks) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write(kModelMagic, 8);
  const std::string h = header.dump();
  const std::uint32_t len = std::uint32_t(h.size());
  os.write(reinterpret_cast<const char*>(&len), 4);
  os.write(h.data(), std::streamsize(h.size()));
  for (auto* b : blocks) write_block(os, *b);
  if (!os) throw FormatError("write failed for '" + path + "'");
}

inline nlohmann::json read_header(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kModelMagic, 8) != 0)
    throw FormatError("'" + path + "' is not a model file (bad magic at offset 0)");
  std::uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 4);
  std::string h(len, '\0');
  is.read(h.data(), len);
  if (!is) throw FormatError("model header truncated in '" + path + "'");
  return nlohmann::json::parse(h);
}

}  // namespace detail

inline void save_energy_model(const std::string& path, const EnergyModel& m) {
  nlohmann::json hdr;
  hdr["type"] = "energy";
  hdr["num_classes"] = m.num_classes;
  for (const auto& l : m.layers)
    hdr["layers"].push_back({{"in", l.in_dim()},
                             {"out", l.out_dim()},
                             {"weight_norm", l.weight_norm},
                             {"act", act_name(l.act)},
                             {"slope", l.lrelu_slope}});
  std::vector<const std::vector<double>*> blocks;
  for (const auto& l : m.layers) {
    blocks.push_back(&l.direction.vec());
    if (l.weight_norm) blocks.push_back(&l.scale.vec());
    blocks.push_back(&l.bias.vec());
  }
  detail::write_container(path, hdr, blocks);
}

inline EnergyModel load_energy_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  nlohmann::json hdr = detail::read_header(is, path);
  if (hdr.value("type", "") != "energy") throw FormatError("'" + path + "' is not an energy model");
  EnergyModel m;
  m.num_classes = hdr.at("num_classes").get<int>();
  for (const auto& jl : hdr.at("layers")) {
    DenseLayer l;
    const std::size_t in = jl.at("in").get<std::size_t>();
    const std::size_t out = jl.at("out").get<std::size_t>();
    l.direction = Tensor({out, in}, 0.0, true);
    l.scale = Tensor({out}, 1.0, true);
    l.bias = Tensor({out}, 0.0, true);
    l.weight_norm = jl.at("weight_norm").get<bool>();
    l.act = act_from_name(jl.at("act").get<std::string>());
    l.lrelu_slope = jl.at("slope").get<double>();
    detail::read_block(is, l.direction.vec());
    if (l.weight_norm) detail::read_block(is, l.scale.vec());
    detail::read_block(is, l.bias.vec());
    m.layers.push_back(std::move(l));
  }
  return m;
}

inline void save_generator(const std::string& path, const Generator& g) {
  nlohmann::json hdr;
  hdr["type"] = "generator";
  hdr["latent_dim"] = g.latent_dim;
  hdr["sigma"] = g.sigma;
  for (const auto& l : g.layers)
    hdr["layers"].push_back({{"in", l.dense.in_dim()},
                             {"out", l.dense.out_dim()},
                             {"batch_norm", bool(l.bn)},
                             {"act", act_name(l.act)}});
  std::vector<const std::vector<double>*> blocks;
  for (const auto& l : g.layers) {
    blocks.push_back(&l.dense.direction.vec());
    blocks.push_back(&l.dense.bias.vec());
    if (l.bn) {
      blocks.push_back(&l.bn->gamma.vec());
      blocks.push_back(&l.bn->beta.vec());
      blocks.push_back(&l.bn->running_mean);
      blocks.push_back(&l.bn->running_var);
    }
  }
  detail::write_container(path, hdr, blocks);
}

inline Generator load_generator(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  nlohmann::json hdr = detail::read_header(is, path);
  if (hdr.value("type", "") != "generator")
    throw FormatError("'" + path + "' is not a generator model");
  Generator g;
  g.latent_dim = hdr.at("latent_dim").get<std::size_t>();
  g.sigma = hdr.at("sigma").get<double>();
  for (const auto& jl : hdr.at("layers")) {
    GenLayer l;
    const std::size_t in = jl.at("in").get<std::size_t>();
    const std::size_t out = jl.at("out").get<std::size_t>();
    l.dense.direction = Tensor({out, in}, 0.0, true);
    l.dense.scale = Tensor({out}, 1.0, true);
    l.dense.bias = Tensor({out}, 0.0, true);
    l.dense.weight_norm = false;
    l.act = act_from_name(jl.at("act").get<std::string>());
    detail::read_block(is, l.dense.direction.vec());
    detail::read_block(is, l.dense.bias.vec());
    if (jl.at("batch_norm").get<bool>()) {
      l.bn = BatchNormLayer::make(out);
      detail::read_block(is, l.bn->gamma.vec());
      detail::read_block(is, l.bn->beta.vec());
      detail::read_block(is, l.bn->running_mean);
      detail::read_block(is, l.bn->running_var);
    }
    g.layers.push_back(std::move(l));
  }
  return g;
}

}  // namespace jrf

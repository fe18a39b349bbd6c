#pragma once

// Dataset generation and ingestion: ring-of-Gaussians mixtures, class-balanced
// labeled/unlabeled splits, MNIST IDX loading, CSV interchange.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jrf/rng.hpp"
#include "jrf/tensor.hpp"

namespace jrf {

struct CircleSpec {
  double radius = 1.0;
  int modes = 8;
  int label = 0;
};

struct RingMixtureSpec {
  std::vector<CircleSpec> circles;
  double component_std = 0.05;
  std::size_t n_samples = 1600;
};

struct ModeCenter {
  double x = 0.0, y = 0.0;
  int label = 0;
};

struct RingDataset {
  Tensor x;  // n x 2
  std::vector<int> labels;
  std::vector<ModeCenter> centers;
};

inline std::vector<ModeCenter> ring_mode_centers(const RingMixtureSpec& spec) {
  std::vector<ModeCenter> centers;
  for (const auto& c : spec.circles) {
    for (int j = 0; j < c.modes; ++j) {
      const double a = 2.0 * 3.14159265358979323846 * double(j) / double(c.modes);
      centers.push_back({c.radius * std::cos(a), c.radius * std::sin(a), c.label});
    }
  }
  return centers;
}

inline RingDataset gen_ring_mixture(const RingMixtureSpec& spec, Rng& rng) {
  auto centers = ring_mode_centers(spec);
  if (centers.empty()) throw ConfigError("ring mixture spec has zero modes");
  RingDataset ds;
  ds.centers = centers;
  ds.x = Tensor({spec.n_samples, 2});
  ds.labels.resize(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const auto& c = centers[rng.integer(centers.size())];
    ds.x.at(i, 0) = c.x + spec.component_std * rng.normal();
    ds.x.at(i, 1) = c.y + spec.component_std * rng.normal();
    ds.labels[i] = c.label;
  }
  return ds;
}

// Default toy geometries. Radii, per-circle mode counts and component std are
// artifact defaults recorded in the run config, overridable there.
inline RingMixtureSpec toy32_spec() {
  return {{{1.0, 8, 0}, {2.0, 8, 1}, {3.0, 8, 2}, {4.0, 8, 3}}, 0.05, 1600};
}

inline RingMixtureSpec toy2circ_spec() {
  return {{{2.0, 8, 0}, {4.0, 8, 1}}, 0.1, 800};
}

struct LabeledSplit {
  Tensor x;                              // n x d
  std::vector<int> labels;               // empty when unlabeled dataset
  std::vector<std::size_t> labeled_idx;  // rows whose labels are visible

  std::size_t size() const { return x.size() ? x.rows() : 0; }
  bool has_labels() const { return !labels.empty(); }
};

// Class-balanced labeled subset of per_class rows per class, rest unlabeled.
inline LabeledSplit make_split(const Tensor& x, const std::vector<int>& labels,
                               std::size_t per_class, Rng& rng) {
  if (labels.size() != x.rows()) throw DataError("label count does not match rows");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  LabeledSplit split;
  split.x = x;
  split.labels = labels;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < per_class)
      throw DataError("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                      " members, need " + std::to_string(per_class));
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    split.labeled_idx.insert(split.labeled_idx.end(), idx.begin(), idx.begin() + per_class);
  }
  std::sort(split.labeled_idx.begin(), split.labeled_idx.end());
  return split;
}

// ---- IDX (MNIST) -------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const std::string& path, std::size_t offset) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw FormatError("'" + path + "' truncated at offset " + std::to_string(offset));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// Loads an IDX image/label pair into rows of [0,1] pixels.
inline LabeledSplit load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream im(images_path, std::ios::binary);
  if (!im) throw FormatError("cannot open '" + images_path + "'");
  if (detail::read_be32(im, images_path, 0) != 0x00000803u)
    throw FormatError("'" + images_path + "' bad image magic at offset 0");
  const std::size_t n = detail::read_be32(im, images_path, 4);
  const std::size_t rows = detail::read_be32(im, images_path, 8);
  const std::size_t cols = detail::read_be32(im, images_path, 12);
  const std::size_t d = rows * cols;

  std::ifstream lb(labels_path, std::ios::binary);
  if (!lb) throw FormatError("cannot open '" + labels_path + "'");
  if (detail::read_be32(lb, labels_path, 0) != 0x00000801u)
    throw FormatError("'" + labels_path + "' bad label magic at offset 0");
  if (detail::read_be32(lb, labels_path, 4) != n)
    throw FormatError("label count mismatch at offset 4 of '" + labels_path + "'");

  LabeledSplit out;
  out.x = Tensor({n, d});
  out.labels.resize(n);
  std::vector<unsigned char> buf(d);
  for (std::size_t i = 0; i < n; ++i) {
    im.read(reinterpret_cast<char*>(buf.data()), std::streamsize(d));
    if (!im)
      throw FormatError("'" + images_path + "' truncated at offset " +
                        std::to_string(16 + i * d));
    for (std::size_t j = 0; j < d; ++j) out.x.at(i, j) = double(buf[j]) / 255.0;
    int c = lb.get();
    if (c == EOF)
      throw FormatError("'" + labels_path + "' truncated at offset " + std::to_string(8 + i));
    if (c < 0 || c > 9) throw FormatError("label byte " + std::to_string(c) + " out of range");
    out.labels[i] = c;
  }
  for (std::size_t i = 0; i < n; ++i) out.labeled_idx.push_back(i);
  return out;
}

// ---- CSV ---------------------------------------------------------------

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_dataset_csv(const std::string& path, const Tensor& x,
                             const std::vector<int>* labels = nullptr) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  const std::size_t n = x.rows(), d = x.cols();
  for (std::size_t j = 0; j < d; ++j) os << (j ? ",x" : "x") << j;
  if (labels) os << ",y";
  os << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) os << (j ? "," : "") << fmt_double(x.at(i, j));
    if (labels) os << "," << (*labels)[i];
    os << "\n";
  }
}

inline LabeledSplit load_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw FormatError("'" + path + "' is empty");
  bool has_y = line.size() >= 2 && line.rfind(",y") == line.size() - 2;
  std::size_t d = std::count(line.begin(), line.end(), ',') + 1 - (has_y ? 1 : 0);
  std::vector<double> vals;
  std::vector<int> labels;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::getline(ss, cell, ','))
        throw FormatError("'" + path + "' short row " + std::to_string(n + 2));
      vals.push_back(std::stod(cell));
    }
    if (has_y) {
      if (!std::getline(ss, cell, ','))
        throw FormatError("'" + path + "' missing label, row " + std::to_string(n + 2));
      labels.push_back(std::stoi(cell));
    }
    ++n;
  }
  LabeledSplit out;
  out.x = Tensor::from({n, d}, std::move(vals));
  out.labels = std::move(labels);
  if (has_y)
    for (std::size_t i = 0; i < n; ++i) out.labeled_idx.push_back(i);
  return out;
}

}  // namespace jrf

#pragma once

// Named experiment recipes and the config plumbing behind the CLI: resolved
// flat-key JSON configs, seeded end-to-end runs, and artifact emission.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jrf/eval.hpp"
#include "jrf/mcmc.hpp"
#include "jrf/nets.hpp"
#include "jrf/synthdata.hpp"
#include "jrf/train.hpp"

namespace jrf {

constexpr const char* kVersionTag = "jrf-0.1.0";

struct RecipeConfig {
  std::string recipe;  // toy32-unsup | toy2circ-ssl | mnist-smoke
  std::uint64_t seed = 0;
  std::string out_dir;

  // data
  std::string dataset;  // toy32 | toy2circ | mnist
  std::size_t n_samples = 0;
  double component_std = 0.0;
  std::size_t per_class = 0;  // labeled examples per class; 0 = unsupervised
  std::size_t test_samples = 0;
  std::string mnist_images = "data/mnist/train-images-idx3-ubyte";
  std::string mnist_labels = "data/mnist/train-labels-idx1-ubyte";

  std::string preset;  // nets preset name

  TrainConfig train;

  // eval
  double threshold = 0.15;
  int reps = 100;
  int n_per_rep = 100;
  // Revision noise at evaluation time. Training uses the Langevin noise term
  // so the field is fit as a sampler; the reported "revised" samples are the
  // noise-free refinement of the proposals (delta = 0 by default).
  double eval_revision_delta = 0.0;
  double grid_lo = -5.0, grid_hi = 5.0;
  std::size_t grid_res = 100;

  TrainMode mode() const { return train.mode; }
};

inline RecipeConfig make_recipe(const std::string& name) {
  RecipeConfig c;
  c.recipe = name;
  if (name == "toy32-unsup") {
    c.dataset = "toy32";
    c.n_samples = 1600;
    c.component_std = 0.05;
    c.preset = "toy32";
    c.train.mode = TrainMode::unsup;
    c.train.iterations = 20000;
    c.train.batch_unsup = 100;
    c.train.optimizer = OptKind::adam;
    c.train.schedule = {3e-4, 20000};  // flat; decay before 20k stalls coverage
    c.train.revision = {};  // SGLD, M=30, gamma=0.01
    // Langevin noise at the component scale: the discrete chain's stationary
    // spread bottoms out at std = delta (at curvature 1/gamma), so this is
    // the sharpest data the sampler can equilibrate against.
    c.train.revision.delta = c.component_std;
    c.threshold = 0.15;  // 3 * component_std
    c.grid_lo = -5.0;
    c.grid_hi = 5.0;
    return c;
  }
  if (name == "toy2circ-ssl") {
    c.dataset = "toy2circ";
    c.n_samples = 800;
    c.component_std = 0.1;
    c.per_class = 4;
    c.test_samples = 800;
    c.preset = "toy2circ";
    c.train.mode = TrainMode::ssl;
    c.train.iterations = 10000;
    c.train.batch_unsup = 100;
    c.train.batch_sup = 100;
    c.train.optimizer = OptKind::adam;
    c.train.schedule = {3e-4, 10000};
    c.train.revision = {};
    c.train.revision.delta = c.component_std;
    c.train.ssl = {1.0, 0.3, 0.1};
    c.threshold = 0.3;
    c.grid_lo = -6.0;
    c.grid_hi = 6.0;
    return c;
  }
  if (name == "mnist-smoke") {
    c.dataset = "mnist";
    c.n_samples = 1000;
    c.per_class = 10;  // 100 class-balanced labels
    c.test_samples = 1000;
    c.preset = "mnist-mlp";
    c.train.mode = TrainMode::ssl;
    c.train.iterations = 2000;
    c.train.batch_unsup = 10;
    c.train.batch_sup = 10;
    c.train.optimizer = OptKind::rmsprop;
    c.train.schedule = {3e-4, 10000};
    c.train.revision.steps = 20;
    c.train.ssl = {1.0, 0.3, 0.0};
    return c;
  }
  throw ConfigError("unknown recipe '" + name + "'");
}

// ---- flat-key (de)serialization -----------------------------------------

inline nlohmann::json to_flat_json(const RecipeConfig& c) {
  nlohmann::json j;
  j["version"] = kVersionTag;
  j["recipe"] = c.recipe;
  j["seed"] = c.seed;
  j["data.dataset"] = c.dataset;
  j["data.n_samples"] = c.n_samples;
  j["data.component_std"] = c.component_std;
  j["data.per_class"] = c.per_class;
  j["data.test_samples"] = c.test_samples;
  j["data.mnist_images"] = c.mnist_images;
  j["data.mnist_labels"] = c.mnist_labels;
  j["nets.preset"] = c.preset;
  j["revision.kernel"] = c.train.revision.kernel == RevisionKernel::sgld ? "sgld" : "sghmc";
  j["revision.steps"] = c.train.revision.steps;
  j["revision.gamma"] = c.train.revision.gamma;
  j["revision.beta"] = c.train.revision.beta;
  j["revision.eta"] = c.train.revision.eta;
  j["revision.delta"] = c.train.revision.delta;
  j["revision.clip_norm"] = c.train.revision.clip_norm;
  j["train.mode"] = c.train.mode == TrainMode::unsup ? "unsup" : "ssl";
  j["train.iterations"] = c.train.iterations;
  j["train.batch_unsup"] = c.train.batch_unsup;
  j["train.batch_sup"] = c.train.batch_sup;
  j["train.base_rate"] = c.train.schedule.base_rate;
  j["train.hold_iters"] = c.train.schedule.hold_iters;
  j["train.optimizer"] = c.train.optimizer == OptKind::adam ? "adam" : "rmsprop";
  j["train.alpha"] = c.train.ssl.alpha;
  j["train.lambda_c"] = c.train.ssl.lambda_c;
  j["train.lambda_s"] = c.train.ssl.lambda_s;
  j["train.proposal_noise"] = c.train.proposal_noise;
  j["train.checkpoint_every"] = c.train.checkpoint_every;
  j["eval.revision_delta"] = c.eval_revision_delta;
  j["eval.threshold"] = c.threshold;
  j["eval.reps"] = c.reps;
  j["eval.n_per_rep"] = c.n_per_rep;
  j["eval.grid_lo"] = c.grid_lo;
  j["eval.grid_hi"] = c.grid_hi;
  j["eval.grid_res"] = c.grid_res;
  return j;
}

// Applies one "key=value" override; throws ConfigError on unknown keys or
// unparseable values.
inline void apply_override(RecipeConfig& c, const std::string& key, const std::string& val) {
  auto bad_value = [&]() {
    return ConfigError("cannot parse value '" + val + "' for key '" + key + "'");
  };
  auto as_double = [&]() {
    try {
      return std::stod(val);
    } catch (...) {
      throw bad_value();
    }
  };
  auto as_long = [&]() {
    try {
      return std::stol(val);
    } catch (...) {
      throw bad_value();
    }
  };
  auto as_size = [&]() { return std::size_t(as_long()); };
  auto as_bool = [&]() {
    if (val == "true" || val == "1") return true;
    if (val == "false" || val == "0") return false;
    throw bad_value();
  };

  if (key == "recipe") c.recipe = val;
  else if (key == "seed") c.seed = std::uint64_t(as_long());
  else if (key == "out_dir") c.out_dir = val;
  else if (key == "data.dataset") c.dataset = val;
  else if (key == "data.n_samples") c.n_samples = as_size();
  else if (key == "data.component_std") c.component_std = as_double();
  else if (key == "data.per_class") c.per_class = as_size();
  else if (key == "data.test_samples") c.test_samples = as_size();
  else if (key == "data.mnist_images") c.mnist_images = val;
  else if (key == "data.mnist_labels") c.mnist_labels = val;
  else if (key == "nets.preset") c.preset = val;
  else if (key == "revision.kernel") {
    if (val == "sgld") c.train.revision.kernel = RevisionKernel::sgld;
    else if (val == "sghmc") c.train.revision.kernel = RevisionKernel::sghmc;
    else throw bad_value();
  } else if (key == "revision.steps") c.train.revision.steps = int(as_long());
  else if (key == "revision.gamma") c.train.revision.gamma = as_double();
  else if (key == "revision.beta") c.train.revision.beta = as_double();
  else if (key == "revision.eta") c.train.revision.eta = as_double();
  else if (key == "revision.delta") c.train.revision.delta = as_double();
  else if (key == "revision.clip_norm") c.train.revision.clip_norm = as_double();
  else if (key == "train.mode") {
    if (val == "unsup") c.train.mode = TrainMode::unsup;
    else if (val == "ssl") c.train.mode = TrainMode::ssl;
    else throw bad_value();
  } else if (key == "train.iterations") c.train.iterations = as_long();
  else if (key == "train.batch_unsup") c.train.batch_unsup = as_size();
  else if (key == "train.batch_sup") c.train.batch_sup = as_size();
  else if (key == "train.base_rate") c.train.schedule.base_rate = as_double();
  else if (key == "train.hold_iters") c.train.schedule.hold_iters = as_long();
  else if (key == "train.optimizer") {
    if (val == "adam") c.train.optimizer = OptKind::adam;
    else if (val == "rmsprop") c.train.optimizer = OptKind::rmsprop;
    else throw bad_value();
  } else if (key == "train.alpha") c.train.ssl.alpha = as_double();
  else if (key == "train.lambda_c") c.train.ssl.lambda_c = as_double();
  else if (key == "train.lambda_s") c.train.ssl.lambda_s = as_double();
  else if (key == "train.proposal_noise") c.train.proposal_noise = as_bool();
  else if (key == "train.checkpoint_every") c.train.checkpoint_every = as_long();
  else if (key == "eval.revision_delta") c.eval_revision_delta = as_double();
  else if (key == "eval.threshold") c.threshold = as_double();
  else if (key == "eval.reps") c.reps = int(as_long());
  else if (key == "eval.n_per_rep") c.n_per_rep = int(as_long());
  else if (key == "eval.grid_lo") c.grid_lo = as_double();
  else if (key == "eval.grid_hi") c.grid_hi = as_double();
  else if (key == "eval.grid_res") c.grid_res = as_size();
  else throw ConfigError("unknown config key '" + key + "'");
}

inline RecipeConfig from_flat_json(const nlohmann::json& j) {
  if (!j.contains("recipe")) throw ConfigError("config file lacks a 'recipe' key");
  RecipeConfig c = make_recipe(j.at("recipe").get<std::string>());
  for (const auto& [key, value] : j.items()) {
    if (key == "version" || key == "recipe") continue;
    const std::string s = value.is_string() ? value.get<std::string>() : value.dump();
    apply_override(c, key, s);
  }
  return c;
}

inline RecipeConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError("bad JSON in '" + path + "': " + e.what());
  }
  return from_flat_json(j);
}

inline void write_resolved_config(const RecipeConfig& c) {
  std::filesystem::create_directories(c.out_dir);
  std::ofstream os(c.out_dir + "/resolved_config.json");
  if (!os) throw FormatError("cannot write resolved config in '" + c.out_dir + "'");
  os << to_flat_json(c).dump(2) << "\n";
}

// ---- dataset construction ------------------------------------------------

struct RecipeData {
  LabeledSplit train;
  LabeledSplit test;  // held-out rows for classification recipes
  std::vector<ModeCenter> centers;
};

inline RingMixtureSpec ring_spec_for(const RecipeConfig& c) {
  RingMixtureSpec spec = c.dataset == "toy32" ? toy32_spec() : toy2circ_spec();
  if (c.n_samples) spec.n_samples = c.n_samples;
  if (c.component_std > 0.0) spec.component_std = c.component_std;
  return spec;
}

inline RecipeData build_data(const RecipeConfig& c) {
  Rng rng = Rng::derive(c.seed, "data");
  RecipeData d;
  if (c.dataset == "toy32" || c.dataset == "toy2circ") {
    RingMixtureSpec spec = ring_spec_for(c);
    RingDataset ds = gen_ring_mixture(spec, rng);
    d.centers = ds.centers;
    if (c.per_class > 0) {
      d.train = make_split(ds.x, ds.labels, c.per_class, rng);
      RingMixtureSpec tspec = spec;
      tspec.n_samples = c.test_samples ? c.test_samples : spec.n_samples;
      RingDataset ts = gen_ring_mixture(tspec, rng);
      d.test.x = ts.x;
      d.test.labels = ts.labels;
    } else {
      d.train.x = ds.x;
      d.train.labels = ds.labels;
    }
    return d;
  }
  if (c.dataset == "mnist") {
    LabeledSplit full = load_idx(c.mnist_images, c.mnist_labels);
    if (full.size() < c.n_samples + c.test_samples)
      throw DataError("IDX file has " + std::to_string(full.size()) + " rows, need " +
                      std::to_string(c.n_samples + c.test_samples));
    auto slice = [&](std::size_t lo, std::size_t n) {
      LabeledSplit s;
      s.x = Tensor({n, full.x.cols()});
      s.labels.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < full.x.cols(); ++j) s.x.at(i, j) = full.x.at(lo + i, j);
        s.labels[i] = full.labels[lo + i];
      }
      return s;
    };
    LabeledSplit sub = slice(0, c.n_samples);
    d.train = make_split(sub.x, sub.labels, c.per_class, rng);
    d.test = slice(c.n_samples, c.test_samples);
    return d;
  }
  throw ConfigError("unknown dataset '" + c.dataset + "'");
}

// ---- evaluation pass ------------------------------------------------------

struct ToyEvalResult {
  ModeReport generated;
  ModeReport revised;
  double mean_u_before = 0.0;
  double mean_u_after = 0.0;
  Tensor last_generated;  // final repetition's batches, dumped as CSV
  Tensor last_revised;
};

// Table-1 protocol: per repetition draw fresh proposals (ancestral, with
// observation noise, inference-mode batch norm), score them, then revise the
// same proposals and score again so the generated -> revised lift is paired.
inline ToyEvalResult toy_eval(const EnergyModel& m, Generator& g,
                              const std::vector<ModeCenter>& centers,
                              const RecipeConfig& c) {
  Rng rng = Rng::derive(c.seed, "eval");
  std::vector<Tensor> gen_batches, rev_batches;
  EnergyPotential pot(m);
  RevisionConfig rcfg = c.train.revision;
  rcfg.delta = c.eval_revision_delta;
  double before = 0.0, after = 0.0;
  std::size_t count = 0;
  for (int r = 0; r < c.reps; ++r) {
    GenDraw draw = g.generate(std::size_t(c.n_per_rep), rng, /*with_noise=*/true,
                              /*train_mode=*/false);
    Tensor rev = revise(pot, draw.x_prop, rcfg, rng);
    for (double u : pot.value(draw.x_prop, std::nullopt)) before += u;
    for (double u : pot.value(rev, std::nullopt)) after += u;
    count += draw.x_prop.rows();
    gen_batches.push_back(draw.x_prop);
    rev_batches.push_back(rev);
  }
  ToyEvalResult res;
  res.generated = mode_coverage([&](int r) { return gen_batches[std::size_t(r)]; }, centers,
                                c.threshold, c.reps, c.n_per_rep);
  res.revised = mode_coverage([&](int r) { return rev_batches[std::size_t(r)]; }, centers,
                              c.threshold, c.reps, c.n_per_rep);
  res.mean_u_before = before / double(count);
  res.mean_u_after = after / double(count);
  res.last_generated = gen_batches.back();
  res.last_revised = rev_batches.back();
  return res;
}

// ---- end-to-end runs -------------------------------------------------------

struct RecipeResult {
  RecipeConfig config;
  TrainResult train;
  // toys
  ToyEvalResult toy;
  // classification recipes
  ClassifyResult classify;
  bool has_toy_eval = false;
  bool has_classify = false;
};

inline RecipeResult run_recipe(RecipeConfig c) {
  if (c.out_dir.empty()) throw ConfigError("recipe run requires an output directory");
  write_resolved_config(c);

  RecipeData data = build_data(c);
  save_dataset_csv(c.out_dir + "/dataset.csv", data.train.x,
                   data.train.has_labels() ? &data.train.labels : nullptr);
  if (data.test.size() > 0)
    save_dataset_csv(c.out_dir + "/test_dataset.csv", data.test.x, &data.test.labels);

  Rng init_rng = Rng::derive(c.seed, "init");
  ModelPair mp = make_preset(c.preset, init_rng);

  TrainConfig tcfg = c.train;
  tcfg.out_dir = c.out_dir;
  tcfg.seed = c.seed;
  RecipeResult res;
  res.config = c;
  res.train = train(mp.energy, mp.gen, data.train, tcfg);

  const bool toy = c.dataset == "toy32" || c.dataset == "toy2circ";
  if (toy && !res.train.aborted) {
    res.toy = toy_eval(mp.energy, mp.gen, data.centers, c);
    res.has_toy_eval = true;
    save_mode_report_csv(c.out_dir + "/mode_report_generated.csv", res.toy.generated,
                         c.recipe + "-generated");
    save_mode_report_csv(c.out_dir + "/mode_report_revised.csv", res.toy.revised,
                         c.recipe + "-revised");
    save_dataset_csv(c.out_dir + "/samples_generated.csv", res.toy.last_generated);
    save_dataset_csv(c.out_dir + "/samples_revised.csv", res.toy.last_revised);
    EnergyGrid grid = energy_grid(mp.energy, c.grid_lo, c.grid_hi, c.grid_lo, c.grid_hi,
                                  c.grid_res, c.grid_res);
    save_energy_grid_csv(c.out_dir + "/energy_grid.csv", grid);
    save_energy_grid_pgm(c.out_dir + "/energy_grid.pgm", grid);
    for (int k = 0; k < mp.energy.num_classes && mp.energy.num_classes > 1; ++k) {
      EnergyGrid cg = energy_grid(mp.energy, c.grid_lo, c.grid_hi, c.grid_lo, c.grid_hi,
                                  c.grid_res, c.grid_res, k);
      save_energy_grid_csv(c.out_dir + "/energy_grid_class" + std::to_string(k) + ".csv", cg);
      save_energy_grid_pgm(c.out_dir + "/energy_grid_class" + std::to_string(k) + ".pgm", cg);
    }
  }
  if (data.test.size() > 0 && !res.train.aborted) {
    res.classify = classify_error(mp.energy, data.test.x, data.test.labels);
    res.has_classify = true;
  }

  nlohmann::json summary;
  summary["version"] = kVersionTag;
  summary["recipe"] = c.recipe;
  summary["seed"] = c.seed;
  summary["aborted"] = res.train.aborted;
  summary["iterations_run"] = res.train.log.size();
  summary["revision_clips"] = res.train.revision_clips;
  if (!res.train.log.empty()) {
    const TrainRow& last = res.train.log.back();
    summary["final.u_data_mean"] = last.u_data_mean;
    summary["final.u_model_mean"] = last.u_model_mean;
    summary["final.sup_ce"] = last.sup_ce;
    summary["final.r_c"] = last.r_c;
    summary["final.r_s"] = last.r_s;
    summary["final.phi_mse"] = last.phi_mse;
  }
  if (res.has_toy_eval) {
    summary["eval.generated_covered"] = res.toy.generated.covered_modes_mean;
    summary["eval.generated_ratio"] = res.toy.generated.realistic_ratio_mean;
    summary["eval.revised_covered"] = res.toy.revised.covered_modes_mean;
    summary["eval.revised_ratio"] = res.toy.revised.realistic_ratio_mean;
    summary["eval.mean_u_before"] = res.toy.mean_u_before;
    summary["eval.mean_u_after"] = res.toy.mean_u_after;
  }
  if (res.has_classify) {
    summary["eval.test_error"] = res.classify.error_rate;
    summary["eval.test_errors"] = res.classify.error_count;
    summary["eval.test_total"] = res.classify.total;
  }
  std::ofstream os(c.out_dir + "/summary.json");
  if (!os) throw FormatError("cannot write summary in '" + c.out_dir + "'");
  os << summary.dump(2) << "\n";
  return res;
}

}  // namespace jrf

// jrf: reproducible experiment runner for the random-field / generator
// toolkit. One subcommand per pipeline stage plus `repro` for the named
// end-to-end recipes. All randomness derives from --seed via named streams.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "jrf/recipes.hpp"

namespace {

using namespace jrf;

std::vector<double> parse_vector(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (...) {
      throw ConfigError("cannot parse '" + cell + "' in vector '" + s + "'");
    }
  }
  return out;
}

// Shared flags for subcommands that build a RecipeConfig.
struct ConfigArgs {
  std::string recipe;
  std::string config_file;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::string out_dir;

  void attach(CLI::App* cmd, const std::string& default_recipe, bool with_recipe_flag = true) {
    recipe = default_recipe;
    if (with_recipe_flag) cmd->add_option("--recipe", recipe, "named recipe providing defaults");
    cmd->add_option("--config", config_file, "JSON config file (flat dotted keys)");
    cmd->add_option("--set", overrides, "override a config key, e.g. revision.gamma=0.02");
    cmd->add_option("--seed", seed, "master seed for all derived RNG streams");
    cmd->add_option("--out", out_dir, "output directory");
  }

  RecipeConfig resolve(bool recipe_flag_given) const {
    if (!config_file.empty() && recipe_flag_given)
      throw ConfigError("conflicting sources: key '--config' vs key '--recipe'");
    RecipeConfig c = config_file.empty() ? make_recipe(recipe) : load_config(config_file);
    c.seed = seed;
    if (!out_dir.empty()) c.out_dir = out_dir;
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return c;
  }
};

std::string dataset_to_recipe(const std::string& name) {
  if (name == "toy32") return "toy32-unsup";
  if (name == "toy2circ") return "toy2circ-ssl";
  if (name == "mnist") return "mnist-smoke";
  throw ConfigError("unknown dataset recipe '" + name + "'");
}

RevisionConfig revision_from_flags(const std::string& kernel, int steps, double gamma,
                                   double beta, double eta, double delta) {
  RevisionConfig cfg;
  if (kernel == "sgld") cfg.kernel = RevisionKernel::sgld;
  else if (kernel == "sghmc") cfg.kernel = RevisionKernel::sghmc;
  else throw ConfigError("unknown revision kernel '" + kernel + "'");
  cfg.steps = steps;
  cfg.gamma = gamma;
  cfg.beta = beta;
  cfg.eta = eta;
  cfg.delta = delta;
  return cfg;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"joint training of a random-field potential and a directed generator"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads (1 = bit-reproducible, default)")
      ->check(CLI::PositiveNumber);

  // gen-data -------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  auto gen_args = std::make_shared<ConfigArgs>();
  gen_args->attach(gen, "toy32");
  gen->callback([gen_args, gen]() {
    RecipeConfig base;
    std::string name = gen_args->recipe;
    if (name == "toy32" || name == "toy2circ" || name == "mnist") name = dataset_to_recipe(name);
    ConfigArgs args = *gen_args;
    args.recipe = name;
    RecipeConfig c = args.resolve(gen->count("--recipe") > 0 && !gen_args->config_file.empty());
    if (c.out_dir.empty()) c.out_dir = "artifacts/gen-data-" + c.dataset;
    write_resolved_config(c);
    RecipeData data = build_data(c);
    save_dataset_csv(c.out_dir + "/dataset.csv", data.train.x,
                     data.train.has_labels() ? &data.train.labels : nullptr);
    if (data.test.size() > 0)
      save_dataset_csv(c.out_dir + "/test_dataset.csv", data.test.x, &data.test.labels);
    if (!data.centers.empty()) {
      Tensor cx({data.centers.size(), 2});
      std::vector<int> cl(data.centers.size());
      for (std::size_t i = 0; i < data.centers.size(); ++i) {
        cx.at(i, 0) = data.centers[i].x;
        cx.at(i, 1) = data.centers[i].y;
        cl[i] = data.centers[i].label;
      }
      save_dataset_csv(c.out_dir + "/centers.csv", cx, &cl);
    }
    std::cout << "wrote dataset (" << data.train.size() << " rows) to " << c.out_dir << "\n";
  });

  // train-unsup / train-ssl ------------------------------------------------
  for (const char* mode : {"train-unsup", "train-ssl"}) {
    const bool ssl = std::string(mode) == "train-ssl";
    auto* cmd = app.add_subcommand(mode, ssl ? "semi-supervised training run"
                                             : "unsupervised training run");
    auto args = std::make_shared<ConfigArgs>();
    args->attach(cmd, ssl ? "toy2circ-ssl" : "toy32-unsup");
    auto data_csv = std::make_shared<std::string>();
    cmd->add_option("--data", *data_csv, "train on this CSV instead of generated data");
    cmd->callback([args, cmd, data_csv, ssl]() {
      RecipeConfig c = args->resolve(cmd->count("--recipe") > 0);
      c.train.mode = ssl ? TrainMode::ssl : TrainMode::unsup;
      if (c.out_dir.empty()) c.out_dir = std::string("artifacts/") + (ssl ? "ssl" : "unsup");
      if (data_csv->empty()) {
        RecipeResult r = run_recipe(c);
        std::cout << "trained " << c.recipe << ": " << r.train.log.size() << " iterations"
                  << (r.train.aborted ? " (aborted on non-finite diagnostics)" : "") << "\n";
        return;
      }
      write_resolved_config(c);
      LabeledSplit data = load_dataset_csv(*data_csv);
      if (ssl && data.has_labels()) {
        Rng rng = Rng::derive(c.seed, "data");
        data = make_split(data.x, data.labels, c.per_class, rng);
      }
      Rng init_rng = Rng::derive(c.seed, "init");
      ModelPair mp = make_preset(c.preset, init_rng);
      TrainConfig tcfg = c.train;
      tcfg.out_dir = c.out_dir;
      tcfg.seed = c.seed;
      TrainResult r = train(mp.energy, mp.gen, data, tcfg);
      std::cout << "trained on " << *data_csv << ": " << r.log.size() << " iterations"
                << (r.aborted ? " (aborted on non-finite diagnostics)" : "") << "\n";
    });
  }

  // sample ----------------------------------------------------------------
  auto* smp = app.add_subcommand("sample", "draw (optionally revised) samples");
  {
    auto energy = std::make_shared<std::string>();
    auto gener = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("samples.csv");
    auto n = std::make_shared<std::size_t>(100);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto revised = std::make_shared<bool>(false);
    auto kernel = std::make_shared<std::string>("sgld");
    auto steps = std::make_shared<int>(30);
    auto gamma = std::make_shared<double>(0.01);
    auto beta = std::make_shared<double>(0.9);
    auto eta = std::make_shared<double>(0.01);
    auto delta = std::make_shared<double>(0.0);
    smp->add_option("--energy", *energy, "energy model checkpoint")->required();
    smp->add_option("--generator", *gener, "generator checkpoint")->required();
    smp->add_option("--out", *out, "output CSV");
    smp->add_option("--n", *n, "sample count");
    smp->add_option("--seed", *seed, "seed");
    smp->add_flag("--revised", *revised, "apply sample revision");
    smp->add_option("--kernel", *kernel, "sgld|sghmc");
    smp->add_option("--steps", *steps, "revision steps M");
    smp->add_option("--gamma", *gamma, "SGLD step size");
    smp->add_option("--beta", *beta, "SGHMC momentum decay");
    smp->add_option("--eta", *eta, "SGHMC step size");
    smp->add_option("--delta", *delta, "revision noise scale");
    smp->callback([=]() {
      EnergyModel m = load_energy_model(*energy);
      Generator g = load_generator(*gener);
      Rng rng = Rng::derive(*seed, "eval");
      GenDraw d = g.generate(*n, rng, /*with_noise=*/true, /*train_mode=*/false);
      Tensor x = d.x_prop;
      if (*revised) {
        EnergyPotential pot(m);
        x = revise(pot, x, revision_from_flags(*kernel, *steps, *gamma, *beta, *eta, *delta),
                   rng);
      }
      save_dataset_csv(*out, x);
      std::cout << "wrote " << *n << (*revised ? " revised" : " generated") << " samples to "
                << *out << "\n";
    });
  }

  // eval-modes ---------------------------------------------------------------
  auto* ev = app.add_subcommand("eval-modes", "mode coverage / realistic ratio of a sample CSV");
  {
    auto samples = std::make_shared<std::string>();
    auto recipe = std::make_shared<std::string>("toy32");
    auto threshold = std::make_shared<double>(0.0);
    auto out = std::make_shared<std::string>();
    ev->add_option("--samples", *samples, "CSV of 2-D samples")->required();
    ev->add_option("--recipe", *recipe, "toy32|toy2circ (supplies true mode centers)");
    ev->add_option("--threshold", *threshold, "coverage threshold (default 3*component_std)");
    ev->add_option("--out", *out, "optional mode report CSV");
    ev->callback([=]() {
      RingMixtureSpec spec = *recipe == "toy32"   ? toy32_spec()
                             : *recipe == "toy2circ" ? toy2circ_spec()
                                                     : throw ConfigError("unknown recipe '" +
                                                                         *recipe + "'");
      const double t = *threshold > 0.0 ? *threshold : 3.0 * spec.component_std;
      LabeledSplit s = load_dataset_csv(*samples);
      auto centers = ring_mode_centers(spec);
      ModeReport r = mode_coverage([&](int) { return s.x; }, centers, t, 1, int(s.x.rows()));
      std::cout << "covered_modes=" << r.covered_modes_mean
                << " realistic_ratio=" << r.realistic_ratio_mean << " threshold=" << t << "\n";
      if (!out->empty()) save_mode_report_csv(*out, r, *recipe);
    });
  }

  // energy-grid ---------------------------------------------------------------
  auto* gr = app.add_subcommand("energy-grid", "evaluate u on a grid, export CSV + PGM");
  {
    auto energy = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("energy_grid");
    auto lo = std::make_shared<double>(-5.0);
    auto hi = std::make_shared<double>(5.0);
    auto res = std::make_shared<std::size_t>(100);
    auto cls = std::make_shared<int>(-1);
    gr->add_option("--energy", *energy, "energy model checkpoint")->required();
    gr->add_option("--out", *out, "output path prefix");
    gr->add_option("--lo", *lo, "grid lower bound (both axes)");
    gr->add_option("--hi", *hi, "grid upper bound (both axes)");
    gr->add_option("--res", *res, "grid resolution per axis");
    gr->add_option("--cls", *cls, "fixed class (-1 = marginal)");
    gr->callback([=]() {
      EnergyModel m = load_energy_model(*energy);
      std::optional<int> c = *cls >= 0 ? std::optional<int>(*cls) : std::nullopt;
      EnergyGrid g = energy_grid(m, *lo, *hi, *lo, *hi, *res, *res, c);
      save_energy_grid_csv(*out + ".csv", g);
      save_energy_grid_pgm(*out + ".pgm", g);
      std::cout << "wrote " << *out << ".csv and " << *out << ".pgm\n";
    });
  }

  // classify --------------------------------------------------------------
  auto* cf = app.add_subcommand("classify", "argmax-posterior error on a labeled CSV");
  {
    auto energy = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    cf->add_option("--energy", *energy, "energy model checkpoint")->required();
    cf->add_option("--data", *data, "labeled CSV (x columns + y)")->required();
    cf->callback([=]() {
      EnergyModel m = load_energy_model(*energy);
      LabeledSplit s = load_dataset_csv(*data);
      if (!s.has_labels()) throw DataError("'" + *data + "' carries no labels");
      ClassifyResult r = classify_error(m, s.x, s.labels);
      std::cout << "error_rate=" << r.error_rate << " errors=" << r.error_count << "/"
                << r.total << "\n";
    });
  }

  // interpolate -------------------------------------------------------------
  auto* ip = app.add_subcommand("interpolate", "decode a latent-space line segment");
  {
    auto gener = std::make_shared<std::string>();
    auto from = std::make_shared<std::string>();
    auto to = std::make_shared<std::string>();
    auto steps = std::make_shared<int>(8);
    auto out = std::make_shared<std::string>("interpolation.csv");
    ip->add_option("--generator", *gener, "generator checkpoint")->required();
    ip->add_option("--from", *from, "start latent, comma-separated")->required();
    ip->add_option("--to", *to, "end latent, comma-separated")->required();
    ip->add_option("--steps", *steps, "interpolation points");
    ip->add_option("--out", *out, "output CSV");
    ip->callback([=]() {
      Generator g = load_generator(*gener);
      Tensor path = interpolate(g, parse_vector(*from), parse_vector(*to), *steps);
      save_dataset_csv(*out, path);
      std::cout << "wrote " << *steps << " interpolation points to " << *out << "\n";
    });
  }

  // cond-gen ---------------------------------------------------------------
  auto* cg = app.add_subcommand("cond-gen", "class-conditional generation");
  {
    auto energy = std::make_shared<std::string>();
    auto gener = std::make_shared<std::string>();
    auto cls = std::make_shared<int>(0);
    auto n = std::make_shared<std::size_t>(100);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto steps = std::make_shared<int>(30);
    auto gamma = std::make_shared<double>(0.01);
    auto out = std::make_shared<std::string>("cond_samples.csv");
    cg->add_option("--energy", *energy, "energy model checkpoint")->required();
    cg->add_option("--generator", *gener, "generator checkpoint")->required();
    cg->add_option("--cls", *cls, "target class")->required();
    cg->add_option("--n", *n, "sample count");
    cg->add_option("--seed", *seed, "seed");
    cg->add_option("--steps", *steps, "conditional revision steps");
    cg->add_option("--gamma", *gamma, "revision step size");
    cg->add_option("--out", *out, "output CSV");
    cg->callback([=]() {
      EnergyModel m = load_energy_model(*energy);
      Generator g = load_generator(*gener);
      Rng rng = Rng::derive(*seed, "eval");
      RevisionConfig cfg;
      cfg.steps = *steps;
      cfg.gamma = *gamma;
      ConditionalResult r = conditional_generate(m, g, *cls, *n, cfg, rng);
      save_dataset_csv(*out, r.samples);
      std::cout << "wrote " << r.samples.rows() << " class-" << *cls << " samples to " << *out
                << " (yield " << r.yield << ")\n";
    });
  }

  // repro ------------------------------------------------------------------
  auto* rp = app.add_subcommand("repro", "run a named recipe end-to-end");
  {
    auto recipe = std::make_shared<std::string>();
    auto args = std::make_shared<ConfigArgs>();
    rp->add_option("recipe", *recipe, "toy32-unsup | toy2circ-ssl | mnist-smoke")->required();
    args->attach(rp, "", /*with_recipe_flag=*/false);
    rp->callback([recipe, args]() {
      ConfigArgs a = *args;
      a.recipe = *recipe;
      RecipeConfig c = a.resolve(false);
      if (c.out_dir.empty())
        c.out_dir = "artifacts/" + c.recipe + "-seed" + std::to_string(c.seed);
      RecipeResult r = run_recipe(c);
      std::cout << "recipe " << c.recipe << " done in " << c.out_dir;
      if (r.has_toy_eval)
        std::cout << ": generated " << r.toy.generated.covered_modes_mean << "/"
                  << r.toy.generated.realistic_ratio_mean << ", revised "
                  << r.toy.revised.covered_modes_mean << "/"
                  << r.toy.revised.realistic_ratio_mean;
      if (r.has_classify) std::cout << ": test error " << r.classify.error_rate;
      std::cout << "\n";
    });
  }

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

#include "mapo/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "binary_io.hpp"
#include "mapo/config.hpp"
#include "mapo/error.hpp"
#include "mapo/pgm.hpp"
#include "mapo/preference.hpp"
#include "mapo/trainer.hpp"

namespace mapo::cli {

namespace fs = std::filesystem;

namespace {

class RunFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void echo_config(const std::string& dir, const config::RunConfig& cfg) {
  fs::create_directories(dir);
  io::write_file(path_in(dir, "resolved_config.ini"), config::to_ini(cfg));
}

std::string csv_of(const std::vector<train::RoundLog>& logs) { return train::log_csv(logs); }

std::string eval_csv(const train::EvalTable& t) {
  std::ostringstream os;
  train::write_eval_csv(os, t);
  return os.str();
}

data::Dataset load_matching_dataset(const config::RunConfig& cfg) {
  if (!fs::exists(path_in(cfg.data_dir, "manifest.tsv")))
    throw DataError(fmt::format("no dataset at {}; run gen-data first", cfg.data_dir));
  auto ds = data::load_dataset(cfg.data_dir);
  if (!(ds.spec == cfg.data))
    throw config::ConfigError(
        fmt::format("dataset at {} was generated from a different [data] section; rerun gen-data --force", cfg.data_dir));
  return ds;
}

segnet::ModelState load_matching_checkpoint(const std::string& path, const config::RunConfig& cfg) {
  auto state = segnet::load_checkpoint(path);
  if (!(segnet::resolved(state.spec()) == segnet::resolved(cfg.model)))
    throw config::ConfigError(fmt::format("checkpoint {} does not match the [model] section", path));
  return state;
}

std::string fmt_num(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& config_path, bool force, std::ostream& out) {
  const auto cfg = config::load(config_path);
  if (fs::exists(cfg.data_dir) && !fs::is_empty(cfg.data_dir)) {
    if (!force)
      throw config::ConfigError(fmt::format("{} already exists and is not empty; pass --force to overwrite", cfg.data_dir));
    fs::remove_all(cfg.data_dir);
  }
  echo_config(cfg.data_dir, cfg);
  const auto ds = data::generate_dataset(cfg.data);
  data::save_dataset(cfg.data_dir, ds);
  const auto sizes = data::split_sizes(cfg.data.count);
  out << fmt::format("wrote {} samples to {} (train {}, val {}, test {})\n", ds.samples.size(), cfg.data_dir,
                     sizes.train, sizes.val, sizes.test);
  return kExitOk;
}

segnet::ModelState run_warmup(const config::RunConfig& cfg, const data::Dataset& ds, const std::string& dir,
                              std::ostream& out) {
  const auto init = segnet::init_params(cfg.model, cfg.train.seeds.init);
  auto res = train::warmup_train(init, ds, cfg.train);
  if (cfg.train.warmup_epochs > 0) res.best.append_lineage(fmt::format("warmup:{}", cfg.train.warmup_epochs));
  segnet::save_checkpoint(path_in(dir, "warm.ckpt"), res.best);
  io::write_file(path_in(dir, "warmup_log.csv"), csv_of(res.logs));
  out << fmt::format("warm-up: {} epochs, best val dice {}\n", cfg.train.warmup_epochs, fmt_num(res.best_val_dice));
  return res.best;
}

int cmd_warmup(const std::string& config_path, std::optional<std::size_t> epochs, std::ostream& out) {
  auto cfg = config::load(config_path);
  if (epochs) cfg.train.warmup_epochs = *epochs;
  cfg.validate();
  echo_config(cfg.output_dir, cfg);
  const auto ds = load_matching_dataset(cfg);
  run_warmup(cfg, ds, cfg.output_dir, out);
  return kExitOk;
}

struct StrategyRow {
  std::string name;
  train::EvalTable test;
  double best_val_dice = 0.0;
  double round1_variance = std::nan("");
  double mean_variance = std::nan("");
};

double mean_record_variance(const pref::PreferenceSet& set) {
  double s = 0.0;
  for (const auto& r : set.records) s += r.mean_variance;
  return set.records.empty() ? 0.0 : s / static_cast<double>(set.records.size());
}

StrategyRow run_mapo(const config::RunConfig& cfg, const data::Dataset& ds, const segnet::ModelState& warm,
                     const std::string& dir, std::ostream& out) {
  echo_config(dir, cfg);
  const auto prefs_dir = path_in(dir, "prefs");
  fs::create_directories(prefs_dir);
  const auto observer = [&](std::uint64_t round, const segnet::ModelState&, const pref::PreferenceSet& prefs) {
    pref::save_preference_set(path_in(prefs_dir, fmt::format("round-{}.prefs", round)), prefs);
  };
  const auto res = train::online_loop(warm, ds, cfg.train, observer);
  segnet::save_checkpoint(path_in(dir, "best.ckpt"), res.best);
  segnet::save_checkpoint(path_in(dir, "final.ckpt"), res.last);
  io::write_file(path_in(dir, "log.csv"), csv_of(res.logs));

  StrategyRow row;
  row.name = pref::to_string(cfg.train.strategy);
  row.test = train::evaluate(res.best, ds, data::Split::test);
  row.best_val_dice = res.best_val_dice;
  if (!res.caches.empty()) {
    row.round1_variance = mean_record_variance(res.caches.front());
    double s = 0.0;
    for (const auto& c : res.caches) s += mean_record_variance(c);
    row.mean_variance = s / static_cast<double>(res.caches.size());
  }
  io::write_file(path_in(dir, "test_eval.csv"), eval_csv(row.test));
  out << fmt::format("mapo[{}]: {} rounds, best val dice {}, test dice {}\n", row.name, res.regenerations,
                     fmt_num(res.best_val_dice), fmt_num(row.test.mean_dice));
  return row;
}

StrategyRow run_baseline(const config::RunConfig& cfg, const data::Dataset& ds, const segnet::ModelState& warm,
                         const std::string& dir, std::ostream& out) {
  echo_config(dir, cfg);
  auto res = train::supervised_train(warm, ds, cfg.train, cfg.train.dpo_epochs, cfg.train.warmup_epochs + 1);
  res.best.append_lineage(fmt::format("supervised:{}", cfg.train.dpo_epochs));
  segnet::save_checkpoint(path_in(dir, "best.ckpt"), res.best);
  io::write_file(path_in(dir, "log.csv"), csv_of(res.logs));
  StrategyRow row;
  row.name = "supervised";
  row.test = train::evaluate(res.best, ds, data::Split::test);
  row.best_val_dice = res.best_val_dice;
  io::write_file(path_in(dir, "test_eval.csv"), eval_csv(row.test));
  out << fmt::format("baseline: best val dice {}, test dice {}\n", fmt_num(res.best_val_dice),
                     fmt_num(row.test.mean_dice));
  return row;
}

int cmd_train_mapo(const std::string& config_path, const std::string& from, const std::vector<std::string>& strategies,
                   bool baseline, std::ostream& out) {
  const auto cfg = config::load(config_path);
  std::vector<pref::Strategy> chosen;
  for (const auto& s : strategies) {
    try {
      chosen.push_back(pref::parse_strategy(s));
    } catch (const std::exception& e) {
      throw config::ConfigError(fmt::format("--strategy: {}", e.what()));
    }
  }
  if (chosen.empty()) chosen.push_back(cfg.train.strategy);
  echo_config(cfg.output_dir, cfg);
  const auto ds = load_matching_dataset(cfg);
  const auto warm = load_matching_checkpoint(from, cfg);

  std::vector<StrategyRow> rows;
  for (auto s : chosen) {
    auto c = cfg;
    c.train.strategy = s;
    rows.push_back(run_mapo(c, ds, warm, path_in(cfg.output_dir, "mapo-" + pref::to_string(s)), out));
  }
  if (baseline) rows.push_back(run_baseline(cfg, ds, warm, path_in(cfg.output_dir, "baseline"), out));
  if (rows.size() > 1) {
    std::string csv = "strategy,test_dice,test_dice_std,test_asd,test_asd_undefined,best_val_dice,"
                      "round1_candidate_variance,mean_candidate_variance\n";
    for (const auto& r : rows)
      csv += fmt::format("{},{},{},{},{},{},{},{}\n", r.name, fmt_num(r.test.mean_dice), fmt_num(r.test.std_dice),
                         fmt_num(r.test.mean_asd), r.test.asd_undefined, fmt_num(r.best_val_dice),
                         fmt_num(r.round1_variance), fmt_num(r.mean_variance));
    io::write_file(path_in(cfg.output_dir, "strategy_comparison.csv"), csv);
  }
  return kExitOk;
}

int cmd_ablate_tau(const std::string& config_path, const std::vector<double>& taus_arg, const std::string& from,
                   std::ostream& out, std::ostream& err) {
  auto cfg = config::load(config_path);
  if (!taus_arg.empty()) cfg.taus = taus_arg;
  cfg.validate();
  echo_config(cfg.output_dir, cfg);
  const auto ds = load_matching_dataset(cfg);
  const auto warm = from.empty() ? run_warmup(cfg, ds, cfg.output_dir, out) : load_matching_checkpoint(from, cfg);

  std::string csv = "tau,status,test_dice,test_dice_std,test_asd,test_asd_undefined,best_val_dice\n";
  std::size_t failures = 0;
  for (double tau : cfg.taus) {
    auto c = cfg;
    c.train.dpo.tau = tau;
    const auto dir = path_in(cfg.output_dir, fmt::format("tau-{}", tau));
    try {
      const auto row = run_mapo(c, ds, warm, dir, out);
      csv += fmt::format("{},ok,{},{},{},{},{}\n", fmt_num(tau), fmt_num(row.test.mean_dice),
                         fmt_num(row.test.std_dice), fmt_num(row.test.mean_asd), row.test.asd_undefined,
                         fmt_num(row.best_val_dice));
    } catch (const std::exception& e) {
      ++failures;
      err << fmt::format("tau {} failed: {}\n", tau, e.what());
      csv += fmt::format("{},failed,,,,,\n", fmt_num(tau));
    }
  }
  io::write_file(path_in(cfg.output_dir, "tau_ablation.csv"), csv);
  if (failures) throw RunFailed(fmt::format("{} of {} tau runs failed", failures, cfg.taus.size()));
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset_dir, const std::string& split_name,
             const std::string& out_path, std::ostream& out) {
  data::Split split;
  try {
    split = data::parse_split(split_name);
  } catch (const std::exception& e) {
    throw config::ConfigError(fmt::format("--split: {}", e.what()));
  }
  if (!out_path.empty()) {
    const auto parent = fs::path(out_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    io::write_file(out_path + ".resolved.ini",
                   fmt::format("[eval]\ncheckpoint = {}\ndataset = {}\nsplit = {}\nout = {}\n", ckpt, dataset_dir,
                               split_name, out_path));
  }
  const auto state = segnet::load_checkpoint(ckpt);
  const auto ds = data::load_dataset(dataset_dir);
  if (state.spec().height != ds.spec.height || state.spec().width != ds.spec.width)
    throw config::ConfigError("checkpoint input size does not match the dataset");
  const auto csv = eval_csv(train::evaluate(state, ds, split));
  if (out_path.empty()) out << csv;
  else io::write_file(out_path, csv);
  return kExitOk;
}

int cmd_variance_map(const std::string& ckpt, const std::string& dataset_dir, const std::string& sample_id,
                     const std::string& out_path, const std::string& strategy_name, const std::string& grid_name,
                     std::uint64_t seed, std::ostream& out) {
  pref::Strategy strategy;
  pref::DropoutGrid grid;
  try {
    strategy = pref::parse_strategy(strategy_name);
  } catch (const std::exception& e) {
    throw config::ConfigError(fmt::format("--strategy: {}", e.what()));
  }
  if (grid_name == "2d") grid = pref::DropoutGrid::preset_2d();
  else if (grid_name == "3d") grid = pref::DropoutGrid::preset_3d();
  else throw config::ConfigError("--grid: expected 2d or 3d");

  const auto parent = fs::path(out_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  io::write_file(out_path + ".resolved.ini",
                 fmt::format("[variance-map]\ncheckpoint = {}\ndataset = {}\nsample = {}\nstrategy = {}\ngrid = {}\n"
                             "seed = {}\nout = {}\n",
                             ckpt, dataset_dir, sample_id, strategy_name, grid_name, seed, out_path));

  const auto state = segnet::load_checkpoint(ckpt);
  const auto ds = data::load_dataset(dataset_dir);
  const auto* sample = ds.find(sample_id);
  if (!sample) throw config::ConfigError(fmt::format("--sample: no sample '{}' in {}", sample_id, dataset_dir));
  const auto index = static_cast<std::size_t>(sample - ds.samples.data());
  const auto cands = pref::generate_candidates(strategy, state, sample->image, sample->gt, grid,
                                               pref::candidate_seed_base(seed, 0, index));
  const auto var = pref::variance_map(cands);

  pgm::Image img;
  img.height = sample->gt.height();
  img.width = sample->gt.width();
  img.maxval = 65535;
  for (double v : var.data())
    img.pixels.push_back(static_cast<std::uint16_t>(std::lround(std::clamp(v / 0.25, 0.0, 1.0) * 65535.0)));
  pgm::write(out_path, img);
  out << fmt::format("variance map of {} ({} candidates): mean {}\n", sample_id, cands.size(),
                     fmt_num(pref::mean_variance(cands)));
  return kExitOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dropout-driven preference optimisation for segmentation"};
  app.require_subcommand(1);

  std::string config_path, from, checkpoint, dataset_dir, split = "test", out_path, sample_id;
  std::string strategy_name = "dropout", grid_name = "2d";
  std::uint64_t seed = 0;
  bool force = false, baseline = false;
  std::optional<std::size_t> epochs;
  std::vector<std::string> strategies;
  std::vector<double> taus;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset described by [data]");
  gen->add_option("config", config_path, "Config file")->required();
  gen->add_flag("--force", force, "Replace an existing dataset directory");

  auto* warm = app.add_subcommand("warmup", "Supervised warm-up with dropout; writes warm.ckpt");
  warm->add_option("config", config_path, "Config file")->required();
  warm->add_option("--epochs", epochs, "Override warmup_epochs");

  auto* mapo = app.add_subcommand("train-mapo", "Preference optimisation from a warm checkpoint");
  mapo->add_option("config", config_path, "Config file")->required();
  mapo->add_option("--from", from, "Warm checkpoint")->required();
  mapo->add_option("--strategy", strategies, "dropout, threshold and/or noise");
  mapo->add_flag("--baseline", baseline, "Also run continued supervised training");

  auto* ablate = app.add_subcommand("ablate-tau", "One preference-optimisation run per tau");
  ablate->add_option("config", config_path, "Config file")->required();
  ablate->add_option("--taus", taus, "Tau values (default: [preference] taus)");
  ablate->add_option("--from", from, "Warm checkpoint (default: run warm-up first)");

  auto* eval = app.add_subcommand("eval", "Per-sample Dice and ASD of a checkpoint");
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("dataset", dataset_dir, "Dataset directory")->required();
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--out", out_path, "CSV output file (default: stdout)");

  auto* vmap = app.add_subcommand("variance-map", "Pixel-wise candidate variance as a 16-bit P5 image");
  vmap->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  vmap->add_option("dataset", dataset_dir, "Dataset directory")->required();
  vmap->add_option("--sample", sample_id, "Sample id")->required();
  vmap->add_option("--out", out_path, "Output .pgm file")->required();
  vmap->add_option("--strategy", strategy_name, "dropout, threshold or noise");
  vmap->add_option("--grid", grid_name, "Dropout grid preset: 2d or 3d");
  vmap->add_option("--seed", seed, "Sampling seed");

  std::vector<const char*> argv{"mapo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*gen) return cmd_gen_data(config_path, force, out);
    if (*warm) return cmd_warmup(config_path, epochs, out);
    if (*mapo) return cmd_train_mapo(config_path, from, strategies, baseline, out);
    if (*ablate) return cmd_ablate_tau(config_path, taus, from, out, err);
    if (*eval) return cmd_eval(checkpoint, dataset_dir, split, out_path, out);
    if (*vmap) return cmd_variance_map(checkpoint, dataset_dir, sample_id, out_path, strategy_name, grid_name, seed, out);
  } catch (const config::ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitInvalid;
}

}  // namespace mapo::cli

#pragma once

// Training stages: supervised warm-up with dropout active, then rounds of
// preference optimisation. Each round snapshots the current model as a
// frozen reference, regenerates preference pairs from it, and minimises
// lambda * (Dice + BCE) + DPO for refresh_interval epochs with dropout off.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapo/data_synth.hpp"
#include "mapo/losses.hpp"
#include "mapo/preference.hpp"
#include "mapo/segnet.hpp"

namespace mapo::train {

enum class Stage { warmup, dpo };
std::string to_string(Stage stage);

struct Seeds {
  std::uint64_t init = 1;      // parameter initialisation
  std::uint64_t data = 2;      // epoch shuffling
  std::uint64_t sampling = 3;  // dropout masks and candidate generation

  friend bool operator==(const Seeds&, const Seeds&) = default;
};

struct TrainConfig {
  double lr = 1e-4;
  loss::DpoConfig dpo;
  std::size_t warmup_epochs = 20;
  std::size_t dpo_epochs = 40;
  std::size_t refresh_interval = 10;
  double warmup_dropout = 0.1;
  pref::Strategy strategy = pref::Strategy::dropout;
  pref::DropoutGrid grid = pref::DropoutGrid::preset_2d();
  Seeds seeds;
  std::size_t batch_size = 2;
  double grad_clip = 5.0;
  /// Snapshot a new reference at every regeneration; otherwise the warm
  /// model stays the reference for all rounds.
  bool refresh_reference = true;

  /// 100 warm-up epochs, 200 preference epochs, regeneration every 50.
  static TrainConfig paper_scale();
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RoundLog {
  std::size_t epoch = 0;
  Stage stage = Stage::warmup;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_dice = 0.0;
  double val_asd = 0.0;  // NaN when no validation sample has a defined ASD
  std::size_t pairs_found = 0;
  std::size_t pairs_skipped = 0;
  std::uint64_t reference_version = 0;  // 0 during warm-up
};

void write_log_csv(std::ostream& out, std::span<const RoundLog> logs);
std::string log_csv(std::span<const RoundLog> logs);

// ---------------------------------------------------------------------------
// Optimiser

using Gradients = std::vector<std::vector<double>>;

struct AdamMoments {
  Gradients m;
  Gradients v;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update; step_index counts from 1. Throws
/// NonFiniteGradient (leaving params and moments untouched) when any
/// gradient entry is NaN or infinite.
void adam_step(std::vector<segnet::NamedTensor>& params, const Gradients& grads, AdamMoments& moments, double lr,
               std::uint64_t step_index, const AdamHyper& hyper = {});

/// Rescales grads so their joint L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

// ---------------------------------------------------------------------------
// Evaluation

struct SampleMetrics {
  std::string id;
  double dice = 0.0;
  std::optional<double> asd;
  double loss = 0.0;  // Dice + BCE
};

struct EvalTable {
  std::vector<SampleMetrics> rows;
  double mean_dice = 0.0;
  double std_dice = 0.0;
  double mean_asd = 0.0;  // over samples with a defined ASD; NaN if none
  double std_asd = 0.0;
  std::size_t asd_undefined = 0;
  double mean_loss = 0.0;
};

/// Dropout off, binarised at 0.5. Population standard deviations.
EvalTable evaluate(const segnet::ModelState& state, std::span<const data::Sample* const> samples);
EvalTable evaluate(const segnet::ModelState& state, const data::Dataset& dataset, data::Split split);

/// Columns id,dice,asd,loss; undefined ASD is written as "undefined".
/// Trailing aggregate rows: mean, std, and undefined_asd (count in the asd column).
void write_eval_csv(std::ostream& out, const EvalTable& table);

// ---------------------------------------------------------------------------
// Stages

struct TrainResult {
  segnet::ModelState best;   // highest validation Dice over the logged epochs
  segnet::ModelState last;
  double best_val_dice = 0.0;
  std::vector<RoundLog> logs;
};

/// Supervised Dice + BCE training with stochastic dropout at
/// cfg.warmup_dropout. Zero epochs return the input state unchanged.
TrainResult warmup_train(const segnet::ModelState& state, const data::Dataset& dataset, const TrainConfig& cfg);

/// The same supervised procedure for an explicit number of epochs, with log
/// epochs numbered from first_epoch. Used for continued-supervision baselines.
TrainResult supervised_train(const segnet::ModelState& state, const data::Dataset& dataset, const TrainConfig& cfg,
                             std::size_t epochs, std::size_t first_epoch);

/// One preference-optimisation round over the training split. Samples with
/// a pair minimise the combined objective; the rest only the lambda-weighted
/// supervised terms. `prefs` must come from `state`; `reference` must be frozen.
TrainResult dpo_round(const segnet::ModelState& state, const segnet::ModelState& reference,
                      const pref::PreferenceSet& prefs, const data::Dataset& dataset, const TrainConfig& cfg,
                      std::size_t epochs, std::size_t first_epoch);

using RoundObserver =
    std::function<void(std::uint64_t round, const segnet::ModelState& reference, const pref::PreferenceSet& prefs)>;

struct OnlineResult {
  segnet::ModelState best;
  segnet::ModelState last;
  double best_val_dice = 0.0;
  std::vector<RoundLog> logs;
  std::vector<pref::PreferenceSet> caches;  // one per round
  std::size_t regenerations = 0;
  std::size_t reference_snapshots = 0;
};

/// dpo_epochs / refresh_interval rounds of regenerate-then-optimise,
/// starting from a warm model. Returns the best validation checkpoint.
OnlineResult online_loop(const segnet::ModelState& warm, const data::Dataset& dataset, const TrainConfig& cfg,
                         const RoundObserver& observer = {});

/// Per-sample objective of dpo_round; fills grads when non-null.
/// `ref_probs` and `pair` may be null.
double dpo_sample_objective(const segnet::ModelState& state, const data::Sample& sample, const Tensor* ref_probs,
                            const pref::PreferencePair* pair, const TrainConfig& cfg, Gradients* grads);

}  // namespace mapo::train

#include "mapo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "mapo/error.hpp"
#include "mapo/metrics.hpp"
#include "mapo/rng.hpp"

namespace mapo::train {

namespace {

constexpr std::uint64_t kShuffleTag = 0x5F1E;
constexpr std::uint64_t kWarmDropTag = 0xD70;

struct SampleResult {
  double loss = 0.0;
  bool contributes = false;
  Gradients grads;
};

Gradients gradients_of(const ad::Tape& tape, std::span<const ad::Var> params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(tape.grad(p).values());
  return g;
}

SampleResult supervised_sample(const segnet::ModelState& state, const data::Sample& s, const segnet::ForwardOptions& fo) {
  ad::Tape tape;
  auto fw = segnet::forward(tape, state, s.image, fo, true);
  auto l = loss::supervised_loss(fw.probs, s.gt);
  tape.backward(l);
  return {l.value().item(), true, gradients_of(tape, fw.params)};
}

/// Per-sample gradients for a batch, summed in batch order and averaged
/// over the contributing samples.
template <typename Fn>
std::pair<double, std::size_t> batch_gradient(std::span<const std::size_t> batch, Fn&& per_sample, Gradients& out) {
  std::vector<SampleResult> results(batch.size());
  std::exception_ptr failure;
  const long n = static_cast<long>(batch.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      results[static_cast<std::size_t>(i)] = per_sample(batch[static_cast<std::size_t>(i)]);
    } catch (...) {
#pragma omp critical(mapo_batch_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  double loss_sum = 0.0;
  std::size_t used = 0;
  for (auto& r : results) {
    if (!r.contributes) continue;
    loss_sum += r.loss;
    ++used;
    for (std::size_t p = 0; p < out.size(); ++p)
      for (std::size_t j = 0; j < out[p].size(); ++j) out[p][j] += r.grads[p][j];
  }
  if (used > 0)
    for (auto& g : out)
      for (auto& x : g) x /= static_cast<double>(used);
  return {loss_sum, used};
}

Gradients zeros_like(const std::vector<segnet::NamedTensor>& params) {
  Gradients g;
  for (const auto& p : params) g.emplace_back(p.value.size(), 0.0);
  return g;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 gen(rng::derive(seed, {kShuffleTag, epoch}));
  std::shuffle(order.begin(), order.end(), gen);
  return order;
}

struct EpochOutcome {
  double mean_loss = 0.0;
  bool aborted = false;
};

/// Shared epoch driver: shuffled mini-batches, clipped Adam updates.
template <typename Fn>
EpochOutcome run_epoch(segnet::ModelState& state, std::size_t train_size, const TrainConfig& cfg, std::size_t epoch,
                       AdamMoments& moments, std::uint64_t& step, Fn&& per_sample) {
  const auto order = shuffled(train_size, cfg.seeds.data, epoch);
  double loss_sum = 0.0;
  std::size_t used = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
    std::span<const std::size_t> batch(order.data() + start, stop - start);
    Gradients grads = zeros_like(state.params());
    const auto [ls, n] = batch_gradient(batch, per_sample, grads);
    if (n == 0) continue;
    loss_sum += ls;
    used += n;
    try {
      for (const auto& g : grads)
        for (double x : g)
          if (!std::isfinite(x)) throw NonFiniteGradient("non-finite gradient");
      clip_global_norm(grads, cfg.grad_clip);
      adam_step(state.mutable_params(), grads, moments, cfg.lr, ++step);
    } catch (const NonFiniteGradient& e) {
      std::cerr << fmt::format("epoch {}: {} in batch starting at {}; aborting epoch\n", epoch, e.what(), start);
      return {used ? loss_sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN(), true};
    }
  }
  return {used ? loss_sum / static_cast<double>(used) : 0.0, false};
}

void fill_validation(RoundLog& log, const segnet::ModelState& state, const data::Dataset& dataset) {
  const auto table = evaluate(state, dataset, data::Split::val);
  log.val_loss = table.mean_loss;
  log.val_dice = table.mean_dice;
  log.val_asd = table.mean_asd;
}

void track_best(TrainResult& r, const segnet::ModelState& state, double val_dice, bool first) {
  if (first || val_dice > r.best_val_dice) {
    r.best = state;
    r.best_val_dice = val_dice;
  }
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

}  // namespace

std::string to_string(Stage stage) { return stage == Stage::warmup ? "warmup" : "dpo"; }

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.warmup_epochs = 100;
  c.dpo_epochs = 200;
  c.refresh_interval = 50;
  return c;
}

void TrainConfig::validate() const {
  dpo.validate();
  grid.validate();
  require(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");
  require(dpo_epochs > 0, "dpo_epochs must be positive");
  require(refresh_interval > 0, "refresh_interval must be positive");
  require(dpo_epochs % refresh_interval == 0, "dpo_epochs must be a multiple of refresh_interval");
  require(warmup_dropout >= 0.0 && warmup_dropout < 1.0, "warmup_dropout must lie in [0, 1)");
  require(batch_size > 0, "batch_size must be positive");
  require(grad_clip > 0.0, "grad_clip must be positive");
}

void write_log_csv(std::ostream& out, std::span<const RoundLog> logs) {
  out << "epoch,stage,train_loss,val_loss,val_dice,val_asd,pairs_found,pairs_skipped,reference_version\n";
  for (const auto& l : logs) {
    out << fmt::format("{},{},{},{},{},{},{},{},{}\n", l.epoch, to_string(l.stage), fmt_double(l.train_loss),
                       fmt_double(l.val_loss), fmt_double(l.val_dice), fmt_double(l.val_asd), l.pairs_found,
                       l.pairs_skipped, l.reference_version);
  }
}

std::string log_csv(std::span<const RoundLog> logs) {
  std::ostringstream os;
  write_log_csv(os, logs);
  return os.str();
}

void adam_step(std::vector<segnet::NamedTensor>& params, const Gradients& grads, AdamMoments& moments, double lr,
               std::uint64_t step_index, const AdamHyper& hyper) {
  require(step_index >= 1, "adam step index counts from 1");
  require(grads.size() == params.size(), "one gradient per parameter expected");
  for (std::size_t p = 0; p < params.size(); ++p) {
    require(grads[p].size() == params[p].value.size(), "gradient size mismatch for " + params[p].name);
    for (double g : grads[p])
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient for " + params[p].name);
  }
  if (moments.m.empty()) {
    moments.m = zeros_like(params);
    moments.v = zeros_like(params);
  }
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step_index));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step_index));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].value.data();
    auto& m = moments.m[p];
    auto& v = moments.v[p];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[p][j];
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g;
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + hyper.eps);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (auto& x : g) x *= f;
  }
  return norm;
}

EvalTable evaluate(const segnet::ModelState& state, std::span<const data::Sample* const> samples) {
  EvalTable t;
  t.rows.resize(samples.size());
  std::exception_ptr failure;
  const long n = static_cast<long>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      const auto& s = *samples[static_cast<std::size_t>(i)];
      const Tensor probs = segnet::predict(state, s.image);
      const auto mask = BinaryMask::from_probabilities(probs, pref::kBinarizeAt);
      ad::Tape tape;
      const double l = loss::supervised_loss(tape.constant(probs), s.gt).value().item();
      t.rows[static_cast<std::size_t>(i)] = {s.id, metrics::dice_score(mask, s.gt), metrics::average_surface_distance(mask, s.gt), l};
    } catch (...) {
#pragma omp critical(mapo_eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  const auto moments = [](const std::vector<double>& xs) -> std::pair<double, double> {
    if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
  };
  std::vector<double> dice, asd, losses;
  for (const auto& r : t.rows) {
    dice.push_back(r.dice);
    losses.push_back(r.loss);
    if (r.asd) asd.push_back(*r.asd);
    else ++t.asd_undefined;
  }
  std::tie(t.mean_dice, t.std_dice) = moments(dice);
  std::tie(t.mean_asd, t.std_asd) = moments(asd);
  t.mean_loss = moments(losses).first;
  return t;
}

EvalTable evaluate(const segnet::ModelState& state, const data::Dataset& dataset, data::Split split) {
  const auto samples = dataset.split(split);
  return evaluate(state, samples);
}

void write_eval_csv(std::ostream& out, const EvalTable& table) {
  out << "id,dice,asd,loss\n";
  for (const auto& r : table.rows)
    out << fmt::format("{},{},{},{}\n", r.id, fmt_double(r.dice), r.asd ? fmt_double(*r.asd) : "undefined",
                       fmt_double(r.loss));
  out << fmt::format("mean,{},{},{}\n", fmt_double(table.mean_dice), fmt_double(table.mean_asd),
                     fmt_double(table.mean_loss));
  out << fmt::format("std,{},{},\n", fmt_double(table.std_dice), fmt_double(table.std_asd));
  out << fmt::format("undefined_asd,,{},\n", table.asd_undefined);
}

TrainResult supervised_train(const segnet::ModelState& state, const data::Dataset& dataset, const TrainConfig& cfg,
                             std::size_t epochs, std::size_t first_epoch) {
  cfg.validate();
  const auto train = dataset.split(data::Split::train);
  require(!train.empty(), "training split is empty");

  TrainResult r;
  r.last = state;
  r.best = state;
  AdamMoments moments;
  std::uint64_t step = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    const std::size_t epoch = first_epoch + e;
    const auto per_sample = [&](std::size_t idx) {
      segnet::ForwardOptions fo{cfg.warmup_dropout, rng::derive(cfg.seeds.sampling, {kWarmDropTag, epoch, idx}),
                                cfg.warmup_dropout > 0.0};
      return supervised_sample(r.last, *train[idx], fo);
    };
    const auto outcome = run_epoch(r.last, train.size(), cfg, epoch, moments, step, per_sample);
    RoundLog log;
    log.epoch = epoch;
    log.stage = Stage::warmup;
    log.train_loss = outcome.mean_loss;
    fill_validation(log, r.last, dataset);
    track_best(r, r.last, log.val_dice, e == 0);
    r.logs.push_back(log);
  }
  if (epochs == 0) r.best_val_dice = evaluate(state, dataset, data::Split::val).mean_dice;
  return r;
}

TrainResult warmup_train(const segnet::ModelState& state, const data::Dataset& dataset, const TrainConfig& cfg) {
  return supervised_train(state, dataset, cfg, cfg.warmup_epochs, 1);
}

double dpo_sample_objective(const segnet::ModelState& state, const data::Sample& sample, const Tensor* ref_probs,
                            const pref::PreferencePair* pair, const TrainConfig& cfg, Gradients* grads) {
  require(pair == nullptr || ref_probs != nullptr, "a preference pair needs reference probabilities");
  ad::Tape tape;
  auto fw = segnet::forward(tape, state, sample.image, {}, grads != nullptr);
  std::optional<ad::Var> obj;
  if (pair) {
    obj = loss::combined_loss(fw.probs, tape.constant(*ref_probs), sample.gt, pair->pos, pair->neg, cfg.dpo);
  } else if (cfg.dpo.lambda > 0.0) {
    obj = ad::scale(loss::supervised_loss(fw.probs, sample.gt), cfg.dpo.lambda);
  }
  if (!obj) {
    if (grads) *grads = zeros_like(state.params());
    return 0.0;
  }
  if (grads) {
    tape.backward(*obj);
    *grads = gradients_of(tape, fw.params);
  }
  return obj->value().item();
}

TrainResult dpo_round(const segnet::ModelState& state, const segnet::ModelState& reference,
                      const pref::PreferenceSet& prefs, const data::Dataset& dataset, const TrainConfig& cfg,
                      std::size_t epochs, std::size_t first_epoch) {
  cfg.validate();
  require(reference.frozen(), "the reference model must be frozen");
  require(reference.spec() == state.spec(), "reference and policy architectures differ");
  require(prefs.reference_version == state.version(), "preference set was not generated from the current model");
  if (cfg.refresh_reference)
    require(reference.version() == state.version(), "stale reference: snapshot the model at the round start");
  const auto train = dataset.split(data::Split::train);
  require(!train.empty(), "training split is empty");

  std::vector<const pref::PreferencePair*> pairs(train.size(), nullptr);
  std::vector<std::optional<Tensor>> ref_probs(train.size());
  std::size_t found = 0, skipped = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto* rec = prefs.find(train[i]->id);
    if (rec == nullptr) throw ContractViolation("no preference record for training sample " + train[i]->id);
    if (rec->pair) {
      pairs[i] = &*rec->pair;
      ++found;
    } else {
      ++skipped;
    }
  }
  require(found + skipped == train.size(), "pair bookkeeping mismatch");
  {
    std::exception_ptr failure;
    const long n = static_cast<long>(train.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (!pairs[u]) continue;
      try {
        ref_probs[u] = segnet::predict(reference, train[u]->image);
      } catch (...) {
#pragma omp critical(mapo_ref_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  TrainResult r;
  r.last = state;
  r.best = state;
  AdamMoments moments;
  std::uint64_t step = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    const std::size_t epoch = first_epoch + e;
    const auto per_sample = [&](std::size_t idx) {
      SampleResult sr;
      const Tensor* rp = ref_probs[idx] ? &*ref_probs[idx] : nullptr;
      sr.contributes = pairs[idx] != nullptr || cfg.dpo.lambda > 0.0;
      if (sr.contributes) sr.loss = dpo_sample_objective(r.last, *train[idx], rp, pairs[idx], cfg, &sr.grads);
      return sr;
    };
    const auto outcome = run_epoch(r.last, train.size(), cfg, epoch, moments, step, per_sample);
    RoundLog log;
    log.epoch = epoch;
    log.stage = Stage::dpo;
    log.train_loss = outcome.mean_loss;
    log.pairs_found = found;
    log.pairs_skipped = skipped;
    log.reference_version = reference.version();
    fill_validation(log, r.last, dataset);
    track_best(r, r.last, log.val_dice, e == 0);
    r.logs.push_back(log);
  }
  if (epochs == 0) r.best_val_dice = evaluate(state, dataset, data::Split::val).mean_dice;
  return r;
}

OnlineResult online_loop(const segnet::ModelState& warm, const data::Dataset& dataset, const TrainConfig& cfg,
                         const RoundObserver& observer) {
  cfg.validate();
  require(!warm.frozen(), "online training needs a trainable model");
  const auto train = dataset.split(data::Split::train);

  OnlineResult out;
  segnet::ModelState state = warm;
  std::optional<segnet::ModelState> fixed_ref;
  if (!cfg.refresh_reference) {
    fixed_ref = segnet::clone_frozen(state);
    ++out.reference_snapshots;
  }
  const std::size_t rounds = cfg.dpo_epochs / cfg.refresh_interval;
  bool first = true;
  for (std::size_t round = 1; round <= rounds; ++round) {
    state.set_version(warm.version() + round);
    if (cfg.refresh_reference) ++out.reference_snapshots;
    const segnet::ModelState reference = cfg.refresh_reference ? segnet::clone_frozen(state) : *fixed_ref;
    auto prefs = pref::build_preference_set(state, train, cfg.strategy, cfg.grid, cfg.dpo.tau, cfg.seeds.sampling,
                                            round);
    ++out.regenerations;
    if (observer) observer(round, reference, prefs);

    const std::size_t first_epoch = cfg.warmup_epochs + (round - 1) * cfg.refresh_interval + 1;
    auto res = dpo_round(state, reference, prefs, dataset, cfg, cfg.refresh_interval, first_epoch);
    out.caches.push_back(std::move(prefs));
    if (first || res.best_val_dice > out.best_val_dice) {
      out.best = res.best;
      out.best_val_dice = res.best_val_dice;
    }
    first = false;
    state = std::move(res.last);
    out.logs.insert(out.logs.end(), res.logs.begin(), res.logs.end());
  }
  out.last = state;
  if (rounds == 0) {
    out.best = warm;
    out.best_val_dice = evaluate(warm, dataset, data::Split::val).mean_dice;
  }
  out.best.append_lineage(fmt::format("mapo:{}", to_string(cfg.strategy)));
  return out;
}

}  // namespace mapo::train

#include "mapo/preference.hpp"

#include <exception>
#include <random>

#include "mapo/error.hpp"
#include "mapo/metrics.hpp"
#include "mapo/rng.hpp"

namespace mapo::pref {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::dropout: return "dropout";
    case Strategy::threshold: return "threshold";
    case Strategy::noise: return "noise";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "dropout") return Strategy::dropout;
  if (name == "threshold") return Strategy::threshold;
  if (name == "noise") return Strategy::noise;
  throw ContractViolation("unknown strategy '" + name + "' (expected dropout, threshold or noise)");
}

DropoutGrid DropoutGrid::preset_2d() {
  DropoutGrid g;
  for (int i = 0; i <= 10; ++i) g.rates.push_back(i / 200.0);
  return g;
}

DropoutGrid DropoutGrid::preset_3d() {
  DropoutGrid g;
  for (int i = 0; i <= 6; ++i) g.rates.push_back(i / 20.0);
  return g;
}

void DropoutGrid::validate() const {
  require(!rates.empty(), "dropout grid is empty");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    require(rates[i] >= 0.0 && rates[i] < 1.0, "dropout grid rates must lie in [0, 1)");
    if (i) require(rates[i] > rates[i - 1], "dropout grid must be strictly increasing");
  }
}

std::vector<double> threshold_levels() {
  std::vector<double> t;
  for (int i = 0; i <= 10; ++i) t.push_back((15 + i) / 40.0);
  return t;
}

std::vector<double> noise_levels() {
  std::vector<double> s;
  for (int i = 0; i <= 10; ++i) s.push_back(i / 200.0);
  return s;
}

namespace {
Candidate scored(BinaryMask mask, const BinaryMask& gt, CandidateSource source) {
  const double d = metrics::dice_score(mask, gt);
  return {std::move(mask), d, source};
}
}  // namespace

CandidateSet generate_candidates_dropout(const segnet::ModelState& state, const Tensor& image, const BinaryMask& gt,
                                         const DropoutGrid& grid, std::uint64_t seed_base) {
  grid.validate();
  CandidateSet out;
  for (std::size_t k = 0; k < grid.rates.size(); ++k) {
    const std::uint64_t seed = seed_base ^ k;
    const Tensor p = segnet::predict(state, image, {grid.rates[k], seed, true});
    out.push_back(scored(BinaryMask::from_probabilities(p, kBinarizeAt), gt, DropoutSource{grid.rates[k], seed}));
  }
  return out;
}

CandidateSet threshold_candidates(const Tensor& probs, const BinaryMask& gt) {
  CandidateSet out;
  for (double t : threshold_levels())
    out.push_back(scored(BinaryMask::from_probabilities(probs, t), gt, ThresholdSource{t}));
  return out;
}

CandidateSet generate_candidates_threshold(const segnet::ModelState& state, const Tensor& image,
                                           const BinaryMask& gt) {
  return threshold_candidates(segnet::predict(state, image), gt);
}

CandidateSet generate_candidates_noise(const segnet::ModelState& state, const Tensor& image, const BinaryMask& gt,
                                       std::uint64_t seed_base) {
  CandidateSet out;
  const auto sigmas = noise_levels();
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    const std::uint64_t seed = seed_base ^ k;
    Tensor noisy = image;
    if (sigmas[k] > 0.0) {
      std::mt19937_64 gen(seed);
      std::normal_distribution<double> normal(0.0, sigmas[k]);
      for (double& v : noisy.data()) v += normal(gen);
    }
    const Tensor p = segnet::predict(state, noisy);
    out.push_back(scored(BinaryMask::from_probabilities(p, kBinarizeAt), gt, NoiseSource{sigmas[k], seed}));
  }
  return out;
}

CandidateSet generate_candidates(Strategy strategy, const segnet::ModelState& state, const Tensor& image,
                                 const BinaryMask& gt, const DropoutGrid& grid, std::uint64_t seed_base) {
  switch (strategy) {
    case Strategy::dropout: return generate_candidates_dropout(state, image, gt, grid, seed_base);
    case Strategy::threshold: return generate_candidates_threshold(state, image, gt);
    case Strategy::noise: return generate_candidates_noise(state, image, gt, seed_base);
  }
  throw ContractViolation("unknown strategy");
}

std::optional<PairIndices> select_indices(std::span<const double> dice, double tau) {
  require(!dice.empty(), "preference selection over an empty candidate set");
  std::size_t best = 0;
  for (std::size_t k = 1; k < dice.size(); ++k)
    if (dice[k] > dice[best]) best = k;
  std::optional<std::size_t> worst;
  for (std::size_t k = 0; k < dice.size(); ++k) {
    if (!(dice[best] - dice[k] >= tau)) continue;
    if (!worst || dice[k] < dice[*worst]) worst = k;
  }
  if (!worst) return std::nullopt;
  return PairIndices{best, *worst};
}

std::optional<PreferencePair> select_pair(const CandidateSet& cands, const BinaryMask& gt, double tau) {
  std::vector<double> dice;
  dice.reserve(cands.size());
  for (const auto& c : cands) dice.push_back(metrics::dice_score(c.mask, gt));
  const auto idx = select_indices(dice, tau);
  if (!idx) return std::nullopt;
  return PreferencePair{cands[idx->k_pos].mask, cands[idx->k_neg].mask, idx->k_pos, idx->k_neg,
                        dice[idx->k_pos],       dice[idx->k_neg],       tau};
}

Tensor variance_map(const CandidateSet& cands) {
  require(cands.size() >= 2, "variance map needs at least two candidates");
  const std::size_t h = cands[0].mask.height(), w = cands[0].mask.width();
  for (const auto& c : cands)
    require(c.mask.height() == h && c.mask.width() == w, "candidate masks differ in shape");
  const double k = static_cast<double>(cands.size());
  Tensor out(Shape{h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    std::size_t ones = 0;
    for (const auto& c : cands) ones += c.mask[i];
    const double m = static_cast<double>(ones) / k;
    out[i] = m * (1.0 - m);  // population variance of a 0/1 sample
  }
  return out;
}

double mean_variance(const CandidateSet& cands) {
  const Tensor v = variance_map(cands);
  double acc = 0.0;
  for (double x : v.data()) acc += x;
  return acc / static_cast<double>(v.size());
}

std::size_t PreferenceSet::pairs_found() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.pair.has_value();
  return n;
}

const PreferenceRecord* PreferenceSet::find(const std::string& sample_id) const {
  for (const auto& r : records)
    if (r.sample_id == sample_id) return &r;
  return nullptr;
}

std::uint64_t candidate_seed_base(std::uint64_t sampling_seed, std::uint64_t round, std::size_t sample_index) {
  return rng::derive(sampling_seed, {0xCA7D, round, sample_index});
}

PreferenceSet build_preference_set(const segnet::ModelState& state, std::span<const data::Sample* const> samples,
                                   Strategy strategy, const DropoutGrid& grid, double tau,
                                   std::uint64_t sampling_seed, std::uint64_t round) {
  require(tau >= 0.0 && tau <= 1.0, "tau must lie in [0, 1]");
  if (strategy == Strategy::dropout) grid.validate();
  PreferenceSet set;
  set.round = round;
  set.strategy = strategy;
  set.grid = grid;
  set.tau = tau;
  set.sampling_seed = sampling_seed;
  set.reference_version = state.version();
  set.height = state.spec().height;
  set.width = state.spec().width;
  set.records.resize(samples.size());

  std::exception_ptr failure;
  const long n = static_cast<long>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      const data::Sample& s = *samples[static_cast<std::size_t>(i)];
      const auto cands = generate_candidates(strategy, state, s.image, s.gt, grid,
                                             candidate_seed_base(sampling_seed, round, static_cast<std::size_t>(i)));
      PreferenceRecord rec;
      rec.sample_id = s.id;
      std::vector<double> dice;
      for (const auto& c : cands) dice.push_back(c.dice_vs_gt);
      rec.k_best = select_indices(dice, 0.0)->k_pos;
      rec.dice_best = dice[rec.k_best];
      rec.mean_variance = cands.size() >= 2 ? mean_variance(cands) : 0.0;
      rec.pair = select_pair(cands, s.gt, tau);
      set.records[static_cast<std::size_t>(i)] = std::move(rec);
    } catch (...) {
#pragma omp critical(mapo_pref_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return set;
}

}  // namespace mapo::pref

#pragma once

// Preference-pair construction from stochastic prediction candidates.
//
// For one image, K candidate masks are produced (one per dropout rate, or
// by the threshold / input-noise baselines) and scored by Dice against the
// ground truth. The best candidate is the preferred example; the rejected
// example is the worst candidate whose Dice trails the best by at least tau.
// No candidate meeting the gap means no pair for that image this round.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mapo/data_synth.hpp"
#include "mapo/mask.hpp"
#include "mapo/segnet.hpp"

namespace mapo::pref {

enum class Strategy { dropout, threshold, noise };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

struct DropoutGrid {
  std::vector<double> rates;

  /// 0.0 to 0.05 in steps of 0.005 (11 rates).
  static DropoutGrid preset_2d();
  /// 0.0 to 0.30 in steps of 0.05 (7 rates).
  static DropoutGrid preset_3d();

  /// Non-empty, strictly increasing, every rate in [0, 1).
  void validate() const;
  friend bool operator==(const DropoutGrid&, const DropoutGrid&) = default;
};

/// Binarisation thresholds of the threshold baseline: 0.375 to 0.625 step 0.025.
std::vector<double> threshold_levels();
/// Input-noise standard deviations of the noise baseline: 0 to 0.05 step 0.005.
std::vector<double> noise_levels();

struct DropoutSource {
  double rate;
  std::uint64_t seed;
};
struct ThresholdSource {
  double threshold;
};
struct NoiseSource {
  double sigma;
  std::uint64_t seed;
};
using CandidateSource = std::variant<DropoutSource, ThresholdSource, NoiseSource>;

struct Candidate {
  BinaryMask mask;
  double dice_vs_gt = 0.0;
  CandidateSource source;
};

using CandidateSet = std::vector<Candidate>;

/// Probability maps are binarised at this level (p >= 0.5 is foreground).
inline constexpr double kBinarizeAt = 0.5;

/// One stochastic forward per grid rate; rate index k uses seed seed_base ^ k.
CandidateSet generate_candidates_dropout(const segnet::ModelState& state, const Tensor& image, const BinaryMask& gt,
                                         const DropoutGrid& grid, std::uint64_t seed_base);
/// One deterministic forward binarised at every threshold level.
CandidateSet generate_candidates_threshold(const segnet::ModelState& state, const Tensor& image,
                                           const BinaryMask& gt);
/// Same as above for an already computed probability map [H,W].
CandidateSet threshold_candidates(const Tensor& probs, const BinaryMask& gt);
/// One deterministic forward per noise level on image + N(0, sigma^2);
/// level index k draws its noise from seed seed_base ^ k.
CandidateSet generate_candidates_noise(const segnet::ModelState& state, const Tensor& image, const BinaryMask& gt,
                                       std::uint64_t seed_base);
CandidateSet generate_candidates(Strategy strategy, const segnet::ModelState& state, const Tensor& image,
                                 const BinaryMask& gt, const DropoutGrid& grid, std::uint64_t seed_base);

struct PairIndices {
  std::size_t k_pos;
  std::size_t k_neg;
  friend bool operator==(const PairIndices&, const PairIndices&) = default;
};

/// Selection over candidate Dice scores. Ties go to the lowest index.
/// Throws ContractViolation on an empty list.
std::optional<PairIndices> select_indices(std::span<const double> dice, double tau);

struct PreferencePair {
  BinaryMask pos;
  BinaryMask neg;
  std::size_t k_pos = 0;
  std::size_t k_neg = 0;
  double dice_pos = 0.0;
  double dice_neg = 0.0;
  double tau = 0.0;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

/// Scores every candidate against gt and applies select_indices.
std::optional<PreferencePair> select_pair(const CandidateSet& cands, const BinaryMask& gt, double tau);

/// Per-pixel population variance of the binary candidates, in [0, 0.25].
/// Needs at least two candidates.
Tensor variance_map(const CandidateSet& cands);
double mean_variance(const CandidateSet& cands);

// ---------------------------------------------------------------------------
// Per-round preference sets and their cache file.

struct PreferenceRecord {
  std::string sample_id;
  std::size_t k_best = 0;
  double dice_best = 0.0;
  /// Mean of the candidate variance map.
  double mean_variance = 0.0;
  std::optional<PreferencePair> pair;

  friend bool operator==(const PreferenceRecord&, const PreferenceRecord&) = default;
};

struct PreferenceSet {
  std::uint64_t round = 0;
  Strategy strategy = Strategy::dropout;
  DropoutGrid grid;
  double tau = 0.0;
  std::uint64_t sampling_seed = 0;
  std::uint64_t reference_version = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<PreferenceRecord> records;

  std::size_t pairs_found() const;
  std::size_t pairs_skipped() const { return records.size() - pairs_found(); }
  const PreferenceRecord* find(const std::string& sample_id) const;

  friend bool operator==(const PreferenceSet&, const PreferenceSet&) = default;
};

/// Seed base of one sample in one round; candidate k then uses base ^ k.
std::uint64_t candidate_seed_base(std::uint64_t sampling_seed, std::uint64_t round, std::size_t sample_index);

/// Builds the preference set of the given samples from `state`. Samples are
/// processed in parallel over the immutable state; output order follows input.
PreferenceSet build_preference_set(const segnet::ModelState& state, std::span<const data::Sample* const> samples,
                                   Strategy strategy, const DropoutGrid& grid, double tau,
                                   std::uint64_t sampling_seed, std::uint64_t round);

// Cache file: one JSON manifest line (round, strategy, grid, tau, seeds,
// mask extents, record count) followed by binary little-endian records:
//   u32 id length, id bytes, u8 has_pair, u32 k_best, f64 dice_best,
//   f64 mean_variance, i32 k_neg (-1 without pair), f64 dice_neg,
//   then, with a pair, the preferred and rejected masks packed LSB-first.
std::string encode_preference_set(const PreferenceSet& set);
PreferenceSet decode_preference_set(const std::string& bytes);
void save_preference_set(const std::string& path, const PreferenceSet& set);
PreferenceSet load_preference_set(const std::string& path);

}  // namespace mapo::pref

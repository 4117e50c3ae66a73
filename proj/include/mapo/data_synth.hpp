#pragma once

// Synthetic binary-segmentation tasks.
//
// Every sample is a single-channel image in [0,1] holding one or more
// shapes drawn with anti-aliased edges: background intensity 0.25,
// foreground 0.75, optional Gaussian boundary blur and additive Gaussian
// pixel noise. The ground truth marks pixels whose clean (pre-blur,
// pre-noise) coverage is at least one half. Images are quantised to 16 bits
// at generation time so that the on-disk form is lossless.
//
// On-disk layout of a dataset directory:
//   manifest.tsv        "# key<TAB>value" lines for the TaskSpec, then a
//                       header row and one "id image mask split" row per sample
//   images/<id>.pgm     16-bit P5, value = round(intensity * 65535)
//   masks/<id>.pgm      16-bit P5, values 0 or 65535

#include <cstdint>
#include <string>
#include <vector>

#include "mapo/mask.hpp"
#include "mapo/tensor.hpp"

namespace mapo::data {

enum class TaskKind { blobs, rings, curves };
enum class Split { train, val, test };

std::string to_string(TaskKind kind);
std::string to_string(Split split);
TaskKind parse_task_kind(const std::string& name);
Split parse_split(const std::string& name);

inline constexpr double kBackground = 0.25;
inline constexpr double kForeground = 0.75;

struct TaskSpec {
  TaskKind kind = TaskKind::blobs;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t count = 100;
  double noise_std = 0.03;
  double boundary_blur = 1.0;
  std::uint64_t seed = 0;

  /// count >= 3, extents in [8, 128], non-negative noise and blur.
  void validate() const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct Sample {
  std::string id;
  Tensor image;  // [1,H,W]
  BinaryMask gt;
  Split split = Split::train;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  TaskSpec spec;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(Split which) const;
  const Sample* find(const std::string& id) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SplitSizes {
  std::size_t train, val, test;
};

/// val = test = max(1, floor(0.15 * count)); train takes the rest.
SplitSizes split_sizes(std::size_t count);

Dataset generate_dataset(const TaskSpec& spec);

void save_dataset(const std::string& dir, const Dataset& dataset);
/// Throws DataError naming the offending manifest line or file.
Dataset load_dataset(const std::string& dir);

}  // namespace mapo::data

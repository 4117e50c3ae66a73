#pragma once

#include <optional>

#include "mapo/mask.hpp"

namespace mapo::metrics {

/// 2|A and B| / (|A| + |B|); two empty masks score 1.
double dice_score(const BinaryMask& pred, const BinaryMask& gt);

/// Foreground pixels with at least one background 4-neighbour. Pixels
/// outside the image count as background.
BinaryMask surface(const BinaryMask& mask);

/// Symmetric average surface distance in pixels. nullopt ("undefined")
/// when exactly one mask is empty; 0 when both are.
std::optional<double> average_surface_distance(const BinaryMask& pred, const BinaryMask& gt);

}  // namespace mapo::metrics

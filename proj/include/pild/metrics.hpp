#pragma once

#include <vector>

#include "pild/data.hpp"
#include "pild/physics.hpp"

namespace pild {

struct MetricsReport {
  Real violation_rate = 0.0;     // fraction of samples with any |r_i| > 1e-9
  Real mean_abs_residual = 0.0;  // mean over samples of mean |R|
  Real energy_distance = 0.0;
};

/// Two-sample energy distance from pairwise Euclidean distances, halved:
///   E = 1/2 [ 2/(mn) sum|x-y| - 1/m^2 sum|x-x'| - 1/n^2 sum|y-y'| ],
/// so two point masses at distance d score exactly d. Sides larger than
/// max_side are sub-sampled without replacement using subsample_seed.
Real energy_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                     std::size_t max_side, std::uint64_t subsample_seed);

/// Residual metrics via residual_op on the raw samples plus energy distance
/// against the reference dataset. residual_op may be empty (no constraint),
/// which zeroes the residual columns.
MetricsReport evaluate(const std::vector<Tensor>& samples,
                       const Dataset& reference, const ResidualFn& residual_op,
                       std::size_t max_side = 2000,
                       std::uint64_t subsample_seed = 0);

}  // namespace pild

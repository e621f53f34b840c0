#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pild/physics.hpp"
#include "pild/tensor.hpp"

namespace pild {

/// Per-channel normalization statistics. A single entry applies globally;
/// otherwise the entry count must match the sample's leading axis.
struct NormStats {
  std::vector<Real> mean;
  std::vector<Real> stddev;

  std::size_t channels() const { return mean.size(); }
};

struct Dataset {
  std::string task;
  std::uint64_t seed = 0;
  std::vector<Tensor> samples;
  std::vector<Tensor> conditions;  // empty when unconditional
  NormStats stats;

  bool conditional() const { return !conditions.empty(); }
  std::size_t size() const { return samples.size(); }
  const Shape& sample_shape() const { return samples.front().shape(); }
};

// --- binary tensor container ---------------------------------------------
// Layout: magic "PILD", version u16 (=1), element code u8 (f32=1, f64=2),
// ndim u8, dims as u64, payload row-major. All fields little-endian.

void save_tensor(const std::filesystem::path& path, const Tensor& t,
                 bool as_f32 = false);
Tensor load_tensor(const std::filesystem::path& path);

// --- normalization ---------------------------------------------------------

NormStats compute_stats(const std::vector<Tensor>& samples,
                        std::size_t channels);
Tensor normalize(const Tensor& x, const NormStats& stats);
Tensor denormalize(const Tensor& x, const NormStats& stats);
/// Differentiable denormalization for use inside the training objective.
Tensor denormalize_on_tape(const Tensor& x, const NormStats& stats);

// --- generators ---------------------------------------------------------------

/// Uniform rejection samples over {A x <= b} from the region's bounding box
/// (found by enumerating vertices of the 2-D polytope). Aborts with
/// DataError when the acceptance rate over 1e5 proposals falls below 1%.
Dataset gen_parallelogram(std::size_t n, const InequalitySet& ineq,
                          std::uint64_t seed);

/// Log-normal permeability: unit-variance correlated Gaussian field
/// (white noise smoothed by a Gaussian kernel of std corr_len in domain
/// units, per-node variance renormalized) passed through exp.
Tensor gen_permeability(std::size_t s, Real corr_len, std::uint64_t seed);

/// Solves the 5-point flux system with homogeneous Neumann walls by
/// conjugate gradients on the mean-zero subspace. The returned pressure has
/// exact zero node mean. Throws NumericError if the relative residual does
/// not reach 1e-10 within 10 s^2 iterations.
Tensor solve_darcy(const Tensor& k, const DarcyProblem& prob);

/// n samples of shape [2, s, s]: channel 0 permeability, channel 1 pressure.
Dataset gen_darcy_dataset(std::size_t n, std::size_t s, Real corr_len,
                          const DarcyProblem& prob, std::uint64_t seed);

/// Trajectories a cos(w i dt) + b sin(w i dt) with standard normal (a, b);
/// condition is the initial segment (x_0, x_1).
Dataset gen_oscillator_dataset(std::size_t n, const OscillatorSpec& spec,
                               std::uint64_t seed);

// --- persistence -----------------------------------------------------------

/// Writes samples.bin (+ conditions.bin) and manifest.txt into dir.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// FNV-1a 64-bit hash of a file's bytes, as hex. Used to pin the dataset
/// manifest in run records.
std::string file_hash_hex(const std::filesystem::path& path);

}  // namespace pild

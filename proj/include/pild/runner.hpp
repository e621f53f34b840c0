#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pild/config.hpp"
#include "pild/data.hpp"
#include "pild/denoiser.hpp"
#include "pild/metrics.hpp"

namespace pild {

/// Everything a task needs at run time: the raw dataset, its normalized
/// training view, the network layout, and the two residual closures (the
/// training one denormalizes the DDIM estimate first; the evaluation one
/// expects raw samples).
struct TaskContext {
  Dataset dataset;
  std::vector<Tensor> normalized;
  NetConfig net_cfg;
  ResidualFn train_residual;  // empty when the task has no constraint
  ResidualFn eval_residual;

  std::shared_ptr<InequalitySet> inequality;
  std::shared_ptr<DarcyProblem> darcy;
  std::shared_ptr<OscillatorSpec> oscillator;
};

Dataset generate_dataset(const RunConfig& cfg);
TaskContext build_task(const RunConfig& cfg, Dataset dataset);

/// Builds the residual closure for a task over raw (denormalized) samples.
ResidualFn make_eval_residual(const RunConfig& cfg, const TaskContext& ctx);

// --- checkpoints ------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& prefix,
                     const DenoiserNet& net, const NormStats& stats,
                     const std::string& task);
/// Restores parameters into a freshly built net; the architecture comes from
/// the resolved config, the values from the container, the stats from the
/// manifest.
struct Checkpoint {
  std::unique_ptr<DenoiserNet> net;
  NormStats stats;
  std::string task;
};
Checkpoint load_checkpoint(const std::filesystem::path& prefix,
                           const NetConfig& net_cfg, std::uint64_t seed);

// --- run stages ---------------------------------------------------------------

/// Trains per the config, writing config.resolved, run_record.txt, loss.csv
/// and checkpoints into cfg.out_dir. Returns the run directory.
std::filesystem::path run_train(const RunConfig& cfg);

/// Draws n samples from a trained net (kind per cfg), denormalized to raw
/// units. Conditional tasks cycle through `conditions`.
std::vector<Tensor> generate_samples(const DenoiserNet& net,
                                     const NormStats& stats,
                                     const RunConfig& cfg,
                                     const std::vector<Tensor>* conditions,
                                     std::size_t n, Rng& rng);

/// Loads the run's checkpoint, samples, writes samples.bin plus CSV/PGM
/// renderings into the run directory, and returns the samples.
std::vector<Tensor> run_sample(const std::filesystem::path& run_dir,
                               std::size_t n_override = 0);

/// Samples from the run's checkpoint and evaluates against the dataset;
/// writes metrics.txt into the run directory.
MetricsReport run_eval(const std::filesystem::path& run_dir,
                       const std::filesystem::path& dataset_dir,
                       std::size_t n_override = 0);

/// One-axis sweep: trains each (value, seed) cell from the shared base
/// config, evaluates it, and appends a CSV row. Cell failures are recorded,
/// not fatal.
void run_ablate(const RunConfig& base, const std::string& axis,
                const std::vector<std::string>& values, std::size_t seeds,
                const std::filesystem::path& csv_out);

/// Ablation row as written to the sweep CSV.
struct AblateRow {
  std::string axis, value;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  Real mean_physics_term = 0.0;
  std::string status = "ok";
};
std::vector<AblateRow> ablate_rows(const RunConfig& base,
                                   const std::string& axis,
                                   const std::vector<std::string>& values,
                                   std::size_t seeds);

/// 8-bit grayscale PGM, min-max scaled; inspection aid only.
void write_pgm(const std::filesystem::path& path, const Tensor& field);

std::string format_real(Real v);  // %.17g, used by every CSV/metrics writer

}  // namespace pild

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "pild/denoiser.hpp"
#include "pild/loss.hpp"
#include "pild/sampler.hpp"
#include "pild/schedule.hpp"

namespace pild {

/// A full run description. Serialized as flat key=value lines with section
/// prefixes (e.g. schedule.T=100); the resolved form is echoed verbatim into
/// every run directory.
struct RunConfig {
  std::string task = "toy";  // toy | darcy | oscillator | gauss-sanity
  std::uint64_t seed = 7;
  std::string out_dir = "runs/out";
  std::string dataset_path;

  // dataset generation
  std::size_t data_n = 10000;
  std::size_t darcy_s = 16;
  Real darcy_corr_len = 0.1;
  std::size_t osc_length = 32;
  Real osc_omega = 2.0;
  Real osc_dt = 0.1;

  // schedule
  ScheduleKind sched_kind = ScheduleKind::Cosine;
  int T = 100;
  Real beta_min = 1e-4;
  Real beta_max = 0.03;

  // network
  Backbone backbone = Backbone::Mlp;
  Conditioning conditioning = Conditioning::None;
  std::size_t hidden = 128;
  std::size_t layers = 3;
  std::size_t base_channels = 16;
  std::size_t time_dim = 128;
  std::size_t heads = 4;
  std::size_t film_hidden = 64;
  std::size_t cond_tokens = 4;
  std::size_t token_width = 64;

  // loss
  Real c = 0.005;
  GateKind gate = GateKind::Log;
  ResidualModelKind residual_model = ResidualModelKind::Laplace;
  int substeps = 2;
  Real gamma_snr = 5.0;
  Real w_max = 100.0;

  // optimizer
  Real lr = 1e-3;
  Real adam_beta1 = 0.9;
  Real adam_beta2 = 0.999;
  Real adam_eps = 1e-8;

  // training
  std::size_t iterations = 400;
  std::size_t batch = 8;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only

  // sampling / eval
  std::string sampler_kind = "ddim2";  // ddim2 | ddimK | ancestral
  int sample_K = 10;
  std::size_t sample_n = 1000;
  std::size_t eval_subsample = 2000;

  NoiseSchedule make_schedule() const {
    return build_schedule(sched_kind, T, beta_min, beta_max);
  }
  LossConfig make_loss_config() const {
    return LossConfig{PhysicsWeightConfig{c, w_max, gate}, residual_model,
                      substeps, gamma_snr};
  }
  AdamConfig make_adam_config() const {
    return AdamConfig{lr, adam_beta1, adam_beta2, adam_eps};
  }
};

/// Task-appropriate defaults (backbone, conditioning, recipe constants).
RunConfig default_config(const std::string& task);

/// Parses key=value lines ('#' starts a comment). Unknown keys are errors.
RunConfig parse_config_file(const std::filesystem::path& path);

/// Applies a single "key=value" override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Serialization in a fixed key order.
std::string serialize_config(const RunConfig& cfg);

/// Validates every field against module invariants; throws ConfigError.
void validate_config(const RunConfig& cfg);

}  // namespace pild

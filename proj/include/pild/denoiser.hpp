#pragma once

#include <string>
#include <vector>

#include "pild/tensor.hpp"

namespace pild {

enum class Backbone { Mlp, Conv2d };
enum class Conditioning { None, Film, Attention };

/// Anything that predicts the forward-process noise from (x_t, t, cond).
/// Trained networks implement this, and so do the exact-inversion oracles
/// used by the sampler tests.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor predict(const Tensor& x_t, int t, const Tensor* cond) const = 0;
  virtual Conditioning conditioning() const = 0;
};

/// Contract wrapper: validates presence/absence of the condition against the
/// net's conditioning kind, then forwards to the net.
Tensor predict_noise(const NoisePredictor& net, const Tensor& x_t, int t,
                     const Tensor* cond = nullptr);

/// Sinusoidal timestep features of even width `dim`:
/// [sin(t w_0), ..., sin(t w_{m-1}), cos(t w_0), ..., cos(t w_{m-1})]
/// with w_k geometric from 1 down to 1/10000.
Tensor sinusoidal_time_features(int t, std::size_t dim);

/// FiLM: (1 + gamma) * h + beta. gamma/beta either match h's shape or are
/// per-channel vectors broadcast over h's trailing axes.
Tensor film_modulate(const Tensor& h, const Tensor& gamma, const Tensor& beta);

struct NetConfig {
  Backbone backbone = Backbone::Mlp;
  Conditioning conditioning = Conditioning::None;
  Shape data_shape;            // {d} for mlp, {C,H,W} for conv2d
  std::size_t cond_dim = 0;    // flattened condition size; 0 iff unconditional
  std::size_t hidden = 128;    // mlp width
  std::size_t layers = 3;      // mlp hidden blocks
  std::size_t base_channels = 16;
  std::size_t time_dim = 128;
  std::size_t heads = 4;
  std::size_t film_hidden = 64;
  std::size_t cond_tokens = 4;
  std::size_t token_width = 64;
};

namespace nn {

struct LinearLayer {
  Tensor weight, bias;
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct ConvLayer {
  Tensor kernel, bias;
  Tensor operator()(const Tensor& x) const { return conv2d(x, kernel, bias); }
};

/// Multi-head cross-attention with per-head projections. Queries come from
/// the hidden tokens, keys/values from the condition tokens; the attended
/// value is residual-added to the input. Output projections start at zero so
/// a fresh block is the identity.
struct CrossAttentionBlock {
  std::size_t head_dim = 0;
  std::vector<LinearLayer> to_q, to_k, to_v, to_out;

  /// h_tokens [Tq, C] x cond_tokens [Tc, W] -> [Tq, C].
  Tensor attend(const Tensor& h_tokens, const Tensor& cond_tokens) const;
};

}  // namespace nn

/// Epsilon-prediction network. Two backbones (MLP for vectors, a small
/// conv encoder-decoder with skip connections for 2-D fields), sinusoidal
/// time embedding added into every block, and an optional condition pathway
/// (FiLM or cross-attention).
class DenoiserNet : public NoisePredictor {
 public:
  DenoiserNet(NetConfig cfg, std::uint64_t seed);

  Tensor predict(const Tensor& x_t, int t, const Tensor* cond) const override;
  Conditioning conditioning() const override { return cfg_.conditioning; }
  const NetConfig& config() const { return cfg_; }

  struct NamedParam {
    std::string name;
    Tensor tensor;
  };
  const std::vector<NamedParam>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;

  /// Copies parameter values from another net with identical architecture.
  void copy_parameters_from(const DenoiserNet& other);

 private:
  struct Block;  // one modulated stage (shared between backbones)

  Tensor register_param(const std::string& name, Tensor t);
  nn::LinearLayer make_linear(const std::string& name, std::size_t out,
                              std::size_t in, Rng& rng, bool zero_init = false,
                              bool with_bias = true);
  nn::ConvLayer make_conv(const std::string& name, std::size_t cout,
                          std::size_t cin, std::size_t k, Rng& rng,
                          bool with_bias = true);
  nn::CrossAttentionBlock make_attention(const std::string& name,
                                         std::size_t query_width, Rng& rng);

  struct CondContext {
    Tensor film_hidden;  // set for FiLM conditioning
    Tensor tokens;       // set for attention conditioning
  };

  Tensor time_embedding(int t) const;
  Tensor condition_tokens(const Tensor& cond) const;
  Tensor apply_block(const Block& blk, const Tensor& h, const Tensor& temb,
                     const CondContext& ctx) const;
  Tensor forward_mlp(const Tensor& x_t, const Tensor& temb,
                     const CondContext& ctx) const;
  Tensor forward_conv(const Tensor& x_t, const Tensor& temb,
                      const CondContext& ctx) const;

  NetConfig cfg_;
  std::vector<NamedParam> params_;

  nn::LinearLayer time_lin1_, time_lin2_;

  struct Block {
    // exactly one of lin/conv is populated, per backbone
    nn::LinearLayer lin;
    nn::ConvLayer conv;
    nn::LinearLayer time_proj;            // time_dim -> block width
    nn::LinearLayer film_gamma, film_beta;  // film_hidden -> width, zero-init
    nn::CrossAttentionBlock attn;
    std::size_t width = 0;
  };
  std::vector<Block> blocks_;

  nn::LinearLayer in_proj_, out_proj_;  // mlp ends
  nn::ConvLayer out_conv_;              // conv end
  nn::LinearLayer film_trunk_;          // cond -> film_hidden
  nn::LinearLayer tokenizer_;           // cond -> cond_tokens * token_width
};

}  // namespace pild

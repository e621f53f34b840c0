#include "pild/denoiser.hpp"

#include <cmath>

namespace pild {

Tensor predict_noise(const NoisePredictor& net, const Tensor& x_t, int t,
                     const Tensor* cond) {
  if (net.conditioning() == Conditioning::None && cond != nullptr)
    throw ShapeError("predict_noise: condition passed to unconditional net");
  if (net.conditioning() != Conditioning::None && cond == nullptr)
    throw ShapeError("predict_noise: conditional net requires a condition");
  Tensor out = net.predict(x_t, t, cond);
  if (out.shape() != x_t.shape())
    throw ShapeError("predict_noise: output " + shape_str(out.shape()) +
                     " does not match input " + shape_str(x_t.shape()));
  return out;
}

Tensor sinusoidal_time_features(int t, std::size_t dim) {
  if (dim < 2 || dim % 2 != 0)
    throw ShapeError("sinusoidal_time_features: dim must be even and >= 2");
  std::size_t m = dim / 2;
  Tensor out = Tensor::zeros({dim});
  auto d = out.data_mut();
  for (std::size_t k = 0; k < m; ++k) {
    Real expo = m == 1 ? 0.0 : static_cast<Real>(k) / static_cast<Real>(m - 1);
    Real omega = std::pow(10000.0, -expo);
    d[k] = std::sin(t * omega);
    d[m + k] = std::cos(t * omega);
  }
  return out;
}

Tensor film_modulate(const Tensor& h, const Tensor& gamma, const Tensor& beta) {
  if (gamma.shape() != beta.shape())
    throw ShapeError("film_modulate: gamma " + shape_str(gamma.shape()) +
                     " vs beta " + shape_str(beta.shape()));
  if (gamma.shape() == h.shape())
    return add(mul(h, add_scalar(gamma, 1.0)), beta);
  if (gamma.ndim() == 1 && h.ndim() >= 2 && gamma.numel() == h.shape()[0])
    return channel_add(channel_mul(h, add_scalar(gamma, 1.0)), beta);
  throw ShapeError("film_modulate: gamma " + shape_str(gamma.shape()) +
                   " not broadcastable to h " + shape_str(h.shape()));
}

namespace nn {

Tensor CrossAttentionBlock::attend(const Tensor& h_tokens,
                                   const Tensor& cond_tokens) const {
  if (h_tokens.ndim() != 2 || cond_tokens.ndim() != 2)
    throw ShapeError("cross_attend: token matrices must be 2-D");
  Real scale = 1.0 / std::sqrt(static_cast<Real>(head_dim));
  Tensor out = h_tokens;
  for (std::size_t hidx = 0; hidx < to_q.size(); ++hidx) {
    Tensor q = to_q[hidx](h_tokens);     // [Tq, dh]
    Tensor k = to_k[hidx](cond_tokens);  // [Tc, dh]
    Tensor v = to_v[hidx](cond_tokens);  // [Tc, dh]
    Tensor scores = mul_scalar(matmul(q, transpose(k)), scale);
    Tensor attn = softmax_last(scores);
    Tensor ctx = matmul(attn, v);        // [Tq, dh]
    out = add(out, to_out[hidx](ctx));   // [Tq, C]
  }
  return out;
}

}  // namespace nn

// --- construction -------------------------------------------------------------

Tensor DenoiserNet::register_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

nn::LinearLayer DenoiserNet::make_linear(const std::string& name,
                                         std::size_t out, std::size_t in,
                                         Rng& rng, bool zero_init,
                                         bool with_bias) {
  Tensor w = Tensor::zeros({out, in});
  if (!zero_init) {
    Real s = std::sqrt(1.0 / static_cast<Real>(in));
    for (Real& v : w.data_mut()) v = rng.uniform(-s, s);
  }
  Tensor b = Tensor::zeros({out});
  if (!with_bias)  // fixed zero bias, not a trainable parameter
    return {register_param(name + ".w", w), b};
  return {register_param(name + ".w", w), register_param(name + ".b", b)};
}

nn::ConvLayer DenoiserNet::make_conv(const std::string& name, std::size_t cout,
                                     std::size_t cin, std::size_t k, Rng& rng,
                                     bool with_bias) {
  Tensor w = Tensor::zeros({cout, cin, k, k});
  Real s = std::sqrt(1.0 / static_cast<Real>(cin * k * k));
  for (Real& v : w.data_mut()) v = rng.uniform(-s, s);
  Tensor b = Tensor::zeros({cout});
  // a bias ahead of the per-channel normalization would be cancelled by it
  if (!with_bias) return {register_param(name + ".k", w), b};
  return {register_param(name + ".k", w), register_param(name + ".b", b)};
}

nn::CrossAttentionBlock DenoiserNet::make_attention(const std::string& name,
                                                    std::size_t query_width,
                                                    Rng& rng) {
  nn::CrossAttentionBlock blk;
  blk.head_dim = std::max<std::size_t>(query_width / cfg_.heads, 4);
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    std::string p = name + ".h" + std::to_string(h);
    blk.to_q.push_back(make_linear(p + ".q", blk.head_dim, query_width, rng));
    // a key bias shifts every score in a row equally and cancels in softmax
    blk.to_k.push_back(make_linear(p + ".k", blk.head_dim, cfg_.token_width,
                                   rng, false, false));
    blk.to_v.push_back(make_linear(p + ".v", blk.head_dim, cfg_.token_width, rng));
    // zero output projection: a fresh block leaves its input untouched
    blk.to_out.push_back(
        make_linear(p + ".o", query_width, blk.head_dim, rng, true));
  }
  return blk;
}

DenoiserNet::DenoiserNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.data_shape.empty())
    throw ConfigError("DenoiserNet: data_shape must be set");
  if (cfg_.backbone == Backbone::Mlp && cfg_.data_shape.size() != 1)
    throw ConfigError("DenoiserNet: mlp backbone expects 1-D data, got " +
                      shape_str(cfg_.data_shape));
  if (cfg_.backbone == Backbone::Conv2d) {
    if (cfg_.data_shape.size() != 3)
      throw ConfigError("DenoiserNet: conv2d backbone expects [C,H,W], got " +
                        shape_str(cfg_.data_shape));
    if (cfg_.data_shape[1] % 4 != 0 || cfg_.data_shape[2] % 4 != 0)
      throw ConfigError("DenoiserNet: conv2d needs H, W divisible by 4");
  }
  if (cfg_.conditioning != Conditioning::None && cfg_.cond_dim == 0)
    throw ConfigError("DenoiserNet: conditional net needs cond_dim > 0");
  if (cfg_.conditioning == Conditioning::None && cfg_.cond_dim != 0)
    throw ConfigError("DenoiserNet: unconditional net must have cond_dim 0");

  Rng rng(seed);

  time_lin1_ = make_linear("time.lin1", cfg_.time_dim, cfg_.time_dim, rng);
  time_lin2_ = make_linear("time.lin2", cfg_.time_dim, cfg_.time_dim, rng);

  if (cfg_.conditioning == Conditioning::Film)
    film_trunk_ = make_linear("film.trunk", cfg_.film_hidden, cfg_.cond_dim, rng);
  if (cfg_.conditioning == Conditioning::Attention)
    tokenizer_ = make_linear("cond.tokenizer",
                             cfg_.cond_tokens * cfg_.token_width, cfg_.cond_dim,
                             rng);

  auto add_block = [&](const std::string& name, std::size_t width) {
    Block blk;
    blk.width = width;
    blk.time_proj = make_linear(name + ".time", width, cfg_.time_dim, rng);
    if (cfg_.conditioning == Conditioning::Film) {
      blk.film_gamma =
          make_linear(name + ".gamma", width, cfg_.film_hidden, rng, true);
      blk.film_beta =
          make_linear(name + ".beta", width, cfg_.film_hidden, rng, true);
    }
    if (cfg_.conditioning == Conditioning::Attention)
      blk.attn = make_attention(name + ".attn", width, rng);
    return blk;
  };

  if (cfg_.backbone == Backbone::Mlp) {
    std::size_t d = cfg_.data_shape[0];
    in_proj_ = make_linear("in", cfg_.hidden, d, rng);
    for (std::size_t i = 0; i < cfg_.layers; ++i) {
      std::string name = "block" + std::to_string(i);
      Block blk = add_block(name, cfg_.hidden);
      blk.lin = make_linear(name + ".lin", cfg_.hidden, cfg_.hidden, rng);
      blocks_.push_back(std::move(blk));
    }
    out_proj_ = make_linear("out", d, cfg_.hidden, rng);
  } else {
    std::size_t cin = cfg_.data_shape[0];
    std::size_t bc = cfg_.base_channels;
    struct Stage { std::size_t in, out; };
    const Stage stages[5] = {{cin, bc},          // enc0 @ s
                             {bc, 2 * bc},       // enc1 @ s/2
                             {2 * bc, 4 * bc},   // mid  @ s/4
                             {6 * bc, 2 * bc},   // dec0 @ s/2 (skip concat)
                             {3 * bc, bc}};      // dec1 @ s   (skip concat)
    for (std::size_t i = 0; i < 5; ++i) {
      std::string name = "conv" + std::to_string(i);
      Block blk = add_block(name, stages[i].out);
      blk.conv = make_conv(name + ".conv", stages[i].out, stages[i].in, 3, rng,
                           false);
      blocks_.push_back(std::move(blk));
    }
    out_conv_ = make_conv("out.conv", cin, bc, 3, rng);
  }
}

std::vector<Tensor> DenoiserNet::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

void DenoiserNet::copy_parameters_from(const DenoiserNet& other) {
  if (other.params_.size() != params_.size())
    throw ShapeError("copy_parameters_from: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (other.params_[i].tensor.shape() != params_[i].tensor.shape())
      throw ShapeError("copy_parameters_from: shape mismatch at " +
                       params_[i].name);
    auto src = other.params_[i].tensor.data();
    auto dst = params_[i].tensor.data_mut();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// --- forward -------------------------------------------------------------------

Tensor DenoiserNet::time_embedding(int t) const {
  Tensor feats = sinusoidal_time_features(t, cfg_.time_dim);
  return time_lin2_(silu(time_lin1_(feats)));
}

Tensor DenoiserNet::condition_tokens(const Tensor& cond) const {
  Tensor flat = cond.ndim() == 1 ? cond : reshape(cond, {cond.numel()});
  Tensor tok = tokenizer_(flat);
  return reshape(tok, {cfg_.cond_tokens, cfg_.token_width});
}

Tensor DenoiserNet::apply_block(const Block& blk, const Tensor& h,
                                const Tensor& temb,
                                const CondContext& ctx) const {
  bool conv = cfg_.backbone == Backbone::Conv2d;
  Tensor z = conv ? blk.conv(h) : blk.lin(h);

  // norm -> time shift -> modulate -> activation; conv features are
  // normalized per channel over the spatial extent. The time shift sits
  // after the normalization, which would otherwise cancel a per-channel
  // constant exactly.
  if (conv) {
    Shape s = z.shape();
    z = reshape(z, {s[0], s[1] * s[2]});
    z = layer_norm_last(z);
    z = reshape(z, s);
  } else {
    z = layer_norm_last(z);
  }
  Tensor tproj = blk.time_proj(temb);
  z = conv ? channel_add(z, tproj) : add(z, tproj);

  if (ctx.film_hidden.defined()) {
    z = film_modulate(z, blk.film_gamma(ctx.film_hidden),
                      blk.film_beta(ctx.film_hidden));
  } else if (ctx.tokens.defined()) {
    if (conv) {
      Shape s = z.shape();
      Tensor q = transpose(reshape(z, {s[0], s[1] * s[2]}));  // [HW, C]
      q = blk.attn.attend(q, ctx.tokens);
      z = reshape(transpose(q), s);
    } else {
      Tensor q = reshape(z, {1, z.numel()});
      z = reshape(blk.attn.attend(q, ctx.tokens), z.shape());
    }
  }
  return silu(z);
}

Tensor DenoiserNet::forward_mlp(const Tensor& x_t, const Tensor& temb,
                                const CondContext& ctx) const {
  Tensor h = in_proj_(x_t);
  for (const Block& blk : blocks_) h = apply_block(blk, h, temb, ctx);
  return out_proj_(h);
}

Tensor DenoiserNet::forward_conv(const Tensor& x_t, const Tensor& temb,
                                 const CondContext& ctx) const {
  Tensor b1 = apply_block(blocks_[0], x_t, temb, ctx);
  Tensor b2 = apply_block(blocks_[1], avg_pool2(b1), temb, ctx);
  Tensor mid = apply_block(blocks_[2], avg_pool2(b2), temb, ctx);
  Tensor u1 = concat0(upsample_nearest2(mid), b2);
  Tensor d1 = apply_block(blocks_[3], u1, temb, ctx);
  Tensor u2 = concat0(upsample_nearest2(d1), b1);
  Tensor d2 = apply_block(blocks_[4], u2, temb, ctx);
  return out_conv_(d2);
}

Tensor DenoiserNet::predict(const Tensor& x_t, int t, const Tensor* cond) const {
  if (x_t.shape() != cfg_.data_shape)
    throw ShapeError("DenoiserNet: input " + shape_str(x_t.shape()) +
                     " does not match configured data shape " +
                     shape_str(cfg_.data_shape));
  if (cond != nullptr && cond->numel() != cfg_.cond_dim)
    throw ShapeError("DenoiserNet: condition has " +
                     std::to_string(cond->numel()) + " values, expected " +
                     std::to_string(cfg_.cond_dim));
  Tensor temb = time_embedding(t);

  CondContext ctx;
  if (cond != nullptr && cfg_.conditioning == Conditioning::Film) {
    Tensor flat = cond->ndim() == 1 ? *cond : reshape(*cond, {cond->numel()});
    ctx.film_hidden = silu(film_trunk_(flat));
  } else if (cond != nullptr && cfg_.conditioning == Conditioning::Attention) {
    ctx.tokens = condition_tokens(*cond);
  }

  return cfg_.backbone == Backbone::Mlp ? forward_mlp(x_t, temb, ctx)
                                        : forward_conv(x_t, temb, ctx);
}

}  // namespace pild

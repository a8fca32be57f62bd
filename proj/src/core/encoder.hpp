#pragma once

// Series encoders: map a raw univariate series to a d-dimensional embedding.
// Two variants share one preprocessing contract (linear resample to a fixed
// length, then z-normalization with the population-std convention — the same
// convention the retrieval module uses, so distances and embeddings see the
// exact same vectors).

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "common.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace tict {

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

inline std::vector<double> resample_linear(const std::vector<double>& x, int L) {
  int n = static_cast<int>(x.size());
  if (n == L) return x;
  std::vector<double> out(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i) {
    double pos = L == 1 ? 0.0 : static_cast<double>(i) * (n - 1) / (L - 1);
    int j = std::min(static_cast<int>(pos), n - 2);
    double frac = pos - j;
    out[static_cast<size_t>(i)] = x[static_cast<size_t>(j)] * (1.0 - frac) + x[static_cast<size_t>(j) + 1] * frac;
  }
  return out;
}

// Zero mean, unit std (1/n convention); constant series become all-zeros.
inline void znorm_inplace(std::vector<double>& x) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  if (var <= 1e-20 * std::max(1.0, mean * mean)) {
    std::fill(x.begin(), x.end(), 0.0);
    return;
  }
  double inv = 1.0 / std::sqrt(var);
  for (double& v : x) v = (v - mean) * inv;
}

inline std::vector<double> preprocess(const std::vector<double>& series, int L) {
  if (series.size() < 2)
    fail(ErrCode::kInput, "series too short to preprocess: length " + std::to_string(series.size()));
  for (double v : series)
    if (!std::isfinite(v)) fail(ErrCode::kInput, "series contains a non-finite value");
  auto out = resample_linear(series, L);
  znorm_inplace(out);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class EncoderVariant { kResNet, kTransformer };

struct SeriesEncoderConfig {
  EncoderVariant variant = EncoderVariant::kResNet;
  int d = 128;
  int L = 512;
  std::array<int, 3> filters{64, 128, 128};
  std::array<int, 3> kernels{8, 5, 3};
  int patch_len = 16;   // transformer variant
  int tf_layers = 2;    // transformer variant
  int tf_heads = 4;     // transformer variant
  int ffn_mult = 4;

  void validate() const {
    if (d <= 0 || L <= 0) fail(ErrCode::kConfig, "encoder dims must be positive");
    if (variant == EncoderVariant::kTransformer) {
      if (patch_len <= 0 || L % patch_len != 0)
        fail(ErrCode::kConfig, "patch length " + std::to_string(patch_len) + " must divide series length " +
                                   std::to_string(L));
      if (tf_heads <= 0 || d % tf_heads != 0)
        fail(ErrCode::kConfig, "embed dim " + std::to_string(d) + " not divisible by " +
                                   std::to_string(tf_heads) + " heads");
    }
    for (int f : filters)
      if (f <= 0) fail(ErrCode::kConfig, "filter counts must be positive");
    for (int k : kernels)
      if (k <= 0) fail(ErrCode::kConfig, "kernel widths must be positive");
  }
};

// ---------------------------------------------------------------------------
// ResNet variant: three residual blocks of conv-norm-relu x3 with a projected
// skip, global average pooling over time, then a linear head to d.
// ---------------------------------------------------------------------------

template <class Real>
struct ResConvBlockT {
  TensorT<Real> k1, k2, k3, kskip;
  ChannelNormT<Real> n1, n2, n3, nskip;

  void init(int cin, int cout, const std::array<int, 3>& widths, Rng& rng) {
    auto conv_init = [&](int ci, int co, int w) {
      return glorot_normal<Real>({co, ci, w}, ci * w, co * w, rng);
    };
    k1 = conv_init(cin, cout, widths[0]);
    k2 = conv_init(cout, cout, widths[1]);
    k3 = conv_init(cout, cout, widths[2]);
    kskip = conv_init(cin, cout, 1);
    n1.init(cout);
    n2.init(cout);
    n3.init(cout);
    nskip.init(cout);
  }

  TensorT<Real> forward(const TensorT<Real>& x) const {
    auto h = relu(n1.forward(conv1d_same(x, k1)));
    h = relu(n2.forward(conv1d_same(h, k2)));
    h = n3.forward(conv1d_same(h, k3));
    auto s = nskip.forward(conv1d_same(x, kskip));
    return relu(add(h, s));
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".k1", k1);
    v(prefix + ".k2", k2);
    v(prefix + ".k3", k3);
    v(prefix + ".kskip", kskip);
    n1.visit(prefix + ".n1", v);
    n2.visit(prefix + ".n2", v);
    n3.visit(prefix + ".n3", v);
    nskip.visit(prefix + ".nskip", v);
  }
};

template <class Real>
struct ResNetEncoderT {
  SeriesEncoderConfig cfg;
  ResConvBlockT<Real> b1, b2, b3;
  LinearT<Real> head;

  void init(const SeriesEncoderConfig& c, Rng& rng) {
    cfg = c;
    b1.init(1, c.filters[0], c.kernels, rng);
    b2.init(c.filters[0], c.filters[1], c.kernels, rng);
    b3.init(c.filters[1], c.filters[2], c.kernels, rng);
    head.init(c.filters[2], c.d, rng);
  }

  // x: (batch, 1, L) -> (batch, d)
  TensorT<Real> forward(const TensorT<Real>& x) const {
    if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != cfg.L)
      fail(ErrCode::kDimension, "encoder expects (batch,1," + std::to_string(cfg.L) + "), got " +
                                    shape_str(x.shape()));
    auto h = b3.forward(b2.forward(b1.forward(x)));
    return head.forward(mean_axis(h, 2));
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    b1.visit(prefix + ".b1", v);
    b2.visit(prefix + ".b2", v);
    b3.visit(prefix + ".b3", v);
    head.visit(prefix + ".head", v);
  }
};

// ---------------------------------------------------------------------------
// Transformer variant: non-overlapping patches, linear patch embedding plus a
// learned positional embedding, pre-norm self-attention blocks, mean pooling.
// ---------------------------------------------------------------------------

template <class Real>
struct PatchTransformerEncoderT {
  SeriesEncoderConfig cfg;
  LinearT<Real> patch_embed;
  TensorT<Real> pos;  // (tokens, d), learned
  std::vector<EncoderBlockT<Real>> blocks;
  LayerNormT<Real> ln_final;

  void init(const SeriesEncoderConfig& c, Rng& rng) {
    cfg = c;
    int tokens = c.L / c.patch_len;
    patch_embed.init(c.patch_len, c.d, rng);
    {
      std::vector<Real> pv(static_cast<size_t>(tokens) * c.d);
      for (auto& x : pv) x = static_cast<Real>(rng.normal() * 0.02);
      pos = TensorT<Real>::from_vector({tokens, c.d}, std::move(pv));
      pos.set_requires_grad(true);
    }
    blocks.resize(static_cast<size_t>(c.tf_layers));
    for (auto& blk : blocks) blk.init(c.d, c.tf_heads, c.d * c.ffn_mult, rng);
    ln_final.init(c.d);
  }

  // x: (batch, 1, L) -> (batch, d)
  TensorT<Real> forward(const TensorT<Real>& x) const {
    if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != cfg.L)
      fail(ErrCode::kDimension, "encoder expects (batch,1," + std::to_string(cfg.L) + "), got " +
                                    shape_str(x.shape()));
    int B = x.dim(0);
    int tokens = cfg.L / cfg.patch_len;
    auto tok = reshape(x, {B, tokens, cfg.patch_len});
    auto h = add(patch_embed.forward(tok), pos);
    for (auto& blk : blocks) h = blk.forward(h);
    return mean_axis(ln_final.forward(h), 1);
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    patch_embed.visit(prefix + ".patch_embed", v);
    v(prefix + ".pos", pos);
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blk" + std::to_string(i), v);
    ln_final.visit(prefix + ".ln_final", v);
  }
};

// ---------------------------------------------------------------------------
// Variant dispatcher
// ---------------------------------------------------------------------------

template <class Real>
struct SeriesEncoderT {
  SeriesEncoderConfig cfg;
  ResNetEncoderT<Real> resnet;
  PatchTransformerEncoderT<Real> transformer;

  void init(const SeriesEncoderConfig& c, Rng& rng) {
    c.validate();
    cfg = c;
    if (c.variant == EncoderVariant::kResNet)
      resnet.init(c, rng);
    else
      transformer.init(c, rng);
  }

  TensorT<Real> forward(const TensorT<Real>& x) const {
    return cfg.variant == EncoderVariant::kResNet ? resnet.forward(x) : transformer.forward(x);
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    if (cfg.variant == EncoderVariant::kResNet)
      resnet.visit(prefix, v);
    else
      transformer.visit(prefix, v);
  }
};

}  // namespace tict

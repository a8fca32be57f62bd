#pragma once

// Neural-network building blocks on top of the tensor engine: linear layers,
// layer norm, multi-head attention, feed-forward, and the pre-norm encoder /
// decoder blocks the model stacks. Everything is templated on the scalar type
// so gradient-check tests can instantiate the exact production graph in
// double precision.
//
// Parameter registration: every module exposes
//   visit(prefix, fn)  with fn(name, TensorT<Real>&)
// which yields each parameter exactly once under a stable dotted name. The
// optimizer, checkpointing and the gradient checker are all built on it.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace tict {

template <class Real>
TensorT<Real> glorot_normal(Shape shape, int fan_in, int fan_out, Rng& rng) {
  double sigma = std::sqrt(2.0 / (fan_in + fan_out));
  std::vector<Real> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Real>(rng.normal() * sigma);
  auto t = TensorT<Real>::from_vector(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <class Real>
TensorT<Real> zeros_param(Shape shape) {
  auto t = TensorT<Real>::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <class Real>
TensorT<Real> ones_param(Shape shape) {
  auto t = TensorT<Real>::filled(std::move(shape), Real(1));
  t.set_requires_grad(true);
  return t;
}

// ---------------------------------------------------------------------------

template <class Real>
struct LinearT {
  TensorT<Real> w;  // (in, out)
  TensorT<Real> b;  // (out)

  void init(int in, int out, Rng& rng) {
    w = glorot_normal<Real>({in, out}, in, out, rng);
    b = zeros_param<Real>({out});
  }

  TensorT<Real> forward(const TensorT<Real>& x) const { return add(matmul(x, w), b); }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".w", w);
    v(prefix + ".b", b);
  }
};

template <class Real>
struct LayerNormT {
  TensorT<Real> g, b;

  void init(int d) {
    g = ones_param<Real>({d});
    b = zeros_param<Real>({d});
  }

  TensorT<Real> forward(const TensorT<Real>& x) const { return layernorm(x, g, b); }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".g", g);
    v(prefix + ".b", b);
  }
};

// Normalizes the channel axis of (batch, channels, length) activations at
// every time step — the per-sample stand-in for batch norm, keeping each
// sample's features independent of the rest of the batch.
template <class Real>
struct ChannelNormT {
  LayerNormT<Real> ln;

  void init(int channels) { ln.init(channels); }

  TensorT<Real> forward(const TensorT<Real>& x) const {
    auto xt = permute(x, {0, 2, 1});  // (b, l, c)
    return permute(ln.forward(xt), {0, 2, 1});
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    ln.visit(prefix, v);
  }
};

// ---------------------------------------------------------------------------

// Multi-head scaled dot-product attention. Queries and key/value sources are
// (batch, n, d) — pass the same tensor for self-attention. No masking: the
// model only ever attends from queries to a full context set.
template <class Real>
struct MultiHeadAttentionT {
  LinearT<Real> wq, wk, wv, wo;
  int d = 0, heads = 0;

  void init(int d_, int heads_, Rng& rng) {
    if (heads_ <= 0 || d_ % heads_ != 0)
      fail(ErrCode::kConfig, "attention width " + std::to_string(d_) + " not divisible by " +
                                 std::to_string(heads_) + " heads");
    d = d_;
    heads = heads_;
    wq.init(d, d, rng);
    wk.init(d, d, rng);
    wv.init(d, d, rng);
    wo.init(d, d, rng);
  }

  TensorT<Real> forward(const TensorT<Real>& q_in, const TensorT<Real>& kv_in) const {
    if (q_in.rank() != 3 || kv_in.rank() != 3)
      fail(ErrCode::kDimension, "attention expects (batch, n, d) inputs, got " + shape_str(q_in.shape()) +
                                    " and " + shape_str(kv_in.shape()));
    int B = q_in.dim(0), nq = q_in.dim(1), nk = kv_in.dim(1);
    int dh = d / heads;

    auto split = [&](const TensorT<Real>& t, int n) {
      return permute(reshape(t, {B, n, heads, dh}), {0, 2, 1, 3});  // (b, h, n, dh)
    };
    auto qh = split(wq.forward(q_in), nq);
    auto kh = split(wk.forward(kv_in), nk);
    auto vh = split(wv.forward(kv_in), nk);

    auto scores = scale(matmul(qh, permute(kh, {0, 1, 3, 2})), Real(1) / static_cast<Real>(std::sqrt(double(dh))));
    auto attn = softmax(scores, -1);
    auto ctx = matmul(attn, vh);                                  // (b, h, nq, dh)
    auto merged = reshape(permute(ctx, {0, 2, 1, 3}), {B, nq, d});
    return wo.forward(merged);
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    wq.visit(prefix + ".wq", v);
    wk.visit(prefix + ".wk", v);
    wv.visit(prefix + ".wv", v);
    wo.visit(prefix + ".wo", v);
  }
};

template <class Real>
struct FeedForwardT {
  LinearT<Real> fc1, fc2;

  void init(int d, int hidden, Rng& rng) {
    fc1.init(d, hidden, rng);
    fc2.init(hidden, d, rng);
  }

  TensorT<Real> forward(const TensorT<Real>& x) const { return fc2.forward(relu(fc1.forward(x))); }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    fc1.visit(prefix + ".fc1", v);
    fc2.visit(prefix + ".fc2", v);
  }
};

// Pre-norm self-attention block: x += attn(ln(x)); x += ffn(ln(x)).
template <class Real>
struct EncoderBlockT {
  LayerNormT<Real> ln1, ln2;
  MultiHeadAttentionT<Real> attn;
  FeedForwardT<Real> ffn;

  void init(int d, int heads, int ffn_hidden, Rng& rng) {
    ln1.init(d);
    ln2.init(d);
    attn.init(d, heads, rng);
    ffn.init(d, ffn_hidden, rng);
  }

  TensorT<Real> forward(const TensorT<Real>& x) const {
    auto h = ln1.forward(x);
    auto y = add(x, attn.forward(h, h));
    return add(y, ffn.forward(ln2.forward(y)));
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    ln1.visit(prefix + ".ln1", v);
    ln2.visit(prefix + ".ln2", v);
    attn.visit(prefix + ".attn", v);
    ffn.visit(prefix + ".ffn", v);
  }
};

// Decoder block without self-attention: queries cross-attend to a fixed
// memory, then feed-forward. Each query row is independent of the others.
template <class Real>
struct DecoderBlockT {
  LayerNormT<Real> ln_q, ln_kv, ln2;
  MultiHeadAttentionT<Real> attn;
  FeedForwardT<Real> ffn;

  void init(int d, int heads, int ffn_hidden, Rng& rng) {
    ln_q.init(d);
    ln_kv.init(d);
    ln2.init(d);
    attn.init(d, heads, rng);
    ffn.init(d, ffn_hidden, rng);
  }

  TensorT<Real> forward(const TensorT<Real>& x, const TensorT<Real>& memory) const {
    auto y = add(x, attn.forward(ln_q.forward(x), ln_kv.forward(memory)));
    return add(y, ffn.forward(ln2.forward(y)));
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    ln_q.visit(prefix + ".ln_q", v);
    ln_kv.visit(prefix + ".ln_kv", v);
    ln2.visit(prefix + ".ln2", v);
    attn.visit(prefix + ".attn", v);
    ffn.visit(prefix + ".ffn", v);
  }
};

}  // namespace tict

#pragma once

// The in-context classifier: series embeddings fused with bit-encoded labels
// form the context; an encoder stack (self-attention, no positional encoding
// — context is a set) produces context representations; test embeddings pass
// through a decoder stack of cross-attention only (so each query is
// independent of the others); the output attention scores queries against
// context and mixes the context's ONE-HOT labels with the attention weights.
// Class c's logit is therefore the total attention mass on class-c context
// items: the logits are already a distribution, and no parameter anywhere is
// sized by the class count.

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "encoder.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace tict {

// ---------------------------------------------------------------------------
// Bit labels
// ---------------------------------------------------------------------------

// Little-endian binary expansion of a class id: bit 0 is the least
// significant. A class id that does not fit in n_bit bits is a capacity
// error — the caller's class count exceeds what the model was built for.
inline std::vector<uint8_t> encode_label_bits(int class_id, int n_bit) {
  if (n_bit <= 0 || n_bit > 30) fail(ErrCode::kConfig, "n_bit must be in [1,30], got " + std::to_string(n_bit));
  if (class_id < 0) fail(ErrCode::kIndex, "class id must be nonnegative, got " + std::to_string(class_id));
  if (class_id >= (1 << n_bit))
    fail(ErrCode::kCapacity, "class id " + std::to_string(class_id) + " does not fit in " +
                                 std::to_string(n_bit) + " bits (capacity " + std::to_string(1 << n_bit) + ")");
  std::vector<uint8_t> bits(static_cast<size_t>(n_bit));
  for (int i = 0; i < n_bit; ++i) bits[static_cast<size_t>(i)] = static_cast<uint8_t>((class_id >> i) & 1);
  return bits;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct IclConfig {
  SeriesEncoderConfig enc;
  int n_bit = 6;
  int enc_layers = 4;
  int dec_layers = 2;
  int heads = 4;
  int ffn_mult = 4;
  // When true, training applies a second softmax over the output-attention
  // distribution before the cross-entropy (the logits already sum to one, so
  // the default scores them directly with -log(p[target] + eps)).
  bool second_softmax = false;

  int capacity() const { return 1 << n_bit; }

  void validate() const {
    enc.validate();
    if (n_bit <= 0 || n_bit > 30) fail(ErrCode::kConfig, "n_bit must be in [1,30]");
    if (enc_layers < 0 || dec_layers < 0) fail(ErrCode::kConfig, "layer counts must be nonnegative");
    if (heads <= 0 || enc.d % heads != 0)
      fail(ErrCode::kConfig, "embed dim " + std::to_string(enc.d) + " not divisible by " +
                                 std::to_string(heads) + " heads");
  }
};

// ---------------------------------------------------------------------------
// Label tensors
// ---------------------------------------------------------------------------

// (k, n_bit) bit matrix for the given class ids under an explicit class->bit
// pattern assignment (pattern index = class id when assignment is identity).
template <class Real>
TensorT<Real> bits_tensor(const std::vector<int>& labels, const std::vector<int>& assignment, int n_bit) {
  int k = static_cast<int>(labels.size());
  std::vector<Real> v(static_cast<size_t>(k) * n_bit);
  for (int i = 0; i < k; ++i) {
    int cls = labels[static_cast<size_t>(i)];
    if (cls < 0 || cls >= static_cast<int>(assignment.size()))
      fail(ErrCode::kIndex, "class id " + std::to_string(cls) + " outside assignment table of size " +
                                std::to_string(assignment.size()));
    auto bits = encode_label_bits(assignment[static_cast<size_t>(cls)], n_bit);
    for (int j = 0; j < n_bit; ++j) v[static_cast<size_t>(i) * n_bit + j] = static_cast<Real>(bits[static_cast<size_t>(j)]);
  }
  return TensorT<Real>::from_vector({k, n_bit}, std::move(v));
}

template <class Real>
TensorT<Real> onehot_tensor(const std::vector<int>& labels, int C) {
  int k = static_cast<int>(labels.size());
  std::vector<Real> v(static_cast<size_t>(k) * C, Real(0));
  for (int i = 0; i < k; ++i) {
    int cls = labels[static_cast<size_t>(i)];
    if (cls < 0 || cls >= C)
      fail(ErrCode::kIndex, "class id " + std::to_string(cls) + " out of range [0," + std::to_string(C) + ")");
    v[static_cast<size_t>(i) * C + cls] = Real(1);
  }
  return TensorT<Real>::from_vector({k, C}, std::move(v));
}

inline std::vector<int> identity_assignment(int C) {
  std::vector<int> a(static_cast<size_t>(C));
  for (int i = 0; i < C; ++i) a[static_cast<size_t>(i)] = i;
  return a;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class Real>
struct IclModelT {
  IclConfig cfg;
  SeriesEncoderT<Real> encoder;
  LinearT<Real> fuse;                            // (d + n_bit) -> d
  std::vector<EncoderBlockT<Real>> ctx_blocks;   // self-attention over context
  LayerNormT<Real> ln_ctx;                       // closing norm of the pre-norm stack
  std::vector<DecoderBlockT<Real>> test_blocks;  // cross-attention only
  LayerNormT<Real> ln_test;
  TensorT<Real> out_wq, out_wk;                  // output attention projections, d -> d

  void init(const IclConfig& c, uint64_t seed) {
    c.validate();
    cfg = c;
    Rng rng(seed);
    int d = c.enc.d;
    encoder.init(c.enc, rng);
    fuse.init(d + c.n_bit, d, rng);
    ctx_blocks.resize(static_cast<size_t>(c.enc_layers));
    for (auto& blk : ctx_blocks) blk.init(d, c.heads, d * c.ffn_mult, rng);
    ln_ctx.init(d);
    test_blocks.resize(static_cast<size_t>(c.dec_layers));
    for (auto& blk : test_blocks) blk.init(d, c.heads, d * c.ffn_mult, rng);
    ln_test.init(d);
    out_wq = glorot_normal<Real>({d, d}, d, d, rng);
    out_wk = glorot_normal<Real>({d, d}, d, d, rng);
  }

  template <class V>
  void visit(const std::string& prefix, V&& v) {
    encoder.visit(prefix + ".enc", v);
    fuse.visit(prefix + ".fuse", v);
    for (size_t i = 0; i < ctx_blocks.size(); ++i) ctx_blocks[i].visit(prefix + ".ctx" + std::to_string(i), v);
    ln_ctx.visit(prefix + ".ln_ctx", v);
    for (size_t i = 0; i < test_blocks.size(); ++i) test_blocks[i].visit(prefix + ".dec" + std::to_string(i), v);
    ln_test.visit(prefix + ".ln_test", v);
    v(prefix + ".out.wq", out_wq);
    v(prefix + ".out.wk", out_wk);
  }

  // -- pipeline stages (each accepts (n, d) or batched (B, n, d)) ----------

  // Concatenate each context embedding with its bit label, project back to d.
  TensorT<Real> fuse_context(const TensorT<Real>& e_ctx, const TensorT<Real>& y_bit) const {
    if (e_ctx.rank() != y_bit.rank() || e_ctx.dim(e_ctx.rank() - 2) != y_bit.dim(y_bit.rank() - 2))
      fail(ErrCode::kDimension, "context rows " + shape_str(e_ctx.shape()) + " vs bit rows " +
                                    shape_str(y_bit.shape()));
    return fuse.forward(concat(e_ctx, y_bit, -1));
  }

  TensorT<Real> run_encoder(const TensorT<Real>& fused) const {
    auto h = fused;
    for (auto& blk : ctx_blocks) h = blk.forward(h);
    return ln_ctx.forward(h);
  }

  TensorT<Real> run_decoder(const TensorT<Real>& e_test, const TensorT<Real>& h_ctx) const {
    auto h = e_test;
    bool lifted = h.rank() == 2;
    auto mem = h_ctx;
    if (lifted) {
      h = reshape(h, {1, h.dim(0), h.dim(1)});
      mem = reshape(mem, {1, mem.dim(0), mem.dim(1)});
    }
    for (auto& blk : test_blocks) h = blk.forward(h, mem);
    h = ln_test.forward(h);
    if (lifted) h = reshape(h, {h.dim(1), h.dim(2)});
    return h;
  }

  struct Attention {
    TensorT<Real> logits;   // (m, C) or (B, m, C); rows sum to 1
    TensorT<Real> weights;  // (m, k) or (B, m, k)
  };

  // Q = H_test W_Q, K = H_ctx W_K, alpha = softmax(QK^T / sqrt(d)); the class
  // logits are alpha routed through the one-hot labels.
  Attention output_attention(const TensorT<Real>& h_test, const TensorT<Real>& h_ctx,
                             const TensorT<Real>& y_onehot) const {
    validate_onehot(y_onehot);
    int d = cfg.enc.d;
    auto q = matmul(h_test, out_wq);
    auto k = matmul(h_ctx, out_wk);
    std::vector<int> tperm = k.rank() == 3 ? std::vector<int>{0, 2, 1} : std::vector<int>{1, 0};
    auto scores = scale(matmul(q, permute(k, tperm)), Real(1) / static_cast<Real>(std::sqrt(double(d))));
    auto alpha = softmax(scores, -1);
    return Attention{matmul(alpha, y_onehot), alpha};
  }

  // -- end-to-end inference -------------------------------------------------

  // Series tensor (k, 1, L) from preprocessed inputs, cast to model precision.
  TensorT<Real> series_tensor(const std::vector<std::vector<double>>& prepped) const {
    int L = cfg.enc.L;
    int k = static_cast<int>(prepped.size());
    std::vector<Real> v(static_cast<size_t>(k) * L);
    for (int i = 0; i < k; ++i) {
      if (static_cast<int>(prepped[static_cast<size_t>(i)].size()) != L)
        fail(ErrCode::kDimension, "series " + std::to_string(i) + " not preprocessed to length " +
                                      std::to_string(L));
      for (int j = 0; j < L; ++j)
        v[static_cast<size_t>(i) * L + j] = static_cast<Real>(prepped[static_cast<size_t>(i)][static_cast<size_t>(j)]);
    }
    return TensorT<Real>::from_vector({k, 1, L}, std::move(v));
  }

  TensorT<Real> embed_series(const std::vector<std::vector<double>>& prepped) const {
    return encoder.forward(series_tensor(prepped));
  }

  // Forward from already-computed embeddings (the evaluation cache path).
  Attention forward_embeddings(const TensorT<Real>& e_ctx, const std::vector<int>& y_ctx, int C,
                               const TensorT<Real>& e_test, const std::vector<int>& assignment) const {
    check_capacity(C);
    if (e_ctx.dim(0) != static_cast<int>(y_ctx.size()))
      fail(ErrCode::kDimension, "context embedding rows " + std::to_string(e_ctx.dim(0)) + " vs " +
                                    std::to_string(y_ctx.size()) + " labels");
    auto y_bit = bits_tensor<Real>(y_ctx, assignment, cfg.n_bit);
    auto y_onehot = onehot_tensor<Real>(y_ctx, C);
    auto h_ctx = run_encoder(reshape(fuse_context(e_ctx, y_bit), {1, e_ctx.dim(0), cfg.enc.d}));
    h_ctx = reshape(h_ctx, {e_ctx.dim(0), cfg.enc.d});
    auto h_test = run_decoder(e_test, h_ctx);
    return output_attention(h_test, h_ctx, y_onehot);
  }

  // Full pipeline on raw series; returns the class distribution for one test
  // sample. Classes are assigned bit pattern = class id.
  std::vector<double> predict(const std::vector<std::vector<double>>& x_context,
                              const std::vector<int>& y_context, const std::vector<double>& x_test,
                              int C) const {
    if (x_context.empty()) fail(ErrCode::kInput, "empty context: at least one labeled example required");
    if (x_context.size() != y_context.size())
      fail(ErrCode::kDimension, "context series/label count mismatch");
    check_capacity(C);
    std::vector<std::vector<double>> ctx_prepped;
    ctx_prepped.reserve(x_context.size());
    for (auto& s : x_context) ctx_prepped.push_back(preprocess(s, cfg.enc.L));
    auto e_ctx = embed_series(ctx_prepped);
    auto e_test = embed_series({preprocess(x_test, cfg.enc.L)});
    auto out = forward_embeddings(e_ctx, y_context, C, e_test, identity_assignment(C));
    std::vector<double> dist(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) dist[static_cast<size_t>(c)] = static_cast<double>(out.logits.data()[c]);
    return dist;
  }

  void check_capacity(int C) const {
    if (C < 1) fail(ErrCode::kInput, "class count must be >= 1");
    if (C > cfg.capacity())
      fail(ErrCode::kCapacity, "class count " + std::to_string(C) + " exceeds bit-label capacity " +
                                   std::to_string(cfg.capacity()) + " (n_bit=" + std::to_string(cfg.n_bit) + ")");
  }

 private:
  static void validate_onehot(const TensorT<Real>& y) {
    if (y.rank() != 2 && y.rank() != 3) fail(ErrCode::kDimension, "one-hot labels must be rank 2 or 3");
    int C = y.dim(y.rank() - 1);
    int64_t rows = y.size() / C;
    const Real* p = y.data();
    for (int64_t r = 0; r < rows; ++r) {
      int ones = 0;
      for (int c = 0; c < C; ++c) {
        Real v = p[r * C + c];
        if (std::abs(static_cast<double>(v) - 1.0) < 1e-6)
          ++ones;
        else if (std::abs(static_cast<double>(v)) > 1e-6)
          fail(ErrCode::kContract, "label row " + std::to_string(r) + " is not one-hot");
      }
      if (ones != 1) fail(ErrCode::kContract, "label row " + std::to_string(r) + " is not one-hot");
    }
  }
};

using IclModel = IclModelT<float>;

}  // namespace tict

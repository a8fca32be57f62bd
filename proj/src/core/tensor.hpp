#pragma once

// Dense tensor engine with reverse-mode automatic differentiation.
//
// Design: a dynamic tape records every primitive applied to grad-requiring
// tensors while a TapeT::Scope is active. backward() replays the records in
// reverse creation order (a valid reverse-topological order), visiting each
// record exactly once. Tensors are shared-pointer handles; copies alias the
// same storage. A tape and the tensors recorded on it are confined to one
// thread.
//
// Real is float in production and double in gradient-check tests.
// Broadcasting exists only in two sanctioned places: matmul leading batch
// dimensions and add() with a suffix-shaped right operand. Everything else
// requires exact shapes; use reshape/permute explicitly.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"

namespace tict {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <class Real>
class TensorT;

template <class Real>
class TapeT;

namespace detail {

template <class Real>
struct NodeT {
  Shape shape;
  std::vector<Real> val;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::vector<Real>& ensure_grad() {
    if (grad.empty()) grad.assign(val.size(), Real(0));
    return grad;
  }
};

}  // namespace detail

template <class Real>
class TensorT {
 public:
  using Node = detail::NodeT<Real>;

  TensorT() = default;

  static TensorT zeros(Shape shape) { return filled(std::move(shape), Real(0)); }

  static TensorT filled(Shape shape, Real v) {
    TensorT t;
    t.n_ = std::make_shared<Node>();
    int64_t n = shape_numel(shape);
    validate_shape(shape);
    t.n_->shape = std::move(shape);
    t.n_->val.assign(static_cast<size_t>(n), v);
    return t;
  }

  static TensorT from_vector(Shape shape, std::vector<Real> data) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      fail(ErrCode::kDimension, "tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    TensorT t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->val = std::move(data);
    return t;
  }

  static TensorT scalar(Real v) { return from_vector({1}, {v}); }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(n_->val.size()); }

  Real* data() { return n_->val.data(); }
  const Real* data() const { return n_->val.data(); }
  std::vector<Real>& values() { return n_->val; }
  const std::vector<Real>& values() const { return n_->val; }

  Real item() const {
    if (size() != 1) fail(ErrCode::kContract, "item() requires a scalar tensor, got " + shape_str(shape()));
    return n_->val[0];
  }

  void set_requires_grad(bool rg) { n_->requires_grad = rg; }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  bool has_grad() const { return n_ && !n_->grad.empty(); }
  const std::vector<Real>& grad() const { return n_->grad; }
  std::vector<Real>& grad_mutable() { return n_->ensure_grad(); }
  void zero_grad() {
    if (n_) std::fill(n_->grad.begin(), n_->grad.end(), Real(0));
  }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  static void validate_shape(const Shape& s) {
    if (s.empty()) fail(ErrCode::kDimension, "tensor rank must be >= 1");
    for (int d : s)
      if (d <= 0) fail(ErrCode::kDimension, "tensor extents must be positive, got " + shape_str(s));
  }

  std::shared_ptr<Node> n_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <class Real>
class TapeT {
 public:
  using Node = detail::NodeT<Real>;

  struct Entry {
    std::shared_ptr<Node> out;
    std::function<void()> back;
  };

  static TapeT*& current() {
    thread_local TapeT* cur = nullptr;
    return cur;
  }

  // RAII activation; nesting restores the previous tape.
  struct Scope {
    explicit Scope(TapeT& t) : prev_(current()) { current() = &t; }
    ~Scope() { current() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    TapeT* prev_;
  };

  void record(std::shared_ptr<Node> out, std::function<void()> back) {
    entries_.push_back(Entry{std::move(out), std::move(back)});
  }

  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Accumulates gradients into every grad-requiring ancestor of `loss`.
  // Repeated calls without zeroing accumulate additively.
  void backward(const TensorT<Real>& loss) {
    if (!loss.defined() || loss.size() != 1)
      fail(ErrCode::kContract, "backward() requires a scalar loss tensor");

    // Backward rules read the cumulative grad of the node they produced, so a
    // second pass over the same graph would re-propagate earlier seeds. Stash
    // prior grads of op outputs, sweep with only this pass's seed, then fold
    // the stash back so op outputs still report cumulative gradients.
    std::vector<std::vector<Real>> stash(entries_.size());
    for (size_t i = 0; i < entries_.size(); ++i) stash[i] = std::exchange(entries_[i].out->grad, {});

    loss.node()->ensure_grad()[0] += Real(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->grad.empty()) continue;  // not reachable from the loss
      it->back();
    }

    for (size_t i = 0; i < entries_.size(); ++i) {
      auto& prior = stash[i];
      if (prior.empty()) continue;
      auto& cur = entries_[i].out->grad;
      if (cur.empty()) {
        cur = std::move(prior);
      } else {
        for (size_t j = 0; j < cur.size(); ++j) cur[j] += prior[j];
      }
    }
  }

 private:
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Recording helpers
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
bool grad_flows(const TensorT<Real>& t) {
  return TapeT<Real>::current() != nullptr && t.requires_grad();
}

template <class Real>
void mark_and_record(TensorT<Real>& out, std::function<void()> back) {
  out.set_requires_grad(true);
  TapeT<Real>::current()->record(out.node(), std::move(back));
}

// C[m,n] += A[m,k] * B[k,n]
template <class Real>
void gemm_acc(const Real* A, const Real* B, Real* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* a = A + static_cast<int64_t>(i) * k;
    Real* c = C + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      Real av = a[p];
      const Real* b = B + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
template <class Real>
void gemm_nt_acc(const Real* dC, const Real* B, Real* dA, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const Real* dc = dC + static_cast<int64_t>(i) * n;
    Real* da = dA + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const Real* b = B + static_cast<int64_t>(p) * n;
      Real acc = 0;
      for (int j = 0; j < n; ++j) acc += dc[j] * b[j];
      da[p] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
template <class Real>
void gemm_tn_acc(const Real* A, const Real* dC, Real* dB, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* a = A + static_cast<int64_t>(i) * k;
    const Real* dc = dC + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      Real av = a[p];
      Real* db = dB + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) db[j] += av * dc[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

// Matrix product with optional leading batch dimensions. Accepts
// (..., m, k) x (k, n) and (..., m, k) x (..., k, n) with identical leading
// dims; the unbatched right operand is broadcast across the batch.
template <class Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    fail(ErrCode::kDimension, "matmul requires rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  int m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  int kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  bool b_batched = sb.size() > 2;
  if (k != kb || (b_batched && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) ||
      (b_batched && sa.size() != sb.size()))
    fail(ErrCode::kDimension, "matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));

  int64_t batch = 1;
  for (size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];

  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto out = TensorT<Real>::zeros(out_shape);

  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* pc = out.data();
  for (int64_t t = 0; t < batch; ++t) {
    detail::gemm_acc(pa + t * m * k, b_batched ? pb + t * k * n : pb, pc + t * m * n, m, k, n);
  }

  bool need_a = detail::grad_flows(a), need_b = detail::grad_flows(b);
  if (need_a || need_b) {
    auto an = a.node(), bn = b.node(), cn = out.node();
    detail::mark_and_record(out, [an, bn, cn, m, k, n, batch, b_batched, need_a, need_b] {
      const Real* dc = cn->grad.data();
      if (need_a) {
        Real* da = an->ensure_grad().data();
        const Real* pb2 = bn->val.data();
        for (int64_t t = 0; t < batch; ++t)
          detail::gemm_nt_acc(dc + t * m * n, b_batched ? pb2 + t * k * n : pb2, da + t * m * k, m, n, k);
      }
      if (need_b) {
        Real* db = bn->ensure_grad().data();
        const Real* pa2 = an->val.data();
        for (int64_t t = 0; t < batch; ++t)
          detail::gemm_tn_acc(pa2 + t * m * k, dc + t * m * n, b_batched ? db + t * k * n : db, m, k, n);
      }
    });
  }
  return out;
}

// Numerically stable softmax along `axis` (negative counts from the end).
template <class Real>
TensorT<Real> softmax(const TensorT<Real>& x, int axis = -1) {
  const Shape& s = x.shape();
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail(ErrCode::kDimension, "softmax axis out of range for " + shape_str(s));
  int64_t outer = 1, inner = 1;
  int alen = s[axis];
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < r; ++i) inner *= s[i];

  auto out = TensorT<Real>::zeros(s);
  const Real* px = x.data();
  Real* py = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const Real* xs = px + (o * alen) * inner + i;
      Real* ys = py + (o * alen) * inner + i;
      Real mx = xs[0];
      for (int a2 = 1; a2 < alen; ++a2) mx = std::max(mx, xs[a2 * inner]);
      Real sum = 0;
      for (int a2 = 0; a2 < alen; ++a2) {
        Real e = std::exp(xs[a2 * inner] - mx);
        ys[a2 * inner] = e;
        sum += e;
      }
      Real inv = Real(1) / sum;
      for (int a2 = 0; a2 < alen; ++a2) ys[a2 * inner] *= inv;
    }
  }

  if (detail::grad_flows(x)) {
    auto xn = x.node(), yn = out.node();
    detail::mark_and_record(out, [xn, yn, outer, inner, alen] {
      const Real* y = yn->val.data();
      const Real* dy = yn->grad.data();
      Real* dx = xn->ensure_grad().data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          int64_t base = (o * alen) * inner + i;
          Real dot = 0;
          for (int a2 = 0; a2 < alen; ++a2) dot += y[base + a2 * inner] * dy[base + a2 * inner];
          for (int a2 = 0; a2 < alen; ++a2) {
            int64_t idx = base + a2 * inner;
            dx[idx] += y[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <class Real>
TensorT<Real> relu(const TensorT<Real>& x) {
  auto out = TensorT<Real>::zeros(x.shape());
  const Real* px = x.data();
  Real* py = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) py[i] = px[i] > Real(0) ? px[i] : Real(0);

  if (detail::grad_flows(x)) {
    auto xn = x.node(), yn = out.node();
    detail::mark_and_record(out, [xn, yn, n] {
      const Real* xv = xn->val.data();
      const Real* dy = yn->grad.data();
      Real* dx = xn->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i)
        if (xv[i] > Real(0)) dx[i] += dy[i];
    });
  }
  return out;
}

// Elementwise sum; b may have a shape that is a suffix of a's shape
// (broadcast over the leading dimensions).
template <class Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool suffix = sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  if (!suffix)
    fail(ErrCode::kDimension, "add: shape " + shape_str(sb) + " is not a suffix of " + shape_str(sa));
  int64_t nb = shape_numel(sb);
  int64_t reps = shape_numel(sa) / nb;

  auto out = TensorT<Real>::zeros(sa);
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* pc = out.data();
  for (int64_t r = 0; r < reps; ++r)
    for (int64_t i = 0; i < nb; ++i) pc[r * nb + i] = pa[r * nb + i] + pb[i];

  bool need_a = detail::grad_flows(a), need_b = detail::grad_flows(b);
  if (need_a || need_b) {
    auto an = a.node(), bn = b.node(), cn = out.node();
    detail::mark_and_record(out, [an, bn, cn, reps, nb, need_a, need_b] {
      const Real* dc = cn->grad.data();
      if (need_a) {
        Real* da = an->ensure_grad().data();
        for (int64_t i = 0; i < reps * nb; ++i) da[i] += dc[i];
      }
      if (need_b) {
        Real* db = bn->ensure_grad().data();
        for (int64_t r = 0; r < reps; ++r)
          for (int64_t i = 0; i < nb; ++i) db[i] += dc[r * nb + i];
      }
    });
  }
  return out;
}

// Elementwise product, exact same shapes.
template <class Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.shape() != b.shape())
    fail(ErrCode::kDimension, "mul: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = TensorT<Real>::zeros(a.shape());
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* pc = out.data();
  int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i];

  bool need_a = detail::grad_flows(a), need_b = detail::grad_flows(b);
  if (need_a || need_b) {
    auto an = a.node(), bn = b.node(), cn = out.node();
    detail::mark_and_record(out, [an, bn, cn, n, need_a, need_b] {
      const Real* dc = cn->grad.data();
      if (need_a) {
        Real* da = an->ensure_grad().data();
        const Real* bv = bn->val.data();
        for (int64_t i = 0; i < n; ++i) da[i] += dc[i] * bv[i];
      }
      if (need_b) {
        Real* db = bn->ensure_grad().data();
        const Real* av = an->val.data();
        for (int64_t i = 0; i < n; ++i) db[i] += dc[i] * av[i];
      }
    });
  }
  return out;
}

template <class Real>
TensorT<Real> scale(const TensorT<Real>& x, Real c) {
  auto out = TensorT<Real>::zeros(x.shape());
  const Real* px = x.data();
  Real* py = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) py[i] = px[i] * c;
  if (detail::grad_flows(x)) {
    auto xn = x.node(), yn = out.node();
    detail::mark_and_record(out, [xn, yn, c, n] {
      const Real* dy = yn->grad.data();
      Real* dx = xn->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * c;
    });
  }
  return out;
}

template <class Real>
TensorT<Real> sum_all(const TensorT<Real>& x) {
  Real acc = 0;
  const Real* px = x.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  auto out = TensorT<Real>::scalar(acc);
  if (detail::grad_flows(x)) {
    auto xn = x.node(), yn = out.node();
    detail::mark_and_record(out, [xn, yn, n] {
      Real g = yn->grad[0];
      Real* dx = xn->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

template <class Real>
TensorT<Real> mean_all(const TensorT<Real>& x) {
  return scale(sum_all(x), Real(1) / static_cast<Real>(x.size()));
}

// Mean over one axis, removing it from the shape.
template <class Real>
TensorT<Real> mean_axis(const TensorT<Real>& x, int axis) {
  const Shape& s = x.shape();
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail(ErrCode::kDimension, "mean_axis out of range for " + shape_str(s));
  if (r == 1) return mean_all(x);
  int64_t outer = 1, inner = 1;
  int alen = s[axis];
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  Shape so;
  for (int i = 0; i < r; ++i)
    if (i != axis) so.push_back(s[i]);

  auto out = TensorT<Real>::zeros(so);
  const Real* px = x.data();
  Real* py = out.data();
  Real inv = Real(1) / static_cast<Real>(alen);
  for (int64_t o = 0; o < outer; ++o)
    for (int a2 = 0; a2 < alen; ++a2)
      for (int64_t i = 0; i < inner; ++i) py[o * inner + i] += px[(o * alen + a2) * inner + i] * inv;

  if (detail::grad_flows(x)) {
    auto xn = x.node(), yn = out.node();
    detail::mark_and_record(out, [xn, yn, outer, inner, alen, inv] {
      const Real* dy = yn->grad.data();
      Real* dx = xn->ensure_grad().data();
      for (int64_t o = 0; o < outer; ++o)
        for (int a2 = 0; a2 < alen; ++a2)
          for (int64_t i = 0; i < inner; ++i) dx[(o * alen + a2) * inner + i] += dy[o * inner + i] * inv;
    });
  }
  return out;
}

// Concatenation along `axis`; all other extents must match.
template <class Real>
TensorT<Real> concat(const TensorT<Real>& a, const TensorT<Real>& b, int axis) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  int r = static_cast<int>(sa.size());
  if (axis < 0) axis += r;
  if (static_cast<int>(sb.size()) != r || axis < 0 || axis >= r)
    fail(ErrCode::kDimension, "concat: rank mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  for (int i = 0; i < r; ++i)
    if (i != axis && sa[i] != sb[i])
      fail(ErrCode::kDimension, "concat: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sa[i];
  for (int i = axis + 1; i < r; ++i) inner *= sa[i];
  int64_t wa = sa[axis] * inner, wb = sb[axis] * inner;

  Shape so = sa;
  so[axis] = sa[axis] + sb[axis];
  auto out = TensorT<Real>::zeros(so);
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* pc = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(pc + o * (wa + wb), pa + o * wa, sizeof(Real) * static_cast<size_t>(wa));
    std::memcpy(pc + o * (wa + wb) + wa, pb + o * wb, sizeof(Real) * static_cast<size_t>(wb));
  }

  bool need_a = detail::grad_flows(a), need_b = detail::grad_flows(b);
  if (need_a || need_b) {
    auto an = a.node(), bn = b.node(), cn = out.node();
    detail::mark_and_record(out, [an, bn, cn, outer, wa, wb, need_a, need_b] {
      const Real* dc = cn->grad.data();
      if (need_a) {
        Real* da = an->ensure_grad().data();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < wa; ++i) da[o * wa + i] += dc[o * (wa + wb) + i];
      }
      if (need_b) {
        Real* db = bn->ensure_grad().data();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < wb; ++i) db[o * wb + i] += dc[o * (wa + wb) + wa + i];
      }
    });
  }
  return out;
}

// Contiguous slab [start, start+count) along `axis`.
template <class Real>
TensorT<Real> slice_axis(const TensorT<Real>& x, int axis, int start, int count) {
  const Shape& s = x.shape();
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail(ErrCode::kDimension, "slice_axis out of range for " + shape_str(s));
  if (start < 0 || count <= 0 || start + count > s[axis])
    fail(ErrCode::kIndex, "slice_axis [" + std::to_string(start) + "," + std::to_string(start + count) +
                              ") exceeds extent " + std::to_string(s[axis]));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  int64_t win = s[axis] * inner, wout = static_cast<int64_t>(count) * inner;

  Shape so = s;
  so[axis] = count;
  auto out = TensorT<Real>::zeros(so);
  const Real* px = x.data();
  Real* py = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(py + o * wout, px + o * win + start * inner, sizeof(Real) * static_cast<size_t>(wout));

  if (detail::grad_flows(x)) {
    auto xn = x.node(), yn = out.node();
    detail::mark_and_record(out, [xn, yn, outer, inner, win, wout, start] {
      const Real* dy = yn->grad.data();
      Real* dx = xn->ensure_grad().data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < wout; ++i) dx[o * win + start * inner + i] += dy[o * wout + i];
    });
  }
  return out;
}

template <class Real>
TensorT<Real> reshape(const TensorT<Real>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    fail(ErrCode::kDimension,
         "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = TensorT<Real>::from_vector(std::move(shape), x.values());
  if (detail::grad_flows(x)) {
    auto xn = x.node(), yn = out.node();
    int64_t n = x.size();
    detail::mark_and_record(out, [xn, yn, n] {
      const Real* dy = yn->grad.data();
      Real* dx = xn->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
    });
  }
  return out;
}

// Axis permutation, rank <= 4. Gradient applies the inverse permutation.
template <class Real>
TensorT<Real> permute(const TensorT<Real>& x, const std::vector<int>& perm) {
  const Shape& s = x.shape();
  int r = static_cast<int>(s.size());
  if (static_cast<int>(perm.size()) != r || r > 4)
    fail(ErrCode::kDimension, "permute: bad permutation for " + shape_str(s));
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) fail(ErrCode::kDimension, "permute: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }

  Shape so(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) so[i] = s[perm[i]];

  // strides of the input, then remapped to output axis order
  std::vector<int64_t> in_stride(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * s[i + 1];
  std::vector<int64_t> step(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) step[i] = in_stride[perm[i]];

  int d0 = r > 0 ? so[0] : 1, d1 = r > 1 ? so[1] : 1, d2 = r > 2 ? so[2] : 1, d3 = r > 3 ? so[3] : 1;
  int64_t s0 = r > 0 ? step[0] : 0, s1 = r > 1 ? step[1] : 0, s2 = r > 2 ? step[2] : 0, s3 = r > 3 ? step[3] : 0;

  auto out = TensorT<Real>::zeros(so);
  const Real* px = x.data();
  Real* py = out.data();
  int64_t idx = 0;
  for (int i0 = 0; i0 < d0; ++i0)
    for (int i1 = 0; i1 < d1; ++i1)
      for (int i2 = 0; i2 < d2; ++i2)
        for (int i3 = 0; i3 < d3; ++i3)
          py[idx++] = px[i0 * s0 + i1 * s1 + i2 * s2 + i3 * s3];

  if (detail::grad_flows(x)) {
    auto xn = x.node(), yn = out.node();
    detail::mark_and_record(out, [xn, yn, d0, d1, d2, d3, s0, s1, s2, s3] {
      const Real* dy = yn->grad.data();
      Real* dx = xn->ensure_grad().data();
      int64_t idx2 = 0;
      for (int i0 = 0; i0 < d0; ++i0)
        for (int i1 = 0; i1 < d1; ++i1)
          for (int i2 = 0; i2 < d2; ++i2)
            for (int i3 = 0; i3 < d3; ++i3)
              dx[i0 * s0 + i1 * s1 + i2 * s2 + i3 * s3] += dy[idx2++];
    });
  }
  return out;
}

// Layer normalization over the last axis (1/n variance), then affine with
// gain/bias sized to that axis.
template <class Real>
TensorT<Real> layernorm(const TensorT<Real>& x, const TensorT<Real>& gain, const TensorT<Real>& bias,
                        Real eps = Real(1e-5)) {
  const Shape& s = x.shape();
  int d = s.back();
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d)
    fail(ErrCode::kDimension, "layernorm: gain/bias must be 1-D of extent " + std::to_string(d));
  int64_t rows = x.size() / d;

  auto out = TensorT<Real>::zeros(s);
  std::vector<Real> inv_sigma(static_cast<size_t>(rows));
  std::vector<Real> xhat(static_cast<size_t>(x.size()));
  const Real* px = x.data();
  const Real* pg = gain.data();
  const Real* pb = bias.data();
  Real* py = out.data();
  for (int64_t rI = 0; rI < rows; ++rI) {
    const Real* xr = px + rI * d;
    Real mu = 0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (int j = 0; j < d; ++j) {
      Real c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<Real>(d);
    Real is = Real(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(rI)] = is;
    Real* yr = py + rI * d;
    Real* hr = xhat.data() + rI * d;
    for (int j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mu) * is;
      yr[j] = pg[j] * hr[j] + pb[j];
    }
  }

  bool need_x = detail::grad_flows(x), need_g = detail::grad_flows(gain), need_b = detail::grad_flows(bias);
  if (need_x || need_g || need_b) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), yn = out.node();
    auto is_v = std::make_shared<std::vector<Real>>(std::move(inv_sigma));
    auto xh_v = std::make_shared<std::vector<Real>>(std::move(xhat));
    detail::mark_and_record(out, [xn, gn, bn, yn, is_v, xh_v, rows, d, need_x, need_g, need_b] {
      const Real* dy = yn->grad.data();
      const Real* gv = gn->val.data();
      const Real* xh = xh_v->data();
      Real* dx = need_x ? xn->ensure_grad().data() : nullptr;
      Real* dg = need_g ? gn->ensure_grad().data() : nullptr;
      Real* db = need_b ? bn->ensure_grad().data() : nullptr;
      for (int64_t rI = 0; rI < rows; ++rI) {
        const Real* dyr = dy + rI * d;
        const Real* hr = xh + rI * d;
        if (need_g)
          for (int j = 0; j < d; ++j) dg[j] += dyr[j] * hr[j];
        if (need_b)
          for (int j = 0; j < d; ++j) db[j] += dyr[j];
        if (need_x) {
          Real m1 = 0, m2 = 0;
          for (int j = 0; j < d; ++j) {
            Real dh = dyr[j] * gv[j];
            m1 += dh;
            m2 += dh * hr[j];
          }
          m1 /= static_cast<Real>(d);
          m2 /= static_cast<Real>(d);
          Real is = (*is_v)[static_cast<size_t>(rI)];
          Real* dxr = dx + rI * d;
          for (int j = 0; j < d; ++j) {
            Real dh = dyr[j] * gv[j];
            dxr[j] += (dh - m1 - hr[j] * m2) * is;
          }
        }
      }
    });
  }
  return out;
}

// Same-length 1-D convolution with symmetric zero padding.
// x: (batch, channels_in, length), kernel: (channels_out, channels_in, width).
template <class Real>
TensorT<Real> conv1d_same(const TensorT<Real>& x, const TensorT<Real>& kernel) {
  const Shape& sx = x.shape();
  const Shape& sk = kernel.shape();
  if (sx.size() != 3 || sk.size() != 3)
    fail(ErrCode::kDimension, "conv1d expects x (b,c,l) and kernel (o,c,w), got " + shape_str(sx) + " and " +
                                  shape_str(sk));
  int B = sx[0], Cin = sx[1], L = sx[2];
  int Cout = sk[0], CinK = sk[1], W = sk[2];
  if (Cin != CinK)
    fail(ErrCode::kDimension, "conv1d channel mismatch: input " + shape_str(sx) + " vs kernel " + shape_str(sk));
  int padL = (W - 1) / 2;

  auto out = TensorT<Real>::zeros({B, Cout, L});
  const Real* px = x.data();
  const Real* pk = kernel.data();
  Real* py = out.data();
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Cout; ++co) {
      Real* yr = py + (static_cast<int64_t>(b) * Cout + co) * L;
      for (int ci = 0; ci < Cin; ++ci) {
        const Real* xr = px + (static_cast<int64_t>(b) * Cin + ci) * L;
        const Real* kr = pk + (static_cast<int64_t>(co) * Cin + ci) * W;
        for (int w = 0; w < W; ++w) {
          int off = w - padL;
          Real kv = kr[w];
          int t0 = std::max(0, -off), t1 = std::min(L, L - off);
          for (int t = t0; t < t1; ++t) yr[t] += kv * xr[t + off];
        }
      }
    }
  }

  bool need_x = detail::grad_flows(x), need_k = detail::grad_flows(kernel);
  if (need_x || need_k) {
    auto xn = x.node(), kn = kernel.node(), yn = out.node();
    detail::mark_and_record(out, [xn, kn, yn, B, Cin, Cout, L, W, padL, need_x, need_k] {
      const Real* dy = yn->grad.data();
      const Real* xv = xn->val.data();
      const Real* kv = kn->val.data();
      Real* dx = need_x ? xn->ensure_grad().data() : nullptr;
      Real* dk = need_k ? kn->ensure_grad().data() : nullptr;
      for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
          const Real* dyr = dy + (static_cast<int64_t>(b) * Cout + co) * L;
          for (int ci = 0; ci < Cin; ++ci) {
            const Real* xr = xv + (static_cast<int64_t>(b) * Cin + ci) * L;
            const Real* kr = kv + (static_cast<int64_t>(co) * Cin + ci) * W;
            Real* dxr = need_x ? dx + (static_cast<int64_t>(b) * Cin + ci) * L : nullptr;
            Real* dkr = need_k ? dk + (static_cast<int64_t>(co) * Cin + ci) * W : nullptr;
            for (int w = 0; w < W; ++w) {
              int off = w - padL;
              int t0 = std::max(0, -off), t1 = std::min(L, L - off);
              if (need_x) {
                Real kw = kr[w];
                for (int t = t0; t < t1; ++t) dxr[t + off] += kw * dyr[t];
              }
              if (need_k) {
                Real acc = 0;
                for (int t = t0; t < t1; ++t) acc += dyr[t] * xr[t + off];
                dkr[w] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// -log softmax(logits)[target] for a 1-D logit vector.
template <class Real>
TensorT<Real> cross_entropy(const TensorT<Real>& logits, int target) {
  if (logits.rank() != 1)
    fail(ErrCode::kDimension, "cross_entropy expects 1-D logits, got " + shape_str(logits.shape()));
  int C = logits.dim(0);
  if (target < 0 || target >= C)
    fail(ErrCode::kIndex, "cross_entropy target " + std::to_string(target) + " out of range [0," +
                              std::to_string(C) + ")");
  const Real* p = logits.data();
  for (int i = 0; i < C; ++i)
    if (!std::isfinite(static_cast<double>(p[i]))) fail(ErrCode::kNumeric, "cross_entropy: non-finite logit");
  Real mx = p[0];
  for (int i = 1; i < C; ++i) mx = std::max(mx, p[i]);
  Real sum = 0;
  for (int i = 0; i < C; ++i) sum += std::exp(p[i] - mx);
  Real loss = std::log(sum) + mx - p[target];
  auto out = TensorT<Real>::scalar(loss);

  if (detail::grad_flows(logits)) {
    auto xn = logits.node(), yn = out.node();
    detail::mark_and_record(out, [xn, yn, C, target, mx, sum] {
      Real g = yn->grad[0];
      const Real* lv = xn->val.data();
      Real* dx = xn->ensure_grad().data();
      for (int i = 0; i < C; ++i) {
        Real sm = std::exp(lv[i] - mx) / sum;
        dx[i] += g * (sm - (i == target ? Real(1) : Real(0)));
      }
    });
  }
  return out;
}

// Mean cross-entropy over rows of (m, C) logits.
template <class Real>
TensorT<Real> cross_entropy_rows(const TensorT<Real>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2 || static_cast<int>(targets.size()) != logits.dim(0))
    fail(ErrCode::kDimension, "cross_entropy_rows: logits " + shape_str(logits.shape()) + " vs " +
                                  std::to_string(targets.size()) + " targets");
  int m = logits.dim(0), C = logits.dim(1);
  for (int t : targets)
    if (t < 0 || t >= C) fail(ErrCode::kIndex, "cross_entropy_rows: target out of range");
  const Real* p = logits.data();
  Real total = 0;
  std::vector<Real> mxs(static_cast<size_t>(m)), sums(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const Real* row = p + static_cast<int64_t>(i) * C;
    Real mx = row[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    Real sum = 0;
    for (int j = 0; j < C; ++j) sum += std::exp(row[j] - mx);
    mxs[static_cast<size_t>(i)] = mx;
    sums[static_cast<size_t>(i)] = sum;
    total += std::log(sum) + mx - row[targets[static_cast<size_t>(i)]];
  }
  auto out = TensorT<Real>::scalar(total / static_cast<Real>(m));

  if (detail::grad_flows(logits)) {
    auto xn = logits.node(), yn = out.node();
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto mx_v = std::make_shared<std::vector<Real>>(std::move(mxs));
    auto sum_v = std::make_shared<std::vector<Real>>(std::move(sums));
    detail::mark_and_record(out, [xn, yn, tg, mx_v, sum_v, m, C] {
      Real g = yn->grad[0] / static_cast<Real>(m);
      const Real* lv = xn->val.data();
      Real* dx = xn->ensure_grad().data();
      for (int i = 0; i < m; ++i) {
        const Real* row = lv + static_cast<int64_t>(i) * C;
        Real* drow = dx + static_cast<int64_t>(i) * C;
        Real mx = (*mx_v)[static_cast<size_t>(i)], sum = (*sum_v)[static_cast<size_t>(i)];
        int t = (*tg)[static_cast<size_t>(i)];
        for (int j = 0; j < C; ++j) {
          Real sm = std::exp(row[j] - mx) / sum;
          drow[j] += g * (sm - (j == t ? Real(1) : Real(0)));
        }
      }
    });
  }
  return out;
}

// Mean negative log-likelihood of probabilities that already form a
// distribution per row: -log(p[target] + eps).
template <class Real>
TensorT<Real> nll_probs(const TensorT<Real>& probs, const std::vector<int>& targets, Real eps = Real(1e-9)) {
  if (probs.rank() != 2 || static_cast<int>(targets.size()) != probs.dim(0))
    fail(ErrCode::kDimension, "nll_probs: probs " + shape_str(probs.shape()) + " vs " +
                                  std::to_string(targets.size()) + " targets");
  int m = probs.dim(0), C = probs.dim(1);
  for (int t : targets)
    if (t < 0 || t >= C) fail(ErrCode::kIndex, "nll_probs: target out of range");
  const Real* p = probs.data();
  Real total = 0;
  for (int i = 0; i < m; ++i) total += -std::log(p[static_cast<int64_t>(i) * C + targets[static_cast<size_t>(i)]] + eps);
  auto out = TensorT<Real>::scalar(total / static_cast<Real>(m));

  if (detail::grad_flows(probs)) {
    auto xn = probs.node(), yn = out.node();
    auto tg = std::make_shared<std::vector<int>>(targets);
    detail::mark_and_record(out, [xn, yn, tg, m, C, eps] {
      Real g = yn->grad[0] / static_cast<Real>(m);
      const Real* pv = xn->val.data();
      Real* dx = xn->ensure_grad().data();
      for (int i = 0; i < m; ++i) {
        int t = (*tg)[static_cast<size_t>(i)];
        int64_t idx = static_cast<int64_t>(i) * C + t;
        dx[idx] += -g / (pv[idx] + eps);
      }
    });
  }
  return out;
}

// Mean binary cross-entropy from raw scores z against 0/1 targets of the same
// shape, in the max(z,0) - z*y + log(1+exp(-|z|)) form.
template <class Real>
TensorT<Real> bce_logits(const TensorT<Real>& z, const std::vector<Real>& targets) {
  if (static_cast<int64_t>(targets.size()) != z.size())
    fail(ErrCode::kDimension, "bce_logits: target count mismatch");
  const Real* pz = z.data();
  int64_t n = z.size();
  Real total = 0;
  for (int64_t i = 0; i < n; ++i) {
    Real zi = pz[i], yi = targets[static_cast<size_t>(i)];
    total += std::max(zi, Real(0)) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
  }
  auto out = TensorT<Real>::scalar(total / static_cast<Real>(n));

  if (detail::grad_flows(z)) {
    auto xn = z.node(), yn = out.node();
    auto tg = std::make_shared<std::vector<Real>>(targets);
    detail::mark_and_record(out, [xn, yn, tg, n] {
      Real g = yn->grad[0] / static_cast<Real>(n);
      const Real* zv = xn->val.data();
      Real* dx = xn->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) {
        Real sig = Real(1) / (Real(1) + std::exp(-zv[i]));
        dx[i] += g * (sig - (*tg)[static_cast<size_t>(i)]);
      }
    });
  }
  return out;
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace tict

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace flforge {

/// Primitive operations recorded on a Tape. `MulAdd` computes a*b + c and
/// exists to keep dense-layer dot products compact. `Sign` returns +1 for
/// a >= 0 and -1 otherwise (sgn(0) = +1); `Ge` returns 1.0 when a >= b else
/// 0.0. Both have zero derivative everywhere, which is what routes hard
/// min/max/abs subgradients.
enum class Op : std::uint8_t {
  Leaf,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Tanh,
  Sin,
  Cos,
  Abs,
  Sign,
  Max,
  Min,
  Ge,
  MulAdd,
};

struct Node {
  Op op;
  std::int32_t a = -1;
  std::int32_t b = -1;
  std::int32_t c = -1;
};

class Tape;

/// Lightweight handle to a recorded node. Copyable, 12 bytes.
struct Value {
  Tape* tape = nullptr;
  std::int32_t idx = -1;

  double val() const;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(std::int32_t node, double v)
      : std::runtime_error("non-finite intermediate at node " + std::to_string(node) +
                           " (value " + std::to_string(v) + ")"),
        node_index(node) {}
  std::int32_t node_index;
};

/// Append-only record of a scalar computation. Recording is eager: every
/// pushed node is evaluated immediately, so `val()` is always available.
/// `gradient()` emits the reverse-mode adjoint computation as further nodes
/// on the same tape, which is what makes nested derivatives work.
///
/// A Tape is single-writer: record on one thread only. Once built it is
/// immutable for replay purposes; any number of threads may `replay()`
/// concurrently into their own workspaces.
class Tape {
 public:
  Tape() { nodes_.reserve(1024); }

  Value leaf(double v) {
    const std::int32_t ord = static_cast<std::int32_t>(leaf_nodes_.size());
    const std::int32_t id = push(Op::Leaf, ord, -1, -1, v);
    leaf_nodes_.push_back(id);
    return Value{this, id};
  }

  /// Constants are cached by bit pattern so repeated use is free.
  Value constant(double v) {
    std::uint64_t key;
    static_assert(sizeof(key) == sizeof(v));
    std::memcpy(&key, &v, sizeof(v));
    auto it = const_cache_.find(key);
    if (it != const_cache_.end()) return Value{this, it->second};
    const std::int32_t id = push(Op::Const, -1, -1, -1, v);
    const_cache_.emplace(key, id);
    return Value{this, id};
  }

  std::int32_t node_count() const { return static_cast<std::int32_t>(nodes_.size()); }
  std::int32_t leaf_count() const { return static_cast<std::int32_t>(leaf_nodes_.size()); }
  const std::vector<std::int32_t>& leaf_nodes() const { return leaf_nodes_; }

  double val(std::int32_t idx) const { return vals_[static_cast<std::size_t>(idx)]; }
  double val(Value v) const { return vals_[static_cast<std::size_t>(v.idx)]; }

  /// Record-time values of all leaves, in creation order.
  std::vector<double> leaf_snapshot() const {
    std::vector<double> out(leaf_nodes_.size());
    for (std::size_t i = 0; i < leaf_nodes_.size(); ++i) out[i] = vals_[static_cast<std::size_t>(leaf_nodes_[i])];
    return out;
  }

  Value make(Op op, Value a, Value b = Value{}, Value c = Value{}) {
    return Value{this, push(op, a.idx, b.valid() ? b.idx : -1, c.valid() ? c.idx : -1)};
  }

  /// Reverse-mode derivatives of y with respect to xs, emitted as new nodes.
  /// xs entries that do not feed y get the constant 0. Throws NonFiniteError
  /// if any node up to y holds a non-finite value.
  std::vector<Value> gradient(Value y, std::span<const Value> xs);

  /// Workspace sized for `lanes` side-by-side evaluations, seeded with the
  /// record-time values (so Const nodes need no recompute).
  std::vector<double> make_workspace(int lanes = 1) const {
    std::vector<double> ws(static_cast<std::size_t>(nodes_.size()) * static_cast<std::size_t>(lanes));
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (int l = 0; l < lanes; ++l) ws[i * static_cast<std::size_t>(lanes) + static_cast<std::size_t>(l)] = vals_[i];
    return ws;
  }

  /// Recompute nodes [0, end) with fresh leaf values. `leaf_vals` is indexed
  /// [leaf_ordinal * lanes + lane]; `ws` is indexed [node * lanes + lane].
  /// end < 0 replays everything. Bit-reproducible: same leaves, same result.
  void replay(std::span<const double> leaf_vals, std::span<double> ws, std::int32_t end = -1) const {
    replay_impl<1>(leaf_vals, ws, end);
  }
  void replay_lanes8(std::span<const double> leaf_vals, std::span<double> ws, std::int32_t end = -1) const {
    replay_impl<8>(leaf_vals, ws, end);
  }

  /// First non-finite entry in a (single-lane) workspace, if any.
  std::optional<std::int32_t> first_nonfinite(std::span<const double> ws, std::int32_t end = -1) const {
    const std::int32_t n = end < 0 ? node_count() : end;
    for (std::int32_t i = 0; i < n; ++i)
      if (!std::isfinite(ws[static_cast<std::size_t>(i)])) return i;
    return std::nullopt;
  }

  static constexpr int kLanes = 8;

 private:
  friend struct Value;

  std::int32_t push(Op op, std::int32_t a, std::int32_t b, std::int32_t c, double direct = 0.0) {
    const std::int32_t id = node_count();
    nodes_.push_back(Node{op, a, b, c});
    vals_.push_back(eval_node(op, a, b, c, direct));
    return id;
  }

  double eval_node(Op op, std::int32_t a, std::int32_t b, std::int32_t c, double direct) const {
    const double* v = vals_.data();
    switch (op) {
      case Op::Leaf:
      case Op::Const: return direct;
      case Op::Add: return v[a] + v[b];
      case Op::Sub: return v[a] - v[b];
      case Op::Mul: return v[a] * v[b];
      case Op::Div: return v[a] / v[b];
      case Op::Neg: return -v[a];
      case Op::Exp: return std::exp(v[a]);
      case Op::Tanh: return std::tanh(v[a]);
      case Op::Sin: return std::sin(v[a]);
      case Op::Cos: return std::cos(v[a]);
      case Op::Abs: return std::fabs(v[a]);
      case Op::Sign: return v[a] >= 0.0 ? 1.0 : -1.0;
      case Op::Max: return v[a] >= v[b] ? v[a] : v[b];
      case Op::Min: return v[a] <= v[b] ? v[a] : v[b];
      case Op::Ge: return v[a] >= v[b] ? 1.0 : 0.0;
      case Op::MulAdd: return v[a] * v[b] + v[c];
    }
    return 0.0;
  }

  template <int L>
  void replay_impl(std::span<const double> leaf_vals, std::span<double> ws, std::int32_t end) const {
    const std::int32_t n = end < 0 ? node_count() : end;
    double* w = ws.data();
    const double* lv = leaf_vals.data();
    for (std::int32_t i = 0; i < n; ++i) {
      const Node& nd = nodes_[static_cast<std::size_t>(i)];
      double* o = w + static_cast<std::size_t>(i) * L;
      const double* pa = nd.a >= 0 ? w + static_cast<std::size_t>(nd.a) * L : nullptr;
      const double* pb = nd.b >= 0 ? w + static_cast<std::size_t>(nd.b) * L : nullptr;
      switch (nd.op) {
        case Op::Leaf: {
          const double* src = lv + static_cast<std::size_t>(nd.a) * L;
          for (int l = 0; l < L; ++l) o[l] = src[l];
          break;
        }
        case Op::Const: break;  // seeded by make_workspace
        case Op::Add:
          for (int l = 0; l < L; ++l) o[l] = pa[l] + pb[l];
          break;
        case Op::Sub:
          for (int l = 0; l < L; ++l) o[l] = pa[l] - pb[l];
          break;
        case Op::Mul:
          for (int l = 0; l < L; ++l) o[l] = pa[l] * pb[l];
          break;
        case Op::Div:
          for (int l = 0; l < L; ++l) o[l] = pa[l] / pb[l];
          break;
        case Op::Neg:
          for (int l = 0; l < L; ++l) o[l] = -pa[l];
          break;
        case Op::Exp:
          for (int l = 0; l < L; ++l) o[l] = std::exp(pa[l]);
          break;
        case Op::Tanh:
          for (int l = 0; l < L; ++l) o[l] = std::tanh(pa[l]);
          break;
        case Op::Sin:
          for (int l = 0; l < L; ++l) o[l] = std::sin(pa[l]);
          break;
        case Op::Cos:
          for (int l = 0; l < L; ++l) o[l] = std::cos(pa[l]);
          break;
        case Op::Abs:
          for (int l = 0; l < L; ++l) o[l] = std::fabs(pa[l]);
          break;
        case Op::Sign:
          for (int l = 0; l < L; ++l) o[l] = pa[l] >= 0.0 ? 1.0 : -1.0;
          break;
        case Op::Max:
          for (int l = 0; l < L; ++l) o[l] = pa[l] >= pb[l] ? pa[l] : pb[l];
          break;
        case Op::Min:
          for (int l = 0; l < L; ++l) o[l] = pa[l] <= pb[l] ? pa[l] : pb[l];
          break;
        case Op::Ge:
          for (int l = 0; l < L; ++l) o[l] = pa[l] >= pb[l] ? 1.0 : 0.0;
          break;
        case Op::MulAdd: {
          const double* pc = w + static_cast<std::size_t>(nd.c) * L;
          for (int l = 0; l < L; ++l) o[l] = pa[l] * pb[l] + pc[l];
          break;
        }
      }
    }
  }

  // Adjoint accumulation helpers used by gradient(); -1 means "no adjoint yet".
  void acc(std::vector<std::int32_t>& adj, std::int32_t target, Value contrib);
  void acc_mul(std::vector<std::int32_t>& adj, std::int32_t target, Value u, Value v);
  void acc_neg(std::vector<std::int32_t>& adj, std::int32_t target, Value contrib);

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<std::int32_t> leaf_nodes_;
  std::unordered_map<std::uint64_t, std::int32_t> const_cache_;
};

inline double Value::val() const { return tape->val(idx); }

// ---- operator sugar --------------------------------------------------------

inline Value operator+(Value a, Value b) { return a.tape->make(Op::Add, a, b); }
inline Value operator-(Value a, Value b) { return a.tape->make(Op::Sub, a, b); }
inline Value operator*(Value a, Value b) { return a.tape->make(Op::Mul, a, b); }
inline Value operator/(Value a, Value b) { return a.tape->make(Op::Div, a, b); }
inline Value operator-(Value a) { return a.tape->make(Op::Neg, a); }

inline Value operator+(Value a, double b) { return a + a.tape->constant(b); }
inline Value operator+(double a, Value b) { return b.tape->constant(a) + b; }
inline Value operator-(Value a, double b) { return a - a.tape->constant(b); }
inline Value operator-(double a, Value b) { return b.tape->constant(a) - b; }
inline Value operator*(Value a, double b) { return a * a.tape->constant(b); }
inline Value operator*(double a, Value b) { return b.tape->constant(a) * b; }
inline Value operator/(Value a, double b) { return a / a.tape->constant(b); }
inline Value operator/(double a, Value b) { return b.tape->constant(a) / b; }

inline Value& operator+=(Value& a, Value b) { return a = a + b; }
inline Value& operator-=(Value& a, Value b) { return a = a - b; }
inline Value& operator*=(Value& a, Value b) { return a = a * b; }

inline Value exp(Value a) { return a.tape->make(Op::Exp, a); }
inline Value tanh(Value a) { return a.tape->make(Op::Tanh, a); }
inline Value sin(Value a) { return a.tape->make(Op::Sin, a); }
inline Value cos(Value a) { return a.tape->make(Op::Cos, a); }
inline Value abs(Value a) { return a.tape->make(Op::Abs, a); }
inline Value sign(Value a) { return a.tape->make(Op::Sign, a); }
inline Value max(Value a, Value b) { return a.tape->make(Op::Max, a, b); }
inline Value min(Value a, Value b) { return a.tape->make(Op::Min, a, b); }
inline Value max(Value a, double b) { return max(a, a.tape->constant(b)); }
inline Value max(double a, Value b) { return max(b.tape->constant(a), b); }
inline Value min(Value a, double b) { return min(a, a.tape->constant(b)); }
inline Value min(double a, Value b) { return min(b.tape->constant(a), b); }
inline Value muladd(Value a, Value b, Value c) { return a.tape->make(Op::MulAdd, a, b, c); }

/// silu(a) = a / (1 + e^{-a})
inline Value silu(Value a) { return a / (exp(-a) + 1.0); }
inline double silu(double a) { return a / (1.0 + std::exp(-a)); }

// Double counterparts so templated model code works on both scalar kinds.
// sign(0) = +1, matching the Sign op.
inline double sign(double a) { return a >= 0.0 ? 1.0 : -1.0; }
inline double max(double a, double b) { return a >= b ? a : b; }
inline double min(double a, double b) { return a <= b ? a : b; }
inline double muladd(double a, double b, double c) { return a * b + c; }
inline double exp(double a) { return std::exp(a); }
inline double tanh(double a) { return std::tanh(a); }
inline double sin(double a) { return std::sin(a); }
inline double cos(double a) { return std::cos(a); }
inline double abs(double a) { return std::fabs(a); }

/// Maximum relative error between reverse-mode and central-difference
/// gradients of `y` w.r.t. `xs`:  max |g_ad - g_fd| / max(1, |g_fd|).
double check_gradient(Tape& tape, Value y, std::span<const Value> xs, double h);

}  // namespace flforge

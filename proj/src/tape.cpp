#include "flforge/tape.hpp"

namespace flforge {

void Tape::acc(std::vector<std::int32_t>& adj, std::int32_t target, Value contrib) {
  std::int32_t& slot = adj[static_cast<std::size_t>(target)];
  if (slot < 0) {
    slot = contrib.idx;
  } else {
    slot = push(Op::Add, slot, contrib.idx, -1);
  }
}

void Tape::acc_mul(std::vector<std::int32_t>& adj, std::int32_t target, Value u, Value v) {
  std::int32_t& slot = adj[static_cast<std::size_t>(target)];
  if (slot < 0) {
    slot = push(Op::Mul, u.idx, v.idx, -1);
  } else {
    slot = push(Op::MulAdd, u.idx, v.idx, slot);
  }
}

void Tape::acc_neg(std::vector<std::int32_t>& adj, std::int32_t target, Value contrib) {
  std::int32_t& slot = adj[static_cast<std::size_t>(target)];
  if (slot < 0) {
    slot = push(Op::Neg, contrib.idx, -1, -1);
  } else {
    slot = push(Op::Sub, slot, contrib.idx, -1);
  }
}

std::vector<Value> Tape::gradient(Value y, std::span<const Value> xs) {
  if (!y.valid() || y.tape != this) throw std::invalid_argument("gradient: objective not on this tape");
  for (std::int32_t i = 0; i <= y.idx; ++i)
    if (!std::isfinite(vals_[static_cast<std::size_t>(i)])) throw NonFiniteError(i, vals_[static_cast<std::size_t>(i)]);

  // adj[i] holds the node id of d y / d node_i, or -1 while untouched.
  std::vector<std::int32_t> adj(static_cast<std::size_t>(y.idx) + 1, -1);
  adj[static_cast<std::size_t>(y.idx)] = constant(1.0).idx;

  const Value one = constant(1.0);
  for (std::int32_t i = y.idx; i >= 0; --i) {
    const std::int32_t a_id = adj[static_cast<std::size_t>(i)];
    if (a_id < 0) continue;
    const Value ai{this, a_id};
    const Node nd = nodes_[static_cast<std::size_t>(i)];  // copy: pushes may reallocate
    const Value self{this, i};
    switch (nd.op) {
      case Op::Leaf:
      case Op::Const:
      case Op::Sign:
      case Op::Ge:
        break;
      case Op::Add:
        acc(adj, nd.a, ai);
        acc(adj, nd.b, ai);
        break;
      case Op::Sub:
        acc(adj, nd.a, ai);
        acc_neg(adj, nd.b, ai);
        break;
      case Op::Mul:
        acc_mul(adj, nd.a, ai, Value{this, nd.b});
        acc_mul(adj, nd.b, ai, Value{this, nd.a});
        break;
      case Op::MulAdd:
        acc_mul(adj, nd.a, ai, Value{this, nd.b});
        acc_mul(adj, nd.b, ai, Value{this, nd.a});
        acc(adj, nd.c, ai);
        break;
      case Op::Div: {
        const Value vb{this, nd.b};
        acc(adj, nd.a, ai / vb);
        acc_neg(adj, nd.b, ai * self / vb);  // d(a/b)/db = -(a/b)/b
        break;
      }
      case Op::Neg:
        acc_neg(adj, nd.a, ai);
        break;
      case Op::Exp:
        acc_mul(adj, nd.a, ai, self);
        break;
      case Op::Tanh:
        acc_mul(adj, nd.a, ai, one - self * self);
        break;
      case Op::Sin:
        acc_mul(adj, nd.a, ai, cos(Value{this, nd.a}));
        break;
      case Op::Cos:
        acc_neg(adj, nd.a, ai * sin(Value{this, nd.a}));
        break;
      case Op::Abs:
        acc_mul(adj, nd.a, ai, sign(Value{this, nd.a}));
        break;
      case Op::Max: {
        // Tie routes to the first argument.
        const Value g = make(Op::Ge, Value{this, nd.a}, Value{this, nd.b});
        acc_mul(adj, nd.a, ai, g);
        acc_mul(adj, nd.b, ai, one - g);
        break;
      }
      case Op::Min: {
        const Value g = make(Op::Ge, Value{this, nd.b}, Value{this, nd.a});
        acc_mul(adj, nd.a, ai, g);
        acc_mul(adj, nd.b, ai, one - g);
        break;
      }
    }
  }

  std::vector<Value> out;
  out.reserve(xs.size());
  const Value zero = constant(0.0);
  for (const Value& x : xs) {
    if (!x.valid() || x.tape != this) throw std::invalid_argument("gradient: input not on this tape");
    const std::int32_t g = x.idx <= y.idx ? adj[static_cast<std::size_t>(x.idx)] : -1;
    out.push_back(g >= 0 ? Value{this, g} : zero);
  }
  return out;
}

double check_gradient(Tape& tape, Value y, std::span<const Value> xs, double h) {
  if (h <= 0.0) throw std::invalid_argument("check_gradient: h must be positive");
  const std::vector<Value> g = tape.gradient(y, xs);

  std::vector<double> leaves = tape.leaf_snapshot();
  std::vector<double> ws = tape.make_workspace();
  const std::int32_t end = y.idx + 1;

  // Map node id -> leaf ordinal for the probed inputs.
  const auto& leaf_nodes = tape.leaf_nodes();
  auto leaf_ordinal = [&](std::int32_t node) {
    for (std::size_t i = 0; i < leaf_nodes.size(); ++i)
      if (leaf_nodes[i] == node) return static_cast<std::int32_t>(i);
    throw std::invalid_argument("check_gradient: input is not a leaf");
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const std::int32_t ord = leaf_ordinal(xs[k].idx);
    const double x0 = leaves[static_cast<std::size_t>(ord)];
    leaves[static_cast<std::size_t>(ord)] = x0 + h;
    tape.replay(leaves, ws, end);
    const double fp = ws[static_cast<std::size_t>(y.idx)];
    leaves[static_cast<std::size_t>(ord)] = x0 - h;
    tape.replay(leaves, ws, end);
    const double fm = ws[static_cast<std::size_t>(y.idx)];
    leaves[static_cast<std::size_t>(ord)] = x0;
    const double fd = (fp - fm) / (2.0 * h);
    const double ad = g[k].val();
    const double rel = std::fabs(ad - fd) / flforge::max(1.0, std::fabs(fd));
    worst = flforge::max(worst, rel);
  }
  return worst;
}

}  // namespace flforge

#include "kmpc/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace kmpc {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Stored layout of a matmul operand: rank-1 lhs maps to a row vector, rank-1
// rhs to a column vector.
void operand_dims(const Tensor& t, bool lhs, int& r, int& c) {
  if (t.is_matrix()) {
    r = t.shape[0];
    c = t.shape[1];
  } else if (lhs) {
    r = 1;
    c = static_cast<int>(t.v.size());
  } else {
    r = static_cast<int>(t.v.size());
    c = 1;
  }
}

[[noreturn]] void shape_error(OpKind k, const Tensor& a, const Tensor& b) {
  std::ostringstream os;
  os << "tape: shape mismatch in " << op_name(k) << ": " << a.shape_str() << " vs " << b.shape_str();
  throw TapeError(os.str());
}

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "const";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::Scale: return "scale";
    case OpKind::Shift: return "shift";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Square: return "square";
    case OpKind::Relu: return "relu";
    case OpKind::Elu: return "elu";
    case OpKind::Recip: return "recip";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Min: return "min";
    case OpKind::Max: return "max";
    case OpKind::Custom: return "custom";
  }
  return "?";
}

int Tape::check_id(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw TapeError("tape: invalid node id " + std::to_string(id));
  return id;
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(const std::string& name, Tensor value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.name = name;
  int id = push(std::move(n));
  leaves_.emplace_back(name, id);
  return id;
}

int Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

int Tape::unary(OpKind k, int a) {
  const Tensor& x = val(a);
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    double xi = x.v[i];
    switch (k) {
      case OpKind::Tanh: out.v[i] = std::tanh(xi); break;
      case OpKind::Exp: out.v[i] = std::exp(xi); break;
      case OpKind::Square: out.v[i] = xi * xi; break;
      case OpKind::Relu: out.v[i] = xi > 0.0 ? xi : 0.0; break;
      case OpKind::Elu: out.v[i] = xi > 0.0 ? xi : std::expm1(xi); break;
      case OpKind::Recip: out.v[i] = 1.0 / xi; break;
      default: throw TapeError("tape: bad unary op");
    }
  }
  Node n;
  n.kind = k;
  n.inputs = {a};
  n.value = std::move(out);
  return push(std::move(n));
}

int Tape::binary(OpKind k, int a, int b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  // size-1 operands broadcast against any shape
  bool xb = x.is_scalar() && !y.is_scalar();
  bool yb = y.is_scalar() && !x.is_scalar();
  if (!xb && !yb && !x.same_shape(y)) shape_error(k, x, y);
  const Tensor& big = xb ? y : x;
  Tensor out = Tensor::zeros(big.shape);
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    double xi = xb ? x.v[0] : x.v[i];
    double yi = yb ? y.v[0] : y.v[i];
    switch (k) {
      case OpKind::Add: out.v[i] = xi + yi; break;
      case OpKind::Sub: out.v[i] = xi - yi; break;
      case OpKind::Mul: out.v[i] = xi * yi; break;
      case OpKind::Min: out.v[i] = xi < yi ? xi : yi; break;
      case OpKind::Max: out.v[i] = xi > yi ? xi : yi; break;
      default: throw TapeError("tape: bad binary op");
    }
  }
  Node n;
  n.kind = k;
  n.inputs = {a, b};
  n.value = std::move(out);
  return push(std::move(n));
}

int Tape::matmul(int a, int b, bool trans_a, bool trans_b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  int Ar, Ac, Br, Bc;
  operand_dims(A, true, Ar, Ac);
  operand_dims(B, false, Br, Bc);
  ConstMatMap Am(A.v.data(), Ar, Ac);
  ConstMatMap Bm(B.v.data(), Br, Bc);
  int m = trans_a ? Ac : Ar;
  int k = trans_a ? Ar : Ac;
  int kb = trans_b ? Bc : Br;
  int p = trans_b ? Br : Bc;
  if (k != kb) shape_error(OpKind::MatMul, A, B);

  // untransposed rank-1 operands drop their unit dimension from the result
  Tensor out;
  bool a_vec = !A.is_matrix() && !trans_a, b_vec = !B.is_matrix() && !trans_b;
  if (a_vec && b_vec && m == 1 && p == 1)
    out = Tensor::zeros({1});
  else if (b_vec && p == 1)
    out = Tensor::zeros({m});
  else if (a_vec && m == 1)
    out = Tensor::zeros({p});
  else
    out = Tensor::zeros({m, p});

  MatMap Om(out.v.data(), m, p);
  if (!trans_a && !trans_b)
    Om.noalias() = Am * Bm;
  else if (trans_a && !trans_b)
    Om.noalias() = Am.transpose() * Bm;
  else if (!trans_a && trans_b)
    Om.noalias() = Am * Bm.transpose();
  else
    Om.noalias() = Am.transpose() * Bm.transpose();

  Node n;
  n.kind = OpKind::MatMul;
  n.inputs = {a, b};
  n.i0 = trans_a ? 1 : 0;
  n.i1 = trans_b ? 1 : 0;
  n.value = std::move(out);
  return push(std::move(n));
}

int Tape::scale(int a, double c) {
  const Tensor& x = val(a);
  Tensor out = x;
  for (double& e : out.v) e *= c;
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {a};
  n.c = c;
  n.value = std::move(out);
  return push(std::move(n));
}

int Tape::shift(int a, double c) {
  const Tensor& x = val(a);
  Tensor out = x;
  for (double& e : out.v) e += c;
  Node n;
  n.kind = OpKind::Shift;
  n.inputs = {a};
  n.c = c;
  n.value = std::move(out);
  return push(std::move(n));
}

int Tape::reduce(OpKind k, int a) {
  const Tensor& x = val(a);
  if (x.v.empty()) throw TapeError("tape: reduce over empty tensor");
  double s = 0.0;
  for (double e : x.v) s += e;
  if (k == OpKind::Mean) s /= static_cast<double>(x.v.size());
  Node n;
  n.kind = k;
  n.inputs = {a};
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

int Tape::concat(const std::vector<int>& parts) {
  if (parts.empty()) throw TapeError("tape: concat of zero parts");
  std::vector<double> out;
  for (int id : parts) {
    const Tensor& t = val(id);
    if (t.is_matrix()) throw TapeError("tape: concat supports rank-1 tensors, got " + t.shape_str());
    out.insert(out.end(), t.v.begin(), t.v.end());
  }
  Node n;
  n.kind = OpKind::Concat;
  n.inputs = parts;
  n.value = Tensor::vec(std::move(out));
  return push(std::move(n));
}

int Tape::slice(int a, int begin, int end) {
  const Tensor& x = val(a);
  int n_rows = x.rows();
  if (begin < 0 || end > n_rows || begin >= end)
    throw TapeError("tape: slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                    x.shape_str());
  int c = x.cols();
  Tensor out = x.is_matrix() ? Tensor::zeros({end - begin, c}) : Tensor::zeros({end - begin});
  std::copy(x.v.begin() + static_cast<std::ptrdiff_t>(begin) * c, x.v.begin() + static_cast<std::ptrdiff_t>(end) * c,
            out.v.begin());
  Node n;
  n.kind = OpKind::Slice;
  n.inputs = {a};
  n.i0 = begin;
  n.i1 = end;
  n.value = std::move(out);
  return push(std::move(n));
}

int Tape::custom(Tensor value, std::vector<int> inputs, std::unique_ptr<CustomOp> op) {
  for (int id : inputs) check_id(id);
  Node n;
  n.kind = OpKind::Custom;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.custom = std::move(op);
  return push(std::move(n));
}

void Tape::accumulate_adjoint(int id, const Tensor& delta) {
  check_id(id);
  Tensor& adj = adjoints_[id];
  if (adj.v.empty()) {
    adj = delta;
    adj.shape = nodes_[id].value.shape;
    if (adj.v.size() != nodes_[id].value.v.size())
      throw TapeError("tape: adjoint size mismatch on node " + std::to_string(id));
    return;
  }
  if (adj.v.size() != delta.v.size()) throw TapeError("tape: adjoint size mismatch on node " + std::to_string(id));
  for (std::size_t i = 0; i < adj.v.size(); ++i) adj.v[i] += delta.v[i];
}

void Tape::backward(int root) {
  check_id(root);
  if (!val(root).is_scalar())
    throw TapeError("tape: backward root must be scalar, got " + val(root).shape_str());
  adjoints_.assign(nodes_.size(), Tensor{});
  adjoints_[root] = Tensor::scalar(1.0);
  for (int id = root; id >= 0; --id) {
    if (adjoints_[id].v.empty()) continue;
    backprop_node(id);
  }
}

void Tape::backprop_node(int id) {
  Node& n = nodes_[id];
  const Tensor& g = adjoints_[id];

  auto acc = [&](int in, const Tensor& d) { accumulate_adjoint(in, d); };

  switch (n.kind) {
    case OpKind::Leaf:
    case OpKind::Constant:
      return;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Min:
    case OpKind::Max: {
      const Tensor& x = val(n.inputs[0]);
      const Tensor& y = val(n.inputs[1]);
      bool xb = x.is_scalar() && !y.is_scalar();
      bool yb = y.is_scalar() && !x.is_scalar();
      Tensor gx = Tensor::zeros(x.shape);
      Tensor gy = Tensor::zeros(y.shape);
      for (std::size_t i = 0; i < g.v.size(); ++i) {
        double xi = xb ? x.v[0] : x.v[i];
        double yi = yb ? y.v[0] : y.v[i];
        double dx = 0.0, dy = 0.0;
        switch (n.kind) {
          case OpKind::Add: dx = 1.0; dy = 1.0; break;
          case OpKind::Sub: dx = 1.0; dy = -1.0; break;
          case OpKind::Mul: dx = yi; dy = xi; break;
          // ties route the gradient to the first operand
          case OpKind::Min: dx = xi <= yi ? 1.0 : 0.0; dy = 1.0 - dx; break;
          case OpKind::Max: dx = xi >= yi ? 1.0 : 0.0; dy = 1.0 - dx; break;
          default: break;
        }
        gx.v[xb ? 0 : i] += g.v[i] * dx;
        gy.v[yb ? 0 : i] += g.v[i] * dy;
      }
      acc(n.inputs[0], gx);
      acc(n.inputs[1], gy);
      return;
    }
    case OpKind::MatMul: {
      const Tensor& A = val(n.inputs[0]);
      const Tensor& B = val(n.inputs[1]);
      bool ta = n.i0 != 0, tb = n.i1 != 0;
      int Ar, Ac, Br, Bc;
      operand_dims(A, true, Ar, Ac);
      operand_dims(B, false, Br, Bc);
      ConstMatMap Am(A.v.data(), Ar, Ac);
      ConstMatMap Bm(B.v.data(), Br, Bc);
      int m = ta ? Ac : Ar;
      int p = tb ? Br : Bc;
      ConstMatMap Gm(g.v.data(), m, p);
      Tensor gA = Tensor::zeros(A.shape);
      Tensor gB = Tensor::zeros(B.shape);
      MatMap gAm(gA.v.data(), Ar, Ac);
      MatMap gBm(gB.v.data(), Br, Bc);
      // dA_logical = G B_logical^T, dB_logical = A_logical^T G
      if (!ta)
        gAm.noalias() = tb ? (Gm * Bm).eval() : (Gm * Bm.transpose()).eval();
      else
        gAm.noalias() = tb ? (Bm.transpose() * Gm.transpose()).eval() : (Bm * Gm.transpose()).eval();
      if (!tb)
        gBm.noalias() = ta ? (Am * Gm).eval() : (Am.transpose() * Gm).eval();
      else
        gBm.noalias() = ta ? (Gm.transpose() * Am.transpose()).eval() : (Gm.transpose() * Am).eval();
      acc(n.inputs[0], gA);
      acc(n.inputs[1], gB);
      return;
    }
    case OpKind::Scale: {
      Tensor gx = g;
      gx.shape = val(n.inputs[0]).shape;
      for (double& e : gx.v) e *= n.c;
      acc(n.inputs[0], gx);
      return;
    }
    case OpKind::Shift: {
      acc(n.inputs[0], g);
      return;
    }
    case OpKind::Tanh:
    case OpKind::Exp:
    case OpKind::Square:
    case OpKind::Relu:
    case OpKind::Elu:
    case OpKind::Recip: {
      const Tensor& x = val(n.inputs[0]);
      Tensor gx = Tensor::zeros(x.shape);
      for (std::size_t i = 0; i < x.v.size(); ++i) {
        double xi = x.v[i];
        double d = 0.0;
        switch (n.kind) {
          case OpKind::Tanh: { double t = n.value.v[i]; d = 1.0 - t * t; break; }
          case OpKind::Exp: d = n.value.v[i]; break;
          case OpKind::Square: d = 2.0 * xi; break;
          // subgradient 0 at the kink
          case OpKind::Relu: d = xi > 0.0 ? 1.0 : 0.0; break;
          case OpKind::Elu: d = xi > 0.0 ? 1.0 : std::exp(xi); break;
          case OpKind::Recip: d = -1.0 / (xi * xi); break;
          default: break;
        }
        gx.v[i] = g.v[i] * d;
      }
      acc(n.inputs[0], gx);
      return;
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      const Tensor& x = val(n.inputs[0]);
      double w = g.v[0];
      if (n.kind == OpKind::Mean) w /= static_cast<double>(x.v.size());
      acc(n.inputs[0], Tensor::full(x.shape, w));
      return;
    }
    case OpKind::Concat: {
      std::size_t off = 0;
      for (int in : n.inputs) {
        const Tensor& x = val(in);
        Tensor gx = Tensor::zeros(x.shape);
        std::copy(g.v.begin() + off, g.v.begin() + off + x.v.size(), gx.v.begin());
        off += x.v.size();
        acc(in, gx);
      }
      return;
    }
    case OpKind::Slice: {
      const Tensor& x = val(n.inputs[0]);
      Tensor gx = Tensor::zeros(x.shape);
      int c = x.cols();
      std::copy(g.v.begin(), g.v.end(), gx.v.begin() + static_cast<std::ptrdiff_t>(n.i0) * c);
      acc(n.inputs[0], gx);
      return;
    }
    case OpKind::Custom: {
      n.custom->backward(*this, g, n.inputs);
      return;
    }
  }
}

Tensor Tape::adjoint(int id) const {
  check_id(id);
  if (static_cast<std::size_t>(id) < adjoints_.size() && !adjoints_[id].v.empty()) return adjoints_[id];
  return Tensor::zeros(nodes_[id].value.shape);
}

std::map<std::string, Tensor> Tape::leaf_grads() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : leaves_) {
    Tensor g = adjoint(id);
    auto it = out.find(name);
    if (it == out.end()) {
      out.emplace(name, std::move(g));
    } else {
      for (std::size_t i = 0; i < g.v.size(); ++i) it->second.v[i] += g.v[i];
    }
  }
  return out;
}

}  // namespace kmpc

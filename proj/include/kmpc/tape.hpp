#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "kmpc/tensor.hpp"

namespace kmpc {

class Tape;

// Node implementing a forward value computed outside the built-in op set
// (e.g. an optimization-layer solve). backward() must accumulate into the
// adjoints of its input nodes via Tape::accumulate_adjoint.
struct CustomOp {
  virtual ~CustomOp() = default;
  virtual const char* name() const = 0;
  virtual void backward(Tape& tape, const Tensor& out_adj, const std::vector<int>& inputs) = 0;
};

enum class OpKind : unsigned char {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  MatMul,
  Scale,
  Shift,
  Tanh,
  Exp,
  Square,
  Relu,
  Elu,
  Recip,
  Sum,
  Mean,
  Concat,
  Slice,
  Min,
  Max,
  Custom,
};

const char* op_name(OpKind k);

// Reverse-mode tape over dense tensors. Define-by-run: a tape is built per
// forward pass and discarded after backward. Node ids are topologically
// ordered by construction. Not safe for concurrent use; use one tape per
// worker.
class Tape {
 public:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Tensor value;
    double c = 0.0;  // Scale/Shift coefficient
    int i0 = 0;      // Slice begin / MatMul transpose-lhs
    int i1 = 0;      // Slice end   / MatMul transpose-rhs
    std::string name;
    std::unique_ptr<CustomOp> custom;
  };

  int leaf(const std::string& name, Tensor value);
  int constant(Tensor value);
  int constant(double x) { return constant(Tensor::scalar(x)); }

  int add(int a, int b) { return binary(OpKind::Add, a, b); }
  int sub(int a, int b) { return binary(OpKind::Sub, a, b); }
  int mul(int a, int b) { return binary(OpKind::Mul, a, b); }
  int min_(int a, int b) { return binary(OpKind::Min, a, b); }
  int max_(int a, int b) { return binary(OpKind::Max, a, b); }
  // op(A, B) with optional transposes; vectors act as column (rhs) or row (lhs) operands
  int matmul(int a, int b, bool trans_a = false, bool trans_b = false);
  int scale(int a, double c);
  int shift(int a, double c);
  int neg(int a) { return scale(a, -1.0); }
  int tanh_(int a) { return unary(OpKind::Tanh, a); }
  int exp_(int a) { return unary(OpKind::Exp, a); }
  int square(int a) { return unary(OpKind::Square, a); }
  int relu(int a) { return unary(OpKind::Relu, a); }
  int elu(int a) { return unary(OpKind::Elu, a); }
  int recip(int a) { return unary(OpKind::Recip, a); }
  int sum(int a) { return reduce(OpKind::Sum, a); }
  int mean(int a) { return reduce(OpKind::Mean, a); }
  int concat(const std::vector<int>& parts);
  int slice(int a, int begin, int end);
  int custom(Tensor value, std::vector<int> inputs, std::unique_ptr<CustomOp> op);

  // convenience: sum(mul(a,b)) and sum(square(a))
  int dot(int a, int b) { return sum(mul(a, b)); }
  int sq_norm(int a) { return sum(square(a)); }

  const Tensor& val(int id) const { return nodes_[check_id(id)].value; }
  std::size_t num_nodes() const { return nodes_.size(); }
  OpKind kind_of(int id) const { return nodes_[check_id(id)].kind; }

  // Reverse sweep from a scalar root. Clears previous adjoints.
  void backward(int root);
  // Adjoint of a node after backward(); zeros if the node was not reached.
  Tensor adjoint(int id) const;
  bool has_adjoint(int id) const { return static_cast<std::size_t>(id) < adjoints_.size() && !adjoints_[id].v.empty(); }
  // Named-leaf gradients; leaves unreachable from the root map to zero tensors.
  std::map<std::string, Tensor> leaf_grads() const;

  // For CustomOp::backward implementations.
  void accumulate_adjoint(int id, const Tensor& delta);

 private:
  int check_id(int id) const;
  int push(Node n);
  int unary(OpKind k, int a);
  int binary(OpKind k, int a, int b);
  int reduce(OpKind k, int a);
  void backprop_node(int id);

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;  // empty tensor == not reached
  std::vector<std::pair<std::string, int>> leaves_;
};

struct TapeError : std::runtime_error {
  explicit TapeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kmpc

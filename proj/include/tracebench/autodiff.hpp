// Tape-based reverse-mode differentiation over dense matrices. Values are
// computed eagerly; backward() replays the tape in reverse. Only the ops the
// transformer forward pass and the editing objective need are provided.
#pragma once

#include <functional>
#include <vector>

#include "tracebench/numkernel.hpp"

namespace tb::ad {

using Matrix = tb::num::Matrix;
using Vector = tb::num::Vector;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  Var constant(Matrix v);
  Var input(Matrix v);  // differentiable leaf

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var div(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);     // A * B
  Var matmul_nt(Var a, Var b);  // A * B^T
  Var relu(Var a);
  Var log(Var a);
  Var softmax_rows(Var a);
  Var rms_norm_rows(Var x, Vector gain, double eps);
  Var slice_cols(Var a, int start, int n);
  Var pad_cols(Var a, int start, int total);   // place block into zero matrix
  Var replace_row(Var base, int row, Var v);   // v: 1 x cols
  Var pick(Var a, int i, int j);               // 1x1

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }

  // Seeds d(out)/d(out) = 1 for a 1x1 node and accumulates gradients.
  void backward(Var out);
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Graph&, const Matrix&)> back;  // adds into parents
  };

  Var emit(Matrix value, std::function<void(Graph&, const Matrix&)> back);
  void accumulate(Var v, const Matrix& g);

  std::vector<Node> nodes_;
};

}  // namespace tb::ad

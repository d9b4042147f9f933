#include "tracebench/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace tb::ad {

Var Graph::emit(Matrix value, std::function<void(Graph&, const Matrix&)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Var Graph::constant(Matrix v) { return emit(std::move(v), nullptr); }

Var Graph::input(Matrix v) { return emit(std::move(v), nullptr); }

Var Graph::add(Var a, Var b) {
  return emit(value(a) + value(b), [a, b](Graph& g, const Matrix& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

Var Graph::sub(Var a, Var b) {
  return emit(value(a) - value(b), [a, b](Graph& g, const Matrix& go) {
    g.accumulate(a, go);
    g.accumulate(b, Matrix(-go));
  });
}

Var Graph::mul(Var a, Var b) {
  return emit(value(a).cwiseProduct(value(b)),
              [a, b](Graph& g, const Matrix& go) {
                g.accumulate(a, go.cwiseProduct(g.value(b)));
                g.accumulate(b, go.cwiseProduct(g.value(a)));
              });
}

Var Graph::div(Var a, Var b) {
  return emit(value(a).cwiseQuotient(value(b)),
              [a, b](Graph& g, const Matrix& go) {
                const Matrix& vb = g.value(b);
                g.accumulate(a, go.cwiseQuotient(vb));
                Matrix gb = -go.cwiseProduct(g.value(a))
                                 .cwiseQuotient(vb.cwiseProduct(vb));
                g.accumulate(b, gb);
              });
}

Var Graph::scale(Var a, double s) {
  return emit(value(a) * s, [a, s](Graph& g, const Matrix& go) {
    g.accumulate(a, Matrix(go * s));
  });
}

Var Graph::matmul(Var a, Var b) {
  return emit(value(a) * value(b), [a, b](Graph& g, const Matrix& go) {
    g.accumulate(a, Matrix(go * g.value(b).transpose()));
    g.accumulate(b, Matrix(g.value(a).transpose() * go));
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  return emit(value(a) * value(b).transpose(),
              [a, b](Graph& g, const Matrix& go) {
                g.accumulate(a, Matrix(go * g.value(b)));
                g.accumulate(b, Matrix(go.transpose() * g.value(a)));
              });
}

Var Graph::relu(Var a) {
  return emit(value(a).cwiseMax(0.0), [a](Graph& g, const Matrix& go) {
    Matrix mask = (g.value(a).array() > 0.0).cast<double>();
    g.accumulate(a, go.cwiseProduct(mask));
  });
}

Var Graph::log(Var a) {
  return emit(value(a).array().log().matrix(),
              [a](Graph& g, const Matrix& go) {
                g.accumulate(a, go.cwiseQuotient(g.value(a)));
              });
}

Var Graph::softmax_rows(Var a) {
  const Matrix& x = value(a);
  Matrix y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp();
    y.row(i) = e / e.sum();
  }
  Var out = emit(std::move(y), nullptr);
  nodes_[out.id].back = [a, out](Graph& g, const Matrix& go) {
    const Matrix& yv = g.value(out);
    Matrix gx(yv.rows(), yv.cols());
    for (int i = 0; i < yv.rows(); ++i) {
      double dot = go.row(i).dot(yv.row(i));
      gx.row(i) = yv.row(i).cwiseProduct(go.row(i).array().matrix()) -
                  dot * yv.row(i);
    }
    g.accumulate(a, gx);
  };
  return out;
}

Var Graph::rms_norm_rows(Var x, Vector gain, double eps) {
  const Matrix& xv = value(x);
  const int d = static_cast<int>(xv.cols());
  Matrix y(xv.rows(), d);
  Vector rms(xv.rows());
  for (int i = 0; i < xv.rows(); ++i) {
    rms[i] = std::sqrt(xv.row(i).squaredNorm() / d + eps);
    y.row(i) = xv.row(i).cwiseProduct(gain.transpose()) / rms[i];
  }
  return emit(std::move(y),
              [x, gain = std::move(gain), rms = std::move(rms),
               d](Graph& g, const Matrix& go) {
                const Matrix& xv = g.value(x);
                Matrix gx(xv.rows(), xv.cols());
                for (int i = 0; i < xv.rows(); ++i) {
                  Eigen::RowVectorXd gd =
                      go.row(i).cwiseProduct(gain.transpose());
                  double dot = gd.dot(xv.row(i));
                  gx.row(i) = gd / rms[i] -
                              xv.row(i) * (dot / (d * rms[i] * rms[i] * rms[i]));
                }
                g.accumulate(x, gx);
              });
}

Var Graph::slice_cols(Var a, int start, int n) {
  return emit(value(a).middleCols(start, n),
              [a, start, n](Graph& g, const Matrix& go) {
                Matrix gx = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
                gx.middleCols(start, n) = go;
                g.accumulate(a, gx);
              });
}

Var Graph::pad_cols(Var a, int start, int total) {
  const Matrix& x = value(a);
  Matrix y = Matrix::Zero(x.rows(), total);
  y.middleCols(start, x.cols()) = x;
  const int n = static_cast<int>(x.cols());
  return emit(std::move(y), [a, start, n](Graph& g, const Matrix& go) {
    g.accumulate(a, Matrix(go.middleCols(start, n)));
  });
}

Var Graph::replace_row(Var base, int row, Var v) {
  if (value(v).rows() != 1 || value(v).cols() != value(base).cols()) {
    throw std::invalid_argument("replace_row: replacement must be 1 x cols");
  }
  Matrix y = value(base);
  y.row(row) = value(v).row(0);
  return emit(std::move(y), [base, row, v](Graph& g, const Matrix& go) {
    Matrix gb = go;
    gb.row(row).setZero();
    g.accumulate(base, gb);
    g.accumulate(v, Matrix(go.row(row)));
  });
}

Var Graph::pick(Var a, int i, int j) {
  Matrix y(1, 1);
  y(0, 0) = value(a)(i, j);
  return emit(std::move(y), [a, i, j](Graph& g, const Matrix& go) {
    Matrix gx = Matrix::Zero(g.value(a).rows(), g.value(a).cols());
    gx(i, j) = go(0, 0);
    g.accumulate(a, gx);
  });
}

void Graph::backward(Var out) {
  if (value(out).rows() != 1 || value(out).cols() != 1) {
    throw std::invalid_argument("backward: output must be scalar (1x1)");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[out.id].grad = Matrix::Ones(1, 1);
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n.grad);
  }
}

}  // namespace tb::ad

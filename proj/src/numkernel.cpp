#include "tracebench/numkernel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tb::num {

bool is_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
  }
}

SvdResult svd(const Matrix& a) {
  require_finite(a, "svd input");
  Eigen::JacobiSVD<Matrix> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult r{dec.matrixU(), dec.singularValues(), dec.matrixV()};
  // Sign convention: largest-|entry| component of each U column positive.
  for (int j = 0; j < r.u.cols(); ++j) {
    int imax = 0;
    double amax = -1.0;
    for (int i = 0; i < r.u.rows(); ++i) {
      double av = std::abs(r.u(i, j));
      if (av > amax) {
        amax = av;
        imax = i;
      }
    }
    if (r.u(imax, j) < 0.0) {
      r.u.col(j) = -r.u.col(j);
      if (j < r.v.cols()) r.v.col(j) = -r.v.col(j);
    }
  }
  return r;
}

int numerical_rank(const Vector& s, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::invalid_argument("numerical_rank: tau must be in (0, 1)");
  }
  for (int i = 0; i < s.size(); ++i) {
    if (s[i] < 0.0) throw std::invalid_argument("numerical_rank: negative singular value");
    if (i > 0 && s[i] > s[i - 1]) {
      throw std::invalid_argument("numerical_rank: singular values not sorted descending");
    }
  }
  if (s.size() == 0 || s[0] == 0.0) return 0;
  const double cut = tau * s[0];
  int count = 0;
  for (int i = 0; i < s.size(); ++i) {
    if (s[i] > cut) ++count;
  }
  return count;
}

Matrix solve_spd(const Matrix& a, const Matrix& b) {
  require_finite(a, "solve_spd lhs");
  require_finite(b, "solve_spd rhs");
  if (a.rows() != a.cols()) throw std::invalid_argument("solve_spd: lhs not square");
  if (a.rows() != b.rows()) throw std::invalid_argument("solve_spd: dimension mismatch");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("solve_spd: lhs not symmetric");
  }
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    // Name the offending pivot via LDLT.
    Eigen::LDLT<Matrix> ldlt(a);
    double pmin = ldlt.vectorD().minCoeff();
    std::ostringstream os;
    os << "solve_spd: lhs not positive definite (smallest pivot " << pmin << ")";
    throw std::invalid_argument(os.str());
  }
  Matrix x = llt.solve(b);
  // One refinement step tightens the residual on ill-scaled systems.
  x += llt.solve(b - a * x);
  return x;
}

Vector softmax(const Vector& v) {
  require_finite(v, "softmax input");
  const double m = v.maxCoeff();
  Vector e = (v.array() - m).exp();
  return e / e.sum();
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

std::uint64_t SeededRng::next_u64() { return gen_(); }

double SeededRng::uniform() {
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

SeededRng SeededRng::child(std::uint64_t stream) const {
  return SeededRng(mix_seed(seed_, stream));
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Matrix gaussian_noise(int rows, int cols, double sigma, SeededRng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("gaussian_noise: negative sigma");
  Matrix m = Matrix::Zero(rows, cols);
  if (sigma == 0.0) return m;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      m(i, j) = sigma * rng.normal();
    }
  }
  return m;
}

}  // namespace tb::num

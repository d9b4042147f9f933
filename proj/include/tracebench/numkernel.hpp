// Dense linear algebra and seeded randomness used by every other module.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>

namespace tb::num {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

bool is_finite(const Matrix& m);

// Throws std::invalid_argument naming `what` if m contains NaN/Inf.
void require_finite(const Matrix& m, const char* what);

struct SvdResult {
  Matrix u;   // left singular vectors, columns
  Vector s;   // singular values, descending
  Matrix v;   // right singular vectors, columns
};

// Thin SVD with a fixed sign convention: in each column of U the entry of
// largest magnitude is made positive (V flipped in tandem so U*S*V^T still
// reconstructs the input).
SvdResult svd(const Matrix& a);

// Number of singular values above tau * s[0]. s must be sorted descending
// and non-negative; returns 0 when s[0] == 0.
int numerical_rank(const Vector& s, double tau);

// Solves a*x = b for symmetric positive definite a (Cholesky plus one step
// of iterative refinement). Throws naming the smallest pivot if a is not SPD.
Matrix solve_spd(const Matrix& a, const Matrix& b);

Vector softmax(const Vector& v);

// Deterministic stream of random numbers. The normal() path uses Box-Muller
// on top of mt19937_64 so sequences are identical across platforms
// (std::normal_distribution is not portable).
class SeededRng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64+box-muller";

  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // N(0, 1)

  // Independent substream; derived from the original seed, not the current
  // stream position, so parallel callers can split deterministically.
  SeededRng child(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64-style avalanche mix of two words; used for seed derivation.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// i.i.d. N(0, sigma^2) entries; sigma == 0 yields exact zeros.
Matrix gaussian_noise(int rows, int cols, double sigma, SeededRng& rng);

}  // namespace tb::num

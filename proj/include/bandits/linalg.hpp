#pragma once
// Minimal dense linear algebra for d x d symmetric PSD matrices plus the
// truncated SVD used for feedback-matrix preprocessing. Everything is plain
// row-major std::vector<double>.
//
// The hot kernels (gram, symv, score_arms) have OpenMP implementations that
// parallelize over independent output elements only, so results are bitwise
// identical at any thread count; serial twins live in bandits::la::ref and the
// kernel_bench target compares the two.
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bandits::la {

using Vec = std::vector<double>;

struct SymMatrix {
  int d = 0;
  std::vector<double> a;  // row-major d*d, kept exactly symmetric

  SymMatrix() = default;
  explicit SymMatrix(int dim) : d(dim), a(static_cast<size_t>(dim) * dim, 0.0) {}
  static SymMatrix identity(int dim, double scale = 1.0);

  double& at(int i, int j) { return a[static_cast<size_t>(i) * d + j]; }
  double at(int i, int j) const { return a[static_cast<size_t>(i) * d + j]; }
};

struct EigenError : std::runtime_error {
  double best_estimate;
  EigenError(const std::string& msg, double best)
      : std::runtime_error(msg), best_estimate(best) {}
};

// m += x x^T (exactly symmetric by construction)
void rank1_add_inplace(SymMatrix& m, const Vec& x);
SymMatrix rank1_add(const SymMatrix& m, const Vec& x);

// Cholesky factor of (lambda I + s); lambda > 0 makes it positive definite.
struct Chol {
  int d = 0;
  std::vector<double> L;  // lower triangle, row-major full storage
};
Chol chol_factor(const SymMatrix& s, double lambda);
Vec chol_solve(const Chol& c, const Vec& b);

// theta = (lambda I + s)^{-1} b
Vec reg_solve(const SymMatrix& s, const Vec& b, double lambda);

// x^T (lambda I + s)^{-1} x, i.e. ||x||^2 in the inverse-regularized norm
double quad_form_inv(const SymMatrix& s, const Vec& x, double lambda);
double quad_form_inv(const Chol& c, const Vec& x);  // with a cached factor

// smallest eigenvalue of a symmetric matrix via cyclic Jacobi sweeps
// (d <= 64 expected; off-diagonal tolerance 1e-10, throws EigenError with the
// best estimate if the sweep budget is exhausted)
double min_eigenvalue(const SymMatrix& s);
double max_eigenvalue(const SymMatrix& s);
// unit eigenvector for the smallest eigenvalue of a PSD matrix, via inverse
// iteration on (s + 1e-6 I); deterministic (fixed e_1 start)
Vec min_eigenvector(const SymMatrix& s);

// ---- dense kernels (OpenMP, element-parallel, deterministic) ----

// g = r^T r where r is u x n row-major; result n x n
std::vector<double> gram(const std::vector<double>& r, int u, int n);
// y = g v for symmetric n x n g
Vec symv(const std::vector<double>& g, int n, const Vec& v);
// UCB scores for K arms: theta^T x_k + beta * sqrt(x_k^T (lambda I+S)^-1 x_k)
Vec score_arms(const Vec& theta, const Chol& c, const std::vector<Vec>& arms, double beta);

namespace ref {  // serial reference twins kept for testing / benchmarking
std::vector<double> gram(const std::vector<double>& r, int u, int n);
Vec symv(const std::vector<double>& g, int n, const Vec& v);
Vec score_arms(const Vec& theta, const Chol& c, const std::vector<Vec>& arms, double beta);
}  // namespace ref

// ---- truncated SVD ----

struct SvdResult {
  int u = 0, n = 0, k = 0;
  std::vector<double> U;  // u x k row-major
  Vec S;                  // k singular values, nonincreasing
  std::vector<double> V;  // n x k row-major
};

// top-k SVD of the u x n matrix r via power iteration with deflation on r^T r.
// 500 iterations max per component, 1e-9 tolerance on eigenvector change.
SvdResult truncated_svd(const std::vector<double>& r, int u, int n, int k);

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& a);
void axpy(double alpha, const Vec& x, Vec& y);  // y += alpha x

}  // namespace bandits::la

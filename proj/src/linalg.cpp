#include "bandits/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "bandits/rng.hpp"

namespace bandits::la {

SymMatrix SymMatrix::identity(int dim, double scale) {
  SymMatrix m(dim);
  for (int i = 0; i < dim; ++i) m.at(i, i) = scale;
  return m;
}

void rank1_add_inplace(SymMatrix& m, const Vec& x) {
  if (static_cast<size_t>(m.d) != x.size())
    throw std::invalid_argument("rank1_add: dimension mismatch");
  const int d = m.d;
  for (int i = 0; i < d; ++i) {
    const double xi = x[i];
    m.at(i, i) += xi * xi;
    for (int j = i + 1; j < d; ++j) {
      const double v = xi * x[j];
      m.at(i, j) += v;
      m.at(j, i) = m.at(i, j);  // mirror, keeps exact symmetry
    }
  }
}

SymMatrix rank1_add(const SymMatrix& m, const Vec& x) {
  SymMatrix out = m;
  rank1_add_inplace(out, x);
  return out;
}

Chol chol_factor(const SymMatrix& s, double lambda) {
  if (!(lambda > 0)) throw std::invalid_argument("chol_factor: lambda must be > 0");
  const int d = s.d;
  Chol c;
  c.d = d;
  c.L.assign(static_cast<size_t>(d) * d, 0.0);
  auto L = [&](int i, int j) -> double& { return c.L[static_cast<size_t>(i) * d + j]; };
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = s.at(i, j) + (i == j ? lambda : 0.0);
      for (int k = 0; k < j; ++k) sum -= L(i, k) * L(j, k);
      if (i == j) {
        if (!(sum > 0) || !std::isfinite(sum))
          throw std::runtime_error("chol_factor: matrix not positive definite (non-finite input?)");
        L(i, j) = std::sqrt(sum);
      } else {
        L(i, j) = sum / L(j, j);
      }
    }
  }
  return c;
}

Vec chol_solve(const Chol& c, const Vec& b) {
  const int d = c.d;
  if (static_cast<size_t>(d) != b.size())
    throw std::invalid_argument("chol_solve: dimension mismatch");
  auto L = [&](int i, int j) { return c.L[static_cast<size_t>(i) * d + j]; };
  Vec y(d), x(d);
  for (int i = 0; i < d; ++i) {
    double sum = b[i];
    for (int k = 0; k < i; ++k) sum -= L(i, k) * y[k];
    y[i] = sum / L(i, i);
  }
  for (int i = d - 1; i >= 0; --i) {
    double sum = y[i];
    for (int k = i + 1; k < d; ++k) sum -= L(k, i) * x[k];
    x[i] = sum / L(i, i);
  }
  return x;
}

Vec reg_solve(const SymMatrix& s, const Vec& b, double lambda) {
  for (double v : b)
    if (!std::isfinite(v)) throw std::invalid_argument("reg_solve: non-finite rhs");
  for (double v : s.a)
    if (!std::isfinite(v)) throw std::invalid_argument("reg_solve: non-finite matrix");
  return chol_solve(chol_factor(s, lambda), b);
}

double quad_form_inv(const Chol& c, const Vec& x) {
  // x^T A^{-1} x = ||L^{-1} x||^2 with A = L L^T
  const int d = c.d;
  if (static_cast<size_t>(d) != x.size())
    throw std::invalid_argument("quad_form_inv: dimension mismatch");
  auto L = [&](int i, int j) { return c.L[static_cast<size_t>(i) * d + j]; };
  Vec y(d);
  double q = 0.0;
  for (int i = 0; i < d; ++i) {
    double sum = x[i];
    for (int k = 0; k < i; ++k) sum -= L(i, k) * y[k];
    y[i] = sum / L(i, i);
    q += y[i] * y[i];
  }
  return q;
}

double quad_form_inv(const SymMatrix& s, const Vec& x, double lambda) {
  return quad_form_inv(chol_factor(s, lambda), x);
}

namespace {

// one cyclic Jacobi pass over all (p,q) pairs; returns updated off-diag norm
void jacobi_rotate(std::vector<double>& A, int n, int p, int q) {
  auto a = [&](int i, int j) -> double& { return A[static_cast<size_t>(i) * n + j]; };
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double app = a(p, p), aqq = a(q, q);
  const double tau = (aqq - app) / (2.0 * apq);
  double t;
  if (tau >= 0)
    t = 1.0 / (tau + std::sqrt(1.0 + tau * tau));
  else
    t = -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
  const double c = 1.0 / std::sqrt(1.0 + t * t);
  const double s = t * c;
  for (int k = 0; k < n; ++k) {
    const double akp = a(k, p), akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (int k = 0; k < n; ++k) {
    const double apk = a(p, k), aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
}

double offdiag_norm(const std::vector<double>& A, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = A[static_cast<size_t>(i) * n + j];
      s += 2.0 * v * v;
    }
  return std::sqrt(s);
}

std::vector<double> jacobi_eigenvalues(const SymMatrix& s) {
  const int n = s.d;
  std::vector<double> A = s.a;
  constexpr int kMaxSweeps = 100;
  constexpr double kTol = 1e-10;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (offdiag_norm(A, n) <= kTol) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) jacobi_rotate(A, n, p, q);
    if (sweep == kMaxSweeps - 1 && offdiag_norm(A, n) > kTol) {
      double best = A[0];
      for (int i = 1; i < n; ++i) best = std::min(best, A[static_cast<size_t>(i) * n + i]);
      throw EigenError("min_eigenvalue: jacobi failed to converge in 100 sweeps", best);
    }
  }
  std::vector<double> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = A[static_cast<size_t>(i) * n + i];
  return ev;
}

}  // namespace

double min_eigenvalue(const SymMatrix& s) {
  if (s.d == 0) throw std::invalid_argument("min_eigenvalue: empty matrix");
  auto ev = jacobi_eigenvalues(s);
  return *std::min_element(ev.begin(), ev.end());
}

double max_eigenvalue(const SymMatrix& s) {
  if (s.d == 0) throw std::invalid_argument("max_eigenvalue: empty matrix");
  auto ev = jacobi_eigenvalues(s);
  return *std::max_element(ev.begin(), ev.end());
}

Vec min_eigenvector(const SymMatrix& s) {
  const int d = s.d;
  const Chol c = chol_factor(s, 1e-6);
  Vec v(d, 0.0);
  v[0] = 1.0;
  for (int it = 0; it < 200; ++it) {
    Vec w = chol_solve(c, v);
    const double nw = norm2(w);
    if (nw <= 1e-300) break;
    for (auto& x : w) x /= nw;
    if (dot(w, v) < 0)
      for (auto& x : w) x = -x;
    double diff = 0.0;
    for (int i = 0; i < d; ++i) diff += (w[i] - v[i]) * (w[i] - v[i]);
    v = w;
    if (std::sqrt(diff) <= 1e-12) break;
  }
  return v;
}

// ---- kernels ----

namespace ref {

std::vector<double> gram(const std::vector<double>& r, int u, int n) {
  std::vector<double> g(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int row = 0; row < u; ++row)
        s += r[static_cast<size_t>(row) * n + i] * r[static_cast<size_t>(row) * n + j];
      g[static_cast<size_t>(i) * n + j] = s;
      g[static_cast<size_t>(j) * n + i] = s;
    }
  }
  return g;
}

Vec symv(const std::vector<double>& g, int n, const Vec& v) {
  Vec y(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = &g[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j) s += row[j] * v[j];
    y[i] = s;
  }
  return y;
}

Vec score_arms(const Vec& theta, const Chol& c, const std::vector<Vec>& arms, double beta) {
  Vec out(arms.size());
  for (size_t k = 0; k < arms.size(); ++k)
    out[k] = dot(theta, arms[k]) + beta * std::sqrt(quad_form_inv(c, arms[k]));
  return out;
}

}  // namespace ref

std::vector<double> gram(const std::vector<double>& r, int u, int n) {
  std::vector<double> g(static_cast<size_t>(n) * n, 0.0);
  // each (i,j) entry is an independent dot product with a fixed summation
  // order, so the parallel result is bitwise equal to the serial one
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int row = 0; row < u; ++row)
        s += r[static_cast<size_t>(row) * n + i] * r[static_cast<size_t>(row) * n + j];
      g[static_cast<size_t>(i) * n + j] = s;
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) g[static_cast<size_t>(j) * n + i] = g[static_cast<size_t>(i) * n + j];
  return g;
}

Vec symv(const std::vector<double>& g, int n, const Vec& v) {
  Vec y(n, 0.0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = &g[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j) s += row[j] * v[j];
    y[i] = s;
  }
  return y;
}

Vec score_arms(const Vec& theta, const Chol& c, const std::vector<Vec>& arms, double beta) {
  const int K = static_cast<int>(arms.size());
  Vec out(K);
  // worth a team only for big K*d^2; either branch computes per-element
  // identical arithmetic
  if (static_cast<long long>(K) * c.d * c.d >= 32768) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < K; ++k)
      out[k] = dot(theta, arms[k]) + beta * std::sqrt(quad_form_inv(c, arms[k]));
  } else {
    for (int k = 0; k < K; ++k)
      out[k] = dot(theta, arms[k]) + beta * std::sqrt(quad_form_inv(c, arms[k]));
  }
  return out;
}

// ---- truncated SVD ----

SvdResult truncated_svd(const std::vector<double>& r, int u, int n, int k) {
  if (k < 1 || k > std::min(u, n))
    throw std::invalid_argument("truncated_svd: k out of range");
  if (r.size() != static_cast<size_t>(u) * n)
    throw std::invalid_argument("truncated_svd: bad matrix size");

  const std::vector<double> B = gram(r, u, n);  // n x n, PSD
  constexpr int kMaxIter = 500;
  constexpr double kTol = 1e-9;

  std::vector<Vec> vs;     // right singular vectors found so far
  std::vector<double> ls;  // their eigenvalues (sigma^2)

  for (int comp = 0; comp < k; ++comp) {
    // deterministic pseudo-random start
    auto st = rng::make_stream(0xb17ULL, static_cast<uint64_t>(comp), 0, rng::INIT);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = st.next_symmetric();
    // orthogonalize against found components
    for (size_t l = 0; l < vs.size(); ++l) axpy(-dot(vs[l], v), vs[l], v);
    double nv = norm2(v);
    if (nv == 0.0) {
      v.assign(n, 0.0);
      v[comp % n] = 1.0;
      nv = 1.0;
    }
    for (auto& x : v) x /= nv;

    double lambda = 0.0;
    for (int it = 0; it < kMaxIter; ++it) {
      Vec w = symv(B, n, v);
      for (size_t l = 0; l < vs.size(); ++l) axpy(-ls[l] * dot(vs[l], v), vs[l], w);  // deflate
      for (size_t l = 0; l < vs.size(); ++l) axpy(-dot(vs[l], w), vs[l], w);          // re-orthogonalize
      const double nw = norm2(w);
      if (nw <= 1e-300) {  // in the null space: eigenvalue 0
        lambda = 0.0;
        break;
      }
      Vec v_new = w;
      for (auto& x : v_new) x /= nw;
      // sign-align before measuring the change
      if (dot(v_new, v) < 0)
        for (auto& x : v_new) x = -x;
      double diff = 0.0;
      for (int i = 0; i < n; ++i) diff += (v_new[i] - v[i]) * (v_new[i] - v[i]);
      v = v_new;
      lambda = dot(v, symv(B, n, v));
      for (size_t l = 0; l < vs.size(); ++l) {
        const double pr = dot(vs[l], v);
        lambda -= ls[l] * pr * pr;
      }
      if (std::sqrt(diff) <= kTol) break;
    }
    vs.push_back(v);
    ls.push_back(std::max(0.0, lambda));
  }

  SvdResult out;
  out.u = u;
  out.n = n;
  out.k = k;
  out.S.resize(k);
  out.U.assign(static_cast<size_t>(u) * k, 0.0);
  out.V.assign(static_cast<size_t>(n) * k, 0.0);

  // order components by decreasing eigenvalue (power iteration can return
  // near-ties out of order)
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return ls[a] > ls[b]; });

  for (int c = 0; c < k; ++c) {
    const Vec& v = vs[idx[c]];
    const double sigma = std::sqrt(std::max(0.0, ls[idx[c]]));
    // sign convention: largest-magnitude coordinate of v is positive
    int arg = 0;
    for (int i = 1; i < n; ++i)
      if (std::fabs(v[i]) > std::fabs(v[arg])) arg = i;
    const double flip = (v[arg] < 0) ? -1.0 : 1.0;
    out.S[c] = sigma;
    for (int i = 0; i < n; ++i) out.V[static_cast<size_t>(i) * k + c] = flip * v[i];
    if (sigma > 0) {
      for (int row = 0; row < u; ++row) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += r[static_cast<size_t>(row) * n + j] * v[j];
        out.U[static_cast<size_t>(row) * k + c] = flip * s / sigma;
      }
    }
  }
  return out;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, const Vec& x, Vec& y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace bandits::la

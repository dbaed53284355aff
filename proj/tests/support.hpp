#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rsfdi/spectral.hpp"

namespace rsfdi::testing {

// A finite system whose every mode is its own one-element family, together
// with the dense matrices built independently from the raw draws.
struct RandomCase {
  RieszSpectralSystem sys;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
  Eigen::MatrixXd L;  // n x p
  int n = 0;
};

inline double uniform(std::mt19937_64& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

inline int pick(std::mt19937_64& rng, int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); }

inline SpectralVector from_dense(const RieszSpectralSystem& sys, const Eigen::VectorXd& x) {
  SpectralVector v;
  int off = 0;
  for (std::size_t f = 0; f < sys.families.size(); ++f) {
    int d = sys.families[f].block_dim(sys.families[f].k_min);
    v.add(static_cast<int>(f), sys.families[f].k_min, x.segment(off, d));
    off += d;
  }
  return v;
}

// state dim <= max_dim, q outputs, p faults; some C columns are zeroed so
// that N is often nontrivial
inline RandomCase random_case(std::mt19937_64& rng, int max_dim, int q, int p, int m_inputs = 1) {
  RandomCase rc;
  std::vector<Eigen::MatrixXd> blocks;
  int dim = 0;
  std::vector<double> used;
  while (dim < max_dim) {
    int room = max_dim - dim;
    int kind = pick(rng, 0, 9);
    ModeFamily fam;
    fam.label = "m" + std::to_string(rc.sys.families.size());
    fam.count = 1;
    double a = std::round(uniform(rng, -3.0, 1.0) * 4.0) / 4.0;
    if (kind <= 1 && !used.empty()) a = used[pick(rng, 0, static_cast<int>(used.size()) - 1)];
    Eigen::MatrixXd blk;
    if (kind == 2 && room >= 2) {
      double b = std::round(uniform(rng, 0.5, 2.0) * 4.0) / 4.0;
      fam.rule = EigenRule::poly({a}, {b});
      blk.resize(2, 2);
      blk << a, b, -b, a;
    } else if (kind == 3 && room >= 2) {
      fam.rule = EigenRule::poly({a});
      fam.jordan[1] = {2};
      blk.resize(2, 2);
      blk << a, 1.0, 0.0, a;
    } else {
      fam.rule = EigenRule::poly({a});
      blk = Eigen::MatrixXd::Constant(1, 1, a);
    }
    used.push_back(a);
    rc.sys.families.push_back(fam);
    blocks.push_back(blk);
    dim += static_cast<int>(blk.rows());
    if (dim >= 3 && pick(rng, 0, 5) == 0) break;
  }
  rc.n = dim;
  rc.A = Eigen::MatrixXd::Zero(dim, dim);
  int off = 0;
  for (const auto& b : blocks) {
    rc.A.block(off, off, b.rows(), b.cols()) = b;
    off += static_cast<int>(b.rows());
  }
  auto rnd = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = uniform(rng, -1.0, 1.0);
    return m;
  };
  rc.C = rnd(q, dim);
  off = 0;
  for (const auto& b : blocks) {
    if (pick(rng, 0, 3) == 0) rc.C.middleCols(off, b.rows()).setZero();
    off += static_cast<int>(b.rows());
  }
  rc.L = rnd(dim, p);
  rc.B = rnd(dim, m_inputs);
  for (int j = 0; j < q; ++j) rc.sys.C.push_back(from_dense(rc.sys, rc.C.row(j).transpose()));
  for (int j = 0; j < p; ++j) rc.sys.faults.push_back(from_dense(rc.sys, rc.L.col(j)));
  for (int j = 0; j < m_inputs; ++j) rc.sys.B.push_back(from_dense(rc.sys, rc.B.col(j)));
  return rc;
}

// ---- dense oracles: Jacobi SVD in long double, independent of the library

using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

inline MatL lift(const Eigen::MatrixXd& m) { return m.cast<long double>(); }
inline Eigen::MatrixXd drop(const MatL& m) { return m.cast<double>(); }

inline MatL l_orth(const MatL& m, long double tol = 1e-9L) {
  if (m.cols() == 0) return MatL(m.rows(), 0);
  Eigen::JacobiSVD<MatL> svd(m, Eigen::ComputeFullU);
  const auto& s = svd.singularValues();
  long double cut = tol * std::max<long double>(1.0L, s.size() ? s(0) : 0.0L);
  int r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  return svd.matrixU().leftCols(r);
}

inline MatL l_null(const MatL& m, long double tol = 1e-9L) {
  const int n = static_cast<int>(m.cols());
  if (m.rows() == 0) return MatL::Identity(n, n);
  Eigen::JacobiSVD<MatL> svd(m, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  long double cut = tol * std::max<long double>(1.0L, s.size() ? s(0) : 0.0L);
  int r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  return svd.matrixV().rightCols(n - r);
}

inline MatL l_stack(const MatL& a, const MatL& b) {
  MatL s(a.rows(), a.cols() + b.cols());
  s << a, b;
  return s;
}

inline long double l_dist(const MatL& q1, const MatL& q2) {
  const int n = static_cast<int>(std::max(q1.rows(), q2.rows()));
  MatL p1 = q1.cols() ? MatL(q1 * q1.transpose()) : MatL::Zero(n, n);
  MatL p2 = q2.cols() ? MatL(q2 * q2.transpose()) : MatL::Zero(n, n);
  return Eigen::JacobiSVD<MatL>(MatL(p1 - p2)).singularValues()(0);
}

inline Eigen::MatrixXd o_orth(const Eigen::MatrixXd& m, double tol = 1e-9) { return drop(l_orth(lift(m), tol)); }
inline Eigen::MatrixXd o_null(const Eigen::MatrixXd& m, double tol = 1e-9) { return drop(l_null(lift(m), tol)); }
inline double o_dist(const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2) {
  return static_cast<double>(l_dist(lift(q1), lift(q2)));
}
inline Eigen::MatrixXd o_stack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return drop(l_stack(lift(a), lift(b))); }

// W_{k+1} = L + A (W_k cap ker C)
inline Eigen::MatrixXd wonham_min_ci(const Eigen::MatrixXd& A_, const Eigen::MatrixXd& C_, const Eigen::MatrixXd& L_) {
  MatL A = lift(A_), C = lift(C_), L = lift(L_);
  MatL w = l_orth(L);
  for (int it = 0; it <= A.rows() + 1; ++it) {
    MatL v = w.cols() ? MatL(w * l_null(MatL(C * w))) : w;
    MatL next = l_orth(l_stack(L, MatL(A * v)));
    bool done = next.cols() == w.cols() && l_dist(next, w) < 1e-12L;
    w = next;
    if (done) break;
  }
  return drop(w);
}

// S_0 = X, S_{k+1} = W* + (A^{-1} S_k cap ker C)
inline Eigen::MatrixXd min_unobservability_oracle(const Eigen::MatrixXd& A_, const Eigen::MatrixXd& C_,
                                                  const Eigen::MatrixXd& W_) {
  MatL A = lift(A_), C = lift(C_), W = lift(W_);
  const int n = static_cast<int>(A.rows());
  MatL s = MatL::Identity(n, n);
  for (int it = 0; it <= n + 1; ++it) {
    MatL outside = MatL::Identity(n, n) - s * s.transpose();
    MatL cons(C.rows() + n, n);
    cons << C, outside * A;
    MatL next = l_orth(l_stack(W, l_null(cons)));
    bool done = next.cols() == s.cols() && l_dist(next, s) < 1e-12L;
    s = next;
    if (done) break;
  }
  return drop(s);
}

// largest (A, B)-controlled invariant subspace in K: V_{k+1} = K cap A^{-1}(V_k + B)
inline Eigen::MatrixXd max_controlled_invariant(const Eigen::MatrixXd& A_, const Eigen::MatrixXd& B_,
                                                const Eigen::MatrixXd& K_) {
  MatL A = lift(A_), B = lift(B_), K = lift(K_);
  const int n = static_cast<int>(A.rows());
  MatL kq = l_orth(K);
  MatL kperp = MatL::Identity(n, n) - kq * kq.transpose();
  MatL v = kq;
  for (int it = 0; it <= n + 1; ++it) {
    MatL vb = l_orth(l_stack(v, B));
    MatL outside = MatL::Identity(n, n) - vb * vb.transpose();
    MatL cons(2 * n, n);
    cons << kperp, outside * A;
    MatL next = l_null(cons);
    bool done = next.cols() == v.cols() && l_dist(next, v) < 1e-12L;
    v = next;
    if (done) break;
  }
  return drop(v);
}

}  // namespace rsfdi::testing

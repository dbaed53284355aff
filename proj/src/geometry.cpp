#include "rsfdi/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rsfdi/errors.hpp"

namespace rsfdi {

namespace {

// orthonormal basis of ker(m) with singular values <= abs_tol treated as zero
Eigen::MatrixXd null_abs(const Eigen::MatrixXd& m, double abs_tol) {
  const int n = static_cast<int>(m.cols());
  if (m.rows() == 0 || n == 0) return Eigen::MatrixXd::Identity(n, n);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m.transpose(), Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  int r = 0;
  while (r < s.size() && s(r) > abs_tol) ++r;
  return complement_basis(svd.matrixU().leftCols(r), n);
}

double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::BDCSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

bool same_eig(std::complex<double> a, std::complex<double> b, double tol) {
  auto conj_close = [&](std::complex<double> x, std::complex<double> y) {
    return std::abs(x - y) <= tol * std::max(1.0, std::max(std::abs(x), std::abs(y)));
  };
  return conj_close(a, b) || conj_close(std::conj(a), b);
}

// blocks of the window sharing one eigenvalue
std::vector<std::vector<int>> eigen_groups(const Truncation& tr, double tol) {
  const auto& blocks = tr.blocks();
  std::vector<int> idx(blocks.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto key = [&](int i) {
    auto l = blocks[i].lambda;
    return std::make_pair(l.real(), std::abs(l.imag()));
  };
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return key(a) < key(b); });
  std::vector<std::vector<int>> groups;
  for (int i : idx) {
    bool placed = false;
    for (auto g = groups.rbegin(); g != groups.rend() && g != groups.rbegin() + 4; ++g)
      if (same_eig(blocks[(*g)[0]].lambda, blocks[i].lambda, tol)) {
        g->push_back(i);
        placed = true;
        break;
      }
    if (!placed) groups.push_back({i});
  }
  return groups;
}

bool simple_block(const Truncation& tr, int bi) {
  const auto& b = tr.blocks()[bi];
  return tr.family(b.family).multiplicity(b.k) == 1;
}

// 1x1, or 2x2 with a non-real pair: no invariant subspace but 0 and the whole
bool irreducible_block(const Eigen::MatrixXd& x) {
  if (x.rows() == 1) return true;
  if (x.rows() != 2) return false;
  double tr = x.trace(), det = x.determinant();
  return tr * tr - 4.0 * det < 0.0;
}

std::vector<int> coords_of(const Truncation& tr, const std::vector<int>& blocks) {
  std::vector<int> c;
  for (int bi : blocks) {
    const auto& b = tr.blocks()[bi];
    for (int i = 0; i < b.dim; ++i) c.push_back(b.offset + i);
  }
  return c;
}

Eigen::MatrixXd take(const Eigen::MatrixXd& m, const std::vector<int>& rows, const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
  return out;
}

Eigen::MatrixXd take_cols(const Eigen::MatrixXd& m, const std::vector<int>& cols) {
  Eigen::MatrixXd out(m.rows(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = m.col(cols[j]);
  return out;
}

// components of X = A + coupling: equal eigenvalues and nonzero couplings
// merge blocks; coupled components with coinciding spectra merge too
std::vector<std::vector<int>> components(const Truncation& tr, const Eigen::MatrixXd& X,
                                         const Eigen::MatrixXd& D, const Eigen::MatrixXd& C,
                                         double eig_tol) {
  const int nb = static_cast<int>(tr.blocks().size());
  UnionFind uf(nb);
  for (const auto& g : eigen_groups(tr, eig_tol))
    for (std::size_t i = 1; i < g.size(); ++i) uf.unite(g[0], g[i]);
  std::vector<int> block_of(tr.dim());
  for (int i = 0; i < nb; ++i)
    for (int j = 0; j < tr.blocks()[i].dim; ++j) block_of[tr.blocks()[i].offset + j] = i;
  if (D.size() > 0) {
    for (int j = 0; j < D.cols(); ++j) {
      std::vector<int> touched;
      for (int r = 0; r < D.rows(); ++r)
        if (D(r, j) != 0.0) touched.push_back(block_of[r]);
      if (touched.empty()) continue;
      for (int c = 0; c < C.cols(); ++c)
        if (C(j, c) != 0.0) touched.push_back(block_of[c]);
      for (std::size_t i = 1; i < touched.size(); ++i) uf.unite(touched[0], touched[i]);
    }
  }
  // the coupled spectra may land on other components' eigenvalues
  for (;;) {
    std::map<int, std::vector<int>> by_root;
    for (int i = 0; i < nb; ++i) by_root[uf.find(i)].push_back(i);
    std::vector<std::vector<int>> comps;
    std::vector<std::pair<std::complex<double>, int>> eigs;
    for (auto& [root, members] : by_root) {
      const int id = static_cast<int>(comps.size());
      comps.push_back(members);
      auto cs = coords_of(tr, members);
      Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(take(X, cs, cs), false).eigenvalues();
      for (int i = 0; i < ev.size(); ++i) eigs.push_back({std::complex<double>(ev(i).real(), std::abs(ev(i).imag())), id});
    }
    std::sort(eigs.begin(), eigs.end(),
              [](const auto& a, const auto& b) { return a.first.real() < b.first.real(); });
    bool merged = false;
    for (std::size_t i = 0; i < eigs.size(); ++i)
      for (std::size_t j = i + 1; j < eigs.size(); ++j) {
        double scale = std::max(1.0, std::abs(eigs[i].first));
        if (eigs[j].first.real() - eigs[i].first.real() > 1e-7 * scale) break;
        if (eigs[i].second != eigs[j].second && std::abs(eigs[i].first - eigs[j].first) <= 1e-7 * scale &&
            uf.find(comps[eigs[i].second][0]) != uf.find(comps[eigs[j].second][0])) {
          uf.unite(comps[eigs[i].second][0], comps[eigs[j].second][0]);
          merged = true;
        }
      }
    if (!merged) return comps;
  }
}

// largest X-invariant subspace of ker Q, assembled component by component
Eigen::MatrixXd invariant_in_kernel(const Truncation& tr, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Q,
                                    const std::vector<std::vector<int>>& comps, double zero_tol, double rel_tol) {
  std::vector<Eigen::VectorXd> cols;
  for (const auto& comp : comps) {
    auto cs = coords_of(tr, comp);
    Eigen::MatrixXd qc = take_cols(Q, cs);
    const bool annihilated = qc.size() == 0 || qc.cwiseAbs().maxCoeff() <= zero_tol;
    Eigen::MatrixXd inv;
    if (annihilated) {
      inv = Eigen::MatrixXd::Identity(cs.size(), cs.size());
    } else if (comp.size() == 1 && simple_block(tr, comp[0]) && irreducible_block(take(X, cs, cs))) {
      continue;  // only 0 and the whole block are invariant
    } else {
      inv = unobservable_dense(take(X, cs, cs), qc, zero_tol, rel_tol);
    }
    for (int j = 0; j < inv.cols(); ++j) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(tr.dim());
      for (std::size_t i = 0; i < cs.size(); ++i) v(cs[i]) = inv(i, j);
      cols.push_back(v);
    }
  }
  Eigen::MatrixXd out(tr.dim(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = cols[j];
  return out;
}

// c_j has no data on family f past the window
bool no_data_beyond(const RieszSpectralSystem& sys, const Truncation& tr, int j, int f) {
  const SpectralVector& c = sys.C[j];
  for (const auto& t : c.tail)
    if (t.family == f && t.c.norm() > 0) return false;
  return c.max_index(f) <= tr.last_index(f);
}

SpectralVector combine(const std::vector<SpectralVector>& L, const Eigen::VectorXd& z) {
  SpectralVector out;
  for (std::size_t i = 0; i < L.size(); ++i)
    if (z(i) != 0.0) out += L[i] * z(i);
  return out;
}

bool has_active_tail(const SpectralVector& v, double scale) {
  for (const auto& t : v.tail)
    if (t.c.norm() > 1e-12 * std::max(1.0, scale)) return true;
  return false;
}

double max_dist(const Eigen::MatrixXd& basis_q, const Eigen::MatrixXd& vs, const Eigen::MatrixXd* scale_by) {
  double worst = 0.0;
  for (int j = 0; j < vs.cols(); ++j) {
    Eigen::VectorXd r = vs.col(j);
    if (basis_q.cols() > 0) r -= basis_q * (basis_q.transpose() * r);
    double s = 1.0 + (scale_by ? scale_by->col(j).norm() : 0.0);
    worst = std::max(worst, r.norm() / s);
  }
  return worst;
}

StructuredSubspace with_tails(StructuredSubspace s, const std::vector<TailStatus>& tails) {
  const Truncation& tr = s.truncation();
  for (int f = 0; f < tr.family_count(); ++f) {
    if (tails[f] != TailStatus::Included) continue;
    IndexSet beyond = IndexSet::at_least(tr.last_index(f) + 1, tr.family(f).k_min);
    s.set_selection(f, s.selection(f).unite(beyond));
  }
  return s;
}

}  // namespace

const char* to_string(TailStatus s) {
  switch (s) {
    case TailStatus::Included: return "INCLUDED";
    case TailStatus::Excluded: return "EXCLUDED";
    case TailStatus::Unverified: return "UNVERIFIED";
  }
  return "?";
}

Model make_model(const RieszSpectralSystem& sys, int order, const Tolerances& tol) {
  Model m;
  m.owned = std::make_shared<const RieszSpectralSystem>(sys);
  m.sys = m.owned.get();
  m.tr = std::make_shared<Truncation>(*m.sys, order);
  m.A = m.tr->A();
  m.C = m.tr->C(*m.sys);
  m.tol = tol;
  return m;
}

Eigen::MatrixXd largest_invariant_subspace(const Eigen::MatrixXd& X, const Eigen::MatrixXd& W, double rel_tol) {
  Eigen::MatrixXd q = orth(W, rel_tol);
  const double scale = std::max(1.0, spectral_norm(X));
  while (q.cols() > 0) {
    Eigen::MatrixXd xq = X * q;
    Eigen::MatrixXd r = xq - q * (q.transpose() * xq);
    Eigen::MatrixXd z = null_abs(r, rel_tol * scale);
    if (z.cols() == q.cols()) break;
    q = orth(q * z, rel_tol);
  }
  return q;
}

Eigen::MatrixXd unobservable_dense(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Q, double zero_tol,
                                   double rel_tol) {
  Eigen::MatrixXd v0 = null_abs(Q, zero_tol);
  return largest_invariant_subspace(X, v0, rel_tol);
}

// ---------------------------------------------------------------- N

UnobservableResult unobservable_subspace(const Model& m, const std::vector<int>& rows) {
  const Truncation& tr = *m.tr;
  const RieszSpectralSystem& sys = *m.sys;
  Eigen::MatrixXd q(static_cast<int>(rows.size()), tr.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) q.row(i) = m.C.row(rows[i]);

  std::vector<TailStatus> tails(tr.family_count(), TailStatus::Excluded);
  std::vector<bool> declared(tr.family_count(), false);
  for (int f = 0; f < tr.family_count(); ++f) {
    bool all = true;
    for (int r : rows) all = all && sys.declared_orthogonal(r, f);
    declared[f] = all;
  }
  // declarations win but must not be contradicted by the window
  for (const auto& b : tr.blocks()) {
    if (!declared[b.family] || q.rows() == 0) continue;
    double worst = q.middleCols(b.offset, b.dim).cwiseAbs().maxCoeff();
    if (worst > m.tol.ip)
      throw Error(ErrorCode::Validation, "declared orthogonality of family " + tr.family(b.family).label +
                                             " contradicted at k=" + std::to_string(b.k));
  }

  std::vector<std::vector<int>> comps = eigen_groups(tr, m.tol.eig);
  Eigen::MatrixXd basis = invariant_in_kernel(tr, m.A, q, comps, m.tol.ip, m.tol.rank);
  StructuredSubspace n = StructuredSubspace::from_dense(m.tr, basis, m.tol);

  for (int f = 0; f < tr.family_count(); ++f) {
    if (!tr.family(f).infinite()) continue;
    bool data_free = true;
    for (int r : rows) data_free = data_free && (declared[f] || no_data_beyond(sys, tr, r, f));
    if (declared[f] || data_free) {
      tails[f] = TailStatus::Included;
      continue;
    }
    bool any = false;
    for (int bi = 0; bi < static_cast<int>(tr.blocks().size()); ++bi)
      if (tr.blocks()[bi].family == f && n.block_selected(bi)) any = true;
    tails[f] = any ? TailStatus::Unverified : TailStatus::Excluded;
  }
  UnobservableResult res{with_tails(n, tails), tails, {}};
  for (int f = 0; f < tr.family_count(); ++f)
    if (tails[f] == TailStatus::Unverified) res.unverified.push_back(f);
  return res;
}

UnobservableResult unobservable_subspace(const Model& m) {
  std::vector<int> rows(m.q());
  std::iota(rows.begin(), rows.end(), 0);
  return unobservable_subspace(m, rows);
}

AUnobservableResult a_unobservable_subspace(const Model& m, int n_max) {
  if (n_max < 1) throw Error(ErrorCode::Validation, "n_max must be >= 1");
  // ker(C A^n), n <= n_max, as the complement of the Krylov space of A^T on C^T;
  // block Arnoldi with two orthogonalization passes
  const int n = m.n();
  const double scale = std::max(1.0, spectral_norm(m.A));
  Eigen::MatrixXd q = orth(m.C.transpose(), m.tol.rank);
  Eigen::MatrixXd last = q;
  AUnobservableResult res{StructuredSubspace::zero(m.tr), 0, false, false};
  for (int step = 1; step <= n_max; ++step) {
    res.steps = step;
    if (last.cols() == 0 || q.cols() == n) {
      res.converged = true;
      break;
    }
    Eigen::MatrixXd w = m.A.transpose() * last;
    for (int pass = 0; pass < 2; ++pass) w -= q * (q.transpose() * w);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w, Eigen::ComputeThinU);
    int r = 0;
    while (r < svd.singularValues().size() && svd.singularValues()(r) > m.tol.rank * scale) ++r;
    last = svd.matrixU().leftCols(r);
    last -= q * (q.transpose() * last);
    last = orth(last, m.tol.rank);
    Eigen::MatrixXd grown(n, q.cols() + last.cols());
    grown << q, last;
    q = grown;
    if (last.cols() == 0) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged)
    throw Error(ErrorCode::NoConvergence, "ker(C A^n) still shrinking after " + std::to_string(n_max) + " steps");
  res.N_A = StructuredSubspace::from_dense(m.tr, complement_basis(q, n), m.tol);
  UnobservableResult un = unobservable_subspace(m);
  res.agrees_with_N = projector_distance(un.N.basis(), res.N_A.basis()) <= 1e-8;
  return res;
}

// ---------------------------------------------------------------- W*

StructuredSubspace compute_W_ell(const Model& m, const std::vector<SpectralVector>& L_N) {
  const Truncation& tr = *m.tr;
  StructuredSubspace w(m.tr);
  if (L_N.empty()) return w;
  Eigen::MatrixXd ld = tr.columns(L_N);
  std::vector<IndexSet> sel;
  for (int f = 0; f < tr.family_count(); ++f) sel.push_back(IndexSet::none(tr.family(f).k_min));
  std::vector<Eigen::VectorXd> extra;
  for (const auto& g : eigen_groups(tr, m.tol.eig)) {
    const bool simple = g.size() == 1 && simple_block(tr, g[0]);
    auto cs = coords_of(tr, g);
    if (simple) {
      const auto& b = tr.blocks()[g[0]];
      for (int j = 0; j < ld.cols(); ++j) {
        double scale = std::max(1.0, ld.col(j).norm());
        if (ld.col(j).segment(b.offset, b.dim).cwiseAbs().maxCoeff() > m.tol.rank * scale) {
          sel[b.family] = sel[b.family].unite(IndexSet::finite({b.k}, tr.family(b.family).k_min));
          break;
        }
      }
      continue;
    }
    // Krylov closure of the projections inside the repeated group
    Eigen::MatrixXd ag = take(m.A, cs, cs);
    std::complex<double> lam = tr.blocks()[g[0]].lambda;
    Eigen::MatrixXd shifted = ag - lam.real() * Eigen::MatrixXd::Identity(cs.size(), cs.size());
    shifted /= std::max(1.0, std::abs(lam.imag()));
    Eigen::MatrixXd start(cs.size(), ld.cols());
    for (std::size_t i = 0; i < cs.size(); ++i) start.row(i) = ld.row(cs[i]);
    Eigen::MatrixXd kry = start;
    Eigen::MatrixXd cur = start;
    for (std::size_t p = 1; p < cs.size(); ++p) {
      cur = shifted * cur;
      Eigen::MatrixXd next(kry.rows(), kry.cols() + cur.cols());
      next << kry, cur;
      kry = next;
    }
    Eigen::MatrixXd k = orth(kry, m.tol.rank);
    for (int j = 0; j < k.cols(); ++j) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(tr.dim());
      for (std::size_t i = 0; i < cs.size(); ++i) v(cs[i]) = k(i, j);
      extra.push_back(v);
    }
  }
  // tail rules put every later index of their family into the span
  for (const auto& v : L_N)
    for (const auto& t : v.tail) {
      if (t.c.norm() <= 1e-12 || !tr.family(t.family).infinite()) continue;
      int from = std::max(t.k0, tr.last_index(t.family) + 1);
      sel[t.family] = sel[t.family].unite(IndexSet::at_least(from, tr.family(t.family).k_min));
    }
  w = StructuredSubspace::from_selections(m.tr, sel);
  Eigen::MatrixXd cols(tr.dim(), extra.size());
  for (std::size_t j = 0; j < extra.size(); ++j) cols.col(j) = extra[j];
  w.set_finite(cols, m.tol);
  return w;
}

ConditionedInvariantResult min_conditioned_invariant(const Model& m, const std::vector<SpectralVector>& L) {
  const Truncation& tr = *m.tr;
  auto z0 = StructuredSubspace::zero(m.tr);
  ConditionedInvariantResult res{z0, z0, z0, z0, z0, z0, 0, 0, false, {}};
  if (L.empty()) {
    res.converged = true;
    return res;
  }
  Eigen::MatrixXd ld = tr.columns(L);
  const double lscale = std::max(1.0, ld.norm());
  UnobservableResult n = unobservable_subspace(m);
  Eigen::MatrixXd nb = n.N.basis();

  // L_N = L cap N as combinations of the signatures
  Eigen::MatrixXd resid = ld - nb * (nb.transpose() * ld);
  Eigen::MatrixXd zn = null_abs(resid, m.tol.rank * lscale);
  Eigen::MatrixXd ln_dense = orth(ld * zn, m.tol.rank);
  std::vector<SpectralVector> ln_vecs;
  for (int j = 0; j < zn.cols(); ++j) ln_vecs.push_back(combine(L, zn.col(j)));
  res.L_N = StructuredSubspace::from_dense(m.tr, ln_dense, m.tol);

  // L_{N-perp}: complement of L_N inside L
  Eigen::MatrixXd lq = orth(ld, m.tol.rank);
  Eigen::MatrixXd lperp = orth(lq - ln_dense * (ln_dense.transpose() * lq), m.tol.rank);

  // domain: vectors of L_{N-perp} cap ker C get A applied; tails are not in dom A^inf
  {
    Eigen::MatrixXd zk = null_abs(m.C * ld, m.tol.ip * lscale);
    Eigen::MatrixXd vk = ld * zk;
    Eigen::MatrixXd proj = vk - ln_dense * (ln_dense.transpose() * vk);
    if (proj.cols() > 0 && proj.norm() > m.tol.rank * lscale) {
      Eigen::MatrixXd comb = ld.completeOrthogonalDecomposition().solve(orth(proj, m.tol.rank));
      for (int j = 0; j < comb.cols(); ++j) {
        SpectralVector v = combine(L, comb.col(j));
        if (has_active_tail(v, comb.col(j).cwiseAbs().maxCoeff()))
          throw Error(ErrorCode::DomainViolation,
                      "a vector of L cap ker C carries a c/k^p tail and is not in dom(A^inf)");
      }
    }
  }

  res.dim_bound = static_cast<int>(lq.cols()) * (m.q() + 1);
  Eigen::MatrixXd z = lperp;
  res.z_dims.push_back(static_cast<int>(z.cols()));
  const int cap = std::max(res.dim_bound, m.n()) + 1;
  for (int it = 1; it <= cap; ++it) {
    Eigen::MatrixXd v = z.cols() > 0 ? Eigen::MatrixXd(z * null_abs(m.C * z, m.tol.ip)) : Eigen::MatrixXd(m.n(), 0);
    Eigen::MatrixXd av = m.A * v;
    for (int j = 0; j < av.cols(); ++j) {
      double nj = av.col(j).norm();
      if (nj > 0) av.col(j) /= nj;
    }
    Eigen::MatrixXd stacked(m.n(), lperp.cols() + av.cols());
    stacked << lperp, av;
    Eigen::MatrixXd znew = orth(stacked, m.tol.rank);
    res.iterations = it;
    res.z_dims.push_back(static_cast<int>(znew.cols()));
    bool stationary = znew.cols() == z.cols() && projector_distance(znew, z) <= m.tol.stationary;
    z = znew;
    if (stationary) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) throw Error(ErrorCode::NoConvergence, "Z_k recursion did not become stationary");

  res.Z_star = StructuredSubspace::from_dense(m.tr, z, m.tol);
  res.W_ell = compute_W_ell(m, ln_vecs);
  res.W_star = sum(res.W_ell, res.Z_star, m.tol);
  Eigen::MatrixXd phi = largest_invariant_subspace(m.A, res.W_star.basis(), m.tol.rank);
  res.W_phi = sum(res.W_ell, StructuredSubspace::from_dense(m.tr, phi, m.tol), m.tol);
  res.W_f = orth_complement_within(res.W_phi, res.W_star, m.tol);
  return res;
}

// ---------------------------------------------------------------- friend

FriendOperator friend_operator(const Model& m, const StructuredSubspace& W_star, const StructuredSubspace& W_phi,
                               const StructuredSubspace& W_f) {
  (void)W_f;
  FriendOperator fo;
  fo.befriends = "W*";
  Eigen::MatrixXd wb = W_star.basis();
  Eigen::MatrixXd wphi = W_phi.basis();
  fo.D = Eigen::MatrixXd::Zero(m.n(), m.q());
  if (wb.cols() == 0) {
    fo.certified = true;
    return fo;
  }
  Eigen::MatrixXd wk = wb * null_abs(m.C * wb, m.tol.ip);
  Eigen::MatrixXd kstack(m.n(), wphi.cols() + wk.cols());
  kstack << wphi, wk;
  Eigen::MatrixXd k = orth(kstack, m.tol.rank);
  Eigen::MatrixXd wt = orth(wb - k * (k.transpose() * wb), m.tol.rank);

  if (wt.cols() > 0) {
    Eigen::MatrixXd cw = m.C * wt;
    if (numerical_rank(cw, m.tol.rank) < wt.cols())
      throw Error(ErrorCode::SingularCw, "C is not injective on the transversal part of W*");
    Eigen::MatrixXd cphi = m.C * wphi;
    Eigen::MatrixXd yphi = (cphi.size() == 0 || cphi.cwiseAbs().maxCoeff() <= m.tol.ip)
                               ? Eigen::MatrixXd(m.q(), 0)
                               : orth(cphi, m.tol.rank);
    Eigen::MatrixXd x(m.q(), cw.cols() + yphi.cols());
    x << cw, yphi;
    if (numerical_rank(x, m.tol.rank) < x.cols())
      throw Error(ErrorCode::SingularCw, "C(W_t) meets C(W_phi); W decomposition is inconsistent");
    Eigen::MatrixXd awt = m.A * wt;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m.n(), x.cols());
    rhs.leftCols(wt.cols()) = -(awt - wb * (wb.transpose() * awt));
    fo.D = rhs * x.completeOrthogonalDecomposition().pseudoInverse();
  }

  Eigen::MatrixXd aw = m.A * wb;
  Eigen::MatrixXd closed = aw + fo.D * (m.C * wb);
  fo.invariance_residual = max_dist(wb, closed, &aw);
  fo.dc_wphi = 0.0;
  if (wphi.cols() > 0) fo.dc_wphi = (fo.D * (m.C * wphi)).colwise().norm().maxCoeff();
  fo.certified = fo.invariance_residual <= 1e-8 && fo.dc_wphi <= 1e-9;
  return fo;
}

// ---------------------------------------------------------------- S*

UnobservabilityResult min_unobservability_subspace(const Model& m, const std::vector<SpectralVector>& L) {
  const Truncation& tr = *m.tr;
  const RieszSpectralSystem& sys = *m.sys;
  ConditionedInvariantResult ci = min_conditioned_invariant(m, L);
  UnobservableResult n = unobservable_subspace(m);

  UnobservabilityResult res{StructuredSubspace::zero(m.tr), ci.W_star, ci.W_phi, ci.W_f,
                            StructuredSubspace::zero(m.tr), n.N, {}, {}, {}, {}, false, ci.iterations};
  res.D = friend_operator(m, ci.W_star, ci.W_phi, ci.W_f);

  // H: ker(HC) = closure(W* + ker C)
  Eigen::MatrixXd cw = m.C * ci.W_star.basis();
  Eigen::MatrixXd y = (cw.size() == 0 || cw.cwiseAbs().maxCoeff() <= m.tol.ip) ? Eigen::MatrixXd(m.q(), 0)
                                                                             : orth(cw, m.tol.rank);
  Eigen::MatrixXd rc = orth(m.C, m.tol.rank);
  Eigen::MatrixXd hc = orth(rc - y * (y.transpose() * rc), m.tol.rank);
  res.H = hc.transpose();
  for (int i = 0; i < res.H.rows(); ++i) {
    for (int j = 0; j < res.H.cols(); ++j)
      if (std::abs(res.H(i, j)) > 1e-12) {
        if (res.H(i, j) < 0) res.H.row(i) *= -1.0;
        break;
      }
  }
  res.H = res.H.unaryExpr([](double h) { return std::abs(h) < 1e-14 ? 0.0 : h; });
  Eigen::MatrixXd q = res.H * m.C;
  Eigen::MatrixXd x = m.A + res.D.D * m.C;

  auto comps = components(tr, x, res.D.D, m.C, m.tol.eig);
  Eigen::MatrixXd sb = invariant_in_kernel(tr, x, q, comps, m.tol.ip, m.tol.rank);
  StructuredSubspace s = StructuredSubspace::from_dense(m.tr, sb, m.tol);

  // tails beyond the window
  res.tails.assign(tr.family_count(), TailStatus::Excluded);
  StructuredSubspace base = sum(ci.W_phi, n.N, m.tol);
  for (int f = 0; f < tr.family_count(); ++f) {
    if (!tr.family(f).infinite()) continue;
    if (base.selection(f).tail()) {
      res.tails[f] = TailStatus::Included;
      continue;
    }
    bool structural = true;
    for (int i = 0; i < res.H.rows(); ++i)
      for (int j = 0; j < m.q(); ++j)
        if (std::abs(res.H(i, j)) > 1e-12 && !sys.declared_orthogonal(j, f) && !no_data_beyond(sys, tr, j, f))
          structural = false;
    if (structural) {
      res.tails[f] = TailStatus::Included;
      continue;
    }
    bool any = false;
    for (int bi = 0; bi < static_cast<int>(tr.blocks().size()); ++bi)
      if (tr.blocks()[bi].family == f && s.block_selected(bi) && !base.block_selected(bi)) any = true;
    bool n_unverified = std::find(n.unverified.begin(), n.unverified.end(), f) != n.unverified.end();
    res.tails[f] = (any || n_unverified) ? TailStatus::Unverified : TailStatus::Excluded;
  }
  s = with_tails(s, res.tails);
  res.S_star = s;
  for (int f = 0; f < tr.family_count(); ++f)
    if (res.tails[f] == TailStatus::Unverified) res.unverified.push_back(f);

  res.W_phi_f = orth_complement_within(base, s, m.tol);
  Eigen::MatrixXd sbasis = s.basis();
  res.s_in_ker_hc = sbasis.cols() > 0 && q.rows() > 0 ? (q * sbasis).cwiseAbs().maxCoeff() : 0.0;
  res.contains_w = contains(s, ci.W_star, m.tol);

  // D = 0 admissible when (HC, A) has the same unobservable subspace
  auto plain = eigen_groups(tr, m.tol.eig);
  Eigen::MatrixXd s0 = invariant_in_kernel(tr, m.A, q, plain, m.tol.ip, m.tol.rank);
  res.zero_friend_admissible = projector_distance(orth(s0, m.tol.rank), sbasis) <= 1e-8;
  return res;
}

// ---------------------------------------------------------------- verdicts

InvarianceVerdict is_T_conditioned_invariant(const Model& m, const StructuredSubspace& W) {
  InvarianceVerdict v{false, StructuredSubspace::zero(m.tr), StructuredSubspace::zero(m.tr), 0.0};
  Eigen::MatrixXd wb = W.basis();
  if (wb.cols() > 0) {
    Eigen::MatrixXd wk = wb * null_abs(m.C * wb, m.tol.ip);
    Eigen::MatrixXd awk = m.A * wk;
    v.residual = max_dist(wb, awk, &awk);
  }
  StructuredSubspace structural = StructuredSubspace::from_selections(m.tr, W.selections());
  Eigen::MatrixXd phi = largest_invariant_subspace(m.A, wb, m.tol.rank);
  v.W_phi = sum(structural, StructuredSubspace::from_dense(m.tr, phi, m.tol), m.tol);
  v.W_f = orth_complement_within(v.W_phi, W, m.tol);
  v.invariant = v.residual <= 1e-8;
  return v;
}

InvarianceVerdict is_controlled_invariant_dual(const Model& m, const StructuredSubspace& V) {
  StructuredSubspace vperp = orth_complement_within(V, StructuredSubspace::whole(m.tr), m.tol);
  Model dual = m;
  dual.A = m.A.transpose();
  Eigen::MatrixXd b = m.tr->B(*m.sys);
  dual.C = b.transpose();
  return is_T_conditioned_invariant(dual, vperp);
}

SolvabilityReport check_fdi_necessary(const Model& m, int fault) {
  const RieszSpectralSystem& sys = *m.sys;
  if (fault < 0 || fault >= sys.fault_count())
    throw Error(ErrorCode::Validation, "fault index out of range");
  std::vector<SpectralVector> others;
  for (int j = 0; j < sys.fault_count(); ++j)
    if (j != fault) others.push_back(sys.faults[j]);
  SolvabilityReport rep{fault, 0, false, min_unobservability_subspace(m, others)};
  Eigen::VectorXd li = m.tr->dense(sys.faults[fault]);
  double rel = li.norm() > 0 ? rep.U.S_star.distance(li) / li.norm() : 0.0;
  rep.intersection_dim = (li.norm() == 0.0 || rel <= 1e-8) ? 1 : 0;
  if (li.norm() == 0.0) rep.intersection_dim = 0;
  rep.necessary_ok = rep.intersection_dim == 0 && li.norm() > 0.0;
  return rep;
}

}  // namespace rsfdi

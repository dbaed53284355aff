#include <cmath>
#include <random>

#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "rsfdi/errors.hpp"
#include "rsfdi/example.hpp"
#include "rsfdi/geometry.hpp"
#include "support.hpp"

using namespace rsfdi;
using namespace rsfdi::testing;

namespace {

const double kPi = boost::math::constants::pi<double>();

// indices k <= n where the window average over [a, b] of sin(kz) vanishes,
// decided by quadrature rather than the closed form
std::set<int> quadrature_zeros(double a, double b, int n) {
  std::set<int> out;
  for (int k = 1; k <= n; ++k) {
    auto f = [k](double z) { return std::sin(k * z); };
    double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 6, 1e-12);
    if (std::abs(v) < 1e-10) out.insert(k);
  }
  return out;
}

SpectralVector mode(int family, int k, double c = 1.0) {
  SpectralVector v;
  v.add(family, k, Eigen::VectorXd::Constant(1, c));
  return v;
}

RieszSpectralSystem first_output_only() {
  RieszSpectralSystem sys = reaction_diffusion_system();
  sys.C.resize(1);
  sys.orthogonality = {OrthogonalityFact{0, 1}};
  return sys;
}

Eigen::MatrixXd observability_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C) {
  const int n = static_cast<int>(A.rows());
  Eigen::MatrixXd obs(C.rows() * n, n);
  Eigen::MatrixXd blk = C;
  for (int i = 0; i < n; ++i) {
    obs.middleRows(i * C.rows(), C.rows()) = blk;
    blk = blk * A;
  }
  return o_null(obs);
}

// PBH on a diagonal A: per eigenvalue, the part of its eigenspace inside ker C
Eigen::MatrixXd pbh_kernel_diagonal(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C) {
  const int n = static_cast<int>(A.rows());
  EXPECT_LE((A - Eigen::MatrixXd(A.diagonal().asDiagonal())).norm(), 0.0);
  std::vector<bool> seen(n, false);
  std::vector<Eigen::VectorXd> cols;
  for (int i = 0; i < n; ++i) {
    if (seen[i]) continue;
    std::vector<int> grp;
    for (int j = i; j < n; ++j)
      if (!seen[j] && A(j, j) == A(i, i)) {
        grp.push_back(j);
        seen[j] = true;
      }
    Eigen::MatrixXd cg(C.rows(), grp.size());
    for (size_t g = 0; g < grp.size(); ++g) cg.col(g) = C.col(grp[g]);
    Eigen::MatrixXd z = o_null(cg);
    for (int k = 0; k < z.cols(); ++k) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
      for (size_t g = 0; g < grp.size(); ++g) v(grp[g]) = z(g, k);
      cols.push_back(v);
    }
  }
  Eigen::MatrixXd out(n, cols.size());
  for (size_t k = 0; k < cols.size(); ++k) out.col(k) = cols[k];
  return out;
}

bool has_jordan(const RieszSpectralSystem& sys) {
  for (const auto& f : sys.families)
    if (!f.jordan.empty()) return true;
  return false;
}

// adjoint system: conjugated rules, B as output functionals
RieszSpectralSystem adjoint(const RieszSpectralSystem& sys) {
  RieszSpectralSystem d = sys;
  for (auto& f : d.families)
    for (auto& c : f.rule.im) c = -c;
  d.C = sys.B;
  d.B = sys.C;
  return d;
}

}  // namespace

TEST(Unobservable, FirstOutputOnly) {
  RieszSpectralSystem sys = first_output_only();
  Model m = make_model(sys, 200);
  UnobservableResult n = unobservable_subspace(m);
  EXPECT_EQ(n.N.selection(1), IndexSet::all());
  EXPECT_EQ(n.tails[1], TailStatus::Included);
  // the window average over [0, pi/4] also misses every eighth mode of family 1
  EXPECT_EQ(n.N.selection(0), IndexSet::finite(quadrature_zeros(0.0, kPi / 4.0, 200)));
  EXPECT_EQ(n.tails[0], TailStatus::Unverified);
  EXPECT_FALSE(n.verified());
}

TEST(Unobservable, BothOutputs) {
  Model m = make_model(reaction_diffusion_system(), 200);
  UnobservableResult n = unobservable_subspace(m);
  std::set<int> z1 = quadrature_zeros(0.0, kPi / 4.0, 200);
  std::set<int> z2 = quadrature_zeros(3.0 * kPi / 4.0, kPi, 200);
  EXPECT_EQ(n.N.selection(0), IndexSet::finite(z1));
  EXPECT_EQ(n.N.selection(1), IndexSet::finite(z2));
  EXPECT_EQ(z1.size(), 25u);
  EXPECT_EQ(z1, z2);
  EXPECT_EQ(n.N.dim_finite_part(), 0);
}

TEST(Unobservable, ZeroOutputGivesWholeSpace) {
  std::mt19937_64 rng(1);
  RandomCase rc = random_case(rng, 6, 1, 1);
  for (auto& c : rc.sys.C) c = SpectralVector{};
  Model m = make_model(rc.sys, 1);
  EXPECT_EQ(unobservable_subspace(m).N.window_dim(), rc.n);
}

TEST(Unobservable, DeclaredFactContradictedIsAnError) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  sys.orthogonality.push_back(OrthogonalityFact{0, 0});
  Model m = make_model(sys, 20);
  try {
    unobservable_subspace(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Validation);
  }
}

TEST(AUnobservable, Examples) {
  Model m = make_model(first_output_only(), 50);
  AUnobservableResult a = a_unobservable_subspace(m, 2 * m.n());
  EXPECT_TRUE(a.converged);
  EXPECT_TRUE(a.agrees_with_N);
  Eigen::MatrixXd c = m.C;
  EXPECT_LE(o_dist(a.N_A.basis(), pbh_kernel_diagonal(m.A, c)), 1e-8);
  EXPECT_EQ(a.N_A.window_dim(), 56);

  // three distinct simple modes, one generic output
  RieszSpectralSystem s3;
  for (int i = 0; i < 3; ++i) {
    ModeFamily f;
    f.label = "m" + std::to_string(i);
    f.rule = EigenRule::poly({-1.0 - i});
    f.count = 1;
    s3.families.push_back(f);
  }
  SpectralVector c3;
  for (int i = 0; i < 3; ++i) c3.add(i, 1, Eigen::VectorXd::Constant(1, 0.5 + i));
  s3.C = {c3};
  Model m3 = make_model(s3, 1);
  AUnobservableResult a3 = a_unobservable_subspace(m3, 3);
  EXPECT_TRUE(a3.N_A.is_zero());
  EXPECT_LE(a3.steps, 3);
  EXPECT_EQ(observability_kernel(m3.A, m3.C).cols(), 0);
  try {
    a_unobservable_subspace(m3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConvergence);
  }

  // A = 0: powers collapse, N_A = ker C
  RieszSpectralSystem s0 = s3;
  for (auto& f : s0.families) f.rule = EigenRule::poly({0.0});
  Model m0 = make_model(s0, 1);
  AUnobservableResult a0 = a_unobservable_subspace(m0, 3);
  EXPECT_LE(o_dist(a0.N_A.basis(), o_null(m0.C)), 1e-10);
  EXPECT_EQ(a0.N_A.window_dim(), 2);
}

TEST(ConditionedInvariant, ReactionDiffusion) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  Model m = make_model(sys, 200);
  ConditionedInvariantResult ci = min_conditioned_invariant(m, {sys.faults[1]});
  Eigen::MatrixXd l2 = m.tr->dense(sys.faults[1]);
  EXPECT_EQ(ci.W_star.window_dim(), 1);
  EXPECT_LE(o_dist(ci.W_star.basis(), o_orth(l2)), 1e-10);
  EXPECT_LE(o_dist(ci.Z_star.basis(), o_orth(l2)), 1e-10);
  EXPECT_TRUE(ci.W_ell.is_zero());
  EXPECT_LE(ci.iterations, ci.dim_bound);
  EXPECT_TRUE(ci.converged);
}

TEST(ConditionedInvariant, InsideUnobservableSubspace) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  Model m = make_model(sys, 50);
  ConditionedInvariantResult ci = min_conditioned_invariant(m, {mode(0, 8)});
  EXPECT_TRUE(ci.Z_star.is_zero());
  EXPECT_LE(projector_distance(ci.W_star, ci.W_ell), 1e-12);
  EXPECT_EQ(ci.W_star.selection(0), IndexSet::finite({8}));
}

TEST(WEll, Examples) {
  Model m = make_model(first_output_only(), 30);
  EXPECT_TRUE(compute_W_ell(m, {}).is_zero());
  EXPECT_TRUE(compute_W_ell(m, {SpectralVector{}}).is_zero());

  SpectralVector v = mode(1, 3) + mode(1, 9);
  StructuredSubspace w = compute_W_ell(m, {v});
  EXPECT_EQ(w.selection(1), IndexSet::finite({3, 9}));
  EXPECT_TRUE(w.selection(0).empty());
  EXPECT_EQ(w.dim_finite_part(), 0);

  SpectralVector t;
  t.tail.push_back(TailTerm{1, Eigen::VectorXd::Ones(1), 2.0, 6});
  StructuredSubspace wt = compute_W_ell(m, {t});
  EXPECT_EQ(wt.selection(1), IndexSet::at_least(6));
  // support scan oracle: the dense truncation has exactly the support k >= 6
  Eigen::VectorXd d = m.tr->dense(t);
  for (const auto& b : m.tr->blocks())
    if (b.family == 1) EXPECT_EQ(wt.selection(1).contains(b.k), d(b.offset) != 0.0);
}

TEST(Friend, ReactionDiffusion) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  Model m = make_model(sys, 200);
  ConditionedInvariantResult ci = min_conditioned_invariant(m, {sys.faults[1]});
  FriendOperator d = friend_operator(m, ci.W_star, ci.W_phi, ci.W_f);
  EXPECT_TRUE(d.certified);
  EXPECT_LE(d.invariance_residual, 1e-8);
  EXPECT_LE(d.dc_wphi, 1e-9);
  // only the second output sees W*, so only that column is used
  EXPECT_EQ(d.D.col(0).norm(), 0.0);

  UnobservabilityResult u = min_unobservability_subspace(m, {sys.faults[1]});
  EXPECT_TRUE(u.zero_friend_admissible);
}

TEST(Friend, KernelSubspaceNeedsNoInjection) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  Model m = make_model(sys, 50);
  ConditionedInvariantResult ci = min_conditioned_invariant(m, {mode(0, 16)});
  FriendOperator d = friend_operator(m, ci.W_star, ci.W_phi, ci.W_f);
  EXPECT_EQ(d.D.norm(), 0.0);
  EXPECT_TRUE(d.certified);
}

TEST(MinUnobservability, ReactionDiffusionFault1) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  Model m = make_model(sys, 200);
  UnobservabilityResult u = min_unobservability_subspace(m, {sys.faults[1]});
  EXPECT_EQ(u.S_star.selection(1), IndexSet::all());
  EXPECT_EQ(u.tails[1], TailStatus::Included);
  // every eighth mode of family 1 is unobservable from both outputs, so it sits in S* too
  EXPECT_EQ(u.S_star.selection(0), IndexSet::finite(quadrature_zeros(0.0, kPi / 4.0, 200)));
  EXPECT_EQ(u.tails[0], TailStatus::Unverified);
  ASSERT_EQ(u.H.rows(), 1);
  EXPECT_EQ(u.H(0, 0), 1.0);
  EXPECT_EQ(u.H(0, 1), 0.0);
  EXPECT_TRUE(u.D.certified);
  EXPECT_LE(u.s_in_ker_hc, 1e-9);
  EXPECT_TRUE(u.contains_w);
  Eigen::VectorXd l1 = m.tr->dense(sys.faults[0]);
  EXPECT_GT(u.S_star.distance(l1), 0.5 * l1.norm());
}

TEST(MinUnobservability, ReactionDiffusionFault2) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  Model m = make_model(sys, 200);
  UnobservabilityResult u = min_unobservability_subspace(m, {sys.faults[0]});
  EXPECT_EQ(u.S_star.selection(0), IndexSet::all());
  ASSERT_EQ(u.H.rows(), 1);
  EXPECT_EQ(u.H(0, 0), 0.0);
  EXPECT_EQ(u.H(0, 1), 1.0);
}

TEST(MinUnobservability, EmptyLGivesN) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    RandomCase rc = random_case(rng, 8, pick(rng, 1, 3), 1);
    Model m = make_model(rc.sys, 1);
    UnobservabilityResult u = min_unobservability_subspace(m, {});
    ASSERT_LE(projector_distance(u.S_star, unobservable_subspace(m).N), 1e-8);
    Eigen::MatrixXd hc = u.H * m.C;
    ASSERT_LE(o_dist(o_null(hc), o_null(m.C)), 1e-8);
    ASSERT_LE((u.H * u.H.transpose() - Eigen::MatrixXd::Identity(u.H.rows(), u.H.rows())).norm(), 1e-10);
  }
}

TEST(TConditioned, Examples) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  Model m = make_model(sys, 50);
  auto f2 = StructuredSubspace::family_all(m.tr, 1);
  InvarianceVerdict v = is_T_conditioned_invariant(m, f2);
  EXPECT_TRUE(v.invariant);
  EXPECT_TRUE(v.W_f.is_zero());

  // a vector of ker C mixing two modes of family 1
  double a = rd_c1_coefficient(2), b = -rd_c1_coefficient(1);
  SpectralVector w = mode(0, 1, a) + mode(0, 2, b);
  EXPECT_LE(std::abs((m.C * m.tr->dense(w))(0)), 1e-14);
  EXPECT_FALSE(is_T_conditioned_invariant(m, span(m.tr, {w})).invariant);

  std::mt19937_64 rng(17);
  for (int t = 0; t < 100; ++t) {
    RandomCase rc = random_case(rng, 8, pick(rng, 1, 3), 1);
    Model mr = make_model(rc.sys, 1);
    Eigen::MatrixXd wo = wonham_min_ci(rc.A, rc.C, rc.L);
    ASSERT_TRUE(is_T_conditioned_invariant(mr, StructuredSubspace::from_dense(mr.tr, wo)).invariant);
  }
}

TEST(ControlledInvariantDual, Examples) {
  std::mt19937_64 rng(23);
  RandomCase rc = random_case(rng, 6, 1, 1);
  Model m = make_model(rc.sys, 1);
  EXPECT_TRUE(is_controlled_invariant_dual(m, StructuredSubspace::whole(m.tr)).invariant);

  // single input, single output with <c, b> != 0: ker C is controlled invariant
  int hits = 0;
  for (int t = 0; t < 200 && hits < 30; ++t) {
    RandomCase s = random_case(rng, 7, 1, 1, 1);
    if (std::abs((s.C * s.B)(0, 0)) < 1e-3) continue;
    ++hits;
    Model ms = make_model(s.sys, 1);
    EXPECT_TRUE(is_controlled_invariant_dual(ms, StructuredSubspace::from_dense(ms.tr, o_null(s.C))).invariant);
  }
  EXPECT_GT(hits, 10);

  for (int t = 0; t < 100; ++t) {
    RandomCase s = random_case(rng, 8, 1, 1, pick(rng, 1, 2));
    Model ms = make_model(s.sys, 1);
    Eigen::MatrixXd k = o_orth(Eigen::MatrixXd::Random(s.n, pick(rng, 1, s.n)));
    Eigen::MatrixXd v = max_controlled_invariant(s.A, s.B, k);
    ASSERT_TRUE(is_controlled_invariant_dual(ms, StructuredSubspace::from_dense(ms.tr, v)).invariant);
    bool oracle = o_dist(o_orth(k), max_controlled_invariant(s.A, s.B, k)) <= 1e-8;
    ASSERT_EQ(is_controlled_invariant_dual(ms, StructuredSubspace::from_dense(ms.tr, k)).invariant, oracle);
  }
}

TEST(Necessary, Examples) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  Model m = make_model(sys, 200);
  for (int i = 0; i < 2; ++i) {
    SolvabilityReport r = check_fdi_necessary(m, i);
    EXPECT_TRUE(r.necessary_ok);
    EXPECT_EQ(r.intersection_dim, 0);
  }

  RieszSpectralSystem same = sys;
  same.faults[0] = same.faults[1];
  Model ms = make_model(same, 50);
  SolvabilityReport r = check_fdi_necessary(ms, 0);
  EXPECT_FALSE(r.necessary_ok);
  EXPECT_GE(r.intersection_dim, 1);

  std::mt19937_64 rng(29);
  int tried = 0;
  for (int t = 0; t < 400 && tried < 40; ++t) {
    RandomCase rc = random_case(rng, 8, pick(rng, 1, 2), 2);
    Eigen::MatrixXd nk = observability_kernel(rc.A, rc.C);
    if (nk.cols() == 0) continue;
    ++tried;
    Eigen::VectorXd l1 = 0.7 * rc.L.col(1) + nk * Eigen::VectorXd::Random(nk.cols());
    rc.sys.faults[0] = from_dense(rc.sys, l1);
    Model mr = make_model(rc.sys, 1);
    SolvabilityReport rr = check_fdi_necessary(mr, 0);
    ASSERT_FALSE(rr.necessary_ok);
    ASSERT_GE(rr.intersection_dim, 1);
  }
  EXPECT_GE(tried, 20);
}

TEST(GeometryProperties, OracleEquivalenceAndCertificates) {
  std::mt19937_64 rng(20260);
  int n_cases = 0;
  for (int t = 0; t < 400; ++t) {
    int q = pick(rng, 1, 3);
    RandomCase rc = random_case(rng, pick(rng, 2, 10), q, 2);
    Model m = make_model(rc.sys, 1);
    ConditionedInvariantResult ci = min_conditioned_invariant(m, {rc.sys.faults[1]});
    Eigen::MatrixXd w = wonham_min_ci(rc.A, rc.C, rc.L.col(1));
    ASSERT_LE(o_dist(ci.W_star.basis(), w), 1e-8) << "case " << t;
    ASSERT_LE(ci.iterations, ci.dim_bound);
    for (std::size_t k = 1; k < ci.z_dims.size(); ++k) ASSERT_GE(ci.z_dims[k], ci.z_dims[k - 1]);

    UnobservabilityResult u = min_unobservability_subspace(m, {rc.sys.faults[1]});
    ASSERT_LE(o_dist(u.S_star.basis(), min_unobservability_oracle(rc.A, rc.C, w)), 1e-8) << "case " << t;

    // friend certificate, measured independently
    Eigen::MatrixXd wb = u.W_star.basis();
    Eigen::MatrixXd x = rc.A + u.D.D * rc.C;
    for (int j = 0; j < wb.cols(); ++j) {
      Eigen::VectorXd xw = x * wb.col(j);
      double d = (xw - wb * (wb.transpose() * xw)).norm();
      ASSERT_LE(d, 1e-8 * (1.0 + (rc.A * wb.col(j)).norm()));
    }
    Eigen::MatrixXd phi = u.W_phi.basis();
    if (phi.cols()) ASSERT_LE((u.D.D * rc.C * phi).cwiseAbs().maxCoeff(), 1e-9);
    Eigen::MatrixXd sb = u.S_star.basis();
    if (sb.cols() && u.H.rows()) ASSERT_LE((u.H * rc.C * sb).cwiseAbs().maxCoeff(), 1e-9);

    ASSERT_TRUE(is_T_conditioned_invariant(m, u.S_star).invariant);
    ++n_cases;
  }
  EXPECT_EQ(n_cases, 400);
}

// a friend can split a complex pair into a real invariant line
TEST(GeometryProperties, FriendSplitsComplexPair) {
  std::mt19937_64 rng(120);
  int seen = 0;
  for (int t = 0; t < 400; ++t) {
    RandomCase rc = random_case(rng, 2, 2, 2);
    if (rc.n != 2 || rc.A(0, 1) == 0.0 || numerical_rank(rc.C, 1e-6) < 2) continue;
    Model m = make_model(rc.sys, 1);
    UnobservabilityResult u = min_unobservability_subspace(m, {rc.sys.faults[1]});
    ASSERT_EQ(u.S_star.window_dim(), 1);
    EXPECT_LE(o_dist(u.S_star.basis(), o_orth(rc.L.col(1))), 1e-10);
    ++seen;
  }
  EXPECT_GT(seen, 10);
}

TEST(GeometryProperties, DualityRoundTrip) {
  std::mt19937_64 rng(77);
  int checked = 0;
  for (int t = 0; t < 300; ++t) {
    RandomCase rc = random_case(rng, 7, 1, 1, pick(rng, 1, 2));
    if (has_jordan(rc.sys)) continue;
    Model m = make_model(rc.sys, 1);
    RieszSpectralSystem dual = adjoint(rc.sys);
    Model md = make_model(dual, 1);
    ASSERT_LE((md.A - rc.A.transpose()).norm(), 1e-14);
    Eigen::MatrixXd k = o_orth(Eigen::MatrixXd::Random(rc.n, pick(rng, 1, rc.n)));
    Eigen::MatrixXd v = pick(rng, 0, 1) ? max_controlled_invariant(rc.A, rc.B, k) : k;
    StructuredSubspace sv = StructuredSubspace::from_dense(m.tr, v);
    StructuredSubspace perp = orth_complement_within(sv, StructuredSubspace::whole(m.tr));
    bool direct = is_T_conditioned_invariant(md, StructuredSubspace::from_dense(md.tr, perp.basis())).invariant;
    ASSERT_EQ(is_controlled_invariant_dual(m, sv).invariant, direct);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

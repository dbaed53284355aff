#include <random>

#include <gtest/gtest.h>

#include "rsfdi/errors.hpp"
#include "rsfdi/example.hpp"
#include "rsfdi/subspace.hpp"
#include "support.hpp"

using namespace rsfdi;
using namespace rsfdi::testing;

namespace {

// n simple modes lambda_k = -k in one finite family
RieszSpectralSystem coords(int n) {
  RieszSpectralSystem sys;
  ModeFamily f;
  f.label = "x";
  f.rule = EigenRule::poly({0.0, -1.0});
  f.count = n;
  sys.families = {f};
  return sys;
}

Eigen::MatrixXd gaussian(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

SpectralVector mode(int family, int k, double c = 1.0) {
  SpectralVector v;
  v.add(family, k, Eigen::VectorXd::Constant(1, c));
  return v;
}

double dist(const StructuredSubspace& a, const Eigen::MatrixXd& b) { return o_dist(a.basis(), b); }

// random operand: a few whole coordinates plus a random finite part
StructuredSubspace random_structured(std::mt19937_64& rng, TruncationPtr tr) {
  const int n = tr->dim();
  std::set<int> ks;
  for (int k = 1; k <= n; ++k)
    if (pick(rng, 0, 4) == 0) ks.insert(k);
  StructuredSubspace s = StructuredSubspace::from_selections(tr, {IndexSet::finite(ks)});
  return sum(s, StructuredSubspace::from_dense(tr, gaussian(rng, n, pick(rng, 0, 3))));
}

}  // namespace

TEST(Span, Examples) {
  RieszSpectralSystem sys = coords(6);
  auto tr = std::make_shared<Truncation>(sys, 6);
  SpectralVector v;
  v.add(0, 2, Eigen::VectorXd::Constant(1, 1.0));
  v.add(0, 4, Eigen::VectorXd::Constant(1, -3.0));
  EXPECT_EQ(span(tr, {v, v * 2.0}).window_dim(), 1);
  EXPECT_TRUE(span(tr, {}).is_zero());

  RieszSpectralSystem three = coords(3);
  auto tr3 = std::make_shared<Truncation>(three, 3);
  std::mt19937_64 rng(1);
  Eigen::MatrixXd m = gaussian(rng, 3, 5);
  std::vector<SpectralVector> vs;
  for (int j = 0; j < 5; ++j) vs.push_back(tr3->vector(m.col(j)));
  EXPECT_EQ(span(tr3, vs).window_dim(), o_orth(m).cols());
  EXPECT_EQ(span(tr3, vs).window_dim(), 3);
}

TEST(Sum, Examples) {
  RieszSpectralSystem sys = reaction_diffusion_system(20);
  auto tr = std::make_shared<Truncation>(sys, 20);
  StructuredSubspace f2 = StructuredSubspace::family_all(tr, 1);
  EXPECT_LE(projector_distance(sum(f2, StructuredSubspace::zero(tr)), f2), 1e-12);
  StructuredSubspace absorbed = sum(f2, span(tr, {mode(1, 3)}));
  EXPECT_EQ(absorbed.selection(1), IndexSet::all());
  EXPECT_EQ(absorbed.dim_finite_part(), 0);
  EXPECT_TRUE(absorbed.selection(0).empty());

  std::mt19937_64 rng(4);
  RieszSpectralSystem c = coords(7);
  auto tc = std::make_shared<Truncation>(c, 7);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd a = gaussian(rng, 7, 2), b = gaussian(rng, 7, 2);
    StructuredSubspace s = sum(StructuredSubspace::from_dense(tc, a), StructuredSubspace::from_dense(tc, b));
    Eigen::MatrixXd both(7, 4);
    both << a, b;
    ASSERT_EQ(s.window_dim(), o_orth(both).cols());
    ASSERT_LE(dist(s, o_orth(both)), 1e-10);
  }
}

TEST(Intersect, Examples) {
  RieszSpectralSystem sys = reaction_diffusion_system(20);
  auto tr = std::make_shared<Truncation>(sys, 20);
  StructuredSubspace f2 = StructuredSubspace::family_all(tr, 1);
  EXPECT_LE(projector_distance(intersect(f2, f2), f2), 1e-12);

  std::vector<SpectralVector> c1_support;
  for (const auto& [key, val] : sys.C[0].entries) c1_support.push_back(mode(key.first, key.second, val(0)));
  EXPECT_TRUE(intersect(f2, span(tr, c1_support)).is_zero());

  std::mt19937_64 rng(8);
  RieszSpectralSystem c = coords(6);
  auto tc = std::make_shared<Truncation>(c, 6);
  for (int t = 0; t < 200; ++t) {
    Eigen::MatrixXd a = o_orth(gaussian(rng, 6, pick(rng, 1, 5)));
    Eigen::MatrixXd b = o_orth(gaussian(rng, 6, pick(rng, 1, 5)));
    // x in both: x = a s = b t
    Eigen::MatrixXd stacked(6, a.cols() + b.cols());
    stacked << a, -b;
    Eigen::MatrixXd nul = o_null(stacked);
    Eigen::MatrixXd oracle = nul.cols() ? o_orth(a * nul.topRows(a.cols())) : Eigen::MatrixXd(6, 0);
    StructuredSubspace s = intersect(StructuredSubspace::from_dense(tc, a), StructuredSubspace::from_dense(tc, b));
    ASSERT_EQ(s.window_dim(), oracle.cols());
    ASSERT_LE(dist(s, oracle), 1e-8);
  }
}

TEST(KernelOfOutput, Examples) {
  RieszSpectralSystem sys = reaction_diffusion_system(30);
  auto tr = std::make_shared<Truncation>(sys, 30);
  ImplicitKernel k1 = kernel_of_output(sys, tr, std::vector<int>{0});
  EXPECT_EQ(k1.inside[1], IndexSet::all());
  EXPECT_TRUE(k1.inside[0].empty());

  std::mt19937_64 rng(2);
  ImplicitKernel none = kernel_of_output(sys, tr, std::vector<int>{});
  for (int t = 0; t < 20; ++t) EXPECT_TRUE(none.contains(gaussian(rng, tr->dim(), 1).col(0)));

  for (int t = 0; t < 100; ++t) {
    auto rc = random_case(rng, 8, pick(rng, 1, 3), 1);
    auto trc = std::make_shared<Truncation>(rc.sys, 1);
    ImplicitKernel k = kernel_of_output(rc.sys, trc);
    Eigen::VectorXd v = gaussian(rng, rc.n, 1).col(0);
    Eigen::MatrixXd kb = o_null(rc.C);
    Eigen::VectorXd w = kb.cols() ? Eigen::VectorXd(kb * gaussian(rng, kb.cols(), 1).col(0)) : Eigen::VectorXd::Zero(rc.n);
    ASSERT_EQ(k.contains(v), (rc.C * v).cwiseAbs().maxCoeff() <= 1e-9);
    ASSERT_TRUE(k.contains(w));
  }
}

TEST(Containment, Examples) {
  RieszSpectralSystem sys = reaction_diffusion_system(20);
  auto tr = std::make_shared<Truncation>(sys, 20);
  StructuredSubspace f2 = StructuredSubspace::family_all(tr, 1);
  EXPECT_TRUE(contains(f2, span(tr, {mode(1, 7)})));
  EXPECT_FALSE(contains(f2, span(tr, {mode(0, 7)})));
  StructuredSubspace whole = StructuredSubspace::whole(tr);
  EXPECT_LE(projector_distance(orth_complement_within(StructuredSubspace::zero(tr), whole), whole), 1e-12);
  StructuredSubspace comp = orth_complement_within(f2, whole);
  EXPECT_EQ(comp.selection(0), IndexSet::all());
  EXPECT_TRUE(comp.selection(1).empty());

  std::mt19937_64 rng(6);
  RieszSpectralSystem c = coords(8);
  auto tc = std::make_shared<Truncation>(c, 8);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd outer = o_orth(gaussian(rng, 8, pick(rng, 2, 6)));
    Eigen::MatrixXd inner = outer * gaussian(rng, outer.cols(), pick(rng, 1, static_cast<int>(outer.cols())));
    StructuredSubspace so = StructuredSubspace::from_dense(tc, outer), si = StructuredSubspace::from_dense(tc, inner);
    ASSERT_TRUE(contains(so, si));
    Eigen::MatrixXd io = o_orth(inner);
    bool same = o_dist(io, outer) <= 1e-8;
    ASSERT_EQ(contains(si, so), same);
  }
}

TEST(Containment, IncompatibleTruncation) {
  RieszSpectralSystem sys = reaction_diffusion_system(20);
  auto a = std::make_shared<Truncation>(sys, 10);
  auto b = std::make_shared<Truncation>(sys, 12);
  try {
    sum(StructuredSubspace::zero(a), StructuredSubspace::zero(b));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IncompatibleTruncation);
  }
}

TEST(QuotientMap, Examples) {
  RieszSpectralSystem c = coords(5);
  auto tc = std::make_shared<Truncation>(c, 5);
  QuotientMap id = quotient_map(StructuredSubspace::zero(tc));
  EXPECT_LE((id.representative * id.representative.transpose() - Eigen::MatrixXd::Identity(5, 5)).norm(), 1e-12);

  RieszSpectralSystem sys = reaction_diffusion_system(20);
  auto tr = std::make_shared<Truncation>(sys, 20);
  QuotientMap p = quotient_map(StructuredSubspace::family_all(tr, 1));
  EXPECT_EQ(p.dim(), 20);
  EXPECT_EQ(p.family_complement[0], IndexSet::all());
  for (const auto& b : tr->blocks()) {
    Eigen::VectorXd e = Eigen::VectorXd::Unit(tr->dim(), b.offset);
    EXPECT_NEAR(p.apply(e).norm(), b.family == 0 ? 1.0 : 0.0, 1e-14);
  }

  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd s = gaussian(rng, 5, 2);
    QuotientMap q = quotient_map(StructuredSubspace::from_dense(tc, s));
    ASSERT_EQ(q.dim(), 3);
    ASSERT_LE((q.apply(s)).norm(), 1e-12 * s.norm());
    Eigen::MatrixXd ppinv = q.representative.transpose() * q.representative;
    ASSERT_LE((ppinv - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-10);
  }
}

TEST(SubspaceProperties, LatticeLaws) {
  std::mt19937_64 rng(21);
  RieszSpectralSystem c = coords(7);
  auto tc = std::make_shared<Truncation>(c, 7);
  for (int t = 0; t < 150; ++t) {
    StructuredSubspace a = random_structured(rng, tc), b = random_structured(rng, tc), d = random_structured(rng, tc);
    ASSERT_LE(projector_distance(sum(a, b), sum(b, a)), 1e-8);
    ASSERT_LE(projector_distance(intersect(a, b), intersect(b, a)), 1e-8);
    ASSERT_LE(projector_distance(sum(sum(a, b), d), sum(a, sum(b, d))), 1e-8);
    ASSERT_LE(projector_distance(intersect(intersect(a, b), d), intersect(a, intersect(b, d))), 1e-8);
    ASSERT_LE(projector_distance(sum(a, a), a), 1e-8);
    ASSERT_LE(projector_distance(intersect(a, a), a), 1e-8);

    // (a + b)^perp = a^perp cap b^perp
    StructuredSubspace whole = StructuredSubspace::whole(tc);
    StructuredSubspace lhs = orth_complement_within(sum(a, b), whole);
    StructuredSubspace rhs = intersect(orth_complement_within(a, whole), orth_complement_within(b, whole));
    ASSERT_LE(projector_distance(lhs, rhs), 1e-8);

    if (contains(a, b) && contains(b, a)) ASSERT_LE(projector_distance(a, b), 1e-8);
    ASSERT_TRUE(contains(sum(a, b), a));
    ASSERT_TRUE(contains(a, intersect(a, b)));
  }
}

TEST(SubspaceProperties, QuotientKernelIsS) {
  std::mt19937_64 rng(31);
  RieszSpectralSystem c = coords(8);
  auto tc = std::make_shared<Truncation>(c, 8);
  for (int t = 0; t < 100; ++t) {
    StructuredSubspace s = random_structured(rng, tc);
    QuotientMap q = quotient_map(s);
    for (int i = 0; i < 5; ++i) {
      Eigen::VectorXd x = gaussian(rng, 8, 1).col(0);
      if (i % 2 == 0 && s.window_dim() > 0) x = s.basis() * gaussian(rng, s.window_dim(), 1).col(0);
      bool in = s.contains_vector(x, 1e-9);
      ASSERT_EQ(q.apply(x).norm() <= 1e-9 * std::max(1.0, x.norm()), in);
    }
  }
}

TEST(SubspaceProperties, FinitePartOrthogonalToSelections) {
  std::mt19937_64 rng(41);
  RieszSpectralSystem c = coords(9);
  auto tc = std::make_shared<Truncation>(c, 9);
  for (int t = 0; t < 100; ++t) {
    StructuredSubspace s = random_structured(rng, tc);
    const Eigen::MatrixXd& f = s.finite_part();
    if (f.cols() == 0) continue;
    ASSERT_LE((f.transpose() * f - Eigen::MatrixXd::Identity(f.cols(), f.cols())).norm(), 1e-10);
    for (int id : s.selected_blocks()) ASSERT_LE(f.row(tc->blocks()[id].offset).norm(), 1e-10);
  }
}

TEST(Rank, MarginIsReported) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(4, 3);
  m(0, 0) = 1.0;
  m(1, 1) = 1e-8;
  m(2, 2) = 1e-10;  // dropped, but only two decades below the kept one
  RankInfo info;
  Eigen::MatrixXd q = orth(m, 1e-9, &info);
  EXPECT_EQ(q.cols(), 2);
  EXPECT_EQ(info.rank, 2);
  EXPECT_TRUE(info.flagged);
  EXPECT_EQ(numerical_rank(Eigen::MatrixXd::Identity(3, 3)), 3);
}

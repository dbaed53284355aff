#include "rsfdi/fdi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>

#include "rsfdi/errors.hpp"

namespace rsfdi {

namespace {

double max_real_eig(const Eigen::MatrixXd& f) {
  if (f.rows() == 0) return -std::numeric_limits<double>::infinity();
  return Eigen::EigenSolver<Eigen::MatrixXd>(f, false).eigenvalues().real().maxCoeff();
}

// Newton iteration with determinant scaling
Eigen::MatrixXd matrix_sign(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  Eigen::MatrixXd s = a;
  for (int it = 0; it < 100; ++it) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(s);
    double logdet = 0.0;
    for (int i = 0; i < n; ++i) logdet += std::log(std::abs(lu.matrixLU()(i, i)));
    double mu = std::exp(-logdet / n);
    Eigen::MatrixXd next = 0.5 * (mu * s + lu.inverse() / mu);
    double change = (next - s).norm() / std::max(1.0, next.norm());
    s = next;
    if (change < 1e-14) break;
  }
  return s;
}

// real block-diagonal matrix with the given spectrum (pairs consumed together)
Eigen::MatrixXd target_matrix(const std::vector<std::complex<double>>& t) {
  const int n = static_cast<int>(t.size());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (std::abs(t[i].imag()) > 1e-12 && i + 1 < n) {
      double a = t[i].real(), b = std::abs(t[i].imag());
      l(i, i) = a;
      l(i, i + 1) = b;
      l(i + 1, i) = -b;
      l(i + 1, i + 1) = a;
      ++i;
    } else {
      l(i, i) = t[i].real();
    }
  }
  return l;
}

StabilityCertificate lyapunov_certificate(const Eigen::MatrixXd& f, double tail_sup_re) {
  StabilityCertificate c;
  c.kind = CertificateKind::Lyapunov;
  c.max_re = std::max(max_real_eig(f), tail_sup_re);
  if (c.max_re >= 0.0) throw Error(ErrorCode::Unstable, "error dynamics have an eigenvalue with Re >= 0");
  const int n = static_cast<int>(f.rows());
  Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  c.lyapunov_block = solve_lyapunov(f, id);
  c.lyapunov_residual =
      n ? (f.transpose() * c.lyapunov_block + c.lyapunov_block * f + id).cwiseAbs().maxCoeff() : 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(c.lyapunov_block);
  if (n && llt.info() != Eigen::Success) throw Error(ErrorCode::Unstable, "Lyapunov solution is not positive definite");
  if (c.lyapunov_residual > 1e-8 * std::max(1.0, c.lyapunov_block.norm()))
    throw Error(ErrorCode::Unstable, "Lyapunov residual too large");
  c.tail_bound = std::isfinite(tail_sup_re) ? 1.0 / (2.0 * std::abs(tail_sup_re)) : 0.0;
  c.margin = -c.max_re;
  return c;
}

StabilityCertificate margin_certificate(const Eigen::MatrixXd& f, double tail_sup_re) {
  StabilityCertificate c;
  c.kind = CertificateKind::EigenvalueMargin;
  c.max_re = std::max(max_real_eig(f), tail_sup_re);
  if (c.max_re >= 0.0) throw Error(ErrorCode::Unstable, "error dynamics have an eigenvalue with Re >= 0");
  c.margin = -c.max_re;
  return c;
}

}  // namespace

const char* to_string(ObserverStrategy s) {
  switch (s) {
    case ObserverStrategy::Case1: return "CASE1";
    case ObserverStrategy::Case2: return "CASE2";
    case ObserverStrategy::Lyapunov: return "LYAPUNOV";
  }
  return "?";
}

const char* to_string(CertificateKind k) {
  return k == CertificateKind::Lyapunov ? "LYAPUNOV" : "EIGENVALUE_MARGIN";
}

Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& F, const Eigen::MatrixXd& Q) {
  const int n = static_cast<int>(F.rows());
  if (n == 0) return Eigen::MatrixXd(0, 0);
  Eigen::ComplexSchur<Eigen::MatrixXd> schur(F);
  const Eigen::MatrixXcd& t = schur.matrixT();
  const Eigen::MatrixXcd& u = schur.matrixU();
  Eigen::MatrixXcd c = -(u.adjoint() * Q.cast<std::complex<double>>() * u);
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  Eigen::MatrixXcd th = t.adjoint();
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXcd rhs = c.col(j);
    for (int i = 0; i < j; ++i) rhs -= t(i, j) * y.col(i);
    Eigen::MatrixXcd lhs = th;
    lhs.diagonal().array() += t(j, j);
    y.col(j) = lhs.triangularView<Eigen::Lower>().solve(rhs);
  }
  Eigen::MatrixXd x = (u * y * u.adjoint()).real();
  return 0.5 * (x + x.transpose());
}

QuotientSystem quotient_system(const Model& m, const UnobservabilityResult& U) {
  QuotientSystem qs;
  qs.P = quotient_map(U.S_star, m.tol);
  const Eigen::MatrixXd& r = qs.P.representative;
  qs.H = U.H;
  qs.D = U.D.D;
  Eigen::MatrixXd x = m.A + U.D.D * m.C;
  qs.A_p = r.transpose() * x * r;
  Eigen::MatrixXd hc = U.H * m.C;
  qs.M = hc * r;
  Eigen::MatrixXd diff = qs.M * r.transpose() - hc;
  qs.mp_residual = diff.size() ? diff.colwise().norm().maxCoeff() : 0.0;
  if (qs.mp_residual > 1e-10 * std::max(1.0, hc.norm()))
    throw Error(ErrorCode::InconsistentH, "M P = H C has residual " + std::to_string(qs.mp_residual));

  const Truncation& tr = *m.tr;
  qs.tail_sup_re = -std::numeric_limits<double>::infinity();
  for (int f = 0; f < tr.family_count(); ++f) {
    if (!tr.family(f).infinite() || U.S_star.selection(f).tail()) continue;
    qs.tail_families.push_back(f);
    qs.tail_sup_re = std::max(qs.tail_sup_re, sup_re_from(tr.family(f), tr.last_index(f) + 1));
  }
  return qs;
}

ObserverGain observer_gain(const QuotientSystem& qs, const ObserverOptions& opt) {
  const int n = qs.dim();
  const int qh = static_cast<int>(qs.M.rows());
  ObserverGain g;
  g.D_o = Eigen::MatrixXd::Zero(n, qh);

  if (opt.strategy == ObserverStrategy::Lyapunov) {
    if (opt.proposed.size() > 0) {
      if (opt.proposed.rows() != n || opt.proposed.cols() != qh)
        throw Error(ErrorCode::Validation, "proposed D_o has the wrong shape");
      g.D_o = opt.proposed;
    }
    g.cert = lyapunov_certificate(qs.A_p + g.D_o * qs.M, qs.tail_sup_re);
    return g;
  }
  if (opt.strategy == ObserverStrategy::Case2 && !qs.finite())
    throw Error(ErrorCode::Validation, "CASE2 needs a finite-dimensional quotient");
  if (qs.tail_sup_re > -opt.margin_req)
    throw Error(ErrorCode::NoMargin, "quotient tail eigenvalues reach Re = " + std::to_string(qs.tail_sup_re));

  Eigen::VectorXcd ev = n ? Eigen::EigenSolver<Eigen::MatrixXd>(qs.A_p, false).eigenvalues() : Eigen::VectorXcd();
  double max_stable = -std::numeric_limits<double>::infinity();
  double min_unstable = std::numeric_limits<double>::infinity();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i).real() >= -opt.margin_req)
      min_unstable = std::min(min_unstable, ev(i).real());
    else
      max_stable = std::max(max_stable, ev(i).real());
  }
  if (std::isfinite(min_unstable)) {
    double cut = std::isfinite(max_stable) ? 0.5 * (max_stable + min_unstable) : min_unstable - 1.0;
    Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd s = matrix_sign(qs.A_p - cut * id);
    Eigen::MatrixXd vp = orth(0.5 * (id + s), 1e-8);
    Eigen::MatrixXd vm = orth(0.5 * (id - s), 1e-8);
    if (vp.cols() + vm.cols() != n) throw Error(ErrorCode::NoMargin, "stable/unstable split failed");
    const int u = static_cast<int>(vp.cols());
    Eigen::MatrixXd v(n, n);
    v << vp, vm;
    Eigen::MatrixXd tinv = v.inverse();
    Eigen::MatrixXd ap = tinv.topRows(u) * qs.A_p * vp;
    Eigen::MatrixXd mp = qs.M * vp;
    g.unstable_dim = u;

    Eigen::MatrixXd obs(qh * u, u);
    Eigen::MatrixXd blk = mp;
    for (int i = 0; i < u; ++i) {
      if (qh) obs.middleRows(i * qh, qh) = blk;
      blk = blk * ap;
    }
    if (qh == 0 || numerical_rank(obs, 1e-9) < u)
      throw Error(ErrorCode::UnobservableUnstablePart, "unstable part of the quotient is not observable through M");

    std::vector<std::complex<double>> targets = opt.targets;
    if (targets.empty()) {
      Eigen::VectorXcd eu = Eigen::EigenSolver<Eigen::MatrixXd>(ap, false).eigenvalues();
      std::vector<std::complex<double>> sorted(eu.data(), eu.data() + eu.size());
      std::sort(sorted.begin(), sorted.end(), [](auto a, auto b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() > b.imag();
      });
      int dup = 0;
      for (auto l : sorted) {
        double re = std::min(-2.0 * opt.margin_req - l.real(), -2.0 * opt.margin_req);
        if (std::abs(l.imag()) < 1e-12) re -= 0.01 * dup++;
        targets.push_back({re, l.imag()});
      }
    }
    if (static_cast<int>(targets.size()) != u)
      throw Error(ErrorCode::Validation, "need " + std::to_string(u) + " placement targets");
    Eigen::MatrixXd lam = target_matrix(targets);

    // X A+ - Lam X = -G M+, K = X^{-1} G gives A+ + K M+ = X^{-1} Lam X
    std::mt19937_64 rng(12345);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Eigen::MatrixXd iu = Eigen::MatrixXd::Identity(u, u);
    Eigen::MatrixXd sylv = Eigen::kroneckerProduct(ap.transpose(), iu) - Eigen::kroneckerProduct(iu, lam);
    Eigen::FullPivLU<Eigen::MatrixXd> slu(sylv);
    Eigen::MatrixXd k;
    for (int attempt = 0; attempt < 50 && k.size() == 0; ++attempt) {
      Eigen::MatrixXd gm(u, qh);
      for (int i = 0; i < u; ++i)
        for (int j = 0; j < qh; ++j) gm(i, j) = unif(rng);
      Eigen::MatrixXd rhs = -gm * mp;
      Eigen::VectorXd xv = slu.solve(Eigen::Map<Eigen::VectorXd>(rhs.data(), rhs.size()));
      Eigen::MatrixXd x = Eigen::Map<Eigen::MatrixXd>(xv.data(), u, u);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
      double cond = svd.singularValues()(0) / std::max(1e-300, svd.singularValues()(u - 1));
      if (cond < 1e10) k = x.inverse() * gm;
    }
    if (k.size() == 0) throw Error(ErrorCode::UnobservableUnstablePart, "pole placement failed");
    g.D_o = vp * k;
    g.placed = targets;
  }
  g.cert = margin_certificate(qs.A_p + g.D_o * qs.M, qs.tail_sup_re);
  return g;
}

DetectionFilter build_detection_filter(const Model& m, const UnobservabilityResult& U, int fault,
                                       const ObserverGain& gain) {
  const RieszSpectralSystem& sys = *m.sys;
  DetectionFilter f;
  f.fault = fault;
  f.Q = quotient_system(m, U);
  const Eigen::MatrixXd& r = f.Q.P.representative;
  for (int j = 0; j < sys.fault_count(); ++j) {
    Eigen::VectorXd lj = m.tr->dense(sys.faults[j]);
    double pl = (r.transpose() * lj).norm();
    if (j == fault) {
      f.sensitivity = pl;
      f.PL = r.transpose() * lj;
    } else {
      f.decoupling = std::max(f.decoupling, pl);
      if (pl > m.tol.rank * std::max(1.0, lj.norm()))
        throw Error(ErrorCode::DecouplingFail, "|P L_" + std::to_string(j + 1) + "| = " + std::to_string(pl));
    }
  }
  if (f.sensitivity <= m.tol.rank)
    throw Error(ErrorCode::DecouplingFail, "target fault is invisible in the quotient");
  f.D_o = gain.D_o;
  f.M = f.Q.M;
  f.H = f.Q.H;
  f.F = f.Q.A_p + f.D_o * f.M;
  f.G = r.transpose() * m.tr->B(sys);
  f.E = r.transpose() * f.Q.D + f.D_o * f.H;
  f.strategy = gain.cert.kind == CertificateKind::Lyapunov ? ObserverStrategy::Lyapunov : ObserverStrategy::Case1;
  f.cert = verify_error_dynamics(f, f.strategy);
  return f;
}

StabilityCertificate verify_error_dynamics(const DetectionFilter& f, ObserverStrategy strategy) {
  if (strategy == ObserverStrategy::Lyapunov) return lyapunov_certificate(f.F, f.Q.tail_sup_re);
  return margin_certificate(f.F, f.Q.tail_sup_re);
}

FilterDesign design_filter(const Model& m, int fault, const ObserverOptions& opt) {
  FilterDesign d{check_fdi_necessary(m, fault), {}, {}};
  if (!d.necessary.necessary_ok)
    throw Error(ErrorCode::DecouplingFail,
                "fault " + std::to_string(fault + 1) + " signature meets the unobservability subspace of the others");
  QuotientSystem qs = quotient_system(m, d.necessary.U);
  d.gain = observer_gain(qs, opt);
  d.filter = build_detection_filter(m, d.necessary.U, fault, d.gain);
  d.filter.strategy = opt.strategy;
  return d;
}

}  // namespace rsfdi

#include "rsfdi/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <gsl/gsl_sf_zeta.h>
#include <unsupported/Eigen/Polynomials>

#include "rsfdi/errors.hpp"

namespace rsfdi {

namespace {

double horner(const std::vector<double>& c, double k) {
  double s = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) s = s * k + *it;
  return s;
}

int degree_of(const std::vector<double>& c) {
  for (int i = static_cast<int>(c.size()) - 1; i >= 0; --i)
    if (c[i] != 0.0) return i;
  return -1;
}

std::vector<double> trimmed(std::vector<double> c) {
  c.resize(std::max(degree_of(c) + 1, 0));
  return c;
}

// J with Lambda = a I + b J for the real 2x2 block of a +- jb
Eigen::Matrix2d rotation() {
  Eigen::Matrix2d j;
  j << 0, 1, -1, 0;
  return j;
}


}  // namespace

// ---------------------------------------------------------------- rules

EigenRule EigenRule::poly(std::vector<double> coeffs, std::vector<double> imag) {
  EigenRule r;
  r.re = std::move(coeffs);
  r.im = std::move(imag);
  return r;
}

EigenRule EigenRule::affine_ksq(double a, double b) { return poly({a, 0.0, b}); }

EigenRule EigenRule::logarithmic(double a, double b) {
  EigenRule r = poly({a});
  r.log_coeff = b;
  return r;
}

std::complex<double> EigenRule::operator()(int k) const {
  double kk = static_cast<double>(k);
  double re_part = horner(re, kk) + (log_coeff != 0.0 ? log_coeff * std::log(kk) : 0.0);
  return {re_part, horner(im, kk)};
}

bool EigenRule::is_complex() const { return degree_of(im) >= 0; }
int EigenRule::real_degree() const { return degree_of(re); }
int EigenRule::imag_degree() const { return degree_of(im); }

bool EigenRule::same_as(const EigenRule& o) const {
  return trimmed(re) == trimmed(o.re) && trimmed(im) == trimmed(o.im) &&
         log_coeff == o.log_coeff;
}

// ---------------------------------------------------------------- families

int ModeFamily::multiplicity(int k) const {
  auto it = jordan.find(k);
  if (it == jordan.end()) return 1;
  return std::accumulate(it->second.begin(), it->second.end(), 0);
}

Eigen::MatrixXd ModeFamily::block(int k) const {
  const int r = real_dim();
  std::complex<double> lam = eigenvalue(k);
  Eigen::MatrixXd lam_block(r, r);
  if (r == 1)
    lam_block(0, 0) = lam.real();
  else
    lam_block = lam.real() * Eigen::Matrix2d::Identity() + lam.imag() * rotation();

  std::vector<int> chains{1};
  auto it = jordan.find(k);
  if (it != jordan.end()) chains = it->second;
  const int d = block_dim(k);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
  int pos = 0;
  for (int len : chains) {
    for (int j = 0; j < len; ++j) {
      int o = (pos + j) * r;
      m.block(o, o, r, r) = lam_block;
      if (j + 1 < len) m.block(o, o + r, r, r).setIdentity();
    }
    pos += len;
  }
  return m;
}

Eigen::MatrixXd ModeFamily::gram_block() const {
  if (gram.size() == 0) return Eigen::MatrixXd::Identity(real_dim(), real_dim());
  return gram;
}

// ---------------------------------------------------------------- vectors

Eigen::VectorXd SpectralVector::coefficient(int family, int k, int dim) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  auto it = entries.find({family, k});
  if (it != entries.end()) v.head(it->second.size()) += it->second;
  for (const auto& t : tail)
    if (t.family == family && k >= t.k0)
      v.head(t.c.size()) += t.c / std::pow(static_cast<double>(k), t.p);
  return v;
}

void SpectralVector::add(int family, int k, const Eigen::VectorXd& v) {
  auto key = std::make_pair(family, k);
  auto it = entries.find(key);
  if (it == entries.end()) {
    entries.emplace(key, v);
  } else if (it->second.size() == v.size()) {
    it->second += v;
  } else {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(std::max(it->second.size(), v.size()));
    w.head(it->second.size()) += it->second;
    w.head(v.size()) += v;
    it->second = w;
  }
}

int SpectralVector::max_index(int family) const {
  int m = 0;
  for (const auto& [key, v] : entries)
    if (key.first == family) m = std::max(m, key.second);
  return m;
}

SpectralVector& SpectralVector::operator+=(const SpectralVector& o) {
  for (const auto& [key, v] : o.entries) add(key.first, key.second, v);
  for (const auto& t : o.tail) {
    bool merged = false;
    for (auto& s : tail)
      if (s.family == t.family && s.p == t.p && s.k0 == t.k0 && s.c.size() == t.c.size()) {
        s.c += t.c;
        merged = true;
        break;
      }
    if (!merged) tail.push_back(t);
  }
  return *this;
}

SpectralVector SpectralVector::operator*(double a) const {
  SpectralVector r = *this;
  for (auto& [key, v] : r.entries) v *= a;
  for (auto& t : r.tail) t.c *= a;
  return r;
}

SpectralVector SpectralVector::operator+(const SpectralVector& o) const {
  SpectralVector r = *this;
  r += o;
  return r;
}

// ---------------------------------------------------------------- system

int RieszSpectralSystem::family_index(const std::string& label) const {
  for (std::size_t i = 0; i < families.size(); ++i)
    if (families[i].label == label) return static_cast<int>(i);
  return -1;
}

bool RieszSpectralSystem::declared_orthogonal(int output, int family) const {
  for (const auto& f : orthogonality)
    if (f.output == output && f.family == family) return true;
  return false;
}

// ---------------------------------------------------------------- truncation

Truncation::Truncation(const RieszSpectralSystem& sys, int order)
    : order_(order), families_(sys.families) {
  if (order < 1) throw Error(ErrorCode::Validation, "truncation order must be >= 1");
  if (families_.empty()) throw Error(ErrorCode::Validation, "system has no mode families");
  for (int f = 0; f < family_count(); ++f) {
    family_start_.push_back(static_cast<int>(blocks_.size()));
    const ModeFamily& fam = families_[f];
    for (int k = fam.k_min; k < fam.k_min + fam.window(order_); ++k) {
      int d = fam.block_dim(k);
      blocks_.push_back({f, k, dim_, d, fam.eigenvalue(k)});
      dim_ += d;
    }
  }
}

int Truncation::block_index(int family, int k) const {
  if (family < 0 || family >= family_count()) return -1;
  int off = k - families_[family].k_min;
  if (off < 0 || off >= families_[family].window(order_)) return -1;
  return family_start_[family] + off;
}

Eigen::MatrixXd Truncation::A() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim_, dim_);
  for (const auto& b : blocks_)
    a.block(b.offset, b.offset, b.dim, b.dim) = families_[b.family].block(b.k);
  return a;
}

Eigen::VectorXd Truncation::dense(const SpectralVector& v) const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim_);
  for (const auto& [key, val] : v.entries) {
    int bi = block_index(key.first, key.second);
    if (bi < 0) continue;
    const Block& b = blocks_[bi];
    x.segment(b.offset, std::min<int>(b.dim, val.size())) += val.head(std::min<int>(b.dim, val.size()));
  }
  for (const auto& t : v.tail) {
    if (t.family < 0 || t.family >= family_count()) continue;
    const ModeFamily& fam = families_[t.family];
    for (int k = std::max(t.k0, fam.k_min); k <= last_index(t.family); ++k) {
      const Block& b = blocks_[block_index(t.family, k)];
      x.segment(b.offset, t.c.size()) += t.c / std::pow(static_cast<double>(k), t.p);
    }
  }
  return x;
}

double Truncation::tail_residue(const SpectralVector& v) const {
  double bound = 0.0;
  for (const auto& t : v.tail) {
    if (t.family < 0 || t.family >= family_count()) continue;
    int start = std::max(t.k0, last_index(t.family) + 1);
    double s = 2.0 * t.p;
    const ModeFamily& fam = families_[t.family];
    if (!fam.infinite()) {
      double acc = 0.0;
      for (int k = start; k < fam.k_min + fam.count; ++k) acc += std::pow(static_cast<double>(k), -s);
      bound += t.c.norm() * std::sqrt(acc);
      continue;
    }
    if (s <= 1.0) return std::numeric_limits<double>::infinity();
    bound += t.c.norm() * std::sqrt(power_tail_sum(s, start));
  }
  return bound;
}

SpectralVector Truncation::vector(const Eigen::VectorXd& x, double drop) const {
  SpectralVector v;
  for (const auto& b : blocks_) {
    Eigen::VectorXd seg = x.segment(b.offset, b.dim);
    if (seg.norm() > drop) v.entries[{b.family, b.k}] = seg;
  }
  return v;
}

Eigen::MatrixXd Truncation::columns(const std::vector<SpectralVector>& vs) const {
  Eigen::MatrixXd m(dim_, static_cast<int>(vs.size()));
  for (std::size_t i = 0; i < vs.size(); ++i) m.col(i) = dense(vs[i]);
  return m;
}

Eigen::MatrixXd Truncation::C(const RieszSpectralSystem& sys) const {
  Eigen::MatrixXd c(sys.outputs(), dim_);
  for (int j = 0; j < sys.outputs(); ++j) {
    Eigen::VectorXd coeffs = dense(sys.C[j]);
    for (const auto& b : blocks_) {
      Eigen::MatrixXd g = families_[b.family].gram_block();
      const int r = static_cast<int>(g.rows());
      for (int s = 0; s < b.dim; s += r)
        coeffs.segment(b.offset + s, r) = g * coeffs.segment(b.offset + s, r);
    }
    c.row(j) = coeffs.transpose();
  }
  return c;
}

Eigen::MatrixXd Truncation::B(const RieszSpectralSystem& sys) const { return columns(sys.B); }
Eigen::MatrixXd Truncation::L(const RieszSpectralSystem& sys) const { return columns(sys.faults); }

Eigen::MatrixXd Truncation::coordinates(const std::vector<int>& block_ids) const {
  int cols = 0;
  for (int bi : block_ids) cols += blocks_[bi].dim;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim_, cols);
  int c = 0;
  for (int bi : block_ids) {
    const Block& b = blocks_[bi];
    for (int i = 0; i < b.dim; ++i) m(b.offset + i, c++) = 1.0;
  }
  return m;
}

bool Truncation::compatible(const Truncation& o) const {
  if (order_ != o.order_ || dim_ != o.dim_ || family_count() != o.family_count()) return false;
  for (int f = 0; f < family_count(); ++f)
    if (families_[f].k_min != o.families_[f].k_min) return false;
  return true;
}

// ---------------------------------------------------------------- validation

const char* to_string(GapStatus s) {
  switch (s) {
    case GapStatus::Pass: return "PASS";
    case GapStatus::Fail: return "FAIL";
    case GapStatus::Unverified: return "UNVERIFIED";
  }
  return "?";
}

double sup_re_from(const ModeFamily& fam, int k_from) {
  k_from = std::max(k_from, fam.k_min);
  if (!fam.infinite() && k_from >= fam.k_min + fam.count) return -std::numeric_limits<double>::infinity();
  if (!fam.infinite()) {
    double best = -std::numeric_limits<double>::infinity();
    for (int k = k_from; k < fam.k_min + fam.count; ++k) best = std::max(best, fam.eigenvalue(k).real());
    return best;
  }
  const auto& re = fam.rule.re;
  int deg = fam.rule.real_degree();
  if ((deg >= 1 && re[deg] > 0) || (deg < 1 && fam.rule.log_coeff > 0)) return std::numeric_limits<double>::infinity();
  std::vector<double> cand{static_cast<double>(k_from)};
  if (deg >= 2) {
    // critical points of the polynomial part
    Eigen::VectorXd d(deg);
    for (int i = 1; i <= deg; ++i) d(i - 1) = i * re[i];
    Eigen::PolynomialSolver<double, Eigen::Dynamic> solver;
    solver.compute(d);
    for (const auto& r : solver.roots())
      if (std::abs(r.imag()) < 1e-9 && r.real() > k_from) {
        cand.push_back(std::floor(r.real()));
        cand.push_back(std::ceil(r.real()));
      }
  }
  double best = -std::numeric_limits<double>::infinity();
  for (double c : cand) best = std::max(best, fam.eigenvalue(static_cast<int>(c)).real());
  if (fam.rule.log_coeff != 0.0 && deg >= 1) {
    int k = k_from;
    while (k < k_from + 1000000 && fam.eigenvalue(k + 1).real() > fam.eigenvalue(k).real()) ++k;
    best = std::max(best, fam.eigenvalue(k).real());
  }
  return best;
}

double power_tail_sum(double s, int k0) {
  if (s <= 1.0) return std::numeric_limits<double>::infinity();
  return gsl_sf_hzeta(s, static_cast<double>(std::max(k0, 1)));
}

namespace {

struct SpectralPoint {
  std::complex<double> lambda;
  int family;
  int k;
  bool in_window;
};

bool close(std::complex<double> a, std::complex<double> b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

ValidationReport inspect(const RieszSpectralSystem& sys, int order, const Tolerances& tol,
                         std::string* reject) {
  ValidationReport rep;
  if (sys.families.empty()) {
    *reject = "system has no mode families";
    return rep;
  }

  // spectrum over the window plus two guard indices for neighbour distances
  std::vector<SpectralPoint> pts;
  for (int f = 0; f < static_cast<int>(sys.families.size()); ++f) {
    const ModeFamily& fam = sys.families[f];
    const int w = fam.window(order);
    const int guard = fam.infinite() ? 2 : 0;
    for (int k = fam.k_min; k < fam.k_min + w + guard; ++k) {
      bool in = k < fam.k_min + w;
      auto lam = fam.eigenvalue(k);
      pts.push_back({lam, f, k, in});
      if (fam.rule.is_complex()) pts.push_back({std::conj(lam), f, k, in});
    }
  }

  // (a) coincident eigenvalues and declared repeated modes
  std::vector<int> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (pts[a].lambda.real() != pts[b].lambda.real())
      return pts[a].lambda.real() < pts[b].lambda.real();
    return pts[a].lambda.imag() < pts[b].lambda.imag();
  });
  std::vector<std::vector<int>> groups;
  for (int i : idx) {
    if (pts[i].lambda.imag() < 0) continue;  // conjugates duplicate the upper half
    bool placed = false;
    for (auto g = groups.rbegin(); g != groups.rend() && g != groups.rbegin() + 4; ++g) {
      if (close(pts[(*g)[0]].lambda, pts[i].lambda, tol.eig)) {
        g->push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) groups.push_back({i});
  }
  bool upper_collision = false;
  for (const auto& g : groups) {
    bool any_window = false;
    for (int i : g) any_window |= pts[i].in_window;
    if (g.size() > 1 && any_window) {
      std::vector<std::pair<int, int>> ids;
      for (int i : g)
        if (pts[i].in_window) ids.emplace_back(pts[i].family, pts[i].k);
      if (ids.size() > 1) rep.repeated.push_back(ids);
      for (int i : g) {
        const ModeFamily& fam = sys.families[pts[i].family];
        if (fam.infinite() && pts[i].k > fam.k_min + order / 2) upper_collision = true;
      }
    }
  }
  for (int f = 0; f < static_cast<int>(sys.families.size()); ++f)
    for (const auto& [k, chains] : sys.families[f].jordan)
      if (sys.families[f].multiplicity(k) > 1) rep.repeated.push_back({{f, k}});
  bool identical_rules = false;
  for (std::size_t a = 0; a < sys.families.size(); ++a)
    for (std::size_t b = a + 1; b < sys.families.size(); ++b)
      if (sys.families[a].infinite() && sys.families[b].infinite() &&
          sys.families[a].rule.same_as(sys.families[b].rule))
        identical_rules = true;
  rep.repeats_finite = !(upper_collision || identical_rules);
  rep.checks.push_back({"repeated eigenvalues finitely many", rep.repeats_finite,
                        std::to_string(rep.repeated.size()) + " repeated group(s) in window"});
  if (!rep.repeats_finite) {
    *reject = "eigenvalue rules collide on infinitely many indices";
  }

  // (b) sup Re lambda
  bool sup_diverges = false;
  for (const auto& fam : sys.families) {
    if (!fam.infinite()) continue;
    int deg = fam.rule.real_degree();
    if (deg >= 1 && fam.rule.re[deg] > 0) sup_diverges = true;
    if (deg < 1 && fam.rule.log_coeff > 0) sup_diverges = true;
  }
  rep.sup_re = -std::numeric_limits<double>::infinity();
  for (const auto& fam : sys.families) {
    int k = fam.k_min;
    for (; k < fam.k_min + fam.window(order); ++k) rep.sup_re = std::max(rep.sup_re, fam.eigenvalue(k).real());
    // keep walking while the real part still increases
    while (!sup_diverges && fam.infinite() && fam.eigenvalue(k + 1).real() > fam.eigenvalue(k).real() &&
           k < fam.k_min + 100 * order) {
      ++k;
      rep.sup_re = std::max(rep.sup_re, fam.eigenvalue(k).real());
    }
  }
  if (sup_diverges) rep.sup_re = std::numeric_limits<double>::infinity();
  rep.checks.push_back({"sup Re lambda finite", !sup_diverges,
                        sup_diverges ? "real part of an eigenvalue rule grows without bound"
                                     : "sup Re lambda = " + std::to_string(rep.sup_re)});
  if (sup_diverges && reject->empty()) *reject = "sup Re lambda diverges";

  // (c) gap sum over distinct spectral points of the window
  std::vector<std::complex<double>> distinct;
  std::vector<bool> distinct_in;
  for (const auto& g : groups) {
    bool in = false;
    for (int i : g) in |= pts[i].in_window;
    distinct.push_back(pts[g[0]].lambda);
    distinct_in.push_back(in);
    if (pts[g[0]].lambda.imag() > 0) {
      distinct.push_back(std::conj(pts[g[0]].lambda));
      distinct_in.push_back(in);
    }
  }
  std::vector<std::pair<double, double>> mag_gap;  // (|lambda|, d)
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    if (!distinct_in[i]) continue;
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < distinct.size(); ++j)
      if (j != i) d = std::min(d, std::abs(distinct[i] - distinct[j]));
    mag_gap.emplace_back(std::abs(distinct[i]), d);
  }
  std::sort(mag_gap.begin(), mag_gap.end());
  rep.gap_partial_sum = 0.0;
  for (const auto& [m, d] : mag_gap) rep.gap_partial_sum += 1.0 / (d * d);

  const int n = static_cast<int>(mag_gap.size());
  const int lo = n / 2;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (int i = lo; i < n; ++i) {
    double x = std::log(static_cast<double>(i + 1)), y = std::log(mag_gap[i].second);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
    ++cnt;
  }
  double beta = 0.0;
  if (cnt >= 2 && sxx * cnt - sx * sx > 0) beta = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  rep.gap_exponent = beta;
  rep.gap_tail_bound = std::numeric_limits<double>::quiet_NaN();
  std::string how;
  bool all_finite = true;
  for (const auto& fam : sys.families) all_finite = all_finite && !fam.infinite();
  if (all_finite) {
    rep.gap_tail_bound = 0.0;
    rep.gap = GapStatus::Pass;
    how = "finite spectrum";
  } else if (sys.gap_tail_bound >= 0.0) {
    rep.gap_tail_bound = sys.gap_tail_bound;
    rep.gap = std::isfinite(rep.gap_partial_sum) ? GapStatus::Pass : GapStatus::Fail;
    how = "user tail bound";
  } else if (beta >= 0.75 && n >= 4) {
    double a = std::numeric_limits<double>::infinity();
    for (int i = lo; i < n; ++i)
      a = std::min(a, mag_gap[i].second / std::pow(static_cast<double>(i + 1), beta));
    rep.gap_tail_bound = power_tail_sum(2.0 * beta, n + 1) / (a * a);
    rep.gap = GapStatus::Pass;
    how = "power-law envelope over the upper window";
  } else if (beta <= 0.25 && n >= 4) {
    rep.gap = GapStatus::Fail;
    how = "gaps do not grow over the upper window";
  } else {
    rep.gap = GapStatus::Unverified;
    how = "no tail bound available";
  }
  std::ostringstream gd;
  gd << "partial sum " << rep.gap_partial_sum << ", fitted exponent " << beta << " (" << how << ")";
  rep.checks.push_back({"gap condition sum 1/d_i^2", rep.gap == GapStatus::Pass, gd.str()});

  // tail rules must be square summable
  bool tails_ok = true;
  auto check_tails = [&](const std::vector<SpectralVector>& vs) {
    for (const auto& v : vs)
      for (const auto& t : v.tail)
        if (t.p <= 0.5 || t.family < 0 || t.family >= static_cast<int>(sys.families.size()))
          tails_ok = false;
  };
  check_tails(sys.B);
  check_tails(sys.C);
  check_tails(sys.faults);
  rep.checks.push_back({"tail rules square summable (p > 1/2)", tails_ok, ""});

  // declared orthogonality facts against the window
  Truncation tr(sys, order);
  Eigen::MatrixXd c = tr.C(sys);
  bool facts_ok = true;
  std::string facts_detail;
  for (const auto& fact : sys.orthogonality) {
    if (fact.output < 0 || fact.output >= sys.outputs() || fact.family < 0 ||
        fact.family >= static_cast<int>(sys.families.size())) {
      facts_ok = false;
      facts_detail += "fact references unknown output/family; ";
      continue;
    }
    double worst = 0.0;
    for (const auto& b : tr.blocks())
      if (b.family == fact.family)
        worst = std::max(worst, c.row(fact.output).segment(b.offset, b.dim).cwiseAbs().maxCoeff());
    if (worst > tol.ip) {
      facts_ok = false;
      facts_detail += "output " + std::to_string(fact.output + 1) + " vs family " +
                      sys.families[fact.family].label + " violated (" + std::to_string(worst) + "); ";
    }
  }
  rep.checks.push_back({"declared orthogonality facts", facts_ok, facts_detail});

  rep.passed = reject->empty() && tails_ok && facts_ok;
  return rep;
}

}  // namespace

ValidationReport validate_regular_rs(const RieszSpectralSystem& sys, int order,
                                     const Tolerances& tol) {
  if (order < 1) throw Error(ErrorCode::Validation, "truncation order must be >= 1");
  std::string reject;
  ValidationReport rep = inspect(sys, order, tol, &reject);
  if (!reject.empty()) throw Error(ErrorCode::Reject, reject);
  return rep;
}

// ---------------------------------------------------------------- operators

SpectralVector apply_A(const RieszSpectralSystem& sys, const SpectralVector& v) {
  SpectralVector out;
  for (const auto& [key, val] : v.entries) {
    const ModeFamily& fam = sys.families.at(key.first);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(fam.block_dim(key.second));
    x.head(val.size()) = val;
    out.entries[key] = fam.block(key.second) * x;
  }
  for (const auto& t : v.tail) {
    const ModeFamily& fam = sys.families.at(t.family);
    if (fam.rule.log_coeff != 0.0)
      throw Error(ErrorCode::UnboundedTail, "tail rule times a logarithmic eigenvalue rule has no closed form");
    const int r = fam.real_dim();
    int deg = std::max(fam.rule.real_degree(), fam.rule.imag_degree());
    for (int i = 0; i <= deg; ++i) {
      double a = i < static_cast<int>(fam.rule.re.size()) ? fam.rule.re[i] : 0.0;
      double b = i < static_cast<int>(fam.rule.im.size()) ? fam.rule.im[i] : 0.0;
      Eigen::VectorXd c = a * t.c;
      if (r == 2) c += b * (rotation() * t.c);
      if (c.norm() == 0.0) continue;
      TailTerm nt{t.family, c, t.p - i, t.k0};
      if (nt.p <= 0.5)
        throw Error(ErrorCode::UnboundedTail, "A applied to tail c/k^" + std::to_string(t.p) +
                                                  " on family " + fam.label + " is not square summable");
      SpectralVector piece;
      piece.tail.push_back(nt);
      out += piece;
    }
  }
  return out;
}

InnerProduct inner_product(const RieszSpectralSystem& sys, const SpectralVector& c,
                           const SpectralVector& v, int /*order*/) {
  InnerProduct ip;
  auto tail_only = [](const SpectralVector& s, int f, int k, int d) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
    for (const auto& t : s.tail)
      if (t.family == f && k >= t.k0) x.head(t.c.size()) += t.c / std::pow(static_cast<double>(k), t.p);
    return x;
  };
  auto weighted = [&](int f, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    Eigen::MatrixXd g = sys.families[f].gram_block();
    const int r = static_cast<int>(g.rows());
    double s = 0.0;
    for (int o = 0; o + r <= a.size(); o += r) s += a.segment(o, r).dot(g * b.segment(o, r));
    return s;
  };

  // tail x tail over the whole index range, analytically
  for (const auto& ta : c.tail)
    for (const auto& tb : v.tail) {
      if (ta.family != tb.family) continue;
      const ModeFamily& fam = sys.families.at(ta.family);
      int k0 = std::max({ta.k0, tb.k0, fam.k_min});
      Eigen::MatrixXd g = fam.gram_block();
      double s = 0.0;
      if (fam.infinite()) {
        s = power_tail_sum(ta.p + tb.p, k0);
      } else {
        for (int k = k0; k < fam.k_min + fam.count; ++k) s += std::pow(static_cast<double>(k), -(ta.p + tb.p));
      }
      ip.value += ta.c.dot(g * tb.c) * s;
    }
  // indices with explicit entries: replace the tail x tail contribution
  std::set<std::pair<int, int>> keys;
  for (const auto& [key, val] : c.entries) keys.insert(key);
  for (const auto& [key, val] : v.entries) keys.insert(key);
  for (const auto& key : keys) {
    const ModeFamily& fam = sys.families.at(key.first);
    if (key.second < fam.k_min) continue;
    int d = fam.block_dim(key.second);
    Eigen::VectorXd a = c.coefficient(key.first, key.second, d);
    Eigen::VectorXd b = v.coefficient(key.first, key.second, d);
    ip.value += weighted(key.first, a, b) -
                weighted(key.first, tail_only(c, key.first, key.second, d),
                         tail_only(v, key.first, key.second, d));
  }
  return ip;
}

Eigen::VectorXd output_map(const RieszSpectralSystem& sys, const SpectralVector& x, int order) {
  Eigen::VectorXd y(sys.outputs());
  for (int j = 0; j < sys.outputs(); ++j) y(j) = inner_product(sys, sys.C[j], x, order).value;
  return y;
}

SpectralVector resolvent_apply(const RieszSpectralSystem& sys, double lambda,
                               const SpectralVector& v, int order, const Tolerances& tol) {
  Truncation tr(sys, order);
  for (const auto& b : tr.blocks())
    if (close(b.lambda, {lambda, 0.0}, tol.eig) ||
        (b.lambda.imag() != 0.0 && close(std::conj(b.lambda), {lambda, 0.0}, tol.eig)))
      throw Error(ErrorCode::SpectrumHit, "lambda = " + std::to_string(lambda) + " is the eigenvalue of " +
                                              sys.families[b.family].label + " k=" + std::to_string(b.k));
  // rule inspection beyond the window for real polynomial rules
  for (int f = 0; f < tr.family_count(); ++f) {
    const ModeFamily& fam = sys.families[f];
    if (fam.rule.is_complex() || fam.rule.log_coeff != 0.0 || !fam.infinite()) continue;
    int deg = fam.rule.real_degree();
    if (deg < 1) continue;
    Eigen::VectorXd coeffs(deg + 1);
    for (int i = 0; i <= deg; ++i) coeffs(i) = fam.rule.re[i];
    coeffs(0) -= lambda;
    Eigen::PolynomialSolver<double, Eigen::Dynamic> solver;
    solver.compute(coeffs);
    for (int i = 0; i < solver.roots().size(); ++i) {
      auto root = solver.roots()(i);
      if (std::abs(root.imag()) > 1e-6) continue;
      long k = std::lround(root.real());
      if (k > tr.last_index(f) && close(fam.eigenvalue(static_cast<int>(k)), {lambda, 0.0}, tol.eig))
        throw Error(ErrorCode::SpectrumHit, "lambda = " + std::to_string(lambda) + " is the eigenvalue of " +
                                                fam.label + " k=" + std::to_string(k));
    }
  }
  SpectralVector out;
  auto apply_block = [&](int f, int k, const Eigen::VectorXd& x) {
    const ModeFamily& fam = sys.families[f];
    Eigen::MatrixXd m = lambda * Eigen::MatrixXd::Identity(fam.block_dim(k), fam.block_dim(k)) - fam.block(k);
    out.entries[{f, k}] = m.partialPivLu().solve(x);
  };
  for (const auto& [key, val] : v.entries) {
    if (tr.block_index(key.first, key.second) >= 0) continue;
    const ModeFamily& fam = sys.families.at(key.first);
    apply_block(key.first, key.second, v.coefficient(key.first, key.second, fam.block_dim(key.second)));
  }
  for (const auto& b : tr.blocks()) {
    Eigen::VectorXd x = v.coefficient(b.family, b.k, b.dim);
    if (x.norm() == 0.0) continue;
    apply_block(b.family, b.k, x);
  }
  return out;
}

}  // namespace rsfdi

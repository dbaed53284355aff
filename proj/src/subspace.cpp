#include "rsfdi/subspace.hpp"

#include <algorithm>
#include <cmath>

#include "rsfdi/errors.hpp"

namespace rsfdi {

namespace {

constexpr double kPromote = 1e-8;  // block-in-span residual for promotion

void require_compatible(const StructuredSubspace& a, const StructuredSubspace& b) {
  if (a.truncation_ptr() == b.truncation_ptr()) return;
  if (!a.truncation().compatible(b.truncation()))
    throw Error(ErrorCode::IncompatibleTruncation,
                "subspaces live on truncations of order " + std::to_string(a.trunc_order()) +
                    " and " + std::to_string(b.trunc_order()));
}

Eigen::MatrixXd leading_left(const Eigen::MatrixXd& m, int rank) {
  if (rank <= 0 || m.cols() == 0) return Eigen::MatrixXd(m.rows(), 0);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(std::min<int>(rank, svd.matrixU().cols()));
}

}  // namespace

Eigen::MatrixXd orth(const Eigen::MatrixXd& m, double rel_tol, RankInfo* info) {
  RankInfo local;
  if (m.cols() == 0 || m.rows() == 0 || m.cwiseAbs().maxCoeff() == 0.0) {
    if (info) *info = local;
    return Eigen::MatrixXd(m.rows(), 0);
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  double cut = rel_tol * std::max(1.0, s(0));
  int r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  local.rank = r;
  if (r > 0 && r < s.size()) {
    local.margin = s(r) > 0 ? s(r - 1) / s(r) : std::numeric_limits<double>::infinity();
    local.flagged = local.margin < default_tolerances().rank_margin;
  } else {
    local.margin = std::numeric_limits<double>::infinity();
  }
  if (info) *info = local;
  return svd.matrixU().leftCols(r);
}

Eigen::MatrixXd null_space(const Eigen::MatrixXd& m, double rel_tol, int cols) {
  const int n = cols >= 0 ? cols : static_cast<int>(m.cols());
  if (m.rows() == 0 || m.cwiseAbs().maxCoeff() == 0.0) return Eigen::MatrixXd::Identity(n, n);
  // null space = complement of the row space
  Eigen::MatrixXd row_space = orth(m.transpose(), rel_tol);
  return complement_basis(row_space, n);
}

Eigen::MatrixXd complement_basis(const Eigen::MatrixXd& q, int n) {
  if (q.cols() == 0) return Eigen::MatrixXd::Identity(n, n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
  Eigen::MatrixXd full = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  return full.rightCols(n - q.cols());
}

double projector_distance(const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2) {
  if (q1.cols() != q2.cols()) return 1.0;
  if (q1.cols() == 0) return 0.0;
  Eigen::MatrixXd r1 = q2 - q1 * (q1.transpose() * q2);
  Eigen::MatrixXd r2 = q1 - q2 * (q2.transpose() * q1);
  auto norm2 = [](const Eigen::MatrixXd& r) {
    if (r.cols() == 0) return 0.0;
    return Eigen::BDCSVD<Eigen::MatrixXd>(r).singularValues()(0);
  };
  return std::max(norm2(r1), norm2(r2));
}

int numerical_rank(const Eigen::MatrixXd& m, double rel_tol) {
  RankInfo info;
  orth(m, rel_tol, &info);
  return info.rank;
}

// ---------------------------------------------------------------- subspace

StructuredSubspace::StructuredSubspace(TruncationPtr tr) : tr_(std::move(tr)) {
  for (int f = 0; f < tr_->family_count(); ++f) sel_.push_back(IndexSet::none(tr_->family(f).k_min));
  finite_ = Eigen::MatrixXd(tr_->dim(), 0);
}

StructuredSubspace StructuredSubspace::zero(TruncationPtr tr) { return StructuredSubspace(std::move(tr)); }

StructuredSubspace StructuredSubspace::whole(TruncationPtr tr) {
  StructuredSubspace s(tr);
  for (int f = 0; f < tr->family_count(); ++f) s.sel_[f] = IndexSet::all(tr->family(f).k_min);
  return s;
}

StructuredSubspace StructuredSubspace::family_all(TruncationPtr tr, int family) {
  StructuredSubspace s(tr);
  s.sel_.at(family) = IndexSet::all(tr->family(family).k_min);
  return s;
}

StructuredSubspace StructuredSubspace::from_selections(TruncationPtr tr, std::vector<IndexSet> sel) {
  StructuredSubspace s(tr);
  if (sel.size() != s.sel_.size())
    throw Error(ErrorCode::Validation, "selection count does not match the family count");
  s.sel_ = std::move(sel);
  return s;
}

StructuredSubspace StructuredSubspace::from_dense(TruncationPtr tr, const Eigen::MatrixXd& cols,
                                                  const Tolerances& tol) {
  StructuredSubspace s(std::move(tr));
  s.set_finite(cols, tol);
  return s;
}

std::vector<int> StructuredSubspace::selected_blocks() const {
  std::vector<int> out;
  const auto& blocks = tr_->blocks();
  for (int i = 0; i < static_cast<int>(blocks.size()); ++i)
    if (sel_[blocks[i].family].contains(blocks[i].k)) out.push_back(i);
  return out;
}

bool StructuredSubspace::block_selected(int block_id) const {
  const auto& b = tr_->blocks()[block_id];
  return sel_[b.family].contains(b.k);
}

Eigen::MatrixXd StructuredSubspace::basis() const {
  Eigen::MatrixXd coords = tr_->coordinates(selected_blocks());
  Eigen::MatrixXd b(tr_->dim(), coords.cols() + finite_.cols());
  b << coords, finite_;
  return b;
}

int StructuredSubspace::window_dim() const {
  int d = static_cast<int>(finite_.cols());
  for (int bi : selected_blocks()) d += tr_->blocks()[bi].dim;
  return d;
}

bool StructuredSubspace::is_zero() const {
  if (finite_.cols() > 0) return false;
  for (const auto& s : sel_)
    if (!s.empty()) return false;
  return true;
}

bool StructuredSubspace::has_tail() const {
  for (const auto& s : sel_)
    if (s.tail()) return true;
  return false;
}

double StructuredSubspace::distance(const Eigen::VectorXd& x) const {
  Eigen::VectorXd r = x;
  for (int bi : selected_blocks()) {
    const auto& b = tr_->blocks()[bi];
    r.segment(b.offset, b.dim).setZero();
  }
  if (finite_.cols() > 0) r -= finite_ * (finite_.transpose() * r);
  return r.norm();
}

bool StructuredSubspace::contains_vector(const Eigen::VectorXd& x, double tol) const {
  return distance(x) <= tol * std::max(1.0, x.norm());
}

void StructuredSubspace::set_selection(int family, const IndexSet& s) {
  sel_.at(family) = s;
  set_finite(finite_);
}

void StructuredSubspace::set_finite(const Eigen::MatrixXd& cols, const Tolerances& tol) {
  Eigen::MatrixXd m = cols;
  if (m.cols() > 0) {
    double ref = m.colwise().norm().maxCoeff();
    if (ref > 0) m /= ref;
  }
  for (int bi : selected_blocks()) {
    const auto& b = tr_->blocks()[bi];
    m.middleRows(b.offset, b.dim).setZero();
  }
  finite_ = orth(m, tol.rank, &last_rank);
  canonicalize(tol);
}

void StructuredSubspace::canonicalize(const Tolerances& tol) {
  if (finite_.cols() == 0) return;
  int promoted_dim = 0;
  std::vector<int> promoted;
  const auto& blocks = tr_->blocks();
  for (int i = 0; i < static_cast<int>(blocks.size()); ++i) {
    const auto& b = blocks[i];
    if (sel_[b.family].contains(b.k)) continue;
    double inside = finite_.middleRows(b.offset, b.dim).squaredNorm();
    if (inside < 0.5) continue;
    double resid2 = b.dim - inside;
    if (resid2 <= kPromote * kPromote) {
      // every coordinate vector of the block must be inside, not just the total
      Eigen::MatrixXd rows = finite_.middleRows(b.offset, b.dim);
      Eigen::VectorXd per = (rows * rows.transpose()).diagonal();
      if ((per.array() >= 1.0 - kPromote * kPromote * 4).all()) {
        promoted.push_back(i);
        promoted_dim += b.dim;
      }
    }
  }
  if (promoted.empty()) return;
  const int keep = static_cast<int>(finite_.cols()) - promoted_dim;
  for (int i : promoted) {
    const auto& b = blocks[i];
    sel_[b.family] = sel_[b.family].unite(IndexSet::finite({b.k}, tr_->family(b.family).k_min));
    finite_.middleRows(b.offset, b.dim).setZero();
  }
  finite_ = leading_left(finite_, keep);
  (void)tol;
}

// ---------------------------------------------------------------- operations

StructuredSubspace span(TruncationPtr tr, const std::vector<SpectralVector>& vectors,
                        const Tolerances& tol) {
  if (vectors.empty()) return StructuredSubspace::zero(tr);
  Eigen::MatrixXd cols = tr->columns(vectors);
  return StructuredSubspace::from_dense(tr, cols, tol);
}

StructuredSubspace sum(const StructuredSubspace& a, const StructuredSubspace& b, const Tolerances& tol) {
  require_compatible(a, b);
  StructuredSubspace s(a.truncation_ptr());
  std::vector<IndexSet> sel;
  for (int f = 0; f < a.truncation().family_count(); ++f)
    sel.push_back(a.selection(f).unite(b.selection(f)));
  s = StructuredSubspace::from_selections(a.truncation_ptr(), sel);
  Eigen::MatrixXd cols(a.truncation().dim(), a.dim_finite_part() + b.dim_finite_part());
  cols << a.finite_part(), b.finite_part();
  s.set_finite(cols, tol);
  return s;
}

StructuredSubspace intersect(const StructuredSubspace& a, const StructuredSubspace& b, const Tolerances& tol) {
  require_compatible(a, b);
  std::vector<IndexSet> sel;
  for (int f = 0; f < a.truncation().family_count(); ++f)
    sel.push_back(a.selection(f).intersect(b.selection(f)));
  StructuredSubspace s = StructuredSubspace::from_selections(a.truncation_ptr(), sel);
  Eigen::MatrixXd ba = a.basis(), bb = b.basis();
  if (ba.cols() == 0 || bb.cols() == 0) return s;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(ba.transpose() * bb, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  int r = 0;
  while (r < sv.size() && sv(r) >= 1.0 - tol.rank) ++r;
  Eigen::MatrixXd dirs = ba * svd.matrixU().leftCols(r);
  const int keep = r - s.window_dim();
  for (int bi : s.selected_blocks()) {
    const auto& blk = a.truncation().blocks()[bi];
    dirs.middleRows(blk.offset, blk.dim).setZero();
  }
  Eigen::MatrixXd f = leading_left(dirs, keep);
  s.set_finite(f, tol);
  return s;
}

bool contains(const StructuredSubspace& outer, const StructuredSubspace& inner, const Tolerances& tol) {
  require_compatible(outer, inner);
  const Truncation& tr = outer.truncation();
  for (int f = 0; f < tr.family_count(); ++f) {
    IndexSet d = inner.selection(f).minus(outer.selection(f));
    if (d.tail()) return false;
    for (int k = tr.last_index(f) + 1; k < d.threshold(); ++k)
      if (d.contains(k)) return false;
  }
  Eigen::MatrixXd b = inner.basis();
  for (int j = 0; j < b.cols(); ++j)
    if (outer.distance(b.col(j)) > 10 * tol.rank) return false;
  return true;
}

StructuredSubspace orth_complement_within(const StructuredSubspace& s, const StructuredSubspace& ambient,
                                          const Tolerances& tol) {
  require_compatible(s, ambient);
  const Truncation& tr = s.truncation();
  std::vector<IndexSet> sel;
  for (int f = 0; f < tr.family_count(); ++f)
    sel.push_back(ambient.selection(f).minus(s.selection(f)));
  // blocks touched by the finite part of s cannot stay whole
  for (const auto& b : tr.blocks()) {
    if (s.dim_finite_part() == 0) break;
    if (s.finite_part().middleRows(b.offset, b.dim).norm() > 1e-12)
      sel[b.family] = sel[b.family].minus(IndexSet::finite({b.k}, tr.family(b.family).k_min));
  }
  StructuredSubspace out = StructuredSubspace::from_selections(s.truncation_ptr(), sel);
  Eigen::MatrixXd amb = ambient.basis();
  Eigen::MatrixXd sb = s.basis();
  Eigen::MatrixXd proj = amb - sb * (sb.transpose() * amb);
  RankInfo info;
  Eigen::MatrixXd q = orth(proj, tol.rank, &info);
  const int keep = info.rank - out.window_dim();
  for (int bi : out.selected_blocks()) {
    const auto& blk = tr.blocks()[bi];
    q.middleRows(blk.offset, blk.dim).setZero();
  }
  out.set_finite(leading_left(q, keep), tol);
  return out;
}

double projector_distance(const StructuredSubspace& a, const StructuredSubspace& b) {
  require_compatible(a, b);
  const Truncation& tr = a.truncation();
  for (int f = 0; f < tr.family_count(); ++f) {
    IndexSet d = a.selection(f).minus(b.selection(f)).unite(b.selection(f).minus(a.selection(f)));
    if (d.tail()) return 1.0;
    for (int k = tr.last_index(f) + 1; k < d.threshold(); ++k)
      if (d.contains(k)) return 1.0;
  }
  return projector_distance(a.basis(), b.basis());
}

// ---------------------------------------------------------------- kernels

bool ImplicitKernel::contains(const Eigen::VectorXd& x) const {
  if (rows.empty()) return true;
  return (c * x).cwiseAbs().maxCoeff() <= tol * std::max(1.0, x.norm());
}

ImplicitKernel kernel_of_output(const RieszSpectralSystem& sys, TruncationPtr tr,
                                const std::vector<int>& rows, const Tolerances& tol) {
  ImplicitKernel k;
  k.rows = rows;
  k.tol = tol.ip;
  Eigen::MatrixXd c = tr->C(sys);
  k.c.resize(static_cast<int>(rows.size()), tr->dim());
  for (std::size_t i = 0; i < rows.size(); ++i) k.c.row(i) = c.row(rows[i]);
  for (int f = 0; f < tr->family_count(); ++f) {
    bool all = true;
    for (int r : rows) all = all && sys.declared_orthogonal(r, f);
    k.inside.push_back(all ? IndexSet::all(tr->family(f).k_min) : IndexSet::none(tr->family(f).k_min));
  }
  return k;
}

ImplicitKernel kernel_of_output(const RieszSpectralSystem& sys, TruncationPtr tr, const Tolerances& tol) {
  std::vector<int> rows(sys.outputs());
  for (int j = 0; j < sys.outputs(); ++j) rows[j] = j;
  return kernel_of_output(sys, std::move(tr), rows, tol);
}

StructuredSubspace intersect(const StructuredSubspace& s, const ImplicitKernel& k, const Tolerances& tol) {
  const Truncation& tr = s.truncation();
  std::vector<IndexSet> sel;
  for (int f = 0; f < tr.family_count(); ++f) sel.push_back(s.selection(f).intersect(k.inside[f]));
  StructuredSubspace out = StructuredSubspace::from_selections(s.truncation_ptr(), sel);
  Eigen::MatrixXd b = s.basis();
  if (b.cols() == 0) return out;
  if (k.rows.empty()) {
    out = s;
    return out;
  }
  Eigen::MatrixXd cb = k.c * b;
  // absolute floor: constraints that vanish to tau_ip are treated as zero
  for (int i = 0; i < cb.rows(); ++i)
    for (int j = 0; j < cb.cols(); ++j)
      if (std::abs(cb(i, j)) <= tol.ip) cb(i, j) = 0.0;
  Eigen::MatrixXd v = b * null_space(cb, tol.rank, static_cast<int>(b.cols()));
  const int keep = static_cast<int>(v.cols()) - out.window_dim();
  for (int bi : out.selected_blocks()) {
    const auto& blk = tr.blocks()[bi];
    v.middleRows(blk.offset, blk.dim).setZero();
  }
  out.set_finite(leading_left(v, keep), tol);
  return out;
}

// ---------------------------------------------------------------- quotient

int QuotientMap::structural_dim() const {
  return static_cast<int>(representative.cols() - finite_basis.cols());
}

QuotientMap quotient_map(const StructuredSubspace& s, const Tolerances& tol) {
  (void)tol;
  QuotientMap q{s, {}, {}, {}, {}};
  const Truncation& tr = s.truncation();
  for (int f = 0; f < tr.family_count(); ++f) q.family_complement.push_back(s.selection(f).complement());
  std::vector<int> touched;
  for (int i = 0; i < static_cast<int>(tr.blocks().size()); ++i) {
    const auto& b = tr.blocks()[i];
    if (s.selection(b.family).contains(b.k)) continue;
    bool hit = s.dim_finite_part() > 0 && s.finite_part().middleRows(b.offset, b.dim).norm() > 1e-12;
    (hit ? touched : q.structural_blocks).push_back(i);
  }
  Eigen::MatrixXd et = tr.coordinates(touched);
  if (et.cols() > 0) {
    Eigen::MatrixXd local = orth(et.transpose() * s.finite_part(), 1e-9);
    q.finite_basis = et * complement_basis(local, static_cast<int>(et.cols()));
  } else {
    q.finite_basis = Eigen::MatrixXd(tr.dim(), 0);
  }
  Eigen::MatrixXd coords = tr.coordinates(q.structural_blocks);
  q.representative.resize(tr.dim(), coords.cols() + q.finite_basis.cols());
  q.representative << coords, q.finite_basis;
  return q;
}

}  // namespace rsfdi

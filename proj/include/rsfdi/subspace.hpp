#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "rsfdi/index_set.hpp"
#include "rsfdi/spectral.hpp"
#include "rsfdi/tolerances.hpp"

namespace rsfdi {

using TruncationPtr = std::shared_ptr<const Truncation>;

struct RankInfo {
  int rank = 0;
  double margin = 0.0;  // smallest kept / largest dropped singular value
  bool flagged = false; // margin below the configured ratio
};

// Orthonormal basis of range(m); rank decided relative to the largest
// singular value.
Eigen::MatrixXd orth(const Eigen::MatrixXd& m, double rel_tol = 1e-9, RankInfo* info = nullptr);
// Orthonormal basis of the right null space of m.
Eigen::MatrixXd null_space(const Eigen::MatrixXd& m, double rel_tol = 1e-9, int cols = -1);
// Orthonormal basis of the complement of range(q) (q orthonormal) in R^n.
Eigen::MatrixXd complement_basis(const Eigen::MatrixXd& q, int n);
// ||P1 - P2||_2 for two orthonormal bases
double projector_distance(const Eigen::MatrixXd& q1, const Eigen::MatrixXd& q2);
int numerical_rank(const Eigen::MatrixXd& m, double rel_tol = 1e-9);

// Whole sub-eigenspace selections per family plus a finite orthonormal part.
class StructuredSubspace {
 public:
  StructuredSubspace() = default;
  explicit StructuredSubspace(TruncationPtr tr);

  static StructuredSubspace zero(TruncationPtr tr);
  static StructuredSubspace whole(TruncationPtr tr);
  static StructuredSubspace family_all(TruncationPtr tr, int family);
  static StructuredSubspace from_selections(TruncationPtr tr, std::vector<IndexSet> sel);
  // span of dense columns, with whole blocks promoted to selections
  static StructuredSubspace from_dense(TruncationPtr tr, const Eigen::MatrixXd& cols,
                                       const Tolerances& tol = default_tolerances());

  const Truncation& truncation() const { return *tr_; }
  TruncationPtr truncation_ptr() const { return tr_; }
  int trunc_order() const { return tr_->order(); }

  const std::vector<IndexSet>& selections() const { return sel_; }
  const IndexSet& selection(int family) const { return sel_[family]; }
  const Eigen::MatrixXd& finite_part() const { return finite_; }
  int dim_finite_part() const { return static_cast<int>(finite_.cols()); }

  // ids of window blocks covered by the selections
  std::vector<int> selected_blocks() const;
  bool block_selected(int block_id) const;
  // orthonormal basis of the subspace restricted to the window
  Eigen::MatrixXd basis() const;
  int window_dim() const;
  bool is_zero() const;
  // true when some selection continues past the window
  bool has_tail() const;

  // membership of a dense vector (window coordinates)
  bool contains_vector(const Eigen::VectorXd& x, double tol = 1e-9) const;
  // distance of x to the subspace (Euclidean)
  double distance(const Eigen::VectorXd& x) const;

  // replaces finite_ by an orthonormal basis of range(cols) with the selected
  // coordinates projected out, then promotes whole blocks
  void set_finite(const Eigen::MatrixXd& cols, const Tolerances& tol = default_tolerances());
  void set_selection(int family, const IndexSet& s);
  void canonicalize(const Tolerances& tol = default_tolerances());

  RankInfo last_rank;

 private:
  TruncationPtr tr_;
  std::vector<IndexSet> sel_;
  Eigen::MatrixXd finite_;
};

StructuredSubspace span(TruncationPtr tr, const std::vector<SpectralVector>& vectors,
                        const Tolerances& tol = default_tolerances());
StructuredSubspace sum(const StructuredSubspace& a, const StructuredSubspace& b,
                       const Tolerances& tol = default_tolerances());
StructuredSubspace intersect(const StructuredSubspace& a, const StructuredSubspace& b,
                             const Tolerances& tol = default_tolerances());
bool contains(const StructuredSubspace& outer, const StructuredSubspace& inner,
              const Tolerances& tol = default_tolerances());
inline int dim_finite_part(const StructuredSubspace& s) { return s.dim_finite_part(); }
StructuredSubspace orth_complement_within(const StructuredSubspace& s,
                                          const StructuredSubspace& ambient,
                                          const Tolerances& tol = default_tolerances());
double projector_distance(const StructuredSubspace& a, const StructuredSubspace& b);

// ker of the listed output rows, never materialized
struct ImplicitKernel {
  std::vector<int> rows;
  Eigen::MatrixXd c;                // |rows| x window dim
  std::vector<IndexSet> inside;     // families declared orthogonal to every row
  double tol = 1e-9;

  bool contains(const Eigen::VectorXd& x) const;
};

ImplicitKernel kernel_of_output(const RieszSpectralSystem& sys, TruncationPtr tr,
                                const std::vector<int>& rows,
                                const Tolerances& tol = default_tolerances());
ImplicitKernel kernel_of_output(const RieszSpectralSystem& sys, TruncationPtr tr,
                                const Tolerances& tol = default_tolerances());
// S intersected with an implicit kernel by constraint stacking
StructuredSubspace intersect(const StructuredSubspace& s, const ImplicitKernel& k,
                             const Tolerances& tol = default_tolerances());

// Canonical projection X -> X/S in orthonormal representative coordinates:
// untouched unselected blocks keep their coordinates, the blocks that meet the
// kernel's finite part are replaced by the complement of that part.
struct QuotientMap {
  StructuredSubspace kernel;
  std::vector<IndexSet> family_complement;
  std::vector<int> structural_blocks;
  Eigen::MatrixXd finite_basis;        // n x n_f
  Eigen::MatrixXd representative;      // n x (n_s + n_f) = [coords, finite_basis]

  int dim() const { return static_cast<int>(representative.cols()); }
  int structural_dim() const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return representative.transpose() * x; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const { return representative.transpose() * x; }
  Eigen::VectorXd embed(const Eigen::VectorXd& w) const { return representative * w; }
};

QuotientMap quotient_map(const StructuredSubspace& s, const Tolerances& tol = default_tolerances());

}  // namespace rsfdi

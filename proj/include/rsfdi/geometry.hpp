#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsfdi/spectral.hpp"
#include "rsfdi/subspace.hpp"

namespace rsfdi {

// A system together with its truncation and the dense window matrices.
struct Model {
  std::shared_ptr<const RieszSpectralSystem> owned;
  const RieszSpectralSystem* sys = nullptr;
  TruncationPtr tr;
  Eigen::MatrixXd A;
  Eigen::MatrixXd C;
  Tolerances tol;

  int n() const { return tr->dim(); }
  int q() const { return static_cast<int>(C.rows()); }
};

Model make_model(const RieszSpectralSystem& sys, int order = kDefaultAnalysisModes,
                 const Tolerances& tol = default_tolerances());

enum class TailStatus { Included, Excluded, Unverified };
const char* to_string(TailStatus s);

struct UnobservableResult {
  StructuredSubspace N;
  std::vector<TailStatus> tails;       // per family (finite families: Excluded)
  std::vector<int> unverified;         // families with an undecided tail
  bool verified() const { return unverified.empty(); }
};

// Largest sum of sub-eigenspaces inside ker C (rows as given; all rows by default).
UnobservableResult unobservable_subspace(const Model& m, const std::vector<int>& rows);
UnobservableResult unobservable_subspace(const Model& m);

struct AUnobservableResult {
  StructuredSubspace N_A;
  int steps = 0;
  bool converged = false;
  bool agrees_with_N = false;
};

// intersection of ker(C A^n), n = 0..n_max, on the window
AUnobservableResult a_unobservable_subspace(const Model& m, int n_max);

struct ConditionedInvariantResult {
  StructuredSubspace W_star;
  StructuredSubspace W_phi;
  StructuredSubspace W_f;
  StructuredSubspace Z_star;
  StructuredSubspace W_ell;
  StructuredSubspace L_N;
  int iterations = 0;
  int dim_bound = 0;
  bool converged = false;
  std::vector<int> z_dims;
};

ConditionedInvariantResult min_conditioned_invariant(const Model& m, const std::vector<SpectralVector>& L);

// Smallest A-invariant subspace containing L_N (support scan of simple modes,
// Krylov closure inside repeated groups, tail rules extend the selection).
StructuredSubspace compute_W_ell(const Model& m, const std::vector<SpectralVector>& L_N);

struct FriendOperator {
  Eigen::MatrixXd D;                 // n x q, window coordinates
  double invariance_residual = 0.0;  // max dist((A+DC)w, W*) / (1 + |Aw|)
  double dc_wphi = 0.0;              // max |D C w| over the W_phi basis
  bool certified = false;
  std::string befriends;
};

FriendOperator friend_operator(const Model& m, const StructuredSubspace& W_star,
                               const StructuredSubspace& W_phi, const StructuredSubspace& W_f);

struct UnobservabilityResult {
  StructuredSubspace S_star;
  StructuredSubspace W_star;
  StructuredSubspace W_phi;
  StructuredSubspace W_f;
  StructuredSubspace W_phi_f;
  StructuredSubspace N;
  FriendOperator D;
  Eigen::MatrixXd H;                 // q_h x q, orthonormal rows
  std::vector<TailStatus> tails;
  std::vector<int> unverified;
  bool zero_friend_admissible = false;
  int ci_iterations = 0;
  // certificate values
  double s_in_ker_hc = 0.0;          // max |HC s| over the S* basis
  bool contains_w = false;
  bool verified() const { return unverified.empty(); }
};

UnobservabilityResult min_unobservability_subspace(const Model& m, const std::vector<SpectralVector>& L);

struct InvarianceVerdict {
  bool invariant = false;
  StructuredSubspace W_phi;
  StructuredSubspace W_f;
  double residual = 0.0;
};

InvarianceVerdict is_T_conditioned_invariant(const Model& m, const StructuredSubspace& W);
InvarianceVerdict is_controlled_invariant_dual(const Model& m, const StructuredSubspace& V);

struct SolvabilityReport {
  int fault = 0;
  int intersection_dim = 0;
  bool necessary_ok = false;
  UnobservabilityResult U;
};

SolvabilityReport check_fdi_necessary(const Model& m, int fault);

// dense helpers shared with the synthesis module
Eigen::MatrixXd largest_invariant_subspace(const Eigen::MatrixXd& X, const Eigen::MatrixXd& W,
                                           double rel_tol = 1e-9);
// largest X-invariant subspace inside ker(Q) (unobservable subspace of (Q, X))
Eigen::MatrixXd unobservable_dense(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Q,
                                   double zero_tol = 1e-9, double rel_tol = 1e-9);

}  // namespace rsfdi

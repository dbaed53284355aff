#pragma once

#include <algorithm>
#include <complex>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rsfdi/tolerances.hpp"

namespace rsfdi {

// lambda(k) = sum re[i] k^i + log_coeff*log(k) + j * sum im[i] k^i
struct EigenRule {
  std::vector<double> re;
  std::vector<double> im;
  double log_coeff = 0.0;

  static EigenRule poly(std::vector<double> coeffs, std::vector<double> imag = {});
  static EigenRule affine_ksq(double a, double b);
  static EigenRule logarithmic(double a, double b);

  std::complex<double> operator()(int k) const;
  bool is_complex() const;
  int real_degree() const;
  int imag_degree() const;
  bool same_as(const EigenRule& o) const;
};

struct ModeFamily {
  std::string label;
  EigenRule rule;
  int k_min = 1;
  // number of modes; 0 for an infinite family
  int count = 0;
  // index -> Jordan chain lengths for the finitely many repeated modes
  std::map<int, std::vector<int>> jordan;
  // optional r x r Gram block of the Riesz basis; empty means identity
  Eigen::MatrixXd gram;

  int real_dim() const { return rule.is_complex() ? 2 : 1; }
  bool infinite() const { return count == 0; }
  int window(int order) const { return infinite() ? order : std::min(order, count); }
  int multiplicity(int k) const;
  int block_dim(int k) const { return real_dim() * multiplicity(k); }
  std::complex<double> eigenvalue(int k) const { return rule(k); }
  // real matrix of A restricted to the (generalized) eigenspace of index k
  Eigen::MatrixXd block(int k) const;
  Eigen::MatrixXd gram_block() const;
};

// c / k^p on indices k >= k0 of one family (c has the family's real_dim)
struct TailTerm {
  int family = 0;
  Eigen::VectorXd c;
  double p = 1.0;
  int k0 = 1;
};

struct SpectralVector {
  std::map<std::pair<int, int>, Eigen::VectorXd> entries;
  std::vector<TailTerm> tail;

  // coefficient of block (family, k); `dim` is the block dimension
  Eigen::VectorXd coefficient(int family, int k, int dim) const;
  void add(int family, int k, const Eigen::VectorXd& v);
  bool has_tail() const { return !tail.empty(); }
  int max_index(int family) const;

  SpectralVector& operator+=(const SpectralVector& o);
  SpectralVector operator*(double a) const;
  SpectralVector operator+(const SpectralVector& o) const;
};

struct OrthogonalityFact {
  int output = 0;
  int family = 0;
};

struct RieszSpectralSystem {
  std::string name;
  std::vector<ModeFamily> families;
  std::vector<SpectralVector> B;
  std::vector<SpectralVector> C;
  std::vector<SpectralVector> faults;
  std::vector<OrthogonalityFact> orthogonality;
  // user tail bound for sum 1/d_i^2 beyond the window; negative means none
  double gap_tail_bound = -1.0;

  int inputs() const { return static_cast<int>(B.size()); }
  int outputs() const { return static_cast<int>(C.size()); }
  int fault_count() const { return static_cast<int>(faults.size()); }
  int family_index(const std::string& label) const;
  bool declared_orthogonal(int output, int family) const;
};

// Dense coordinates of the first `order` indices of every family.
class Truncation {
 public:
  struct Block {
    int family;
    int k;
    int offset;
    int dim;
    std::complex<double> lambda;
  };

  Truncation(const RieszSpectralSystem& sys, int order);

  int order() const { return order_; }
  int dim() const { return dim_; }
  int family_count() const { return static_cast<int>(families_.size()); }
  const std::vector<Block>& blocks() const { return blocks_; }
  const ModeFamily& family(int f) const { return families_[f]; }
  // index of block (family, k) or -1 when outside the window
  int block_index(int family, int k) const;
  int last_index(int family) const {
    return families_[family].k_min + families_[family].window(order_) - 1;
  }

  Eigen::MatrixXd A() const;
  Eigen::VectorXd dense(const SpectralVector& v) const;
  // Euclidean norm of the part of v beyond the window (tail terms only)
  double tail_residue(const SpectralVector& v) const;
  SpectralVector vector(const Eigen::VectorXd& x, double drop = 0.0) const;
  // row j = Gram-weighted coefficients of c_j, so that y = C x
  Eigen::MatrixXd C(const RieszSpectralSystem& sys) const;
  Eigen::MatrixXd B(const RieszSpectralSystem& sys) const;
  Eigen::MatrixXd L(const RieszSpectralSystem& sys) const;
  Eigen::MatrixXd columns(const std::vector<SpectralVector>& vs) const;
  // basis of all coordinates of the listed blocks
  Eigen::MatrixXd coordinates(const std::vector<int>& block_ids) const;
  bool compatible(const Truncation& o) const;

 private:
  int order_;
  int dim_ = 0;
  std::vector<ModeFamily> families_;
  std::vector<Block> blocks_;
  std::vector<int> family_start_;
};

enum class GapStatus { Pass, Fail, Unverified };
const char* to_string(GapStatus s);

struct ValidationReport {
  struct Check {
    std::string name;
    bool passed;
    std::string detail;
  };
  // groups of (family, k) sharing one eigenvalue, plus declared Jordan modes
  std::vector<std::vector<std::pair<int, int>>> repeated;
  bool repeats_finite = true;
  double sup_re = 0.0;
  double gap_partial_sum = 0.0;
  double gap_tail_bound = 0.0;  // NaN when no bound is available
  double gap_exponent = 0.0;    // fitted d_i ~ i^beta over the upper window
  GapStatus gap = GapStatus::Unverified;
  std::vector<Check> checks;
  bool passed = false;
};

ValidationReport validate_regular_rs(const RieszSpectralSystem& sys,
                                     int order = kDefaultAnalysisModes,
                                     const Tolerances& tol = default_tolerances());

SpectralVector apply_A(const RieszSpectralSystem& sys, const SpectralVector& v);

struct InnerProduct {
  double value = 0.0;
  double tail_bound = 0.0;  // bound on the neglected part, 0 when exact
  bool analytic = true;
};

InnerProduct inner_product(const RieszSpectralSystem& sys, const SpectralVector& c,
                           const SpectralVector& v, int order = kDefaultAnalysisModes);

Eigen::VectorXd output_map(const RieszSpectralSystem& sys, const SpectralVector& x,
                           int order = kDefaultAnalysisModes);

// (lambda I - A)^{-1} v.  Tail rules are evaluated up to `order` first.
SpectralVector resolvent_apply(const RieszSpectralSystem& sys, double lambda,
                               const SpectralVector& v, int order = kDefaultAnalysisModes,
                               const Tolerances& tol = default_tolerances());

// sup of Re lambda_k over k >= k_from (+inf when unbounded, -inf for no modes)
double sup_re_from(const ModeFamily& fam, int k_from);

// sum_{k >= k0} k^-s for s > 1
double power_tail_sum(double s, int k0);

}  // namespace rsfdi

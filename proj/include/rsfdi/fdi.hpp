#pragma once

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsfdi/geometry.hpp"

namespace rsfdi {

// X/S* in representative coordinates: window block plus the structural
// families that continue past the window with their own eigenvalue rules.
struct QuotientSystem {
  QuotientMap P;
  Eigen::MatrixXd A_p;  // P (A + DC) embed
  Eigen::MatrixXd M;    // M P = H C
  Eigen::MatrixXd H;
  Eigen::MatrixXd D;
  double mp_residual = 0.0;
  std::vector<int> tail_families;  // families present in the quotient past the window
  double tail_sup_re = 0.0;        // -inf when the quotient is finite

  int dim() const { return static_cast<int>(A_p.rows()); }
  bool finite() const { return tail_families.empty(); }
};

QuotientSystem quotient_system(const Model& m, const UnobservabilityResult& U);

enum class ObserverStrategy { Case1, Case2, Lyapunov };
enum class CertificateKind { EigenvalueMargin, Lyapunov };
const char* to_string(ObserverStrategy s);
const char* to_string(CertificateKind k);

struct StabilityCertificate {
  CertificateKind kind = CertificateKind::EigenvalueMargin;
  double margin = 0.0;
  Eigen::MatrixXd lyapunov_block;  // P_e on the window (LYAPUNOV only)
  double lyapunov_residual = 0.0;
  double tail_bound = 0.0;         // sup of the diagonal tail entries -1/(2 Re lambda_k)
  double max_re = 0.0;
};

struct ObserverOptions {
  ObserverStrategy strategy = ObserverStrategy::Case1;
  double margin_req = 0.05;
  // placement targets for the unstable part; empty means reflect across -margin_req
  std::vector<std::complex<double>> targets;
  // LYAPUNOV: the proposed gain (empty means zero)
  Eigen::MatrixXd proposed;
};

struct ObserverGain {
  Eigen::MatrixXd D_o;
  StabilityCertificate cert;
  int unstable_dim = 0;
  std::vector<std::complex<double>> placed;
};

ObserverGain observer_gain(const QuotientSystem& qs, const ObserverOptions& opt = {});

struct DetectionFilter {
  int fault = 0;
  QuotientSystem Q;
  Eigen::MatrixXd F, G, E, M, H, D_o;
  Eigen::MatrixXd PL;  // P L_i, the fault direction in filter coordinates
  double decoupling = 0.0;   // max_j!=i |P L_j|
  double sensitivity = 0.0;  // |P L_i|
  StabilityCertificate cert;
  ObserverStrategy strategy = ObserverStrategy::Case1;

  int dim() const { return static_cast<int>(F.rows()); }
};

DetectionFilter build_detection_filter(const Model& m, const UnobservabilityResult& U, int fault,
                                       const ObserverGain& gain);

StabilityCertificate verify_error_dynamics(const DetectionFilter& f, ObserverStrategy strategy);

// X with F^T X + X F = -Q (complex Schur, column substitution)
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& F, const Eigen::MatrixXd& Q);

// S*, quotient, gain and filter for one fault
struct FilterDesign {
  SolvabilityReport necessary;  // carries the UnobservabilityResult
  ObserverGain gain;
  DetectionFilter filter;
};

FilterDesign design_filter(const Model& m, int fault, const ObserverOptions& opt = {});

}  // namespace rsfdi

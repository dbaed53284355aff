#pragma once

namespace rsfdi {

struct Tolerances {
  double ip = 1e-9;      // inner product zero test
  double orth = 1e-10;   // orthonormality of finite parts
  double eig = 1e-9;     // eigenvalue coincidence
  double rank = 1e-9;    // relative singular value cutoff
  double stationary = 1e-9;  // projector distance for Z_k stationarity
  double mp = 1e-10;     // residual of M*P = H*C
  double rank_margin = 1e3;  // kept/dropped ratio below which a rank call is flagged
};

inline const Tolerances& default_tolerances() {
  static const Tolerances t;
  return t;
}

constexpr int kDefaultAnalysisModes = 200;
constexpr int kDefaultSimulationModes = 50;

}  // namespace rsfdi

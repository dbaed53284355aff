#include "rsfdi/example.hpp"

#include <cmath>

#include <boost/math/constants/constants.hpp>

namespace rsfdi {

namespace {
const double kPi = boost::math::constants::pi<double>();

SpectralVector tail_vector(int family, double p) {
  SpectralVector v;
  v.tail.push_back(TailTerm{family, Eigen::VectorXd::Ones(1), p, 6});
  return v;
}
}  // namespace

double rd_c1_coefficient(int k) {
  return 2.0 * std::sqrt(2.0 / kPi) * (1.0 - std::cos(k * kPi / 4.0)) / k;
}

double rd_c2_coefficient(int k) {
  return 2.0 * std::sqrt(2.0 / kPi) * (std::cos(3.0 * k * kPi / 4.0) - std::cos(k * kPi)) / k;
}

RieszSpectralSystem reaction_diffusion_system(int data_modes) {
  RieszSpectralSystem sys;
  sys.name = "reaction_diffusion";
  ModeFamily f1;
  f1.label = "fam1";
  f1.rule = EigenRule::affine_ksq(0.1, -1.0);
  ModeFamily f2;
  f2.label = "fam2";
  f2.rule = EigenRule::affine_ksq(-0.1, -1.0);
  sys.families = {f1, f2};

  SpectralVector c1, c2;
  for (int k = 1; k <= data_modes; ++k) {
    Eigen::VectorXd a(1), b(1);
    a(0) = rd_c1_coefficient(k);
    b(0) = rd_c2_coefficient(k);
    // cos(k pi/4) and friends leave round-off where the exact value is 0
    if (std::abs(a(0)) < 1e-14) a(0) = 0.0;
    if (std::abs(b(0)) < 1e-14) b(0) = 0.0;
    if (a(0) != 0.0) c1.add(0, k, a);
    if (b(0) != 0.0) c2.add(1, k, b);
  }
  sys.C = {c1, c2};
  sys.B = {tail_vector(0, 1.0), tail_vector(1, 2.0)};
  sys.faults = sys.B;
  sys.orthogonality = {OrthogonalityFact{0, 1}, OrthogonalityFact{1, 0}};
  return sys;
}

}  // namespace rsfdi

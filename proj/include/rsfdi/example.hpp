#pragma once

#include "rsfdi/spectral.hpp"

namespace rsfdi {

// Two-component reaction-diffusion system on [0, pi] with coupling 0.1,
// Dirichlet modes sqrt(2/pi) sin(kz) [1, +-1].  Outputs integrate the state
// against indicators of [0, pi/4] and [3pi/4, pi]; their coefficients are written out
// for k <= data_modes.
RieszSpectralSystem reaction_diffusion_system(int data_modes = 400);

// <c1, phi_k^1> and <c2, phi_k^2>
double rd_c1_coefficient(int k);
double rd_c2_coefficient(int k);

}  // namespace rsfdi

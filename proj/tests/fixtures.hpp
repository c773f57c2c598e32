#pragma once

#include "axmlp/phantom.hpp"

namespace axmlp::testing {

/// Phantom geometry sized for a 48x48x40 grid, used by the harness tests and
/// the desk-scale learning run.
inline data::PhantomSpec desk_phantom_spec() {
  data::PhantomSpec spec;
  spec.shape = {48, 48, 40};
  spec.cavity_radius_min = {8, 6, 5.5};
  spec.cavity_radius_max = {10, 8, 6.5};
  spec.cavity_separation = 0.25;
  spec.arc_radius_min = 2.5;
  spec.arc_radius_max = 3.25;
  spec.ribbon_length_min = 7;
  spec.ribbon_length_max = 10;
  return spec;
}

}  // namespace axmlp::testing

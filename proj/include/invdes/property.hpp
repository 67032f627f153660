#pragma once

#include "invdes/microstructure.hpp"

namespace invdes {

// Deterministic surrogate forward simulator. Assigns an optical-absorption
// value y in [0.5, 0.8] from two phase-geometry features, so the target set
// {0.55 .. 0.75} is attainable. Pixels are binarized by sign before feature
// extraction.

/// Positive-phase pixel count / side^2.
double volume_fraction(const Microstructure& m);

/// Fraction of 4-neighbor pixel pairs with opposite phase, over all
/// horizontal and vertical pairs.
double interface_density(const Microstructure& m);

/// y = 0.5 + 0.3*(0.6*(4*vf*(1-vf)) + 0.4*interface_density).
double absorption(const Microstructure& m);

}  // namespace invdes

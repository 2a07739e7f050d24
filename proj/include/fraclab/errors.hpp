#pragma once

#include <stdexcept>
#include <string>

namespace fraclab {

// Base class for every failure signalled by the library. Callers that want
// blanket handling catch this; tests catch the specific subtype.
struct error : std::runtime_error {
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Precondition violations on user-supplied values (bad exponents, bad grids,
// malformed configs). Message names the offending field or constraint.
struct invalid_argument_error : error {
    using error::error;
};

// A profile was used beyond its grid without a declared tail model while the
// exterior contribution is non-negligible.
struct tail_required : error {
    using error::error;
};

// The near-origin contribution of the singular integral failed its
// consistency check; happens only for inputs that are not C^2 at the
// evaluation radius.
struct quadrature_diverged : error {
    using error::error;
};

// Gagliardo seminorm (or a tail-closed mass integral) is infinite for the
// declared tail decay.
struct divergent_seminorm : error {
    using error::error;
};

// Spectral oracle: samples do not decay at the box boundary, so the periodic
// transform would alias the tail.
struct boundary_leak : error {
    using error::error;
};

// Spectral oracle: field is not radially symmetric within tolerance.
struct not_radial : error {
    using error::error;
};

// Extension trace: the two-parameter boundary fit is numerically degenerate.
struct fit_ill_conditioned : error {
    using error::error;
};

// Manifold projection of the zero profile (or of one with vanishing mass).
struct zero_mass : error {
    using error::error;
};

// Diagnostics fit window contains non-positive values, so log-log fitting is
// undefined.
struct nonpositive_values : error {
    using error::error;
};

// Run configuration is malformed; message names the key or constraint.
struct config_error : error {
    using error::error;
};

// A linear or nonlinear solve failed to reach its residual target.
struct solver_stagnation : error {
    using error::error;
};

} // namespace fraclab

#pragma once

// Fourier-multiplier evaluation of the fractional Laplacian on a uniform
// periodic grid (N = 1 or 2).  This is a cross-check oracle for the radial
// collocation engine, not a solver component: periodization stands in for
// R^N, which is only legitimate for data that decays to round-off inside the
// box — hence the boundary-leak guard on entry.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <fftw3.h>

#include "errors.hpp"
#include "model.hpp"

namespace fraclab {

// ---------------------------------------------------------------------------
// Uniform periodic field on [-L, L)^dim, row-major, M samples per axis.
// Lattice points are exact multiples of the spacing: x_j = h*(j - M/2).
// ---------------------------------------------------------------------------
struct UniformField {
    int dim = 1;                 // ambient dimension, 1 or 2
    double L = 0.0;              // box halfwidth
    std::size_t M = 0;           // samples per axis, power of two
    std::vector<double> values;  // size M^dim, row-major (x outer, y inner)

    double h() const { return 2.0 * L / double(M); }
    double coord(std::size_t j) const {
        return h() * (double(j) - 0.5 * double(M));
    }
    double cell_volume() const {
        return dim == 1 ? h() : h() * h();
    }
    std::size_t size() const { return values.size(); }
};

namespace detail {

inline bool is_pow2(std::size_t m) { return m >= 2 && (m & (m - 1)) == 0; }

inline void validate_field(const UniformField& f, const char* where) {
    if (f.dim != 1 && f.dim != 2)
        throw invalid_argument_error(std::string(where) + ": dim must be 1 or 2");
    if (!is_pow2(f.M))
        throw invalid_argument_error(std::string(where) +
                                     ": M must be a power of two >= 2");
    if (!(f.L > 0.0))
        throw invalid_argument_error(std::string(where) + ": L must be > 0");
    std::size_t want = f.M;
    if (f.dim == 2) want *= f.M;
    if (f.values.size() != want)
        throw invalid_argument_error(std::string(where) +
                                     ": values size does not match M^dim");
    for (double v : f.values)
        if (!std::isfinite(v))
            throw invalid_argument_error(std::string(where) +
                                         ": values must be finite");
}

// FFTW's planner is not thread-safe; creation/destruction is serialized.
inline std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}

// Signed integer frequency index of DFT bin k (standard wrap at M/2).
inline double freq_index(std::size_t k, std::size_t M) {
    return k <= M / 2 ? double(k) : double(k) - double(M);
}

} // namespace detail

template <class F>
UniformField sample_line(double L, std::size_t M, F&& f) {
    UniformField u;
    u.dim = 1;
    u.L = L;
    u.M = M;
    u.values.resize(M);
    for (std::size_t j = 0; j < M; ++j) u.values[j] = f(u.coord(j));
    detail::validate_field(u, "sample_line");
    return u;
}

template <class F>
UniformField sample_plane(double L, std::size_t M, F&& f) {
    UniformField u;
    u.dim = 2;
    u.L = L;
    u.M = M;
    u.values.resize(M * M);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j)
            u.values[i * M + j] = f(u.coord(i), u.coord(j));
    detail::validate_field(u, "sample_plane");
    return u;
}

// ---------------------------------------------------------------------------
// (-Δ)^s via the multiplier |ξ|^{2s}, ξ_k = (π/L)·k on the dual lattice.
//
// enforce_decay guards the periodization: data must fall to < 1e-12 of its
// max on the box faces, otherwise the periodic images contaminate the
// result (boundary_leak).  Exactly lattice-periodic inputs (plane waves,
// already-transformed fields) carry no periodization error at all; passing
// enforce_decay = false asserts that and skips the guard.
// ---------------------------------------------------------------------------
inline UniformField fraclap_spectral(const UniformField& f, double s,
                                     bool enforce_decay = true) {
    detail::validate_field(f, "fraclap_spectral");
    if (!(s > 0.0) || s > 1.0)
        throw invalid_argument_error("fraclap_spectral: s must be in (0, 1]");

    const std::size_t M = f.M;
    double vmax = 0.0;
    for (double v : f.values) vmax = std::max(vmax, std::abs(v));
    if (enforce_decay && vmax > 0.0) {
        double edge = 0.0;
        if (f.dim == 1) {
            edge = std::max(std::abs(f.values[0]), std::abs(f.values[M - 1]));
        } else {
            for (std::size_t j = 0; j < M; ++j) {
                edge = std::max(edge, std::abs(f.values[j]));                  // x = -L
                edge = std::max(edge, std::abs(f.values[(M - 1) * M + j]));    // x = L-h
                edge = std::max(edge, std::abs(f.values[j * M]));              // y = -L
                edge = std::max(edge, std::abs(f.values[j * M + (M - 1)]));    // y = L-h
            }
        }
        if (edge > 1e-12 * vmax)
            throw boundary_leak(
                "fraclap_spectral: field does not decay at the box boundary "
                "(edge/max = " +
                std::to_string(edge / vmax) + "); enlarge the box");
    }

    const std::size_t n = f.values.size();
    std::vector<std::complex<double>> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = f.values[i];

    auto* fb = reinterpret_cast<fftw_complex*>(buf.data());
    fftw_plan fwd, bwd;
    {
        std::lock_guard<std::mutex> lk(detail::fftw_mutex());
        fwd = f.dim == 1
                  ? fftw_plan_dft_1d(int(M), fb, fb, FFTW_FORWARD, FFTW_ESTIMATE)
                  : fftw_plan_dft_2d(int(M), int(M), fb, fb, FFTW_FORWARD,
                                     FFTW_ESTIMATE);
    }
    fftw_execute(fwd);

    const double base = pi / f.L;
    if (f.dim == 1) {
        for (std::size_t k = 0; k < M; ++k) {
            const double xi = base * detail::freq_index(k, M);
            buf[k] *= (k == 0) ? 0.0 : std::pow(std::abs(xi), 2.0 * s);
        }
    } else {
        for (std::size_t kx = 0; kx < M; ++kx)
            for (std::size_t ky = 0; ky < M; ++ky) {
                const double xx = base * detail::freq_index(kx, M);
                const double yy = base * detail::freq_index(ky, M);
                const double xi2 = xx * xx + yy * yy;
                buf[kx * M + ky] *= (xi2 == 0.0) ? 0.0 : std::pow(xi2, s);
            }
    }

    {
        std::lock_guard<std::mutex> lk(detail::fftw_mutex());
        fftw_destroy_plan(fwd);
        bwd = f.dim == 1
                  ? fftw_plan_dft_1d(int(M), fb, fb, FFTW_BACKWARD, FFTW_ESTIMATE)
                  : fftw_plan_dft_2d(int(M), int(M), fb, fb, FFTW_BACKWARD,
                                     FFTW_ESTIMATE);
    }
    fftw_execute(bwd);
    {
        std::lock_guard<std::mutex> lk(detail::fftw_mutex());
        fftw_destroy_plan(bwd);
    }

    UniformField out = f;
    const double scale = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = buf[i].real() * scale;
    return out;
}

// ---------------------------------------------------------------------------
// Radial restriction: bins samples by their exact lattice radius
// (r² = h²·(a² + b²) with integer a, b), averages each bin, and returns a
// profile with a Zero tail.  Symmetry is checked on mirrored sample pairs
// (central and per-axis reflections, plus transposition in 2-D).
// ---------------------------------------------------------------------------
inline RadialProfile restrict_to_radial(const UniformField& f) {
    detail::validate_field(f, "restrict_to_radial");
    const std::size_t M = f.M;
    double vmax = 0.0;
    for (double v : f.values) vmax = std::max(vmax, std::abs(v));
    const double tol = 1e-8 * (vmax > 0.0 ? vmax : 1.0);

    auto mirror = [&](std::size_t j) { return (M - j) % M; };
    double defect = 0.0;
    if (f.dim == 1) {
        for (std::size_t j = 0; j < M; ++j)
            defect = std::max(defect,
                              std::abs(f.values[j] - f.values[mirror(j)]));
    } else {
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < M; ++j) {
                const double v = f.values[i * M + j];
                defect = std::max(defect,
                                  std::abs(v - f.values[mirror(i) * M + mirror(j)]));
                defect = std::max(defect,
                                  std::abs(v - f.values[i * M + mirror(j)]));
                defect = std::max(defect, std::abs(v - f.values[j * M + i]));
            }
    }
    if (defect > tol)
        throw not_radial("restrict_to_radial: mirrored samples differ by " +
                         std::to_string(defect) + " (max " + std::to_string(tol) +
                         ")");

    // key = squared lattice radius in units of h², exactly an integer
    std::map<long long, std::pair<double, long long>> bins;
    const long long half = (long long)(M / 2);
    if (f.dim == 1) {
        for (std::size_t j = 0; j < M; ++j) {
            const long long a = (long long)(j)-half;
            bins[a * a].first += f.values[j];
            bins[a * a].second += 1;
        }
    } else {
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < M; ++j) {
                const long long a = (long long)(i)-half;
                const long long b = (long long)(j)-half;
                bins[a * a + b * b].first += f.values[i * M + j];
                bins[a * a + b * b].second += 1;
            }
    }

    std::vector<double> nodes, vals;
    nodes.reserve(bins.size());
    vals.reserve(bins.size());
    for (const auto& [k, acc] : bins) {
        nodes.push_back(f.h() * std::sqrt(double(k)));
        vals.push_back(acc.first / double(acc.second));
    }
    auto g = grid_from_nodes(std::move(nodes), f.dim);
    return make_profile(g, std::move(vals), TailModel::zero());
}

} // namespace fraclab

#pragma once

// Harmonic extension of a radial profile to the upper half-strip with the
// degenerate weight y^{1-2s}: solve div(y^{1-2s} r^{N-1} ∇w) = 0 on
// [0, r_cut] × [0, y_max], recover (-Δ)^s u as the weighted Neumann trace
// -k_{2s}·lim_{y→0} y^{1-2s} ∂_y w, and expose the weighted Dirichlet energy.
// This gives a third, independent evaluation of the operator and the
// energy-isometry cross-check.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "errors.hpp"
#include "model.hpp"

namespace fraclab {

struct ExtensionField {
    std::shared_ptr<const RadialGrid> r_grid;
    std::vector<double> y_nodes;  // ascending, y_nodes[0] == 0
    std::vector<double> values;   // w(r_i, y_j) at values[i*y_nodes.size() + j]
    double s = 0.5;

    std::size_t ny() const { return y_nodes.size(); }
    double at(std::size_t i, std::size_t j) const {
        return values[i * y_nodes.size() + j];
    }
};

namespace detail {

// ∫ r^{1-N} dr over [a, b]: the exact radial resistance between nodes.
inline double radial_resistance(double a, double b, int N) {
    if (N == 2) return std::log(b / a);
    const double e = 2.0 - double(N);
    return (std::pow(b, e) - std::pow(a, e)) / e;
}

// ∫ r^{N-1} dr over [a, b]
inline double radial_cell(double a, double b, int N) {
    return (std::pow(b, double(N)) - std::pow(a, double(N))) / double(N);
}

// ∫ y^{1-2s} dy over [a, b]
inline double weight_cell(double a, double b, double s) {
    const double e = 2.0 - 2.0 * s;
    return (std::pow(b, e) - std::pow(a, e)) / e;
}

// ∫ y^{2s-1} dy over [a, b]: the exact vertical resistance; finite at a = 0.
inline double vertical_resistance(double a, double b, double s) {
    const double e = 2.0 * s;
    return (std::pow(b, e) - std::pow(a, e)) / e;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Solve the extension problem by a conservative finite-volume scheme with
// exact-resistance transmissibilities (the scheme reproduces a + b·y^{2s}
// exactly in y, so the near-wall layer carries no scheme bias).  Boundary
// data: u on y = 0, radial symmetry (no flux) at r = 0, the tail evaluated
// at ball distance sqrt(r_cut² + y²) on the lateral edge, zero at y_max.
// ---------------------------------------------------------------------------
inline ExtensionField extend(const RadialProfile& u, const ProblemParams& pp,
                             double y_max, std::size_t M_y) {
    if (!u.grid) throw invalid_argument_error("extend: profile has no grid");
    const auto& g = *u.grid;
    if (u.values.size() != g.size())
        throw invalid_argument_error("extend: values/grid size mismatch");
    if (g.dim != pp.N)
        throw invalid_argument_error("extend: grid/params dimension mismatch");
    if (!(y_max >= 4.0 * g.r_cut))
        throw invalid_argument_error("extend: y_max must be >= 4*r_cut");
    if (M_y < 64) throw invalid_argument_error("extend: M_y must be >= 64");
    for (double v : u.values)
        if (!std::isfinite(v))
            throw invalid_argument_error("extend: values must be finite");

    const int N = pp.N;
    const double s = pp.s;
    const std::size_t Mr = g.size();

    // Graded y-mesh y_j = y_max (j/M_y)^grade.  grade = 1/(2s) samples y^{2s}
    // uniformly, but for s >= 1/4 that leaves the first off-wall layers too
    // coarse for the trace regression, so the grading never drops below 2.
    const double grade = std::max(2.0, 1.0 / (2.0 * s));
    std::vector<double> y(M_y + 1);
    for (std::size_t j = 0; j <= M_y; ++j)
        y[j] = y_max * std::pow(double(j) / double(M_y), grade);

    // Dirichlet data on the artificial boundaries (lateral edge and top).
    // For an integrable profile the extension's far field is the Poisson
    // kernel times the mass, w ≈ (∫u)·c_P·y^{2s}(r²+y²)^{-(N+2s)/2}, and using
    // it instead of zero moves the truncation error from O(1/dist^{N-2s}·w)
    // to the next multipole order.  A power-law tail has no finite mass, so
    // there the tail itself is continued at ball distance sqrt(r²+y²).
    const double rc = g.r_cut;
    const bool power_tail = u.tail && u.tail->kind == TailModel::Kind::PowerLaw &&
                            u.tail->amplitude != 0.0;
    double far_mass = 0.0;
    if (!power_tail)
        far_mass = grid_integrate(u, [](double, double v) { return v; });
    const double cP = std::tgamma(0.5 * (N + 2.0 * s)) /
                      (std::pow(pi, 0.5 * N) * std::tgamma(s));
    auto far_field = [&](double r, double yy) {
        if (power_tail) return eval_profile(u, std::hypot(r, yy));
        return far_mass * cP * std::pow(yy, 2.0 * s) /
               std::pow(r * r + yy * yy, 0.5 * (N + 2.0 * s));
    };
    std::vector<double> lateral(M_y + 1), top(Mr);
    for (std::size_t j = 0; j <= M_y; ++j) lateral[j] = far_field(rc, y[j]);
    for (std::size_t i = 0; i < Mr; ++i) top[i] = far_field(g.nodes[i], y_max);

    // unknowns: i in [0, Mr-2], j in [1, M_y-1], y-fastest
    const std::size_t nyu = M_y - 1;
    const std::size_t n = (Mr - 1) * nyu;
    auto uidx = [&](std::size_t i, std::size_t j) { return i * nyu + (j - 1); };

    // face geometry
    std::vector<double> rmid(Mr + 1);  // dual cell edges in r
    rmid[0] = 0.0;
    for (std::size_t i = 1; i < Mr; ++i) rmid[i] = 0.5 * (g.nodes[i - 1] + g.nodes[i]);
    rmid[Mr] = g.nodes[Mr - 1];
    std::vector<double> ymid(M_y + 2);
    ymid[0] = 0.0;
    for (std::size_t j = 1; j <= M_y; ++j) ymid[j] = 0.5 * (y[j - 1] + y[j]);
    ymid[M_y + 1] = y[M_y];

    std::vector<double> Hr(Mr - 1), Rw(Mr), Hy(M_y), Yw(M_y + 1);
    for (std::size_t i = 0; i + 1 < Mr; ++i)
        Hr[i] = 1.0 / detail::radial_resistance(g.nodes[i], g.nodes[i + 1], N);
    for (std::size_t i = 0; i < Mr; ++i)
        Rw[i] = detail::radial_cell(rmid[i], rmid[i + 1], N);
    for (std::size_t j = 0; j < M_y; ++j)
        Hy[j] = 1.0 / detail::vertical_resistance(y[j], y[j + 1], s);
    for (std::size_t j = 0; j <= M_y; ++j)
        Yw[j] = detail::weight_cell(ymid[j], ymid[j + 1], s);

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(5 * n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(long(n));

    for (std::size_t i = 0; i + 1 < Mr; ++i) {
        for (std::size_t j = 1; j < M_y; ++j) {
            const std::size_t k = uidx(i, j);
            double diag = 0.0;
            // left r-face (absent at i = 0: no flux through the axis)
            if (i > 0) {
                const double T = Yw[j] * Hr[i - 1];
                diag += T;
                trip.emplace_back(int(k), int(uidx(i - 1, j)), -T);
            }
            // right r-face
            {
                const double T = Yw[j] * Hr[i];
                diag += T;
                if (i + 2 < Mr)
                    trip.emplace_back(int(k), int(uidx(i + 1, j)), -T);
                else
                    b(long(k)) += T * lateral[j];
            }
            // bottom y-face
            {
                const double T = Rw[i] * Hy[j - 1];
                diag += T;
                if (j > 1)
                    trip.emplace_back(int(k), int(uidx(i, j - 1)), -T);
                else
                    b(long(k)) += T * u.values[i];
            }
            // top y-face (y_max row carries the far-field Dirichlet data)
            {
                const double T = Rw[i] * Hy[j];
                diag += T;
                if (j + 1 < M_y)
                    trip.emplace_back(int(k), int(uidx(i, j + 1)), -T);
                else
                    b(long(k)) += T * top[i];
            }
            trip.emplace_back(int(k), int(k), diag);
        }
    }

    const long nn = long(n);
    Eigen::SparseMatrix<double> A(nn, nn);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
    if (solver.info() != Eigen::Success)
        throw solver_stagnation("extend: factorization of the extension system failed");
    Eigen::VectorXd x = solver.solve(b);
    const double bn = b.norm();
    const double res = (A * x - b).norm() / (bn > 0.0 ? bn : 1.0);
    if (!(res < 1e-10))
        throw solver_stagnation("extend: linear solve residual " +
                                std::to_string(res) + " exceeds 1e-10");

    ExtensionField w;
    w.r_grid = u.grid;
    w.y_nodes = std::move(y);
    w.s = s;
    w.values.assign(Mr * (M_y + 1), 0.0);
    for (std::size_t i = 0; i < Mr; ++i) {
        w.values[i * (M_y + 1)] = u.values[i]; // exact Dirichlet row
        for (std::size_t j = 1; j < M_y; ++j)
            w.values[i * (M_y + 1) + j] =
                (i + 1 < Mr) ? x(long(uidx(i, j))) : lateral[j];
        w.values[i * (M_y + 1) + M_y] = (i + 1 < Mr) ? top[i] : lateral[M_y];
    }
    return w;
}

// ---------------------------------------------------------------------------
// Weighted Neumann trace: per radial node, regress the near-wall column on
// {1, y^{2s}, y²} over the first 4 off-boundary layers and return
// -k_{2s}·2s·a(r), the limit of -k_{2s} y^{1-2s} ∂_y w.  The y² column
// carries the first smooth correction of the extension; without it the
// curvature of w biases the y^{2s} coefficient at first order.
// ---------------------------------------------------------------------------
inline RadialProfile neumann_trace(const ExtensionField& w, const ProblemParams& pp) {
    if (!w.r_grid) throw invalid_argument_error("neumann_trace: field has no grid");
    const auto& g = *w.r_grid;
    if (g.dim != pp.N)
        throw invalid_argument_error("neumann_trace: grid/params dimension mismatch");
    if (w.ny() < 6)
        throw invalid_argument_error("neumann_trace: needs at least 5 y-layers");
    if (w.values.size() != g.size() * w.ny())
        throw invalid_argument_error("neumann_trace: values/mesh size mismatch");
    const double s = w.s;

    constexpr int kLayers = 4;
    // scaled basis columns phi(y) = (y/y_4)^{2s}, q(y) = (y/y_4)^2
    const double y4 = w.y_nodes[kLayers];
    Eigen::Matrix<double, kLayers, 3> B;
    for (int j = 1; j <= kLayers; ++j) {
        const double t = w.y_nodes[std::size_t(j)] / y4;
        B(j - 1, 0) = 1.0;
        B(j - 1, 1) = std::pow(t, 2.0 * s);
        B(j - 1, 2) = t * t;
    }
    const Eigen::Matrix3d G = B.transpose() * B;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(G);
    const double lmin = eig.eigenvalues()(0);
    const double lmax = eig.eigenvalues()(2);
    // lmin can round to <= 0 for a numerically rank-deficient Gram matrix
    if (!(lmin > 0.0) || !(lmax / lmin < 1e8))
        throw fit_ill_conditioned(
            "neumann_trace: near-wall regression condition number exceeds 1e8 "
            "(basis {1, y^2s, y^2} on nearly coincident layers)");
    const Eigen::Matrix3d Ginv = G.inverse();

    const double k2s = constants_for(pp).k_2s;
    std::vector<double> trace(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
        for (int j = 1; j <= kLayers; ++j)
            rhs += B.row(j - 1).transpose() * w.at(i, std::size_t(j));
        const Eigen::Vector3d coef = Ginv * rhs;
        // coef(1) multiplies (y/y4)^{2s}: a = coef(1)/y4^{2s}
        trace[i] = -k2s * 2.0 * s * coef(1) / std::pow(y4, 2.0 * s);
    }
    return make_profile(w.r_grid, std::move(trace), std::nullopt);
}

// ---------------------------------------------------------------------------
// Weighted Dirichlet energy k_{2s} ω_N ∬ y^{1-2s} |∇w|² r^{N-1} dr dy by
// cell-midpoint gradients against the exact per-cell weight integrals.
// ---------------------------------------------------------------------------
inline double extension_energy(const ExtensionField& w, const ProblemParams& pp) {
    if (!w.r_grid) throw invalid_argument_error("extension_energy: field has no grid");
    const auto& g = *w.r_grid;
    if (g.dim != pp.N)
        throw invalid_argument_error("extension_energy: grid/params dimension mismatch");
    if (w.values.size() != g.size() * w.ny())
        throw invalid_argument_error("extension_energy: values/mesh size mismatch");
    const double s = w.s;
    const auto c = constants_for(pp);

    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        const double dr = g.nodes[i + 1] - g.nodes[i];
        const double rint = detail::radial_cell(g.nodes[i], g.nodes[i + 1], pp.N);
        for (std::size_t j = 0; j + 1 < w.ny(); ++j) {
            const double dy = w.y_nodes[j + 1] - w.y_nodes[j];
            const double yint = detail::weight_cell(w.y_nodes[j], w.y_nodes[j + 1], s);
            const double wr = 0.5 *
                              ((w.at(i + 1, j) - w.at(i, j)) +
                               (w.at(i + 1, j + 1) - w.at(i, j + 1))) /
                              dr;
            const double wy = 0.5 *
                              ((w.at(i, j + 1) - w.at(i, j)) +
                               (w.at(i + 1, j + 1) - w.at(i + 1, j))) /
                              dy;
            acc += rint * yint * (wr * wr + wy * wy);
        }
    }
    return c.k_2s * c.omega_N * acc;
}

} // namespace fraclab

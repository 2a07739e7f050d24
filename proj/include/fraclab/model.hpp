#pragma once

// Problem data for the fractional semilinear equation
//
//     (-Delta)^s u = u^p - u^q   on R^N (radial) or on a ball with
//                                 exterior-zero Dirichlet data,
//
// together with the radial grid / profile containers every other header
// consumes. Numeric conventions used throughout the library:
//
//   * (-Delta)^s is normalized with c_{N,s} = 2^{2s} s Gamma(N/2+s) /
//     (pi^{N/2} Gamma(1-s)); the quadratic form carries the matching
//     c_{N,s}/2 factor, so energy(u) == integral of u * (-Delta)^s u.
//   * Radial quadrature weights are exact for piecewise-linear integrands
//     against omega_N r^{N-1} dr on [0, r_cut]; the tail model closes
//     integrals beyond r_cut analytically.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fraclab/errors.hpp"

namespace fraclab {

inline constexpr double pi = 3.14159265358979323846;

// Surface measure of the unit sphere S^{N-1}; omega_1 = 2 (two points).
inline double omega_n(int n) {
    return 2.0 * std::pow(pi, 0.5 * n) / std::tgamma(0.5 * n);
}

// ---------------------------------------------------------------------------
// Parameters and derived constants
// ---------------------------------------------------------------------------

struct DomainSpec {
    enum class Kind { WholeSpace, Ball };
    Kind kind = Kind::WholeSpace;
    double radius = 0.0; // Ball only

    static DomainSpec whole_space() { return {Kind::WholeSpace, 0.0}; }
    static DomainSpec ball(double radius) { return {Kind::Ball, radius}; }
};

enum class Criticality { Subcritical, Critical, Supercritical };

inline const char* to_string(Criticality c) {
    switch (c) {
        case Criticality::Subcritical: return "Subcritical";
        case Criticality::Critical: return "Critical";
        default: return "Supercritical";
    }
}

struct ProblemParams {
    int N = 3;
    double s = 0.5;
    double p = 3.0;
    double q = 6.0;
    DomainSpec domain = DomainSpec::whole_space();

    // Serrin-type critical exponent (N+2s)/(N-2s).
    double crit() const { return (N + 2.0 * s) / (N - 2.0 * s); }
    // Critical Sobolev exponent 2N/(N-2s).
    double two_star() const { return 2.0 * N / (N - 2.0 * s); }
    // Existence threshold on q: q_min = (p-1) N/(2s) - 1.
    double q_min() const { return (p - 1.0) * N / (2.0 * s) - 1.0; }

    // Operator-only factory: validates just (N, s) so the three operator
    // implementations can be exercised in regimes (e.g. N = 2s) where the
    // variational problem itself is out of scope.
    static ProblemParams for_operator(int N, double s,
                                      DomainSpec domain = DomainSpec::whole_space()) {
        if (N < 1) throw invalid_argument_error("for_operator: N must be >= 1");
        if (!(s > 0.0) || !(s < 1.0))
            throw invalid_argument_error("for_operator: s must lie in (0,1)");
        ProblemParams pp;
        pp.N = N;
        pp.s = s;
        pp.p = 2.0 * s + 2.0; // inert placeholders, valid orderings
        pp.q = 2.0 * s + 3.0;
        pp.domain = domain;
        return pp;
    }
};

// Full validation for variational runs.
inline ProblemParams make_params(int N, double s, double p, double q,
                                 DomainSpec domain = DomainSpec::whole_space()) {
    if (N < 1) throw invalid_argument_error("make_params: N must be >= 1");
    if (!(s > 0.0) || !(s < 1.0))
        throw invalid_argument_error("make_params: s must lie in (0,1)");
    if (!(N > 2.0 * s))
        throw invalid_argument_error("make_params: requires N > 2s");
    if (!(p > 1.0))
        throw invalid_argument_error("make_params: requires p > 1");
    if (!(q > p))
        throw invalid_argument_error("make_params: requires q > p");
    if (domain.kind == DomainSpec::Kind::Ball && !(domain.radius > 0.0))
        throw invalid_argument_error("make_params: ball radius must be positive");
    return ProblemParams{N, s, p, q, domain};
}

inline Criticality classify(const ProblemParams& pp, double tol = 1e-12) {
    const double c = pp.crit();
    if (std::abs(pp.p - c) <= tol) return Criticality::Critical;
    return pp.p > c ? Criticality::Supercritical : Criticality::Subcritical;
}

struct Constants {
    double c_Ns = 0.0;   // singular-integral normalization
    double k_2s = 0.0;   // extension trace constant Gamma(s) / (2^{1-2s} Gamma(1-s))
    double omega_N = 0.0;
    // Sharp Sobolev constant Theta(N,s): ||u||_{L^{2*}}^2 <= Theta ||u||_{Hdot^s}^2.
    double sobolev_theta = 0.0;
};

inline Constants constants_for(const ProblemParams& pp) {
    const int N = pp.N;
    const double s = pp.s;
    Constants k;
    k.c_Ns = std::pow(2.0, 2.0 * s) * s * std::tgamma(0.5 * N + s) /
             (std::pow(pi, 0.5 * N) * std::tgamma(1.0 - s));
    k.k_2s = std::tgamma(s) / (std::pow(2.0, 1.0 - 2.0 * s) * std::tgamma(1.0 - s));
    k.omega_N = omega_n(N);
    if (N > 2.0 * s) {
        k.sobolev_theta = std::pow(2.0, -2.0 * s) * std::pow(pi, -s) *
                          (std::tgamma(0.5 * (N - 2.0 * s)) / std::tgamma(0.5 * (N + 2.0 * s))) *
                          std::pow(std::tgamma(double(N)) / std::tgamma(0.5 * N), 2.0 * s / N);
    }
    return k;
}

// ---------------------------------------------------------------------------
// Radial grid
// ---------------------------------------------------------------------------

struct RadialGrid {
    enum class Grading { Uniform, LogGraded };

    std::vector<double> nodes;   // ascending, nodes.front() >= 0
    std::vector<double> weights; // quadrature vs omega_N r^{N-1} dr on [0, r_cut]
    double r_cut = 0.0;          // == nodes.back()
    int dim = 3;                 // ambient dimension N baked into the weights
    Grading grading = Grading::LogGraded;
    double ratio = 1.0;          // geometric ratio for LogGraded

    std::size_t size() const { return nodes.size(); }
};

namespace detail {

// integral of r^{N-1} over [a, b]
inline double power_cell(double a, double b, int N) {
    return (std::pow(b, N) - std::pow(a, N)) / double(N);
}

// integral of (r - a)/(b - a) * r^{N-1} over [a, b]  (rising hat edge)
inline double rising_hat(double a, double b, int N) {
    const double pN1 = (std::pow(b, N + 1) - std::pow(a, N + 1)) / double(N + 1);
    const double pN = power_cell(a, b, N);
    return (pN1 - a * pN) / (b - a);
}

// integral of (b - r)/(b - a) * r^{N-1} over [a, b]  (falling hat edge)
inline double falling_hat(double a, double b, int N) {
    return power_cell(a, b, N) - rising_hat(a, b, N);
}

inline void fill_weights(RadialGrid& g) {
    const std::size_t m = g.nodes.size();
    const double wN = omega_n(g.dim);
    g.weights.assign(m, 0.0);
    for (std::size_t i = 0; i + 1 < m; ++i) {
        const double a = g.nodes[i], b = g.nodes[i + 1];
        g.weights[i] += wN * falling_hat(a, b, g.dim);
        g.weights[i + 1] += wN * rising_hat(a, b, g.dim);
    }
    // Close [0, r_0] with the constant extension f ≈ f(r_0).  The closure
    // error is O(r_0^{N+2}) for smooth even data, and unlike extrapolating
    // closures it keeps every weight strictly positive.  Positivity matters
    // beyond quadrature accuracy: the weights double as the inner-product
    // matrix for energies and gradients, which must stay positive definite.
    if (g.nodes.front() > 0.0)
        g.weights[0] += wN * power_cell(0.0, g.nodes.front(), g.dim);
}

} // namespace detail

// Geometrically graded grid on [r_min, r_cut]; quadrature weights are exact
// for piecewise-linear integrands against omega_N r^{N-1} dr on [r_min, r_cut]
// (constant closure below the first node) and strictly positive.
inline std::shared_ptr<const RadialGrid> make_log_grid(double r_min, double r_cut,
                                                       std::size_t M, int N) {
    if (M < 16) throw invalid_argument_error("make_log_grid: M must be >= 16");
    if (!(r_min > 0.0) || !(r_cut > r_min))
        throw invalid_argument_error("make_log_grid: requires 0 < r_min < r_cut");
    if (N < 1) throw invalid_argument_error("make_log_grid: N must be >= 1");
    auto g = std::make_shared<RadialGrid>();
    g->dim = N;
    g->grading = RadialGrid::Grading::LogGraded;
    g->ratio = std::pow(r_cut / r_min, 1.0 / double(M - 1));
    g->nodes.resize(M);
    for (std::size_t i = 0; i < M; ++i)
        g->nodes[i] = r_min * std::pow(g->ratio, double(i));
    g->nodes.back() = r_cut; // kill accumulated round-off at the boundary
    g->r_cut = r_cut;
    detail::fill_weights(*g);
    return g;
}

// Uniform grid on (0, r_cut]: nodes at r_cut * i/M.  Uniform spacing keeps the
// diagonal curvature of the energy form h^{-2s}-flat across nodes, which is
// what the projected-gradient minimizer needs to converge quickly; log-graded
// grids concentrate stiffness at the origin and stall it.
inline std::shared_ptr<const RadialGrid> make_uniform_grid(double r_cut, std::size_t M,
                                                           int N) {
    if (M < 16) throw invalid_argument_error("make_uniform_grid: M must be >= 16");
    if (!(r_cut > 0.0))
        throw invalid_argument_error("make_uniform_grid: requires r_cut > 0");
    if (N < 1) throw invalid_argument_error("make_uniform_grid: N must be >= 1");
    auto g = std::make_shared<RadialGrid>();
    g->dim = N;
    g->grading = RadialGrid::Grading::Uniform;
    g->nodes.resize(M);
    for (std::size_t i = 0; i < M; ++i)
        g->nodes[i] = r_cut * double(i + 1) / double(M);
    g->nodes.back() = r_cut;
    g->r_cut = r_cut;
    detail::fill_weights(*g);
    return g;
}

// Grid over explicitly given ascending nodes (spectral bins, CSV input).
inline std::shared_ptr<const RadialGrid> grid_from_nodes(std::vector<double> nodes, int N) {
    if (nodes.size() < 2)
        throw invalid_argument_error("grid_from_nodes: needs at least 2 nodes");
    if (N < 1) throw invalid_argument_error("grid_from_nodes: N must be >= 1");
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
        if (!(nodes[i] < nodes[i + 1]))
            throw invalid_argument_error("grid_from_nodes: nodes must ascend strictly");
    if (nodes.front() < 0.0)
        throw invalid_argument_error("grid_from_nodes: nodes must be >= 0");
    auto g = std::make_shared<RadialGrid>();
    g->dim = N;
    g->grading = RadialGrid::Grading::Uniform;
    g->nodes = std::move(nodes);
    g->r_cut = g->nodes.back();
    detail::fill_weights(*g);
    return g;
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

struct TailModel {
    enum class Kind { Zero, PowerLaw };
    Kind kind = Kind::Zero;
    double amplitude = 0.0; // PowerLaw: u(r) = amplitude * r^{-exponent}, r > r_cut
    double exponent = 0.0;  // >= 0; 0 means constant extension

    static TailModel zero() { return {Kind::Zero, 0.0, 0.0}; }
    static TailModel power_law(double amplitude, double exponent) {
        if (exponent < 0.0)
            throw invalid_argument_error("TailModel: exponent must be >= 0");
        return {Kind::PowerLaw, amplitude, exponent};
    }
};

struct RadialProfile {
    std::shared_ptr<const RadialGrid> grid;
    std::vector<double> values;
    std::optional<TailModel> tail; // nullopt: undeclared (exterior use errors)
};

inline RadialProfile make_profile(std::shared_ptr<const RadialGrid> grid,
                                  std::vector<double> values,
                                  std::optional<TailModel> tail = std::nullopt) {
    if (!grid) throw invalid_argument_error("make_profile: null grid");
    if (values.size() != grid->size())
        throw invalid_argument_error("make_profile: values/nodes size mismatch");
    return RadialProfile{std::move(grid), std::move(values), tail};
}

template <class F>
RadialProfile sample_profile(std::shared_ptr<const RadialGrid> grid, F&& f,
                             std::optional<TailModel> tail = std::nullopt) {
    std::vector<double> v(grid->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(grid->nodes[i]);
    return make_profile(std::move(grid), std::move(v), tail);
}

// PowerLaw tail whose amplitude is spliced to the last node value, so the
// continuity invariant |u(r_cut) - A r_cut^{-gamma}| = 0 holds exactly.
inline TailModel spliced_power_tail(const RadialProfile& u, double exponent) {
    return TailModel::power_law(u.values.back() * std::pow(u.grid->r_cut, exponent),
                                exponent);
}

// Relative splice mismatch at r_cut (0 for Zero/absent tails).
inline double tail_splice_defect(const RadialProfile& u) {
    if (!u.tail || u.tail->kind != TailModel::Kind::PowerLaw) return 0.0;
    double vmax = 0.0;
    for (double v : u.values) vmax = std::max(vmax, std::abs(v));
    if (vmax == 0.0) return std::abs(u.tail->amplitude);
    const double t = u.tail->amplitude * std::pow(u.grid->r_cut, -u.tail->exponent);
    return std::abs(u.values.back() - t) / vmax;
}

namespace detail {

// Parabolic (3-point) slope stencils: d_i = c0 v_{base} + c1 v_{base+1} +
// c2 v_{base+2}. Linear in values; used by the operator quadrature.
struct SlopeStencil {
    int base = 0;
    double c[3] = {0, 0, 0};
};

inline std::vector<SlopeStencil> parabolic_slopes(const RadialGrid& g) {
    const std::size_t m = g.size();
    std::vector<SlopeStencil> d(m);
    auto three_point = [&](std::size_t i, std::size_t j, std::size_t k, double at) {
        // derivative at `at` of the parabola through nodes i, j, k
        const double xi = g.nodes[i], xj = g.nodes[j], xk = g.nodes[k];
        SlopeStencil s;
        s.base = int(i);
        s.c[0] = (2.0 * at - xj - xk) / ((xi - xj) * (xi - xk));
        s.c[1] = (2.0 * at - xi - xk) / ((xj - xi) * (xj - xk));
        s.c[2] = (2.0 * at - xi - xj) / ((xk - xi) * (xk - xj));
        return s;
    };
    for (std::size_t i = 0; i < m; ++i) {
        if (i == 0) {
            if (g.nodes[0] == 0.0) {
                d[0].base = 0; // radial evenness: u'(0) = 0
            } else {
                d[0] = three_point(0, 1, 2, g.nodes[0]);
            }
        } else if (i + 1 == m) {
            d[i] = three_point(m - 3, m - 2, m - 1, g.nodes[i]);
        } else {
            d[i] = three_point(i - 1, i, i + 1, g.nodes[i]);
        }
    }
    return d;
}

// Interpolation weights of the value-linear cubic Hermite at radius r inside
// [nodes.front(), r_cut]: u(r) ~= sum_k w[k] * values[start + k].
struct InterpStencil {
    int start = 0;
    int count = 0;
    double w[6] = {0, 0, 0, 0, 0, 0};
};

inline std::size_t locate_interval(const RadialGrid& g, double r) {
    const auto& x = g.nodes;
    auto it = std::upper_bound(x.begin(), x.end(), r);
    std::size_t i = (it == x.begin()) ? 0 : std::size_t(it - x.begin()) - 1;
    if (i + 1 >= x.size()) i = x.size() - 2;
    return i;
}

inline InterpStencil hermite_stencil(const RadialGrid& g,
                                     const std::vector<SlopeStencil>& slopes, double r) {
    const auto& x = g.nodes;
    InterpStencil st;
    if (r <= x.front()) {
        // even extension u0 + d0 (r^2 - r_0^2)/(2 r_0): C^1 across r_0 and
        // even through the origin, as a radial profile must be
        const auto& s0 = slopes[0];
        st.start = 0;
        st.count = 3;
        st.w[0] = 1.0;
        if (x.front() > 0.0) {
            const double f = (r * r - x.front() * x.front()) / (2.0 * x.front());
            for (int k = 0; k < 3; ++k) st.w[k] += f * s0.c[k];
        }
        return st;
    }
    const std::size_t i = locate_interval(g, r);
    const double h = x[i + 1] - x[i];
    const double t = (r - x[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;

    const auto& dl = slopes[i];
    const auto& dr_ = slopes[i + 1];
    const int lo = std::min({int(i), dl.base, dr_.base});
    const int hi = std::max({int(i) + 1, dl.base + 2, dr_.base + 2});
    st.start = lo;
    st.count = hi - lo + 1;
    st.w[int(i) - lo] += h00;
    st.w[int(i) + 1 - lo] += h01;
    for (int k = 0; k < 3; ++k) {
        st.w[dl.base + k - lo] += h * h10 * dl.c[k];
        st.w[dr_.base + k - lo] += h * h11 * dr_.c[k];
    }
    return st;
}

// Steffen (1990) monotonicity-preserving cubic slopes; nonlinear limiter.
inline std::vector<double> steffen_slopes(const RadialGrid& g,
                                          const std::vector<double>& v) {
    const std::size_t m = g.size();
    std::vector<double> d(m, 0.0);
    if (m < 2) return d;
    auto h = [&](std::size_t i) { return g.nodes[i + 1] - g.nodes[i]; };
    auto sec = [&](std::size_t i) { return (v[i + 1] - v[i]) / h(i); };
    for (std::size_t i = 1; i + 1 < m; ++i) {
        const double s0 = sec(i - 1), s1 = sec(i);
        const double p = (s0 * h(i) + s1 * h(i - 1)) / (h(i - 1) + h(i));
        if (s0 * s1 <= 0.0) {
            d[i] = 0.0;
        } else {
            const double cap = 2.0 * std::min(std::abs(s0), std::abs(s1));
            d[i] = (std::abs(p) > cap) ? std::copysign(cap, s0) : p;
        }
    }
    d[0] = (g.nodes[0] == 0.0) ? 0.0 : sec(0);
    d[m - 1] = sec(m - 2);
    return d;
}

inline double hermite_eval(double xl, double xr, double vl, double vr, double dl,
                           double dr, double r) {
    const double h = xr - xl;
    const double t = (r - xl) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * vl + (t3 - 2 * t2 + t) * h * dl +
           (-2 * t3 + 3 * t2) * vr + (t3 - t2) * h * dr;
}

} // namespace detail

// Point evaluation: monotone (Steffen) cubic inside the grid, even C^1
// extension below the first node, declared tail model beyond r_cut.
inline double eval_profile(const RadialProfile& u, double r) {
    const auto& g = *u.grid;
    if (r < 0.0) throw invalid_argument_error("eval_profile: negative radius");
    if (r > g.r_cut) {
        if (!u.tail)
            throw tail_required("eval_profile: radius beyond r_cut on a profile "
                                "with no declared tail");
        if (u.tail->kind == TailModel::Kind::Zero) return 0.0;
        return u.tail->amplitude * std::pow(r, -u.tail->exponent);
    }
    thread_local const RadialGrid* cached_grid = nullptr;
    thread_local const std::vector<double>* cached_values = nullptr;
    thread_local std::vector<double> cached_slopes;
    if (cached_grid != &g || cached_values != &u.values ||
        cached_slopes.size() != u.values.size()) {
        cached_slopes = detail::steffen_slopes(g, u.values);
        cached_grid = &g;
        cached_values = &u.values;
    }
    if (r <= g.nodes.front()) {
        const double r0 = g.nodes.front();
        if (r0 <= 0.0) return u.values.front();
        return u.values.front() +
               cached_slopes.front() * (r * r - r0 * r0) / (2.0 * r0);
    }
    const std::size_t i = detail::locate_interval(g, r);
    return detail::hermite_eval(g.nodes[i], g.nodes[i + 1], u.values[i], u.values[i + 1],
                                cached_slopes[i], cached_slopes[i + 1], r);
}

// ---------------------------------------------------------------------------
// Quadrature over profiles
// ---------------------------------------------------------------------------

// sum_i w_i f(r_i, v_i); the grid part of an integral against omega_N r^{N-1} dr.
template <class F>
double grid_integrate(const RadialProfile& u, F&& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i)
        acc += u.grid->weights[i] * f(u.grid->nodes[i], u.values[i]);
    return acc;
}

// integral of |u|^m over R^N (grid quadrature + analytic tail closure)
inline double mass_power(const RadialProfile& u, double m) {
    double acc = grid_integrate(u, [m](double, double v) {
        return std::pow(std::abs(v), m);
    });
    if (!u.tail)
        throw tail_required("mass_power: tail model required for exterior mass");
    if (u.tail->kind == TailModel::Kind::PowerLaw && u.tail->amplitude != 0.0) {
        const auto& g = *u.grid;
        const double decay = u.tail->exponent * m;
        if (!(decay > g.dim))
            throw divergent_seminorm("mass_power: tail decay too slow, L^m mass "
                                     "divergent");
        acc += omega_n(g.dim) * std::pow(std::abs(u.tail->amplitude), m) *
               std::pow(g.r_cut, double(g.dim) - decay) / (decay - double(g.dim));
    }
    return acc;
}

// weighted L^2 norm of a node vector: ||f||^2 = sum_i w_i f_i^2
inline double quadrature_norm(const RadialGrid& g, const std::vector<double>& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += g.weights[i] * f[i] * f[i];
    return std::sqrt(acc);
}

} // namespace fraclab

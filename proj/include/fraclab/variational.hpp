#pragma once

// Existence machinery: the penalized functional on the constraint manifold
// ∫|v|^{p+1} dx = 1, symmetric-decreasing rearrangement, projected gradient
// descent with backtracking, Lagrange-multiplier extraction, and the
// rescalings that map the constrained minimizer to solutions of the
// unconstrained equation (whole space) or its bounded-domain variant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "fraclab/fraclap.hpp"

namespace fraclab {

// ---------------------------------------------------------------------------
// Solver configuration
// ---------------------------------------------------------------------------
struct SolverConfig {
    std::shared_ptr<const RadialGrid> grid; // discretization the run lives on

    double step = 1.0;            // initial gradient step
    double step_backtrack = 0.5;  // backtracking factor in (0,1)
    double tol_residual = 1e-6;   // stationarity target (weighted norm)
    std::size_t max_iters = 20000;
    std::size_t rearrange_every = 10;

    enum class Seed { Bubble, Gaussian, Custom };
    Seed seed_profile = Seed::Bubble;
    std::optional<RadialProfile> custom_seed; // used when seed_profile == Custom

    int angular_nodes = 32; // operator quadrature order
};

struct IterationRecord {
    std::size_t iteration = 0;
    double F = 0.0;        // functional value at the iterate
    double residual = 0.0; // Euler-Lagrange residual (projected-gradient norm)
    double mass_q = 0.0;   // ∫|v|^{q+1} dx, the nonexistence witness
};

struct MinimizerResult {
    RadialProfile v;          // constrained minimizer candidate
    double lambda = 0.0;      // Lagrange multiplier
    double F_value = 0.0;     // functional value at v
    RadialProfile u_solution; // rescaled solution of the unconstrained equation
    std::size_t iterations = 0;
    bool converged = false;
    bool stagnated = false;           // F plateaued before the residual target
    bool negative_multiplier = false; // defective stationary point
    std::vector<IterationRecord> history;
};

namespace detail {

// analytic tail closure of ∫|v|^m over the exterior for a spliced power tail
inline double tail_mass_closure(TailModel::Kind kind, double boundary_value,
                                double gamma, double r_cut, int N, double m) {
    if (kind != TailModel::Kind::PowerLaw || boundary_value == 0.0) return 0.0;
    const double amplitude = std::abs(boundary_value) * std::pow(r_cut, gamma);
    const double decay = gamma * m;
    if (!(decay > double(N)))
        throw divergent_seminorm("tail_mass_closure: exterior L^m mass divergent");
    return omega_n(N) * std::pow(amplitude, m) *
           std::pow(r_cut, double(N) - decay) / (decay - double(N));
}

// ∫|v|^m dx for a node vector whose tail (if any) is spliced to the last node
inline double spliced_mass(const RadialGrid& g, const Eigen::VectorXd& v,
                           TailModel::Kind kind, double gamma, double m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        acc += g.weights[i] * std::pow(std::abs(v(long(i))), m);
    acc += tail_mass_closure(kind, v(long(g.size()) - 1), gamma, g.r_cut, g.dim, m);
    return acc;
}

// decreasing rearrangement of cell values against the volume measure: sort
// the (value, cell volume) pairs by value, lay them out from the origin, and
// read the step function back onto the grid cells by exact overlap averaging
inline void rearrange_values(const RadialGrid& g, std::vector<double>& vals) {
    const std::size_t m = vals.size();
    // already nonincreasing: exact fixed point, return bitwise unchanged
    bool sorted_desc = true;
    for (std::size_t i = 1; i < m; ++i)
        if (vals[i] > vals[i - 1]) {
            sorted_desc = false;
            break;
        }
    if (sorted_desc) return;

    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });

    std::vector<double> out(m);
    std::size_t k = 0;                    // source segment cursor
    double seg_rem = g.weights[idx[0]];   // volume left in current segment
    for (std::size_t i = 0; i < m; ++i) {
        const double cell = g.weights[i];
        if (seg_rem >= cell || k + 1 == m) {
            // cell covered by a single segment: assign exactly
            out[i] = vals[idx[k]];
            seg_rem -= cell;
            if (seg_rem <= 0.0 && k + 1 < m) seg_rem = g.weights[idx[++k]];
        } else {
            double cap = cell, acc = 0.0;
            while (cap > 0.0) {
                const double take = (k + 1 == m) ? cap : std::min(cap, seg_rem);
                acc += take * vals[idx[k]];
                cap -= take;
                seg_rem -= take;
                if (seg_rem <= 0.0 && k + 1 < m) seg_rem = g.weights[idx[++k]];
            }
            out[i] = acc / cell;
        }
    }
    // enforce exact node-wise monotonicity against accumulation round-off
    for (std::size_t i = 1; i < m; ++i) out[i] = std::min(out[i], out[i - 1]);
    vals = std::move(out);
}

} // namespace detail

namespace detail {

// W-gradient factor of the exterior closure of (1/m)∫|v|^m at the boundary
// node: the closure is ω_N |v_last|^m r_cut^N / (γm - N), so its contribution
// to the gradient is this factor times |v_last|^{m-2} v_last.
inline double tail_mass_gradient_factor(const RadialGrid& g, TailModel::Kind kind,
                                        double gamma, double m) {
    if (kind != TailModel::Kind::PowerLaw) return 0.0;
    const double decay = gamma * m;
    if (!(decay > double(g.dim)))
        throw divergent_seminorm(
            "tail_mass_gradient_factor: exterior L^m mass divergent");
    return omega_n(g.dim) * std::pow(g.r_cut, double(g.dim)) /
           ((decay - double(g.dim)) * g.weights.back());
}

} // namespace detail

// ---------------------------------------------------------------------------
// The functional F(v) = (1/2)‖v‖² + (1/(q+1)) ∫|v|^{q+1} dx, with the seminorm
// evaluated through the positive-semidefinite Gagliardo quadratic form so that
// functional_gradient below is the exact gradient of this discrete value in
// the quadrature inner product.  A power-law tail is treated as spliced to the
// boundary node (F is then a pure function of node values).
// ---------------------------------------------------------------------------
inline double functional_F(const RadialProfile& u, const ProblemParams& pp,
                           int angular_nodes = 32) {
    if (!u.grid) throw invalid_argument_error("functional_F: profile has no grid");
    const auto& g = *u.grid;
    if (u.values.size() != g.size())
        throw invalid_argument_error("functional_F: values/grid size mismatch");
    const TailModel::Kind kind = u.tail ? u.tail->kind : TailModel::Kind::Zero;
    const double gamma =
        kind == TailModel::Kind::PowerLaw ? u.tail->exponent : 0.0;
    if (kind == TailModel::Kind::PowerLaw && !(gamma > 0.5 * (g.dim - 2.0 * pp.s)))
        throw divergent_seminorm("functional_F: tail decay too slow, seminorm "
                                 "divergent");
    auto form = gagliardo_form_for(u.grid, pp, kind, gamma, angular_nodes);
    const Eigen::Map<const Eigen::VectorXd> v(u.values.data(), long(g.size()));
    return 0.5 * v.dot(*form * v) +
           detail::spliced_mass(g, v, kind, gamma, pp.q + 1.0) / (pp.q + 1.0);
}

// node-wise gradient of functional_F in the quadrature inner product:
// (-Δ)^s v + |v|^{q-1} v, the boundary node also carrying the derivative of
// the exterior closure through the spliced tail amplitude
inline RadialProfile functional_gradient(const RadialProfile& u,
                                         const ProblemParams& pp,
                                         int angular_nodes = 32) {
    if (!u.grid)
        throw invalid_argument_error("functional_gradient: profile has no grid");
    const auto& g = *u.grid;
    if (u.values.size() != g.size())
        throw invalid_argument_error("functional_gradient: values/grid size mismatch");
    const TailModel::Kind kind = u.tail ? u.tail->kind : TailModel::Kind::Zero;
    const double gamma =
        kind == TailModel::Kind::PowerLaw ? u.tail->exponent : 0.0;
    auto form = gagliardo_form_for(u.grid, pp, kind, gamma, angular_nodes);
    const Eigen::Map<const Eigen::VectorXd> v(u.values.data(), long(g.size()));
    const Eigen::Map<const Eigen::VectorXd> W(g.weights.data(), long(g.size()));
    Eigen::VectorXd grad = (*form * v).cwiseQuotient(W);
    for (long i = 0; i < grad.size(); ++i)
        grad(i) += std::pow(std::abs(v(i)), pp.q - 1.0) * v(i);
    const long last = grad.size() - 1;
    grad(last) += detail::tail_mass_gradient_factor(g, kind, gamma, pp.q + 1.0) *
                  std::pow(std::abs(v(last)), pp.q - 1.0) * v(last);
    RadialProfile out;
    out.grid = u.grid;
    out.values.assign(grad.data(), grad.data() + grad.size());
    return out;
}

// ---------------------------------------------------------------------------
// Symmetric-decreasing rearrangement with respect to ω_N r^{N-1} dr.
// ---------------------------------------------------------------------------
inline RadialProfile rearrange_decreasing(const RadialProfile& u) {
    if (!u.grid)
        throw invalid_argument_error("rearrange_decreasing: profile has no grid");
    if (u.values.size() != u.grid->size())
        throw invalid_argument_error(
            "rearrange_decreasing: values/grid size mismatch");
    for (double v : u.values)
        if (!(v >= 0.0))
            throw invalid_argument_error(
                "rearrange_decreasing: requires a nonnegative profile (apply "
                "the positive part first)");
    RadialProfile out;
    out.grid = u.grid;
    out.values = u.values;
    detail::rearrange_values(*u.grid, out.values);
    if (u.tail && u.tail->kind == TailModel::Kind::PowerLaw)
        out.tail = spliced_power_tail(out, u.tail->exponent);
    else
        out.tail = u.tail;
    return out;
}

// ---------------------------------------------------------------------------
// Projection onto the constraint manifold ∫|v|^{p+1} dx = 1.
// ---------------------------------------------------------------------------
inline RadialProfile project_manifold(const RadialProfile& u, double p) {
    if (!u.grid)
        throw invalid_argument_error("project_manifold: profile has no grid");
    const auto& g = *u.grid;
    if (u.values.size() != g.size())
        throw invalid_argument_error("project_manifold: values/grid size mismatch");
    const TailModel::Kind kind = u.tail ? u.tail->kind : TailModel::Kind::Zero;
    const double gamma =
        kind == TailModel::Kind::PowerLaw ? u.tail->exponent : 0.0;
    double c = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        c += g.weights[i] * std::pow(std::abs(u.values[i]), p + 1.0);
    if (u.tail && kind == TailModel::Kind::PowerLaw) {
        const double decay = u.tail->exponent * (p + 1.0);
        if (!(decay > double(g.dim)))
            throw divergent_seminorm("project_manifold: constraint integral "
                                     "divergent for this tail");
        c += omega_n(g.dim) * std::pow(std::abs(u.tail->amplitude), p + 1.0) *
             std::pow(g.r_cut, double(g.dim) - decay) / (decay - double(g.dim));
    }
    if (!(c > 1e-300))
        throw zero_mass("project_manifold: constraint integral vanishes");
    const double f = std::pow(c, -1.0 / (p + 1.0));
    RadialProfile out;
    out.grid = u.grid;
    out.values.resize(u.values.size());
    for (std::size_t i = 0; i < u.values.size(); ++i)
        out.values[i] = u.values[i] * f;
    if (u.tail && kind == TailModel::Kind::PowerLaw)
        out.tail = TailModel::power_law(u.tail->amplitude * f, gamma);
    else
        out.tail = u.tail;
    return out;
}

// ---------------------------------------------------------------------------
// Rescalings between the constrained and unconstrained problems.
// ---------------------------------------------------------------------------

// v solves (-Δ)^s v + v^q = λ v^p  →  w(x) = λ^{-1/(q-p)} v(λ^{-(q-1)/(2s(q-p))} x)
// solves (-Δ)^s w = w^p - w^q.
inline RadialProfile rescale_to_solution(const RadialProfile& v, double lambda,
                                         const ProblemParams& pp) {
    if (!(lambda > 0.0))
        throw invalid_argument_error("rescale_to_solution: lambda must be > 0");
    if (!(pp.q > pp.p))
        throw invalid_argument_error("rescale_to_solution: requires q > p");
    const double alpha = std::pow(lambda, -1.0 / (pp.q - pp.p));
    const double beta =
        std::pow(lambda, -(pp.q - 1.0) / (2.0 * pp.s * (pp.q - pp.p)));
    RadialProfile w = dilate(v, beta);
    for (auto& x : w.values) x *= alpha;
    if (w.tail && w.tail->kind == TailModel::Kind::PowerLaw)
        w.tail = TailModel::power_law(w.tail->amplitude * alpha, w.tail->exponent);
    return w;
}

// u solves (-Δ)^s u = λ u^p - u^q  →  U = λ^{1/(p-1)} u solves
// (-Δ)^s U = U^p - c* U^q with c* = λ^{-(q-1)/(p-1)}.
inline std::pair<RadialProfile, double>
scale_to_cstar(const RadialProfile& u, double lambda, const ProblemParams& pp) {
    if (!(lambda > 0.0))
        throw invalid_argument_error("scale_to_cstar: lambda must be > 0");
    if (!(pp.p > 1.0))
        throw invalid_argument_error("scale_to_cstar: requires p > 1");
    const double f = std::pow(lambda, 1.0 / (pp.p - 1.0));
    const double cstar = std::pow(lambda, -(pp.q - 1.0) / (pp.p - 1.0));
    RadialProfile U;
    U.grid = u.grid;
    U.values.resize(u.values.size());
    for (std::size_t i = 0; i < u.values.size(); ++i) U.values[i] = u.values[i] * f;
    if (u.tail && u.tail->kind == TailModel::Kind::PowerLaw)
        U.tail = TailModel::power_law(u.tail->amplitude * f, u.tail->exponent);
    else
        U.tail = u.tail;
    return {std::move(U), cstar};
}

// ---------------------------------------------------------------------------
// Projected gradient descent on the constraint manifold.
// ---------------------------------------------------------------------------
namespace detail {

inline MinimizerResult minimize_impl(const ProblemParams& pp,
                                     const SolverConfig& cfg,
                                     TailModel::Kind kind, double gamma) {
    if (!cfg.grid) throw invalid_argument_error("minimize: config has no grid");
    const auto& g = *cfg.grid;
    if (g.dim != pp.N)
        throw invalid_argument_error("minimize: grid/params dimension mismatch");
    if (!(cfg.step > 0.0))
        throw invalid_argument_error("minimize: step must be > 0");
    if (!(cfg.step_backtrack > 0.0) || !(cfg.step_backtrack < 1.0))
        throw invalid_argument_error("minimize: step_backtrack must be in (0,1)");
    if (cfg.max_iters < 1)
        throw invalid_argument_error("minimize: max_iters must be >= 1");
    if (cfg.rearrange_every < 1)
        throw invalid_argument_error("minimize: rearrange_every must be >= 1");
    if (!(pp.q > pp.p))
        throw invalid_argument_error("minimize: requires q > p");

    const std::size_t m = g.size();
    const double p = pp.p, q = pp.q;
    auto form = gagliardo_form_for(cfg.grid, pp, kind, gamma, cfg.angular_nodes);
    const Eigen::MatrixXd& G = *form;
    const Eigen::Map<const Eigen::VectorXd> W(g.weights.data(), long(m));
    const long last = long(m) - 1;
    // boundary-node closure derivatives of the two mass integrals
    const double tgq = tail_mass_gradient_factor(g, kind, gamma, q + 1.0);
    const double tgp = tail_mass_gradient_factor(g, kind, gamma, p + 1.0);

    auto wdot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return a.dot(W.cwiseProduct(b));
    };
    auto mass_of = [&](const Eigen::VectorXd& v, double mm) {
        return spliced_mass(g, v, kind, gamma, mm);
    };
    auto F_of = [&](const Eigen::VectorXd& v) {
        return 0.5 * v.dot(G * v) + mass_of(v, q + 1.0) / (q + 1.0);
    };
    // positive part, optional rearrangement, manifold projection (in place);
    // returns false if the profile collapsed to zero mass
    auto retract = [&](Eigen::VectorXd& v, bool rearrange) {
        for (long i = 0; i < v.size(); ++i) v(i) = std::max(v(i), 0.0);
        if (rearrange) {
            std::vector<double> vals(v.data(), v.data() + v.size());
            rearrange_values(g, vals);
            v = Eigen::Map<const Eigen::VectorXd>(vals.data(), long(m));
        }
        const double c = mass_of(v, p + 1.0);
        if (!(c > 1e-300)) return false;
        v *= std::pow(c, -1.0 / (p + 1.0));
        return true;
    };

    // seed
    Eigen::VectorXd v(static_cast<long>(m));
    switch (cfg.seed_profile) {
    case SolverConfig::Seed::Bubble: {
        const double e = 0.5 * (double(pp.N) - 2.0 * pp.s);
        for (std::size_t i = 0; i < m; ++i)
            v(long(i)) = std::pow(1.0 + g.nodes[i] * g.nodes[i], -e);
        break;
    }
    case SolverConfig::Seed::Gaussian:
        for (std::size_t i = 0; i < m; ++i)
            v(long(i)) = std::exp(-0.5 * g.nodes[i] * g.nodes[i]);
        break;
    case SolverConfig::Seed::Custom: {
        if (!cfg.custom_seed)
            throw invalid_argument_error("minimize: Custom seed needs a profile");
        for (std::size_t i = 0; i < m; ++i)
            v(long(i)) = eval_profile(*cfg.custom_seed, g.nodes[i]);
        break;
    }
    }
    if (!retract(v, false))
        throw zero_mass("minimize: seed profile has zero constraint mass");

    MinimizerResult res;
    res.history.reserve(std::min<std::size_t>(cfg.max_iters + 1, 1 << 16));

    double F = F_of(v);
    double t = cfg.step;
    std::size_t stall = 0;
    std::size_t it = 0;

    Eigen::VectorXd grad(static_cast<long>(m)), normal(static_cast<long>(m)),
        proj(static_cast<long>(m)), trial(static_cast<long>(m));
    for (it = 0; it < cfg.max_iters; ++it) {
        grad = (G * v).cwiseQuotient(W);
        for (long i = 0; i < grad.size(); ++i)
            grad(i) += std::pow(std::abs(v(i)), q - 1.0) * v(i);
        grad(last) += tgq * std::pow(std::abs(v(last)), q - 1.0) * v(last);
        for (long i = 0; i < normal.size(); ++i)
            normal(i) = std::pow(std::abs(v(i)), p - 1.0) * v(i);
        normal(last) += tgp * std::pow(std::abs(v(last)), p - 1.0) * v(last);
        const double nn = wdot(normal, normal);
        const double lam = wdot(grad, normal) / nn;
        proj = grad - lam * normal;
        const double pn2 = wdot(proj, proj);
        if (!std::isfinite(pn2))
            throw solver_stagnation(
                "minimize: descent produced a non-finite iterate");
        const double res_norm = std::sqrt(std::max(0.0, pn2));
        res.history.push_back({it, F, res_norm, mass_of(v, q + 1.0)});

        if (res_norm < cfg.tol_residual) {
            res.converged = true;
            break;
        }

        // backtracking line search along the manifold (projected) gradient;
        // its directional derivative through the retraction is exactly
        // -⟨proj,proj⟩ (the normal component is annihilated by the manifold
        // projection), so Armijo with this slope always admits a step — the
        // free gradient does not have that property under the nonlinear
        // constraint and can point uphill after reprojection
        const double slope = wdot(proj, proj);
        bool accepted = false;
        double F_new = F;
        const bool do_rearrange = ((it + 1) % cfg.rearrange_every) == 0;
        for (int bt = 0; bt < 120; ++bt) {
            trial = v - t * proj;
            if (!retract(trial, do_rearrange)) {
                t *= cfg.step_backtrack;
                continue;
            }
            F_new = F_of(trial);
            if (F_new <= F - 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            t *= cfg.step_backtrack;
        }
        if (!accepted) {
            res.stagnated = true;
            break;
        }
        const double rel_dec = (F - F_new) / std::max(std::abs(F), 1e-300);
        v = trial;
        F = F_new;
        t = std::min(t * 2.0, 1e6 * cfg.step);
        stall = rel_dec < 1e-14 ? stall + 1 : 0;
        if (stall >= 100) {
            res.stagnated = true;
            break;
        }
    }
    res.iterations = it;

    // enforce the radially-nonincreasing normal form on the returned iterate
    // (a no-op whenever the iterate is already sorted)
    retract(v, true);
    F = F_of(v);

    // final multiplier: Rayleigh quotient of the Euler-Lagrange operator
    // against v on the manifold, λ = ‖v‖² + ∫v^{q+1} (constraint mass = 1)
    res.lambda = v.dot(G * v) + mass_of(v, q + 1.0);
    res.negative_multiplier = res.converged && !(res.lambda > 0.0);
    res.F_value = F;

    res.v.grid = cfg.grid;
    res.v.values.assign(v.data(), v.data() + v.size());
    if (kind == TailModel::Kind::PowerLaw)
        res.v.tail = spliced_power_tail(res.v, gamma);
    else
        res.v.tail = TailModel::zero();

    if (res.converged && res.lambda > 0.0 &&
        pp.domain.kind == DomainSpec::Kind::WholeSpace)
        res.u_solution = rescale_to_solution(res.v, res.lambda, pp);
    else
        res.u_solution = res.v;
    return res;
}

} // namespace detail

// Minimize over {∫|v|^{p+1} = 1} on the whole space; iterates carry a spliced
// power tail with the solution's expected decay exponent N - 2s.
inline MinimizerResult minimize_K(const ProblemParams& pp, const SolverConfig& cfg) {
    if (pp.domain.kind != DomainSpec::Kind::WholeSpace)
        throw invalid_argument_error("minimize_K: params must be whole-space");
    return detail::minimize_impl(pp, cfg, TailModel::Kind::PowerLaw,
                                 double(pp.N) - 2.0 * pp.s);
}

// Ball variant: exterior-zero Dirichlet condition encoded as a Zero tail and
// a grid truncated at the domain radius; the positive part is enforced every
// step exactly as in minimize_K.
inline MinimizerResult minimize_S_ball(const ProblemParams& pp,
                                       const SolverConfig& cfg) {
    if (pp.domain.kind != DomainSpec::Kind::Ball)
        throw invalid_argument_error("minimize_S_ball: params must be a ball domain");
    if (!cfg.grid) throw invalid_argument_error("minimize_S_ball: config has no grid");
    if (std::abs(cfg.grid->r_cut - pp.domain.radius) >
        1e-12 * std::max(1.0, pp.domain.radius))
        throw invalid_argument_error(
            "minimize_S_ball: grid must be truncated at the domain radius");
    return detail::minimize_impl(pp, cfg, TailModel::Kind::Zero, 0.0);
}

} // namespace fraclab

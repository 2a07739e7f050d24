#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <random>

#include "fraclab/fraclap.hpp"
#include "oracles.hpp"

using namespace fraclab;
using Catch::Approx;

namespace {

RadialProfile gaussian_profile(const std::shared_ptr<const RadialGrid>& g) {
    return sample_profile(
        g, [](double r) { return std::exp(-0.5 * r * r); }, TailModel::zero());
}

RadialProfile bubble_profile(const std::shared_ptr<const RadialGrid>& g, int N,
                             double s) {
    const double gamma = double(N) - 2.0 * s;
    auto u = sample_profile(
        g, [&](double r) { return std::pow(1.0 + r * r, -0.5 * gamma); },
        std::nullopt);
    u.tail = spliced_power_tail(u, gamma);
    return u;
}

// Sharp constant in (-Delta)^s (1+|x|^2)^{-(N-2s)/2} = lam * (same)^{(N+2s)/(N-2s)}
double bubble_constant(int N, double s) {
    return std::pow(2.0, 2.0 * s) * std::tgamma(0.5 * (N + 2.0 * s)) /
           std::tgamma(0.5 * (N - 2.0 * s));
}

double rel_l2(const RadialGrid& g, const std::vector<double>& got,
              const std::vector<double>& want, double r_max = 1e300) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g.nodes[i] > r_max) break;
        num += g.weights[i] * (got[i] - want[i]) * (got[i] - want[i]);
        den += g.weights[i] * want[i] * want[i];
    }
    return std::sqrt(num / den);
}

} // namespace

TEST_CASE("angular rule: normalization, moments, N=1 reduction") {
    for (int N : {2, 3, 4, 5, 7, 11}) {
        auto ar = detail::angular_rule(N, 32);
        REQUIRE(ar.t.size() == 32);
        double m0 = 0, m1 = 0, m2 = 0, m3 = 0, m4 = 0;
        for (std::size_t j = 0; j < ar.t.size(); ++j) {
            REQUIRE(ar.w[j] > 0.0);
            REQUIRE(std::abs(ar.t[j]) <= 1.0);
            m0 += ar.w[j];
            m1 += ar.w[j] * ar.t[j];
            m2 += ar.w[j] * ar.t[j] * ar.t[j];
            m3 += ar.w[j] * std::pow(ar.t[j], 3);
            m4 += ar.w[j] * std::pow(ar.t[j], 4);
        }
        // exact moments of the normalized measure (1-t^2)^{(N-3)/2} dt on [-1,1]
        CHECK(m0 == Approx(1.0).margin(1e-14));
        CHECK(m1 == Approx(0.0).margin(1e-14));
        CHECK(m2 == Approx(1.0 / N).margin(1e-13));
        CHECK(m3 == Approx(0.0).margin(1e-14));
        CHECK(m4 == Approx(3.0 / (double(N) * (N + 2.0))).margin(1e-13));
    }
    // N = 1: the sphere is two points
    auto a1 = detail::angular_rule(1, 32);
    REQUIRE(a1.t.size() == 2);
    CHECK(a1.t[0] == Approx(-1.0).margin(1e-15));
    CHECK(a1.t[1] == Approx(1.0).margin(1e-15));
    CHECK(a1.w[0] == Approx(0.5).margin(1e-15));
    CHECK(a1.w[1] == Approx(0.5).margin(1e-15));

    CHECK_THROWS_AS(detail::angular_rule(0, 32), invalid_argument_error);
    CHECK_THROWS_AS(detail::angular_rule(3, 1), invalid_argument_error);
}

TEST_CASE("constants are annihilated") {
    auto pp = ProblemParams::for_operator(3, 0.5, DomainSpec::whole_space());
    auto g = make_log_grid(1e-3 * 20.0, 20.0, 512, 3);
    auto u = sample_profile(g, [](double) { return 0.7; },
                            TailModel::power_law(0.7, 0.0));
    auto out = fraclap_radial(u, pp, 32);
    double mx = 0.0;
    for (double v : out.profile.values) mx = std::max(mx, std::abs(v));
    CHECK(mx < 1e-6 * 0.7);
}

TEST_CASE("matvec is linear and the engine is cached per grid") {
    auto pp = ProblemParams::for_operator(3, 0.4, DomainSpec::whole_space());
    auto g = make_log_grid(1e-2, 10.0, 256, 3);
    auto u = gaussian_profile(g);
    auto v = sample_profile(
        g, [](double r) { return r * r * std::exp(-r * r); }, TailModel::zero());

    auto combo = u;
    for (std::size_t i = 0; i < g->size(); ++i)
        combo.values[i] = 2.5 * u.values[i] - 0.75 * v.values[i];

    auto ou = fraclap_radial(u, pp, 32);
    auto ov = fraclap_radial(v, pp, 32);
    auto oc = fraclap_radial(combo, pp, 32);
    double mx = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i) {
        const double want = 2.5 * ou.profile.values[i] - 0.75 * ov.profile.values[i];
        mx = std::max(mx, std::abs(oc.profile.values[i] - want));
        scale = std::max(scale, std::abs(want));
    }
    CHECK(mx < 1e-12 * scale);

    // same grid object + same parameters -> the identical engine instance
    auto e1 = engine_for(g, pp, TailModel::Kind::Zero, 0.0, 32);
    auto e2 = engine_for(g, pp, TailModel::Kind::Zero, 0.0, 32);
    CHECK(e1.get() == e2.get());
    auto e3 = engine_for(g, pp, TailModel::Kind::Zero, 0.0, 16);
    CHECK(e1.get() != e3.get());
}

TEST_CASE("bubble identity with the sharp Gamma-quotient constant") {
    struct Case {
        int N;
        double s;
    };
    for (auto c : {Case{3, 0.5}, Case{2, 0.7}, Case{4, 0.35}}) {
        auto pp = ProblemParams::for_operator(c.N, c.s, DomainSpec::whole_space());
        auto g = make_log_grid(1e-3 * 20.0, 20.0, 512, c.N);
        auto u = bubble_profile(g, c.N, c.s);
        auto out = fraclap_radial(u, pp, 32);
        const double pexp = (c.N + 2.0 * c.s) / (c.N - 2.0 * c.s);
        double lo = 1e300, hi = -1e300;
        for (std::size_t i = 0; i < g->size(); ++i) {
            if (g->nodes[i] > 5.0) break;
            const double ratio =
                out.profile.values[i] / std::pow(u.values[i], pexp);
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
        }
        INFO("N=" << c.N << " s=" << c.s);
        // pointwise proportionality on r <= 5 (measured spread <= 3.2e-4)
        CHECK((hi - lo) / (0.5 * (hi + lo)) < 1e-2);
        // and the constant itself matches the Gamma-quotient closed form
        const double lam = bubble_constant(c.N, c.s);
        CHECK(std::abs(0.5 * (lo + hi) / lam - 1.0) < 1e-3);
        // independent check of the closed form against the Lanczos oracle
        const double lam_oracle =
            std::pow(2.0, 2.0 * c.s) * oracle::gamma(0.5 * (c.N + 2.0 * c.s)) /
            oracle::gamma(0.5 * (c.N - 2.0 * c.s));
        CHECK(lam == Approx(lam_oracle).epsilon(1e-12));
    }
}

TEST_CASE("operator dilation covariance at lambda = 2") {
    auto pp = ProblemParams::for_operator(3, 0.5, DomainSpec::whole_space());
    auto g = make_log_grid(1e-3 * 12.0, 12.0, 512, 3);
    auto u = gaussian_profile(g);
    auto out = fraclap_radial(u, pp, 32);
    auto u2 = dilate(u, 2.0);
    auto out2 = fraclap_radial(u2, pp, 32);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i) {
        const double want =
            std::pow(2.0, 2.0 * pp.s) * eval_profile(out.profile, 2.0 * g->nodes[i]);
        num += g->weights[i] * std::pow(out2.profile.values[i] - want, 2.0);
        den += g->weights[i] * want * want;
    }
    CHECK(std::sqrt(num / den) < 1e-2); // measured 5.4e-5
}

TEST_CASE("half-Laplacian of the standard Gaussian on the line") {
    auto pp = ProblemParams::for_operator(1, 0.5, DomainSpec::whole_space());
    auto g = make_log_grid(1e-3 * 12.0, 12.0, 512, 1);
    auto u = gaussian_profile(g);
    auto out = fraclap_radial(u, pp, 32);
    // value at the origin is sqrt(2/pi); first node sits at r ~ 1e-2
    const double want = std::sqrt(2.0 / pi);
    CHECK(std::abs(out.profile.values[0] - want) / want < 1e-3); // measured 1.4e-4
    // positive near the maximum of a positive bump
    CHECK(out.profile.values[0] > 0.0);
    // N = 1 uses the exact two-point sphere, so the rule-halving estimate is 0
    CHECK(out.quadrature_error_estimate == 0.0);
}

TEST_CASE("classical limit: s = 0.99 approaches -Laplacian of the Gaussian") {
    auto pp = ProblemParams::for_operator(3, 0.99, DomainSpec::whole_space());
    auto g = make_log_grid(1e-3 * 12.0, 12.0, 512, 3);
    auto u = gaussian_profile(g);
    auto out = fraclap_radial(u, pp, 32);
    std::vector<double> want(g->size());
    for (std::size_t i = 0; i < g->size(); ++i) {
        const double r = g->nodes[i];
        want[i] = (3.0 - r * r) * std::exp(-0.5 * r * r);
    }
    CHECK(rel_l2(*g, out.profile.values, want, 4.0) < 5e-2); // measured 1.2e-2
}

TEST_CASE("quadrature error estimate is nonnegative and small") {
    auto pp = ProblemParams::for_operator(3, 0.5, DomainSpec::whole_space());
    auto g = make_log_grid(1e-3 * 12.0, 12.0, 512, 3);
    auto out = fraclap_radial(gaussian_profile(g), pp, 32);
    double mx = 0.0;
    for (double v : out.profile.values) mx = std::max(mx, std::abs(v));
    CHECK(out.quadrature_error_estimate >= 0.0);
    CHECK(out.quadrature_error_estimate < 1e-2 * mx); // measured 3.2e-4 * max
}

TEST_CASE("Plancherel energy, duality, and form symmetry for the Gaussian") {
    auto pp = ProblemParams::for_operator(3, 0.5, DomainSpec::whole_space());
    auto g = make_log_grid(1e-3 * 12.0, 12.0, 1024, 3);
    auto u = gaussian_profile(g);
    auto out = fraclap_radial(u, pp, 32);

    const double E = gagliardo_energy(u, pp);
    // closed form: int |xi| |uhat|^2 = 2 pi for exp(-|x|^2/2) in R^3
    CHECK(std::abs(E - 2.0 * pi) / (2.0 * pi) < 1e-3); // measured 6.0e-5

    // duality: the seminorm equals <u, (-Delta)^s u> in L^2
    double dual = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i)
        dual += g->weights[i] * u.values[i] * out.profile.values[i];
    CHECK(std::abs(E - dual) / dual < 1e-3); // measured 1.4e-5

    // near-symmetry of the bilinear form: <v, Au> = <u, Av> up to quadrature
    auto v = sample_profile(
        g, [](double r) { return std::exp(-r * r); }, TailModel::zero());
    auto ov = fraclap_radial(v, pp, 32);
    double vAu = 0.0, uAv = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i) {
        vAu += g->weights[i] * v.values[i] * out.profile.values[i];
        uAv += g->weights[i] * u.values[i] * ov.profile.values[i];
    }
    CHECK(std::abs(vAu - uAv) / std::abs(uAv) < 1e-3); // measured 4.5e-5

    // energy_form agrees with the seminorm, apply_sym is its exact W-gradient
    auto eng = engine_for(g, pp, TailModel::Kind::Zero, 0.0, 32);
    Eigen::Map<const Eigen::VectorXd> uv(u.values.data(), long(g->size()));
    const double Eform = eng->energy_form(uv);
    CHECK(std::abs(2.0 * Eform - dual) / dual < 1e-12); // same discrete object

    Eigen::VectorXd grad = eng->apply_sym(uv);
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<std::size_t> pick(0, g->size() - 1);
    for (int k = 0; k < 5; ++k) {
        const std::size_t i = pick(rng);
        const double h = 1e-5;
        Eigen::VectorXd up = uv, dn = uv;
        up(long(i)) += h;
        dn(long(i)) -= h;
        const double fd = (eng->energy_form(up) - eng->energy_form(dn)) / (2.0 * h);
        // dE/du_i = w_i * apply_sym(u)_i
        const double an = g->weights[i] * grad(long(i));
        CHECK(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(an)));
    }
}

TEST_CASE("seminorm closed forms for bubbles") {
    // N=3, s=1/2: E = lam_b * int u^3 = 2 * 4pi * pi/16 = pi^2/2
    {
        auto pp = ProblemParams::for_operator(3, 0.5, DomainSpec::whole_space());
        auto g = make_log_grid(1e-3 * 20.0, 20.0, 512, 3);
        auto u = bubble_profile(g, 3, 0.5);
        const double E = gagliardo_energy(u, pp);
        const double want = pi * pi / 2.0;
        CHECK(std::abs(E - want) / want < 2e-3); // measured 1.9e-4
    }
    // N=2, s=3/4: E = lam_b * int u^{2N/(N-2s)} = lam_b * int (1+r^2)^{-2} dx
    //           = lam_b * 2pi * 1/2 = lam_b * pi
    {
        auto pp = ProblemParams::for_operator(2, 0.75, DomainSpec::whole_space());
        auto g = make_log_grid(1e-3 * 16.0, 16.0, 512, 2);
        auto u = bubble_profile(g, 2, 0.75);
        const double E = gagliardo_energy(u, pp);
        const double want = bubble_constant(2, 0.75) * pi;
        CHECK(std::abs(E - want) / want < 1e-2); // measured 2.0e-3 (tail-model floor)
    }
}

TEST_CASE("energy and mass dilation laws at lambda = 2") {
    auto pp = make_params(3, 0.5, 3.0, 6.0, DomainSpec::whole_space());
    auto g = make_log_grid(1e-3 * 20.0, 20.0, 512, 3);
    auto u = bubble_profile(g, 3, 0.5);
    const double E1 = gagliardo_energy(u, pp);
    auto u2 = dilate(u, 2.0);
    const double E2 = gagliardo_energy(u2, pp);
    const double law = std::pow(2.0, 2.0 * pp.s - pp.N);
    CHECK(std::abs(E2 / E1 - law) / law < 1e-3); // measured 5.1e-5

    // mass of u^{p+1} scales exactly like lambda^{-N}
    const double m1 = mass_power(u, 4.0);
    const double m2 = mass_power(u2, 4.0);
    CHECK(std::abs(m2 / m1 - 0.125) / 0.125 < 1e-6); // measured 9.6e-9
}

TEST_CASE("dilate: identity at lambda = 1, exact tail transformation") {
    auto g = make_log_grid(1e-3 * 20.0, 20.0, 256, 3);
    auto u = bubble_profile(g, 3, 0.5);
    auto same = dilate(u, 1.0);
    CHECK(same.grid.get() == g.get());
    for (std::size_t i = 0; i < g->size(); ++i)
        CHECK(same.values[i] == Approx(u.values[i]).margin(1e-15));
    REQUIRE(same.tail.has_value());
    CHECK(same.tail->amplitude == Approx(u.tail->amplitude).epsilon(1e-15));

    auto half = dilate(u, 2.0);
    REQUIRE(half.tail.has_value());
    CHECK(half.tail->kind == TailModel::Kind::PowerLaw);
    CHECK(half.tail->exponent == Approx(u.tail->exponent).epsilon(1e-15));
    // amplitude picks up lambda^{-gamma}
    CHECK(half.tail->amplitude ==
          Approx(u.tail->amplitude * std::pow(2.0, -u.tail->exponent))
              .epsilon(1e-14));
    CHECK_THROWS_AS(dilate(u, 0.0), invalid_argument_error);
    CHECK_THROWS_AS(dilate(u, -1.0), invalid_argument_error);
}

TEST_CASE("divergent seminorms are refused, missing tails are refused") {
    auto pp = make_params(3, 0.5, 3.0, 6.0, DomainSpec::whole_space());
    auto g = make_log_grid(1e-3 * 20.0, 20.0, 256, 3);

    // gamma <= (N - 2s)/2 = 1 means |u|_{H^s}^2 = +infinity
    for (double gamma : {0.8, 1.0}) {
        auto u = sample_profile(
            g, [&](double r) { return std::pow(1.0 + r * r, -0.5 * gamma); },
            TailModel::power_law(1.0, gamma));
        CHECK_THROWS_AS(gagliardo_energy(u, pp), divergent_seminorm);
    }

    // the energy always needs a declared exterior model
    auto nt = sample_profile(
        g, [](double r) { return std::exp(-0.5 * r * r); }, std::nullopt);
    CHECK_THROWS_AS(gagliardo_energy(nt, pp), tail_required);

    // operator: a heavy tail left undeclared is refused ...
    auto heavy = sample_profile(
        g, [](double r) { return 1.0 / (1.0 + r * r); }, std::nullopt);
    CHECK_THROWS_AS(fraclap_radial(heavy, pp, 32), tail_required);
    // ... but a Gaussian's exterior mass is negligible without a model
    CHECK_NOTHROW(fraclap_radial(nt, pp, 32));
}

TEST_CASE("kinked data: diverges for s > 1/2, integrable below") {
    auto g = make_log_grid(1e-3 * 10.0, 10.0, 512, 3);
    auto u = sample_profile(
        g, [](double r) { return std::exp(-std::abs(r - 2.0)); }, std::nullopt);
    u.tail = spliced_power_tail(u, 3.0);

    auto pp6 = ProblemParams::for_operator(3, 0.6, DomainSpec::whole_space());
    CHECK_THROWS_AS(fraclap_radial(u, pp6, 32), quadrature_diverged);

    auto pp3 = ProblemParams::for_operator(3, 0.3, DomainSpec::whole_space());
    OperatorOutput out;
    REQUIRE_NOTHROW(out = fraclap_radial(u, pp3, 32));
    for (double v : out.profile.values) CHECK(std::isfinite(v));

    // smooth data never trips the detector
    auto smooth = bubble_profile(g, 3, 0.5);
    auto ks = detail::kink_scan(*g, smooth.values);
    CHECK(ks.first < 0.15);
}

TEST_CASE("results are bitwise deterministic across thread counts") {
    auto pp = ProblemParams::for_operator(3, 0.5, DomainSpec::whole_space());
    auto ppe = make_params(3, 0.5, 3.0, 6.0, DomainSpec::whole_space());
    auto f = [](double r) { return std::exp(-0.5 * r * r); };

    // distinct grid objects so each run assembles its own engine
    setenv("FRAC_THREADS", "1", 1);
    auto g1 = make_log_grid(1e-2, 10.0, 256, 3);
    auto u1 = sample_profile(g1, f, TailModel::zero());
    auto o1 = fraclap_radial(u1, pp, 32);
    const double e1 = gagliardo_energy(u1, ppe);

    setenv("FRAC_THREADS", "7", 1);
    auto g7 = make_log_grid(1e-2, 10.0, 256, 3);
    auto u7 = sample_profile(g7, f, TailModel::zero());
    auto o7 = fraclap_radial(u7, pp, 32);
    const double e7 = gagliardo_energy(u7, ppe);
    unsetenv("FRAC_THREADS");

    for (std::size_t i = 0; i < g1->size(); ++i)
        REQUIRE(o1.profile.values[i] == o7.profile.values[i]);
    REQUIRE(e1 == e7);
}

TEST_CASE("operator input validation") {
    auto pp = ProblemParams::for_operator(3, 0.5, DomainSpec::whole_space());
    auto g = make_log_grid(1e-2, 10.0, 128, 3);
    auto u = gaussian_profile(g);

    RadialProfile broken = u;
    broken.grid = nullptr;
    CHECK_THROWS_AS(fraclap_radial(broken, pp, 32), invalid_argument_error);

    RadialProfile short_values = u;
    short_values.values.pop_back();
    CHECK_THROWS_AS(fraclap_radial(short_values, pp, 32), invalid_argument_error);

    CHECK_THROWS_AS(fraclap_radial(u, pp, 4), invalid_argument_error);

    // grid dimension tag and operator dimension must agree
    auto pp2 = ProblemParams::for_operator(2, 0.5, DomainSpec::whole_space());
    CHECK_THROWS_AS(fraclap_radial(u, pp2, 32), invalid_argument_error);
}

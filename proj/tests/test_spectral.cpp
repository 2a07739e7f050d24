#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fraclab/fraclap.hpp"
#include "fraclab/spectral.hpp"
#include "oracles.hpp"

using namespace fraclab;
using Catch::Approx;

TEST_CASE("field validation") {
    auto ok = sample_line(10.0, 64, [](double x) { return std::exp(-x * x); });
    CHECK_NOTHROW(fraclap_spectral(ok, 0.5));

    UniformField bad = ok;
    bad.M = 63; // not a power of two (and size mismatch)
    CHECK_THROWS_AS(fraclap_spectral(bad, 0.5), invalid_argument_error);

    bad = ok;
    bad.dim = 3;
    CHECK_THROWS_AS(fraclap_spectral(bad, 0.5), invalid_argument_error);

    bad = ok;
    bad.values.pop_back();
    CHECK_THROWS_AS(fraclap_spectral(bad, 0.5), invalid_argument_error);

    bad = ok;
    bad.values[10] = std::nan("");
    CHECK_THROWS_AS(fraclap_spectral(bad, 0.5), invalid_argument_error);

    CHECK_THROWS_AS(fraclap_spectral(ok, 0.0), invalid_argument_error);
    CHECK_THROWS_AS(fraclap_spectral(ok, 1.5), invalid_argument_error);
    CHECK_NOTHROW(fraclap_spectral(ok, 1.0)); // endpoint used by composition
}

TEST_CASE("zero field maps to zero") {
    auto z = sample_line(5.0, 128, [](double) { return 0.0; });
    auto out = fraclap_spectral(z, 0.5);
    for (double v : out.values) CHECK(v == 0.0);

    auto z2 = sample_plane(5.0, 32, [](double, double) { return 0.0; });
    auto out2 = fraclap_spectral(z2, 0.7);
    for (double v : out2.values) CHECK(v == 0.0);
}

TEST_CASE("lattice plane waves are exact eigenfunctions") {
    const double L = 10.0;
    // 1-D, cos and sin branches
    {
        const std::size_t M = 256;
        const int k0 = 7;
        const double xi0 = pi * k0 / L;
        const double s = 0.37;
        const double mu = std::pow(xi0, 2.0 * s);
        for (bool use_sin : {false, true}) {
            auto w = sample_line(L, M, [&](double x) {
                return use_sin ? std::sin(xi0 * x) : std::cos(xi0 * x);
            });
            auto out = fraclap_spectral(w, s, /*enforce_decay=*/false);
            double mx = 0.0;
            for (std::size_t j = 0; j < M; ++j)
                mx = std::max(mx, std::abs(out.values[j] - mu * w.values[j]));
            CHECK(mx < 1e-12 * mu);
        }
    }
    // 2-D oblique wave
    {
        const std::size_t M = 64;
        const double kx = pi * 3 / L, ky = pi * 5 / L;
        const double s = 0.6;
        const double mu = std::pow(kx * kx + ky * ky, s);
        auto w = sample_plane(
            L, M, [&](double x, double y) { return std::cos(kx * x + ky * y); });
        auto out = fraclap_spectral(w, s, false);
        double mx = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i)
            mx = std::max(mx, std::abs(out.values[i] - mu * w.values[i]));
        CHECK(mx < 1e-12 * mu);
    }
}

TEST_CASE("boundary leak guard") {
    const double L = 10.0;
    // non-decaying data is refused by default
    auto w = sample_line(L, 128, [&](double x) { return std::cos(pi * 3 * x / L); });
    CHECK_THROWS_AS(fraclap_spectral(w, 0.5), boundary_leak);

    // a bump parked against the box face leaks, a centered one does not
    auto off = sample_line(L, 256, [&](double x) {
        return std::exp(-0.5 * (x - 9.0) * (x - 9.0));
    });
    CHECK_THROWS_AS(fraclap_spectral(off, 0.5), boundary_leak);
    auto mid = sample_line(L, 256, [](double x) { return std::exp(-0.5 * x * x); });
    CHECK_NOTHROW(fraclap_spectral(mid, 0.5));

    // 2-D: mass on a y-face is caught too
    auto off2 = sample_plane(L, 64, [&](double x, double y) {
        return std::exp(-0.5 * (x * x + (y - 9.5) * (y - 9.5)));
    });
    CHECK_THROWS_AS(fraclap_spectral(off2, 0.5), boundary_leak);
}

TEST_CASE("Gaussian at the origin matches the multiplier quadrature") {
    // (-Δ)^{1/2} u(0) = (2π)^{-1/2} ∫ |ξ| e^{-ξ²/2} dξ, by adaptive quadrature
    // (integrate where the mass lives: the remainder beyond ξ=10 is e^{-50})
    const double I =
        std::sqrt(2.0 / pi) *
        oracle::integrate([](double xi) { return xi * std::exp(-0.5 * xi * xi); },
                          0.0, 10.0, 1e-14);
    // the closed form of that integral is sqrt(2/pi)
    CHECK(I == Approx(std::sqrt(2.0 / pi)).epsilon(1e-10));

    auto at_origin = [&](double L, std::size_t M) {
        auto g = sample_line(L, M, [](double x) { return std::exp(-0.5 * x * x); });
        auto out = fraclap_spectral(g, 0.5);
        return out.values[M / 2]; // lattice point x = 0
    };

    // The discrete ξ-sum is a trapezoid rule across the |ξ| kink at 0, so its
    // error against the continuum is the Euler-Maclaurin kink term
    //   2|ζ(-1)|·Δξ²·û(0)/(2π) = Δξ²/(6·sqrt(2π)),  Δξ = π/L,
    // independent of M.  Check the value against prediction, the Δξ² decay,
    // and that a large enough box reaches 1e-6.
    auto kink_term = [&](double L) {
        return std::pow(pi / L, 2) / (6.0 * std::sqrt(2.0 * pi));
    };
    const double e20 = std::abs(at_origin(20.0, 4096) - I);
    CHECK(e20 < 5e-3 * I);
    CHECK(e20 == Approx(kink_term(20.0)).epsilon(5e-2));
    const double e80 = std::abs(at_origin(80.0, 4096) - I);
    CHECK(e80 / e20 < 0.08); // Δξ² law: 4x box -> 16x smaller
    CHECK(std::abs(at_origin(1638.4, 16384) - I) / I < 1e-6); // measured 3.1e-7
}

TEST_CASE("multipliers compose: s then s' equals s + s'") {
    const double L = 20.0;
    auto g = sample_line(L, 1024, [](double x) { return std::exp(-0.5 * x * x); });
    const double s1 = 0.3, s2 = 0.45;
    // the once-applied field has fat polynomial tails, so the second hop
    // must skip the decay guard; on the lattice the identity is exact algebra
    auto twice = fraclap_spectral(fraclap_spectral(g, s1), s2, false);
    auto once = fraclap_spectral(g, s1 + s2);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.M; ++i) {
        num += std::pow(twice.values[i] - once.values[i], 2.0);
        den += std::pow(once.values[i], 2.0);
    }
    CHECK(std::sqrt(num / den) < 1e-10);

    // same in 2-D
    auto g2 = sample_plane(8.0, 64, [](double x, double y) {
        return std::exp(-(x * x + y * y));
    });
    auto t2 = fraclap_spectral(fraclap_spectral(g2, 0.25), 0.5, false);
    auto o2 = fraclap_spectral(g2, 0.75);
    num = den = 0.0;
    for (std::size_t i = 0; i < g2.size(); ++i) {
        num += std::pow(t2.values[i] - o2.values[i], 2.0);
        den += std::pow(o2.values[i], 2.0);
    }
    CHECK(std::sqrt(num / den) < 1e-10);
}

TEST_CASE("discrete Parseval energy is nonnegative and the form symmetric") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> dist(0.0, 1.0);
    const double L = 6.0;
    const std::size_t M = 128;
    for (int trial = 0; trial < 5; ++trial) {
        UniformField f;
        f.dim = 1;
        f.L = L;
        f.M = M;
        f.values.resize(M);
        for (auto& v : f.values) v = dist(rng);
        auto Af = fraclap_spectral(f, 0.5, false);
        double E = 0.0;
        for (std::size_t i = 0; i < M; ++i)
            E += f.values[i] * Af.values[i] * f.cell_volume();
        CHECK(E >= 0.0);

        UniformField g = f;
        for (auto& v : g.values) v = dist(rng);
        auto Ag = fraclap_spectral(g, 0.5, false);
        double fAg = 0.0, gAf = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            fAg += f.values[i] * Ag.values[i];
            gAf += g.values[i] * Af.values[i];
        }
        CHECK(std::abs(fAg - gAf) <= 1e-10 * std::max(std::abs(fAg), 1.0));
    }
}

TEST_CASE("radial restriction: bins, averages, and symmetry guard") {
    // 2-D radial Gaussian comes back exactly as exp(-r²) on binned radii
    auto f = sample_plane(8.0, 128, [](double x, double y) {
        return std::exp(-(x * x + y * y));
    });
    auto prof = restrict_to_radial(f);
    REQUIRE(prof.grid);
    CHECK(prof.grid->dim == 2);
    CHECK(prof.tail.has_value());
    CHECK(prof.tail->kind == TailModel::Kind::Zero);
    double mx = 0.0;
    for (std::size_t i = 0; i < prof.grid->size(); ++i) {
        const double r = prof.grid->nodes[i];
        mx = std::max(mx, std::abs(prof.values[i] - std::exp(-r * r)));
    }
    CHECK(mx < 1e-8);
    // the origin sample is its own bin
    CHECK(prof.grid->nodes.front() == 0.0);
    CHECK(prof.values.front() == Approx(1.0).margin(1e-14));

    // an odd field is rejected
    auto odd = sample_plane(8.0, 64, [](double x, double) { return x; });
    CHECK_THROWS_AS(restrict_to_radial(odd), not_radial);
    // even but not radial is rejected too (caught by transposition)
    auto anis = sample_plane(8.0, 64, [](double x, double y) {
        return std::exp(-(x * x + 4.0 * y * y));
    });
    CHECK_THROWS_AS(restrict_to_radial(anis), not_radial);

    // constants restrict to constants
    auto c = sample_plane(8.0, 32, [](double, double) { return 3.25; });
    auto cp = restrict_to_radial(c);
    for (double v : cp.values) CHECK(v == Approx(3.25).margin(1e-14));

    // tolerance edge: 5e-9 relative asymmetry passes, 1e-6 fails
    auto soft = sample_line(8.0, 256, [](double x) {
        return std::exp(-x * x) + (x > 0 ? 5e-9 : 0.0);
    });
    CHECK_NOTHROW(restrict_to_radial(soft));
    auto hard = sample_line(8.0, 256, [](double x) {
        return std::exp(-x * x) + (x > 0 ? 1e-6 : 0.0);
    });
    CHECK_THROWS_AS(restrict_to_radial(hard), not_radial);
}

TEST_CASE("spectral oracle agrees with the radial collocation engine") {
    // N = 1, s = 1/2, standard Gaussian
    {
        auto pp = ProblemParams::for_operator(1, 0.5, DomainSpec::whole_space());
        auto rg = make_log_grid(1e-3 * 12.0, 12.0, 1024, 1);
        auto ur = sample_profile(
            rg, [](double r) { return std::exp(-0.5 * r * r); }, TailModel::zero());
        auto radial = fraclap_radial(ur, pp, 32);

        auto uf = sample_line(20.0, 4096,
                              [](double x) { return std::exp(-0.5 * x * x); });
        auto spec = restrict_to_radial(fraclap_spectral(uf, 0.5, false));

        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < spec.grid->size(); ++i) {
            const double r = spec.grid->nodes[i];
            if (r < rg->nodes.front() || r > 8.0) continue;
            const double a = spec.values[i];
            const double b = eval_profile(radial.profile, r);
            num += spec.grid->weights[i] * (a - b) * (a - b);
            den += spec.grid->weights[i] * b * b;
        }
        CHECK(std::sqrt(num / den) < 1e-2);
    }
    // N = 2, s = 0.6
    {
        auto pp = ProblemParams::for_operator(2, 0.6, DomainSpec::whole_space());
        auto rg = make_log_grid(1e-3 * 12.0, 12.0, 512, 2);
        auto ur = sample_profile(
            rg, [](double r) { return std::exp(-0.5 * r * r); }, TailModel::zero());
        auto radial = fraclap_radial(ur, pp, 32);

        auto uf = sample_plane(12.0, 256, [](double x, double y) {
            return std::exp(-0.5 * (x * x + y * y));
        });
        auto spec = restrict_to_radial(fraclap_spectral(uf, 0.6, false));

        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < spec.grid->size(); ++i) {
            const double r = spec.grid->nodes[i];
            if (r < rg->nodes.front() || r > 6.0) continue;
            const double a = spec.values[i];
            const double b = eval_profile(radial.profile, r);
            num += spec.grid->weights[i] * (a - b) * (a - b);
            den += spec.grid->weights[i] * b * b;
        }
        CHECK(std::sqrt(num / den) < 1e-2);
    }
}

TEST_CASE("spectral evaluation is deterministic") {
    auto g = sample_line(15.0, 512, [](double x) { return std::exp(-x * x); });
    auto a = fraclap_spectral(g, 0.4);
    auto b = fraclap_spectral(g, 0.4);
    for (std::size_t i = 0; i < g.M; ++i) REQUIRE(a.values[i] == b.values[i]);
}

#pragma once

// Hand-rolled generators for property tests. Every case is derived from a
// printed seed so a failure can be replayed in isolation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mare/mare.hpp"

namespace mare::testing {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    long integer(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng_); }
    bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }
    std::mt19937_64& engine() { return rng_; }

    long even(long lo, long hi) { return 2 * integer((lo + 1) / 2, hi / 2); }

    // Superconducting scenario with omega_S + A m > 0 on the whole grid.
    ScenarioParams sc_params(long n_eff) {
        const double half = 0.5 * static_cast<double>(n_eff);
        ScenarioParams p = ScenarioParams::superconducting(1.0, uniform(-0.9, 0.9) / half, uniform(0.05, 0.5),
                                                           uniform(0.0, 2.0), n_eff);
        if (coin(0.3)) p.gamma_deph = uniform(0.0, 0.2);
        return p;
    }

    // Toy quantum dot with spin-1/2 nuclei (N' = N) and a non-degenerate field.
    ScenarioParams qd_params(long n_eff) {
        ScenarioParams p;
        p.kind = ScenarioKind::quantum_dot;
        p.N = n_eff;
        p.s = 0.5;
        p.omega_B = 1.0;
        p.Omega = uniform(0.5, 1.5);
        p.A_c = uniform(-0.3, 0.3);
        p.Delta = uniform(-0.2, 0.2);
        p.gamma = uniform(0.2, 0.5);
        p.A_nc = uniform(0.05, 0.15);
        return p;
    }

    ScenarioParams any_params(long n_eff) { return coin(0.6) ? sc_params(n_eff) : qd_params(n_eff); }

    // Normalized distribution; sparse or smooth at random.
    std::vector<double> distribution(std::size_t n) {
        std::vector<double> P(n, 0.0);
        double total = 0.0;
        const bool sparse = coin(0.3);
        for (auto& p : P) {
            p = sparse && coin(0.5) ? 0.0 : uniform(0.0, 1.0);
            total += p;
        }
        if (total == 0.0) {
            P[n / 2] = 1.0;
            return P;
        }
        for (auto& p : P) p /= total;
        return P;
    }

    Vec3 unit_vector() {
        const double z = uniform(-1.0, 1.0);
        const double phi = uniform(0.0, 2.0 * std::numbers::pi);
        const double r = std::sqrt(1.0 - z * z);
        return {r * std::cos(phi), r * std::sin(phi), z};
    }

    // Positive joint state: each 2x2 block satisfies |q|^2 <= p_up p_down.
    JointState state(const Scenario& sc) { return random_state(sc.grid_ptr(), rng_); }

    double duration(double rate_scale) { return uniform(0.05, 3.0) / rate_scale; }

private:
    std::mt19937_64 rng_;
};

// Runs `body` for `cases` seeds derived from `base`; the failing seed is
// attached to every assertion message.
inline void for_all(int cases, std::uint64_t base, const std::function<void(Gen&)>& body) {
    for (int k = 0; k < cases; ++k) {
        const std::uint64_t seed = base * 1000003ULL + static_cast<std::uint64_t>(k);
        SCOPED_TRACE(::testing::Message() << "seed=" << seed);
        Gen g(seed);
        body(g);
        if (::testing::Test::HasFatalFailure()) return;
    }
}

inline double max_rate(const Scenario& sc) {
    double r = 0.0;
    const auto& g = sc.grid();
    for (int m = g.m_min(); m <= g.m_max() + 1; ++m) {
        r = std::max(r, sc.rates().scaled(m) * (1.0 + (g.contains(m - 1) ? g.ratio_unchecked(m - 1) : 0.0)));
    }
    return std::max(r, 1e-6);
}

inline std::vector<double> gaussian(const MagnetizationGrid& g, double mu, double sigma) {
    std::vector<double> P(g.size());
    double total = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double d = (g.m_at(i) - mu) / sigma;
        P[i] = std::exp(-0.5 * d * d);
        total += P[i];
    }
    for (auto& p : P) p /= total;
    return P;
}

}  // namespace mare::testing

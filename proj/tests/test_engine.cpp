#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <gtest/gtest.h>

#include "support.hpp"

using namespace mare;
using mare::testing::Gen;

namespace {

// Population generator of the rate equations assembled from Gamma_m and V_m
// directly, exponentiated densely.
Eigen::VectorXd dense_population_evolution(const Scenario& sc, const JointState& st, double t) {
    const auto& g = sc.grid();
    const auto n = static_cast<Eigen::Index>(2 * g.size());
    Eigen::MatrixXd gen = Eigen::MatrixXd::Zero(n, n);
    for (int m = g.m_min(); m < g.m_max(); ++m) {
        const auto up = static_cast<Eigen::Index>(2 * g.index(m) + 1);
        const auto down = static_cast<Eigen::Index>(2 * g.index(m + 1));
        const double v_lo = std::exp(g.log_volume(m));
        const double v_hi = std::exp(g.log_volume(m + 1));
        const double gamma = jump_rate(sc.params(), g, m + 1).scaled * v_hi;
        const double k_out = gamma / v_lo;  // (up, m) -> (down, m+1)
        const double k_in = gamma / v_hi;   // (down, m+1) -> (up, m)
        gen(up, up) -= k_out;
        gen(down, up) += k_out;
        gen(down, down) -= k_in;
        gen(up, down) += k_in;
    }
    Eigen::VectorXd p0(n);
    for (Eigen::Index i = 0; i < n; ++i) p0(i) = st.populations()[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd prop = (gen * t).exp();
    return prop * p0;
}

std::vector<double> sample_times(double horizon, int count) {
    std::vector<double> out;
    for (int k = 1; k <= count; ++k) out.push_back(horizon * k / count);
    return out;
}

}  // namespace

TEST(Engine, PopulationsMatchDenseMatrixExponential) {
    mare::testing::for_all(40, 20, [](Gen& gen) {
        const long n = gen.even(2, 24);
        const Scenario sc(gen.any_params(n), std::optional<int>{});
        const JointState st = gen.state(sc);
        const double t = gen.duration(mare::testing::max_rate(sc));
        const JointState out = evolve(st, build_propagator(sc, Duration::finite(t)));
        const Eigen::VectorXd ref = dense_population_evolution(sc, st, t);
        for (std::size_t i = 0; i < out.populations().size(); ++i) {
            EXPECT_NEAR(out.populations()[i], ref(static_cast<Eigen::Index>(i)), 1e-13);
        }
    });
}

TEST(Engine, MatchesOdeOracle) {
    mare::testing::for_all(40, 21, [](Gen& gen) {
        const long n = gen.even(2, 20);
        const Scenario sc(gen.any_params(n), std::optional<int>{});
        const JointState st = gen.state(sc);
        const double rate = mare::testing::max_rate(sc);
        const double t = gen.duration(rate);
        double freq = rate;
        for (int m = sc.grid().m_min(); m <= sc.grid().m_max(); ++m) freq = std::max(freq, 2.0 * sc.rates().xi(m));
        const int steps = std::max(1000, static_cast<int>(std::ceil(t * freq / 0.004)));
        const JointState a = evolve(st, build_propagator(sc, Duration::finite(t)));
        const JointState b = ode_oracle(sc, st, t, steps);
        EXPECT_LT(max_abs_difference(a, b), 1e-8);
    });
}

TEST(Engine, CorruptedRateIsCaughtByOracle) {
    const Scenario sc(ScenarioParams::superconducting(1.0, 0.05, 0.3, 0.5, 8), std::optional<int>{});
    Gen gen(7);
    const JointState st = gen.state(sc);
    RateTable bad = sc.rates();
    bad.scale_rate(1, 1.5);
    const double t = 2.0;
    const JointState a = evolve(st, build_propagator(sc, bad, Duration::finite(t)));
    const JointState b = ode_oracle(sc, st, t, 4000);
    EXPECT_GT(max_abs_difference(a, b), 1e-4);
}

TEST(Engine, OracleRejectsLargeGridsAndFewSteps) {
    const Scenario big(ScenarioParams::superconducting(1.0, 1e-4, 0.1, 0.0, 400));
    EXPECT_THROW(ode_oracle(big, JointState(big.grid_ptr()), 1.0, 1000), ContractViolation);
    const Scenario small(ScenarioParams::superconducting(1.0, 1e-4, 0.1, 0.0, 8));
    EXPECT_THROW(ode_oracle(small, JointState(small.grid_ptr()), 1.0, 10), ContractViolation);
}

TEST(EngineProperty, TraceAndConservedSectorsPreserved) {
    mare::testing::for_all(60, 22, [](Gen& gen) {
        const long n = gen.even(2, 400);
        const Scenario sc(gen.any_params(n), std::optional<int>{});
        const JointState st = gen.state(sc);
        const Duration t = gen.coin(0.2) ? Duration::infinite() : Duration::finite(gen.duration(mare::testing::max_rate(sc)));
        const JointState out = evolve(st, build_propagator(sc, t));
        EXPECT_NEAR(out.trace(), st.trace(), 1e-13);
        EXPECT_NEAR(conserved_M(out), conserved_M(st), 1e-12 * std::max(1.0, std::abs(conserved_M(st))));
        const auto before = conserved_distribution(st);
        const auto after = conserved_distribution(out);
        for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(after[k], before[k], 1e-15);
    });
}

TEST(EngineProperty, PositivityPreserved) {
    mare::testing::for_all(60, 23, [](Gen& gen) {
        const Scenario sc(gen.any_params(gen.even(2, 100)), std::optional<int>{});
        const JointState st = gen.state(sc);
        const JointState out = evolve(st, build_propagator(sc, Duration::finite(gen.duration(1e-2))));
        const auto& g = sc.grid();
        for (int m = g.m_min(); m <= g.m_max(); ++m) {
            EXPECT_GE(out.p_up(m), 0.0);
            EXPECT_GE(out.p_down(m), 0.0);
            EXPECT_LE(std::norm(out.q(m)), out.p_up(m) * out.p_down(m) * (1.0 + 1e-12) + 1e-300);
        }
    });
}

TEST(EngineProperty, SemigroupComposition) {
    mare::testing::for_all(40, 24, [](Gen& gen) {
        const Scenario sc(gen.any_params(gen.even(2, 60)), std::optional<int>{});
        const JointState st = gen.state(sc);
        const double rate = mare::testing::max_rate(sc);
        const double t1 = gen.duration(rate);
        const double t2 = gen.duration(rate);
        const JointState once = evolve(st, build_propagator(sc, Duration::finite(t1 + t2)));
        const JointState twice =
            evolve(evolve(st, build_propagator(sc, Duration::finite(t1))), build_propagator(sc, Duration::finite(t2)));
        EXPECT_LT(max_abs_difference(once, twice), 1e-13);
    });
}

TEST(EngineProperty, ZeroTimeIsIdentity) {
    mare::testing::for_all(20, 25, [](Gen& gen) {
        const Scenario sc(gen.any_params(gen.even(2, 60)), std::optional<int>{});
        const JointState st = gen.state(sc);
        EXPECT_EQ(max_abs_difference(evolve(st, build_propagator(sc, Duration::finite(0.0))), st), 0.0);
    });
}

TEST(EngineProperty, InfiniteTimeDetailedBalance) {
    mare::testing::for_all(40, 26, [](Gen& gen) {
        const Scenario sc(gen.any_params(gen.even(2, 2000)), std::optional<int>{});
        const JointState out = evolve(gen.state(sc), build_propagator(sc, Duration::infinite()));
        const auto& g = sc.grid();
        for (int m = g.m_min(); m < g.m_max(); ++m) {
            const double up = out.p_up(m);
            const double down = out.p_down(m + 1);
            if (up > 1e-30 && down > 1e-30 && sc.rates().scaled(m + 1) > 0.0) {
                EXPECT_NEAR(down / up, g.volume_ratio(m), 1e-10 * g.volume_ratio(m)) << "m=" << m;
            }
        }
    });
}

TEST(EngineProperty, ObservationalEntropyNeverDecreases) {
    mare::testing::for_all(30, 27, [](Gen& gen) {
        const Scenario sc(gen.any_params(gen.even(2, 200)), std::optional<int>{});
        const JointState st = gen.state(sc);
        double prev = entropies(st, sc).S_obs;
        for (double t : sample_times(gen.duration(mare::testing::max_rate(sc)) * 3.0, 100)) {
            const double s = entropies(evolve(st, build_propagator(sc, Duration::finite(t))), sc).S_obs;
            EXPECT_GE(s - prev, -1e-12) << "t=" << t;
            prev = s;
        }
    });
}

TEST(Engine, DephasingActsAtFullStrength) {
    ScenarioParams p = ScenarioParams::superconducting(1.0, 0.01, 0.0, 0.0, 10);
    p.gamma_deph = 0.3;
    const Scenario sc(p);
    JointState st(sc.grid_ptr());
    st.set(2, 0.5, 0.5, cplx(0.5, 0.0));
    const double t = 1.7;
    const JointState out = evolve(st, build_propagator(sc, Duration::finite(t)));
    const double rate = 0.3 * (100.0 - 16.0) / (4.0 * 10.0 * 9.0);
    EXPECT_NEAR(std::abs(out.q(2)), 0.5 * std::exp(-rate * t), 1e-15);
    // Precession at the local splitting |B_m| = 2 xi_m.
    EXPECT_NEAR(std::arg(out.q(2)), std::remainder(-(1.0 + 0.02) * t, 2.0 * std::numbers::pi), 1e-12);
    EXPECT_NEAR(dephasing_rate(0.3, 10, 2), rate, 1e-16);
}

TEST(Engine, InfiniteTimeKillsCoherencesOnlyWithDecay) {
    ScenarioParams p = ScenarioParams::superconducting(1.0, 0.01, 0.0, 0.0, 4);
    const Scenario sc(p);
    const Propagator prop = build_propagator(sc, Duration::infinite());
    for (cplx c : prop.coherence_multipliers()) EXPECT_EQ(c, cplx(1.0, 0.0));
    for (std::size_t i = 0; i < prop.block_count(); ++i) {
        EXPECT_EQ(prop.up_to_down(i), 0.0);
        EXPECT_EQ(prop.down_to_up(i), 0.0);
    }
    p.kappa = 0.1;
    const Propagator relax = build_propagator(Scenario(p), Duration::infinite());
    for (cplx c : relax.coherence_multipliers()) EXPECT_EQ(c, cplx{});
}

TEST(Engine, BlocksAreColumnStochastic) {
    const Scenario sc(ScenarioParams::superconducting(1.0, 1e-3, 0.2, 0.0, 50));
    const Propagator prop = build_propagator(sc, Duration::finite(3.0));
    for (std::size_t i = 0; i < prop.block_count(); ++i) {
        const auto b = prop.block(i);
        EXPECT_NEAR(b[0][0] + b[1][0], 1.0, 1e-15);
        EXPECT_NEAR(b[0][1] + b[1][1], 1.0, 1e-15);
    }
}

TEST(Engine, GridMismatchIsRejected) {
    const Scenario a(ScenarioParams::superconducting(1.0, 1e-3, 0.2, 0.0, 10));
    const Scenario b(ScenarioParams::superconducting(1.0, 1e-3, 0.2, 0.0, 12));
    JointState st(a.grid_ptr());
    EXPECT_THROW(evolve_inplace(st, build_propagator(b, Duration::finite(1.0))), GridMismatch);
}

TEST(Engine, DurationContract) {
    EXPECT_THROW(Duration::finite(-1.0), ContractViolation);
    EXPECT_THROW(Duration::finite(std::nan("")), ContractViolation);
    EXPECT_TRUE(Duration::infinite().is_infinite());
}

#pragma once

// Observables of a JointState: moments of P_m, entropies, the conserved
// magnetization M, Ramsey visibility and T2*, plus closed-form predictions
// for the superconducting scenario used as test oracles.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "mare/engine.hpp"
#include "mare/error.hpp"
#include "mare/grid.hpp"
#include "mare/scenario.hpp"

namespace mare {

// Neumaier-compensated running sum.
class KahanSum {
public:
    void add(double v) noexcept {
        const double t = sum_ + v;
        comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
        sum_ = t;
    }
    KahanSum& operator+=(double v) noexcept {
        add(v);
        return *this;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// Probabilities below this are treated as zero in p ln p.
inline constexpr double kEntropyFloor = 1e-300;

inline double xlogx(double p) noexcept { return p < kEntropyFloor ? 0.0 : p * std::log(p); }

inline std::vector<double> marginal(const JointState& state) {
    std::vector<double> P(state.size());
    const auto pop = state.populations();
    for (std::size_t i = 0; i < P.size(); ++i) P[i] = pop[2 * i] + pop[2 * i + 1];
    return P;
}

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

inline Moments moments(std::span<const double> P, const MagnetizationGrid& grid) {
    if (P.size() != grid.size()) {
        throw GridMismatch(fmt::format("moments: distribution has {} bins, grid has {}", P.size(), grid.size()));
    }
    KahanSum norm, first;
    for (std::size_t i = 0; i < P.size(); ++i) {
        norm += P[i];
        first += P[i] * grid.m_at(i);
    }
    const double mean = first.value() / norm.value();
    KahanSum second;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double d = grid.m_at(i) - mean;
        second += P[i] * d * d;
    }
    return {mean, second.value() / norm.value()};
}

inline double shannon_entropy(std::span<const double> P) {
    KahanSum s;
    for (double p : P) s += -xlogx(p);
    return s.value();
}

struct Entropies {
    double S_B = 0.0;
    double S_obs = 0.0;
    double S_vN = 0.0;
};

// Reduced qubit state rho_S = sum_m rho_m in the z-basis.
inline std::array<std::array<cplx, 2>, 2> system_density_matrix(const JointState& state, const Scenario& sc) {
    require_same_grid(state.grid(), sc.grid(), "system_density_matrix");
    const auto& g = state.grid();
    KahanSum r00, r11, re01, im01;
    for (int m = g.m_min(); m <= g.m_max(); ++m) {
        const double pu = state.p_up(m);
        const double pd = state.p_down(m);
        const cplx q = state.q(m);
        if (pu == 0.0 && pd == 0.0 && q == cplx{}) continue;
        const EigenFrame& f = sc.frame(m);
        const Spinor u = f.up();
        const Spinor d = f.down();
        // rho_m = pu |u><u| + pd |d><d| + q |u><d| + q* |d><u|
        auto elem = [&](int a, int b) {
            return pu * u[a] * std::conj(u[b]) + pd * d[a] * std::conj(d[b]) + q * u[a] * std::conj(d[b]) +
                   std::conj(q) * d[a] * std::conj(u[b]);
        };
        r00 += elem(0, 0).real();
        r11 += elem(1, 1).real();
        const cplx e01 = elem(0, 1);
        re01 += e01.real();
        im01 += e01.imag();
    }
    const cplx off(re01.value(), im01.value());
    return {{{cplx(r00.value(), 0.0), off}, {std::conj(off), cplx(r11.value(), 0.0)}}};
}

inline double von_neumann_entropy(const std::array<std::array<cplx, 2>, 2>& rho) {
    const double a = rho[0][0].real();
    const double d = rho[1][1].real();
    const double tr = a + d;
    const double disc = std::sqrt((a - d) * (a - d) + 4.0 * std::norm(rho[0][1]));
    const double l1 = 0.5 * (tr + disc);
    const double l2 = std::max(0.0, 0.5 * (tr - disc));
    return 0.0 - (xlogx(l1) + xlogx(l2));
}

inline Entropies entropies(const JointState& state, const Scenario& sc) {
    const auto& g = state.grid();
    Entropies e;
    KahanSum joint, boltzmann, bath;
    const auto pop = state.populations();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double pd = pop[2 * i];
        const double pu = pop[2 * i + 1];
        const double P = pu + pd;
        joint += -xlogx(pu) - xlogx(pd);
        bath += -xlogx(P);
        if (P > 0.0) boltzmann += P * g.log_volumes()[i];
    }
    e.S_B = bath.value();
    e.S_obs = joint.value() + boltzmann.value();
    e.S_vN = von_neumann_entropy(system_density_matrix(state, sc));
    return e;
}

// <M> with M = m + (|up_m><up_m| - |down_m><down_m|)/2.
inline double conserved_M(const JointState& state) {
    const auto& g = state.grid();
    KahanSum s;
    for (int m = g.m_min(); m <= g.m_max(); ++m) {
        const double pu = state.p_up(m);
        const double pd = state.p_down(m);
        s += m * (pu + pd);
        s += 0.5 * (pu - pd);
    }
    return s.value();
}

// P(M) for M = m_min - 1/2 + k, k = 0..size.
inline std::vector<double> conserved_distribution(const JointState& state) {
    const auto& g = state.grid();
    std::vector<double> out(g.size() + 1, 0.0);
    for (std::size_t k = 0; k <= g.size(); ++k) {
        if (k < g.size()) out[k] += state.p_down(g.m_at(k));
        if (k > 0) out[k] += state.p_up(g.m_at(k - 1));
    }
    return out;
}

// One row of the observable series.
struct ObservableRecord {
    long cycle = 0;
    double mean_m = 0.0;
    double var_m = 0.0;
    double S_B = 0.0;
    double S_obs = 0.0;
    double S_vN = 0.0;
    double M_expect = 0.0;
    double trace = 0.0;
};

inline ObservableRecord observe(long cycle, const JointState& state, const Scenario& sc) {
    const auto P = marginal(state);
    const Moments mo = moments(P, state.grid());
    const Entropies en = entropies(state, sc);
    ObservableRecord r{cycle, mo.mean, mo.variance, en.S_B, en.S_obs, en.S_vN, conserved_M(state), state.trace()};
    for (double v : {r.mean_m, r.var_m, r.S_B, r.S_obs, r.S_vN, r.M_expect, r.trace}) {
        if (!std::isfinite(v)) {
            throw NumericalError(fmt::format(
                "non-finite observable at cycle {}: mean={} var={} S_B={} S_obs={} S_vN={} M={} trace={}", cycle,
                r.mean_m, r.var_m, r.S_B, r.S_obs, r.S_vN, r.M_expect, r.trace));
        }
    }
    return r;
}

// |<exp(i tau A_c m)>|, the Ramsey envelope.
inline double ramsey_envelope(std::span<const double> P, const MagnetizationGrid& grid, double A_c, double tau) {
    KahanSum re, im;
    for (std::size_t i = 0; i < P.size(); ++i) {
        if (P[i] < kEntropyFloor) continue;
        const double phase = tau * A_c * grid.m_at(i);
        re += P[i] * std::cos(phase);
        im += P[i] * std::sin(phase);
    }
    return std::hypot(re.value(), im.value());
}

// V_R(tau) = 1/2 - <cos(tau A_c m)>/2.
inline double ramsey_visibility(std::span<const double> P, const MagnetizationGrid& grid, double A_c, double tau) {
    KahanSum c;
    for (std::size_t i = 0; i < P.size(); ++i) c += P[i] * std::cos(tau * A_c * grid.m_at(i));
    return 0.5 - 0.5 * c.value();
}

// First tau where the Ramsey envelope falls below 1/e. Infinity when it
// never does (e.g. P concentrated on one bin). The envelope is 2 pi / |A_c|
// periodic and even, so (0, pi/|A_c|] is searched on a dense grid and the
// crossing refined by bisection.
inline double t2_star(std::span<const double> P, const MagnetizationGrid& grid, double A_c, int samples = 8192) {
    if (A_c == 0.0) return std::numeric_limits<double>::infinity();
    const double threshold = std::exp(-1.0);
    const double tau_max = std::numbers::pi / std::abs(A_c);
    double lo = 0.0;
    for (int k = 1; k <= samples; ++k) {
        const double tau = tau_max * k / samples;
        if (ramsey_envelope(P, grid, A_c, tau) < threshold) {
            double hi = tau;
            for (int it = 0; it < 80 && hi - lo > 1e-15 * hi; ++it) {
                const double mid = 0.5 * (lo + hi);
                (ramsey_envelope(P, grid, A_c, mid) < threshold ? hi : lo) = mid;
            }
            return 0.5 * (lo + hi);
        }
        lo = tau;
    }
    return std::numeric_limits<double>::infinity();
}

struct RamseyReport {
    std::vector<double> tau;
    std::vector<double> visibility;
    double t2_star = std::numeric_limits<double>::infinity();
};

inline RamseyReport ramsey_report(std::span<const double> P, const MagnetizationGrid& grid, double A_c,
                                  std::span<const double> taus) {
    RamseyReport r;
    r.tau.assign(taus.begin(), taus.end());
    for (double t : taus) r.visibility.push_back(ramsey_visibility(P, grid, A_c, t));
    r.t2_star = t2_star(P, grid, A_c);
    return r;
}

// System-bath correlations of a prepared state, with S_z measured along the
// local field (the z axis in the superconducting scenario). Raw moments are
// kept next to the centred covariance.
struct Correlations {
    double mean_m = 0.0;
    double var_m = 0.0;
    double sz = 0.0;
    double m_sz_raw = 0.0;  // <S_z m>
    double cov_sz_m = 0.0;  // <<S_z m>> = <S_z m> - <S_z><m>
    double M_mean = 0.0;
    double M2 = 0.0;        // <M^2>
};

inline Correlations correlations(const JointState& state) {
    const auto& g = state.grid();
    const Moments mo = moments(marginal(state), g);
    KahanSum sz, msz, m2;
    for (int m = g.m_min(); m <= g.m_max(); ++m) {
        const double pu = state.p_up(m);
        const double pd = state.p_down(m);
        sz += 0.5 * (pu - pd);
        msz += 0.5 * m * (pu - pd);
        m2 += pu * (m + 0.5) * (m + 0.5);
        m2 += pd * (m - 0.5) * (m - 0.5);
    }
    Correlations c;
    c.mean_m = mo.mean;
    c.var_m = mo.variance;
    c.sz = sz.value();
    c.m_sz_raw = msz.value();
    c.cov_sz_m = c.m_sz_raw - c.sz * c.mean_m;
    c.M_mean = c.mean_m + c.sz;
    c.M2 = m2.value();
    return c;
}

// Long-time predictions for the superconducting scenario.
struct ScClosedForms {
    double mean_inf = 0.0;
    double sz_inf = 0.0;
    // Exact on the full spin-1/2 grid: each M sector relaxes to
    // <S_z | M> = M / (N + 1).
    double var_inf = 0.0;
    // Literal closed form (M^2 - 1/4)(1 - 1/N) - <M>^2 / (1 + 1/N^2).
    double var_inf_printed = 0.0;
    // Large-N expansion var_0 - <S_z>_0^2 + 2 <<S_z m>>_0.
    double var_inf_leading = 0.0;
    // Per-cycle drift of an uncorrelated down_z preparation.
    double mean_step_down_z = -0.5;
    double var_step_down_z = -0.25;
};

inline ScClosedForms sc_closed_forms(long N, const Correlations& c) {
    const double n = static_cast<double>(N);
    ScClosedForms f;
    f.mean_inf = c.M_mean * n / (n + 1.0);
    f.sz_inf = c.M_mean / (n + 1.0);
    f.var_inf = c.M2 * (n - 1.0) / (n + 1.0) + 0.25 - c.M_mean * c.M_mean * n * n / ((n + 1.0) * (n + 1.0));
    f.var_inf_printed = (c.M2 - 0.25) * (1.0 - 1.0 / n) - c.M_mean * c.M_mean / (1.0 + 1.0 / (n * n));
    f.var_inf_leading = c.var_m - c.sz * c.sz + 2.0 * c.cov_sz_m;
    return f;
}

// Gaussian-limit covariances quoted for the correlated preparations.
inline double theta_covariance_gaussian(double sigma) { return -sigma / std::sqrt(2.0 * std::numbers::pi); }

inline double ramsey_covariance_printed(double sigma) {
    return -sigma * std::exp(-sigma / 2.0) / std::sqrt(2.0 * std::numbers::pi);
}

// <<S_z m>> for S_z = cos(alpha m + phi)/2 on a continuous centred Gaussian.
inline double ramsey_covariance_continuous(double sigma, double alpha, double phi) {
    return -0.5 * alpha * sigma * sigma * std::sin(phi) * std::exp(-0.5 * alpha * alpha * sigma * sigma);
}

}  // namespace mare

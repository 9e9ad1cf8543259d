#pragma once

// Qubit preparation families and the repeated prepare -> interact -> reset
// cycle that engineers the bath distribution P_m.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mare/engine.hpp"
#include "mare/error.hpp"
#include "mare/observables.hpp"
#include "mare/scenario.hpp"

namespace mare {

enum class FamilyKind { up_z, down_z, theta_correlated, ramsey_linear, ramsey_sensing };

inline std::string_view to_string(FamilyKind k) {
    switch (k) {
        case FamilyKind::up_z: return "up_z";
        case FamilyKind::down_z: return "down_z";
        case FamilyKind::theta_correlated: return "theta_correlated";
        case FamilyKind::ramsey_linear: return "ramsey_linear";
        case FamilyKind::ramsey_sensing: return "ramsey_sensing";
    }
    return "?";
}

inline std::optional<FamilyKind> family_from_string(std::string_view s) {
    for (auto k : {FamilyKind::up_z, FamilyKind::down_z, FamilyKind::theta_correlated, FamilyKind::ramsey_linear,
                   FamilyKind::ramsey_sensing}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

struct PreparationFamily {
    FamilyKind kind = FamilyKind::up_z;
    double alpha = 0.0;  // ramsey_linear: phase slope per unit m
    double phi = 0.0;    // ramsey_linear: phase offset
    double tau = 0.0;    // ramsey_sensing: free precession time (s)
};

// tau_j for cycle j: linear from tau_min to tau_max over `count` steps,
// repeating with period `count`.
struct TauSchedule {
    double tau_min = 0.0;
    double tau_max = 0.0;
    int count = 0;
};

inline double tau_value(const TauSchedule& s, long cycle_index) {
    if (s.count < 1) throw ContractViolation("tau_value: empty schedule");
    if (cycle_index < 0) throw ContractViolation(fmt::format("tau_value: negative cycle index {}", cycle_index));
    if (s.count == 1) return s.tau_min;
    const long j = cycle_index % s.count;
    return s.tau_min + (s.tau_max - s.tau_min) * static_cast<double>(j) / static_cast<double>(s.count - 1);
}

struct ProtocolSpec {
    PreparationFamily family;
    Duration t_c = Duration::infinite();
    long n_rep = 0;
    std::optional<TauSchedule> tau_schedule;
    // Observable stride in cycles; 0 selects logarithmic spacing.
    long record_every = 0;

    void validate() const {
        if (n_rep < 0) throw ContractViolation(fmt::format("ProtocolSpec: n_rep={} < 0", n_rep));
        if (record_every < 0) throw ContractViolation("ProtocolSpec: record_every must be >= 0");
        if (tau_schedule) {
            if (family.kind != FamilyKind::ramsey_sensing) {
                throw ContractViolation("ProtocolSpec: a tau schedule needs the ramsey_sensing family");
            }
            if (tau_schedule->count < 1) throw ContractViolation("ProtocolSpec: empty tau schedule");
            if (n_rep % tau_schedule->count != 0) {
                throw ContractViolation(fmt::format("ProtocolSpec: n_rep={} is not a multiple of the {} tau steps",
                                                    n_rep, tau_schedule->count));
            }
        }
    }

    double tau_for_cycle(long cycle_index) const {
        return tau_schedule ? tau_value(*tau_schedule, cycle_index) : family.tau;
    }
};

// Cycles at which observables are recorded: every cycle up to 10, then
// `per_decade` log-spaced points per decade (or a fixed stride), always
// including 0 and n_rep.
inline std::vector<long> record_cycles(long n_rep, long stride = 0, int per_decade = 20) {
    std::set<long> out{0, n_rep};
    if (stride > 0) {
        for (long k = stride; k < n_rep; k += stride) out.insert(k);
    } else {
        for (long k = 1; k <= std::min(n_rep, 10L); ++k) out.insert(k);
        for (int j = per_decade; ; ++j) {
            const long k = std::lround(std::pow(10.0, static_cast<double>(j) / per_decade));
            if (k >= n_rep) break;
            out.insert(k);
        }
    }
    return {out.begin(), out.end()};
}

// Bloch vector r_m of the prepared qubit for every grid point.
inline std::vector<Vec3> bloch_field(const PreparationFamily& fam, const Scenario& sc, double tau) {
    const auto& g = sc.grid();
    std::vector<Vec3> r(g.size());
    for (int m = g.m_min(); m <= g.m_max(); ++m) {
        Vec3& v = r[g.index(m)];
        switch (fam.kind) {
            case FamilyKind::up_z: v = {0.0, 0.0, 1.0}; break;
            case FamilyKind::down_z: v = {0.0, 0.0, -1.0}; break;
            case FamilyKind::theta_correlated:
                // Anti-aligned with B_m above m = 0, aligned below, mixed at 0.
                if (m > 0) v = -sc.frame(m).b_hat;
                else if (m < 0) v = sc.frame(m).b_hat;
                else v = {};
                break;
            case FamilyKind::ramsey_linear: {
                const double theta = fam.alpha * m + fam.phi;
                v = {std::sin(theta), 0.0, std::cos(theta)};
                break;
            }
            case FamilyKind::ramsey_sensing: {
                // Rotated from +z towards -x for m > 0, which makes m = 0 a
                // stable point of the flip-flop dynamics.
                const double theta = 2.0 * std::abs(sc.params().A_c) * m * tau;
                v = {-std::sin(theta), 0.0, std::cos(theta)};
                break;
            }
        }
    }
    return r;
}

inline void require_normalized(std::span<const double> P, const MagnetizationGrid& g, const char* where) {
    if (P.size() != g.size()) {
        throw GridMismatch(fmt::format("{}: distribution has {} bins, grid has {}", where, P.size(), g.size()));
    }
    KahanSum s;
    for (double p : P) {
        if (!(p >= 0.0)) throw ContractViolation(fmt::format("{}: negative or NaN probability {}", where, p));
        s += p;
    }
    if (std::abs(s.value() - 1.0) > 1e-9) {
        throw ContractViolation(fmt::format("{}: distribution sums to {:.17g}, not 1", where, s.value()));
    }
}

inline double clamp01(double x) noexcept { return std::clamp(x, 0.0, 1.0); }

// rho_m = P_m (1 + r_m . sigma) / 2 written in the local eigenbasis.
inline JointState prepare(std::span<const double> P, const std::vector<Vec3>& bloch, const Scenario& sc) {
    const auto& g = sc.grid();
    require_normalized(P, g, "prepare");
    JointState st(sc.grid_ptr());
    for (int m = g.m_min(); m <= g.m_max(); ++m) {
        const auto i = g.index(m);
        const double p = P[i];
        if (p == 0.0) continue;
        const Vec3& r = bloch[i];
        const EigenFrame& f = sc.frame(m);
        const double a = r.dot(f.b_hat);
        // <up| r.sigma |down>
        const Spinor u = f.up();
        const Spinor d = f.down();
        const Spinor rd{cplx(r.z, 0.0) * d[0] + cplx(r.x, -r.y) * d[1], cplx(r.x, r.y) * d[0] - cplx(r.z, 0.0) * d[1]};
        st.set(m, p * clamp01(0.5 * (1.0 + a)), p * clamp01(0.5 * (1.0 - a)), 0.5 * p * braket(u, rd));
    }
    return st;
}

inline JointState prepare(std::span<const double> P, const PreparationFamily& fam, const Scenario& sc,
                          double tau = 0.0) {
    return prepare(P, bloch_field(fam, sc, tau), sc);
}

// prepare + evolve + marginal fused into one tridiagonal map on P_m:
//   flux_i = cu_i P_i - cd_i P_{i+1},   P_i <- P_i - flux_i + flux_{i-1}
// where flux_i is the net transfer (up, m_i) -> (down, m_{i+1}).
// Probabilities below kEntropyFloor are flushed to zero: depleted tails would
// otherwise sit in the subnormal range and slow every cycle down ~20x.
class CycleOperator {
public:
    CycleOperator(const Propagator& prop, const std::vector<Vec3>& bloch, const Scenario& sc) {
        const auto& g = sc.grid();
        const std::size_t n = g.size();
        std::vector<double> up_frac(n), down_frac(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = bloch[i].dot(sc.frame(g.m_at(i)).b_hat);
            up_frac[i] = clamp01(0.5 * (1.0 + a));
            down_frac[i] = clamp01(0.5 * (1.0 - a));
        }
        cu_.resize(prop.block_count());
        cd_.resize(prop.block_count());
        for (std::size_t i = 0; i < prop.block_count(); ++i) {
            cu_[i] = prop.up_to_down(i) * up_frac[i];
            cd_[i] = prop.down_to_up(i) * down_frac[i + 1];
        }
    }

    // Applies one cycle in place and returns the new total probability.
    double apply(std::vector<double>& P, std::vector<double>& flux) const {
        const std::size_t nb = cu_.size();
        flux.resize(nb + 1);
        const double* cu = cu_.data();
        const double* cd = cd_.data();
        double* p = P.data();
        double* f = flux.data() + 1;
        flux[0] = 0.0;
        for (std::size_t i = 0; i < nb; ++i) f[i] = cu[i] * p[i] - cd[i] * p[i + 1];
        double total = 0.0;
        for (std::size_t i = 0; i < nb; ++i) {
            const double v = p[i] + flux[i] - f[i];
            p[i] = v < kEntropyFloor ? 0.0 : v;
            total += p[i];
        }
        const double last = p[nb] + flux[nb];
        p[nb] = last < kEntropyFloor ? 0.0 : last;
        return total + p[nb];
    }

private:
    std::vector<double> cu_;
    std::vector<double> cd_;
};

struct RunOptions {
    bool allow_invalid = false;
    std::vector<long> snapshot_cycles;
    bool progress = true;
};

struct RunResult {
    std::vector<double> final_P;
    std::vector<ObservableRecord> series;
    std::map<long, std::vector<double>> snapshots;
    long renormalizations = 0;
};

inline void check_validity(const Scenario& sc, bool allow_invalid) {
    const ValidityReport v = sc.validity();
    if (!v.applicable || v.passes()) return;
    const auto msg = fmt::format("validity check failed: Markov number {:.3g}, secular number {:.3g} (both must be < 1)",
                                 v.markov_number, v.secular_number);
    if (!allow_invalid) throw ContractViolation(msg);
    spdlog::warn("{}; continuing because the override is set", msg);
}

// Runs n_rep cycles starting from `initial_P`. Observables are recorded on
// the post-interaction state of each recorded cycle; cycle 0 records the
// prepared initial state.
inline RunResult run_cycles(std::vector<double> initial_P, const ProtocolSpec& spec, const Scenario& sc,
                            const RunOptions& opt = {}) {
    spec.validate();
    check_validity(sc, opt.allow_invalid);
    const auto& g = sc.grid();
    require_normalized(initial_P, g, "run_cycles");
    if (spec.family.kind == FamilyKind::ramsey_sensing && sc.params().Delta != 0.0) {
        spdlog::warn("ramsey_sensing assumes Delta = 0; the closed-form state ignores Delta={}", sc.params().Delta);
    }

    const Propagator prop = build_propagator(sc, spec.t_c);
    const int n_ops = spec.tau_schedule ? spec.tau_schedule->count : 1;
    std::vector<std::vector<Vec3>> fields;
    std::vector<CycleOperator> ops;
    fields.reserve(static_cast<std::size_t>(n_ops));
    ops.reserve(static_cast<std::size_t>(n_ops));
    for (int j = 0; j < n_ops; ++j) {
        fields.push_back(bloch_field(spec.family, sc, spec.tau_for_cycle(j)));
        ops.emplace_back(prop, fields.back(), sc);
    }

    RunResult res;
    std::vector<double> P = std::move(initial_P);
    const std::vector<long> records = record_cycles(spec.n_rep, spec.record_every);
    const std::set<long> snaps(opt.snapshot_cycles.begin(), opt.snapshot_cycles.end());
    for (long c : snaps) {
        if (c < 0 || c > spec.n_rep) {
            throw ContractViolation(fmt::format("snapshot cycle {} outside [0, {}]", c, spec.n_rep));
        }
    }
    if (snaps.count(0)) res.snapshots[0] = P;
    res.series.push_back(observe(0, prepare(P, fields[0], sc), sc));

    std::vector<double> flux;
    auto next_record = records.begin() + 1;
    long next_progress = 10;
    const auto started = std::chrono::steady_clock::now();
    for (long k = 1; k <= spec.n_rep; ++k) {
        const auto j = static_cast<std::size_t>((k - 1) % n_ops);
        if (next_record != records.end() && *next_record == k) {
            JointState st = prepare(P, fields[j], sc);
            evolve_inplace(st, prop);
            P = marginal(st);
            res.series.push_back(observe(k, st, sc));
            ++next_record;
            if (std::abs(res.series.back().trace - 1.0) > 1e-9) {
                spdlog::warn("cycle {}: trace drifted to {:.17g}; renormalizing", k, res.series.back().trace);
                const double t = res.series.back().trace;
                for (double& p : P) p /= t;
                ++res.renormalizations;
            }
        } else {
            const double total = ops[j].apply(P, flux);
            if (!std::isfinite(total)) throw NumericalError(fmt::format("cycle {}: non-finite probability", k));
            if (std::abs(total - 1.0) > 1e-9) {
                spdlog::warn("cycle {}: trace drifted to {:.17g}; renormalizing", k, total);
                for (double& p : P) p /= total;
                ++res.renormalizations;
            }
        }
        if (snaps.count(k)) res.snapshots[k] = P;
        if (opt.progress && k == next_progress) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            spdlog::info("cycle {}/{} ({:.1f} s)", k, spec.n_rep, secs);
            next_progress *= 10;
        }
    }
    res.final_P = std::move(P);
    return res;
}

}  // namespace mare

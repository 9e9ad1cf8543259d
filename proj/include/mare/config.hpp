#pragma once

// Run configuration: an INI file with [scenario], [protocol], [initial] and
// [output] sections. Every problem found (unknown key, missing key, key that
// does not apply to the chosen scenario or family, bad value) is collected
// and reported together.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "mare/error.hpp"
#include "mare/grid.hpp"
#include "mare/protocols.hpp"
#include "mare/scenario.hpp"

namespace mare {

enum class InitialKind { thermal, infinite_temperature, gaussian, delta, file };

struct InitialDistribution {
    InitialKind kind = InitialKind::thermal;
    double mu = 0.0;
    double sigma = 0.0;
    int m0 = 0;
    std::string path;
};

struct OutputSpec {
    std::string dir = "out";
    std::string series = "series.csv";
    std::string summary = "summary.json";
    std::vector<long> snapshots;
};

struct RunSpec {
    ScenarioParams scenario;
    // Unset means the scenario default (N/50 for the quantum dot).
    std::optional<std::optional<int>> cutoff;
    ProtocolSpec protocol;
    InitialDistribution initial;
    OutputSpec output;
    bool allow_invalid = false;
    std::string source;  // path the spec was loaded from

    std::optional<int> effective_cutoff() const { return cutoff ? *cutoff : default_cutoff(scenario); }
};

namespace detail {

class SectionReader {
public:
    SectionReader(const boost::property_tree::ptree& root, std::string name, std::vector<std::string>& problems)
        : name_(std::move(name)), problems_(problems) {
        if (auto sec = root.get_child_optional(name_)) {
            for (const auto& [key, node] : *sec) values_[key] = node.get_value<std::string>();
        }
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::optional<std::string> str(const std::string& key) {
        used_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<double> num(const std::string& key) {
        auto s = str(key);
        if (!s) return std::nullopt;
        try {
            std::size_t pos = 0;
            const double v = std::stod(*s, &pos);
            if (pos != s->size() || !std::isfinite(v)) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            problems_.push_back(fmt::format("[{}] {}: not a finite number: '{}'", name_, key, *s));
            return std::nullopt;
        }
    }

    std::optional<long> integer(const std::string& key) {
        auto s = str(key);
        if (!s) return std::nullopt;
        try {
            std::size_t pos = 0;
            // Accept 1e7-style literals as long as they are integral.
            const double v = std::stod(*s, &pos);
            if (pos != s->size() || v != std::floor(v) || std::abs(v) > 9e15) throw std::invalid_argument("bad");
            return static_cast<long>(v);
        } catch (const std::exception&) {
            problems_.push_back(fmt::format("[{}] {}: not an integer: '{}'", name_, key, *s));
            return std::nullopt;
        }
    }

    template <class T>
    T required(std::optional<T> v, const std::string& key) {
        if (!v) {
            if (!has(key)) problems_.push_back(fmt::format("[{}] {}: missing required key", name_, key));
            return T{};
        }
        return *v;
    }

    void unused(const std::string& key, const std::string& why) {
        used_.insert(key);
        if (has(key)) problems_.push_back(fmt::format("[{}] {}: unused parameter ({})", name_, key, why));
    }

    void finish() {
        for (const auto& [key, value] : values_) {
            if (!used_.count(key)) problems_.push_back(fmt::format("[{}] {}: unknown key", name_, key));
        }
    }

private:
    std::string name_;
    std::vector<std::string>& problems_;
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

inline std::vector<long> parse_cycle_list(const std::string& s, std::vector<std::string>& problems) {
    std::vector<long> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        item = item.substr(b, e - b + 1);
        try {
            std::size_t pos = 0;
            const double v = std::stod(item, &pos);
            if (pos != item.size() || v != std::floor(v) || v < 0) throw std::invalid_argument("bad");
            out.push_back(static_cast<long>(v));
        } catch (const std::exception&) {
            problems.push_back(fmt::format("[output] snapshots: bad cycle index '{}'", item));
        }
    }
    return out;
}

}  // namespace detail

// Parses the configuration text. `source` is used for relative paths and
// error messages only.
inline RunSpec parse_config(std::istream& in, const std::string& source = "<config>") {
    namespace pt = boost::property_tree;
    pt::ptree root;
    try {
        pt::read_ini(in, root);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError({fmt::format("{}: {}", source, e.message())});
    }

    std::vector<std::string> problems;
    for (const auto& [section, node] : root) {
        if (section != "scenario" && section != "protocol" && section != "initial" && section != "output") {
            problems.push_back(fmt::format("[{}]: unknown section", section));
        }
        if (node.empty() && !node.data().empty()) {
            problems.push_back(fmt::format("{}: key outside of any section", section));
        }
    }

    RunSpec spec;
    spec.source = source;
    detail::SectionReader sc(root, "scenario", problems);
    detail::SectionReader pr(root, "protocol", problems);
    detail::SectionReader in_(root, "initial", problems);
    detail::SectionReader out(root, "output", problems);

    ScenarioParams& p = spec.scenario;
    const std::string kind = sc.required(sc.str("kind"), "kind");
    const bool is_sc = kind == "superconducting";
    const bool is_qd = kind == "quantum_dot";
    if (!kind.empty() && !is_sc && !is_qd) {
        problems.push_back(fmt::format("[scenario] kind: expected superconducting or quantum_dot, got '{}'", kind));
    }
    const std::string units = sc.str("units").value_or("absolute");
    const bool relative = units == "relative";
    if (units != "absolute" && !relative) {
        problems.push_back(fmt::format("[scenario] units: expected absolute or relative, got '{}'", units));
    }
    if (auto c = sc.str("cutoff")) {
        if (*c == "none") {
            spec.cutoff = std::optional<int>{};
        } else if (auto v = sc.integer("cutoff")) {
            if (*v < 0) problems.push_back("[scenario] cutoff: must be >= 0 or 'none'");
            else spec.cutoff = std::optional<int>{static_cast<int>(*v)};
        }
    }
    p.N = sc.required(sc.integer("N"), "N");
    p.gamma_deph = sc.num("gamma_deph").value_or(0.0);

    // Time unit used for t_c and tau values.
    double time_unit = 1.0;
    if (is_sc) {
        p.kind = ScenarioKind::superconducting;
        p.omega_S = sc.required(sc.num("omega_S"), "omega_S");
        const double scale = relative ? p.omega_S : 1.0;
        p.A = sc.required(sc.num("A"), "A") * scale;
        p.kappa = sc.required(sc.num("kappa"), "kappa") * scale;
        p.beta = sc.required(sc.num("beta"), "beta") / scale;
        p.gamma_deph *= scale;
        if (auto s = sc.num("s")) {
            if (*s != 0.5) problems.push_back("[scenario] s: the superconducting bath is spin-1/2");
        }
        p.s = 0.5;
        for (const char* key : {"omega_B", "A_c", "A_nc", "gamma", "Omega", "Delta"}) {
            sc.unused(key, "not used by the superconducting scenario");
        }
        if (relative && p.omega_S > 0.0) time_unit = 1.0 / p.omega_S;
    } else if (is_qd) {
        p.kind = ScenarioKind::quantum_dot;
        p.omega_S = sc.num("omega_S").value_or(0.0);
        p.omega_B = sc.required(sc.num("omega_B"), "omega_B");
        p.A_c = sc.required(sc.num("A_c"), "A_c");
        p.A_nc = sc.required(sc.num("A_nc"), "A_nc");
        p.gamma = sc.required(sc.num("gamma"), "gamma");
        p.Omega = sc.required(sc.num("Omega"), "Omega");
        p.Delta = sc.num("Delta").value_or(0.0);
        p.s = sc.required(sc.num("s"), "s");
        for (const char* key : {"A", "kappa", "beta"}) sc.unused(key, "not used by the quantum-dot scenario");
        if (relative && p.A_c != 0.0) time_unit = 1.0 / std::abs(p.A_c);
    }
    sc.finish();

    // [protocol]
    ProtocolSpec& proto = spec.protocol;
    const std::string fam = pr.required(pr.str("family"), "family");
    if (auto k = family_from_string(fam)) {
        proto.family.kind = *k;
    } else if (!fam.empty()) {
        problems.push_back(fmt::format("[protocol] family: unknown family '{}'", fam));
    }
    if (auto t = pr.str("t_c")) {
        if (*t == "inf" || *t == "infinite") {
            proto.t_c = Duration::infinite();
        } else if (auto v = pr.num("t_c")) {
            if (*v < 0) problems.push_back("[protocol] t_c: must be >= 0 or 'inf'");
            else proto.t_c = Duration::finite(*v * time_unit);
        }
    } else {
        problems.push_back("[protocol] t_c: missing required key");
    }
    proto.n_rep = pr.required(pr.integer("n_rep"), "n_rep");
    if (proto.n_rep < 0) problems.push_back("[protocol] n_rep: must be >= 0");
    proto.record_every = pr.integer("record_every").value_or(0);
    if (proto.record_every < 0) problems.push_back("[protocol] record_every: must be >= 0");
    if (auto a = pr.str("allow_invalid")) {
        if (*a == "true") spec.allow_invalid = true;
        else if (*a != "false") problems.push_back("[protocol] allow_invalid: expected true or false");
    }

    const FamilyKind fk = proto.family.kind;
    if (fk == FamilyKind::ramsey_linear) {
        proto.family.alpha = pr.required(pr.num("alpha"), "alpha");
        proto.family.phi = pr.required(pr.num("phi"), "phi");
    } else {
        pr.unused("alpha", "only used by ramsey_linear");
        pr.unused("phi", "only used by ramsey_linear");
    }
    if (fk == FamilyKind::ramsey_sensing) {
        if (!is_qd) problems.push_back("[protocol] family: ramsey_sensing needs the quantum_dot scenario");
        const bool sweep = pr.has("tau_min") || pr.has("tau_max") || pr.has("tau_steps");
        if (sweep) {
            pr.unused("tau", "a tau sweep is configured");
            TauSchedule ts;
            ts.tau_min = pr.required(pr.num("tau_min"), "tau_min") * time_unit;
            ts.tau_max = pr.required(pr.num("tau_max"), "tau_max") * time_unit;
            ts.count = static_cast<int>(pr.required(pr.integer("tau_steps"), "tau_steps"));
            if (ts.count < 1) problems.push_back("[protocol] tau_steps: must be >= 1");
            else if (proto.n_rep % ts.count != 0) {
                problems.push_back(fmt::format("[protocol] n_rep: {} is not a multiple of tau_steps={}", proto.n_rep,
                                               ts.count));
            }
            proto.tau_schedule = ts;
        } else {
            proto.family.tau = pr.required(pr.num("tau"), "tau") * time_unit;
        }
    } else {
        for (const char* key : {"tau", "tau_min", "tau_max", "tau_steps"}) {
            pr.unused(key, "only used by ramsey_sensing");
        }
    }
    pr.finish();

    // [initial]
    InitialDistribution& init = spec.initial;
    const std::string dist = in_.str("distribution").value_or(is_qd ? "infinite_temperature" : "thermal");
    const std::map<std::string, InitialKind> kinds{{"thermal", InitialKind::thermal},
                                                   {"infinite_temperature", InitialKind::infinite_temperature},
                                                   {"gaussian", InitialKind::gaussian},
                                                   {"delta", InitialKind::delta},
                                                   {"file", InitialKind::file}};
    if (auto it = kinds.find(dist); it != kinds.end()) {
        init.kind = it->second;
    } else {
        problems.push_back(fmt::format("[initial] distribution: unknown distribution '{}'", dist));
    }
    if (init.kind == InitialKind::thermal && is_qd) {
        problems.push_back("[initial] distribution: thermal needs beta, which the quantum-dot scenario does not use");
    }
    if (init.kind == InitialKind::gaussian) {
        init.mu = in_.num("mu").value_or(0.0);
        init.sigma = in_.required(in_.num("sigma"), "sigma");
        if (in_.has("sigma") && !(init.sigma > 0.0)) problems.push_back("[initial] sigma: must be positive");
    } else {
        in_.unused("mu", "only used by the gaussian distribution");
        in_.unused("sigma", "only used by the gaussian distribution");
    }
    if (init.kind == InitialKind::delta) {
        init.m0 = static_cast<int>(in_.required(in_.integer("m0"), "m0"));
    } else {
        in_.unused("m0", "only used by the delta distribution");
    }
    if (init.kind == InitialKind::file) {
        init.path = in_.required(in_.str("path"), "path");
        if (!init.path.empty() && std::filesystem::path(init.path).is_relative()) {
            init.path = (std::filesystem::path(source).parent_path() / init.path).string();
        }
    } else {
        in_.unused("path", "only used by the file distribution");
    }
    in_.finish();

    // [output]
    OutputSpec& o = spec.output;
    o.dir = out.str("dir").value_or(o.dir);
    o.series = out.str("series").value_or(o.series);
    o.summary = out.str("summary").value_or(o.summary);
    if (auto s = out.str("snapshots")) o.snapshots = detail::parse_cycle_list(*s, problems);
    for (long c : o.snapshots) {
        if (c > proto.n_rep) {
            problems.push_back(fmt::format("[output] snapshots: cycle {} is beyond n_rep={}", c, proto.n_rep));
        }
    }
    out.finish();

    if (problems.empty()) {
        try {
            p.validate();
        } catch (const ContractViolation& e) {
            problems.push_back(fmt::format("[scenario] {}", e.what()));
        }
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return spec;
}

inline RunSpec load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError({fmt::format("{}: cannot open file", path)});
    return parse_config(f, path);
}

// P_m on the scenario grid for the configured initial distribution.
inline std::vector<double> initial_distribution(const InitialDistribution& init, const Scenario& sc) {
    const auto& g = sc.grid();
    const auto& p = sc.params();
    std::vector<double> logw(g.size(), -std::numeric_limits<double>::infinity());
    switch (init.kind) {
        case InitialKind::thermal:
            for (std::size_t i = 0; i < g.size(); ++i) {
                logw[i] = -p.beta * p.omega_S * g.m_at(i) + g.log_volumes()[i];
            }
            break;
        case InitialKind::infinite_temperature:
            for (std::size_t i = 0; i < g.size(); ++i) logw[i] = g.log_volumes()[i];
            break;
        case InitialKind::gaussian:
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double d = (g.m_at(i) - init.mu) / init.sigma;
                logw[i] = -0.5 * d * d;
            }
            break;
        case InitialKind::delta:
            if (!g.contains(init.m0)) {
                throw ConfigError({fmt::format("[initial] m0: {} is outside the grid [{}, {}]", init.m0, g.m_min(),
                                               g.m_max())});
            }
            logw[g.index(init.m0)] = 0.0;
            break;
        case InitialKind::file: {
            std::ifstream f(init.path);
            if (!f) throw ConfigError({fmt::format("[initial] path: cannot open '{}'", init.path)});
            std::vector<std::string> problems;
            std::vector<double> w(g.size(), 0.0);
            std::string line;
            int lineno = 0;
            while (std::getline(f, line)) {
                ++lineno;
                if (line.empty() || line[0] == '#' || line.rfind("m,", 0) == 0) continue;
                const auto comma = line.find(',');
                try {
                    if (comma == std::string::npos) throw std::invalid_argument("no comma");
                    const long m = std::stol(line.substr(0, comma));
                    const double v = std::stod(line.substr(comma + 1));
                    if (!g.contains(m)) {
                        problems.push_back(fmt::format("{}:{}: m={} is outside the grid", init.path, lineno, m));
                    } else if (!(v >= 0.0)) {
                        problems.push_back(fmt::format("{}:{}: negative probability", init.path, lineno));
                    } else {
                        w[g.index(static_cast<int>(m))] += v;
                    }
                } catch (const std::exception&) {
                    problems.push_back(fmt::format("{}:{}: expected 'm,P_m'", init.path, lineno));
                }
            }
            if (!problems.empty()) throw ConfigError(std::move(problems));
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (w[i] > 0.0) logw[i] = std::log(w[i]);
            }
            break;
        }
    }
    const double norm = log_sum_exp(logw);
    if (!std::isfinite(norm)) throw ConfigError({"[initial] distribution has no weight on the grid"});
    std::vector<double> P(g.size());
    KahanSum total;
    for (std::size_t i = 0; i < g.size(); ++i) {
        P[i] = std::exp(logw[i] - norm);
        total += P[i];
    }
    for (double& v : P) v /= total.value();
    return P;
}

}  // namespace mare

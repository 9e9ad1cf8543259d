#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mare {

// Base of every exception thrown by the engine. `kind()` is a stable,
// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

// A caller broke a documented precondition.
class ContractViolation : public Error {
public:
    explicit ContractViolation(const std::string& what) : Error("contract_violation", what) {}
};

// |B_m| = 0: the m-dependent eigenbasis is undefined.
class DegenerateField : public Error {
public:
    DegenerateField(int m, const std::string& what) : Error("degenerate_field", what), m_(m) {}
    int m() const noexcept { return m_; }

private:
    int m_;
};

class GridMismatch : public Error {
public:
    explicit GridMismatch(const std::string& what) : Error("grid_mismatch", what) {}
};

// NaN/Inf showed up in a state or observable.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error("numerical_error", what) {}
};

// Schema problems in a run configuration; carries every offending key.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error("config_error", join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& items) {
        std::string out;
        for (const auto& item : items) {
            if (!out.empty()) out += "; ";
            out += item;
        }
        return out;
    }

    std::vector<std::string> problems_;
};

}  // namespace mare

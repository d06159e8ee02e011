#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace stem {

/// Numeric argument outside the mathematical domain of an operation
/// (probability outside (0,1], cap radius beyond pi, Gamma-function pole, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Mismatched array shapes or band limits (spectrum shorter than requested
/// ell_max, map grid smaller than coefficient band limit, ...).
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A source catalog cannot satisfy the minimum-separation constraint, either
/// because the caps provably exceed the sphere or the retry budget ran out.
class PackingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A tabulated spectrum ends while the filter window still carries
/// non-negligible mass, so a truncated sum would silently misrepresent the
/// model it claims to evaluate.
class CoverageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Derivative order or closed-form order the implementation does not provide.
class UnsupportedOrderError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Height-model curvature parameters violate their validity region
/// (kappa constraints), so densities and thresholds would be meaningless.
class DegenerateModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration parse or validation failure; key_path() names the offending
/// entry as "section.key".
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key_path, const std::string& message)
        : std::runtime_error(key_path.empty() ? message : key_path + ": " + message),
          key_path_(std::move(key_path)) {}

    const std::string& key_path() const noexcept { return key_path_; }

private:
    std::string key_path_;
};

} // namespace stem

// errors.hpp — exception hierarchy shared by all modules.
#pragma once

#include <stdexcept>
#include <string>

namespace wihs {

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct PositivityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// (D1) violated at the audited band: a near-exact resonance n.omega(I) = 0.
struct ResonanceFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// (D2) violated: sigma_min(Domega) vanishes on the audit grid.
struct DegeneracyFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SmallDivisorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DiffeomorphismViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InversionFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StiffnessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DensityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EnvelopeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OscillatoryQuadratureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InsufficientSignalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EstimatorDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AuditFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace wihs

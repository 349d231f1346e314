#pragma once

#include <stdexcept>
#include <string>

namespace amcr {

// Base class for every error thrown by the library. The CLI maps these to
// exit codes; nothing below ever escapes as a raw std::exception.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Precondition broken by the caller (empty input, bad beta, T < 1, ...).
class ContractViolation : public Error {
public:
    explicit ContractViolation(const std::string& what) : Error(what) {}
};

class DimensionMismatch : public ContractViolation {
public:
    explicit DimensionMismatch(const std::string& what) : ContractViolation(what) {}
};

class ZeroNormError : public Error {
public:
    explicit ZeroNormError(const std::string& what) : Error(what) {}
};

class EmptyPromptError : public Error {
public:
    explicit EmptyPromptError(const std::string& what) : Error(what) {}
};

// Corpus records that fail to parse; carries the offending line number.
class CorpusFormatError : public Error {
public:
    CorpusFormatError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Cross-artifact disagreement: encoder ids, embedding dimensions, step sets.
class ConsistencyError : public Error {
public:
    explicit ConsistencyError(const std::string& what) : Error(what) {}
};

class AlignmentError : public ConsistencyError {
public:
    explicit AlignmentError(const std::string& what) : ConsistencyError(what) {}
};

// Weighted pool summed to (numerically) zero; caller falls back to uniform.
class DegeneratePoolError : public Error {
public:
    explicit DegeneratePoolError(const std::string& what) : Error(what) {}
};

// Anything that crosses a provider boundary: transport, protocol, drift.
class ProviderError : public Error {
public:
    explicit ProviderError(const std::string& what) : Error(what) {}
};

class ProviderTimeout : public ProviderError {
public:
    explicit ProviderTimeout(const std::string& what) : ProviderError(what) {}
};

class ProviderUnavailable : public ProviderError {
public:
    explicit ProviderUnavailable(const std::string& what) : ProviderError(what) {}
};

class ProtocolError : public ProviderError {
public:
    explicit ProtocolError(const std::string& what) : ProviderError(what) {}
};

class DimensionDrift : public ProviderError {
public:
    explicit DimensionDrift(const std::string& what) : ProviderError(what) {}
};

// Fixture or container contents that violate a type invariant.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what) {}
};

class SerializationError : public Error {
public:
    explicit SerializationError(const std::string& what) : Error(what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what) {}
};

class CalibrationError : public Error {
public:
    explicit CalibrationError(const std::string& what) : Error(what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace amcr

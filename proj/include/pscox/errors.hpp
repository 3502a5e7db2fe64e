#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pscox {

// Failure categories, mapped to CLI exit codes.
enum class ErrorCategory {
    config = 2,     // bad flags, bad config values
    data = 3,       // unreadable/invalid input data
    numerical = 4,  // solver or matrix failure
};

class Error : public std::runtime_error {
  public:
    Error(ErrorCategory cat, const std::string& msg) : std::runtime_error(msg), cat_(cat) {}
    ErrorCategory category() const noexcept { return cat_; }

  private:
    ErrorCategory cat_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(ErrorCategory::config, msg) {}
};
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(ErrorCategory::data, msg) {}
};
struct NumericalError : Error {
    explicit NumericalError(const std::string& msg) : Error(ErrorCategory::numerical, msg) {}
};

// --- data / ingestion ---

struct MissingColumn : DataError {
    explicit MissingColumn(const std::string& name) : DataError("missing column: " + name) {}
};
struct NonNumericCell : DataError {
    NonNumericCell(std::size_t row, const std::string& col)
        : DataError("non-numeric cell at row " + std::to_string(row) + ", column " + col) {}
};
struct NonPositiveTime : DataError {
    explicit NonPositiveTime(std::size_t row)
        : DataError("non-positive or non-finite time at row " + std::to_string(row)) {}
};
struct NonBinaryIndicator : DataError {
    NonBinaryIndicator(std::size_t row, const std::string& col)
        : DataError("non-binary value at row " + std::to_string(row) + ", column " + col) {}
};
struct UnknownCovariate : DataError {
    explicit UnknownCovariate(const std::string& name) : DataError("unknown covariate: " + name) {}
};
struct EmptySubgroup : DataError {
    explicit EmptySubgroup(const std::string& spec) : DataError("subgroup matches no rows: " + spec) {}
};
struct DimensionMismatch : DataError {
    explicit DimensionMismatch(const std::string& what) : DataError("dimension mismatch: " + what) {}
};

// --- config ---

struct ConfigInvalid : ConfigError {
    explicit ConfigInvalid(const std::string& what) : ConfigError("invalid configuration: " + what) {}
};
struct InvalidLevel : ConfigError {
    explicit InvalidLevel(double level)
        : ConfigError("confidence level must lie in (0,1), got " + std::to_string(level)) {}
};

// --- numerical ---

struct PropensityOutOfRange : NumericalError {
    explicit PropensityOutOfRange(double e)
        : NumericalError("propensity outside (0,1): " + std::to_string(e)) {}
};
struct Separation : NumericalError {
    explicit Separation(const std::string& what)
        : NumericalError("logistic separation detected: " + what) {}
};
struct SingularInformation : NumericalError {
    SingularInformation() : NumericalError("singular logistic information matrix") {}
};
struct MaxIterExceeded : NumericalError {
    explicit MaxIterExceeded(int iters)
        : NumericalError("solver did not converge in " + std::to_string(iters) + " iterations") {}
};
struct MonotoneLikelihood : NumericalError {
    MonotoneLikelihood()
        : NumericalError("monotone partial likelihood: score has no root in the search bracket") {}
};
struct DegenerateInformation : NumericalError {
    DegenerateInformation() : NumericalError("degenerate curvature: a11 is numerically zero") {}
};
struct SingularBlock : NumericalError {
    SingularBlock() : NumericalError("singular block in the stacked information matrix") {}
};
struct SingularU : NumericalError {
    SingularU() : NumericalError("singular U matrix in the variance decomposition") {}
};
struct AllReplicationsFailed : NumericalError {
    AllReplicationsFailed() : NumericalError("every Monte Carlo replication failed") {}
};

}  // namespace pscox

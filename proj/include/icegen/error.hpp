#pragma once

#include <stdexcept>
#include <string>

namespace icegen {

// Broad failure classes; the CLI maps each one to its own exit code.
enum class ErrorKind {
    Validation,  // bad configuration or arguments
    Data,        // schema problems, too few rows, malformed files
    Training,    // non-finite loss or gradients
    Decode,      // scenario generation failures
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};
struct SchemaError : Error {
    explicit SchemaError(const std::string& w) : Error(ErrorKind::Data, "schema error: " + w) {}
};
struct InsufficientDataError : Error {
    explicit InsufficientDataError(const std::string& w) : Error(ErrorKind::Data, "insufficient data: " + w) {}
};
struct DomainError : Error {
    explicit DomainError(const std::string& w) : Error(ErrorKind::Data, "domain error: " + w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorKind::Data, w) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error(ErrorKind::Validation, "shape error: " + w) {}
};
struct FitError : Error {
    explicit FitError(const std::string& w) : Error(ErrorKind::Data, "fit error: " + w) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& w) : Error(ErrorKind::Training, "training error: " + w) {}
};
struct DecodeError : Error {
    explicit DecodeError(const std::string& w) : Error(ErrorKind::Decode, "decode error: " + w) {}
};

inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Validation: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Training: return 4;
    case ErrorKind::Decode: return 5;
    }
    return 1;
}

}  // namespace icegen

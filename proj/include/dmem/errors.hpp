#pragma once

#include <stdexcept>
#include <string>

namespace dmem {

// Error taxonomy used across the library. Callers that need to distinguish
// failure classes catch the concrete type; everything derives from Error so
// the CLI can catch one base for its exit-code mapping.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error(what) {}
};

class InvalidState : public Error {
public:
    explicit InvalidState(const std::string& what) : Error(what) {}
};

class NotFound : public Error {
public:
    explicit NotFound(const std::string& what) : Error(what) {}
};

// Malformed or version-mismatched files (snapshots, datasets, configs).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(what) {}
};

// Transport-level failure; retried by the gateway before surfacing.
class NetworkError : public Error {
public:
    explicit NetworkError(const std::string& what) : Error(what) {}
};

// Non-2xx response after retries, or a malformed provider payload.
class BackendError : public Error {
public:
    BackendError(const std::string& what, int status = 0)
        : Error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

// Scripted backend received a request no registered rule matches.
class ScriptMiss : public Error {
public:
    explicit ScriptMiss(const std::string& what) : Error(what) {}
};

} // namespace dmem

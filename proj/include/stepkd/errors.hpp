#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stepkd {

// Base of every error the library throws. `kind()` is a stable short tag used
// in structured logs and drop reports.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

// Malformed input line. Line numbers are 1-based.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& msg)
        : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const noexcept { return line_; }
    const char* kind() const noexcept override { return "parse"; }

private:
    std::size_t line_;
};

// Schema violation in a typed record file; names the offending field.
class SchemaError : public ParseError {
public:
    SchemaError(std::size_t line, const std::string& field, const std::string& msg)
        : ParseError(line, "field '" + field + "': " + msg), field_(field) {}
    const std::string& field() const noexcept { return field_; }
    const char* kind() const noexcept override { return "schema"; }

private:
    std::string field_;
};

class ConflictError : public Error {
public:
    ConflictError(const std::string& id, std::size_t first_line, std::size_t second_line)
        : Error("duplicate id '" + id + "' on lines " + std::to_string(first_line) + " and " +
                std::to_string(second_line)),
          id_(id), first_line_(first_line), second_line_(second_line) {}
    const std::string& id() const noexcept { return id_; }
    std::size_t first_line() const noexcept { return first_line_; }
    std::size_t second_line() const noexcept { return second_line_; }
    const char* kind() const noexcept override { return "conflict"; }

private:
    std::string id_;
    std::size_t first_line_;
    std::size_t second_line_;
};

class NotFoundError : public Error {
public:
    explicit NotFoundError(const std::string& id) : Error("not found: '" + id + "'"), id_(id) {}
    const std::string& id() const noexcept { return id_; }
    const char* kind() const noexcept override { return "not_found"; }

private:
    std::string id_;
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config"; }
};

class ValidationError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "validation"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io"; }
};

// Network failure or non-success HTTP status after all retries.
class TransportError : public Error {
public:
    TransportError(const std::string& msg, int attempts)
        : Error(msg + " (after " + std::to_string(attempts) + " attempts)"), attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }
    const char* kind() const noexcept override { return "transport"; }

private:
    int attempts_;
};

class TimeoutError : public TransportError {
public:
    using TransportError::TransportError;
    const char* kind() const noexcept override { return "timeout"; }
};

class ScriptExhaustedError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "script_exhausted"; }
};

class ReplayMissError : public Error {
public:
    explicit ReplayMissError(const std::string& hash)
        : Error("replay miss: no recorded result for request " + hash), hash_(hash) {}
    const std::string& hash() const noexcept { return hash_; }
    const char* kind() const noexcept override { return "replay_miss"; }

private:
    std::string hash_;
};

class DegenerateOutputError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "degenerate"; }
};

// Wraps an error raised while processing one sample.
class SampleError : public Error {
public:
    SampleError(const std::string& sample_id, const std::string& cause_kind, const std::string& msg)
        : Error("sample '" + sample_id + "': " + msg), sample_id_(sample_id), cause_(cause_kind) {}
    const std::string& sample_id() const noexcept { return sample_id_; }
    const std::string& cause() const noexcept { return cause_; }
    const char* kind() const noexcept override { return "sample"; }

private:
    std::string sample_id_;
    std::string cause_;
};

}  // namespace stepkd

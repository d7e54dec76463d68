// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fedtopic {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration value or file (CLI exit code 2).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

// Malformed data file. Carries a 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, long line = -1)
        : Error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}
    long line() const { return line_; }

private:
    long line_;
};

// Violation of the federation protocol: wrong phase, duplicate or
// out-of-order messages, unknown client ids (CLI exit code 3).
class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& what) : Error(what) {}
};

// Wire-level failures: truncated frames, unknown message types,
// connection loss (CLI exit code 3).
class TransportError : public Error {
public:
    explicit TransportError(const std::string& what) : Error(what) {}
};

// Non-finite values or dimension mismatches in numeric code
// (CLI exit code 4).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what) {}
};

} // namespace fedtopic

#pragma once

#include <stdexcept>
#include <string>

namespace mergectx {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid user input or configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A remote endpoint could not be reached or answered with a failure status.
class TransportError : public Error {
public:
    TransportError(const std::string& what, bool retriable)
        : Error(what), retriable_(retriable) {}

    bool retriable() const noexcept { return retriable_; }

private:
    bool retriable_;
};

} // namespace mergectx

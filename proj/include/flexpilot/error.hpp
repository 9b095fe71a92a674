#pragma once

#include <stdexcept>
#include <string>

namespace flexpilot {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class OverflowError : public Error {
public:
    using Error::Error;
};

class CapacityExceeded : public Error {
public:
    CapacityExceeded(std::string msg, std::size_t layer, std::size_t pe)
        : Error(std::move(msg)), layer_(layer), pe_(pe) {}

    std::size_t layer() const noexcept { return layer_; }
    std::size_t pe() const noexcept { return pe_; }

private:
    std::size_t layer_;
    std::size_t pe_;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class VerificationFailed : public Error {
public:
    using Error::Error;
};

} // namespace flexpilot

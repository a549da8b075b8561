#pragma once

#include <stdexcept>
#include <string>

namespace covmon {

/// Bad user input: malformed files, invalid configuration, contract violations.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter point that the model cannot represent (negative recovery fraction etc.).
class InfeasibleParameters : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical breakdown inside a recursion; carries the day index where it happened.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, int day)
        : std::runtime_error(what + " (day " + std::to_string(day) + ")")
        , day_(day)
    {
    }

    int day() const noexcept { return day_; }

private:
    int day_;
};

} // namespace covmon

#pragma once

#include <stdexcept>
#include <string>

namespace vctrl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shapes disagree; the message names the offending axis.
struct DimensionError : Error {
    using Error::Error;
};

struct ParameterError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

struct ConfigurationError : Error {
    using Error::Error;
};

struct ConditioningError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct DegenerateInputError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

// Raised when a loss or model output stops being finite. `where` is the
// sampler timestep or the optimizer step, depending on the thrower.
struct NumericError : Error {
    NumericError(const std::string& what, long where) : Error(what), where(where) {}
    long where;
};

}  // namespace vctrl

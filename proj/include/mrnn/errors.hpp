#pragma once

#include <stdexcept>
#include <string>

namespace mrnn {

// Shape or arity violations in tensor ops.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid experiment / training configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Problems reading or interpreting data files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values or numerical breakdown during a run.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mrnn

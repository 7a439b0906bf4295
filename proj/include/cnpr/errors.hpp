#pragma once

#include <stdexcept>
#include <string>

namespace cnpr {

// Error taxonomy maps onto CLI exit codes:
//   ConfigError -> 2, ValidationError -> 3, NumericError -> 4.
// StateError marks API misuse (e.g. backward without a recorded forward).

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

} // namespace cnpr

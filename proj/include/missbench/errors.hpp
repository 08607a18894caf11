#pragma once

#include <stdexcept>
#include <string>

namespace missbench {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotPositiveDefinite : Error {
    using Error::Error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct DegenerateVariance : Error {
    using Error::Error;
};

struct EmptyColumn : Error {
    using Error::Error;
};

struct EmptyPair : Error {
    using Error::Error;
};

struct UnreachableRate : Error {
    using Error::Error;
};

struct NonFiniteValue : Error {
    using Error::Error;
};

struct ZeroVariance : Error {
    using Error::Error;
};

struct EffectiveSampleTooSmall : Error {
    using Error::Error;
};

struct NoValidSplit : Error {
    using Error::Error;
};

struct UnsupportedFstar : Error {
    using Error::Error;
};

} // namespace missbench

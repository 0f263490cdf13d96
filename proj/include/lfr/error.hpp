#pragma once

#include <stdexcept>
#include <string>

namespace lfr {

// All recoverable failures in the library surface as lfr::Error.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond)
        throw Error(what);
}

} // namespace lfr

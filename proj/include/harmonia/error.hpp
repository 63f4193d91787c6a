#pragma once

#include <stdexcept>
#include <string>

namespace harmonia {

enum class Errc {
    invalid_value,          // NaN/Inf where finite data is required
    empty_input,
    invalid_argument,
    layout,                 // grouping/axis layout violation
    shape,                  // dimension mismatch
    invalid_scale,          // non-positive smoothing scale
    calibration_diverged,
    tiling,                 // tile does not divide the matrix extent
    format,                 // file format violation
    invariant,              // internal consistency check failed
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

} // namespace harmonia

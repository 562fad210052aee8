#pragma once

#include <cstdio>
#include <string>

namespace fluidlogic {

/// printf-style %.<digits>g. glibc rounds the exact binary value, so ties go
/// to even and output is identical across runs.
inline std::string format_number(double value, int significant_digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", significant_digits, value);
    return buf;
}

/// 17 significant digits: reads back to the same double.
inline std::string format_exact(double value) { return format_number(value, 17); }

}  // namespace fluidlogic

#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <boost/rational.hpp>

#include <cstdint>
#include <string>

namespace tencache {

using BigInt = boost::multiprecision::cpp_int;

// Exact rational used for all simulated times, bandwidths and ratios.
// Keeps transfer-time linearity and distribution sums exact; exported as
// double only at reporting boundaries.
using Rat = boost::rational<BigInt>;

// Exact rational value of a finite IEEE-754 double.
Rat rat_from_double(double v);

// Nearest-double export for reports.
double to_double(const Rat& r);

// mantissa * 10^exp10, e.g. rat_decimal(2474, -2) == 24.74 exactly.
Rat rat_decimal(std::int64_t mantissa, int exp10);

std::string rat_to_string(const Rat& r);

inline Rat rat_of(std::uint64_t v) { return Rat(BigInt(v)); }
inline Rat rat_of(std::int64_t v) { return Rat(BigInt(v)); }
inline Rat rat_of(int v) { return Rat(BigInt(v)); }

}  // namespace tencache

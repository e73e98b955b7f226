#include "tencache/rational.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tencache {

Rat rat_from_double(double v) {
  if (!std::isfinite(v)) throw std::domain_error("rat_from_double: non-finite value");
  if (v == 0.0) return Rat(0);
  int exp = 0;
  double frac = std::frexp(v, &exp);  // v == frac * 2^exp, 0.5 <= |frac| < 1
  auto mant = static_cast<std::int64_t>(std::ldexp(frac, 53));
  exp -= 53;
  BigInt num(mant);
  if (exp >= 0) return Rat(num << exp);
  return Rat(num, BigInt(1) << -exp);
}

double to_double(const Rat& r) {
  if (r.numerator() == 0) return 0.0;
  return r.numerator().convert_to<double>() / r.denominator().convert_to<double>();
}

Rat rat_decimal(std::int64_t mantissa, int exp10) {
  BigInt m(mantissa);
  BigInt scale = 1;
  for (int i = 0; i < std::abs(exp10); ++i) scale *= 10;
  if (exp10 >= 0) return Rat(m * scale);
  return Rat(m, scale);
}

std::string rat_to_string(const Rat& r) {
  std::ostringstream os;
  os << r.numerator();
  if (r.denominator() != 1) os << "/" << r.denominator();
  return os.str();
}

}  // namespace tencache

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include "earl/errors.hpp"

namespace earl {

enum class Loss { hinge, exponential, logistic, squared_hinge };

inline Loss parse_loss(std::string_view s) {
  if (s == "hinge") return Loss::hinge;
  if (s == "exp" || s == "exponential") return Loss::exponential;
  if (s == "logistic") return Loss::logistic;
  if (s == "sqhinge" || s == "squared_hinge") return Loss::squared_hinge;
  throw ConfigError("unknown loss '" + std::string(s) + "' (expected hinge|exp|logistic|sqhinge)");
}

inline const char* loss_name(Loss loss) {
  switch (loss) {
    case Loss::hinge: return "hinge";
    case Loss::exponential: return "exp";
    case Loss::logistic: return "logistic";
    case Loss::squared_hinge: return "sqhinge";
  }
  return "?";
}

inline bool is_smooth(Loss loss) { return loss != Loss::hinge; }

namespace detail {
// e^{-t} saturates below this argument instead of overflowing.
inline constexpr double kExpFloor = -700.0;
}

/// The surrogate phi(t). Logistic is log(1 + e^{-t}), so phi(0) = ln 2 for it.
inline double phi(Loss loss, double t) {
  switch (loss) {
    case Loss::hinge: return std::max(1.0 - t, 0.0);
    case Loss::exponential: return std::exp(-std::max(t, detail::kExpFloor));
    case Loss::logistic: return t > 0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
    case Loss::squared_hinge: {
      const double m = std::max(1.0 - t, 0.0);
      return m * m;
    }
  }
  return 0.0;
}

/// phi'(t). The hinge subgradient is -1 below the kink and 0 at and above it.
inline double phi_grad(Loss loss, double t) {
  switch (loss) {
    case Loss::hinge: return t < 1.0 ? -1.0 : 0.0;
    case Loss::exponential: return -std::exp(-std::max(t, detail::kExpFloor));
    case Loss::logistic:
      // -1 / (1 + e^t)
      return t > 0 ? -std::exp(-t) / (1.0 + std::exp(-t)) : -1.0 / (1.0 + std::exp(t));
    case Loss::squared_hinge: return t < 1.0 ? -2.0 * (1.0 - t) : 0.0;
  }
  return 0.0;
}

/// phi''(t); zero for hinge, and the right-continuous choice at the squared-hinge kink.
inline double phi_hess(Loss loss, double t) {
  switch (loss) {
    case Loss::hinge: return 0.0;
    case Loss::exponential: return std::exp(-std::max(t, detail::kExpFloor));
    case Loss::logistic: {
      const double s = t > 0 ? std::exp(-t) / (1.0 + std::exp(-t)) : 1.0 / (1.0 + std::exp(t));
      return s * (1.0 - s);
    }
    case Loss::squared_hinge: return t < 1.0 ? 2.0 : 0.0;
  }
  return 0.0;
}

namespace detail {
inline double xlogx(double x) { return x > 0 ? x * std::log(x) : 0.0; }
}  // namespace detail

/// Transform relating excess surrogate risk to value shortfall, theta in [0, 1].
inline double psi(Loss loss, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw DomainError("psi: theta must lie in [0, 1]");
  switch (loss) {
    case Loss::hinge: return theta;
    case Loss::exponential: return 1.0 - std::sqrt(1.0 - theta * theta);
    case Loss::logistic:
      if (theta == 1.0) return std::log(2.0);
      return 0.5 * ((1.0 + theta) * std::log1p(theta) + (1.0 - theta) * std::log1p(-theta));
    case Loss::squared_hinge: return theta * theta;
  }
  return 0.0;
}

inline double psi_max(Loss loss) { return psi(loss, 1.0); }

/// Solves psi(theta) = r for theta in [0, 1]. Closed forms for hinge,
/// squared hinge and exponential; bisection to 1e-10 for logistic.
inline double psi_inverse(Loss loss, double r) {
  const double top = psi_max(loss);
  if (!(r >= 0.0 && r <= top))
    throw DomainError("psi_inverse: r must lie in [0, psi(1)]");
  switch (loss) {
    case Loss::hinge: return r;
    case Loss::squared_hinge: return std::sqrt(r);
    case Loss::exponential: return std::min(1.0, std::sqrt(r * (2.0 - r)));
    case Loss::logistic: {
      double lo = 0.0, hi = 1.0;
      while (hi - lo >= 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (psi(loss, mid) < r)
          lo = mid;
        else
          hi = mid;
      }
      return 0.5 * (lo + hi);
    }
  }
  return 0.0;
}

}  // namespace earl

#pragma once

#include <numbers>

namespace fwm {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kSpeedOfLight = 299792458.0;     // m/s
inline constexpr double kBoltzmann = 1.380649e-23;       // J/K
inline constexpr double kAtomicMassUnit = 1.66053906660e-27;  // kg
inline constexpr double kCelsiusOffset = 273.15;

// FWHM of a Gaussian in units of its standard deviation, 2 sqrt(2 ln 2).
inline constexpr double kGaussFwhmPerSigma = 2.3548200450309493;

inline constexpr double mhz_to_rad_per_s(double mhz) { return kTwoPi * mhz * 1e6; }
inline constexpr double rad_per_s_to_mhz(double w) { return w / (kTwoPi * 1e6); }

}  // namespace fwm

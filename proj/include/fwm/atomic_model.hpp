// Three-level (ground, intermediate, top) model of the diamond-scheme
// excitation in a warm vapor: RWA Hamiltonian with Doppler-shifted
// detunings, Lindblad Liouvillian, steady state, and Maxwell-Boltzmann
// weighted velocity scans.
//
// Units: angular frequencies and rates in rad/s, velocities in m/s,
// wavelengths in m, temperature in K, mass in kg.
#pragma once

#include <complex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fwm/constants.hpp"

namespace fwm::atomic {

using cplx = std::complex<double>;
using Matrix3c = Eigen::Matrix3cd;
using Matrix9c = Eigen::Matrix<cplx, 9, 9>;
using Vector9c = Eigen::Matrix<cplx, 9, 1>;

// Level indices in the reduced basis {|5S1/2>, |5P3/2>, |6S1/2>}.
enum Level : int { kGround = 0, kIntermediate = 1, kTop = 2 };

class InvalidParameter : public std::invalid_argument {
public:
  InvalidParameter(std::string name, const std::string& what)
      : std::invalid_argument(name + ": " + what), name_(std::move(name)) {}
  const std::string& parameter() const noexcept { return name_; }

private:
  std::string name_;
};

class NoUniqueSteadyState : public std::runtime_error {
public:
  explicit NoUniqueSteadyState(const std::string& what, double velocity = 0.0)
      : std::runtime_error(what), velocity_(velocity) {}
  double velocity() const noexcept { return velocity_; }

private:
  double velocity_;
};

class DegenerateProfile : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ThreeLevelParams {
  double omega_p = 0.0;    // pump Rabi frequency
  double omega_c = 0.0;    // coupling Rabi frequency
  double delta_1 = 0.0;    // single-photon detuning at v = 0
  double delta_2 = 0.0;    // two-photon detuning at v = 0
  double lambda_p = 780.241e-9;
  double lambda_c = 1366.875e-9;
  double gamma_e = mhz_to_rad_per_s(6.07);
  double gamma_t = mhz_to_rad_per_s(3.45);
  double branch_te = 0.49;  // top -> intermediate fraction of gamma_t

  // Throws InvalidParameter naming the first offending field.
  void validate() const;

  // Two-photon (ground -> top) angular frequency, derived from the wavelengths.
  double omega_top() const;
  double pump_wavenumber() const;
};

struct VaporParams {
  double temperature = 353.15;
  double atomic_mass = 1.443160648e-25;  // 87Rb

  void validate() const;
  // One-dimensional thermal velocity spread sqrt(kB T / m).
  double sigma_velocity() const;
};

// Steady-state density matrix; construction checks the physical invariants.
class DensityMatrix3 {
public:
  explicit DensityMatrix3(const Matrix3c& rho);

  const Matrix3c& matrix() const noexcept { return rho_; }
  double population(Level level) const { return rho_(level, level).real(); }

private:
  Matrix3c rho_;
};

struct ScatteringProfile {
  std::vector<double> velocities;
  std::vector<double> raw;
  std::vector<double> weighted;
  bool normalized = false;
};

// (delta_1(v), delta_2(v)). Convention: delta_1(v) = delta_1 + k_p v and
// delta_2(v) = delta_2 + omega_top v / c, so the two-photon resonance sits at
// v = -c delta_2 / omega_top and the pump resonance at v = -delta_1 / k_p.
std::pair<double, double> doppler_shifted_detunings(const ThreeLevelParams& params,
                                                    double v);

Matrix3c hamiltonian(double delta_1_v, double delta_2_v, cplx omega_p, cplx omega_c);
Matrix3c build_hamiltonian(const ThreeLevelParams& params, double v);

struct DecayRates {
  double intermediate_to_ground = 0.0;
  double top_to_intermediate = 0.0;
  double top_to_ground = 0.0;
};
DecayRates decay_rates(const ThreeLevelParams& params);

// Superoperator acting on column-stacked density matrices:
// vec(rho)[i + 3 j] = rho(i, j).
Matrix9c liouvillian(const Matrix3c& hamiltonian, const DecayRates& rates);
Matrix9c build_liouvillian(const ThreeLevelParams& params, double v);

Vector9c vectorize(const Matrix3c& rho);
Matrix3c unvectorize(const Vector9c& v);

// max |L vec(rho)| / max |L|.
double relative_residual(const Matrix9c& L, const Matrix3c& rho);

DensityMatrix3 steady_state(const Matrix9c& L);

double scattering_probability(const ThreeLevelParams& params, double v);

double mb_weight(double v, const VaporParams& vapor);

struct ScanOptions {
  bool normalize = true;
  unsigned workers = 1;
};

ScatteringProfile velocity_scan(const ThreeLevelParams& params, const VaporParams& vapor,
                                std::span<const double> grid, const ScanOptions& options = {});

// Uniform grid of `points` velocities over +-`half_width_sigmas` thermal widths.
std::vector<double> default_velocity_grid(const VaporParams& vapor, int points = 2001,
                                          double half_width_sigmas = 5.0);
std::vector<double> linear_grid(double lo, double hi, int points);

double resonant_velocity(double delta_2, const ThreeLevelParams& params);

double profile_mb_overlap(const ScatteringProfile& profile, const VaporParams& vapor);

// Index of the global maximum of `values`; first occurrence on ties.
std::size_t argmax(std::span<const double> values);

}  // namespace fwm::atomic

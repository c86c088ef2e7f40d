// Two-qubit polarization tomography of signal/idler pairs: projective
// settings, count simulation, maximum-likelihood reconstruction with a
// T^dagger T parameterization, and fidelity to |Phi+>.
//
// Basis order is {HH, HV, VH, VV} with the signal qubit first.
// Single-qubit kets: H = (1, 0), V = (0, 1), D = (H + V)/sqrt2,
// A = (H - V)/sqrt2, R = (H - iV)/sqrt2, L = (H + iV)/sqrt2.
#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fwm::tomo {

using cplx = std::complex<double>;
using Matrix4c = Eigen::Matrix4cd;
using Vector4c = Eigen::Vector4cd;

enum class Basis : std::uint8_t { H, V, D, A, R, L };

struct PolarizationSetting {
  Basis signal = Basis::H;
  Basis idler = Basis::H;

  friend bool operator==(const PolarizationSetting&, const PolarizationSetting&) = default;
};

struct SettingCount {
  PolarizationSetting setting;
  std::uint64_t count = 0;
  double duration_s = 1.0;
};

struct TomographyCounts {
  std::vector<SettingCount> entries;
  // Expected counts per second for a unit-probability projector. When absent
  // it is fitted alongside the state.
  std::optional<double> flux;
};

struct TomographyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidCounts : TomographyError {
  using TomographyError::TomographyError;
};
struct OptimizerFailed : TomographyError {
  using TomographyError::TomographyError;
};
struct TargetNotPure : TomographyError {
  using TomographyError::TomographyError;
};

class DensityMatrix4 {
public:
  // Throws std::domain_error unless Hermitian (1e-12), unit trace (1e-10)
  // and positive semidefinite (-1e-10).
  explicit DensityMatrix4(const Matrix4c& rho);

  const Matrix4c& matrix() const noexcept { return rho_; }

private:
  Matrix4c rho_;
};

char basis_letter(Basis b);
Basis basis_from_letter(char c);  // throws std::invalid_argument

Vector4c setting_ket(const PolarizationSetting& s);
Matrix4c projector(const PolarizationSetting& s);

// {H, V, D, R} x {H, V, D, R}.
std::vector<PolarizationSetting> default_settings();

DensityMatrix4 bell_phi_plus();
DensityMatrix4 werner_state(double p);
DensityMatrix4 maximally_mixed();

// Conjugation by I (x) diag(1, e^{i phi}): retarder on the idler arm.
DensityMatrix4 apply_phase_retarder(const DensityMatrix4& rho, double phi);
// Retarder phase that maximizes the overlap with |Phi+>.
double compensating_phase(const DensityMatrix4& rho);

double fidelity(const DensityMatrix4& rho, const DensityMatrix4& target_pure);
double purity(const DensityMatrix4& rho);
double trace_distance(const DensityMatrix4& a, const DensityMatrix4& b);

// count ~ Poisson(n_per_setting * tr(P rho)), one unit-duration entry per
// setting; flux metadata is set to n_per_setting.
TomographyCounts simulate_counts(const DensityMatrix4& rho,
                                 std::span<const PolarizationSetting> settings,
                                 double n_per_setting, std::uint64_t seed);
// Noise-free counts (expected values rounded to integers).
TomographyCounts expected_counts(const DensityMatrix4& rho,
                                 std::span<const PolarizationSetting> settings,
                                 double n_per_setting);

// Throws InvalidCounts when the settings span fewer than 16 independent
// projectors or no counts were recorded.
void validate_counts(const TomographyCounts& counts);

// Least-squares inversion projected onto the physical cone.
DensityMatrix4 linear_inversion(const TomographyCounts& counts);

// 16 real parameters: diagonal of T, then (re, im) of the strictly lower
// entries in the order (1,0) (2,0) (2,1) (3,0) (3,1) (3,2).
using TParams = std::array<double, 16>;
Matrix4c rho_from_params(const TParams& t);
TParams params_from_rho(const Matrix4c& rho);

// Poisson log-likelihood sum_k N_k ln(n_k p_k) - n_k p_k (constant terms
// dropped) with the flux profiled out when it is not given; the gradient is
// with respect to the T parameters.
double log_likelihood(const TomographyCounts& counts, const Matrix4c& rho);
double log_likelihood_and_gradient(const TomographyCounts& counts, const TParams& t,
                                   TParams* gradient);

struct MlOptions {
  int restarts = 32;
  double likelihood_tolerance = 0.5;  // pool for the fidelity lower bound
  std::uint64_t seed = 0;
  unsigned workers = 1;
  double gradient_tolerance = 1e-7;   // on the per-count objective
  int max_iterations = 4000;
};

struct RestartOutcome {
  int index = 0;
  std::string solver;
  bool converged = false;
  double log_likelihood = 0.0;
  double fidelity_phi_plus = 0.0;
  int iterations = 0;
};

struct TomographyResult {
  DensityMatrix4 rho;
  double fidelity_phi_plus = 0.0;
  double fidelity_lower_bound = 0.0;
  double purity = 0.0;
  double log_likelihood = 0.0;
  int restarts = 0;
  int converged = 0;
  std::vector<RestartOutcome> outcomes;
};

TomographyResult ml_reconstruct(const TomographyCounts& counts, const MlOptions& options = {});

// CSV `signal_basis,idler_basis,count,duration_s`.
TomographyCounts read_counts_csv(const std::string& path);
void write_counts_csv(const std::string& path, const TomographyCounts& counts);

// Key-value text: scalars, then rho[i][j] = re,im in row-major order.
std::string format_result(const TomographyResult& result);

}  // namespace fwm::tomo

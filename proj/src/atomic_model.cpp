#include "fwm/atomic_model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace fwm::atomic {

namespace {

void require(bool ok, const char* name, const char* what) {
  if (!ok) throw InvalidParameter(name, what);
}

bool finite(double x) { return std::isfinite(x); }

// Relative rank threshold for the null-space test on a max-normalized L.
constexpr double kNullTolerance = 1e-11;

}  // namespace

void ThreeLevelParams::validate() const {
  require(finite(omega_p) && omega_p >= 0.0, "omega_p", "must be finite and >= 0");
  require(finite(omega_c) && omega_c >= 0.0, "omega_c", "must be finite and >= 0");
  require(finite(delta_1), "delta_1", "must be finite");
  require(finite(delta_2), "delta_2", "must be finite");
  require(finite(lambda_p) && lambda_p > 0.0, "lambda_p", "must be > 0");
  require(finite(lambda_c) && lambda_c > 0.0, "lambda_c", "must be > 0");
  require(finite(gamma_e) && gamma_e >= 0.0, "gamma_e", "must be finite and >= 0");
  require(finite(gamma_t) && gamma_t >= 0.0, "gamma_t", "must be finite and >= 0");
  require(branch_te >= 0.0 && branch_te <= 1.0, "branch_te", "must lie in [0, 1]");
}

double ThreeLevelParams::omega_top() const {
  return kTwoPi * kSpeedOfLight * (1.0 / lambda_p + 1.0 / lambda_c);
}

double ThreeLevelParams::pump_wavenumber() const { return kTwoPi / lambda_p; }

void VaporParams::validate() const {
  require(finite(temperature) && temperature > 0.0, "temperature", "must be > 0 K");
  require(finite(atomic_mass) && atomic_mass > 0.0, "atomic_mass", "must be > 0");
}

double VaporParams::sigma_velocity() const {
  return std::sqrt(kBoltzmann * temperature / atomic_mass);
}

DensityMatrix3::DensityMatrix3(const Matrix3c& rho) : rho_(rho) {
  const double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
  if (herm > 1e-12) throw std::domain_error("density matrix is not Hermitian");
  if (std::abs(rho.trace() - cplx(1.0, 0.0)) > 1e-10)
    throw std::domain_error("density matrix trace differs from 1");
  Eigen::SelfAdjointEigenSolver<Matrix3c> es(rho, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw std::domain_error("density matrix has a negative eigenvalue");
}

std::pair<double, double> doppler_shifted_detunings(const ThreeLevelParams& params,
                                                    double v) {
  const double d1 = params.delta_1 + params.pump_wavenumber() * v;
  const double d2 = params.delta_2 + params.omega_top() * v / kSpeedOfLight;
  return {d1, d2};
}

Matrix3c hamiltonian(double delta_1_v, double delta_2_v, cplx omega_p, cplx omega_c) {
  Matrix3c h = Matrix3c::Zero();
  h(0, 1) = 0.5 * omega_p;
  h(1, 0) = 0.5 * std::conj(omega_p);
  h(1, 1) = -delta_1_v;
  h(1, 2) = 0.5 * omega_c;
  h(2, 1) = 0.5 * std::conj(omega_c);
  h(2, 2) = -delta_2_v;
  return h;
}

Matrix3c build_hamiltonian(const ThreeLevelParams& params, double v) {
  const auto [d1, d2] = doppler_shifted_detunings(params, v);
  return hamiltonian(d1, d2, params.omega_p, params.omega_c);
}

DecayRates decay_rates(const ThreeLevelParams& params) {
  return {params.gamma_e, params.branch_te * params.gamma_t,
          (1.0 - params.branch_te) * params.gamma_t};
}

namespace {

// kron(a, b) for 3x3 factors; (a kron b)(3 i + k, 3 j + l) = a(i, j) b(k, l).
Matrix9c kron(const Matrix3c& a, const Matrix3c& b) {
  Matrix9c out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.block<3, 3>(3 * i, 3 * j) = a(i, j) * b;
  return out;
}

Matrix3c jump(int to, int from, double rate) {
  Matrix3c c = Matrix3c::Zero();
  c(to, from) = std::sqrt(rate);
  return c;
}

}  // namespace

Matrix9c liouvillian(const Matrix3c& h, const DecayRates& rates) {
  // Column stacking: vec(A X B) = (B^T kron A) vec(X).
  const Matrix3c id = Matrix3c::Identity();
  const cplx i(0.0, 1.0);
  Matrix9c L = -i * (kron(id, h) - kron(h.transpose(), id));

  const Matrix3c channels[] = {
      jump(kGround, kIntermediate, rates.intermediate_to_ground),
      jump(kIntermediate, kTop, rates.top_to_intermediate),
      jump(kGround, kTop, rates.top_to_ground),
  };
  for (const auto& c : channels) {
    const Matrix3c cdc = c.adjoint() * c;
    L += kron(c.conjugate(), c);
    L -= 0.5 * kron(id, cdc);
    L -= 0.5 * kron(cdc.transpose(), id);
  }
  return L;
}

Matrix9c build_liouvillian(const ThreeLevelParams& params, double v) {
  return liouvillian(build_hamiltonian(params, v), decay_rates(params));
}

Vector9c vectorize(const Matrix3c& rho) {
  Vector9c v;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) v(i + 3 * j) = rho(i, j);
  return v;
}

Matrix3c unvectorize(const Vector9c& v) {
  Matrix3c rho;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) rho(i, j) = v(i + 3 * j);
  return rho;
}

double relative_residual(const Matrix9c& L, const Matrix3c& rho) {
  const double scale = L.cwiseAbs().maxCoeff();
  const double r = (L * vectorize(rho)).cwiseAbs().maxCoeff();
  return scale > 0.0 ? r / scale : r;
}

DensityMatrix3 steady_state(const Matrix9c& L) {
  const double scale = L.cwiseAbs().maxCoeff();
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw NoUniqueSteadyState("Liouvillian is zero or non-finite; every state is stationary");
  const Matrix9c Ln = L / scale;

  Eigen::JacobiSVD<Matrix9c> svd(Ln);
  const auto& sv = svd.singularValues();
  const int null_dim = static_cast<int>((sv.array() <= kNullTolerance * sv(0)).count());
  if (null_dim != 1) {
    std::ostringstream msg;
    msg << "Liouvillian null space has dimension " << null_dim << " (expected 1)";
    throw NoUniqueSteadyState(msg.str());
  }

  // Population rows sum to zero (trace preservation), so the ground-population
  // row is redundant; replace it by the trace constraint.
  Matrix9c A = Ln;
  A.row(0).setZero();
  A(0, 0) = A(0, 4) = A(0, 8) = 1.0;
  Vector9c rhs = Vector9c::Zero();
  rhs(0) = 1.0;
  const Vector9c x = A.fullPivLu().solve(rhs);

  Matrix3c rho = unvectorize(x);
  rho = 0.5 * (rho + rho.adjoint());
  rho /= rho.trace().real();
  return DensityMatrix3(rho);
}

double scattering_probability(const ThreeLevelParams& params, double v) {
  return std::max(0.0, steady_state(build_liouvillian(params, v)).population(kTop));
}

double mb_weight(double v, const VaporParams& vapor) {
  const double s = vapor.sigma_velocity();
  return std::exp(-0.5 * (v / s) * (v / s));
}

ScatteringProfile velocity_scan(const ThreeLevelParams& params, const VaporParams& vapor,
                                std::span<const double> grid, const ScanOptions& options) {
  params.validate();
  vapor.validate();
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InvalidParameter("grid", "must be strictly increasing");

  const std::size_t n = grid.size();
  ScatteringProfile out;
  out.velocities.assign(grid.begin(), grid.end());
  out.raw.assign(n, 0.0);
  out.weighted.assign(n, 0.0);

  // Each worker owns a disjoint strided slice; results land at fixed indices.
  const unsigned workers = std::max(1u, std::min<unsigned>(options.workers, n ? n : 1));
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](unsigned w) {
    try {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          out.raw[i] = scattering_probability(params, grid[i]);
        } catch (const NoUniqueSteadyState& e) {
          throw NoUniqueSteadyState(std::string(e.what()) + " at v = " +
                                        std::to_string(grid[i]) + " m/s",
                                    grid[i]);
        }
        out.weighted[i] = out.raw[i] * mb_weight(grid[i], vapor);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  if (options.normalize && n > 0) {
    const double peak = *std::max_element(out.weighted.begin(), out.weighted.end());
    if (peak > 0.0) {
      for (double& w : out.weighted) w /= peak;
      out.normalized = true;
    }
  }
  return out;
}

std::vector<double> linear_grid(double lo, double hi, int points) {
  if (points < 1) throw InvalidParameter("grid_points", "must be >= 1");
  if (points == 1) return {lo};
  if (!(hi > lo)) throw InvalidParameter("grid", "upper bound must exceed lower bound");
  std::vector<double> g(static_cast<std::size_t>(points));
  const double step = (hi - lo) / (points - 1);
  for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = lo + step * i;
  return g;
}

std::vector<double> default_velocity_grid(const VaporParams& vapor, int points,
                                          double half_width_sigmas) {
  const double half = half_width_sigmas * vapor.sigma_velocity();
  return linear_grid(-half, half, points);
}

double resonant_velocity(double delta_2, const ThreeLevelParams& params) {
  return -kSpeedOfLight * delta_2 / params.omega_top();
}

double profile_mb_overlap(const ScatteringProfile& profile, const VaporParams& vapor) {
  const std::size_t n = profile.velocities.size();
  if (n < 3 || profile.weighted.size() != n)
    throw DegenerateProfile("profile needs at least 3 points");
  std::vector<double> mb(n);
  for (std::size_t i = 0; i < n; ++i) mb[i] = mb_weight(profile.velocities[i], vapor);

  const auto& w = profile.weighted;
  const double mw = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n);
  const double mm = std::accumulate(mb.begin(), mb.end(), 0.0) / static_cast<double>(n);
  double sww = 0.0, smm = 0.0, swm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sww += (w[i] - mw) * (w[i] - mw);
    smm += (mb[i] - mm) * (mb[i] - mm);
    swm += (w[i] - mw) * (mb[i] - mm);
  }
  if (!(sww > 0.0) || !(smm > 0.0)) throw DegenerateProfile("zero variance in profile");
  return std::clamp(swm / std::sqrt(sww * smm), -1.0, 1.0);
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

}  // namespace fwm::atomic

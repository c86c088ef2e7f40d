#include "fwm/tomography.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <gsl/gsl_blas.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

namespace fwm::tomo {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr std::array<Basis, 6> kAllBases{Basis::H, Basis::V, Basis::D,
                                         Basis::A, Basis::R, Basis::L};

Eigen::Vector2cd single_ket(Basis b) {
  const cplx i(0.0, 1.0);
  switch (b) {
    case Basis::H: return {1.0, 0.0};
    case Basis::V: return {0.0, 1.0};
    case Basis::D: return {kInvSqrt2, kInvSqrt2};
    case Basis::A: return {kInvSqrt2, -kInvSqrt2};
    case Basis::R: return {kInvSqrt2, -i * kInvSqrt2};
    case Basis::L: return {kInvSqrt2, i * kInvSqrt2};
  }
  throw std::invalid_argument("unknown polarization basis");
}

Vector4c phi_plus_ket() { return Vector4c(kInvSqrt2, 0.0, 0.0, kInvSqrt2); }

double real_trace(const Matrix4c& m) { return m.trace().real(); }

Matrix4c hermitize(const Matrix4c& m) { return 0.5 * (m + m.adjoint()); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Pauli products, the Hermitian basis used by the linear inversion.
std::array<Matrix4c, 16> pauli_basis() {
  std::array<Eigen::Matrix2cd, 4> s;
  s[0] << 1, 0, 0, 1;
  s[1] << 0, 1, 1, 0;
  s[2] << 0, cplx(0, -1), cplx(0, 1), 0;
  s[3] << 1, 0, 0, -1;
  std::array<Matrix4c, 16> out;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
          out[static_cast<std::size_t>(4 * a + b)](r, c) = s[a](r / 2, c / 2) * s[b](r % 2, c % 2);
  return out;
}

Eigen::MatrixXd design_matrix(const TomographyCounts& counts) {
  const auto basis = pauli_basis();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(counts.entries.size()), 16);
  for (std::size_t k = 0; k < counts.entries.size(); ++k) {
    const Vector4c psi = setting_ket(counts.entries[k].setting);
    for (std::size_t j = 0; j < 16; ++j)
      a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
          (psi.adjoint() * basis[j] * psi)(0).real();
  }
  return a;
}

// Reflects the physical cone: clip negative eigenvalues, renormalize.
Matrix4c project_physical(const Matrix4c& m) {
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(hermitize(m));
  Eigen::Vector4d ev = es.eigenvalues().cwiseMax(0.0);
  const double s = ev.sum();
  if (!(s > 0.0)) return Matrix4c::Identity() / 4.0;
  ev /= s;
  return hermitize(es.eigenvectors() * ev.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint());
}

Matrix4c t_matrix(const TParams& t) {
  Matrix4c tm = Matrix4c::Zero();
  for (int i = 0; i < 4; ++i) tm(i, i) = t[static_cast<std::size_t>(i)];
  std::size_t k = 4;
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < i; ++j, k += 2) tm(i, j) = cplx(t[k], t[k + 1]);
  return tm;
}

// Per-count negative log-likelihood over the T parameters. The profiled
// form drops ln(total), so integer rescaling of every count leaves it fixed.
class Problem {
public:
  explicit Problem(const TomographyCounts& counts) : flux_(counts.flux) {
    for (const auto& e : counts.entries) {
      kets_.push_back(setting_ket(e.setting));
      n_.push_back(static_cast<double>(e.count));
      d_.push_back(e.duration_s);
      total_ += static_cast<double>(e.count);
    }
  }

  double total() const { return total_; }

  double objective(const TParams& t, TParams* grad) const {
    const Matrix4c tm = t_matrix(t);
    const Matrix4c a = tm.adjoint() * tm;
    const double tau = real_trace(a);
    if (!(tau > 0.0)) {
      if (grad) grad->fill(0.0);
      return std::numeric_limits<double>::infinity();
    }
    const Matrix4c rho = a / tau;
    const std::size_t m = kets_.size();
    std::vector<double> p(m);
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      p[k] = std::max((kets_[k].adjoint() * rho * kets_[k])(0).real(), kTiny);
      s += d_[k] * p[k];
    }

    double f = 0.0;
    std::vector<double> w(m);
    for (std::size_t k = 0; k < m; ++k) {
      const double q = n_[k] / total_;
      if (flux_) {
        const double nk = *flux_ * d_[k];
        if (q > 0.0) f -= q * std::log(nk * p[k]);
        f += nk * p[k] / total_;
        w[k] = q / p[k] - nk / total_;
      } else {
        if (q > 0.0) f -= q * std::log(d_[k] * p[k] / s);
        w[k] = q / p[k] - d_[k] / s;
      }
    }
    if (!grad) return f;

    Matrix4c g = Matrix4c::Zero();
    double c = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      g += w[k] * (kets_[k] * kets_[k].adjoint());
      c += w[k] * p[k];
    }
    const Matrix4c mm = (g - c * Matrix4c::Identity()) / tau;
    const Matrix4c y = mm * tm.adjoint();
    // d(-f)/dRe T_ij = 2 Re Y_ji, d(-f)/dIm T_ij = -2 Im Y_ji
    for (int i = 0; i < 4; ++i) (*grad)[static_cast<std::size_t>(i)] = -2.0 * y(i, i).real();
    std::size_t k = 4;
    for (int i = 1; i < 4; ++i)
      for (int j = 0; j < i; ++j, k += 2) {
        (*grad)[k] = -2.0 * y(j, i).real();
        (*grad)[k + 1] = 2.0 * y(j, i).imag();
      }
    return f;
  }

private:
  static constexpr double kTiny = 1e-300;
  std::vector<Vector4c> kets_;
  std::vector<double> n_, d_;
  std::optional<double> flux_;
  double total_ = 0.0;
};

TParams from_gsl(const gsl_vector* v) {
  TParams t;
  for (std::size_t i = 0; i < 16; ++i) t[i] = gsl_vector_get(v, i);
  return t;
}

double gsl_f(const gsl_vector* x, void* params) {
  return static_cast<const Problem*>(params)->objective(from_gsl(x), nullptr);
}

void gsl_df(const gsl_vector* x, void* params, gsl_vector* g) {
  TParams grad;
  static_cast<const Problem*>(params)->objective(from_gsl(x), &grad);
  for (std::size_t i = 0; i < 16; ++i) gsl_vector_set(g, i, grad[i]);
}

void gsl_fdf(const gsl_vector* x, void* params, double* f, gsl_vector* g) {
  TParams grad;
  *f = static_cast<const Problem*>(params)->objective(from_gsl(x), &grad);
  for (std::size_t i = 0; i < 16; ++i) gsl_vector_set(g, i, grad[i]);
}

double norm(const TParams& t) {
  double s = 0.0;
  for (double v : t) s += v * v;
  return std::sqrt(s);
}

struct Solver {
  const gsl_multimin_fdfminimizer_type* type;
  const char* name;
};

Solver solver_for(int restart) {
  switch (restart % 3) {
    case 0: return {gsl_multimin_fdfminimizer_vector_bfgs2, "bfgs2"};
    case 1: return {gsl_multimin_fdfminimizer_conjugate_pr, "conjugate_pr"};
    default: return {gsl_multimin_fdfminimizer_conjugate_fr, "conjugate_fr"};
  }
}

struct RunState {
  RestartOutcome outcome;
  TParams t{};
};

RunState run_restart(const Problem& problem, TParams x0, int index, const MlOptions& opt) {
  const Solver solver = solver_for(index);
  RunState st;
  st.outcome.index = index;
  st.outcome.solver = solver.name;

  const double n0 = norm(x0);
  for (double& v : x0) v /= n0;

  gsl_multimin_function_fdf fdf{&gsl_f, &gsl_df, &gsl_fdf, 16, const_cast<Problem*>(&problem)};
  gsl_vector* x = gsl_vector_alloc(16);
  gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(solver.type, 16);
  for (std::size_t i = 0; i < 16; ++i) gsl_vector_set(x, i, x0[i]);

  // Gradient times parameter norm: the objective is scale invariant in T.
  const auto stationary = [&](const gsl_multimin_fdfminimizer* m) {
    return gsl_blas_dnrm2(m->gradient) * gsl_blas_dnrm2(m->x) < opt.gradient_tolerance;
  };

  int iterations = 0, resets = 0;
  bool converged = false;
  gsl_multimin_fdfminimizer_set(s, &fdf, x, 0.01, 0.1);
  while (iterations < opt.max_iterations) {
    if (stationary(s)) {
      converged = true;
      break;
    }
    const int status = gsl_multimin_fdfminimizer_iterate(s);
    ++iterations;
    if (status != GSL_SUCCESS) {
      if (stationary(s)) {
        converged = true;
        break;
      }
      // Line search stalled: restart the direction memory from here.
      if (++resets > 20) break;
      gsl_vector_memcpy(x, s->x);
      gsl_multimin_fdfminimizer_set(s, &fdf, x, 1e-3, 0.1);
    }
  }

  st.t = from_gsl(s->x);
  st.outcome.converged = converged;
  st.outcome.iterations = iterations;
  gsl_multimin_fdfminimizer_free(s);
  gsl_vector_free(x);
  return st;
}

TParams random_start(std::uint64_t seed, int index) {
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index))));
  std::normal_distribution<double> nd(0.0, 1.0);
  TParams t;
  for (double& v : t) v = nd(rng);
  return t;
}

void silence_gsl() {
  static std::once_flag once;
  std::call_once(once, [] { gsl_set_error_handler_off(); });
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

DensityMatrix4::DensityMatrix4(const Matrix4c& rho) : rho_(rho) {
  if (!rho.allFinite()) throw std::domain_error("density matrix has non-finite entries");
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::domain_error("density matrix is not Hermitian");
  if (std::abs(rho.trace() - cplx(1.0)) > 1e-10)
    throw std::domain_error("density matrix trace differs from 1");
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(hermitize(rho), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw std::domain_error("density matrix has a negative eigenvalue");
}

char basis_letter(Basis b) {
  static constexpr char letters[] = {'H', 'V', 'D', 'A', 'R', 'L'};
  return letters[static_cast<int>(b)];
}

Basis basis_from_letter(char c) {
  for (Basis b : kAllBases)
    if (basis_letter(b) == c) return b;
  throw std::invalid_argument(std::string("unknown polarization basis '") + c + "'");
}

Vector4c setting_ket(const PolarizationSetting& s) {
  const Eigen::Vector2cd a = single_ket(s.signal), b = single_ket(s.idler);
  return Vector4c(a(0) * b(0), a(0) * b(1), a(1) * b(0), a(1) * b(1));
}

Matrix4c projector(const PolarizationSetting& s) {
  const Vector4c k = setting_ket(s);
  return k * k.adjoint();
}

std::vector<PolarizationSetting> default_settings() {
  const std::array<Basis, 4> b{Basis::H, Basis::V, Basis::D, Basis::R};
  std::vector<PolarizationSetting> out;
  for (Basis s : b)
    for (Basis i : b) out.push_back({s, i});
  return out;
}

DensityMatrix4 bell_phi_plus() {
  const Vector4c k = phi_plus_ket();
  return DensityMatrix4(k * k.adjoint());
}

DensityMatrix4 werner_state(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("Werner weight must lie in [0, 1]");
  return DensityMatrix4(p * bell_phi_plus().matrix() + (1.0 - p) * Matrix4c::Identity() / 4.0);
}

DensityMatrix4 maximally_mixed() { return DensityMatrix4(Matrix4c::Identity() / 4.0); }

DensityMatrix4 apply_phase_retarder(const DensityMatrix4& rho, double phi) {
  const cplx e = std::polar(1.0, phi);
  const Eigen::Vector4cd u(1.0, e, 1.0, e);
  return DensityMatrix4(hermitize(u.asDiagonal() * rho.matrix() * u.conjugate().asDiagonal()));
}

double compensating_phase(const DensityMatrix4& rho) { return std::arg(rho.matrix()(0, 3)); }

double fidelity(const DensityMatrix4& rho, const DensityMatrix4& target_pure) {
  if (std::abs(purity(target_pure) - 1.0) > 1e-9)
    throw TargetNotPure("fidelity target is not a pure state");
  return std::clamp(real_trace(rho.matrix() * target_pure.matrix()), 0.0, 1.0);
}

double purity(const DensityMatrix4& rho) { return real_trace(rho.matrix() * rho.matrix()); }

double trace_distance(const DensityMatrix4& a, const DensityMatrix4& b) {
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(hermitize(a.matrix() - b.matrix()),
                                             Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

TomographyCounts expected_counts(const DensityMatrix4& rho,
                                 std::span<const PolarizationSetting> settings,
                                 double n_per_setting) {
  if (!(n_per_setting >= 0.0)) throw std::invalid_argument("n_per_setting must be non-negative");
  TomographyCounts out;
  out.flux = n_per_setting;
  for (const auto& s : settings) {
    const double p = std::max(real_trace(projector(s) * rho.matrix()), 0.0);
    out.entries.push_back({s, static_cast<std::uint64_t>(std::llround(n_per_setting * p)), 1.0});
  }
  return out;
}

TomographyCounts simulate_counts(const DensityMatrix4& rho,
                                 std::span<const PolarizationSetting> settings,
                                 double n_per_setting, std::uint64_t seed) {
  if (!(n_per_setting >= 0.0)) throw std::invalid_argument("n_per_setting must be non-negative");
  std::mt19937_64 rng(seed);
  TomographyCounts out;
  out.flux = n_per_setting;
  for (const auto& s : settings) {
    const double mean = n_per_setting * std::max(real_trace(projector(s) * rho.matrix()), 0.0);
    std::uint64_t c = 0;
    if (mean > 0.0) c = std::poisson_distribution<std::uint64_t>(mean)(rng);
    out.entries.push_back({s, c, 1.0});
  }
  return out;
}

void validate_counts(const TomographyCounts& counts) {
  double total = 0.0;
  for (const auto& e : counts.entries) {
    if (!(e.duration_s > 0.0) || !std::isfinite(e.duration_s))
      throw InvalidCounts("setting duration must be positive");
    total += static_cast<double>(e.count);
  }
  if (counts.flux && !(*counts.flux > 0.0 && std::isfinite(*counts.flux)))
    throw InvalidCounts("flux must be positive");
  if (counts.entries.size() < 16)
    throw InvalidCounts("need at least 16 settings, got " + std::to_string(counts.entries.size()));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design_matrix(counts));
  qr.setThreshold(1e-10);
  if (qr.rank() < 16)
    throw InvalidCounts("settings span only " + std::to_string(qr.rank()) +
                        " independent projectors, need 16");
  if (total <= 0.0) throw InvalidCounts("no counts recorded");
}

DensityMatrix4 linear_inversion(const TomographyCounts& counts) {
  validate_counts(counts);
  const Eigen::MatrixXd a = design_matrix(counts);
  Eigen::VectorXd r(a.rows());
  for (std::size_t k = 0; k < counts.entries.size(); ++k)
    r(static_cast<Eigen::Index>(k)) =
        static_cast<double>(counts.entries[k].count) / counts.entries[k].duration_s;
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(r);
  const auto basis = pauli_basis();
  Matrix4c x = Matrix4c::Zero();
  for (std::size_t j = 0; j < 16; ++j) x += c(static_cast<Eigen::Index>(j)) * basis[j];
  x /= 4.0;
  const double tr = real_trace(x);
  if (!(tr > 0.0)) return maximally_mixed();
  return DensityMatrix4(project_physical(x / tr));
}

Matrix4c rho_from_params(const TParams& t) {
  const Matrix4c tm = t_matrix(t);
  const Matrix4c a = tm.adjoint() * tm;
  const double tau = real_trace(a);
  if (!(tau > 0.0)) throw std::domain_error("T parameters are all zero");
  return hermitize(a / tau);
}

TParams params_from_rho(const Matrix4c& rho) {
  // rho = T^dagger T with T lower: Cholesky of the index-reversed matrix.
  Matrix4c j = Matrix4c::Zero();
  for (int i = 0; i < 4; ++i) j(i, 3 - i) = 1.0;
  Eigen::LLT<Matrix4c> llt(j * hermitize(rho) * j);
  if (llt.info() != Eigen::Success) throw std::domain_error("matrix is not positive definite");
  const Matrix4c l = llt.matrixL();
  const Matrix4c tm = j * l.adjoint() * j;
  TParams t;
  for (int i = 0; i < 4; ++i) t[static_cast<std::size_t>(i)] = tm(i, i).real();
  std::size_t k = 4;
  for (int i = 1; i < 4; ++i)
    for (int c = 0; c < i; ++c, k += 2) {
      t[k] = tm(i, c).real();
      t[k + 1] = tm(i, c).imag();
    }
  return t;
}

double log_likelihood(const TomographyCounts& counts, const Matrix4c& rho) {
  double n = 0.0, s = 0.0;
  for (const auto& e : counts.entries) {
    n += static_cast<double>(e.count);
    s += e.duration_s * std::max(real_trace(projector(e.setting) * rho), 0.0);
  }
  const double flux = counts.flux ? *counts.flux : n / s;
  double ll = 0.0;
  for (const auto& e : counts.entries) {
    const double mean = flux * e.duration_s * std::max(real_trace(projector(e.setting) * rho), 0.0);
    if (e.count > 0) ll += static_cast<double>(e.count) * std::log(std::max(mean, 1e-300));
    ll -= mean;
  }
  return ll;
}

double log_likelihood_and_gradient(const TomographyCounts& counts, const TParams& t,
                                   TParams* gradient) {
  const Matrix4c rho = rho_from_params(t);
  if (gradient) {
    const Problem problem(counts);
    problem.objective(t, gradient);
    for (double& g : *gradient) g *= -problem.total();
  }
  return log_likelihood(counts, rho);
}

TomographyResult ml_reconstruct(const TomographyCounts& counts, const MlOptions& options) {
  validate_counts(counts);
  if (options.restarts < 1) throw std::invalid_argument("restarts must be at least 1");
  silence_gsl();

  const Problem problem(counts);
  const DensityMatrix4 phi = bell_phi_plus();

  // First start: linear inversion pulled slightly off the boundary.
  const Matrix4c lin =
      0.999 * linear_inversion(counts).matrix() + 0.001 * Matrix4c::Identity() / 4.0;
  TParams first;
  try {
    first = params_from_rho(lin);
  } catch (const std::domain_error&) {
    first = params_from_rho(Matrix4c::Identity() / 4.0);
  }

  const auto n = static_cast<std::size_t>(options.restarts);
  std::vector<RunState> runs(n);
  std::vector<std::exception_ptr> errors(n);
  const auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      try {
        const int idx = static_cast<int>(i);
        runs[i] = run_restart(problem, idx == 0 ? first : random_start(options.seed, idx), idx,
                              options);
        const DensityMatrix4 rho(rho_from_params(runs[i].t));
        runs[i].outcome.log_likelihood = log_likelihood(counts, rho.matrix());
        runs[i].outcome.fidelity_phi_plus = fidelity(rho, phi);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, n);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::optional<std::size_t> best;
  int converged = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!runs[i].outcome.converged) continue;
    ++converged;
    if (!best || runs[i].outcome.log_likelihood > runs[*best].outcome.log_likelihood) best = i;
  }
  if (!best)
    throw OptimizerFailed("no restart reached the gradient threshold in " +
                          std::to_string(options.max_iterations) + " iterations");

  const RestartOutcome& top = runs[*best].outcome;
  double lower = top.fidelity_phi_plus;
  for (const auto& r : runs)
    if (r.outcome.converged &&
        r.outcome.log_likelihood >= top.log_likelihood - options.likelihood_tolerance)
      lower = std::min(lower, r.outcome.fidelity_phi_plus);

  DensityMatrix4 rho(rho_from_params(runs[*best].t));
  TomographyResult result{rho, top.fidelity_phi_plus, lower, purity(rho), top.log_likelihood,
                          options.restarts, converged, {}};
  for (auto& r : runs) result.outcomes.push_back(std::move(r.outcome));
  return result;
}

TomographyCounts read_counts_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidCounts("cannot open " + path);
  TomographyCounts out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line.rfind("signal_basis", 0) == 0) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) {
      const auto b = c.find_first_not_of(" \t"), e = c.find_last_not_of(" \t");
      cols.push_back(b == std::string::npos ? "" : c.substr(b, e - b + 1));
    }
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (cols.size() != 3 && cols.size() != 4) throw InvalidCounts(where + "expected 3 or 4 columns");
    if (cols[0].size() != 1 || cols[1].size() != 1)
      throw InvalidCounts(where + "basis must be one of H V D A R L");
    SettingCount sc;
    try {
      sc.setting = {basis_from_letter(cols[0][0]), basis_from_letter(cols[1][0])};
    } catch (const std::invalid_argument& e) {
      throw InvalidCounts(where + e.what());
    }
    const auto& cnt = cols[2];
    if (std::from_chars(cnt.data(), cnt.data() + cnt.size(), sc.count).ptr != cnt.data() + cnt.size())
      throw InvalidCounts(where + "count must be a non-negative integer");
    if (cols.size() == 4) {
      const auto& d = cols[3];
      if (std::from_chars(d.data(), d.data() + d.size(), sc.duration_s).ptr != d.data() + d.size() ||
          !(sc.duration_s > 0.0))
        throw InvalidCounts(where + "duration_s must be a positive number");
    }
    out.entries.push_back(sc);
  }
  return out;
}

void write_counts_csv(const std::string& path, const TomographyCounts& counts) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidCounts("cannot open " + path + " for writing");
  f << "signal_basis,idler_basis,count,duration_s\n";
  for (const auto& e : counts.entries)
    f << basis_letter(e.setting.signal) << ',' << basis_letter(e.setting.idler) << ',' << e.count
      << ',' << fmt_double(e.duration_s) << '\n';
  if (!f) throw InvalidCounts("write failed for " + path);
}

std::string format_result(const TomographyResult& r) {
  std::ostringstream o;
  o << "fidelity_phi_plus = " << fmt_double(r.fidelity_phi_plus) << '\n'
    << "fidelity_lower_bound = " << fmt_double(r.fidelity_lower_bound) << '\n'
    << "purity = " << fmt_double(r.purity) << '\n'
    << "log_likelihood = " << fmt_double(r.log_likelihood) << '\n'
    << "restarts = " << r.restarts << '\n'
    << "converged = " << r.converged << '\n';
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const cplx v = r.rho.matrix()(i, j);
      o << "rho[" << i << "][" << j << "] = " << fmt_double(v.real()) << ','
        << fmt_double(v.imag()) << '\n';
    }
  return o.str();
}

}  // namespace fwm::tomo

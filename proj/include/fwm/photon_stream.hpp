// Synthetic signal/idler time tags through a detector chain (efficiency,
// timing jitter, background, non-paralyzable dead time) and the coincidence
// statistics computed from them: delay histograms, g_si, heralding,
// dead-time inversion, power scaling and biphoton linewidth.
//
// Times on tags are integer picoseconds; every other time is in seconds
// unless the name says otherwise.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fwm::stream {

enum class Channel : std::uint8_t { kSignal = 0, kIdler = 1 };

struct TimeTag {
  Channel channel = Channel::kSignal;
  std::uint64_t time_ps = 0;

  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

// Tags of a single channel, non-decreasing in time.
using TimeTagStream = std::vector<TimeTag>;

struct StreamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityExceeded : StreamError {
  using StreamError::StreamError;
};
struct UnsortedStream : StreamError {
  using StreamError::StreamError;
};
struct EmptyStream : StreamError {
  using StreamError::StreamError;
};
struct InvalidCounts : StreamError {
  using StreamError::StreamError;
};
struct SaturatedRate : StreamError {
  using StreamError::StreamError;
};
struct InsufficientData : StreamError {
  using StreamError::StreamError;
};
struct UnresolvedPeak : StreamError {
  using StreamError::StreamError;
};
struct OverDeconvolved : StreamError {
  using StreamError::StreamError;
};

struct InvalidStreamParameter : std::invalid_argument {
  InvalidStreamParameter(std::string name, const std::string& what)
      : std::invalid_argument(name + ": " + what), name_(std::move(name)) {}
  const std::string& parameter() const noexcept { return name_; }

private:
  std::string name_;
};

struct PairStreamParams {
  double pair_rate = 0.0;       // generated pairs/s
  double corr_sigma = 0.0;      // signal-idler delay spread, s
  double eff_signal = 1.0;
  double eff_idler = 1.0;
  double jitter_signal = 0.0;   // Gaussian sigma, s
  double jitter_idler = 0.0;
  double dead_signal = 0.0;     // s
  double dead_idler = 0.0;
  double bg_signal = 0.0;       // counts/s
  double bg_idler = 0.0;
  double duration = 1.0;        // s
  std::uint64_t seed = 0;

  void validate() const;
};

// Upper bound on duration * (pair_rate + backgrounds).
inline constexpr double kMaxEvents = 1e9;

std::pair<TimeTagStream, TimeTagStream> synthesize_time_tags(const PairStreamParams& params);

// Drops every tag closer than `dead_ps` to the previously accepted one.
TimeTagStream apply_dead_time(const TimeTagStream& sorted, std::uint64_t dead_ps);

bool is_sorted_stream(const TimeTagStream& s);

struct CoincidenceHistogram {
  std::int64_t bin_width_ps = 0;
  std::vector<double> delays_ps;  // bin centers, idler minus signal
  std::vector<std::uint64_t> counts;
  std::uint64_t singles_signal = 0;
  std::uint64_t singles_idler = 0;
  double duration = 0.0;
};

// Bins delays in [-span/2, +span/2); a delay on a bin edge belongs to the
// higher bin. A non-positive duration is inferred from the last tag.
CoincidenceHistogram coincidence_histogram(const TimeTagStream& signal,
                                           const TimeTagStream& idler,
                                           std::int64_t bin_width_ps = 100,
                                           std::int64_t span_ps = 40000,
                                           double duration = 0.0);

struct GsiCurve {
  std::vector<double> delays_ps;
  std::vector<double> g;
  double peak = 0.0;
  double peak_delay_ps = 0.0;
};

GsiCurve gsi_from_histogram(const CoincidenceHistogram& h);

double heralding_efficiency(std::uint64_t coincidences, std::uint64_t signal_singles,
                            std::optional<double> eff_idler_correction = std::nullopt);

// Non-paralyzable detector: observed = true / (1 + true * dead).
double dead_time_observed_rate(double true_rate, double dead);
// Inverse; throws SaturatedRate when observed * dead >= 1.
double dead_time_true_rate(double observed, double dead);

struct PowerPoint {
  double pump_mw = 0.0;
  double coupling_mw = 0.0;
  double rate = 0.0;                  // /s
  double dead_time_correction = 1.0;  // true / observed rate factor applied
};

struct PowerScalingFit {
  double k = 0.0;         // /s/mW^2
  double residual = 0.0;  // RMS, /s
  std::size_t used = 0;
};

// Least squares of rate = k P_pump P_coupling over the linear regime: the
// points selected by `mask`, or, without a mask, those whose dead-time
// correction factor is at most 1.1.
PowerScalingFit fit_power_scaling(std::span<const PowerPoint> points,
                                  std::optional<std::vector<bool>> mask = std::nullopt);

struct GsiRatePoint {
  double coincidence_rate = 0.0;  // observed, /s
  double gsi_peak = 0.0;
};

// g_si = a / R_true with R_true = R_obs / (1 - R_obs tau_eff).
struct GsiRateFit {
  double a = 0.0;
  double tau_eff = 0.0;
  double rms_relative = 0.0;          // of the dead-time model
  double inverse_rms_relative = 0.0;  // of the pure a / R model
  bool diverged = false;              // dead-time model did not beat a / R
};

GsiRateFit fit_gsi_vs_rate(std::span<const GsiRatePoint> points);
double gsi_model(const GsiRateFit& fit, double observed_coincidence_rate);

// First-order link between the coincidence-level effective dead time and the
// per-detector dead time for simultaneous pair arrivals:
// tau_eff = tau (eta_s + eta_i - 2 eta_s eta_i) / (eta_s eta_i).
double detector_dead_time_from_effective(double tau_eff, double eff_signal, double eff_idler);

// 2 pi * 0.44 / FWHM after removing detector jitter in quadrature. rad/s.
double biphoton_linewidth(const GsiCurve& curve, double jitter_signal, double jitter_idler);

// FWHM of the g_si peak above its baseline, linearly interpolated, in ps.
double peak_fwhm_ps(const GsiCurve& curve);

struct AnalysisOptions {
  std::int64_t bin_width_ps = 100;
  std::int64_t span_ps = 40000;
  std::int64_t window_ps = 4000;  // full coincidence window around the peak
  double duration = 0.0;          // s; <= 0 infers from the tags
  double dead_signal = 0.0;
  double dead_idler = 0.0;
  std::optional<double> eff_signal;
  std::optional<double> eff_idler;
  double jitter_signal = 0.0;
  double jitter_idler = 0.0;
};

struct AnalysisReport {
  double duration = 0.0;
  std::uint64_t singles_signal = 0;
  std::uint64_t singles_idler = 0;
  double rate_signal = 0.0;
  double rate_idler = 0.0;
  std::uint64_t coincidences = 0;  // raw, within the window
  double accidentals = 0.0;        // expected within the window
  double coincidence_rate = 0.0;   // accidental-subtracted, /s
  std::optional<double> corrected_coincidence_rate;  // dead-time corrected
  std::optional<double> pair_rate_estimate;          // also efficiency corrected
  std::optional<double> gsi_peak;
  std::optional<double> gsi_peak_delay_ps;
  std::optional<double> heralding;
  std::optional<double> heralding_corrected;
  std::optional<double> linewidth;  // rad/s
  std::string linewidth_status = "ok";
  CoincidenceHistogram histogram;
};

AnalysisReport analyze(const TimeTagStream& signal, const TimeTagStream& idler,
                       const AnalysisOptions& options);

// Time-tag files: 9-byte little-endian records (u8 channel, u64 time in ps),
// or CSV `channel,time_ps` when the path ends in ".csv".
void write_tags(const std::string& path, const TimeTagStream& signal,
                const TimeTagStream& idler);
std::pair<TimeTagStream, TimeTagStream> read_tags(const std::string& path);

std::vector<std::uint8_t> encode_tags(const TimeTagStream& signal, const TimeTagStream& idler);
std::pair<TimeTagStream, TimeTagStream> decode_tags(std::span<const std::uint8_t> bytes);

}  // namespace fwm::stream

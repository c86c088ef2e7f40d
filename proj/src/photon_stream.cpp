#include "fwm/photon_stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fwm/constants.hpp"

namespace fwm::stream {

namespace {

void require(bool ok, const char* name, const char* what) {
  if (!ok) throw InvalidStreamParameter(name, what);
}

bool non_negative(double x) { return std::isfinite(x) && x >= 0.0; }
bool unit_interval(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

constexpr double kPsPerSecond = 1e12;

TimeTagStream to_stream(const std::vector<std::uint64_t>& times, Channel ch) {
  TimeTagStream s(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) s[i] = {ch, times[i]};
  return s;
}

// floor(a / b) for b > 0
std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && (a < 0)) --q;
  return q;
}

}  // namespace

void PairStreamParams::validate() const {
  require(non_negative(pair_rate), "pair_rate", "must be >= 0");
  require(non_negative(corr_sigma), "corr_sigma", "must be >= 0");
  require(unit_interval(eff_signal), "eff_signal", "must lie in [0, 1]");
  require(unit_interval(eff_idler), "eff_idler", "must lie in [0, 1]");
  require(non_negative(jitter_signal), "jitter_signal", "must be >= 0");
  require(non_negative(jitter_idler), "jitter_idler", "must be >= 0");
  require(non_negative(dead_signal), "dead_signal", "must be >= 0");
  require(non_negative(dead_idler), "dead_idler", "must be >= 0");
  require(non_negative(bg_signal), "bg_signal", "must be >= 0");
  require(non_negative(bg_idler), "bg_idler", "must be >= 0");
  require(non_negative(duration), "duration", "must be >= 0");
}

TimeTagStream apply_dead_time(const TimeTagStream& sorted, std::uint64_t dead_ps) {
  TimeTagStream out;
  out.reserve(sorted.size());
  for (const auto& tag : sorted) {
    if (out.empty() || tag.time_ps - out.back().time_ps >= dead_ps) out.push_back(tag);
  }
  return out;
}

bool is_sorted_stream(const TimeTagStream& s) {
  return std::is_sorted(s.begin(), s.end(),
                        [](const TimeTag& a, const TimeTag& b) { return a.time_ps < b.time_ps; });
}

std::pair<TimeTagStream, TimeTagStream> synthesize_time_tags(const PairStreamParams& p) {
  p.validate();
  const double expected_events = p.duration * (p.pair_rate + p.bg_signal + p.bg_idler);
  if (!(expected_events < kMaxEvents))
    throw CapacityExceeded("duration * (pair_rate + backgrounds) exceeds 1e9 events");

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  const double duration_ps = p.duration * kPsPerSecond;
  auto push = [&](std::vector<std::uint64_t>& v, double t_s) {
    const double t_ps = std::round(t_s * kPsPerSecond);
    if (t_ps >= 0.0 && t_ps < duration_ps) v.push_back(static_cast<std::uint64_t>(t_ps));
  };

  std::vector<std::uint64_t> sig, idl;
  const auto expected_pairs = static_cast<std::size_t>(p.duration * p.pair_rate * 1.1 + 16);
  sig.reserve(expected_pairs);
  idl.reserve(expected_pairs);

  if (p.pair_rate > 0.0) {
    std::exponential_distribution<double> gap(p.pair_rate);
    for (double t = gap(rng); t < p.duration; t += gap(rng)) {
      // Fixed draw order per pair keeps the stream reproducible.
      const double delay = p.corr_sigma * normal(rng);
      const bool keep_s = uniform(rng) < p.eff_signal;
      const bool keep_i = uniform(rng) < p.eff_idler;
      const double js = p.jitter_signal * normal(rng);
      const double ji = p.jitter_idler * normal(rng);
      if (keep_s) push(sig, t + js);
      if (keep_i) push(idl, t + delay + ji);
    }
  }

  auto background = [&](std::vector<std::uint64_t>& v, double rate) {
    if (!(rate > 0.0) || !(p.duration > 0.0)) return;
    std::poisson_distribution<std::uint64_t> count(rate * p.duration);
    const std::uint64_t n = count(rng);
    for (std::uint64_t k = 0; k < n; ++k) push(v, uniform(rng) * p.duration);
  };
  background(sig, p.bg_signal);
  background(idl, p.bg_idler);

  std::sort(sig.begin(), sig.end());
  std::sort(idl.begin(), idl.end());

  auto dead_ps = [](double d) { return static_cast<std::uint64_t>(std::llround(d * kPsPerSecond)); };
  return {apply_dead_time(to_stream(sig, Channel::kSignal), dead_ps(p.dead_signal)),
          apply_dead_time(to_stream(idl, Channel::kIdler), dead_ps(p.dead_idler))};
}

CoincidenceHistogram coincidence_histogram(const TimeTagStream& signal,
                                           const TimeTagStream& idler,
                                           std::int64_t bin_width_ps, std::int64_t span_ps,
                                           double duration) {
  if (bin_width_ps < 1) throw InvalidStreamParameter("bin_width_ps", "must be >= 1");
  if (span_ps < bin_width_ps || span_ps % bin_width_ps != 0)
    throw InvalidStreamParameter("span_ps", "must be a positive multiple of bin_width_ps");
  if (!is_sorted_stream(signal)) throw UnsortedStream("signal stream is not time ordered");
  if (!is_sorted_stream(idler)) throw UnsortedStream("idler stream is not time ordered");

  const std::int64_t nbins = span_ps / bin_width_ps;
  CoincidenceHistogram h;
  h.bin_width_ps = bin_width_ps;
  h.counts.assign(static_cast<std::size_t>(nbins), 0);
  h.delays_ps.resize(static_cast<std::size_t>(nbins));
  for (std::int64_t k = 0; k < nbins; ++k)
    h.delays_ps[static_cast<std::size_t>(k)] =
        -0.5 * static_cast<double>(span_ps) + (static_cast<double>(k) + 0.5) * bin_width_ps;
  h.singles_signal = signal.size();
  h.singles_idler = idler.size();

  if (duration > 0.0) {
    h.duration = duration;
  } else {
    std::uint64_t last = 0;
    if (!signal.empty()) last = std::max(last, signal.back().time_ps);
    if (!idler.empty()) last = std::max(last, idler.back().time_ps);
    h.duration = static_cast<double>(last) / kPsPerSecond;
  }

  // Work with doubled delays so span/2 stays integral: bin k holds
  // 2d + span in [2 k w, 2 (k + 1) w).
  std::size_t lo = 0;
  for (const auto& s : signal) {
    const auto st = static_cast<std::int64_t>(s.time_ps);
    while (lo < idler.size() && 2 * (static_cast<std::int64_t>(idler[lo].time_ps) - st) < -span_ps)
      ++lo;
    for (std::size_t j = lo; j < idler.size(); ++j) {
      const std::int64_t twice = 2 * (static_cast<std::int64_t>(idler[j].time_ps) - st);
      if (twice >= span_ps) break;
      const std::int64_t k = floor_div(twice + span_ps, 2 * bin_width_ps);
      ++h.counts[static_cast<std::size_t>(k)];
    }
  }
  return h;
}

GsiCurve gsi_from_histogram(const CoincidenceHistogram& h) {
  if (h.singles_signal == 0 || h.singles_idler == 0)
    throw EmptyStream("g_si needs nonzero singles on both channels");
  if (!(h.duration > 0.0)) throw EmptyStream("g_si needs a positive duration");

  const double norm = h.duration / (static_cast<double>(h.singles_signal) *
                                    static_cast<double>(h.singles_idler) *
                                    (static_cast<double>(h.bin_width_ps) / kPsPerSecond));
  GsiCurve c;
  c.delays_ps = h.delays_ps;
  c.g.resize(h.counts.size());
  for (std::size_t k = 0; k < h.counts.size(); ++k) c.g[k] = static_cast<double>(h.counts[k]) * norm;

  std::size_t best = 0;
  for (std::size_t k = 1; k < c.g.size(); ++k) {
    if (c.g[k] > c.g[best] ||
        (c.g[k] == c.g[best] && std::abs(c.delays_ps[k]) < std::abs(c.delays_ps[best])))
      best = k;
  }
  if (!c.g.empty()) {
    c.peak = c.g[best];
    c.peak_delay_ps = c.delays_ps[best];
  }
  return c;
}

double heralding_efficiency(std::uint64_t coincidences, std::uint64_t signal_singles,
                            std::optional<double> eff_idler_correction) {
  if (signal_singles == 0) throw InvalidCounts("signal singles must be > 0");
  if (coincidences > signal_singles) throw InvalidCounts("coincidences exceed signal singles");
  double h = static_cast<double>(coincidences) / static_cast<double>(signal_singles);
  if (eff_idler_correction) {
    const double e = *eff_idler_correction;
    if (!(e > 0.0 && e <= 1.0)) throw InvalidCounts("correction efficiency must lie in (0, 1]");
    h = std::min(1.0, h / e);
  }
  return h;
}

double dead_time_observed_rate(double true_rate, double dead) {
  return true_rate / (1.0 + true_rate * dead);
}

double dead_time_true_rate(double observed, double dead) {
  const double x = observed * dead;
  if (!(x < 1.0)) throw SaturatedRate("observed rate times dead time >= 1");
  return observed / (1.0 - x);
}

PowerScalingFit fit_power_scaling(std::span<const PowerPoint> points,
                                  std::optional<std::vector<bool>> mask) {
  if (points.size() < 2) throw InsufficientData("power scaling fit needs >= 2 points");
  if (mask && mask->size() != points.size())
    throw InvalidStreamParameter("mask", "length must match the number of points");

  double sxy = 0.0, sxx = 0.0;
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& pt = points[i];
    if (!(pt.pump_mw > 0.0) || !(pt.coupling_mw > 0.0))
      throw InvalidStreamParameter("power", "pump and coupling powers must be > 0");
    const bool take = mask ? (*mask)[i] : pt.dead_time_correction <= 1.10;
    if (!take) continue;
    const double x = pt.pump_mw * pt.coupling_mw;
    sxy += x * pt.rate;
    sxx += x * x;
    used.push_back(i);
  }
  if (used.size() < 2) throw InsufficientData("fewer than 2 points in the linear regime");

  PowerScalingFit fit;
  fit.k = sxy / sxx;
  fit.used = used.size();
  double ss = 0.0;
  for (std::size_t i : used) {
    const auto& pt = points[i];
    const double r = pt.rate - fit.k * pt.pump_mw * pt.coupling_mw;
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / static_cast<double>(used.size()));
  return fit;
}

GsiRateFit fit_gsi_vs_rate(std::span<const GsiRatePoint> points) {
  if (points.size() < 3) throw InsufficientData("g_si fit needs >= 3 points");
  for (const auto& p : points)
    if (!(p.coincidence_rate > 0.0) || !(p.gsi_peak > 0.0))
      throw InvalidStreamParameter("points", "rates and g_si must be > 0");

  // g = a / R - a tau is linear in (a, b = -a tau). Residuals are taken
  // relative to g so every decade of rate counts equally.
  double s11 = 0, s12 = 0, s22 = 0, t1 = 0, t2 = 0;
  for (const auto& p : points) {
    const double x1 = 1.0 / (p.coincidence_rate * p.gsi_peak);
    const double x2 = 1.0 / p.gsi_peak;
    s11 += x1 * x1;
    s12 += x1 * x2;
    s22 += x2 * x2;
    t1 += x1;
    t2 += x2;
  }
  const double det = s11 * s22 - s12 * s12;

  auto rms = [&](double a, double b) {
    double ss = 0.0;
    for (const auto& p : points) {
      const double r = (a / p.coincidence_rate + b) / p.gsi_peak - 1.0;
      ss += r * r;
    }
    return std::sqrt(ss / static_cast<double>(points.size()));
  };

  GsiRateFit fit;
  const double a_inv = t1 / s11;
  fit.inverse_rms_relative = rms(a_inv, 0.0);

  const bool solvable = std::abs(det) > 1e-12 * s11 * s22;
  if (solvable) {
    const double a = (t1 * s22 - t2 * s12) / det;
    const double b = (s11 * t2 - s12 * t1) / det;
    fit.a = a;
    fit.tau_eff = a != 0.0 ? -b / a : 0.0;
    fit.rms_relative = rms(a, b);
  }
  if (!solvable || !(fit.a > 0.0) || fit.tau_eff < 0.0 ||
      !(fit.rms_relative < fit.inverse_rms_relative)) {
    fit.diverged = true;
    fit.a = a_inv;
    fit.tau_eff = 0.0;
    fit.rms_relative = fit.inverse_rms_relative;
  }
  return fit;
}

double gsi_model(const GsiRateFit& fit, double observed_coincidence_rate) {
  return fit.a / dead_time_true_rate(observed_coincidence_rate, fit.tau_eff);
}

double detector_dead_time_from_effective(double tau_eff, double eff_signal, double eff_idler) {
  const double num = eff_signal + eff_idler - 2.0 * eff_signal * eff_idler;
  if (!(eff_signal > 0.0) || !(eff_idler > 0.0) || !(num > 0.0))
    throw InvalidStreamParameter("efficiency",
                                 "dead time is unobservable in g_si for these efficiencies");
  return tau_eff * eff_signal * eff_idler / num;
}

double peak_fwhm_ps(const GsiCurve& c) {
  const std::size_t n = c.g.size();
  if (n < 3) throw UnresolvedPeak("curve too short");
  const double span = c.delays_ps.back() - c.delays_ps.front();

  std::size_t ipk = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (c.delays_ps[k] == c.peak_delay_ps) ipk = k;

  double base = 0.0;
  std::size_t nb = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(c.delays_ps[k] - c.peak_delay_ps) >= span / 4.0) {
      base += c.g[k];
      ++nb;
    }
  }
  if (nb > 0) base /= static_cast<double>(nb);
  if (!(c.peak > 3.0 * base) || !(c.peak > 0.0))
    throw UnresolvedPeak("g_si peak is not above 3x baseline");

  const double half = base + 0.5 * (c.peak - base);
  std::size_t l = ipk;
  while (l > 0 && c.g[l - 1] >= half) --l;
  std::size_t r = ipk;
  while (r + 1 < n && c.g[r + 1] >= half) ++r;
  if (l == 0 || r + 1 == n) throw UnresolvedPeak("half-maximum crossing outside the histogram");

  auto cross = [&](std::size_t below, std::size_t above) {
    const double f = (half - c.g[below]) / (c.g[above] - c.g[below]);
    return c.delays_ps[below] + f * (c.delays_ps[above] - c.delays_ps[below]);
  };
  return cross(r + 1, r) - cross(l - 1, l);
}

double biphoton_linewidth(const GsiCurve& curve, double jitter_signal, double jitter_idler) {
  const double fwhm = peak_fwhm_ps(curve) / kPsPerSecond;
  const double js = kGaussFwhmPerSigma * jitter_signal;
  const double ji = kGaussFwhmPerSigma * jitter_idler;
  const double corr2 = fwhm * fwhm - js * js - ji * ji;
  if (!(corr2 > 1e-12 * fwhm * fwhm))
    throw OverDeconvolved("detector jitter accounts for the whole measured width");
  return kTwoPi * 0.44 / std::sqrt(corr2);
}

AnalysisReport analyze(const TimeTagStream& signal, const TimeTagStream& idler,
                       const AnalysisOptions& o) {
  AnalysisReport rep;
  rep.histogram = coincidence_histogram(signal, idler, o.bin_width_ps, o.span_ps, o.duration);
  const auto& h = rep.histogram;
  rep.duration = h.duration;
  rep.singles_signal = h.singles_signal;
  rep.singles_idler = h.singles_idler;
  if (rep.duration > 0.0) {
    rep.rate_signal = static_cast<double>(rep.singles_signal) / rep.duration;
    rep.rate_idler = static_cast<double>(rep.singles_idler) / rep.duration;
  }
  if (rep.singles_signal == 0 || rep.singles_idler == 0 || !(rep.duration > 0.0)) {
    rep.linewidth_status = "no data";
    return rep;
  }

  const GsiCurve g = gsi_from_histogram(h);
  rep.gsi_peak = g.peak;
  rep.gsi_peak_delay_ps = g.peak_delay_ps;

  const double half_window = 0.5 * static_cast<double>(o.window_ps);
  const double wing = 0.25 * static_cast<double>(o.span_ps);
  std::uint64_t in_window = 0;
  std::size_t window_bins = 0, wing_bins = 0;
  double wing_sum = 0.0;
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    const double d = std::abs(h.delays_ps[k] - g.peak_delay_ps);
    if (d <= half_window) {
      in_window += h.counts[k];
      ++window_bins;
    } else if (d >= wing) {
      wing_sum += static_cast<double>(h.counts[k]);
      ++wing_bins;
    }
  }
  rep.coincidences = in_window;
  rep.accidentals = wing_bins ? wing_sum / static_cast<double>(wing_bins) * window_bins : 0.0;
  const double net = std::max(0.0, static_cast<double>(in_window) - rep.accidentals);
  rep.coincidence_rate = net / rep.duration;

  try {
    const double live_s = rep.rate_signal / dead_time_true_rate(rep.rate_signal, o.dead_signal);
    const double live_i = rep.rate_idler / dead_time_true_rate(rep.rate_idler, o.dead_idler);
    rep.corrected_coincidence_rate = rep.coincidence_rate / (live_s * live_i);
    if (o.eff_signal && o.eff_idler && *o.eff_signal > 0.0 && *o.eff_idler > 0.0)
      rep.pair_rate_estimate = *rep.corrected_coincidence_rate / (*o.eff_signal * *o.eff_idler);
  } catch (const SaturatedRate&) {
  }

  const auto net_counts = std::min<std::uint64_t>(static_cast<std::uint64_t>(std::llround(net)),
                                                  rep.singles_signal);
  rep.heralding = heralding_efficiency(net_counts, rep.singles_signal);
  if (o.eff_idler && *o.eff_idler > 0.0)
    rep.heralding_corrected = heralding_efficiency(net_counts, rep.singles_signal, o.eff_idler);

  try {
    rep.linewidth = biphoton_linewidth(g, o.jitter_signal, o.jitter_idler);
  } catch (const UnresolvedPeak& e) {
    rep.linewidth_status = std::string("unresolved: ") + e.what();
  } catch (const OverDeconvolved& e) {
    rep.linewidth_status = std::string("over-deconvolved: ") + e.what();
  }
  return rep;
}

}  // namespace fwm::stream

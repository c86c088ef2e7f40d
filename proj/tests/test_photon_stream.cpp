#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>

#include "fwm/constants.hpp"
#include "fwm/photon_stream.hpp"

using namespace fwm;
using namespace fwm::stream;

namespace {

PairStreamParams reference_detectors(double pair_rate, double duration, std::uint64_t seed) {
  PairStreamParams p;
  p.pair_rate = pair_rate;
  p.corr_sigma = 200e-12;
  p.eff_signal = 0.78;
  p.eff_idler = 0.68;
  p.jitter_signal = 90e-12;
  p.jitter_idler = 350e-12;
  p.duration = duration;
  p.seed = seed;
  return p;
}

TimeTagStream tags(Channel ch, std::initializer_list<std::uint64_t> times) {
  TimeTagStream s;
  for (auto t : times) s.push_back({ch, t});
  return s;
}

std::uint64_t total(const CoincidenceHistogram& h) {
  return std::accumulate(h.counts.begin(), h.counts.end(), std::uint64_t{0});
}

}  // namespace

TEST_CASE("synthesis edge cases") {
  SUBCASE("zero rates give empty streams") {
    PairStreamParams p;
    auto [s, i] = synthesize_time_tags(p);
    CHECK(s.empty());
    CHECK(i.empty());
  }
  SUBCASE("ideal detectors copy the pair times") {
    PairStreamParams p;
    p.pair_rate = 1e5;
    p.duration = 0.05;
    p.seed = 3;
    auto [s, i] = synthesize_time_tags(p);
    REQUIRE(s.size() == i.size());
    CHECK(s.size() > 4000);
    for (std::size_t k = 0; k < s.size(); ++k) CHECK(s[k].time_ps == i[k].time_ps);
    CHECK(s.front().channel == Channel::kSignal);
    CHECK(i.front().channel == Channel::kIdler);
  }
  SUBCASE("capacity guard") {
    PairStreamParams p;
    p.pair_rate = 1e9;
    p.duration = 2.0;
    CHECK_THROWS_AS(synthesize_time_tags(p), CapacityExceeded);
  }
  SUBCASE("validation") {
    PairStreamParams p;
    p.eff_idler = 1.2;
    CHECK_THROWS_AS(synthesize_time_tags(p), InvalidStreamParameter);
  }
}

TEST_CASE("coincidences follow binomial thinning") {
  // E[C] = R T eta_s eta_i = 1e6 * 0.78 * 0.68
  auto p = reference_detectors(1e6, 1.0, 17);
  auto [s, i] = synthesize_time_tags(p);
  // A +-2 ns window holds the whole pair peak (sigma ~ 413 ps) plus an
  // accidental floor of S_s S_i * window / T.
  const auto h = coincidence_histogram(s, i, 100, 4000, p.duration);
  const double pairs = 1e6 * 0.78 * 0.68;
  const double accidentals = static_cast<double>(s.size()) * static_cast<double>(i.size()) * 4e-9;
  const double expect = pairs + accidentals;
  CHECK(std::abs(static_cast<double>(total(h)) - expect) < 4 * std::sqrt(expect));
  CHECK(std::abs(static_cast<double>(s.size()) - 0.78e6) < 4 * std::sqrt(0.78e6));
}

TEST_CASE("property: halving both efficiencies quarters coincidences") {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto full = reference_detectors(2e5, 1.0, seed);
    full.eff_signal = 0.8;
    full.eff_idler = 0.6;
    auto half = full;
    half.eff_signal = 0.4;
    half.eff_idler = 0.3;
    half.seed = seed + 100;
    auto [s1, i1] = synthesize_time_tags(full);
    auto [s2, i2] = synthesize_time_tags(half);
    const double c1 = static_cast<double>(total(coincidence_histogram(s1, i1)));
    const double c2 = static_cast<double>(total(coincidence_histogram(s2, i2)));
    // var(c1/4 - c2) ~ c1/16 + c2
    if (std::abs(c1 / 4 - c2) < 4 * std::sqrt(c1 / 16 + c2)) ++ok;
  }
  CHECK(ok == 5);
}

TEST_CASE("property: dead-time filter spacing") {
  auto p = reference_detectors(5e6, 0.02, 5);
  p.dead_signal = 20e-9;
  p.dead_idler = 35e-9;
  p.bg_idler = 1e6;
  auto [s, i] = synthesize_time_tags(p);
  for (std::size_t k = 1; k < s.size(); ++k) REQUIRE(s[k].time_ps - s[k - 1].time_ps >= 20000u);
  for (std::size_t k = 1; k < i.size(); ++k) REQUIRE(i[k].time_ps - i[k - 1].time_ps >= 35000u);
  // Non-paralyzable: observed singles follow true / (1 + true tau).
  const double true_s = 5e6 * 0.78;
  const double want = dead_time_observed_rate(true_s, 20e-9) * p.duration;
  CHECK(std::abs(static_cast<double>(s.size()) - want) < 5 * std::sqrt(want));

  const auto filtered = apply_dead_time(tags(Channel::kSignal, {0, 5, 10, 25, 26, 40}), 10);
  CHECK(filtered == tags(Channel::kSignal, {0, 10, 25, 40}));
}

TEST_CASE("property: synthesis is reproducible for a fixed seed") {
  auto p = reference_detectors(3e5, 0.1, 99);
  p.bg_signal = 1e4;
  p.dead_idler = 20e-9;
  const auto a = synthesize_time_tags(p);
  const auto b = synthesize_time_tags(p);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  p.seed = 100;
  CHECK(synthesize_time_tags(p).first != a.first);
}

TEST_CASE("coincidence histogram") {
  SUBCASE("empty streams") {
    const auto h = coincidence_histogram({}, {}, 100, 40000);
    CHECK(h.counts.size() == 400);
    CHECK(total(h) == 0);
  }
  SUBCASE("single pair lands in the +250 ps bin") {
    const auto h = coincidence_histogram(tags(Channel::kSignal, {0}),
                                         tags(Channel::kIdler, {250}), 100, 40000);
    CHECK(total(h) == 1);
    for (std::size_t k = 0; k < h.counts.size(); ++k)
      if (h.counts[k]) CHECK(h.delays_ps[k] == 250.0);
  }
  SUBCASE("edges go to the higher bin") {
    const auto h = coincidence_histogram(tags(Channel::kSignal, {1000}),
                                         tags(Channel::kIdler, {1000, 1100, 1000 + 20000}), 100,
                                         40000);
    // delay 0 -> [0,100), delay 100 -> [100,200), delay +span/2 excluded
    CHECK(total(h) == 2);
    CHECK(h.counts[200] == 1);
    CHECK(h.delays_ps[200] == 50.0);
    CHECK(h.counts[201] == 1);
    const auto low = coincidence_histogram(tags(Channel::kSignal, {30000}),
                                           tags(Channel::kIdler, {10000}), 100, 40000);
    CHECK(low.counts[0] == 1);  // delay -span/2 is included
  }
  SUBCASE("unsorted input is rejected") {
    CHECK_THROWS_AS(coincidence_histogram(tags(Channel::kSignal, {5, 3}), {}), UnsortedStream);
    CHECK_THROWS_AS(coincidence_histogram({}, tags(Channel::kIdler, {5, 3})), UnsortedStream);
  }
  SUBCASE("span must be a multiple of the bin width") {
    CHECK_THROWS_AS(coincidence_histogram({}, {}, 100, 450), InvalidStreamParameter);
    CHECK_THROWS_AS(coincidence_histogram({}, {}, 0, 400), InvalidStreamParameter);
  }
  SUBCASE("brute-force count agrees with the sweep") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::uint64_t> u(0, 200000);
    std::vector<std::uint64_t> a(300), b(300);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    TimeTagStream s, i;
    for (auto x : a) s.push_back({Channel::kSignal, x});
    for (auto x : b) i.push_back({Channel::kIdler, x});
    const auto h = coincidence_histogram(s, i, 250, 10000);
    std::vector<std::uint64_t> want(40, 0);
    for (auto x : a)
      for (auto y : b) {
        const double d = static_cast<double>(y) - static_cast<double>(x);
        if (d >= -5000 && d < 5000) ++want[static_cast<std::size_t>(std::floor((d + 5000) / 250))];
      }
    CHECK(h.counts == want);
  }
}

TEST_CASE("property: histogram symmetry under channel exchange") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::uint64_t> u(0, 500000);
  // Even signal and odd idler times keep every delay off the (even) bin edges.
  std::vector<std::uint64_t> a(400), b(400);
  for (auto& x : a) x = 2 * u(rng);
  for (auto& x : b) x = 2 * u(rng) + 1;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  TimeTagStream s, i, s_as_idler, i_as_signal;
  for (auto x : a) s.push_back({Channel::kSignal, x});
  for (auto x : b) i.push_back({Channel::kIdler, x});
  const auto fwd = coincidence_histogram(s, i, 100, 20000);
  const auto rev = coincidence_histogram(i, s, 100, 20000);
  const std::size_t n = fwd.counts.size();
  for (std::size_t k = 0; k < n; ++k) {
    CHECK(fwd.counts[k] == rev.counts[n - 1 - k]);
    CHECK(fwd.delays_ps[k] == -rev.delays_ps[n - 1 - k]);
  }
}

TEST_CASE("histogram width is the quadrature sum of the correlation and jitters") {
  auto p = reference_detectors(5e5, 1.0, 21);
  auto [s, i] = synthesize_time_tags(p);
  const auto h = coincidence_histogram(s, i, 20, 8000, p.duration);
  // Moment estimate of the delay spread with the accidental floor
  // (S_s S_i w / T per bin) and the bin-width variance removed.
  const double floor_per_bin =
      static_cast<double>(s.size()) * static_cast<double>(i.size()) * 20e-12 / p.duration;
  double n = 0, m1 = 0, m2 = 0;
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    const double c = static_cast<double>(h.counts[k]) - floor_per_bin;
    n += c;
    m1 += c * h.delays_ps[k];
    m2 += c * h.delays_ps[k] * h.delays_ps[k];
  }
  m1 /= n;
  const double sigma = std::sqrt(m2 / n - m1 * m1 - 20.0 * 20.0 / 12.0);
  const double want = std::sqrt(200.0 * 200 + 90.0 * 90 + 350.0 * 350);
  CHECK(sigma == doctest::Approx(want).epsilon(0.05));
}

TEST_CASE("g_si estimator") {
  SUBCASE("hand-evaluated single bin") {
    CoincidenceHistogram h;
    h.bin_width_ps = 100;
    h.delays_ps = {0.0};
    h.counts = {100};
    h.singles_signal = h.singles_idler = 10000;
    h.duration = 1.0;
    // 100 * 1 / (1e4 * 1e4 * 1e-10)
    CHECK(gsi_from_histogram(h).peak == doctest::Approx(1e4).epsilon(1e-12));
  }
  SUBCASE("zero singles") {
    CoincidenceHistogram h;
    h.bin_width_ps = 100;
    h.delays_ps = {0.0};
    h.counts = {0};
    h.duration = 1.0;
    CHECK_THROWS_AS(gsi_from_histogram(h), EmptyStream);
  }
  SUBCASE("ties go to the smallest |delay|") {
    CoincidenceHistogram h;
    h.bin_width_ps = 100;
    h.delays_ps = {-250, -150, -50, 50, 150};
    h.counts = {5, 9, 9, 1, 2};
    h.singles_signal = h.singles_idler = 10;
    h.duration = 1.0;
    CHECK(gsi_from_histogram(h).peak_delay_ps == -50.0);
    h.counts = {9, 1, 1, 9, 2};
    CHECK(gsi_from_histogram(h).peak_delay_ps == 50.0);
  }
  SUBCASE("uncorrelated streams give g = 1") {
    PairStreamParams a;
    a.bg_signal = 1e5;
    a.duration = 10.0;
    a.seed = 1;
    PairStreamParams b = a;
    b.bg_signal = 0.0;
    b.bg_idler = 1e5;
    b.seed = 2;
    const auto s = synthesize_time_tags(a).first;
    const auto i = synthesize_time_tags(b).second;
    const auto h = coincidence_histogram(s, i, 100, 40000, 10.0);
    const auto g = gsi_from_histogram(h);
    double mean_counts = 0;
    for (auto c : h.counts) mean_counts += static_cast<double>(c);
    mean_counts /= static_cast<double>(h.counts.size());
    const double sigma_bin = 1.0 / std::sqrt(mean_counts);
    double mean_g = 0;
    for (double x : g.g) {
      CHECK(std::abs(x - 1.0) < 5 * sigma_bin + 0.02);
      mean_g += x;
    }
    mean_g /= static_cast<double>(g.g.size());
    CHECK(std::abs(mean_g - 1.0) < 5 * sigma_bin / std::sqrt(static_cast<double>(g.g.size())));
  }
}

TEST_CASE("g_si peak scales inversely with the pair rate") {
  std::vector<double> lx, ly;
  for (double rate : {1e3, 1e4, 1e5}) {
    auto p = reference_detectors(rate, 2e5 / rate, 7);
    auto [s, i] = synthesize_time_tags(p);
    AnalysisOptions o;
    o.duration = p.duration;
    const auto r = analyze(s, i, o);
    lx.push_back(std::log(r.coincidence_rate));
    ly.push_back(std::log(*r.gsi_peak));
  }
  const double slope = (ly[2] - ly[0]) / (lx[2] - lx[0]);
  CHECK(slope == doctest::Approx(-1.0).epsilon(0.05));
}

TEST_CASE("heralding efficiency") {
  CHECK(heralding_efficiency(16000, 100000) == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(heralding_efficiency(16000, 100000, 0.68) == doctest::Approx(0.2352941).epsilon(1e-6));
  CHECK(heralding_efficiency(0, 100000) == 0.0);
  CHECK(heralding_efficiency(90, 100, 0.5) == 1.0);
  CHECK_THROWS_AS(heralding_efficiency(1, 0), InvalidCounts);
  CHECK_THROWS_AS(heralding_efficiency(11, 10), InvalidCounts);
  CHECK_THROWS_AS(heralding_efficiency(1, 10, 0.0), InvalidCounts);
}

TEST_CASE("dead-time rate model") {
  CHECK(dead_time_observed_rate(1234.5, 0.0) == 1234.5);
  CHECK(dead_time_true_rate(1234.5, 0.0) == 1234.5);
  CHECK(dead_time_observed_rate(5e6, 20e-9) == doctest::Approx(5e6 / 1.1).epsilon(1e-12));
  CHECK(dead_time_observed_rate(5e6, 20e-9) == doctest::Approx(4.545e6).epsilon(1e-3));
  CHECK_THROWS_AS(dead_time_true_rate(5e7, 20e-9), SaturatedRate);
  CHECK_THROWS_AS(dead_time_true_rate(1e8, 20e-9), SaturatedRate);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 200; ++k) {
    const double tau = 1e-9 + 1e-7 * u(rng);
    const double rate = 0.5 * u(rng) / tau;
    const double back = dead_time_true_rate(dead_time_observed_rate(rate, tau), tau);
    CHECK(std::abs(back - rate) <= 1e-9 * rate);
  }
}

TEST_CASE("power scaling fit") {
  std::vector<PowerPoint> pts;
  for (double pp : {0.25, 0.5, 1.0})
    for (double pc : {2.0, 5.0, 10.0}) pts.push_back({pp, pc, 3e5 * pp * pc, 1.0});
  const auto fit = fit_power_scaling(pts);
  CHECK(std::abs(fit.k / 3e5 - 1.0) < 1e-6);
  CHECK(fit.residual < 1e-6 * 3e5);

  const PowerPoint same[] = {{1.0, 2.0, 7e5, 1.0}, {1.0, 2.0, 7e5, 1.0}};
  const auto f2 = fit_power_scaling(same);
  CHECK(f2.k == doctest::Approx(3.5e5));
  CHECK(f2.residual == doctest::Approx(0.0));

  SUBCASE("saturated points are excluded automatically or by mask") {
    auto bad = pts;
    bad.push_back({1.0, 20.0, 1e6, 1.5});
    CHECK(fit_power_scaling(bad).k == doctest::Approx(3e5).epsilon(1e-9));
    std::vector<bool> mask(bad.size(), true);
    CHECK(fit_power_scaling(bad, mask).k < 2.9e5);
  }
  SUBCASE("insufficient data") {
    const PowerPoint one[] = {{1.0, 1.0, 1.0, 1.0}};
    CHECK_THROWS_AS(fit_power_scaling(one), InsufficientData);
    const PowerPoint two[] = {{1.0, 1.0, 1.0, 2.0}, {1.0, 2.0, 2.0, 1.0}};
    CHECK_THROWS_AS(fit_power_scaling(two), InsufficientData);
  }
}

TEST_CASE("g_si vs rate fit") {
  SUBCASE("exact inverse law") {
    std::vector<GsiRatePoint> pts;
    for (double r : {1e3, 1e4, 1e5, 1e6}) pts.push_back({r, 4e7 / r});
    const auto fit = fit_gsi_vs_rate(pts);
    CHECK(fit.a == doctest::Approx(4e7).epsilon(1e-9));
    CHECK(std::abs(fit.tau_eff) < 1e-15);
  }
  SUBCASE("exact dead-time law") {
    std::vector<GsiRatePoint> pts;
    for (double r : {1e4, 1e5, 1e6, 5e6}) pts.push_back({r, 4e7 * (1 - r * 15e-9) / r});
    const auto fit = fit_gsi_vs_rate(pts);
    CHECK(fit.a == doctest::Approx(4e7).epsilon(1e-9));
    CHECK(fit.tau_eff == doctest::Approx(15e-9).epsilon(1e-6));
    CHECK_FALSE(fit.diverged);
    CHECK(gsi_model(fit, 1e6) == doctest::Approx(4e7 * (1 - 1e6 * 15e-9) / 1e6));
  }
  SUBCASE("model shape admits g ~ 40 at 1.7e6/s with 20 ns") {
    GsiRateFit fit;
    fit.tau_eff = 20e-9;
    fit.a = 40.0 * 1.7e6 / (1.0 - 1.7e6 * 20e-9);
    CHECK(fit.a > 0.0);
    CHECK(gsi_model(fit, 1.7e6) == doctest::Approx(40.0));
  }
  SUBCASE("upward curvature cannot be explained and is flagged") {
    std::vector<GsiRatePoint> pts;
    for (double r : {1e4, 1e5, 1e6, 5e6}) pts.push_back({r, 4e7 * (1 + r * 15e-9) / r});
    const auto fit = fit_gsi_vs_rate(pts);
    CHECK(fit.diverged);
    CHECK(fit.tau_eff == 0.0);
  }
  const GsiRatePoint two[] = {{1, 1}, {2, 2}};
  CHECK_THROWS_AS(fit_gsi_vs_rate(two), InsufficientData);
  CHECK(detector_dead_time_from_effective(15e-9, 0.5, 0.5) == doctest::Approx(7.5e-9));
  CHECK_THROWS_AS(detector_dead_time_from_effective(1e-9, 1.0, 1.0), InvalidStreamParameter);
}

TEST_CASE("biphoton linewidth") {
  auto gaussian_curve = [](double fwhm_ps, double bin_ps) {
    GsiCurve c;
    const double sigma = fwhm_ps / kGaussFwhmPerSigma;
    for (double d = -10000 + bin_ps / 2; d < 10000; d += bin_ps) {
      c.delays_ps.push_back(d);
      c.g.push_back(1.0 + 500.0 * std::exp(-0.5 * d * d / (sigma * sigma)));
    }
    const auto k = static_cast<std::size_t>(
        std::max_element(c.g.begin(), c.g.end()) - c.g.begin());
    c.peak = c.g[k];
    c.peak_delay_ps = c.delays_ps[k];
    return c;
  };
  // 0.44 / 440 ps = 1 GHz
  const auto c = gaussian_curve(440.0, 2.0);
  CHECK(biphoton_linewidth(c, 0, 0) / kTwoPi == doctest::Approx(1e9).epsilon(0.005));

  const double fwhm = peak_fwhm_ps(c) * 1e-12;
  const double j = fwhm / kGaussFwhmPerSigma / std::sqrt(2.0);
  CHECK_THROWS_AS(biphoton_linewidth(c, j, j), OverDeconvolved);
  CHECK_THROWS_AS(biphoton_linewidth(c, 2 * j, 0), OverDeconvolved);

  GsiCurve flat = c;
  std::fill(flat.g.begin(), flat.g.end(), 1.0);
  flat.peak = 1.0;
  CHECK_THROWS_AS(biphoton_linewidth(flat, 0, 0), UnresolvedPeak);
}

TEST_CASE("analysis of a synthetic run") {
  auto p = reference_detectors(1e6, 1.0, 77);
  p.dead_signal = p.dead_idler = 20e-9;
  auto [s, i] = synthesize_time_tags(p);
  AnalysisOptions o;
  o.duration = p.duration;
  o.dead_signal = o.dead_idler = 20e-9;
  o.eff_signal = 0.78;
  o.eff_idler = 0.68;
  o.jitter_signal = 90e-12;
  o.jitter_idler = 350e-12;
  const auto r = analyze(s, i, o);
  REQUIRE(r.pair_rate_estimate.has_value());
  CHECK(*r.pair_rate_estimate == doctest::Approx(1e6).epsilon(0.02));
  CHECK(*r.heralding == doctest::Approx(0.68).epsilon(0.02));
  REQUIRE(r.linewidth.has_value());

  const auto empty = analyze({}, {}, AnalysisOptions{});
  CHECK(empty.singles_signal == 0);
  CHECK_FALSE(empty.gsi_peak.has_value());
}

TEST_CASE("time-tag file format") {
  const auto s = tags(Channel::kSignal, {1, 0x0102030405060708ULL});
  const auto i = tags(Channel::kIdler, {1, 7});
  const auto bytes = encode_tags(s, i);
  REQUIRE(bytes.size() == 4 * 9);
  // time order with signal first on ties: (s,1) (i,1) (i,7) (s,0x0102...)
  CHECK(bytes[0] == 0);
  CHECK(bytes[1] == 1);
  CHECK(bytes[9] == 1);
  CHECK(bytes[18] == 1);
  CHECK(bytes[19] == 7);
  CHECK(bytes[27] == 0);
  const std::uint8_t le[] = {0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01};
  for (int b = 0; b < 8; ++b) CHECK(bytes[28 + static_cast<std::size_t>(b)] == le[b]);

  const auto [ds, di] = decode_tags(bytes);
  CHECK(ds == s);
  CHECK(di == i);

  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
  CHECK_THROWS_AS(decode_tags(truncated), StreamError);
  auto bad = bytes;
  bad[0] = 7;
  CHECK_THROWS_AS(decode_tags(bad), StreamError);

  SUBCASE("property: random streams round-trip through both file formats") {
    auto p = reference_detectors(2e5, 0.05, 12);
    auto [rs, ri] = synthesize_time_tags(p);
    const auto dir = std::filesystem::temp_directory_path() / "fwm_tag_io_test";
    std::filesystem::create_directories(dir);
    for (const char* name : {"t.bin", "t.csv"}) {
      const auto path = (dir / name).string();
      write_tags(path, rs, ri);
      const auto [a, b] = read_tags(path);
      CHECK(a == rs);
      CHECK(b == ri);
    }
    CHECK(std::filesystem::file_size(dir / "t.bin") == 9 * (rs.size() + ri.size()));
    std::filesystem::remove_all(dir);
  }
}

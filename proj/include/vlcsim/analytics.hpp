#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "vlcsim/error.hpp"

namespace vlcsim {

// Gaussian tail probability. std::erfc is accurate to a few ulp on glibc.
inline double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Bit error probability of on-off keying with a midpoint threshold, where
/// `snr` is the linear decision SNR.
inline double ber_ook(double snr) {
  detail::require(snr >= 0, "snr must be >= 0");
  return 0.5 * std::erfc(std::sqrt(snr / 2));
}

// Eight data bits, each an independent chance to corrupt the character.
inline double ser_ttl_raw(double snr) {
  detail::require(snr >= 0, "snr must be >= 0");
  return 4.0 * std::erfc(std::sqrt(snr / 2));
}

inline double ser_ttl(double snr) { return std::clamp(ser_ttl_raw(snr), 0.0, 1.0); }

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

struct SyncProbabilityInputs {
  std::int64_t n_sync = 1;
  std::int64_t n_payload = 1000;
  double p_s = 0.0;
  std::int64_t alphabet_size = 256;

  void validate() const {
    detail::require(p_s >= 0 && p_s <= 1, "p_s must lie in [0, 1]");
    detail::require(n_sync >= 1 && n_payload >= 1, "n_sync and n_payload must be >= 1");
    detail::require(alphabet_size >= 2, "alphabet_size must be >= 2");
  }
};

/// Chance a block loses sync: one of its sync symbols is hit, or a payload
/// symbol turns into the sync symbol. A union bound, so it can exceed 1.
inline double p_fail_raw(const SyncProbabilityInputs& in) {
  in.validate();
  const double to_sync = in.p_s / static_cast<double>(in.alphabet_size - 1);
  return static_cast<double>(in.n_sync) * in.p_s + static_cast<double>(in.n_payload) * to_sync;
}

inline double p_fail(const SyncProbabilityInputs& in) { return std::clamp(p_fail_raw(in), 0.0, 1.0); }

// Both sync words corrupted and recreated the right distance apart.
inline double p_err_raw(const SyncProbabilityInputs& in) {
  in.validate();
  const double to_sync = in.p_s / static_cast<double>(in.alphabet_size - 1);
  const double k = 2.0 * static_cast<double>(in.n_sync);
  return static_cast<double>(in.n_payload) * std::pow(in.p_s, k) * std::pow(to_sync, k);
}

inline double p_err(const SyncProbabilityInputs& in) { return std::clamp(p_err_raw(in), 0.0, 1.0); }

/// Substitution-count histogram over received frames, plus the dropped tally.
struct ErrorHistogram {
  std::map<std::int64_t, std::uint64_t> bins;
  std::uint64_t dropped = 0;
  std::uint64_t total = 0;

  void add_received(std::int64_t substitutions) {
    ++bins[substitutions];
    ++total;
  }
  void add_dropped() {
    ++dropped;
    ++total;
  }
  std::uint64_t received() const { return total - dropped; }
  std::uint64_t clean() const {
    auto it = bins.find(0);
    return it == bins.end() ? 0 : it->second;
  }
  std::uint64_t substituted() const { return received() - clean(); }

  bool consistent() const {
    std::uint64_t s = 0;
    for (const auto& [k, v] : bins) s += v;
    return s + dropped == total;
  }

  double mean_substitutions() const {
    const auto n = received();
    if (n == 0) return 0.0;
    double s = 0;
    for (const auto& [k, v] : bins) s += static_cast<double>(k) * static_cast<double>(v);
    return s / static_cast<double>(n);
  }

  // Unbiased sample variance of the substitution count among received frames.
  double variance_substitutions() const {
    const auto n = received();
    if (n < 2) return 0.0;
    const double mu = mean_substitutions();
    double s = 0;
    for (const auto& [k, v] : bins) s += (static_cast<double>(k) - mu) * (static_cast<double>(k) - mu) * static_cast<double>(v);
    return s / static_cast<double>(n - 1);
  }

  bool operator==(const ErrorHistogram&) const = default;
};

struct HistogramDistribution {
  std::map<std::int64_t, double> pdf;  // over received frames
  std::map<std::int64_t, double> cdf;  // over all frames; tops out at received/total
  double reliability = 0;
};

inline HistogramDistribution histogram_pdf_cdf(const ErrorHistogram& h) {
  if (h.total == 0) throw InvalidInput("histogram_pdf_cdf: total must be > 0");
  if (!h.consistent()) throw InvalidInput("histogram_pdf_cdf: bins + dropped != total");
  HistogramDistribution d;
  const double total = static_cast<double>(h.total);
  const double received = static_cast<double>(h.received());
  double acc = 0;
  for (const auto& [k, v] : h.bins) {
    if (received > 0) d.pdf[k] = static_cast<double>(v) / received;
    acc += static_cast<double>(v);
    d.cdf[k] = acc / total;
  }
  d.reliability = 1.0 - static_cast<double>(h.dropped) / total;
  return d;
}

struct Interval {
  double lo = 0;
  double hi = 0;
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::uint64_t k, std::uint64_t n, double z = 1.959963984540054) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1 + z2 / nn;
  const double centre = (p + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / denom;
  // exact ends at k = 0 and k = n; the formula leaves rounding crumbs there
  return {k == 0 ? 0.0 : std::max(0.0, centre - half), k == n ? 1.0 : std::min(1.0, centre + half)};
}

inline bool intervals_overlap(const Interval& a, const Interval& b) { return a.lo <= b.hi && b.lo <= a.hi; }

struct TestResult {
  double statistic = 0;
  double p_value = 1;  // one-sided, for the alternative "second > first"
};

/// Pooled two-proportion z test of H1: k2/n2 > k1/n1.
inline TestResult two_proportion_test(std::uint64_t k1, std::uint64_t n1, std::uint64_t k2, std::uint64_t n2) {
  detail::require(n1 > 0 && n2 > 0, "two_proportion_test: empty sample");
  const double p1 = static_cast<double>(k1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(k2) / static_cast<double>(n2);
  const double pool = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
  const double se = std::sqrt(pool * (1 - pool) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  if (se == 0) return {0.0, p2 > p1 ? 0.0 : 1.0};
  const double z = (p2 - p1) / se;
  return {z, boost::math::cdf(boost::math::complement(boost::math::normal_distribution<>(), z))};
}

struct SampleSummary {
  double mean = 0;
  double variance = 0;  // unbiased
  std::uint64_t n = 0;
};

/// Welch's unequal-variance t test of H1: mean(b) > mean(a).
inline TestResult welch_test(const SampleSummary& a, const SampleSummary& b) {
  detail::require(a.n >= 2 && b.n >= 2, "welch_test: need at least two observations per sample");
  const double va = a.variance / static_cast<double>(a.n);
  const double vb = b.variance / static_cast<double>(b.n);
  const double se2 = va + vb;
  if (se2 == 0) return {0.0, b.mean > a.mean ? 0.0 : 1.0};
  const double t = (b.mean - a.mean) / std::sqrt(se2);
  const double df = se2 * se2 /
                    (va * va / static_cast<double>(a.n - 1) + vb * vb / static_cast<double>(b.n - 1));
  return {t, boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<>(df), t))};
}

inline SampleSummary summarize(const ErrorHistogram& h) {
  return {h.mean_substitutions(), h.variance_substitutions(), h.received()};
}

}  // namespace vlcsim

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "vlcsim/error.hpp"
#include "vlcsim/rng.hpp"
#include "vlcsim/uart.hpp"

namespace vlcsim {

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

/// Geometry, optics and noise of one optical link. Angles in degrees,
/// lengths in metres, areas in square metres, powers in watts.
struct ChannelParams {
  double area_rx = 1e-6;         // photodiode effective collection area
  double half_angle = 60.0;      // transmitter half-power semi-angle
  double theta = 0.0;            // angle of irradiance
  double psi = 0.0;              // angle of incidence
  double psi_c = 60.0;           // receiver field of view
  double d = 0.15;               // direct path length
  double d1 = 0.2;               // transmitter to reflector
  double d2 = 0.2;               // reflector to receiver
  double alpha = 30.0;           // irradiance angle w.r.t. reflector normal
  double beta = 30.0;            // incidence angle w.r.t. reflector normal
  double area_reflector = 1e-4;  // reflecting patch area
  double rho = 0.5;              // reflection coefficient
  double tx_power = 1.0;
  double responsivity_gain = 1.0;  // optical watts to slicer volts, lumped
  double noise_power = 0.0;        // variance of the additive noise

  void validate() const {
    using detail::require;
    require(area_rx >= 0 && area_reflector >= 0, "areas must be >= 0");
    require(d >= 0 && d1 >= 0 && d2 >= 0, "distances must be >= 0");
    require(tx_power >= 0 && noise_power >= 0, "powers must be >= 0");
    require(responsivity_gain >= 0, "responsivity_gain must be >= 0");
    require(rho >= 0 && rho <= 1, "rho must lie in [0, 1]");
    require(half_angle > 0 && half_angle < 90, "half_angle must lie in (0, 90) degrees");
  }
};

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 1.0;

  std::size_t size() const { return samples.size(); }
};

/// Receiver analogue chain ahead of the UART: transimpedance stage modelled
/// as a single pole, then a comparator.
///
/// `rise_bandwidth` lets rising and falling edges settle with different
/// corners (0 means symmetric at `tia_bandwidth`); a slower rise is what
/// shortens high pulses and pulls the positive duty cycle down at high baud.
struct RxFrontEnd {
  double tia_bandwidth = 3e6;
  double rise_bandwidth = 0.0;
  double comparator_ref = 0.5;
  double hysteresis = 0.0;

  double rise_corner() const { return rise_bandwidth > 0 ? rise_bandwidth : tia_bandwidth; }

  void validate() const {
    detail::require(tia_bandwidth > 0, "tia_bandwidth must be > 0");
    detail::require(rise_bandwidth >= 0, "rise_bandwidth must be >= 0");
    detail::require(hysteresis >= 0, "hysteresis must be >= 0");
    detail::require(std::isfinite(comparator_ref), "comparator_ref must be finite");
  }
};

inline double lambertian_order(double half_angle_deg) {
  detail::require(half_angle_deg > 0 && half_angle_deg < 90, "half angle must lie in (0, 90) degrees");
  return -std::numbers::ln2 / std::log(std::cos(deg2rad(half_angle_deg)));
}

/// Direct-path DC gain; zero outside the receiver field of view.
inline double h_los(const ChannelParams& p) {
  p.validate();
  detail::require(p.d > 0, "h_los: distance must be > 0");
  if (p.psi < 0 || p.psi > p.psi_c) return 0.0;
  const double m = lambertian_order(p.half_angle);
  return p.area_rx * (m + 1) / (2 * std::numbers::pi * p.d * p.d) * std::pow(std::cos(deg2rad(p.theta)), m) *
         std::cos(deg2rad(p.psi));
}

/// First-order reflection gain through a patch of area `area_reflector`.
inline double h_nlos(const ChannelParams& p) {
  p.validate();
  detail::require(p.d1 > 0 && p.d2 > 0, "h_nlos: d1 and d2 must be > 0");
  const double m = lambertian_order(p.half_angle);
  const double pd = std::numbers::pi * p.d1 * p.d2;
  return p.area_rx * (m + 1) / (2 * pd * pd) * std::pow(std::cos(deg2rad(p.theta)), m) *
         std::cos(deg2rad(p.alpha)) * std::cos(deg2rad(p.beta)) * std::cos(deg2rad(p.psi)) * p.area_reflector *
         p.rho;
}

/// Largest transmitter-receiver spacing in an enclosure of width `w` for
/// which no first-order reflection reaches the receiver.
inline double max_los_distance(double w, double alpha_plus_beta_deg, double theta_max_deg) {
  detail::require(w >= 0, "width must be >= 0");
  detail::require(theta_max_deg > 0 && theta_max_deg <= 90, "theta_max must lie in (0, 90] degrees");
  const double s = std::sin(deg2rad(theta_max_deg));
  return (w / 2) * std::sin(deg2rad(alpha_plus_beta_deg)) / (s * s);
}

// Sample index at which bit `b` begins; computed per bit so spans never drift.
inline std::uint64_t bit_boundary(std::uint64_t b, double samples_per_bit) {
  return static_cast<std::uint64_t>(std::llround(static_cast<long double>(b) * samples_per_bit));
}

inline Waveform modulate_ook(const LineBits& bits, double baud, double sample_rate, double v_on = 1.0,
                             double v_off = 0.0) {
  detail::require(baud > 0 && sample_rate > 0, "baud and sample_rate must be > 0");
  detail::require(sample_rate >= 4 * baud, "sample_rate must be at least 4 x baud");
  const double spb = sample_rate / baud;
  Waveform w;
  w.sample_rate = sample_rate;
  const std::size_t n = bits.bits.size();
  w.samples.reserve(bit_boundary(n, spb));
  for (std::size_t b = 0; b < n; ++b) {
    const auto len = bit_boundary(b + 1, spb) - bit_boundary(b, spb);
    w.samples.insert(w.samples.end(), len, bits.bits[b] ? v_on : v_off);
  }
  return w;
}

inline void add_awgn(Waveform& w, double sigma, std::uint64_t seed) {
  if (sigma <= 0) return;
  Rng rng(seed);
  for (auto& s : w.samples) s += sigma * rng.gaussian();
}

// Volts at the slicer per unit of transmitter drive.
inline double channel_gain(const ChannelParams& p, bool include_nlos) {
  double h = h_los(p);
  if (include_nlos) h += h_nlos(p);
  return p.tx_power * h * p.responsivity_gain;
}

/// Scales a unit-drive waveform by the optical path (direct plus, optionally,
/// the first reflection) and adds white Gaussian noise of variance
/// `noise_power * responsivity_gain^2` drawn from `rng_seed`.
inline Waveform apply_channel(const Waveform& w, const ChannelParams& p, bool include_nlos, std::uint64_t rng_seed) {
  const double g = channel_gain(p, include_nlos);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) out.samples[i] = w.samples[i] * g;
  add_awgn(out, std::sqrt(p.noise_power) * p.responsivity_gain, rng_seed);
  return out;
}

// Discrete single-pole section; coefficient per sample for a corner `f` at `fs`.
inline double pole_coefficient(double corner_hz, double sample_rate) {
  return -std::expm1(-2 * std::numbers::pi * corner_hz / sample_rate);
}

/// Streaming first-order low-pass with separate rise/fall coefficients.
/// The first input initialises the state, so a constant input passes unchanged.
class EdgeLowpass {
 public:
  EdgeLowpass() = default;
  EdgeLowpass(const RxFrontEnd& fe, double sample_rate)
      : rise_(pole_coefficient(fe.rise_corner(), sample_rate)), fall_(pole_coefficient(fe.tia_bandwidth, sample_rate)) {}

  double operator()(double x) {
    if (!primed_) {
      y_ = x;
      primed_ = true;
      return y_;
    }
    y_ += (x > y_ ? rise_ : fall_) * (x - y_);
    return y_;
  }

  double state() const { return y_; }
  bool primed() const { return primed_; }
  void set_state(double y) {
    y_ = y;
    primed_ = true;
  }
  double rise_coefficient() const { return rise_; }
  double fall_coefficient() const { return fall_; }

 private:
  double rise_ = 1.0;
  double fall_ = 1.0;
  double y_ = 0.0;
  bool primed_ = false;
};

inline Waveform tia_lowpass(const Waveform& w, const RxFrontEnd& fe) {
  fe.validate();
  detail::require(w.sample_rate > 0, "sample_rate must be > 0");
  EdgeLowpass f(fe, w.sample_rate);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.reserve(w.samples.size());
  for (double x : w.samples) out.samples.push_back(f(x));
  return out;
}

/// Threshold with an optional hysteresis band of total width `hysteresis`
/// centred on the reference.
class Comparator {
 public:
  Comparator() = default;
  explicit Comparator(const RxFrontEnd& fe) : ref_(fe.comparator_ref), half_band_(fe.hysteresis / 2) {}

  bool operator()(double v) {
    if (half_band_ <= 0) return v > ref_;
    if (!primed_) {
      state_ = v > ref_;
      primed_ = true;
    }
    if (v > ref_ + half_band_) state_ = true;
    else if (v < ref_ - half_band_) state_ = false;
    return state_;
  }

 private:
  double ref_ = 0.5;
  double half_band_ = 0.0;
  bool state_ = false;
  bool primed_ = false;
};

inline std::vector<std::uint8_t> comparator_slice(const Waveform& w, const RxFrontEnd& fe) {
  fe.validate();
  Comparator cmp(fe);
  std::vector<std::uint8_t> out;
  out.reserve(w.samples.size());
  for (double v : w.samples) out.push_back(cmp(v) ? 1 : 0);
  return out;
}

struct DutyCycle {
  double positive_pct = 0;
  double negative_pct = 0;
};

/// Share of samples at logic high / low, ignoring `lead_skip` and `trail_skip`
/// samples of idle padding at either end.
inline DutyCycle measure_duty(std::span<const std::uint8_t> samples, std::size_t lead_skip = 0,
                              std::size_t trail_skip = 0) {
  detail::require(lead_skip + trail_skip < samples.size(), "measure_duty: no samples to measure");
  const auto body = samples.subspan(lead_skip, samples.size() - lead_skip - trail_skip);
  std::size_t ones = 0;
  for (auto s : body) ones += s != 0;
  const double pos = 100.0 * static_cast<double>(ones) / static_cast<double>(body.size());
  return {pos, 100.0 - pos};
}

struct SnrEstimate {
  double p_noise = 0;
  double p_signal_noise = 0;
  double p_signal = 0;
  double linear = 0;
  double db = 0;
  bool noise_free = false;  // P_N <= 0: the ratio is unbounded
};

/// SNR from the four levels read off a received square wave: the low-state
/// floor/peak (v_min0 / v_min1) and high-state floor/peak (v_max0 / v_max1).
/// Each state is a DC level plus a sinusoid-like ripple; the 1/2 in the
/// final ratio accounts for equiprobable ones and zeros.
inline SnrEstimate estimate_snr(double v_min0, double v_max0, double v_min1, double v_max1) {
  detail::require(std::isfinite(v_min0) && std::isfinite(v_max0) && std::isfinite(v_min1) && std::isfinite(v_max1),
                  "estimate_snr: voltages must be finite");
  SnrEstimate e;
  const double rn = (v_min1 - v_min0) / 2;
  const double rs = (v_max1 - v_max0) / 2;
  e.p_noise = v_min0 * v_min0 + rn * rn / 2;
  e.p_signal_noise = v_max0 * v_max0 + rs * rs / 2;
  e.p_signal = e.p_signal_noise - e.p_noise;
  if (e.p_signal < 0) throw InvalidMeasurement("estimate_snr: signal power is negative");
  if (e.p_noise <= 0) {
    e.noise_free = true;
    e.linear = std::numeric_limits<double>::infinity();
    e.db = std::numeric_limits<double>::infinity();
    return e;
  }
  e.linear = e.p_signal / (2 * e.p_noise);
  e.db = 10 * std::log10(e.linear);
  return e;
}

/// Link-budget SNR at normal incidence and irradiance for spacing `d`:
/// (tx_power * H_LOS(d) * responsivity_gain)^2 / noise_power.
inline double snr_at_distance(double d, const ChannelParams& p) {
  ChannelParams q = p;
  q.d = d;
  q.theta = 0;
  q.psi = 0;
  const double v = q.tx_power * h_los(q) * q.responsivity_gain;
  if (q.noise_power == 0) return v > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  return v * v / q.noise_power;
}

/// Spacing at which the link-budget SNR equals `target_snr`, by bisection.
/// Targets below the SNR at `max_distance` return `max_distance`.
inline double snr_to_distance(double target_snr, const ChannelParams& p, double max_distance = 100.0,
                              double tolerance = 1e-6) {
  detail::require(target_snr > 0, "target SNR must be > 0");
  detail::require(max_distance > 0, "max_distance must be > 0");
  double lo = 1e-6;
  double hi = max_distance;
  if (snr_at_distance(hi, p) >= target_snr) return hi;
  if (snr_at_distance(lo, p) < target_snr) throw OutOfRange("target SNR is not reachable at any distance");
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (snr_at_distance(mid, p) >= target_snr) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace vlcsim

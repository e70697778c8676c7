#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vlcsim/analytics.hpp"
#include "vlcsim/channel.hpp"
#include "vlcsim/engine.hpp"
#include "vlcsim/error.hpp"
#include "vlcsim/framing.hpp"
#include "vlcsim/rng.hpp"
#include "vlcsim/uart.hpp"

namespace vlcsim {

struct StopRules {
  std::uint64_t max_sim_frames = 50000;
  std::uint64_t min_error_packets = 100;
  std::uint64_t clean_run_frames = 5000;
};

enum class EngineChoice { automatic, event, waveform };

/// One sweep description. Either `snrs_db` or `distances_m` drives the noise
/// axis. Lengths in `frame_lengths` count the frame ID plus payload.
struct SweepConfig {
  std::vector<double> bauds{10e3, 50e3, 100e3, 250e3, 500e3, 750e3, 1e6};
  std::vector<double> snrs_db{1.32, 6, 10, 13.88, 18, 24};
  std::vector<double> distances_m;
  std::vector<std::int64_t> frame_lengths{1003, 5003, 10003};
  std::vector<std::int64_t> sync_lengths{1, 5, 10};

  UartConfig uart{};
  std::int64_t skew_ppm = 0;
  FrameSpec frame{};  // sync_len / payload_len are set per point
  ChannelParams channel{};
  bool include_nlos = false;
  RxFrontEnd front_end{};
  std::optional<double> comparator_ref;  // volts; swing midpoint when unset
  double max_sample_rate = 0;            // 0 disables the limit

  StopRules stop{};
  std::uint64_t seed = 1;
  int workers = 1;
  std::string output;
  std::string format = "csv";
  EngineChoice engine = EngineChoice::automatic;
  bool timing = false;

  bool distance_mode() const { return !distances_m.empty(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (bauds.empty()) fail("bauds must not be empty");
    if (frame_lengths.empty()) fail("frame_lengths must not be empty");
    if (sync_lengths.empty()) fail("sync_lengths must not be empty");
    if (snrs_db.empty() == distances_m.empty()) fail("exactly one of snrs_db and distances_m must be set");
    for (double b : bauds)
      if (!(b > 0)) fail("bauds must be > 0");
    for (double d : distances_m)
      if (!(d > 0)) fail("distances_m must be > 0");
    for (auto f : frame_lengths)
      if (f <= frame.id_len) fail("frame_lengths must exceed frame.id_len");
    for (auto s : sync_lengths)
      if (s < 1) fail("sync_lengths must be >= 1");
    if (stop.max_sim_frames == 0 || stop.min_error_packets == 0 || stop.clean_run_frames == 0)
      fail("stop rules must be positive");
    if (workers < 1) fail("workers must be >= 1");
    if (format != "csv" && format != "json") fail("format must be csv or json");
    try {
      uart.validate();
      front_end.validate();
      channel.validate();
      FrameSpec f = frame;
      f.validate();
    } catch (const InvalidInput& e) {
      fail(e.what());
    }
  }
};

struct SweepPoint {
  std::size_t index = 0;
  double baud = 0;
  double snr_db = 0;                  // given, or derived from distance
  std::optional<double> distance_m;  // set in distance mode
  std::int64_t frame_len = 0;
  std::int64_t sync_len = 0;
};

inline std::vector<SweepPoint> enumerate_points(const SweepConfig& cfg) {
  std::vector<SweepPoint> pts;
  const auto& axis = cfg.distance_mode() ? cfg.distances_m : cfg.snrs_db;
  for (double b : cfg.bauds)
    for (double a : axis)
      for (auto f : cfg.frame_lengths)
        for (auto s : cfg.sync_lengths) {
          SweepPoint p;
          p.index = pts.size();
          p.baud = b;
          if (cfg.distance_mode()) p.distance_m = a;
          else p.snr_db = a;
          p.frame_len = f;
          p.sync_len = s;
          pts.push_back(p);
        }
  return pts;
}

// Depends only on the base seed and the point's own coordinates, so dropping
// a point leaves every other point's stream unchanged.
inline std::uint64_t point_seed(std::uint64_t base, const SweepPoint& p) {
  std::uint64_t h = mix64(base, std::bit_cast<std::uint64_t>(p.baud));
  h = mix64(h, p.distance_m ? std::bit_cast<std::uint64_t>(*p.distance_m) ^ 0xD157ULL
                            : std::bit_cast<std::uint64_t>(p.snr_db));
  h = mix64(h, static_cast<std::uint64_t>(p.frame_len));
  return mix64(h, static_cast<std::uint64_t>(p.sync_len));
}

inline constexpr std::size_t kHistogramBins = 51;  // 0..49 exact, last bin is 50 or more

struct PointResult {
  SweepPoint point;
  std::string status = "ok";  // "ok" or "skipped: <reason>"
  std::string stop_reason;    // errors | clean_run | max_frames
  std::string engine;
  std::uint64_t frames_sent = 0;
  std::uint64_t clean = 0;
  std::uint64_t substituted = 0;
  std::uint64_t dropped = 0;
  double p_bse = 0;
  double p_bse_ci_lo = 0;
  double p_bse_ci_hi = 0;
  double reliability = 0;
  std::optional<double> measured_ser;
  double analytic_ber = 0;
  double analytic_ser = 0;
  double analytic_pfail = 0;
  double analytic_perr = 0;
  ErrorHistogram histogram;
  double duty_pos_pct = 0;
  std::uint64_t seed = 0;
  std::optional<double> wall_time_s;

  bool ok() const { return status == "ok"; }

  std::array<std::uint64_t, kHistogramBins> capped_bins() const {
    std::array<std::uint64_t, kHistogramBins> out{};
    for (const auto& [k, v] : histogram.bins) out[std::min<std::size_t>(static_cast<std::size_t>(k), kHistogramBins - 1)] += v;
    return out;
  }

  bool operator==(const PointResult& o) const {
    return point.index == o.point.index && point.baud == o.point.baud && point.snr_db == o.point.snr_db &&
           point.distance_m == o.point.distance_m && point.frame_len == o.point.frame_len &&
           point.sync_len == o.point.sync_len && status == o.status && stop_reason == o.stop_reason &&
           engine == o.engine && frames_sent == o.frames_sent && clean == o.clean && substituted == o.substituted &&
           dropped == o.dropped && p_bse == o.p_bse && p_bse_ci_lo == o.p_bse_ci_lo && p_bse_ci_hi == o.p_bse_ci_hi &&
           reliability == o.reliability && measured_ser == o.measured_ser && analytic_ber == o.analytic_ber &&
           analytic_ser == o.analytic_ser && analytic_pfail == o.analytic_pfail && analytic_perr == o.analytic_perr &&
           histogram == o.histogram && duty_pos_pct == o.duty_pos_pct && seed == o.seed &&
           wall_time_s == o.wall_time_s;
  }
};

struct SweepReport {
  std::vector<PointResult> points;
};

/// Electrical operating point of one sweep point: levels, noise and threshold.
struct OperatingPoint {
  double v_on = 1.0;
  double v_off = 0.0;
  double sigma = 0.0;
  double snr = 0.0;
  double ref = 0.5;
};

// SNR here is the decision SNR (swing/2)^2 / sigma^2, which is what
// Q(sqrt(SNR)) describes for a midpoint slicer.
inline OperatingPoint operating_point(const SweepConfig& cfg, const SweepPoint& p) {
  OperatingPoint op;
  if (p.distance_m) {
    ChannelParams ch = cfg.channel;
    ch.d = *p.distance_m;
    op.v_on = channel_gain(ch, cfg.include_nlos);
    op.v_off = 0;
    op.snr = snr_at_distance(*p.distance_m, cfg.channel);
  } else {
    op.snr = db_to_linear(p.snr_db);
  }
  const double half = (op.v_on - op.v_off) / 2;
  op.sigma = std::isinf(op.snr) ? 0.0 : half / std::sqrt(op.snr);
  op.ref = cfg.comparator_ref.value_or((op.v_on + op.v_off) / 2);
  return op;
}

inline LinkSetup link_setup(const SweepConfig& cfg, const SweepPoint& p, const OperatingPoint& op) {
  LinkSetup s;
  s.uart = cfg.uart;
  s.uart.baud = p.baud;
  s.frame = cfg.frame;
  s.frame.sync_len = p.sync_len;
  s.frame.payload_len = p.frame_len - cfg.frame.id_len;
  s.front_end = cfg.front_end;
  s.front_end.comparator_ref = op.ref;
  s.v_on = op.v_on;
  s.v_off = op.v_off;
  s.sigma = op.sigma;
  s.skew_ppm = cfg.skew_ppm;
  s.lead_idle_bits = static_cast<std::size_t>(cfg.uart.bits_per_char());
  s.trail_idle_bits = 2 * static_cast<std::size_t>(cfg.uart.bits_per_char());
  return s;
}

/// Positive duty of the noise-free comparator output over one steady-state
/// frame (the second of two back-to-back frames).
inline double clean_frame_duty(const LinkSetup& s) {
  const auto payload = make_payload(s.frame);
  LineBits line;
  line.bits.assign(s.lead_idle_bits, 1);
  for (std::uint64_t k = 0; k < 2; ++k)
    for (auto b : build_frame(s.frame, payload, k)) append_char_bits(line.bits, b, s.uart);
  const std::size_t frame_bits = (line.bits.size() - s.lead_idle_bits) / 2;
  const auto w = tia_lowpass(modulate_ook(line, s.uart.baud, s.sample_rate(), s.v_on, s.v_off), s.front_end);
  const auto bits = comparator_slice(w, s.front_end);
  const std::size_t spb = static_cast<std::size_t>(s.uart.oversample);
  return measure_duty(bits, (s.lead_idle_bits + frame_bits) * spb, 0).positive_pct;
}

namespace detail {

struct StopTracker {
  const StopRules& rules;
  std::uint64_t cursor = 0;
  std::uint64_t substituted = 0;
  std::uint64_t dropped = 0;
  std::uint64_t clean_run = 0;
  std::uint64_t stop_at = 0;
  std::string reason;

  // Walks new results in transmit order; true once a rule fires.
  bool consume(const std::vector<FrameResult>& res) {
    for (; cursor < res.size() && stop_at == 0; ++cursor) {
      const auto& r = res[cursor];
      if (r.index >= rules.max_sim_frames) {
        stop_at = rules.max_sim_frames;
        reason = "max_frames";
        break;
      }
      switch (r.verdict) {
        case Verdict::clean: ++clean_run; break;
        case Verdict::substituted: ++substituted; clean_run = 0; break;
        case Verdict::dropped: ++dropped; clean_run = 0; break;
      }
      if (substituted >= rules.min_error_packets || dropped >= rules.min_error_packets) {
        stop_at = r.index + 1;
        reason = "errors";
      } else if (clean_run >= rules.clean_run_frames) {
        stop_at = r.index + 1;
        reason = "clean_run";
      } else if (r.index + 1 >= rules.max_sim_frames) {
        stop_at = rules.max_sim_frames;
        reason = "max_frames";
      }
    }
    return stop_at != 0;
  }
};

}  // namespace detail

struct FrameRun {
  FrameTally tally;
  std::string stop_reason;
};

/// Streams frames through `eng` into a detector until a stop rule fires.
/// Only frames before the stopping frame (inclusive) are accounted.
template <class Engine>
FrameRun run_frames(Engine& eng, const StopRules& rules) {
  const auto& s = eng.setup();
  FrameDetector det(s.frame, rules.max_sim_frames + 1);
  detail::StopTracker stop{rules, 0, 0, 0, 0, 0, {}};
  const std::uint64_t last = rules.max_sim_frames + 1;  // one extra frame closes the final one
  const std::uint64_t chunk = 4;
  for (;;) {
    const bool ending = eng.frames_sent() >= last;
    if (ending) eng.finish();
    else eng.advance(std::min(last, eng.frames_sent() + chunk));
    det.push(eng.output());
    eng.output().clear();
    if (ending) {
      det.finish(rules.max_sim_frames);
    } else {
      const std::uint64_t cur = eng.receiver_frame();
      det.set_window(cur > 0 ? cur - 1 : 0, cur + 1);
    }
    if (stop.consume(det.results()) || ending) break;
  }
  if (stop.stop_at == 0) {
    stop.stop_at = rules.max_sim_frames;
    stop.reason = "max_frames";
  }
  FrameRun out;
  out.tally = account_frames(det.results(), stop.stop_at);
  out.stop_reason = stop.reason;
  return out;
}

inline PointResult run_point(const SweepConfig& cfg, const SweepPoint& p) {
  const auto t0 = std::chrono::steady_clock::now();
  PointResult r;
  r.point = p;
  r.seed = point_seed(cfg.seed, p);
  const double fs = p.baud * cfg.uart.oversample;
  if (cfg.max_sample_rate > 0 && fs > cfg.max_sample_rate) {
    r.status = "skipped: sample rate exceeds max_sample_rate";
    return r;
  }
  OperatingPoint op;
  try {
    op = operating_point(cfg, p);
  } catch (const Error& e) {
    r.status = std::string("skipped: ") + e.what();
    return r;
  }
  if (p.distance_m) r.point.snr_db = linear_to_db(op.snr);
  if (!(op.v_on > op.v_off)) {
    r.status = "skipped: zero channel gain";
    return r;
  }
  const LinkSetup setup = link_setup(cfg, p, op);

  r.analytic_ber = ber_ook(op.snr);
  r.analytic_ser = ser_ttl(op.snr);
  SyncProbabilityInputs in{p.sync_len, p.frame_len, r.analytic_ser, 256};
  r.analytic_pfail = p_fail(in);
  r.analytic_perr = p_err(in);
  r.duty_pos_pct = clean_frame_duty(setup);

  FrameRun run;
  const bool want_event = cfg.engine != EngineChoice::waveform && setup.front_end.hysteresis == 0;
  if (cfg.engine == EngineChoice::event && !want_event)
    throw ConfigError("engine=event needs front_end.hysteresis = 0");
  bool done = false;
  if (want_event) {
    try {
      EventEngine eng(setup, r.seed);
      run = run_frames(eng, cfg.stop);
      r.engine = "event";
      done = true;
    } catch (const InvalidInput&) {
      throw;
    } catch (const Error&) {
      if (cfg.engine == EngineChoice::event) throw;
    }
  }
  if (!done) {
    WaveformEngine eng(setup, r.seed);
    run = run_frames(eng, cfg.stop);
    r.engine = "waveform";
  }

  const auto& t = run.tally;
  if (!t.balanced()) throw Error("frame accounting does not balance");
  r.stop_reason = run.stop_reason;
  r.frames_sent = t.frames_sent;
  r.clean = t.clean;
  r.substituted = t.substituted;
  r.dropped = t.dropped;
  r.histogram = t.histogram;
  r.p_bse = static_cast<double>(t.dropped) / static_cast<double>(t.frames_sent);
  const auto ci = wilson_interval(t.dropped, t.frames_sent);
  r.p_bse_ci_lo = ci.lo;
  r.p_bse_ci_hi = ci.hi;
  r.reliability = 1.0 - r.p_bse;
  if (t.histogram.received() > 0)
    r.measured_ser = t.histogram.mean_substitutions() / static_cast<double>(p.frame_len);
  if (cfg.timing)
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Runs every point on `cfg.workers` threads. Output order is point order,
/// whatever order the workers finish in.
inline SweepReport run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  const auto pts = enumerate_points(cfg);
  SweepReport rep;
  rep.points.resize(pts.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pts.size() || failed) return;
      try {
        rep.points[i] = run_point(cfg, pts[i]);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
        return;
      }
    }
  };
  const int n = std::min<int>(cfg.workers, static_cast<int>(std::max<std::size_t>(pts.size(), 1)));
  std::vector<std::thread> threads;
  for (int w = 1; w < n; ++w) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return rep;
}

// ---- report emission ----

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + "\"";
}

}  // namespace detail

inline std::string csv_header() {
  std::string h =
      "baud_hz,snr_db,distance_m,frame_len,sync_len,frames_sent,dropped,p_bse,reliability,measured_ser,"
      "analytic_ber,analytic_ser,analytic_pfail,analytic_perr";
  for (std::size_t b = 0; b < kHistogramBins; ++b) h += ",hist_b" + std::to_string(b);
  h += ",duty_pos_pct,seed,p_bse_ci_lo,p_bse_ci_hi,status";
  return h;
}

inline std::string to_csv(const SweepReport& rep) {
  using detail::fmt_double;
  std::string out = csv_header() + "\n";
  for (const auto& r : rep.points) {
    const auto& p = r.point;
    std::vector<std::string> f;
    f.push_back(fmt_double(p.baud));
    f.push_back(fmt_double(p.snr_db));
    f.push_back(p.distance_m ? fmt_double(*p.distance_m) : "");
    f.push_back(std::to_string(p.frame_len));
    f.push_back(std::to_string(p.sync_len));
    if (r.ok()) {
      f.push_back(std::to_string(r.frames_sent));
      f.push_back(std::to_string(r.dropped));
      f.push_back(fmt_double(r.p_bse));
      f.push_back(fmt_double(r.reliability));
      f.push_back(r.measured_ser ? fmt_double(*r.measured_ser) : "");
      f.push_back(fmt_double(r.analytic_ber));
      f.push_back(fmt_double(r.analytic_ser));
      f.push_back(fmt_double(r.analytic_pfail));
      f.push_back(fmt_double(r.analytic_perr));
      for (auto v : r.capped_bins()) f.push_back(std::to_string(v));
      f.push_back(fmt_double(r.duty_pos_pct));
    } else {
      f.insert(f.end(), 9 + kHistogramBins + 1, "");
    }
    f.push_back(std::to_string(r.seed));
    if (r.ok()) {
      f.push_back(fmt_double(r.p_bse_ci_lo));
      f.push_back(fmt_double(r.p_bse_ci_hi));
    } else {
      f.insert(f.end(), 2, "");
    }
    f.push_back(detail::csv_escape(r.status));
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i) out += ',';
      out += f[i];
    }
    out += '\n';
  }
  return out;
}

using Json = nlohmann::ordered_json;

namespace detail {

inline Json num_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline double num_from(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

}  // namespace detail

inline Json to_json(const PointResult& r) {
  using detail::num_or_null;
  Json j;
  const auto& p = r.point;
  j["index"] = p.index;
  j["baud_hz"] = p.baud;
  j["snr_db"] = num_or_null(p.snr_db);
  j["distance_m"] = p.distance_m ? Json(*p.distance_m) : Json(nullptr);
  j["frame_len"] = p.frame_len;
  j["sync_len"] = p.sync_len;
  j["status"] = r.status;
  j["stop_reason"] = r.stop_reason;
  j["engine"] = r.engine;
  j["frames_sent"] = r.frames_sent;
  j["clean"] = r.clean;
  j["substituted"] = r.substituted;
  j["dropped"] = r.dropped;
  j["p_bse"] = r.p_bse;
  j["p_bse_ci_lo"] = r.p_bse_ci_lo;
  j["p_bse_ci_hi"] = r.p_bse_ci_hi;
  j["reliability"] = r.reliability;
  j["measured_ser"] = r.measured_ser ? Json(*r.measured_ser) : Json(nullptr);
  j["analytic_ber"] = r.analytic_ber;
  j["analytic_ser"] = r.analytic_ser;
  j["analytic_pfail"] = r.analytic_pfail;
  j["analytic_perr"] = r.analytic_perr;
  Json bins = Json::object();
  for (const auto& [k, v] : r.histogram.bins) bins[std::to_string(k)] = v;
  j["histogram"] = {{"bins", bins}, {"dropped", r.histogram.dropped}, {"total", r.histogram.total}};
  const auto capped = r.capped_bins();
  j["hist"] = std::vector<std::uint64_t>(capped.begin(), capped.end());
  j["duty_pos_pct"] = r.duty_pos_pct;
  j["seed"] = r.seed;
  if (r.wall_time_s) j["wall_time_s"] = *r.wall_time_s;
  return j;
}

inline std::string to_json_text(const SweepReport& rep) {
  Json j;
  j["points"] = Json::array();
  for (const auto& r : rep.points) j["points"].push_back(to_json(r));
  return j.dump(2) + "\n";
}

inline PointResult point_from_json(const Json& j) {
  PointResult r;
  auto& p = r.point;
  p.index = j.at("index").get<std::size_t>();
  p.baud = j.at("baud_hz").get<double>();
  p.snr_db = detail::num_from(j.at("snr_db"));
  if (!j.at("distance_m").is_null()) p.distance_m = j.at("distance_m").get<double>();
  p.frame_len = j.at("frame_len").get<std::int64_t>();
  p.sync_len = j.at("sync_len").get<std::int64_t>();
  r.status = j.at("status").get<std::string>();
  r.stop_reason = j.at("stop_reason").get<std::string>();
  r.engine = j.at("engine").get<std::string>();
  r.frames_sent = j.at("frames_sent").get<std::uint64_t>();
  r.clean = j.at("clean").get<std::uint64_t>();
  r.substituted = j.at("substituted").get<std::uint64_t>();
  r.dropped = j.at("dropped").get<std::uint64_t>();
  r.p_bse = j.at("p_bse").get<double>();
  r.p_bse_ci_lo = j.at("p_bse_ci_lo").get<double>();
  r.p_bse_ci_hi = j.at("p_bse_ci_hi").get<double>();
  r.reliability = j.at("reliability").get<double>();
  if (!j.at("measured_ser").is_null()) r.measured_ser = j.at("measured_ser").get<double>();
  r.analytic_ber = j.at("analytic_ber").get<double>();
  r.analytic_ser = j.at("analytic_ser").get<double>();
  r.analytic_pfail = j.at("analytic_pfail").get<double>();
  r.analytic_perr = j.at("analytic_perr").get<double>();
  const auto& h = j.at("histogram");
  for (const auto& [k, v] : h.at("bins").items()) r.histogram.bins[std::stoll(k)] = v.get<std::uint64_t>();
  r.histogram.dropped = h.at("dropped").get<std::uint64_t>();
  r.histogram.total = h.at("total").get<std::uint64_t>();
  r.duty_pos_pct = j.at("duty_pos_pct").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("wall_time_s")) r.wall_time_s = j.at("wall_time_s").get<double>();
  return r;
}

inline SweepReport report_from_json(const std::string& text) {
  SweepReport rep;
  try {
    const auto j = Json::parse(text);
    for (const auto& p : j.at("points")) rep.points.push_back(point_from_json(p));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
  return rep;
}

inline std::string emit_report(const SweepReport& rep, const std::string& format) {
  if (format == "csv") return to_csv(rep);
  if (format == "json") return to_json_text(rep);
  throw ConfigError("unknown report format '" + format + "'");
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  f << text;
  f.flush();
  if (!f) throw ConfigError("write to '" + path + "' failed");
}

// Fails early, before any simulation, if `path` cannot be written.
inline void probe_writable(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
}

// ---- config parsing ----

namespace detail {

inline std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double d = 0;
  const auto* b = v.data();
  const auto* e = v.data() + v.size();
  auto res = std::from_chars(b, e, d);
  if (res.ec != std::errc() || res.ptr != e) throw ConfigError(key + ": '" + v + "' is not a number");
  return d;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t d = 0;
  const auto* b = v.data();
  const auto* e = v.data() + v.size();
  auto res = std::from_chars(b, e, d);
  if (res.ec != std::errc() || res.ptr != e) throw ConfigError(key + ": '" + v + "' is not an integer");
  return d;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t d = 0;
  const auto* b = v.data();
  const auto* e = v.data() + v.size();
  auto res = std::from_chars(b, e, d);
  if (res.ec != std::errc() || res.ptr != e) throw ConfigError(key + ": '" + v + "' is not a nonnegative integer");
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

// A byte given as a single character or as a number.
inline std::uint8_t parse_byte(const std::string& key, const std::string& v) {
  if (v.size() == 1 && !std::isdigit(static_cast<unsigned char>(v[0]))) return static_cast<std::uint8_t>(v[0]);
  const auto n = parse_int(key, v);
  if (n < 0 || n > 255) throw ConfigError(key + ": byte out of range");
  return static_cast<std::uint8_t>(n);
}

}  // namespace detail

/// Parses the flat `key = value` format. `#` starts a comment; lists are
/// comma separated. Unknown keys are errors.
inline SweepConfig parse_config(const std::string& text) {
  using namespace detail;
  SweepConfig c;
  std::stringstream in(text);
  std::string raw;
  int lineno = 0;
  bool snr_set = false, dist_set = false;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      auto dlist = [&] {
        std::vector<double> o;
        for (const auto& s : split_list(val)) o.push_back(parse_double(key, s));
        return o;
      };
      auto ilist = [&] {
        std::vector<std::int64_t> o;
        for (const auto& s : split_list(val)) o.push_back(parse_int(key, s));
        return o;
      };
      auto D = [&] { return parse_double(key, val); };
      auto I = [&] { return parse_int(key, val); };
      auto U = [&] { return parse_uint(key, val); };

      if (key == "bauds") c.bauds = dlist();
      else if (key == "snrs_db") { c.snrs_db = dlist(); snr_set = true; }
      else if (key == "distances_m") { c.distances_m = dlist(); dist_set = true; }
      else if (key == "frame_lengths") c.frame_lengths = ilist();
      else if (key == "sync_lengths") c.sync_lengths = ilist();
      else if (key == "uart.data_bits") c.uart.data_bits = static_cast<int>(I());
      else if (key == "uart.parity") c.uart.parity = parse_parity(val);
      else if (key == "uart.stop_bits") c.uart.stop_bits = static_cast<int>(I());
      else if (key == "uart.oversample") c.uart.oversample = static_cast<int>(I());
      else if (key == "uart.skew_ppm") c.skew_ppm = I();
      else if (key == "frame.sync_symbol") c.frame.sync_symbol = parse_byte(key, val);
      else if (key == "frame.id_len") c.frame.id_len = I();
      else if (key == "frame.payload_seed") c.frame.payload_seed = U();
      else if (key == "frame.alphabet_lo") c.frame.alphabet_lo = parse_byte(key, val);
      else if (key == "frame.alphabet_hi") c.frame.alphabet_hi = parse_byte(key, val);
      else if (key == "channel.area_rx") c.channel.area_rx = D();
      else if (key == "channel.half_angle") c.channel.half_angle = D();
      else if (key == "channel.theta") c.channel.theta = D();
      else if (key == "channel.psi") c.channel.psi = D();
      else if (key == "channel.psi_c") c.channel.psi_c = D();
      else if (key == "channel.d1") c.channel.d1 = D();
      else if (key == "channel.d2") c.channel.d2 = D();
      else if (key == "channel.alpha") c.channel.alpha = D();
      else if (key == "channel.beta") c.channel.beta = D();
      else if (key == "channel.area_reflector") c.channel.area_reflector = D();
      else if (key == "channel.rho") c.channel.rho = D();
      else if (key == "channel.tx_power") c.channel.tx_power = D();
      else if (key == "channel.responsivity_gain") c.channel.responsivity_gain = D();
      else if (key == "channel.noise_power") c.channel.noise_power = D();
      else if (key == "channel.include_nlos") c.include_nlos = parse_bool(key, val);
      else if (key == "front_end.tia_bandwidth") c.front_end.tia_bandwidth = D();
      else if (key == "front_end.rise_bandwidth") c.front_end.rise_bandwidth = D();
      else if (key == "front_end.comparator_ref") c.comparator_ref = D();
      else if (key == "front_end.hysteresis") c.front_end.hysteresis = D();
      else if (key == "max_sample_rate") c.max_sample_rate = D();
      else if (key == "stop.max_sim_frames") c.stop.max_sim_frames = U();
      else if (key == "stop.min_error_packets") c.stop.min_error_packets = U();
      else if (key == "stop.clean_run_frames") c.stop.clean_run_frames = U();
      else if (key == "seed") c.seed = U();
      else if (key == "workers") c.workers = static_cast<int>(I());
      else if (key == "output") c.output = val;
      else if (key == "format") c.format = val;
      else if (key == "timing") c.timing = parse_bool(key, val);
      else if (key == "engine") {
        if (val == "auto") c.engine = EngineChoice::automatic;
        else if (val == "event") c.engine = EngineChoice::event;
        else if (val == "waveform") c.engine = EngineChoice::waveform;
        else throw ConfigError("engine: expected auto, event or waveform");
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const InvalidInput& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  // A distance list replaces the default SNR axis unless both were given.
  if (dist_set && !snr_set) c.snrs_db.clear();
  c.validate();
  return c;
}

inline SweepConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

// ---- comparator study ----

struct DutyPoint {
  double ref = 0;
  double positive_pct = 0;
};

struct DutyStudy {
  double wave_min = 0;
  double wave_max = 0;
  double midpoint = 0;
  std::vector<DutyPoint> sweep;  // ref decreasing from the midpoint
};

/// Sends `chars` random payload symbols (8N1) through the front end at unit
/// swing, adds noise for `snr_db`, and measures the comparator's positive duty
/// while the reference steps from the band-limited waveform's midpoint down
/// toward its minimum.
inline DutyStudy comparator_study(double baud, double snr_db, const RxFrontEnd& fe_in, int steps = 20,
                                  std::size_t chars = 2000, std::uint64_t seed = 7, int oversample = 16) {
  detail::require(steps >= 1, "steps must be >= 1");
  UartConfig u;
  u.baud = baud;
  u.oversample = oversample;
  FrameSpec spec;
  spec.payload_len = static_cast<std::int64_t>(chars);
  spec.payload_seed = seed;
  const auto payload = make_payload(spec);
  const std::size_t idle = 2 * static_cast<std::size_t>(u.bits_per_char());
  const auto line = uart_encode(payload, u, idle, idle);
  const double fs = baud * oversample;
  Waveform w = tia_lowpass(modulate_ook(line, baud, fs, 1.0, 0.0), fe_in);
  const std::size_t skip = idle * static_cast<std::size_t>(oversample);
  DutyStudy st;
  st.wave_min = *std::min_element(w.samples.begin() + static_cast<std::ptrdiff_t>(skip), w.samples.end() - static_cast<std::ptrdiff_t>(skip));
  st.wave_max = *std::max_element(w.samples.begin() + static_cast<std::ptrdiff_t>(skip), w.samples.end() - static_cast<std::ptrdiff_t>(skip));
  st.midpoint = 0.5 * (st.wave_min + st.wave_max);
  const double snr = db_to_linear(snr_db);
  if (std::isfinite(snr)) add_awgn(w, 0.5 / std::sqrt(snr), mix64(seed, 0x5EED));
  for (int i = 0; i < steps; ++i) {
    RxFrontEnd fe = fe_in;
    fe.comparator_ref = st.midpoint - (st.midpoint - st.wave_min) * static_cast<double>(i) / steps;
    const auto bits = comparator_slice(w, fe);
    st.sweep.push_back({fe.comparator_ref, measure_duty(bits, skip, skip).positive_pct});
  }
  return st;
}

}  // namespace vlcsim

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "vlcsim/analytics.hpp"
#include "vlcsim/channel.hpp"
#include "vlcsim/error.hpp"
#include "vlcsim/framing.hpp"
#include "vlcsim/rng.hpp"
#include "vlcsim/uart.hpp"

namespace vlcsim {

/// Everything needed to turn a frame sequence into a decoded symbol stream.
///
/// The line is sampled at `uart.baud * uart.oversample`. The clean waveform
/// swings between `v_off` and `v_on` and passes through the front-end filter;
/// independent Gaussian noise of standard deviation `sigma` is then added at
/// the comparator input. The stream is `lead_idle_bits` of idle, frames back
/// to back, and `trail_idle_bits` of idle once finished.
struct LinkSetup {
  UartConfig uart{};
  FrameSpec frame{};
  RxFrontEnd front_end{};
  double v_on = 1.0;
  double v_off = 0.0;
  double sigma = 0.0;
  std::int64_t skew_ppm = 0;
  std::size_t lead_idle_bits = 10;
  std::size_t trail_idle_bits = 20;

  double sample_rate() const { return uart.baud * uart.oversample; }

  void validate() const {
    uart.validate();
    frame.validate();
    front_end.validate();
    detail::require(sigma >= 0 && std::isfinite(sigma), "sigma must be finite and >= 0");
    detail::require(std::isfinite(v_on) && std::isfinite(v_off), "levels must be finite");
    detail::require(frame.sync_symbol < (1U << uart.data_bits), "sync symbol does not fit the data bits");
    detail::require(frame.alphabet_hi < (1U << uart.data_bits), "payload alphabet does not fit the data bits");
  }
};

namespace detail {

// Line bits of one frame: sync, ID, payload.
class FrameBits {
 public:
  explicit FrameBits(const LinkSetup& s) : s_(s), payload_(make_payload(s.frame)) {
    const auto frame = build_frame(s.frame, payload_, 0);
    bits_.reserve(frame.size() * static_cast<std::size_t>(s.uart.bits_per_char()));
    for (auto b : frame) append_char_bits(bits_, b, s.uart);
    bpc_ = static_cast<std::size_t>(s.uart.bits_per_char());
    id_bit_offset_ = static_cast<std::size_t>(s.frame.sync_len) * bpc_;
  }

  const std::vector<std::uint8_t>& payload() const { return payload_; }
  std::size_t size() const { return bits_.size(); }
  std::size_t sync_bits() const { return id_bit_offset_; }
  std::size_t id_bits() const { return static_cast<std::size_t>(s_.frame.id_len) * bpc_; }

  // Bits of frame `index`; only the ID differs between frames.
  const std::vector<std::uint8_t>& bits(std::uint64_t index) {
    scratch_.clear();
    const auto id = frame_id(s_.frame, index);
    for (auto b : id) append_char_bits(scratch_, b, s_.uart);
    std::copy(scratch_.begin(), scratch_.end(), bits_.begin() + static_cast<std::ptrdiff_t>(id_bit_offset_));
    return bits_;
  }

 private:
  const LinkSetup& s_;
  std::vector<std::uint8_t> payload_;
  std::vector<std::uint8_t> bits_;
  std::vector<std::uint8_t> scratch_;
  std::size_t bpc_ = 10;
  std::size_t id_bit_offset_ = 0;
};

}  // namespace detail

inline std::uint64_t frame_of(std::uint64_t pos, std::uint64_t first, std::uint64_t frame_samples) {
  return pos < first ? 0 : (pos - first) / frame_samples;
}

/// Sample-by-sample simulation: modulate, filter, add noise, slice, decode.
/// Supports every front-end option, including hysteresis.
class WaveformEngine {
 public:
  WaveformEngine(LinkSetup setup, std::uint64_t seed, bool record_chars = false)
      : s_(std::move(setup)), bits_((s_.validate(), s_)), rng_(seed), record_(record_chars),
        rx_(UartTiming(s_.uart, s_.skew_ppm)) {
    filter_ = EdgeLowpass(s_.front_end, s_.sample_rate());
    filter_.set_state(s_.v_on);
    cmp_ = Comparator(s_.front_end);
    spb_ = static_cast<std::size_t>(s_.uart.oversample);
    push_idle(s_.lead_idle_bits);
  }

  WaveformEngine(const WaveformEngine&) = delete;
  WaveformEngine& operator=(const WaveformEngine&) = delete;

  const LinkSetup& setup() const { return s_; }
  std::uint64_t frames_sent() const { return frames_; }

  // Transmits frames until `n` have been sent and decodes every character
  // whose samples are already known.
  void advance(std::uint64_t n) {
    detail::require(!finished_, "stream already finished");
    for (; frames_ < n; ++frames_) {
      for (auto b : bits_.bits(frames_)) push_bit(b);
      decode();
    }
  }

  void finish() {
    if (finished_) return;
    push_idle(s_.trail_idle_bits);
    finished_ = true;
    decode();
  }

  std::vector<std::uint8_t>& output() { return out_; }
  std::vector<DecodedChar>& chars() { return chars_; }
  std::size_t false_starts() const { return false_starts_; }

  // Sample index where frame `k` starts (its first sync bit).
  std::uint64_t frame_start(std::uint64_t k) const {
    return (s_.lead_idle_bits + k * bits_.size()) * spb_;
  }

  // Frame whose span holds the receiver's current read position.
  std::uint64_t receiver_frame() const { return frame_of(rx_.hunt_position(), frame_start(0), bits_.size() * spb_); }

 private:
  void push_idle(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) push_bit(1);
  }

  void push_bit(std::uint8_t b) {
    const double x = b ? s_.v_on : s_.v_off;
    for (std::size_t i = 0; i < spb_; ++i) {
      double v = filter_(x);
      if (s_.sigma > 0) v += s_.sigma * rng_.gaussian();
      line_.push_back(cmp_(v) ? 1 : 0);
    }
  }

  void decode() {
    auto line = [this](std::uint64_t i) { return line_[i - base_] != 0; };
    const std::uint64_t end = base_ + line_.size();
    for (;;) {
      const auto st = rx_.step(line, end);
      if (st.kind == UartReceiver::StepKind::need_more) break;
      if (st.kind == UartReceiver::StepKind::false_start) {
        ++false_starts_;
        continue;
      }
      out_.push_back(st.ch.value);
      if (record_) chars_.push_back(st.ch);
    }
    // Samples before the hunt position will never be read again.
    if (rx_.hunting() && rx_.has_reference()) {
      const std::uint64_t keep = rx_.hunt_position();
      if (keep > base_ + (1U << 20)) {
        line_.erase(line_.begin(), line_.begin() + static_cast<std::ptrdiff_t>(keep - base_));
        base_ = keep;
      }
    }
  }

  LinkSetup s_;
  detail::FrameBits bits_;
  Rng rng_;
  bool record_ = false;
  UartReceiver rx_;
  EdgeLowpass filter_;
  Comparator cmp_;
  std::size_t spb_ = 16;
  std::vector<std::uint8_t> line_;
  std::uint64_t base_ = 0;
  std::uint64_t frames_ = 0;
  bool finished_ = false;
  std::vector<std::uint8_t> out_;
  std::vector<DecodedChar> chars_;
  std::size_t false_starts_ = 0;
};

/// Statistically equivalent to WaveformEngine (hysteresis must be zero) but
/// cost scales with the number of noise-induced flips rather than samples.
///
/// With a memoryless comparator, noise only matters on samples the receiver
/// reads, and each read flips the clean decision independently with
/// probability Q(|y - ref| / sigma). Every frame's clean waveform is the same
/// template apart from the frame ID and a short settling tail after it. The
/// clean receiver trajectory over the template is computed once; while the
/// receiver sits on that trajectory its outputs are copied in bulk, and the
/// next flip among the reads ahead is located by comparing an Exp(1)
/// exposure to the accumulated hazard -log(1 - p) of those reads. Off the
/// trajectory (frame IDs, after a flip, stream edges) the receiver runs
/// read by read with a fresh Bernoulli draw per read.
///
/// Filtered values past the ID are snapped back to the template once they
/// agree to 1e-12 of the swing, which is far below any noise level used.
class EventEngine {
 public:
  EventEngine(LinkSetup setup, std::uint64_t seed)
      : s_(std::move(setup)), bits_((s_.validate(), s_)), rng_(seed),
        rx_(UartTiming(s_.uart, s_.skew_ppm)) {
    detail::require(s_.front_end.hysteresis == 0, "event engine needs a comparator without hysteresis");
    spb_ = static_cast<std::uint64_t>(s_.uart.oversample);
    ref_ = s_.front_end.comparator_ref;
    tol_ = 1e-12 * std::max(std::abs(s_.v_on - s_.v_off), 1e-300);
    frame_samples_ = bits_.size() * spb_;
    sync_samples_ = bits_.sync_bits() * spb_;
    id_samples_ = bits_.id_bits() * spb_;
    lead_ = s_.lead_idle_bits * spb_;
    i0_ = lead_ + sync_samples_;
    build_template();
    exposure_ = rng_.exponential();
  }

  EventEngine(const EventEngine&) = delete;
  EventEngine& operator=(const EventEngine&) = delete;

  const LinkSetup& setup() const { return s_; }
  std::uint64_t frames_sent() const { return frames_; }

  void advance(std::uint64_t n) {
    detail::require(!finished_, "stream already finished");
    if (n <= frames_) return;
    frames_ = n;
    run(frame_start(frames_));
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    tail_start_ = frame_start(frames_);
    tail_.clear();
    double y = tail_start_ == 0 ? s_.v_on : y_at(tail_start_ - 1);
    EdgeLowpass f(s_.front_end, s_.sample_rate());
    f.set_state(y);
    const std::uint64_t n = s_.trail_idle_bits * spb_;
    for (std::uint64_t i = 0; i < n; ++i) tail_.push_back(f(s_.v_on));
    run(tail_start_ + n);
  }

  std::vector<std::uint8_t>& output() { return out_; }
  std::size_t false_starts() const { return false_starts_; }

  std::uint64_t frame_start(std::uint64_t k) const { return lead_ + k * frame_samples_; }

  std::uint64_t receiver_frame() const { return frame_of(rx_.hunt_position(), lead_, frame_samples_); }

  // Fraction of steps taken on the bulk path; useful for profiling.
  std::uint64_t bulk_steps() const { return bulk_steps_; }
  std::uint64_t exact_steps() const { return exact_steps_; }

  // Clean filtered waveform of one period, starting at a frame's ID.
  const std::vector<double>& template_waveform() const { return tmpl_; }

 private:
  struct Patch {
    std::uint64_t k = std::numeric_limits<std::uint64_t>::max();
    std::vector<double> y;
  };

  // Template receiver step; positions relative to the period start.
  struct TStep {
    std::int64_t hunt = 0;
    bool level = true;
    std::int64_t after_hunt = 0;
    bool after_level = true;
    std::uint32_t read_begin = 0;
    std::uint32_t read_end = 0;
    std::int64_t last_read = 0;
  };

  double x_of(std::uint8_t b) const { return b ? s_.v_on : s_.v_off; }

  std::uint64_t period_start(std::uint64_t k) const { return i0_ + k * frame_samples_; }

  double flip_probability(double y) const {
    if (s_.sigma == 0) return 0.0;
    return q_function(std::abs(y - ref_) / s_.sigma);
  }

  void build_template() {
    EdgeLowpass f(s_.front_end, s_.sample_rate());
    f.set_state(s_.v_on);
    head_.clear();
    for (std::uint64_t i = 0; i < lead_; ++i) head_.push_back(f(s_.v_on));
    const auto& fb = bits_.bits(0);
    for (std::size_t b = 0; b < bits_.sync_bits(); ++b)
      for (std::uint64_t i = 0; i < spb_; ++i) head_.push_back(f(x_of(fb[b])));

    // Period order: ID, payload, then the next frame's sync.
    std::vector<std::uint8_t> period(fb.begin() + static_cast<std::ptrdiff_t>(bits_.sync_bits()), fb.end());
    period.insert(period.end(), fb.begin(), fb.begin() + static_cast<std::ptrdiff_t>(bits_.sync_bits()));

    // Run periods until the waveform and the clean receiver path repeat.
    std::vector<double> full = head_;
    std::vector<std::vector<TStep>> paths;
    constexpr int max_periods = 12;
    for (int p = 0; p < max_periods; ++p) {
      for (auto b : period)
        for (std::uint64_t i = 0; i < spb_; ++i) full.push_back(f(x_of(b)));
      if (p < 2) continue;
      const std::uint64_t a = i0_ + static_cast<std::uint64_t>(p - 1) * frame_samples_;
      const std::uint64_t c = a + frame_samples_;
      bool same = true;
      for (std::uint64_t i = 0; i < frame_samples_ && same; ++i) same = std::abs(full[a + i] - full[c + i]) <= tol_;
      if (!same) continue;
      if (trace_template(full, static_cast<std::uint64_t>(p - 2), static_cast<std::uint64_t>(p - 1))) {
        tmpl_.assign(full.begin() + static_cast<std::ptrdiff_t>(c), full.end());
        finalize_template();
        return;
      }
    }
    throw Error("event engine: clean receiver never settles into a periodic path");
  }

  // Records the clean receiver path over `full`, keeping steps that start in
  // period `pa`, and checks they repeat one period later in `pb`.
  bool trace_template(const std::vector<double>& full, std::uint64_t pa, std::uint64_t pb) {
    UartReceiver rx(UartTiming(s_.uart, s_.skew_ppm));
    std::vector<std::int64_t> reads;
    auto line = [&](std::uint64_t i) {
      reads.push_back(static_cast<std::int64_t>(i));
      return full[i] > ref_;
    };
    const std::uint64_t end = full.size();
    const auto a0 = static_cast<std::int64_t>(period_start(pa));
    const auto b0 = static_cast<std::int64_t>(period_start(pb));
    const auto F = static_cast<std::int64_t>(frame_samples_);

    struct Raw {
      std::int64_t hunt;
      bool level;
      std::vector<std::int64_t> reads;
      int kind;
      std::uint8_t value;
    };
    std::vector<Raw> ra, rb;
    for (;;) {
      const std::int64_t hunt = rx.has_reference() ? static_cast<std::int64_t>(rx.hunt_position()) : -1;
      const bool level = rx.hunt_level();
      reads.clear();
      const auto st = rx.step(line, end);
      if (st.kind == UartReceiver::StepKind::need_more) break;
      Raw r{hunt, level, reads, static_cast<int>(st.kind), st.ch.value};
      if (hunt >= a0 && hunt < a0 + F) ra.push_back(std::move(r));
      else if (hunt >= b0 && hunt < b0 + F) rb.push_back(std::move(r));
      if (hunt >= b0 + F) break;
    }
    if (ra.empty()) return false;
    // Compare the steps of period b that finished entirely inside `full`.
    if (rb.size() + 1 < ra.size()) return false;
    for (std::size_t i = 0; i < std::min(ra.size(), rb.size()); ++i) {
      const auto& x = ra[i];
      const auto& y = rb[i];
      if (x.hunt + F != y.hunt || x.level != y.level || x.kind != y.kind || x.value != y.value ||
          x.reads.size() != y.reads.size())
        return false;
      for (std::size_t j = 0; j < x.reads.size(); ++j)
        if (x.reads[j] + F != y.reads[j]) return false;
    }

    steps_.clear();
    reads_.clear();
    hazard_.clear();
    tbytes_.clear();
    char_before_.clear();
    for (std::size_t i = 0; i < ra.size(); ++i) {
      TStep t;
      t.hunt = ra[i].hunt - a0;
      t.level = ra[i].level;
      if (i + 1 < ra.size()) {
        t.after_hunt = ra[i + 1].hunt - a0;
        t.after_level = ra[i + 1].level;
      } else {
        t.after_hunt = ra[0].hunt - a0 + F;
        t.after_level = ra[0].level;
      }
      t.read_begin = static_cast<std::uint32_t>(reads_.size());
      for (auto r : ra[i].reads) reads_.push_back(r - a0);
      t.read_end = static_cast<std::uint32_t>(reads_.size());
      t.last_read = ra[i].reads.empty() ? t.hunt : ra[i].reads.back() - a0;
      char_before_.push_back(static_cast<std::uint32_t>(tbytes_.size()));
      const bool ch = ra[i].kind == static_cast<int>(UartReceiver::StepKind::character);
      if (ch) tbytes_.push_back(ra[i].value);
      steps_.push_back(t);
    }
    char_before_.push_back(static_cast<std::uint32_t>(tbytes_.size()));
    return true;
  }

  void finalize_template() {
    const auto F = static_cast<std::int64_t>(frame_samples_);
    // Hazards need the template waveform; reads are relative to the period.
    hazard_.resize(reads_.size());
    for (std::size_t r = 0; r < reads_.size(); ++r) {
      const std::int64_t o = reads_[r];
      const double y = o < F ? tmpl_[static_cast<std::size_t>(o)] : tmpl_[static_cast<std::size_t>(o - F)];
      hazard_[r] = -std::log1p(-flip_probability(y));
    }
    prefix_.assign(steps_.size() + 1, 0.0);
    valid_ = 0;
    for (std::size_t j = 0; j < steps_.size(); ++j) {
      double h = 0;
      for (auto r = steps_[j].read_begin; r < steps_[j].read_end; ++r) h += hazard_[r];
      prefix_[j + 1] = prefix_[j] + h;
      if (steps_[j].last_read < F && valid_ == j) valid_ = j + 1;
    }
    hunts_.clear();
    last_reads_.clear();
    for (const auto& t : steps_) {
      hunts_.push_back(t.hunt);
      last_reads_.push_back(t.last_read);
    }
  }

  const Patch& patch(std::uint64_t k) {
    for (const auto& p : patches_)
      if (p.k == k) return p;
    Patch& p = patches_[next_patch_];
    next_patch_ = (next_patch_ + 1) % patches_.size();
    p.k = k;
    p.y.clear();
    const double y0 = k == 0 ? head_.back() : tmpl_.back();
    EdgeLowpass f(s_.front_end, s_.sample_rate());
    f.set_state(y0);
    const auto& fb = bits_.bits(k);
    const std::size_t sb = bits_.sync_bits();
    const std::size_t nbits = fb.size() - sb;
    for (std::size_t b = 0; b < nbits; ++b) {
      const std::uint64_t off = b * spb_;
      if (off >= id_samples_ && std::abs(p.y.back() - tmpl_[off - 1]) <= tol_) return p;
      for (std::uint64_t i = 0; i < spb_; ++i) p.y.push_back(f(x_of(fb[sb + b])));
    }
    throw Error("event engine: waveform does not settle within one frame");
  }

  double y_at(std::uint64_t i) {
    if (i < i0_) return head_[i];
    if (finished_ && i >= tail_start_) return tail_[i - tail_start_];
    const std::uint64_t k = (i - i0_) / frame_samples_;
    const std::uint64_t off = i - period_start(k);
    const auto& p = patch(k);
    return off < p.y.size() ? p.y[off] : tmpl_[off];
  }

  bool read(std::uint64_t i) {
    const double y = y_at(i);
    const bool clean = y > ref_;
    if (forced_) {
      if (i < flip_at_) return clean;
      forced_ = false;
      return !clean;
    }
    if (s_.sigma == 0) return clean;
    return rng_.uniform() < flip_probability(y) ? !clean : clean;
  }

  void emit_char(std::uint8_t v) { out_.push_back(v); }

  // Tries to continue along the template path; false if the receiver is off it.
  bool bulk(std::uint64_t end) {
    if (!rx_.hunting() || !rx_.has_reference() || forced_) return false;
    const std::uint64_t pos = rx_.hunt_position();
    if (pos < i0_) return false;
    const std::uint64_t k = (pos - i0_) / frame_samples_;
    const std::uint64_t base = period_start(k);
    if (finished_ && pos >= tail_start_) return false;
    const auto rel = static_cast<std::int64_t>(pos - base);
    if (static_cast<std::uint64_t>(rel) < patch(k).y.size()) return false;
    const auto it = std::lower_bound(hunts_.begin(), hunts_.begin() + static_cast<std::ptrdiff_t>(valid_), rel);
    if (it == hunts_.begin() + static_cast<std::ptrdiff_t>(valid_) || *it != rel) return false;
    const auto j = static_cast<std::size_t>(it - hunts_.begin());
    if (steps_[j].level != rx_.hunt_level()) return false;

    std::uint64_t limit = end;
    if (finished_) limit = std::min(limit, tail_start_);
    if (limit <= base) return false;
    const auto lim_rel = static_cast<std::int64_t>(limit - base);
    const auto stop_it = std::lower_bound(last_reads_.begin() + static_cast<std::ptrdiff_t>(j),
                                          last_reads_.begin() + static_cast<std::ptrdiff_t>(valid_), lim_rel);
    const auto je = static_cast<std::size_t>(stop_it - last_reads_.begin());
    if (je <= j) return false;

    const double target = prefix_[j] + exposure_;
    const auto q_it = std::upper_bound(prefix_.begin() + static_cast<std::ptrdiff_t>(j) + 1,
                                       prefix_.begin() + static_cast<std::ptrdiff_t>(je) + 1, target);
    const auto q = static_cast<std::size_t>(q_it - prefix_.begin());
    if (q > je) {
      emit_steps(j, je);
      exposure_ -= prefix_[je] - prefix_[j];
      const auto& t = steps_[je - 1];
      rx_.resume_hunt(base + static_cast<std::uint64_t>(t.after_hunt), t.after_level);
      return true;
    }
    const std::size_t s = q - 1;
    emit_steps(j, s);
    double e = target - prefix_[s];
    std::uint32_t r = steps_[s].read_begin;
    for (; r + 1 < steps_[s].read_end; ++r) {
      e -= hazard_[r];
      if (e < 0) break;
    }
    flip_at_ = base + static_cast<std::uint64_t>(reads_[r]);
    forced_ = true;
    rx_.resume_hunt(base + static_cast<std::uint64_t>(steps_[s].hunt), steps_[s].level);
    exposure_ = rng_.exponential();
    return true;
  }

  void emit_steps(std::size_t a, std::size_t b) {
    if (b <= a) return;
    bulk_steps_ += b - a;
    out_.insert(out_.end(), tbytes_.begin() + char_before_[a], tbytes_.begin() + char_before_[b]);
  }

  void run(std::uint64_t end) {
    auto line = [this](std::uint64_t i) { return read(i); };
    for (;;) {
      if (bulk(end)) continue;
      const auto st = rx_.step(line, end);
      if (st.kind == UartReceiver::StepKind::need_more) break;
      ++exact_steps_;
      if (st.kind == UartReceiver::StepKind::false_start) {
        ++false_starts_;
        continue;
      }
      emit_char(st.ch.value);
    }
  }

  LinkSetup s_;
  detail::FrameBits bits_;
  Rng rng_;
  UartReceiver rx_;
  std::uint64_t spb_ = 16;
  double ref_ = 0.5;
  double tol_ = 1e-12;
  std::uint64_t frame_samples_ = 0;
  std::uint64_t sync_samples_ = 0;
  std::uint64_t id_samples_ = 0;
  std::uint64_t lead_ = 0;
  std::uint64_t i0_ = 0;

  std::vector<double> head_;
  std::vector<double> tmpl_;
  std::vector<double> tail_;
  std::uint64_t tail_start_ = 0;
  std::array<Patch, 3> patches_{};
  std::size_t next_patch_ = 0;

  std::vector<TStep> steps_;
  std::vector<std::int64_t> hunts_;
  std::vector<std::int64_t> last_reads_;
  std::vector<std::int64_t> reads_;
  std::vector<double> hazard_;
  std::vector<double> prefix_;
  std::vector<std::uint8_t> tbytes_;
  std::vector<std::uint32_t> char_before_;
  std::size_t valid_ = 0;

  double exposure_ = 0;
  bool forced_ = false;
  std::uint64_t flip_at_ = 0;

  std::uint64_t frames_ = 0;
  bool finished_ = false;
  std::vector<std::uint8_t> out_;
  std::size_t false_starts_ = 0;
  std::uint64_t bulk_steps_ = 0;
  std::uint64_t exact_steps_ = 0;
};

}  // namespace vlcsim

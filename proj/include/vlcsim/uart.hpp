#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlcsim/error.hpp"

namespace vlcsim {

enum class Parity { none, even, odd, mark, space };

inline std::string_view to_string(Parity p) {
  switch (p) {
    case Parity::none: return "none";
    case Parity::even: return "even";
    case Parity::odd: return "odd";
    case Parity::mark: return "mark";
    case Parity::space: return "space";
  }
  return "none";
}

inline Parity parse_parity(std::string_view s) {
  if (s == "none" || s == "N" || s == "n") return Parity::none;
  if (s == "even" || s == "E" || s == "e") return Parity::even;
  if (s == "odd" || s == "O" || s == "o") return Parity::odd;
  if (s == "mark" || s == "M" || s == "m") return Parity::mark;
  if (s == "space" || s == "S" || s == "s") return Parity::space;
  throw InvalidInput("unknown parity '" + std::string(s) + "'");
}

/// Character format of an asynchronous serial line. Defaults to 8N1 with a
/// receiver running at 16 samples per bit.
struct UartConfig {
  int data_bits = 8;
  Parity parity = Parity::none;
  int stop_bits = 1;
  double baud = 9600.0;
  int oversample = 16;

  int parity_bits() const { return parity == Parity::none ? 0 : 1; }
  int bits_per_char() const { return 1 + data_bits + parity_bits() + stop_bits; }

  void validate() const {
    detail::require(data_bits == 7 || data_bits == 8, "data_bits must be 7 or 8");
    detail::require(stop_bits == 1 || stop_bits == 2, "stop_bits must be 1 or 2");
    detail::require(oversample >= 4, "oversample must be >= 4");
    detail::require(std::isfinite(baud) && baud > 0.0, "baud must be > 0");
  }
};

// Line levels, one entry per bit period. 1 is idle/high, 0 is low.
struct LineBits {
  std::vector<std::uint8_t> bits;

  std::size_t duration_bits() const { return bits.size(); }
  bool operator==(const LineBits&) const = default;
};

namespace detail {

inline bool parity_bit(std::uint32_t value, Parity p) {
  const bool odd_ones = (std::popcount(value) & 1) != 0;
  switch (p) {
    case Parity::even: return odd_ones;
    case Parity::odd: return !odd_ones;
    case Parity::mark: return true;
    case Parity::space: return false;
    case Parity::none: break;
  }
  return false;
}

}  // namespace detail

// Appends one character (start, data LSB first, parity, stop) to `out`.
inline void append_char_bits(std::vector<std::uint8_t>& out, std::uint32_t value, const UartConfig& cfg) {
  out.push_back(0);
  for (int b = 0; b < cfg.data_bits; ++b) out.push_back(static_cast<std::uint8_t>((value >> b) & 1U));
  if (cfg.parity != Parity::none) out.push_back(detail::parity_bit(value, cfg.parity) ? 1 : 0);
  for (int s = 0; s < cfg.stop_bits; ++s) out.push_back(1);
}

/// Serializes bytes into line bits. `lead_idle` / `trail_idle` idle-high bit
/// periods are placed around the characters.
inline LineBits uart_encode(std::span<const std::uint8_t> bytes, const UartConfig& cfg,
                            std::size_t lead_idle = 0, std::size_t trail_idle = 0) {
  cfg.validate();
  const std::uint32_t limit = 1U << cfg.data_bits;
  LineBits line;
  line.bits.reserve(lead_idle + trail_idle + bytes.size() * static_cast<std::size_t>(cfg.bits_per_char()));
  line.bits.assign(lead_idle, 1);
  for (std::uint8_t b : bytes) {
    if (b >= limit)
      throw InvalidInput("byte value " + std::to_string(b) + " does not fit in " + std::to_string(cfg.data_bits) +
                         " data bits");
    append_char_bits(line.bits, b, cfg);
  }
  line.bits.insert(line.bits.end(), trail_idle, 1);
  return line;
}

struct DecodedChar {
  std::uint8_t value = 0;
  bool framing_error = false;
  bool parity_error = false;
  std::uint64_t start_sample = 0;  // first low sample of the detected start edge

  bool ok() const { return !framing_error && !parity_error; }
};

struct DecodeResult {
  std::vector<std::uint8_t> bytes;
  std::vector<DecodedChar> chars;
  std::size_t false_starts = 0;
};

/// Sample offsets, measured from the detected start edge, of the center of
/// every bit position in a character (index 0 is the start bit).
///
/// The receiver believes a bit lasts `oversample * (1 + skew_ppm * 1e-6)`
/// samples; a nonzero skew therefore drifts the sampling points relative to
/// the transmitter's bit grid.
struct UartTiming {
  std::vector<std::int64_t> centers;
  int data_bits = 8;
  Parity parity = Parity::none;
  int stop_bits = 1;

  UartTiming() = default;
  UartTiming(const UartConfig& cfg, std::int64_t skew_ppm) : data_bits(cfg.data_bits), parity(cfg.parity), stop_bits(cfg.stop_bits) {
    cfg.validate();
    const double period = cfg.oversample * (1.0 + static_cast<double>(skew_ppm) * 1e-6);
    detail::require(period >= 2.0, "clock skew leaves fewer than 2 samples per bit");
    const int n = cfg.bits_per_char();
    centers.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) centers[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(std::floor((k + 0.5) * period));
  }

  std::int64_t span() const { return centers.back(); }
};

/// Start-edge driven UART receiver over any random-access binary line.
///
/// `Line` must provide `bool operator()(std::uint64_t sample)`. Reads issued by
/// the receiver are monotonically nondecreasing in the sample index, which the
/// event-driven engine relies on.
///
/// Discipline: hunt for a high-to-low transition (the sample before it must be
/// high), confirm the start bit at its center, sample every further bit at its
/// center, flag parity/stop violations. After any character, or a rejected
/// start, hunting resumes from the last sample read, so a framing error waits
/// for the line to return high before the next edge can qualify.
class UartReceiver {
 public:
  enum class StepKind { need_more, false_start, character };

  struct Step {
    StepKind kind = StepKind::need_more;
    DecodedChar ch{};
  };

  UartReceiver() = default;
  explicit UartReceiver(UartTiming timing) : timing_(std::move(timing)) {}

  const UartTiming& timing() const { return timing_; }

  bool hunting() const { return !edge_found_; }
  std::uint64_t hunt_position() const { return pos_; }
  bool has_reference() const { return prev_valid_; }
  // Line level at hunt_position(); meaningful only when has_reference().
  bool hunt_level() const { return prev_; }

  // Places the receiver in the hunting state at `pos`, where the line reads `level`.
  void resume_hunt(std::uint64_t pos, bool level) {
    pos_ = pos;
    prev_ = level;
    prev_valid_ = true;
    edge_found_ = false;
  }

  /// Advances by at most one decode attempt using samples in [0, end).
  template <class Line>
  Step step(Line& line, std::uint64_t end) {
    if (!edge_found_) {
      if (!prev_valid_) {
        if (pos_ >= end) return {};
        prev_ = line(pos_);
        prev_valid_ = true;
      }
      for (;;) {
        const std::uint64_t j = pos_ + 1;
        if (j >= end) return {};
        const bool cur = line(j);
        pos_ = j;
        if (prev_ && !cur) {
          edge_ = j;
          edge_found_ = true;
          prev_ = cur;
          break;
        }
        prev_ = cur;
      }
    }

    const auto& c = timing_.centers;
    if (edge_ + static_cast<std::uint64_t>(timing_.span()) >= end) return {};

    const std::uint64_t start_center = edge_ + static_cast<std::uint64_t>(c[0]);
    edge_found_ = false;
    if (line(start_center)) {
      resume_hunt(start_center, true);
      return {StepKind::false_start, {}};
    }

    Step out{StepKind::character, {}};
    out.ch.start_sample = edge_;
    std::uint32_t value = 0;
    std::size_t k = 1;
    for (int b = 0; b < timing_.data_bits; ++b, ++k) {
      if (line(edge_ + static_cast<std::uint64_t>(c[k]))) value |= 1U << b;
    }
    if (timing_.parity != Parity::none) {
      const bool pbit = line(edge_ + static_cast<std::uint64_t>(c[k]));
      ++k;
      out.ch.parity_error = pbit != detail::parity_bit(value, timing_.parity);
    }
    bool stop_level = true;
    for (int s = 0; s < timing_.stop_bits; ++s, ++k) {
      stop_level = line(edge_ + static_cast<std::uint64_t>(c[k]));
      if (!stop_level) out.ch.framing_error = true;
    }
    out.ch.value = static_cast<std::uint8_t>(value);
    resume_hunt(edge_ + static_cast<std::uint64_t>(c[k - 1]), stop_level);
    return out;
  }

 private:
  UartTiming timing_{};
  std::uint64_t pos_ = 0;
  std::uint64_t edge_ = 0;
  bool prev_ = false;
  bool prev_valid_ = false;
  bool edge_found_ = false;
};

/// Decodes a sampled binary line. Corruption never aborts: every character
/// found is returned together with its framing/parity flags.
inline DecodeResult uart_decode(std::span<const std::uint8_t> samples, const UartConfig& cfg,
                                std::int64_t clock_skew_ppm = 0) {
  UartReceiver rx{UartTiming(cfg, clock_skew_ppm)};
  auto line = [&](std::uint64_t i) { return samples[i] != 0; };
  DecodeResult out;
  for (;;) {
    const auto st = rx.step(line, samples.size());
    if (st.kind == UartReceiver::StepKind::need_more) break;
    if (st.kind == UartReceiver::StepKind::false_start) {
      ++out.false_starts;
      continue;
    }
    out.bytes.push_back(st.ch.value);
    out.chars.push_back(st.ch);
  }
  return out;
}

// Expands line bits to `samples_per_bit` binary samples each (an ideal receiver line).
inline std::vector<std::uint8_t> oversample_bits(const LineBits& line, int samples_per_bit) {
  std::vector<std::uint8_t> out;
  out.reserve(line.bits.size() * static_cast<std::size_t>(samples_per_bit));
  for (auto b : line.bits) out.insert(out.end(), static_cast<std::size_t>(samples_per_bit), b);
  return out;
}

}  // namespace vlcsim

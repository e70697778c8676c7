#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlcsim/analytics.hpp"
#include "vlcsim/error.hpp"
#include "vlcsim/rng.hpp"
#include "vlcsim/uart.hpp"

namespace vlcsim {

/// Composition of one block: `sync_len` sync symbols, an `id_len` digit frame
/// number, then a fixed pseudo-random payload drawn from
/// [alphabet_lo, alphabet_hi].
struct FrameSpec {
  std::int64_t sync_len = 1;
  std::uint8_t sync_symbol = '$';
  std::int64_t payload_len = 1000;
  std::int64_t id_len = 3;
  std::uint8_t alphabet_lo = 64;
  std::uint8_t alphabet_hi = 126;
  std::uint64_t payload_seed = 1;

  // Symbols between sync words: frame ID plus payload.
  std::int64_t frame_length() const { return id_len + payload_len; }
  std::int64_t total_length() const { return sync_len + frame_length(); }

  std::uint64_t id_capacity() const {
    std::uint64_t c = 1;
    for (std::int64_t i = 0; i < id_len; ++i) c *= 10;
    return c;
  }

  void validate() const {
    using detail::require;
    require(sync_len >= 1, "sync_len must be >= 1");
    require(payload_len >= 1, "payload_len must be >= 1");
    require(id_len >= 1 && id_len <= 18, "id_len must lie in [1, 18]");
    require(alphabet_lo <= alphabet_hi, "alphabet bounds are reversed");
    require(alphabet_hi - alphabet_lo >= 9, "alphabet must hold at least 10 symbols for frame IDs");
    require(sync_symbol < alphabet_lo || sync_symbol > alphabet_hi, "sync symbol must lie outside the payload alphabet");
  }
};

// Same seed, same payload, every time.
inline std::vector<std::uint8_t> make_payload(const FrameSpec& spec) {
  spec.validate();
  Rng rng(spec.payload_seed);
  const std::uint64_t width = static_cast<std::uint64_t>(spec.alphabet_hi - spec.alphabet_lo) + 1;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(spec.payload_len));
  for (auto& b : out) b = static_cast<std::uint8_t>(spec.alphabet_lo + rng.below(width));
  return out;
}

/// Frame number as zero-padded decimal digits mapped onto the first ten
/// alphabet symbols ('@' = 0 ... 'I' = 9 by default). Indices wrap modulo
/// 10^id_len.
inline std::vector<std::uint8_t> frame_id(const FrameSpec& spec, std::uint64_t index) {
  std::vector<std::uint8_t> id(static_cast<std::size_t>(spec.id_len));
  std::uint64_t v = index % spec.id_capacity();
  for (auto it = id.rbegin(); it != id.rend(); ++it) {
    *it = static_cast<std::uint8_t>(spec.alphabet_lo + v % 10);
    v /= 10;
  }
  return id;
}

inline std::vector<std::uint8_t> build_frame(const FrameSpec& spec, std::span<const std::uint8_t> payload,
                                             std::uint64_t index) {
  detail::require(static_cast<std::int64_t>(payload.size()) == spec.payload_len, "payload length does not match spec");
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(spec.total_length()));
  out.insert(out.end(), static_cast<std::size_t>(spec.sync_len), spec.sync_symbol);
  const auto id = frame_id(spec, index);
  out.insert(out.end(), id.begin(), id.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline std::vector<std::uint8_t> build_frame(const FrameSpec& spec, std::uint64_t index) {
  const auto payload = make_payload(spec);
  return build_frame(spec, payload, index);
}

enum class Verdict { clean, substituted, dropped };
enum class DropCause { none, length_mismatch, missed_frame };

struct FrameResult {
  Verdict verdict = Verdict::clean;
  std::int64_t substitution_count = 0;
  DropCause drop_cause = DropCause::none;
  std::optional<std::string> frame_id;  // as received, when the frame was recovered
  std::uint64_t index = 0;              // transmitted frame this result accounts for

  bool operator==(const FrameResult&) const = default;
};

/// Streaming frame recovery over a decoded symbol stream.
///
/// The stream is split into runs of the sync symbol and the segments between
/// them. A segment counts as a frame candidate only if the run before it has
/// at least `sync_len` symbols (longer runs are consumed whole). A candidate of
/// exactly the frame length is a recovered frame; any other length is a
/// length-mismatch drop. Recovered frames are matched to transmitted indices by
/// the nearest frame ID within a small window ahead of the next expected
/// index, and every skipped index is synthesized as a drop, so results come
/// out in transmit order with no gaps.
class FrameDetector {
 public:
  FrameDetector(FrameSpec spec, std::vector<std::uint8_t> payload,
                std::optional<std::uint64_t> frames_limit = std::nullopt)
      : spec_(std::move(spec)), payload_(std::move(payload)), limit_(frames_limit) {
    spec_.validate();
    detail::require(static_cast<std::int64_t>(payload_.size()) == spec_.payload_len, "payload length does not match spec");
    flen_ = static_cast<std::size_t>(spec_.frame_length());
    seg_.reserve(flen_);
  }

  explicit FrameDetector(const FrameSpec& spec, std::optional<std::uint64_t> frames_limit = std::nullopt)
      : FrameDetector(spec, make_payload(spec), frames_limit) {}

  const FrameSpec& spec() const { return spec_; }

  void push(std::uint8_t b) {
    if (b == spec_.sync_symbol) {
      if (!in_run_) {
        close_segment();
        in_run_ = true;
        run_len_ = 0;
        ++runs_since_match_;
      }
      ++run_len_;
      return;
    }
    if (in_run_) {
      in_run_ = false;
      candidate_ = run_len_ >= spec_.sync_len;
      seg_.clear();
      seg_len_ = 0;
    }
    if (candidate_) {
      if (seg_len_ < flen_) seg_.push_back(b);
      ++seg_len_;
    }
  }

  void push(std::span<const std::uint8_t> bytes) {
    for (auto b : bytes) push(b);
  }

  /// Closes the stream: flushes the last segment and accounts every index
  /// below `frames_sent` that was not yet reported.
  void finish(std::uint64_t frames_sent) {
    close_segment();
    candidate_ = false;
    while (next_ < frames_sent) emit_drop();
  }

  /// Narrows attribution using where the receiver is in time. Indices below
  /// `floor` can no longer be matched and are finalized as drops; later
  /// matches are attributed no higher than `ceiling`.
  void set_window(std::uint64_t floor, std::uint64_t ceiling) {
    floor_ = floor;
    ceiling_ = std::max(ceiling, floor);
    bool dropped_any = false;
    while (next_ < floor_ && (!limit_ || next_ < *limit_)) {
      emit_drop();
      dropped_any = true;
    }
    if (dropped_any) pending_mismatches_ = 0;
  }

  // Results produced so far, in transmit order.
  std::vector<FrameResult>& results() { return results_; }
  const std::vector<FrameResult>& results() const { return results_; }
  std::uint64_t next_index() const { return next_; }

 private:
  void close_segment() {
    if (!candidate_ || in_run_) return;
    candidate_ = false;
    if (seg_len_ == flen_) {
      match();
    } else if (seg_len_ > 0) {
      ++pending_mismatches_;
    }
    seg_len_ = 0;
  }

  void match() {
    const std::uint64_t id_len = static_cast<std::uint64_t>(spec_.id_len);
    const std::uint64_t lo = std::max(next_, floor_);
    std::uint64_t hi = std::max(lo, std::min(next_ + runs_since_match_ + 2, ceiling_));
    if (limit_) {
      if (lo >= *limit_) return;  // nothing left to attribute it to
      hi = std::min(hi, *limit_ - 1);
    }
    std::uint64_t best = lo;
    std::uint64_t best_d = id_len + 1;
    for (std::uint64_t i = lo; i <= hi; ++i) {
      const auto id = frame_id(spec_, i);
      std::uint64_t d = 0;
      for (std::size_t k = 0; k < id.size(); ++k) d += id[k] != seg_[k];
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    while (next_ < best) emit_drop();

    const auto id = frame_id(spec_, best);
    std::int64_t subs = 0;
    for (std::size_t k = 0; k < id.size(); ++k) subs += id[k] != seg_[k];
    for (std::size_t k = 0; k < payload_.size(); ++k) subs += payload_[k] != seg_[id_len + k];

    FrameResult r;
    r.index = next_++;
    r.substitution_count = subs;
    r.verdict = subs == 0 ? Verdict::clean : Verdict::substituted;
    r.frame_id = std::string(seg_.begin(), seg_.begin() + static_cast<std::ptrdiff_t>(id_len));
    results_.push_back(std::move(r));
    pending_mismatches_ = 0;
    runs_since_match_ = 0;
  }

  void emit_drop() {
    FrameResult r;
    r.index = next_++;
    r.verdict = Verdict::dropped;
    if (pending_mismatches_ > 0) {
      --pending_mismatches_;
      r.drop_cause = DropCause::length_mismatch;
    } else {
      r.drop_cause = DropCause::missed_frame;
    }
    results_.push_back(std::move(r));
  }

  FrameSpec spec_;
  std::vector<std::uint8_t> payload_;
  std::optional<std::uint64_t> limit_;
  std::size_t flen_ = 0;

  std::vector<std::uint8_t> seg_;
  std::size_t seg_len_ = 0;
  bool in_run_ = false;
  bool candidate_ = false;  // leading bytes before any sync run are ignored
  std::int64_t run_len_ = 0;
  std::uint64_t runs_since_match_ = 0;
  std::uint64_t pending_mismatches_ = 0;
  std::uint64_t next_ = 0;
  std::uint64_t floor_ = 0;
  std::uint64_t ceiling_ = std::numeric_limits<std::uint64_t>::max();
  std::vector<FrameResult> results_;
};

/// Classifies every frame in a decoded stream. With `frames_sent`, frames
/// that never showed up are appended as missed, so the result covers exactly
/// `frames_sent` indices.
inline std::vector<FrameResult> detect_frames(std::span<const std::uint8_t> stream, const FrameSpec& spec,
                                              std::optional<std::uint64_t> frames_sent = std::nullopt) {
  FrameDetector det(spec, frames_sent);
  det.push(stream);
  det.finish(frames_sent.value_or(0));
  return std::move(det.results());
}

struct FrameTally {
  std::uint64_t clean = 0;
  std::uint64_t substituted = 0;
  std::uint64_t dropped = 0;
  std::uint64_t frames_sent = 0;
  ErrorHistogram histogram;

  bool balanced() const {
    return clean + substituted + dropped == frames_sent && histogram.total == frames_sent && histogram.consistent();
  }
};

// Results beyond `frames_sent` are ignored; missing ones count as dropped.
inline FrameTally account_frames(std::span<const FrameResult> results, std::uint64_t frames_sent) {
  FrameTally t;
  t.frames_sent = frames_sent;
  std::uint64_t seen = 0;
  for (const auto& r : results) {
    if (r.index >= frames_sent) continue;
    ++seen;
    switch (r.verdict) {
      case Verdict::clean: ++t.clean; t.histogram.add_received(0); break;
      case Verdict::substituted: ++t.substituted; t.histogram.add_received(r.substitution_count); break;
      case Verdict::dropped: ++t.dropped; t.histogram.add_dropped(); break;
    }
  }
  for (; seen < frames_sent; ++seen) {
    ++t.dropped;
    t.histogram.add_dropped();
  }
  return t;
}

struct SyncErrorRate {
  double p_bse = 0;
  double reliability = 1;
};

inline SyncErrorRate block_sync_error_rate(std::span<const FrameResult> results, std::uint64_t frames_sent) {
  if (frames_sent == 0) throw InvalidInput("block_sync_error_rate: frames_sent must be > 0");
  detail::require(frames_sent >= results.size(), "block_sync_error_rate: more results than frames sent");
  const auto t = account_frames(results, frames_sent);
  const double p = static_cast<double>(t.dropped) / static_cast<double>(frames_sent);
  return {p, 1.0 - p};
}

/// Payload bytes per second delivered when every lost block is resent.
inline double effective_throughput(double baud, const UartConfig& cfg, const FrameSpec& spec, double p_bse) {
  detail::require(p_bse >= 0 && p_bse <= 1, "p_bse must lie in [0, 1]");
  detail::require(baud > 0, "baud must be > 0");
  const double chars = baud / cfg.bits_per_char();
  return chars * static_cast<double>(spec.payload_len) / static_cast<double>(spec.total_length()) * (1.0 - p_bse);
}

}  // namespace vlcsim

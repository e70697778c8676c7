#include <gtest/gtest.h>

#include <cmath>

#include "vlcsim/engine.hpp"
#include "vlcsim/framing.hpp"

using namespace vlcsim;

namespace {

LinkSetup base_setup(double baud = 50e3, std::int64_t sync = 1, std::int64_t payload = 200) {
  LinkSetup s;
  s.uart.baud = baud;
  s.frame.sync_len = sync;
  s.frame.payload_len = payload;
  return s;
}

template <class E>
std::vector<std::uint8_t> run_engine(const LinkSetup& s, std::uint64_t seed, std::uint64_t frames, std::uint64_t step = 3) {
  E e(s, seed);
  for (std::uint64_t k = step; k < frames; k += step) e.advance(k);
  e.advance(frames);
  e.finish();
  return e.output();
}

std::vector<std::uint8_t> expected_stream(const FrameSpec& spec, std::uint64_t frames) {
  std::vector<std::uint8_t> out;
  const auto payload = make_payload(spec);
  for (std::uint64_t k = 0; k < frames; ++k) {
    const auto f = build_frame(spec, payload, k);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

struct Counts {
  FrameTally tally;
  double frac(std::uint64_t x) const { return static_cast<double>(x) / static_cast<double>(tally.frames_sent); }
};

template <class E>
Counts noisy_counts(const LinkSetup& s, std::uint64_t seed, std::uint64_t frames) {
  const auto out = run_engine<E>(s, seed, frames, 50);
  return {account_frames(detect_frames(out, s.frame, frames), frames)};
}

// Pooled two-proportion z score.
double z_score(std::uint64_t k1, std::uint64_t k2, std::uint64_t n) {
  const double p1 = static_cast<double>(k1) / static_cast<double>(n), p2 = static_cast<double>(k2) / static_cast<double>(n);
  const double pool = (p1 + p2) / 2;
  const double se = std::sqrt(pool * (1 - pool) * 2.0 / static_cast<double>(n));
  return se == 0 ? 0.0 : (p1 - p2) / se;
}

}  // namespace

TEST(WaveformEngine, CleanLineDeliversFrames) {
  const auto s = base_setup();
  EXPECT_EQ(run_engine<WaveformEngine>(s, 1, 7), expected_stream(s.frame, 7));
}

TEST(EventEngine, CleanLineDeliversFrames) {
  const auto s = base_setup();
  EXPECT_EQ(run_engine<EventEngine>(s, 1, 7), expected_stream(s.frame, 7));
}

// The waveform engine draws one noise value per sample in order, so chunking
// cannot change its output. The event engine only promises the same law: an
// exact step cut short by `end` redraws its reads on the next call.
TEST(WaveformEngine, AdvanceGranularityDoesNotMatter) {
  auto s = base_setup(100e3, 2, 100);
  s.sigma = 0.5 / std::sqrt(std::pow(10.0, 1.1));
  EXPECT_EQ(run_engine<WaveformEngine>(s, 4, 60, 1), run_engine<WaveformEngine>(s, 4, 60, 7));
}

TEST(EventEngine, AdvanceGranularityDoesNotMatterWithoutNoise) {
  auto s = base_setup(1e6, 2, 100);
  s.front_end.rise_bandwidth = 80e3;
  EXPECT_EQ(run_engine<EventEngine>(s, 4, 60, 1), run_engine<EventEngine>(s, 4, 60, 7));
}

TEST(EventEngine, SameChunkingIsReproducible) {
  auto s = base_setup(100e3, 2, 100);
  s.sigma = 0.5 / std::sqrt(std::pow(10.0, 1.1));
  EXPECT_EQ(run_engine<EventEngine>(s, 4, 60, 7), run_engine<EventEngine>(s, 4, 60, 7));
}

TEST(EventEngine, RejectsHysteresis) {
  auto s = base_setup();
  s.front_end.hysteresis = 0.1;
  EXPECT_THROW(EventEngine(s, 1), InvalidInput);
}

class NoiselessDualRoute : public ::testing::TestWithParam<std::tuple<double, double, std::int64_t, std::int64_t, int>> {};

// Without noise both engines are deterministic and must agree sample for
// sample, including distorted and skewed links where the output is garbled.
TEST_P(NoiselessDualRoute, IdenticalOutput) {
  const auto [baud, rise, skew, sync, oversample] = GetParam();
  auto s = base_setup(baud, sync, 150);
  s.front_end.rise_bandwidth = rise;
  s.skew_ppm = skew;
  s.uart.oversample = oversample;
  const auto wave = run_engine<WaveformEngine>(s, 9, 25);
  const auto event = run_engine<EventEngine>(s, 9, 25);
  EXPECT_EQ(wave, event);
  EXPECT_FALSE(wave.empty());
}

INSTANTIATE_TEST_SUITE_P(
    Links, NoiselessDualRoute,
    ::testing::Values(std::make_tuple(10e3, 0.0, 0, 1, 16), std::make_tuple(250e3, 0.0, 0, 5, 16),
                      std::make_tuple(1e6, 0.0, 0, 10, 16), std::make_tuple(1e6, 80e3, 0, 1, 16),
                      std::make_tuple(750e3, 80e3, 0, 5, 16), std::make_tuple(500e3, 2e5, 20000, 1, 16),
                      std::make_tuple(100e3, 0.0, -30000, 3, 16), std::make_tuple(100e3, 0.0, 70000, 1, 16),
                      std::make_tuple(1e6, 80e3, -60000, 2, 8), std::make_tuple(50e3, 0.0, 0, 1, 5)));

TEST(EventEngine, CleanDistortionFreeMatchesTransmitted) {
  for (double baud : {10e3, 100e3, 300e3}) {
    const auto s = base_setup(baud, 5, 120);
    EXPECT_EQ(run_engine<EventEngine>(s, 2, 12), expected_stream(s.frame, 12)) << baud;
  }
}

TEST(EventEngine, ComparatorOffsetStillExactWithoutNoise) {
  auto s = base_setup(1e6, 1, 100);
  s.front_end.rise_bandwidth = 80e3;
  s.front_end.comparator_ref = 0.2;
  EXPECT_EQ(run_engine<WaveformEngine>(s, 3, 20), run_engine<EventEngine>(s, 3, 20));
}

TEST(EventEngine, TemplateIsPeriodic) {
  const auto s = base_setup(1e6, 1, 100);
  EventEngine e(s, 1);
  EXPECT_EQ(e.template_waveform().size(), (s.frame.total_length() * 10) * 16);
}

class NoisyDualRoute : public ::testing::TestWithParam<std::tuple<double, double, std::int64_t, double>> {};

// With noise the two engines draw different random numbers, so only the
// frame statistics are compared. Points sit where frame outcomes are close to
// independent; deep in the loss region clean frames come in bursts and a
// binomial z score overstates the evidence.
TEST_P(NoisyDualRoute, StatisticsAgree) {
  const auto [baud, snr_db, sync, rise] = GetParam();
  auto s = base_setup(baud, sync, 300);
  s.front_end.rise_bandwidth = rise;
  s.sigma = 0.5 / std::sqrt(std::pow(10.0, snr_db / 10));
  const std::uint64_t n = 1500;
  const auto a = noisy_counts<WaveformEngine>(s, 31, n);
  const auto b = noisy_counts<EventEngine>(s, 32, n);
  ASSERT_TRUE(a.tally.balanced());
  ASSERT_TRUE(b.tally.balanced());
  EXPECT_LT(std::abs(z_score(a.tally.dropped, b.tally.dropped, n)), 4.0);
  EXPECT_LT(std::abs(z_score(a.tally.clean, b.tally.clean, n)), 4.0);
  EXPECT_LT(std::abs(z_score(a.tally.substituted, b.tally.substituted, n)), 4.0);
}

INSTANTIATE_TEST_SUITE_P(Links, NoisyDualRoute,
                         ::testing::Values(std::make_tuple(50e3, 12.0, 1, 0.0), std::make_tuple(50e3, 12.0, 5, 0.0),
                                           std::make_tuple(100e3, 12.5, 1, 0.0), std::make_tuple(250e3, 14.0, 10, 0.0),
                                           std::make_tuple(1e6, 16.0, 1, 80e3), std::make_tuple(500e3, 9.0, 5, 0.0)));

TEST(EventEngine, BulkPathCarriesMostSteps) {
  auto s = base_setup(50e3, 1, 1000);
  s.sigma = 0.5 / std::sqrt(std::pow(10.0, 1.6));
  EventEngine e(s, 5);
  e.advance(200);
  e.finish();
  EXPECT_GT(e.bulk_steps(), 10 * e.exact_steps());
}

TEST(Engines, ReceiverFrameTracksTransmitter) {
  const auto s = base_setup(50e3, 1, 100);
  EventEngine e(s, 1);
  WaveformEngine w(s, 1);
  e.advance(10);
  w.advance(10);
  EXPECT_GE(e.receiver_frame(), 8u);
  EXPECT_LE(e.receiver_frame(), 10u);
  EXPECT_GE(w.receiver_frame(), 8u);
  EXPECT_LE(w.receiver_frame(), 10u);
  EXPECT_EQ(e.frame_start(3), w.frame_start(3));
}

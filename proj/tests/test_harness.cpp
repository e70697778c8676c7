#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "vlcsim/harness.hpp"

using namespace vlcsim;

namespace {

SweepConfig small_config() {
  SweepConfig c;
  c.bauds = {50e3, 250e3};
  c.snrs_db = {11, 14};
  c.frame_lengths = {203};
  c.sync_lengths = {1, 5};
  c.stop = {300, 40, 150};
  c.seed = 42;
  return c;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char ch : s) n += ch == '\n';
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct CliRun {
  int status = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const auto tmp = std::filesystem::temp_directory_path() / ("vlcsim_cli_" + std::to_string(std::rand()) + ".txt");
  const std::string cmd = std::string(VLCSIM_CLI_PATH) + " " + args + " > " + tmp.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CliRun r;
  r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(tmp);
  std::filesystem::remove(tmp);
  return r;
}

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

}  // namespace

TEST(Points, EnumerationOrderAndCount) {
  const auto c = small_config();
  const auto pts = enumerate_points(c);
  ASSERT_EQ(pts.size(), 8u);
  EXPECT_EQ(pts[0].baud, 50e3);
  EXPECT_EQ(pts[0].snr_db, 11);
  EXPECT_EQ(pts[1].sync_len, 5);
  EXPECT_EQ(pts[2].snr_db, 14);
  EXPECT_EQ(pts[4].baud, 250e3);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(pts[i].index, i);
}

TEST(Points, SeedsDifferAcrossPoints) {
  const auto pts = enumerate_points(small_config());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) EXPECT_NE(point_seed(1, pts[i]), point_seed(1, pts[j]));
  EXPECT_NE(point_seed(1, pts[0]), point_seed(2, pts[0]));
}

TEST(OperatingPoint, SnrModeLevels) {
  SweepConfig c;
  SweepPoint p;
  p.snr_db = 10;
  const auto op = operating_point(c, p);
  EXPECT_EQ(op.v_on, 1.0);
  EXPECT_EQ(op.v_off, 0.0);
  EXPECT_NEAR(op.sigma, 0.5 / std::sqrt(10.0), 1e-15);
  EXPECT_EQ(op.ref, 0.5);
}

TEST(OperatingPoint, DistanceModeUsesLinkBudget) {
  SweepConfig c;
  c.snrs_db.clear();
  c.distances_m = {0.2};
  c.channel.noise_power = 1e-12;
  SweepPoint p;
  p.distance_m = 0.2;
  const auto op = operating_point(c, p);
  EXPECT_NEAR(op.snr, snr_at_distance(0.2, c.channel), 1e-9 * op.snr);
  // m = 1 at 60 degrees, on axis: A / (pi d^2)
  EXPECT_NEAR(op.v_on, 1e-6 / (std::numbers::pi * 0.2 * 0.2), 1e-18);
}

TEST(RunPoint, HighSnrEndsOnCleanRun) {
  SweepConfig c;
  c.stop = {50000, 100, 400};
  SweepPoint p;
  p.baud = 10e3;
  p.snr_db = 30;
  p.frame_len = 1003;
  p.sync_len = 1;
  const auto r = run_point(c, p);
  EXPECT_EQ(r.stop_reason, "clean_run");
  EXPECT_EQ(r.frames_sent, 400u);
  EXPECT_EQ(r.p_bse, 0.0);
  EXPECT_EQ(r.clean + r.substituted + r.dropped, r.frames_sent);
}

TEST(RunPoint, ZeroDbAtOneMegabaudEndsOnErrors) {
  SweepConfig c;
  SweepPoint p;
  p.baud = 1e6;
  p.snr_db = 0;
  p.frame_len = 1003;
  p.sync_len = 1;
  const auto r = run_point(c, p);
  EXPECT_EQ(r.stop_reason, "errors");
  EXPECT_GT(r.p_bse, 0.9);
  EXPECT_EQ(r.clean + r.substituted + r.dropped, r.frames_sent);
  EXPECT_EQ(r.histogram.total, r.frames_sent);
}

TEST(RunPoint, MaxFramesCap) {
  SweepConfig c;
  c.stop = {120, 1000000, 1000000};
  SweepPoint p;
  p.baud = 50e3;
  p.snr_db = 14;
  p.frame_len = 103;
  p.sync_len = 1;
  const auto r = run_point(c, p);
  EXPECT_EQ(r.stop_reason, "max_frames");
  EXPECT_EQ(r.frames_sent, 120u);
}

TEST(RunPoint, InfeasibleSampleRateIsSkipped) {
  SweepConfig c;
  c.max_sample_rate = 1e6;
  SweepPoint p;
  p.baud = 250e3;
  p.snr_db = 10;
  p.frame_len = 1003;
  p.sync_len = 1;
  const auto r = run_point(c, p);
  EXPECT_FALSE(r.ok());
  EXPECT_NE(r.status.find("skipped"), std::string::npos);
}

TEST(RunPoint, WaveformAndEventEnginesAgreeWithoutNoise) {
  SweepConfig c;
  c.stop = {60, 100, 50};
  SweepPoint p;
  p.baud = 1e6;
  p.snr_db = std::numeric_limits<double>::infinity();
  p.frame_len = 203;
  p.sync_len = 2;
  c.front_end.rise_bandwidth = 80e3;
  auto cw = c;
  cw.engine = EngineChoice::waveform;
  auto ce = c;
  ce.engine = EngineChoice::event;
  auto a = run_point(cw, p);
  auto b = run_point(ce, p);
  EXPECT_EQ(a.engine, "waveform");
  EXPECT_EQ(b.engine, "event");
  a.engine = b.engine;
  EXPECT_EQ(a, b);
}

TEST(RunSweep, Deterministic) {
  const auto c = small_config();
  EXPECT_EQ(to_csv(run_sweep(c)), to_csv(run_sweep(c)));
}

TEST(RunSweep, WorkerCountDoesNotChangeResults) {
  auto c = small_config();
  const auto one = to_csv(run_sweep(c));
  c.workers = 3;
  EXPECT_EQ(to_csv(run_sweep(c)), one);
}

TEST(RunSweep, PointsAreIndependent) {
  auto c = small_config();
  const auto full = run_sweep(c);
  c.bauds = {250e3};
  const auto part = run_sweep(c);
  ASSERT_EQ(part.points.size(), 4u);
  for (std::size_t i = 0; i < part.points.size(); ++i) {
    auto a = full.points[4 + i];
    auto b = part.points[i];
    a.point.index = b.point.index;
    EXPECT_EQ(a, b) << i;
  }
}

TEST(RunSweep, SinglePointMatchesRunPoint) {
  auto c = small_config();
  c.bauds = {50e3};
  c.snrs_db = {11};
  c.sync_lengths = {5};
  const auto rep = run_sweep(c);
  ASSERT_EQ(rep.points.size(), 1u);
  EXPECT_EQ(rep.points[0], run_point(c, enumerate_points(c)[0]));
}

TEST(RunSweep, AccountingHoldsEverywhere) {
  for (const auto& r : run_sweep(small_config()).points) {
    EXPECT_EQ(r.clean + r.substituted + r.dropped, r.frames_sent);
    std::uint64_t bins = 0;
    for (auto v : r.capped_bins()) bins += v;
    EXPECT_EQ(bins + r.dropped, r.frames_sent);
  }
}

TEST(Report, EmptySweepIsHeaderOnly) {
  const SweepReport rep;
  EXPECT_EQ(to_csv(rep), csv_header() + "\n");
}

TEST(Report, CsvRowPerPointAndColumnCount) {
  const auto rep = run_sweep(small_config());
  const auto csv = to_csv(rep);
  EXPECT_EQ(count_lines(csv), rep.points.size() + 1);
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  const auto cols = std::count(line.begin(), line.end(), ',');
  EXPECT_NE(line.find("hist_b50,duty_pos_pct,seed"), std::string::npos);
  while (std::getline(ss, line)) EXPECT_EQ(std::count(line.begin(), line.end(), ','), cols);
}

TEST(Report, HistogramOverflowBin) {
  PointResult r;
  r.histogram.add_received(3);
  r.histogram.add_received(49);
  r.histogram.add_received(50);
  r.histogram.add_received(812);
  const auto b = r.capped_bins();
  EXPECT_EQ(b[3], 1u);
  EXPECT_EQ(b[49], 1u);
  EXPECT_EQ(b[50], 2u);
}

TEST(Report, JsonRoundTrip) {
  auto c = small_config();
  c.timing = true;
  const auto rep = run_sweep(c);
  const auto back = report_from_json(to_json_text(rep));
  ASSERT_EQ(back.points.size(), rep.points.size());
  for (std::size_t i = 0; i < rep.points.size(); ++i) EXPECT_EQ(back.points[i], rep.points[i]) << i;
  EXPECT_EQ(to_json_text(back), to_json_text(rep));
}

TEST(Report, JsonRoundTripKeepsSkippedAndDistance) {
  SweepConfig c;
  c.bauds = {1e6};
  c.snrs_db.clear();
  c.distances_m = {0.1};
  c.channel.noise_power = 1e-12;
  c.max_sample_rate = 1e6;
  c.frame_lengths = {103};
  c.sync_lengths = {1};
  const auto rep = run_sweep(c);
  const auto back = report_from_json(to_json_text(rep));
  EXPECT_EQ(back.points[0], rep.points[0]);
  EXPECT_FALSE(back.points[0].ok());
}

TEST(Report, MalformedJsonIsConfigError) {
  EXPECT_THROW(report_from_json("{\"points\": [ {\"baud_hz\": \"x\"} ]}"), ConfigError);
  EXPECT_THROW(report_from_json("not json"), ConfigError);
}

TEST(Report, UnwritablePathFailsEarly) {
  EXPECT_THROW(probe_writable("/nonexistent-dir/x/report.csv"), ConfigError);
  EXPECT_THROW(write_text_file("/nonexistent-dir/x/report.csv", "a"), ConfigError);
}

TEST(Config, ParsesEveryFieldKind) {
  const auto c = parse_config(
      "# comment\n"
      "bauds = 10000, 50000\n"
      "snrs_db = 3, 6.5  # trailing\n"
      "frame_lengths = 1003\n"
      "sync_lengths = 1,5,10\n"
      "uart.parity = even\n"
      "uart.skew_ppm = -2000\n"
      "frame.sync_symbol = $\n"
      "channel.include_nlos = true\n"
      "front_end.comparator_ref = 0.4\n"
      "stop.max_sim_frames = 77\n"
      "seed = 9\n"
      "workers = 2\n"
      "format = json\n"
      "engine = waveform\n");
  EXPECT_EQ(c.bauds, (std::vector<double>{1e4, 5e4}));
  EXPECT_EQ(c.snrs_db, (std::vector<double>{3, 6.5}));
  EXPECT_EQ(c.sync_lengths, (std::vector<std::int64_t>{1, 5, 10}));
  EXPECT_EQ(c.uart.parity, Parity::even);
  EXPECT_EQ(c.skew_ppm, -2000);
  EXPECT_EQ(c.frame.sync_symbol, '$');
  EXPECT_TRUE(c.include_nlos);
  EXPECT_EQ(c.comparator_ref, 0.4);
  EXPECT_EQ(c.stop.max_sim_frames, 77u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.workers, 2);
  EXPECT_EQ(c.format, "json");
  EXPECT_EQ(c.engine, EngineChoice::waveform);
}

TEST(Config, DistanceListReplacesSnrAxis) {
  const auto c = parse_config("distances_m = 0.1, 0.2\nchannel.noise_power = 1e-12\n");
  EXPECT_TRUE(c.snrs_db.empty());
  EXPECT_TRUE(c.distance_mode());
  EXPECT_THROW(parse_config("distances_m = 0.1\nsnrs_db = 3\n"), ConfigError);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("bauds 100"), ConfigError);
  EXPECT_THROW(parse_config("nonsense = 1"), ConfigError);
  EXPECT_THROW(parse_config("bauds = fast"), ConfigError);
  EXPECT_THROW(parse_config("bauds = -5"), ConfigError);
  EXPECT_THROW(parse_config("bauds = "), ConfigError);
  EXPECT_THROW(parse_config("frame_lengths = 3"), ConfigError);
  EXPECT_THROW(parse_config("sync_lengths = 0"), ConfigError);
  EXPECT_THROW(parse_config("uart.parity = sometimes"), ConfigError);
  EXPECT_THROW(parse_config("uart.data_bits = 9"), ConfigError);
  EXPECT_THROW(parse_config("workers = 0"), ConfigError);
  EXPECT_THROW(parse_config("stop.max_sim_frames = 0"), ConfigError);
  EXPECT_THROW(parse_config("format = xml"), ConfigError);
  EXPECT_THROW(parse_config("engine = quantum"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/sweep.cfg"), ConfigError);
  try {
    parse_config("seed = 1\nbauds = x\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Config, ShippedDefaultMatchesBuiltInGrid) {
  const auto c = load_config(std::string(VLCSIM_CONFIG_DIR) + "/default.cfg");
  const SweepConfig d;
  EXPECT_EQ(c.bauds, d.bauds);
  EXPECT_EQ(c.snrs_db, d.snrs_db);
  EXPECT_EQ(c.frame_lengths, d.frame_lengths);
  EXPECT_EQ(c.sync_lengths, d.sync_lengths);
  EXPECT_EQ(enumerate_points(c).size(), 378u);
}

TEST(ComparatorStudy, LoweringRefRaisesDuty) {
  RxFrontEnd fe;
  fe.rise_bandwidth = 80e3;
  const auto st = comparator_study(1e6, 24, fe, 20, 1000);
  ASSERT_EQ(st.sweep.size(), 20u);
  EXPECT_NEAR(st.sweep.front().ref, st.midpoint, 1e-15);
  EXPECT_LT(st.sweep.front().positive_pct, 30.0);
  for (std::size_t i = 1; i < st.sweep.size(); ++i) {
    EXPECT_LT(st.sweep[i].ref, st.sweep[i - 1].ref);
    EXPECT_GE(st.sweep[i].positive_pct, st.sweep[i - 1].positive_pct);
  }
}

TEST(Cli, CalcSubcommands) {
  auto r = cli("calc m --half-angle 60");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("m = 1"), std::string::npos);
  r = cli("calc ber --snr 9");
  EXPECT_NE(r.out.find("ber = 0.0013498980316300"), std::string::npos) << r.out;
  r = cli("calc dmax --w 0.35 --alpha-plus-beta 60 --theta-max 60");
  EXPECT_NE(r.out.find("d_max_m = 0.2020725942163"), std::string::npos) << r.out;
  r = cli("calc pfail --n-sync 1 --n-payload 1002 --p-s 1e-4");
  EXPECT_NE(r.out.find("pfail = 0.000492941176470"), std::string::npos) << r.out;
  r = cli("calc snr-est --vmin0 0.1 --vmax0 2.0 --vmin1 0.3 --vmax1 2.4");
  EXPECT_NE(r.out.find("snr = 133.5"), std::string::npos) << r.out;
  EXPECT_EQ(cli("calc hlos --d 0.15 --theta 20 --psi 20").status, 0);
  EXPECT_EQ(cli("calc hnlos --rho 0").status, 0);
}

TEST(Cli, ErrorsAreNonzero) {
  EXPECT_EQ(cli("simulate --config /nonexistent/x.cfg").status, 2);
  EXPECT_EQ(cli("calc ber --snr -1").status, 1);
  EXPECT_NE(cli("calc").status, 0);
  const auto cfg = write_temp("vlcsim_cli_bad.cfg", "bauds = 1000\n");
  EXPECT_EQ(cli("simulate --config " + cfg.string() + " --out /nonexistent-dir/r.csv").status, 2);
}

TEST(Cli, SimulateWritesCsvAndJson) {
  const auto cfg = write_temp("vlcsim_cli_small.cfg",
                              "bauds = 100000\nsnrs_db = 12, 24\nframe_lengths = 103\nsync_lengths = 1\n"
                              "stop.max_sim_frames = 200\nseed = 5\n");
  const auto out = std::filesystem::temp_directory_path() / "vlcsim_cli_small.csv";
  auto r = cli("simulate --config " + cfg.string() + " --out " + out.string());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto csv = slurp(out);
  EXPECT_EQ(count_lines(csv), 3u);
  EXPECT_EQ(csv, to_csv(run_sweep(load_config(cfg.string()))));
  r = cli("simulate --config " + cfg.string() + " --format json");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(report_from_json(r.out).points.size(), 2u);
  std::filesystem::remove(out);
}

TEST(Cli, DutyPrintsSweep) {
  const auto r = cli("duty --baud 1000000 --snr-db 24 --steps 5 --chars 300");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(count_lines(r.out), 7u);
}

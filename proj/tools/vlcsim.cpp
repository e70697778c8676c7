#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vlcsim/vlcsim.hpp"

namespace {

using vlcsim::detail::fmt_double;

void print(const std::string& name, double v) { std::cout << name << " = " << fmt_double(v) << "\n"; }

double snr_from(std::optional<double> snr, std::optional<double> snr_db) {
  if (snr && snr_db) throw vlcsim::InvalidInput("give either --snr or --snr-db, not both");
  if (snr) return *snr;
  if (snr_db) return vlcsim::db_to_linear(*snr_db);
  throw vlcsim::InvalidInput("one of --snr or --snr-db is required");
}

struct Geometry {
  vlcsim::ChannelParams p;

  void add(CLI::App* app, bool nlos) {
    app->add_option("--area-rx", p.area_rx, "photodiode collection area, m^2")->capture_default_str();
    app->add_option("--half-angle", p.half_angle, "transmitter half-power semi-angle, degrees")->capture_default_str();
    app->add_option("--theta", p.theta, "irradiance angle, degrees")->capture_default_str();
    app->add_option("--psi", p.psi, "incidence angle, degrees")->capture_default_str();
    if (!nlos) {
      app->add_option("--psi-c", p.psi_c, "receiver field of view, degrees")->capture_default_str();
      app->add_option("--d", p.d, "distance, m")->capture_default_str();
    } else {
      app->add_option("--d1", p.d1, "transmitter to reflector, m")->capture_default_str();
      app->add_option("--d2", p.d2, "reflector to receiver, m")->capture_default_str();
      app->add_option("--alpha", p.alpha, "irradiance angle at reflector, degrees")->capture_default_str();
      app->add_option("--beta", p.beta, "incidence angle at reflector, degrees")->capture_default_str();
      app->add_option("--area-reflector", p.area_reflector, "reflector patch area, m^2")->capture_default_str();
      app->add_option("--rho", p.rho, "reflection coefficient")->capture_default_str();
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"On-off keyed serial link simulator"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run a parameter sweep from a config file");
  std::string config_path, format, out_path, engine;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  bool timing = false;
  sim->add_option("--config", config_path, "sweep config (key = value)")->required();
  sim->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  sim->add_option("--workers", workers, "worker threads");
  sim->add_option("--seed", seed, "base seed");
  sim->add_option("--out", out_path, "output file (stdout if omitted)");
  sim->add_option("--engine", engine, "auto, event or waveform")->check(CLI::IsMember({"auto", "event", "waveform"}));
  sim->add_flag("--timing", timing, "include per-point wall time in JSON output");

  // calc
  auto* calc = app.add_subcommand("calc", "evaluate one closed-form expression");
  calc->require_subcommand(1);
  std::optional<double> snr, snr_db;
  auto add_snr = [&](CLI::App* c) {
    c->add_option("--snr", snr, "linear SNR");
    c->add_option("--snr-db", snr_db, "SNR in dB");
  };
  auto* c_ber = calc->add_subcommand("ber", "OOK bit error probability");
  add_snr(c_ber);
  auto* c_ser = calc->add_subcommand("ser", "8-bit character error probability");
  add_snr(c_ser);

  vlcsim::SyncProbabilityInputs sync_in;
  auto add_sync = [&](CLI::App* c) {
    c->add_option("--n-sync", sync_in.n_sync, "sync symbols per frame")->required();
    c->add_option("--n-payload", sync_in.n_payload, "payload symbols per frame")->required();
    c->add_option("--p-s", sync_in.p_s, "symbol crossover probability")->required();
    c->add_option("--alphabet", sync_in.alphabet_size, "alphabet size")->capture_default_str();
  };
  auto* c_pfail = calc->add_subcommand("pfail", "probability a frame loses sync");
  add_sync(c_pfail);
  auto* c_perr = calc->add_subcommand("perr", "probability of a false sync");
  add_sync(c_perr);

  Geometry g_los, g_nlos;
  auto* c_hlos = calc->add_subcommand("hlos", "line-of-sight channel gain");
  g_los.add(c_hlos, false);
  auto* c_hnlos = calc->add_subcommand("hnlos", "first-reflection channel gain");
  g_nlos.add(c_hnlos, true);

  double w = 0, apb = 0, theta_max = 0;
  auto* c_dmax = calc->add_subcommand("dmax", "largest reflection-free spacing");
  c_dmax->add_option("--w", w, "enclosure width, m")->required();
  c_dmax->add_option("--alpha-plus-beta", apb, "alpha + beta, degrees")->required();
  c_dmax->add_option("--theta-max", theta_max, "maximum irradiance angle, degrees")->required();

  double half_angle = 60;
  auto* c_m = calc->add_subcommand("m", "Lambertian order");
  c_m->add_option("--half-angle", half_angle, "half-power semi-angle, degrees")->required();

  double vmin0 = 0, vmax0 = 0, vmin1 = 0, vmax1 = 0;
  auto* c_est = calc->add_subcommand("snr-est", "SNR from four scope readings");
  c_est->add_option("--vmin0", vmin0)->required();
  c_est->add_option("--vmax0", vmax0)->required();
  c_est->add_option("--vmin1", vmin1)->required();
  c_est->add_option("--vmax1", vmax1)->required();

  Geometry g_dist;
  double max_distance = 100;
  auto* c_dist = calc->add_subcommand("distance", "spacing that yields a target SNR");
  add_snr(c_dist);
  c_dist->add_option("--area-rx", g_dist.p.area_rx)->capture_default_str();
  c_dist->add_option("--half-angle", g_dist.p.half_angle)->capture_default_str();
  c_dist->add_option("--tx-power", g_dist.p.tx_power)->capture_default_str();
  c_dist->add_option("--responsivity-gain", g_dist.p.responsivity_gain)->capture_default_str();
  c_dist->add_option("--noise-power", g_dist.p.noise_power)->required();
  c_dist->add_option("--max-distance", max_distance)->capture_default_str();

  // duty
  auto* duty = app.add_subcommand("duty", "comparator reference study");
  double d_baud = 1e6, d_snr_db = 24;
  vlcsim::RxFrontEnd d_fe;
  d_fe.rise_bandwidth = 80e3;
  int d_steps = 20;
  std::size_t d_chars = 2000;
  std::uint64_t d_seed = 7;
  duty->add_option("--baud", d_baud, "baud rate")->required();
  duty->add_option("--snr-db", d_snr_db, "SNR in dB")->required();
  duty->add_option("--tia-bandwidth", d_fe.tia_bandwidth, "falling-edge corner, Hz")->capture_default_str();
  duty->add_option("--rise-bandwidth", d_fe.rise_bandwidth, "rising-edge corner, Hz (0 = symmetric)")->capture_default_str();
  duty->add_option("--steps", d_steps, "reference steps")->capture_default_str();
  duty->add_option("--chars", d_chars, "payload characters")->capture_default_str();
  duty->add_option("--seed", d_seed, "payload and noise seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      auto cfg = vlcsim::load_config(config_path);
      if (!format.empty()) cfg.format = format;
      if (workers) cfg.workers = *workers;
      if (seed) cfg.seed = *seed;
      if (!out_path.empty()) cfg.output = out_path;
      if (timing) cfg.timing = true;
      if (engine == "event") cfg.engine = vlcsim::EngineChoice::event;
      else if (engine == "waveform") cfg.engine = vlcsim::EngineChoice::waveform;
      else if (engine == "auto") cfg.engine = vlcsim::EngineChoice::automatic;
      cfg.validate();
      if (!cfg.output.empty()) vlcsim::probe_writable(cfg.output);
      const auto rep = vlcsim::run_sweep(cfg);
      const auto text = vlcsim::emit_report(rep, cfg.format);
      if (cfg.output.empty()) std::cout << text;
      else vlcsim::write_text_file(cfg.output, text);
      return 0;
    }
    if (*c_ber) print("ber", vlcsim::ber_ook(snr_from(snr, snr_db)));
    else if (*c_ser) {
      const double s = snr_from(snr, snr_db);
      print("ser", vlcsim::ser_ttl(s));
      print("ser_raw", vlcsim::ser_ttl_raw(s));
    } else if (*c_pfail) {
      print("pfail", vlcsim::p_fail(sync_in));
      print("pfail_raw", vlcsim::p_fail_raw(sync_in));
    } else if (*c_perr) {
      print("perr", vlcsim::p_err(sync_in));
      print("perr_raw", vlcsim::p_err_raw(sync_in));
    } else if (*c_hlos) print("h_los", vlcsim::h_los(g_los.p));
    else if (*c_hnlos) print("h_nlos", vlcsim::h_nlos(g_nlos.p));
    else if (*c_dmax) print("d_max_m", vlcsim::max_los_distance(w, apb, theta_max));
    else if (*c_m) print("m", vlcsim::lambertian_order(half_angle));
    else if (*c_est) {
      const auto e = vlcsim::estimate_snr(vmin0, vmax0, vmin1, vmax1);
      print("p_noise", e.p_noise);
      print("p_signal_noise", e.p_signal_noise);
      print("p_signal", e.p_signal);
      print("snr", e.linear);
      print("snr_db", e.db);
      if (e.noise_free) std::cout << "noise_free = true\n";
    } else if (*c_dist) {
      print("distance_m", vlcsim::snr_to_distance(snr_from(snr, snr_db), g_dist.p, max_distance));
    } else if (*duty) {
      const auto st = vlcsim::comparator_study(d_baud, d_snr_db, d_fe, d_steps, d_chars, d_seed);
      std::cout << "# waveform min " << fmt_double(st.wave_min) << " V, max " << fmt_double(st.wave_max)
                << " V, midpoint " << fmt_double(st.midpoint) << " V\n";
      std::cout << "ref_v,positive_duty_pct,negative_duty_pct\n";
      for (const auto& d : st.sweep)
        std::cout << fmt_double(d.ref) << "," << fmt_double(d.positive_pct) << "," << fmt_double(100 - d.positive_pct)
                  << "\n";
    }
  } catch (const vlcsim::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const vlcsim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// Command-line front end: scenario simulation, single-run detection, chart
// calibration, batch experiments and case inspection. Every subcommand
// prints its seed and a canonical config hash, and all output is
// byte-reproducible for a fixed seed.
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "linewatch/experiment.hpp"
#include "linewatch/measurement.hpp"
#include "linewatch/mewma.hpp"
#include "linewatch/network.hpp"
#include "linewatch/particle_filter.hpp"
#include "linewatch/simulator.hpp"

namespace {

using namespace linewatch;

std::string strf(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

std::string fmt_g(double v) { return strf("%.17g", v); }

void print_header(std::uint64_t seed, const std::string& canonical) {
  std::printf("seed:        %llu\n", static_cast<unsigned long long>(seed));
  std::printf("config hash: %016llx\n", static_cast<unsigned long long>(fnv1a64(canonical)));
}

// Writes to the named file, or to stdout when the name is "-".
void write_text(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::fwrite(content.data(), 1, content.size(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error("failed to write " + path);
}

std::string join_ints(const std::vector<int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(xs[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string case_path;
  std::vector<int> lines;
  double onset_s = 3.0;
  double duration_s = 10.0;
  double dt = 1.0 / 30.0;
  double noise_scale = 1e-4;
  std::uint64_t seed = 0;
  std::string load_model = "impedance";
  std::string dump;
};

int run_simulate(const SimulateArgs& a) {
  std::string canon = "cmd=simulate\ncase=" + a.case_path + "\nlines=" + join_ints(a.lines) +
                      "\nonset_s=" + fmt_g(a.onset_s) + "\nduration_s=" + fmt_g(a.duration_s) +
                      "\ndt=" + fmt_g(a.dt) + "\nnoise_scale=" + fmt_g(a.noise_scale) +
                      "\nload_model=" + a.load_model +
                      strf("\nseed=%llu\n", static_cast<unsigned long long>(a.seed));
  print_header(a.seed, canon);

  const NetworkCase net = NetworkCase::parse_file(a.case_path);
  SimulationOptions opts;
  opts.dt = a.dt;
  opts.num_steps = static_cast<int>(std::lround(a.duration_s / a.dt));
  opts.process_noise_scale = a.noise_scale;
  opts.seed = a.seed;
  opts.load_model =
      a.load_model == "power" ? LoadModel::kConstantPower : LoadModel::kConstantImpedance;
  if (!a.lines.empty()) {
    opts.outage_ids = a.lines;
    opts.onset_step = static_cast<int>(std::lround(a.onset_s / a.dt));
  }
  const Trajectory traj = simulate_scenario(net, opts);

  const int m = static_cast<int>(net.num_generators());
  std::printf("case:        %s (%d buses, %d branches, %d machines)\n", a.case_path.c_str(),
              net.size(), net.num_branches(), m);
  if (!a.lines.empty())
    std::printf("outage:      line(s) %s at sample %d (t=%s s)\n", join_ints(a.lines).c_str(),
                traj.onset_step, fmt_g(traj.onset_step * a.dt).c_str());
  else
    std::printf("outage:      none (ambient run)\n");
  const double max_dev = (traj.omega.array() - 1.0).abs().maxCoeff();
  const Eigen::ArrayXXd swing =
      (traj.delta.rowwise() - traj.delta.row(0)).array().abs();
  std::printf("samples:     %d at dt=%s s\n", traj.steps(), fmt_g(a.dt).c_str());
  std::printf("max |omega-1|:     %s p.u.\n", fmt_g(max_dev).c_str());
  std::printf("max |delta-delta0|: %s rad\n", fmt_g(swing.maxCoeff()).c_str());

  if (!a.dump.empty()) {
    std::string csv = "t";
    for (const Generator& g : net.generators()) csv += strf(",delta_%d", g.bus);
    for (const Generator& g : net.generators()) csv += strf(",omega_%d", g.bus);
    for (const Generator& g : net.generators()) csv += strf(",pg_%d", g.bus);
    for (const Bus& b : net.buses()) csv += strf(",v_%d", b.id);
    for (const Bus& b : net.buses()) csv += strf(",theta_%d", b.id);
    csv += "\n";
    for (int k = 0; k <= traj.steps(); ++k) {
      csv += fmt_g(k * a.dt);
      for (int j = 0; j < m; ++j) csv += "," + fmt_g(traj.delta(k, j));
      for (int j = 0; j < m; ++j) csv += "," + fmt_g(traj.omega(k, j));
      for (int j = 0; j < m; ++j) csv += "," + fmt_g(traj.pg(k, j));
      for (int i = 0; i < net.size(); ++i) csv += "," + fmt_g(traj.v_mag(k, i));
      for (int i = 0; i < net.size(); ++i) csv += "," + fmt_g(traj.v_ang(k, i));
      csv += "\n";
    }
    write_text(a.dump, csv);
    if (a.dump != "-") std::printf("trajectory:  %s\n", a.dump.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectArgs {
  std::string case_path;
  std::vector<int> lines;
  double onset_s = 3.0;
  double duration_s = 10.0;
  double dt = 1.0 / 30.0;
  double noise_scale = 1e-4;
  int particles = 2000;
  double lambda = 0.5;
  double threshold = 0.0;  // 0 = calibrate for arl0
  double arl0 = 1e4;
  int sigma_warmup = 60;
  int chart_warmup = 30;
  std::uint64_t seed = 0;
  std::string chart_out;
  std::string filter_out;
};

int run_detect(const DetectArgs& a) {
  std::string canon = "cmd=detect\ncase=" + a.case_path + "\nlines=" + join_ints(a.lines) +
                      "\nonset_s=" + fmt_g(a.onset_s) + "\nduration_s=" + fmt_g(a.duration_s) +
                      "\ndt=" + fmt_g(a.dt) + "\nnoise_scale=" + fmt_g(a.noise_scale) +
                      strf("\nparticles=%d", a.particles) + "\nlambda=" + fmt_g(a.lambda) +
                      "\nthreshold=" + fmt_g(a.threshold) + "\narl0=" + fmt_g(a.arl0) +
                      strf("\nsigma_warmup=%d\nchart_warmup=%d", a.sigma_warmup, a.chart_warmup) +
                      strf("\nseed=%llu\n", static_cast<unsigned long long>(a.seed));
  print_header(a.seed, canon);
  if (a.lines.size() > 1)
    throw Error("detect: at most one outage line (simultaneous outages not supported here)");

  const NetworkCase net = NetworkCase::parse_file(a.case_path);
  ExperimentConfig cfg;
  cfg.case_path = a.case_path;
  cfg.duration_s = a.duration_s;
  cfg.onset_s = a.onset_s;
  cfg.dt = a.dt;
  cfg.num_particles = a.particles;
  cfg.process_noise_scale = a.noise_scale;
  cfg.sigma_warmup_steps = a.sigma_warmup;
  cfg.chart_warmup_steps = a.chart_warmup;

  const int line_id = a.lines.empty() ? -1 : a.lines.front();
  const int dim = static_cast<int>(observable_buses(net).size());
  std::printf("case:        %s (%d output channels)\n", a.case_path.c_str(), dim);

  double threshold = a.threshold;
  if (threshold <= 0.0) {
    CalibrationOptions copt;
    copt.seed = kHarnessCalibrationSeed;
    const Calibration cal = calibrate_threshold(a.lambda, a.arl0, dim, copt);
    threshold = cal.threshold;
    std::printf("threshold:   %s (lambda %s, calibrated for ARL0 %s)\n", fmt_g(threshold).c_str(),
                fmt_g(a.lambda).c_str(), fmt_g(a.arl0).c_str());
  } else {
    std::printf("threshold:   %s (lambda %s, user-provided)\n", fmt_g(threshold).c_str(),
                fmt_g(a.lambda).c_str());
  }

  const ScenarioOutput sc = run_scenario(net, line_id, a.seed, cfg);
  if (sc.failed) throw Error("scenario failed: " + sc.fail_reason);

  const int onset_sample = line_id >= 0 ? static_cast<int>(std::lround(a.onset_s / a.dt)) : -1;
  const int onset_chart = line_id >= 0 ? onset_sample - a.sigma_warmup : -1;
  if (line_id >= 0)
    std::printf("scenario:    line %d outage at sample %d (t=%s s)\n", line_id, onset_sample,
                fmt_g(onset_sample * a.dt).c_str());
  else
    std::printf("scenario:    no outage (null run)\n");

  DetectOptions dopt;
  dopt.lambda = a.lambda;
  dopt.threshold = threshold;
  dopt.warmup_steps = a.chart_warmup;
  dopt.onset_step = onset_chart;
  dopt.dt = a.dt;
  const DetectionRecord rec = detect(sc.stream, sc.sigma_chart, dopt);

  std::string sigmas;
  for (int c = 0; c < sc.sigma_chart.size(); ++c)
    sigmas += (c ? " " : "") + fmt_g(sc.sigma_chart(c));
  std::printf("sigma_chart: %s\n", sigmas.c_str());
  if (rec.alarm_step >= 0) {
    const double t_alarm = (a.sigma_warmup + rec.alarm_step) * a.dt;
    std::printf("alarm:       chart step %d (t=%s s)\n", rec.alarm_step, fmt_g(t_alarm).c_str());
    if (onset_chart >= 0 && rec.alarm_step >= onset_chart)
      std::printf("delay:       %s s\n", fmt_g(rec.delay_s).c_str());
    else if (onset_chart >= 0)
      std::printf("delay:       alarm before onset\n");
  } else {
    std::printf("alarm:       none%s\n", line_id >= 0 ? " (outage missed)" : "");
  }
  std::printf("max T2:      %s\n", fmt_g(rec.t2.maxCoeff()).c_str());
  std::printf("ess min:     %s, resamples: %d\n", fmt_g(sc.ess_min).c_str(), sc.resamples);

  if (!a.chart_out.empty()) {
    std::string csv = "k,t,T2,H,alarm,group_gen,group_genbus,group_load\n";
    for (int s = 1; s <= rec.t2.size(); ++s) {
      const double t = (a.sigma_warmup + s) * a.dt;
      csv += strf("%d,", s) + fmt_g(t) + "," + fmt_g(rec.t2(s - 1)) + "," + fmt_g(threshold) +
             strf(",%d,", s == rec.alarm_step ? 1 : 0) + fmt_g(rec.group_gen(s - 1)) + "," +
             fmt_g(rec.group_genbus(s - 1)) + "," + fmt_g(rec.group_load(s - 1)) + "\n";
    }
    write_text(a.chart_out, csv);
    if (a.chart_out != "-") std::printf("chart csv:   %s\n", a.chart_out.c_str());
  }
  if (!a.filter_out.empty()) {
    std::string csv = "k,t,ess,resampled";
    for (int bus : sc.machine_buses) csv += strf(",delta_%d", bus);
    for (int bus : sc.machine_buses) csv += strf(",omega_%d", bus);
    csv += "\n";
    for (int k = 0; k < sc.ess_trace.size(); ++k) {
      csv += strf("%d,", k) + fmt_g(k * a.dt) + "," + fmt_g(sc.ess_trace(k)) +
             strf(",%d", sc.resampled[k]);
      for (int j = 0; j < sc.delta_mean.cols(); ++j) csv += "," + fmt_g(sc.delta_mean(k, j));
      for (int j = 0; j < sc.omega_mean.cols(); ++j) csv += "," + fmt_g(sc.omega_mean(k, j));
      csv += "\n";
    }
    write_text(a.filter_out, csv);
    if (a.filter_out != "-") std::printf("filter csv:  %s\n", a.filter_out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

struct CalibrateArgs {
  double lambda = 0.5;
  double arl0 = 1e4;
  int dim = 6;  // bundled case's observable channel count
  std::string case_path;
  int streams = 10000;
  double mc_max = 1e4;
  int warmup = 30;
  std::uint64_t seed = kHarnessCalibrationSeed;
};

int run_calibrate(const CalibrateArgs& a) {
  int dim = a.dim;
  if (!a.case_path.empty())
    dim = static_cast<int>(observable_buses(NetworkCase::parse_file(a.case_path)).size());
  std::string canon = "cmd=calibrate\nlambda=" + fmt_g(a.lambda) + "\narl0=" + fmt_g(a.arl0) +
                      strf("\ndim=%d\nstreams=%d", dim, a.streams) + "\nmc_max=" +
                      fmt_g(a.mc_max) + strf("\nwarmup=%d", a.warmup) +
                      strf("\nseed=%llu\n", static_cast<unsigned long long>(a.seed));
  print_header(a.seed, canon);

  CalibrationOptions opts;
  opts.num_streams = a.streams;
  opts.mc_max_target = a.mc_max;
  opts.warmup_steps = a.warmup;
  opts.seed = a.seed;
  const Calibration cal = calibrate_threshold(a.lambda, a.arl0, dim, opts);
  std::printf("lambda:      %s\n", fmt_g(cal.lambda).c_str());
  std::printf("dim:         %d\n", cal.dim);
  std::printf("target ARL0: %s\n", fmt_g(cal.target_arl).c_str());
  std::printf("H:           %s\n", fmt_g(cal.threshold).c_str());
  const char* mode = cal.lambda == 1.0 ? "exact chi-squared"
                                       : (cal.extrapolated ? "ladder extrapolation" : "bisection");
  std::printf("mode:        %s\n", mode);
  std::printf("est ARL0:    %s +/- %s (95%% CI %s..%s)%s\n", fmt_g(cal.estimated_arl).c_str(),
              fmt_g(1.96 * cal.standard_error).c_str(),
              fmt_g(cal.estimated_arl - 1.96 * cal.standard_error).c_str(),
              fmt_g(cal.estimated_arl + 1.96 * cal.standard_error).c_str(),
              cal.extrapolated ? " [top Monte Carlo rung]" : "");
  return 0;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct ExperimentArgs {
  ExperimentConfig cfg;
  std::string noise_model = "phasor";
};

int run_experiment_cmd(ExperimentArgs& a) {
  a.cfg.noise.noise_model =
      a.noise_model == "direct" ? NoiseModel::kDirectOutput : NoiseModel::kPhasor;
  print_header(a.cfg.seed, config_canonical(a.cfg));
  const ExperimentResult res = run_experiment(a.cfg);
  const std::string text = summary_text(res);
  std::fwrite(text.data(), 1, text.size(), stdout);
  std::fprintf(stderr, "wall time: %.1f s\n", res.wall_seconds);
  if (!a.cfg.out_dir.empty())
    std::printf("reports:     %s/{runs.csv,summary.csv,summary.txt}\n", a.cfg.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// case-info
// ---------------------------------------------------------------------------

int run_case_info(const std::string& path) {
  std::string canon = "cmd=case-info\ncase=" + path + "\nseed=0\n";
  print_header(0, canon);
  const NetworkCase net = NetworkCase::parse_file(path);
  std::printf("case:        %s\n", path.c_str());
  std::printf("buses:       %d\n", net.size());
  std::printf("branches:    %d\n", net.num_branches());
  std::printf("generators:  %d\n", net.num_generators());
  std::printf("pmu buses:   %d (%s)\n", static_cast<int>(net.pmu_buses().size()),
              join_ints(net.pmu_buses()).c_str());
  std::printf("f0:          %s Hz, base %s MVA\n", fmt_g(net.f0()).c_str(),
              fmt_g(net.base_mva()).c_str());
  const std::vector<int> obs = observable_buses(net);
  std::printf("observable:  %d buses (%s)\n", static_cast<int>(obs.size()),
              join_ints(obs).c_str());
  double total_load = 0.0, total_dispatch = 0.0;
  for (const Bus& b : net.buses()) total_load += b.p_load;
  for (const Generator& g : net.generators()) total_dispatch += g.p_dispatch;
  std::printf("total load:  %s p.u., dispatched %s p.u. (+ slack balance)\n",
              fmt_g(total_load).c_str(), fmt_g(total_dispatch).c_str());
  std::vector<int> islanding, sweepable;
  for (const Branch& br : net.branches()) {
    if (!br.in_service) continue;
    (network_connected(net, {br.id}) ? sweepable : islanding).push_back(br.id);
  }
  std::printf("sweepable:   %d lines\n", static_cast<int>(sweepable.size()));
  std::printf("islanding:   %d lines (%s)\n", static_cast<int>(islanding.size()),
              join_ints(islanding).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transmission-line outage detection from partial PMU coverage"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "run one transient scenario");
  c_sim->add_option("--case", sim.case_path, "case file")->required();
  c_sim->add_option("--line", sim.lines, "branch id(s) to trip (repeatable)");
  c_sim->add_option("--onset-s", sim.onset_s, "outage time, s");
  c_sim->add_option("--duration-s", sim.duration_s, "run length, s");
  c_sim->add_option("--dt", sim.dt, "sample interval, s");
  c_sim->add_option("--noise-scale", sim.noise_scale, "process noise scale");
  c_sim->add_option("--seed", sim.seed, "simulation seed");
  c_sim->add_option("--load-model", sim.load_model, "impedance|power")
      ->check(CLI::IsMember({"impedance", "power"}));
  c_sim->add_option("--dump-trajectory", sim.dump, "trajectory CSV path ('-' = stdout)");

  DetectArgs det;
  CLI::App* c_det = app.add_subcommand("detect", "simulate, track and run the chart once");
  c_det->add_option("--case", det.case_path, "case file")->required();
  c_det->add_option("--line", det.lines, "branch id to trip (omit for a null run)");
  c_det->add_option("--onset-s", det.onset_s, "outage time, s");
  c_det->add_option("--duration-s", det.duration_s, "run length, s");
  c_det->add_option("--dt", det.dt, "sample interval, s");
  c_det->add_option("--noise-scale", det.noise_scale, "process noise scale");
  c_det->add_option("--particles", det.particles, "particle count");
  c_det->add_option("--lambda", det.lambda, "chart smoothing weight");
  c_det->add_option("--threshold", det.threshold, "chart threshold H (skips calibration)");
  c_det->add_option("--arl0", det.arl0, "in-control ARL target used when H not given");
  c_det->add_option("--sigma-warmup", det.sigma_warmup, "samples for channel std estimation");
  c_det->add_option("--chart-warmup", det.chart_warmup, "chart steps before alarms count");
  c_det->add_option("--seed", det.seed, "scenario seed (matches runs.csv scenario_seed)");
  c_det->add_option("--chart-csv", det.chart_out, "per-step chart CSV path ('-' = stdout)");
  c_det->add_option("--dump-filter", det.filter_out, "filter trace CSV path ('-' = stdout)");

  CalibrateArgs cal;
  CLI::App* c_cal = app.add_subcommand("calibrate", "calibrate the chart threshold");
  c_cal->add_option("--lambda", cal.lambda, "chart smoothing weight");
  c_cal->add_option("--arl0", cal.arl0, "in-control ARL target");
  c_cal->add_option("--dim", cal.dim, "residual dimension");
  c_cal->add_option("--case", cal.case_path, "case file (dim from its observable set)");
  c_cal->add_option("--streams", cal.streams, "Monte Carlo streams per evaluation");
  c_cal->add_option("--mc-max", cal.mc_max, "largest target evaluated directly");
  c_cal->add_option("--warmup", cal.warmup, "chart warmup steps");
  c_cal->add_option("--seed", cal.seed, "calibration seed");

  ExperimentArgs exp;
  CLI::App* c_exp = app.add_subcommand("experiment", "batch outage study with reports");
  c_exp->add_option("--case", exp.cfg.case_path, "case file")->required();
  c_exp->add_option("--lines", exp.cfg.lines, "branch ids to study")->delimiter(',');
  c_exp->add_flag("--all-lines", exp.cfg.all_lines, "sweep all non-islanding lines");
  c_exp->add_flag("--null-runs", exp.cfg.null_runs, "no-outage false-alarm study");
  c_exp->add_option("--reps", exp.cfg.replications, "replications per line");
  c_exp->add_option("--duration-s", exp.cfg.duration_s, "run length, s");
  c_exp->add_option("--onset-s", exp.cfg.onset_s, "outage time, s");
  c_exp->add_option("--dt", exp.cfg.dt, "sample interval, s");
  c_exp->add_option("--lambdas", exp.cfg.lambdas, "chart smoothing weights")->delimiter(',');
  c_exp->add_option("--arl0", exp.cfg.arl0, "in-control ARL target");
  c_exp->add_option("--particles", exp.cfg.num_particles, "particle count");
  c_exp->add_option("--noise-scale", exp.cfg.process_noise_scale, "process noise scale");
  c_exp->add_option("--noise-model", exp.noise_model, "phasor|direct")
      ->check(CLI::IsMember({"phasor", "direct"}));
  c_exp->add_option("--phasor-mag-noise", exp.cfg.noise.phasor_mag_noise, "V std, p.u.");
  c_exp->add_option("--phasor-ang-noise", exp.cfg.noise.phasor_ang_noise, "theta std, rad");
  c_exp->add_option("--output-noise-frac", exp.cfg.noise.output_noise_frac,
                    "direct model: std as fraction of served load");
  c_exp->add_option("--output-noise-floor", exp.cfg.noise.output_noise_floor,
                    "direct model: std floor, p.u.");
  c_exp->add_option("--sigma-warmup", exp.cfg.sigma_warmup_steps,
                    "samples for channel std estimation");
  c_exp->add_option("--chart-warmup", exp.cfg.chart_warmup_steps,
                    "chart steps before alarms count");
  c_exp->add_option("--cal-streams", exp.cfg.calibration_streams,
                    "Monte Carlo streams per calibration evaluation");
  c_exp->add_option("--cal-mc-max", exp.cfg.calibration_mc_max,
                    "largest ARL target calibrated without extrapolation");
  c_exp->add_option("--seed", exp.cfg.seed, "master seed");
  c_exp->add_option("--out", exp.cfg.out_dir, "report directory (runs/summary CSV + text)");

  std::string info_path;
  CLI::App* c_info = app.add_subcommand("case-info", "case file summary");
  c_info->add_option("case", info_path, "case file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_det->parsed()) return run_detect(det);
    if (c_cal->parsed()) return run_calibrate(cal);
    if (c_exp->parsed()) return run_experiment_cmd(exp);
    if (c_info->parsed()) return run_case_info(info_path);
  } catch (const std::exception& e) {
    std::fflush(stdout);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;  // unreachable: a subcommand is required
}

#include "linewatch/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "linewatch/particle_filter.hpp"
#include "linewatch/rng.hpp"

namespace linewatch {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kSigmaFloor = 1e-9;  // keeps likelihoods finite on noise-free channels

std::string strf(const char* fmt, ...) {
  char buf[256];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

// Shortest round-trip decimal form, used everywhere a double reaches a report
// so that independent recomputation from runs.csv reproduces summary.csv
// byte for byte.
std::string fmt_g(double v) { return strf("%.17g", v); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs, const char* sep,
                 std::string (*fmt)(const T&)) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += fmt(xs[i]);
  }
  return out;
}

std::string fmt_int(const int& v) { return std::to_string(v); }
std::string fmt_dbl(const double& v) { return fmt_g(v); }

int round_steps(double seconds, double dt) {
  return static_cast<int>(std::lround(seconds / dt));
}

// Per-column sample standard deviation (n-1 denominator), floored.
Eigen::VectorXd column_std(const Eigen::Ref<const Eigen::MatrixXd>& m, double floor_val) {
  const int n = static_cast<int>(m.rows());
  if (n < 2) throw Error("experiment: need at least 2 samples to estimate channel stds");
  Eigen::VectorXd out(m.cols());
  for (int c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).mean();
    const double ss = (m.col(c).array() - mean).square().sum();
    out(c) = std::max(std::sqrt(ss / (n - 1)), floor_val);
  }
  return out;
}

bool contains(const std::vector<int>& xs, int v) {
  return std::find(xs.begin(), xs.end(), v) != xs.end();
}

void validate_config(const ExperimentConfig& cfg, const NetworkCase& net) {
  if (cfg.replications < 1) throw Error("experiment: replications must be >= 1");
  if (!(cfg.dt > 0.0)) throw Error("experiment: dt must be positive");
  if (!(cfg.duration_s > 0.0)) throw Error("experiment: duration_s must be positive");
  const int num_steps = round_steps(cfg.duration_s, cfg.dt);
  if (num_steps < 1) throw Error("experiment: duration shorter than one sample");
  if (cfg.sigma_warmup_steps < 2 || cfg.sigma_warmup_steps >= num_steps)
    throw Error("experiment: sigma_warmup_steps must lie in [2, num_steps)");
  if (cfg.chart_warmup_steps < 1) throw Error("experiment: chart_warmup_steps must be >= 1");
  if (num_steps - cfg.sigma_warmup_steps < cfg.chart_warmup_steps)
    throw Error("experiment: no chart step survives the warmups; lengthen duration_s");
  if (cfg.lambdas.empty()) throw Error("experiment: lambdas must not be empty");
  std::set<double> seen;
  for (double lam : cfg.lambdas) {
    if (!(lam > 0.0 && lam <= 1.0)) throw Error("experiment: lambda must lie in (0, 1]");
    if (!seen.insert(lam).second) throw Error("experiment: duplicate lambda");
  }
  if (cfg.num_particles < 1) throw Error("experiment: num_particles must be >= 1");
  const bool outage_study = !cfg.lines.empty() || cfg.all_lines;
  if (cfg.null_runs && outage_study)
    throw Error("experiment: null_runs excludes lines/all_lines");
  if (!cfg.null_runs && !outage_study)
    throw Error("experiment: specify lines, all_lines or null_runs");
  if (!cfg.lines.empty() && cfg.all_lines)
    throw Error("experiment: lines and all_lines are mutually exclusive");
  if (outage_study) {
    const int onset = round_steps(cfg.onset_s, cfg.dt);
    if (onset <= cfg.sigma_warmup_steps || onset > num_steps)
      throw Error("experiment: onset must land after the sigma warmup and within the run");
    std::set<int> ids;
    for (int id : cfg.lines) {
      net.branch_pos(id);  // throws on unknown id
      if (!ids.insert(id).second) throw Error("experiment: duplicate line id");
    }
  }
}

struct Accumulator {
  int runs = 0, detected = 0, missed = 0, failed = 0, false_alarms = 0, zero_delay = 0;
  std::vector<double> delays;

  void add(const RunRecord& r, int onset_chart) {
    ++runs;
    if (r.status == "detected") {
      ++detected;
      delays.push_back(r.delay_s);
      if (r.alarm_step == onset_chart) ++zero_delay;
    } else if (r.status == "missed") {
      ++missed;
    } else if (r.status == "failed") {
      ++failed;
    } else if (r.status == "false_alarm") {
      ++false_alarms;
    }
    // "clean" rows only tick the run counter.
  }

  SummaryRow finalize(const std::string& scope, int line_id, int from, int to, double lambda,
                      double threshold) const {
    SummaryRow row;
    row.scope = scope;
    row.line_id = line_id;
    row.from_bus = from;
    row.to_bus = to;
    row.lambda = lambda;
    row.runs = runs;
    row.detected = detected;
    row.missed = missed;
    row.failed = failed;
    row.false_alarms = false_alarms;
    row.zero_delay = zero_delay;
    const int decided = detected + missed;
    row.rate = decided > 0 ? static_cast<double>(detected) / decided : kNaN;
    if (delays.empty()) {
      row.delay_mean_s = kNaN;
      row.delay_std_s = kNaN;
    } else {
      double sum = 0.0;
      for (double d : delays) sum += d;
      row.delay_mean_s = sum / static_cast<double>(delays.size());
      if (delays.size() == 1) {
        row.delay_std_s = 0.0;
      } else {
        double ss = 0.0;
        for (double d : delays) ss += (d - row.delay_mean_s) * (d - row.delay_mean_s);
        row.delay_std_s = std::sqrt(ss / static_cast<double>(delays.size() - 1));
      }
    }
    row.threshold = threshold;
    return row;
  }
};

}  // namespace

std::uint64_t scenario_seed(std::uint64_t master, int line_id, int rep) {
  return mix_key(master, streams::kScenario, static_cast<std::uint64_t>(line_id + 1),
                 static_cast<std::uint64_t>(rep));
}

ScenarioOutput run_scenario(const NetworkCase& net, int line_id, std::uint64_t seed,
                            const ExperimentConfig& cfg) {
  ScenarioOutput out;
  try {
    const int num_steps = round_steps(cfg.duration_s, cfg.dt);
    const int warm = cfg.sigma_warmup_steps;

    SimulationOptions sim;
    sim.dt = cfg.dt;
    sim.num_steps = num_steps;
    sim.process_noise_scale = cfg.process_noise_scale;
    sim.seed = seed;
    if (line_id >= 0) {
      sim.outage_ids = {line_id};
      sim.onset_step = round_steps(cfg.onset_s, cfg.dt);
    }
    const Trajectory traj = simulate_scenario(net, sim);

    MeasurementOptions noise = cfg.noise;
    noise.seed = seed;
    const MeasurementSet ms = synthesize_measurements(net, traj, noise);
    const int dim = ms.num_channels();

    // Output-channel stds over the warmup window drive the filter likelihood.
    const Eigen::VectorXd sigma_pf = column_std(ms.output.middleRows(1, warm), kSigmaFloor);

    TrackerOptions topt;
    topt.num_particles = cfg.num_particles;
    topt.process_noise_scale = cfg.process_noise_scale;
    topt.seed = seed;
    GeneratorTracker tracker(net, traj.initial, sim.load_model, cfg.dt, topt);
    tracker.init(ms.v_mag.row(0).transpose(), ms.v_ang.row(0).transpose());

    const int m = static_cast<int>(tracker.tracked_machines().size());
    for (int pos : tracker.tracked_machines())
      out.machine_buses.push_back(net.generators()[pos].bus);
    out.delta_mean.setZero(num_steps + 1, m);
    out.omega_mean = Eigen::MatrixXd::Constant(num_steps + 1, m, 1.0);
    out.ess_trace = Eigen::VectorXd::Constant(num_steps + 1, cfg.num_particles);
    out.resampled.assign(num_steps + 1, 0);
    for (int j = 0; j < m; ++j)
      out.delta_mean(0, j) = traj.initial.rotor_angle(tracker.tracked_machines()[j]);

    Eigen::MatrixXd dpg = Eigen::MatrixXd::Zero(num_steps + 1, dim);
    double ess_min = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= num_steps; ++k) {
      const FilterStepResult step =
          tracker.step(ms.v_mag.row(k).transpose(), ms.v_ang.row(k).transpose(),
                       ms.output.row(k).transpose(), sigma_pf);
      dpg.row(k) = step.dpg.transpose();
      out.delta_mean.row(k) = step.delta_mean.transpose();
      out.omega_mean.row(k) = step.omega_mean.transpose();
      out.ess_trace(k) = step.ess;
      out.resampled[k] = step.resampled ? 1 : 0;
      ess_min = std::min(ess_min, step.ess);
      if (step.resampled) ++out.resamples;
    }
    out.ess_min = ess_min;

    // Row i of `resid` is the residual at sample i+1.
    const Eigen::MatrixXd resid =
        dpg.middleRows(1, num_steps) - ms.output.middleRows(1, num_steps);
    out.sigma_chart = column_std(resid.topRows(warm), kSigmaFloor);

    const int chart_steps = num_steps - warm;
    out.stream.residuals = resid.bottomRows(chart_steps);
    out.stream.dpg_hat = dpg.bottomRows(chart_steps);
    out.stream.y = ms.output.bottomRows(chart_steps);
    out.stream.channel_machine = ms.channel_machine;
  } catch (const std::exception& e) {
    out.failed = true;
    out.fail_reason = e.what();
  }
  return out;
}

std::string config_canonical(const ExperimentConfig& cfg) {
  std::string s;
  s += "case_path=" + cfg.case_path + "\n";
  s += "lines=" + join(cfg.lines, ",", fmt_int) + "\n";
  s += strf("all_lines=%d\n", cfg.all_lines ? 1 : 0);
  s += strf("null_runs=%d\n", cfg.null_runs ? 1 : 0);
  s += strf("replications=%d\n", cfg.replications);
  s += "duration_s=" + fmt_g(cfg.duration_s) + "\n";
  s += "onset_s=" + fmt_g(cfg.onset_s) + "\n";
  s += "dt=" + fmt_g(cfg.dt) + "\n";
  s += "lambdas=" + join(cfg.lambdas, ",", fmt_dbl) + "\n";
  s += "arl0=" + fmt_g(cfg.arl0) + "\n";
  s += strf("num_particles=%d\n", cfg.num_particles);
  s += "process_noise_scale=" + fmt_g(cfg.process_noise_scale) + "\n";
  s += std::string("noise_model=") +
       (cfg.noise.noise_model == NoiseModel::kDirectOutput ? "direct" : "phasor") + "\n";
  s += "output_noise_frac=" + fmt_g(cfg.noise.output_noise_frac) + "\n";
  s += "output_noise_floor=" + fmt_g(cfg.noise.output_noise_floor) + "\n";
  s += "phasor_mag_noise=" + fmt_g(cfg.noise.phasor_mag_noise) + "\n";
  s += "phasor_ang_noise=" + fmt_g(cfg.noise.phasor_ang_noise) + "\n";
  s += strf("sigma_warmup_steps=%d\n", cfg.sigma_warmup_steps);
  s += strf("chart_warmup_steps=%d\n", cfg.chart_warmup_steps);
  s += strf("calibration_streams=%d\n", cfg.calibration_streams);
  s += "calibration_mc_max=" + fmt_g(cfg.calibration_mc_max) + "\n";
  s += strf("seed=%llu\n", static_cast<unsigned long long>(cfg.seed));
  return s;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(config_canonical(cfg)); }

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  const NetworkCase net = NetworkCase::parse_file(cfg.case_path);
  validate_config(cfg, net);

  ExperimentResult res;
  res.config = cfg;
  res.observable = observable_buses(net);
  res.pmu_buses = net.pmu_buses();
  res.dim = static_cast<int>(res.observable.size());
  if (res.dim == 0) throw Error("experiment: case has no observable buses");
  res.config_hash = config_hash(cfg);

  if (!cfg.null_runs) {
    if (cfg.all_lines) {
      for (const Branch& br : net.branches())
        if (br.in_service && network_connected(net, {br.id})) res.line_ids.push_back(br.id);
      if (res.line_ids.empty()) throw Error("experiment: no sweepable lines in case");
    } else {
      res.line_ids = cfg.lines;
    }
  }

  CalibrationOptions copt;
  copt.num_streams = cfg.calibration_streams;
  copt.mc_max_target = cfg.calibration_mc_max;
  copt.warmup_steps = cfg.chart_warmup_steps;
  copt.seed = kHarnessCalibrationSeed;
  for (double lam : cfg.lambdas)
    res.calibrations.emplace(lam, calibrate_threshold(lam, cfg.arl0, res.dim, copt));

  const int onset_chart =
      cfg.null_runs ? -1 : round_steps(cfg.onset_s, cfg.dt) - cfg.sigma_warmup_steps;

  auto run_block = [&](int line_id, int from, int to) {
    for (int rep = 0; rep < cfg.replications; ++rep) {
      const std::uint64_t seed = scenario_seed(cfg.seed, line_id, rep);
      const ScenarioOutput sc = run_scenario(net, line_id, seed, cfg);
      for (double lam : cfg.lambdas) {
        const Calibration& cal = res.calibrations.at(lam);
        RunRecord rec;
        rec.line_id = line_id;
        rec.from_bus = from;
        rec.to_bus = to;
        rec.rep = rep;
        rec.lambda = lam;
        rec.scenario_seed = seed;
        rec.threshold = cal.threshold;
        rec.ess_min = sc.ess_min;
        rec.resamples = sc.resamples;
        if (sc.failed) {
          rec.status = "failed";
          rec.fail_reason = sc.fail_reason;
        } else {
          DetectOptions dopt;
          dopt.lambda = lam;
          dopt.threshold = cal.threshold;
          dopt.warmup_steps = cfg.chart_warmup_steps;
          dopt.onset_step = onset_chart;
          dopt.dt = cfg.dt;
          const DetectionRecord det = detect(sc.stream, sc.sigma_chart, dopt);
          rec.alarm_step = det.alarm_step;
          rec.max_t2 = det.t2.maxCoeff();
          if (line_id < 0) {
            rec.status = det.alarm_step >= 0 ? "false_alarm" : "clean";
          } else if (det.alarm_step < 0) {
            rec.status = "missed";
          } else if (det.alarm_step < onset_chart) {
            rec.status = "failed";
            rec.fail_reason = "alarm before onset";
          } else {
            rec.status = "detected";
            rec.delay_s = det.delay_s;
          }
        }
        res.runs.push_back(std::move(rec));
      }
    }
  };

  if (cfg.null_runs) {
    run_block(-1, -1, -1);
  } else {
    for (int id : res.line_ids) {
      const Branch& br = net.branches()[net.branch_pos(id)];
      run_block(id, br.from, br.to);
    }
  }

  // Aggregation. Keyed accumulators filled in one pass over the records, then
  // emitted in a fixed order (line rows, pooled lambda rows, adjacency rows,
  // null rows) for deterministic reports.
  const int n_lines = static_cast<int>(res.line_ids.size());
  const int n_lams = static_cast<int>(cfg.lambdas.size());
  auto lam_index = [&](double lam) {
    for (int i = 0; i < n_lams; ++i)
      if (cfg.lambdas[i] == lam) return i;
    throw Error("experiment: record with unknown lambda");
  };
  std::vector<Accumulator> by_line(static_cast<std::size_t>(n_lines) * n_lams);
  std::vector<Accumulator> by_lam(n_lams), by_adj(2 * n_lams), by_null(n_lams);
  for (const RunRecord& r : res.runs) {
    const int li = lam_index(r.lambda);
    if (r.line_id < 0) {
      by_null[li].add(r, onset_chart);
      continue;
    }
    const auto pos = std::find(res.line_ids.begin(), res.line_ids.end(), r.line_id);
    const int line_pos = static_cast<int>(pos - res.line_ids.begin());
    by_line[static_cast<std::size_t>(line_pos) * n_lams + li].add(r, onset_chart);
    by_lam[li].add(r, onset_chart);
    const bool adjacent = contains(res.pmu_buses, r.from_bus) || contains(res.pmu_buses, r.to_bus);
    by_adj[(adjacent ? 0 : 1) * n_lams + li].add(r, onset_chart);
  }
  for (int lp = 0; lp < n_lines; ++lp) {
    const Branch& br = net.branches()[net.branch_pos(res.line_ids[lp])];
    for (int li = 0; li < n_lams; ++li)
      res.summary.push_back(by_line[static_cast<std::size_t>(lp) * n_lams + li].finalize(
          "line", br.id, br.from, br.to, cfg.lambdas[li],
          res.calibrations.at(cfg.lambdas[li]).threshold));
  }
  if (!cfg.null_runs) {
    for (int li = 0; li < n_lams; ++li)
      res.summary.push_back(by_lam[li].finalize("lambda", -1, -1, -1, cfg.lambdas[li],
                                                res.calibrations.at(cfg.lambdas[li]).threshold));
    for (int g = 0; g < 2; ++g) {
      const char* scope = g == 0 ? "pmu_adjacent" : "pmu_remote";
      for (int li = 0; li < n_lams; ++li) {
        const Accumulator& acc = by_adj[g * n_lams + li];
        if (acc.runs == 0) continue;  // group empty for this case
        res.summary.push_back(acc.finalize(scope, -1, -1, -1, cfg.lambdas[li],
                                           res.calibrations.at(cfg.lambdas[li]).threshold));
      }
    }
  } else {
    for (int li = 0; li < n_lams; ++li)
      res.summary.push_back(by_null[li].finalize("null", -1, -1, -1, cfg.lambdas[li],
                                                 res.calibrations.at(cfg.lambdas[li]).threshold));
  }

  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (!cfg.out_dir.empty()) write_experiment_outputs(res);
  return res;
}

std::string runs_csv(const ExperimentResult& res) {
  std::string s =
      "line,from,to,rep,lambda,scenario_seed,status,alarm_step,delay_s,max_t2,"
      "threshold,ess_min,resamples,fail_reason\n";
  for (const RunRecord& r : res.runs) {
    s += strf("%d,%d,%d,%d,", r.line_id, r.from_bus, r.to_bus, r.rep);
    s += fmt_g(r.lambda) + ",";
    s += strf("%llu,", static_cast<unsigned long long>(r.scenario_seed));
    s += r.status + ",";
    s += strf("%d,", r.alarm_step);
    s += fmt_g(r.delay_s) + "," + fmt_g(r.max_t2) + "," + fmt_g(r.threshold) + "," +
         fmt_g(r.ess_min) + ",";
    s += strf("%d,", r.resamples);
    s += csv_field(r.fail_reason) + "\n";
  }
  return s;
}

std::string summary_csv(const ExperimentResult& res) {
  std::string s =
      "scope,line,from,to,lambda,runs,detected,missed,failed,false_alarms,rate,"
      "delay_mean_s,delay_std_s,zero_delay,threshold\n";
  for (const SummaryRow& row : res.summary) {
    s += row.scope + ",";
    s += strf("%d,%d,%d,", row.line_id, row.from_bus, row.to_bus);
    s += fmt_g(row.lambda) + ",";
    s += strf("%d,%d,%d,%d,%d,", row.runs, row.detected, row.missed, row.failed,
              row.false_alarms);
    s += fmt_g(row.rate) + "," + fmt_g(row.delay_mean_s) + "," + fmt_g(row.delay_std_s) + ",";
    s += strf("%d,", row.zero_delay);
    s += fmt_g(row.threshold) + "\n";
  }
  return s;
}

std::string summary_text(const ExperimentResult& res) {
  const ExperimentConfig& cfg = res.config;
  const int num_steps = round_steps(cfg.duration_s, cfg.dt);
  std::string s;
  s += "line outage detection experiment\n";
  s += "================================\n";
  s += "case:            " + cfg.case_path + "\n";
  s += strf("master seed:     %llu\n", static_cast<unsigned long long>(cfg.seed));
  s += strf("config hash:     %016llx\n", static_cast<unsigned long long>(res.config_hash));
  s += strf("channels:        %d (observable buses: %s)\n", res.dim,
            join(res.observable, " ", fmt_int).c_str());
  s += "pmu buses:       " + join(res.pmu_buses, " ", fmt_int) + "\n";
  if (cfg.null_runs) {
    s += strf("scenarios:       %d null runs (no outage)\n", cfg.replications);
  } else {
    s += strf("scenarios:       %d lines x %d replications\n",
              static_cast<int>(res.line_ids.size()), cfg.replications);
  }
  s += strf("samples:         %d per run at dt=%s s", num_steps, fmt_g(cfg.dt).c_str());
  if (!cfg.null_runs)
    s += strf(" (outage at sample %d)", round_steps(cfg.onset_s, cfg.dt));
  s += "\n";
  s += strf("chart:           sigma warmup %d samples, chart warmup %d steps, ARL0 target %s\n",
            cfg.sigma_warmup_steps, cfg.chart_warmup_steps, fmt_g(cfg.arl0).c_str());
  s += strf("particles:       %d\n", cfg.num_particles);
  s += "\n";

  s += strf("threshold calibration (fixed seed %llu)\n",
            static_cast<unsigned long long>(kHarnessCalibrationSeed));
  s += "  lambda         H       est ARL        SE  mode\n";
  for (double lam : cfg.lambdas) {
    const Calibration& cal = res.calibrations.at(lam);
    s += strf("  %6.3f  %8.4f  %12.1f  %8.1f  %s\n", cal.lambda, cal.threshold,
              cal.estimated_arl, cal.standard_error,
              cal.lambda == 1.0 ? "exact" : (cal.extrapolated ? "ladder" : "bisection"));
  }
  s += "\n";

  auto table = [&](const char* title, const std::string& scope) {
    bool any = false;
    for (const SummaryRow& row : res.summary) any = any || row.scope == scope;
    if (!any) return;
    s += title;
    s += "  lambda   runs  detected  missed  failed  false_alarms    rate  delay mean/std (s)  zero-delay\n";
    for (const SummaryRow& row : res.summary) {
      if (row.scope != scope) continue;
      s += strf("  %6.3f  %5d  %8d  %6d  %6d  %12d  %6s  %8s / %-8s  %10d\n", row.lambda,
                row.runs, row.detected, row.missed, row.failed, row.false_alarms,
                std::isnan(row.rate) ? "-" : strf("%.3f", row.rate).c_str(),
                std::isnan(row.delay_mean_s) ? "-" : strf("%.3f", row.delay_mean_s).c_str(),
                std::isnan(row.delay_std_s) ? "-" : strf("%.3f", row.delay_std_s).c_str(),
                row.zero_delay);
    }
    s += "\n";
  };
  table("pooled over all lines\n", "lambda");
  table("lines with an instrumented endpoint\n", "pmu_adjacent");
  table("lines without an instrumented endpoint\n", "pmu_remote");
  table("null runs (no outage)\n", "null");

  if (!cfg.null_runs) {
    // Highest-rate lines per lambda; ties broken by line id. Full per-line
    // detail lives in summary.csv.
    for (double lam : cfg.lambdas) {
      std::vector<const SummaryRow*> rows;
      for (const SummaryRow& row : res.summary)
        if (row.scope == "line" && row.lambda == lam && row.detected > 0) rows.push_back(&row);
      std::sort(rows.begin(), rows.end(), [](const SummaryRow* a, const SummaryRow* b) {
        if (a->rate != b->rate) return a->rate > b->rate;
        return a->line_id < b->line_id;
      });
      s += strf("lines detected at least once (lambda %.3f)\n", lam);
      if (rows.empty()) {
        s += "  none\n";
      } else {
        s += "  line  from    to   rate  delay mean (s)\n";
        for (std::size_t i = 0; i < rows.size() && i < 10; ++i)
          s += strf("  %4d  %4d  %4d  %.3f  %s\n", rows[i]->line_id, rows[i]->from_bus,
                    rows[i]->to_bus, rows[i]->rate, fmt_g(rows[i]->delay_mean_s).c_str());
        if (rows.size() > 10) s += strf("  ... %d more in summary.csv\n",
                                        static_cast<int>(rows.size() - 10));
      }
      s += "\n";
    }
  }
  s += "full per-run detail: runs.csv; per-line aggregates: summary.csv\n";
  return s;
}

void write_experiment_outputs(const ExperimentResult& res) {
  namespace fs = std::filesystem;
  if (res.config.out_dir.empty()) throw Error("experiment: out_dir not set");
  fs::create_directories(res.config.out_dir);
  auto write_file = [&](const char* name, const std::string& content) {
    const fs::path path = fs::path(res.config.out_dir) / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw Error("experiment: failed to write " + path.string());
  };
  write_file("runs.csv", runs_csv(res));
  write_file("summary.csv", summary_csv(res));
  write_file("summary.txt", summary_text(res));
}

}  // namespace linewatch

#include "linewatch/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

namespace linewatch {

namespace {

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double parse_num(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw Error(where + ": expected a number, got '" + tok + "'");
  }
}

int parse_int(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw Error(where + ": expected an integer, got '" + tok + "'");
  }
}

}  // namespace

double NetworkCase::omega_s() const { return 2.0 * 3.14159265358979323846 * f0_; }

NetworkCase NetworkCase::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open case file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

NetworkCase NetworkCase::parse(const std::string& text, const std::string& origin) {
  NetworkCase net;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  int row_in_section = 0;

  auto loc = [&](const std::string& field) {
    std::ostringstream os;
    os << origin << ": " << section << "[" << row_in_section << "]";
    if (!field.empty()) os << "." << field;
    os << " (line " << lineno << ")";
    return os.str();
  };

  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw Error(origin + ": malformed section header '" + raw + "' (line " + std::to_string(lineno) + ")");
      section = line.substr(1, line.size() - 2);
      row_in_section = 0;
      if (section != "base" && section != "bus" && section != "branch" && section != "gen" && section != "pmu")
        throw Error(origin + ": unknown section [" + section + "] (line " + std::to_string(lineno) + ")");
      continue;
    }
    if (section.empty())
      throw Error(origin + ": data before any section header (line " + std::to_string(lineno) + ")");
    ++row_in_section;

    if (section == "base") {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(loc("") + ": expected key = value");
      const std::string key = strip(line.substr(0, eq));
      const std::string val = strip(line.substr(eq + 1));
      if (key == "f0")
        net.f0_ = parse_num(val, loc("f0"));
      else if (key == "mva")
        net.base_mva_ = parse_num(val, loc("mva"));
      else
        throw Error(loc(key) + ": unknown base key");
    } else if (section == "bus") {
      const auto t = split_ws(line);
      if (t.size() != 5) throw Error(loc("") + ": expected 5 columns (id type Pl Ql Vset)");
      Bus b;
      b.id = parse_int(t[0], loc("id"));
      if (t[1] == "slack")
        b.type = BusType::kSlack;
      else if (t[1] == "pv")
        b.type = BusType::kPV;
      else if (t[1] == "pq")
        b.type = BusType::kPQ;
      else
        throw Error(loc("type") + ": expected slack|pv|pq, got '" + t[1] + "'");
      b.p_load = parse_num(t[2], loc("Pl"));
      b.q_load = parse_num(t[3], loc("Ql"));
      if (t[4] != "-") b.v_setpoint = parse_num(t[4], loc("Vset"));
      net.buses_.push_back(b);
    } else if (section == "branch") {
      const auto t = split_ws(line);
      if (t.size() != 7) throw Error(loc("") + ": expected 7 columns (id from to r x b status)");
      Branch br;
      br.id = parse_int(t[0], loc("id"));
      br.from = parse_int(t[1], loc("from"));
      br.to = parse_int(t[2], loc("to"));
      br.r = parse_num(t[3], loc("r"));
      br.x = parse_num(t[4], loc("x"));
      br.b_shunt = parse_num(t[5], loc("b"));
      const int status = parse_int(t[6], loc("status"));
      if (status != 0 && status != 1) throw Error(loc("status") + ": expected 0 or 1");
      br.in_service = status == 1;
      net.branches_.push_back(br);
    } else if (section == "gen") {
      const auto t = split_ws(line);
      if (t.size() != 5) throw Error(loc("") + ": expected 5 columns (bus M D Pm Xd)");
      Generator g;
      g.bus = parse_int(t[0], loc("bus"));
      g.inertia_m = parse_num(t[1], loc("M"));
      g.damping_d = parse_num(t[2], loc("D"));
      g.p_dispatch = parse_num(t[3], loc("Pm"));
      g.xd_prime = parse_num(t[4], loc("Xd"));
      net.generators_.push_back(g);
    } else {  // pmu
      for (const auto& tok : split_ws(line)) net.pmu_buses_.push_back(parse_int(tok, loc("bus")));
    }
  }

  net.validate_and_index(origin);
  return net;
}

NetworkCase NetworkCase::assemble(std::vector<Bus> buses, std::vector<Branch> branches,
                                  std::vector<Generator> generators, std::vector<int> pmu_buses,
                                  double f0, double base_mva) {
  NetworkCase net;
  net.buses_ = std::move(buses);
  net.branches_ = std::move(branches);
  net.generators_ = std::move(generators);
  net.pmu_buses_ = std::move(pmu_buses);
  net.f0_ = f0;
  net.base_mva_ = base_mva;
  net.validate_and_index("case");
  return net;
}

void NetworkCase::validate_and_index(const std::string& origin) {
  if (buses_.empty()) throw Error(origin + ": case has no buses");
  if (f0_ <= 0) throw Error(origin + ": base.f0 must be positive");
  if (base_mva_ <= 0) throw Error(origin + ": base.mva must be positive");

  bus_index_.clear();
  for (std::size_t i = 0; i < buses_.size(); ++i) {
    const Bus& b = buses_[i];
    if (!bus_index_.emplace(b.id, static_cast<int>(i)).second)
      throw Error(origin + ": bus[" + std::to_string(i) + "].id " + std::to_string(b.id) + " is duplicated");
    if (b.type != BusType::kPQ && !b.v_setpoint)
      throw Error(origin + ": bus id " + std::to_string(b.id) + " is slack/pv but has no voltage setpoint");
    if (b.v_setpoint && *b.v_setpoint <= 0)
      throw Error(origin + ": bus id " + std::to_string(b.id) + " has nonpositive voltage setpoint");
  }

  int slack_count = 0;
  for (const Bus& b : buses_)
    if (b.type == BusType::kSlack) {
      ++slack_count;
      slack_index_ = bus_index_.at(b.id);
    }
  if (slack_count != 1)
    throw Error(origin + ": expected exactly one slack bus, found " + std::to_string(slack_count));

  branch_pos_.clear();
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const Branch& br = branches_[i];
    const std::string where = origin + ": branch[" + std::to_string(i) + "]";
    if (!branch_pos_.emplace(br.id, static_cast<int>(i)).second)
      throw Error(where + ".id " + std::to_string(br.id) + " is duplicated");
    if (!bus_index_.count(br.from))
      throw Error(where + ".from: bus " + std::to_string(br.from) + " is not defined");
    if (!bus_index_.count(br.to))
      throw Error(where + ".to: bus " + std::to_string(br.to) + " is not defined");
    if (br.from == br.to) throw Error(where + ": from and to are the same bus");
    if (br.r == 0.0 && br.x == 0.0) throw Error(where + ": series impedance is zero");
  }

  gen_at_bus_.assign(buses_.size(), -1);
  for (std::size_t i = 0; i < generators_.size(); ++i) {
    const Generator& g = generators_[i];
    const std::string where = origin + ": gen[" + std::to_string(i) + "]";
    if (!bus_index_.count(g.bus)) throw Error(where + ".bus: bus " + std::to_string(g.bus) + " is not defined");
    const int bi = bus_index_.at(g.bus);
    if (gen_at_bus_[bi] != -1)
      throw Error(where + ".bus: bus " + std::to_string(g.bus) + " already hosts a generator");
    gen_at_bus_[bi] = static_cast<int>(i);
    if (g.inertia_m <= 0) throw Error(where + ".M: must be positive");
    if (g.damping_d < 0) throw Error(where + ".D: must be nonnegative");
    if (g.xd_prime <= 0) throw Error(where + ".Xd: must be positive");
  }
  for (const Bus& b : buses_)
    if (b.type != BusType::kPQ && gen_at_bus_[bus_index_.at(b.id)] == -1)
      throw Error(origin + ": bus id " + std::to_string(b.id) + " is slack/pv but hosts no generator");

  std::set<int> seen_pmu;
  for (int p : pmu_buses_) {
    if (!bus_index_.count(p)) throw Error(origin + ": pmu bus " + std::to_string(p) + " is not defined");
    if (!seen_pmu.insert(p).second) throw Error(origin + ": pmu bus " + std::to_string(p) + " is duplicated");
  }
  std::sort(pmu_buses_.begin(), pmu_buses_.end());

  neighbors_.assign(buses_.size(), {});
  for (const Branch& br : branches_) {
    if (!br.in_service) continue;
    const int a = bus_index_.at(br.from);
    const int b = bus_index_.at(br.to);
    neighbors_[a].push_back(b);
    neighbors_[b].push_back(a);
  }
  for (auto& nb : neighbors_) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
}

int NetworkCase::bus_index(int bus_id) const {
  const auto it = bus_index_.find(bus_id);
  if (it == bus_index_.end()) throw Error("unknown bus id " + std::to_string(bus_id));
  return it->second;
}

int NetworkCase::branch_pos(int branch_id) const {
  const auto it = branch_pos_.find(branch_id);
  if (it == branch_pos_.end()) throw Error("unknown branch id " + std::to_string(branch_id));
  return it->second;
}

namespace {

// Complex nodal admittance with the given outage ids removed. Shared by the
// public builder and the connectivity check so both see the same topology.
Eigen::MatrixXcd complex_admittance(const NetworkCase& net, const std::vector<int>& outage_ids) {
  std::set<int> out;
  for (int id : outage_ids) {
    const int pos = net.branch_pos(id);  // throws on unknown id
    if (!net.branches()[pos].in_service)
      throw Error("outage branch id " + std::to_string(id) + " is already out of service");
    if (!out.insert(id).second)
      throw Error("outage branch id " + std::to_string(id) + " listed twice");
  }

  const int n = net.size();
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const Branch& br : net.branches()) {
    if (!br.in_service || out.count(br.id)) continue;
    const std::complex<double> zs(br.r, br.x);
    const std::complex<double> ys = 1.0 / zs;
    const std::complex<double> ysh(0.0, br.b_shunt / 2.0);
    const int a = net.bus_index(br.from);
    const int b = net.bus_index(br.to);
    y(a, a) += ys + ysh;
    y(b, b) += ys + ysh;
    // One shared value for both triangles keeps the matrix exactly symmetric.
    const std::complex<double> off = -ys;
    y(a, b) += off;
    y(b, a) += off;
  }
  return y;
}

std::string revision_tag(const std::vector<int>& outage_ids) {
  if (outage_ids.empty()) return "base";
  std::vector<int> ids = outage_ids;
  std::sort(ids.begin(), ids.end());
  std::string tag = "out:";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) tag += ",";
    tag += std::to_string(ids[i]);
  }
  return tag;
}

}  // namespace

bool network_connected(const NetworkCase& net, const std::vector<int>& outage_branch_ids) {
  std::set<int> out(outage_branch_ids.begin(), outage_branch_ids.end());
  const int n = net.size();
  std::vector<std::vector<int>> adj(n);
  for (const Branch& br : net.branches()) {
    if (!br.in_service || out.count(br.id)) continue;
    adj[net.bus_index(br.from)].push_back(net.bus_index(br.to));
    adj[net.bus_index(br.to)].push_back(net.bus_index(br.from));
  }
  std::vector<char> seen(n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++reached;
        q.push(v);
      }
  }
  return reached == n;
}

AdmittanceMatrix build_admittance(const NetworkCase& net, const std::vector<int>& outage_branch_ids) {
  const Eigen::MatrixXcd y = complex_admittance(net, outage_branch_ids);
  if (!network_connected(net, outage_branch_ids))
    throw Error("outage " + revision_tag(outage_branch_ids) + " splits the network into islands");

  const int n = net.size();
  AdmittanceMatrix out;
  out.magnitude.resize(n, n);
  out.angle.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      out.magnitude(i, j) = std::abs(y(i, j));
      out.angle(i, j) = out.magnitude(i, j) == 0.0 ? 0.0 : std::arg(y(i, j));
    }
  out.revision = revision_tag(outage_branch_ids);
  return out;
}

double net_active_power(const Eigen::VectorXd& v_mag, const Eigen::VectorXd& v_ang,
                        const AdmittanceMatrix& y, int bus_index) {
  const int n = y.size();
  if (v_mag.size() != n || v_ang.size() != n)
    throw Error("net_active_power: voltage vectors do not match admittance size");
  if (bus_index < 0 || bus_index >= n) throw Error("net_active_power: bus index out of range");
  double acc = 0.0;
  for (int j = 0; j < n; ++j) {
    const double yij = y.magnitude(bus_index, j);
    if (yij == 0.0) continue;
    acc += v_mag[j] * yij * std::cos(v_ang[bus_index] - v_ang[j] - y.angle(bus_index, j));
  }
  return v_mag[bus_index] * acc;
}

double net_reactive_power(const Eigen::VectorXd& v_mag, const Eigen::VectorXd& v_ang,
                          const AdmittanceMatrix& y, int bus_index) {
  const int n = y.size();
  if (v_mag.size() != n || v_ang.size() != n)
    throw Error("net_reactive_power: voltage vectors do not match admittance size");
  if (bus_index < 0 || bus_index >= n) throw Error("net_reactive_power: bus index out of range");
  double acc = 0.0;
  for (int j = 0; j < n; ++j) {
    const double yij = y.magnitude(bus_index, j);
    if (yij == 0.0) continue;
    acc += v_mag[j] * yij * std::sin(v_ang[bus_index] - v_ang[j] - y.angle(bus_index, j));
  }
  return v_mag[bus_index] * acc;
}

SteadyState solve_power_flow(const NetworkCase& net, const AdmittanceMatrix& y,
                             const PowerFlowOptions& opts) {
  if (!network_connected(net))
    throw Error("power flow: network is disconnected");
  const int n = net.size();
  if (y.size() != n) throw Error("power flow: admittance size does not match case");

  // Scheduled net injections. PV/slack scheduled P comes from the generator
  // dispatch minus local load; slack P and all generator Q floats.
  Eigen::VectorXd p_sched = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd q_sched = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    p_sched[i] -= net.buses()[i].p_load;
    q_sched[i] -= net.buses()[i].q_load;
  }
  for (const Generator& g : net.generators()) p_sched[net.bus_index(g.bus)] += g.p_dispatch;

  // Unknown layout: theta at every non-slack bus, V at every PQ bus.
  std::vector<int> ang_vars, mag_vars;
  for (int i = 0; i < n; ++i) {
    if (net.buses()[i].type != BusType::kSlack) ang_vars.push_back(i);
    if (net.buses()[i].type == BusType::kPQ) mag_vars.push_back(i);
  }
  const int na = static_cast<int>(ang_vars.size());
  const int nm = static_cast<int>(mag_vars.size());
  const int nu = na + nm;

  SteadyState ss;
  ss.v_mag = Eigen::VectorXd::Ones(n);
  ss.v_ang = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i)
    if (net.buses()[i].v_setpoint) ss.v_mag[i] = *net.buses()[i].v_setpoint;

  // Rectangular cache of G/B for Jacobian assembly.
  Eigen::MatrixXd G(n, n), B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      G(i, j) = y.magnitude(i, j) * std::cos(y.angle(i, j));
      B(i, j) = y.magnitude(i, j) * std::sin(y.angle(i, j));
    }

  Eigen::VectorXd p_calc(n), q_calc(n);
  auto eval_injections = [&]() {
    for (int i = 0; i < n; ++i) {
      p_calc[i] = net_active_power(ss.v_mag, ss.v_ang, y, i);
      q_calc[i] = net_reactive_power(ss.v_mag, ss.v_ang, y, i);
    }
  };

  auto mismatch_norm = [&](Eigen::VectorXd& f) {
    f.resize(nu);
    double worst = 0.0;
    for (int k = 0; k < na; ++k) {
      f[k] = p_sched[ang_vars[k]] - p_calc[ang_vars[k]];
      worst = std::max(worst, std::abs(f[k]));
    }
    for (int k = 0; k < nm; ++k) {
      f[na + k] = q_sched[mag_vars[k]] - q_calc[mag_vars[k]];
      worst = std::max(worst, std::abs(f[na + k]));
    }
    return worst;
  };

  Eigen::VectorXd f;
  eval_injections();
  double worst = mismatch_norm(f);
  int iter = 0;
  while (worst >= opts.tolerance) {
    if (iter >= opts.max_iterations) {
      std::ostringstream os;
      os << "power flow did not converge in " << opts.max_iterations
         << " iterations (max mismatch " << worst << " p.u.)";
      throw Error(os.str());
    }

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nu, nu);
    for (int r = 0; r < na; ++r) {
      const int i = ang_vars[r];
      for (int c = 0; c < na; ++c) {
        const int j = ang_vars[c];
        if (i == j)
          jac(r, c) = -q_calc[i] - B(i, i) * ss.v_mag[i] * ss.v_mag[i];
        else
          jac(r, c) = ss.v_mag[i] * ss.v_mag[j] *
                      (G(i, j) * std::sin(ss.v_ang[i] - ss.v_ang[j]) -
                       B(i, j) * std::cos(ss.v_ang[i] - ss.v_ang[j]));
      }
      for (int c = 0; c < nm; ++c) {
        const int j = mag_vars[c];
        if (i == j)
          jac(r, na + c) = p_calc[i] / ss.v_mag[i] + G(i, i) * ss.v_mag[i];
        else
          jac(r, na + c) = ss.v_mag[i] *
                           (G(i, j) * std::cos(ss.v_ang[i] - ss.v_ang[j]) +
                            B(i, j) * std::sin(ss.v_ang[i] - ss.v_ang[j]));
      }
    }
    for (int r = 0; r < nm; ++r) {
      const int i = mag_vars[r];
      for (int c = 0; c < na; ++c) {
        const int j = ang_vars[c];
        if (i == j)
          jac(na + r, c) = p_calc[i] - G(i, i) * ss.v_mag[i] * ss.v_mag[i];
        else
          jac(na + r, c) = -ss.v_mag[i] * ss.v_mag[j] *
                           (G(i, j) * std::cos(ss.v_ang[i] - ss.v_ang[j]) +
                            B(i, j) * std::sin(ss.v_ang[i] - ss.v_ang[j]));
      }
      for (int c = 0; c < nm; ++c) {
        const int j = mag_vars[c];
        if (i == j)
          jac(na + r, na + c) = q_calc[i] / ss.v_mag[i] - B(i, i) * ss.v_mag[i];
        else
          jac(na + r, na + c) = ss.v_mag[i] *
                                (G(i, j) * std::sin(ss.v_ang[i] - ss.v_ang[j]) -
                                 B(i, j) * std::cos(ss.v_ang[i] - ss.v_ang[j]));
      }
    }

    const Eigen::VectorXd dx = jac.partialPivLu().solve(f);
    if (!dx.allFinite()) throw Error("power flow: singular Jacobian");
    for (int k = 0; k < na; ++k) ss.v_ang[ang_vars[k]] += dx[k];
    for (int k = 0; k < nm; ++k) ss.v_mag[mag_vars[k]] += dx[na + k];

    eval_injections();
    worst = mismatch_norm(f);
    ++iter;
  }

  ss.p_net = p_calc;
  ss.q_net = q_calc;
  ss.iterations = iter;
  ss.max_mismatch = worst;
  ss.emf = Eigen::VectorXd::Zero(net.num_generators());
  ss.rotor_angle = Eigen::VectorXd::Zero(net.num_generators());
  return ss;
}

void init_generator_emf(SteadyState& ss, const NetworkCase& net) {
  const int ng = net.num_generators();
  ss.emf.resize(ng);
  ss.rotor_angle.resize(ng);
  for (int g = 0; g < ng; ++g) {
    const Generator& gen = net.generators()[g];
    const int i = net.bus_index(gen.bus);
    const double v = ss.v_mag[i];
    if (v <= 0.0)
      throw Error("init_generator_emf: zero voltage at generator bus " + std::to_string(gen.bus));
    // Machine terminal output = net injection plus local load.
    const double pg = ss.p_net[i] + net.buses()[i].p_load;
    const double qg = ss.q_net[i] + net.buses()[i].q_load;
    const std::complex<double> vv = std::polar(v, ss.v_ang[i]);
    const std::complex<double> s(pg, qg);
    const std::complex<double> current = std::conj(s / vv);
    const std::complex<double> e = vv + std::complex<double>(0.0, gen.xd_prime) * current;
    ss.emf[g] = std::abs(e);
    ss.rotor_angle[g] = std::arg(e);
  }
}

std::vector<BranchFlow> branch_flows(const NetworkCase& net, const Eigen::VectorXd& v_mag,
                                     const Eigen::VectorXd& v_ang,
                                     const std::vector<int>& outage_branch_ids) {
  std::set<int> out(outage_branch_ids.begin(), outage_branch_ids.end());
  std::vector<BranchFlow> flows;
  for (const Branch& br : net.branches()) {
    if (!br.in_service || out.count(br.id)) continue;
    const int a = net.bus_index(br.from);
    const int b = net.bus_index(br.to);
    const std::complex<double> va = std::polar(v_mag[a], v_ang[a]);
    const std::complex<double> vb = std::polar(v_mag[b], v_ang[b]);
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> ysh(0.0, br.b_shunt / 2.0);
    const std::complex<double> ia = ys * (va - vb) + ysh * va;
    const std::complex<double> ib = ys * (vb - va) + ysh * vb;
    BranchFlow f;
    f.branch_id = br.id;
    f.p_from = (va * std::conj(ia)).real();
    f.p_to = (vb * std::conj(ib)).real();
    flows.push_back(f);
  }
  return flows;
}

}  // namespace linewatch

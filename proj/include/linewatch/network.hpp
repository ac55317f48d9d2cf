#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

// Steady-state network model: case file parsing, bus admittance assembly,
// AC power-flow solution and classical-machine internal EMF initialization.
// All electrical quantities are per-unit on the case MVA base; angles are in
// radians.
namespace linewatch {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

enum class BusType { kSlack, kPV, kPQ };

struct Bus {
  int id = 0;
  BusType type = BusType::kPQ;
  double p_load = 0.0;  // p.u.
  double q_load = 0.0;  // p.u.
  std::optional<double> v_setpoint;  // required for slack and PV buses
};

struct Branch {
  int id = 0;
  int from = 0;
  int to = 0;
  double r = 0.0;        // series resistance, p.u.
  double x = 0.0;        // series reactance, p.u.
  double b_shunt = 0.0;  // total line charging susceptance, p.u.
  bool in_service = true;
};

struct Generator {
  int bus = 0;
  double inertia_m = 0.0;    // M = 2H: p.u. power per (p.u./s) speed rate, s
  double damping_d = 0.0;    // D: p.u. power per p.u. speed deviation
  double p_dispatch = 0.0;   // scheduled active power, p.u. (slack: nominal)
  double xd_prime = 0.0;     // transient reactance X'd, p.u.
};

// Parsed and validated network case. Bus ids are arbitrary integers; all
// vector/matrix quantities elsewhere are aligned to the dense bus index
// (0..size-1) given by bus_index().
class NetworkCase {
 public:
  // Parses the sectioned text format ([base] [bus] [branch] [gen] [pmu]);
  // see README for the column layout. Throws Error with the offending
  // section/field on any structural problem.
  static NetworkCase parse(const std::string& text, const std::string& origin = "case");
  static NetworkCase parse_file(const std::string& path);

  static NetworkCase assemble(std::vector<Bus> buses, std::vector<Branch> branches,
                              std::vector<Generator> generators, std::vector<int> pmu_buses,
                              double f0 = 60.0, double base_mva = 100.0);

  int size() const { return static_cast<int>(buses_.size()); }
  int num_branches() const { return static_cast<int>(branches_.size()); }
  int num_generators() const { return static_cast<int>(generators_.size()); }

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<Generator>& generators() const { return generators_; }
  const std::vector<int>& pmu_buses() const { return pmu_buses_; }

  double f0() const { return f0_; }
  double base_mva() const { return base_mva_; }
  double omega_s() const;  // electrical base speed 2*pi*f0, rad/s

  int bus_index(int bus_id) const;  // throws Error on unknown id
  int branch_pos(int branch_id) const;
  bool has_bus(int bus_id) const { return bus_index_.count(bus_id) != 0; }
  int slack_index() const { return slack_index_; }

  // Neighbor bus indices over in-service branches.
  const std::vector<int>& neighbors(int bus_index) const { return neighbors_[bus_index]; }
  // Generator position for a bus index, or -1.
  int generator_at(int bus_index) const { return gen_at_bus_[bus_index]; }

 private:
  void validate_and_index(const std::string& origin);

  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::vector<Generator> generators_;
  std::vector<int> pmu_buses_;
  double f0_ = 60.0;
  double base_mva_ = 100.0;

  std::unordered_map<int, int> bus_index_;
  std::unordered_map<int, int> branch_pos_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<int> gen_at_bus_;
  int slack_index_ = -1;
};

// Bus admittance matrix stored as magnitude/angle pairs, tagged with the
// outage revision that produced it ("base" or "out:<ids>").
struct AdmittanceMatrix {
  Eigen::MatrixXd magnitude;
  Eigen::MatrixXd angle;
  std::string revision;

  int size() const { return static_cast<int>(magnitude.rows()); }
  std::complex<double> at(int i, int j) const {
    return std::polar(magnitude(i, j), angle(i, j));
  }
};

// Assembles the admittance matrix with the listed branch ids removed.
// Unknown or out-of-service ids and outages that split the network are
// rejected.
AdmittanceMatrix build_admittance(const NetworkCase& net, const std::vector<int>& outage_branch_ids = {});

// True when every bus is reachable over in-service branches minus the listed
// outage ids.
bool network_connected(const NetworkCase& net, const std::vector<int>& outage_branch_ids = {});

// Net active/reactive injection at one bus from the polar power-balance sum
//   P_i = V_i * sum_j V_j Y_ij cos(theta_i - theta_j - alpha_ij).
double net_active_power(const Eigen::VectorXd& v_mag, const Eigen::VectorXd& v_ang,
                        const AdmittanceMatrix& y, int bus_index);
double net_reactive_power(const Eigen::VectorXd& v_mag, const Eigen::VectorXd& v_ang,
                          const AdmittanceMatrix& y, int bus_index);

struct SteadyState {
  Eigen::VectorXd v_mag;   // per bus, p.u.
  Eigen::VectorXd v_ang;   // per bus, rad
  Eigen::VectorXd p_net;   // per bus net injection, p.u.
  Eigen::VectorXd q_net;   // per bus net injection, p.u.
  Eigen::VectorXd emf;          // per generator, p.u. (init_generator_emf)
  Eigen::VectorXd rotor_angle;  // per generator, rad (init_generator_emf)
  int iterations = 0;
  double max_mismatch = 0.0;
};

struct PowerFlowOptions {
  double tolerance = 1e-8;  // max |power mismatch|, p.u.
  int max_iterations = 50;
};

// Newton-Raphson power flow from a flat start. Throws Error with the final
// mismatch on non-convergence or on a disconnected network.
SteadyState solve_power_flow(const NetworkCase& net, const AdmittanceMatrix& y,
                             const PowerFlowOptions& opts = {});

// Classical-model internal EMF from the bus boundary conditions:
//   E e^{j delta} = V e^{j theta} + j X'd * conj((P + jQ) / (V e^{j theta})).
// Fills ss.emf / ss.rotor_angle (aligned to net.generators()).
void init_generator_emf(SteadyState& ss, const NetworkCase& net);

// Active-power flow leaving each branch terminal and the implied series
// losses; used by conservation checks and line-loading reports.
struct BranchFlow {
  int branch_id = 0;
  double p_from = 0.0;  // into the branch at the from terminal, p.u.
  double p_to = 0.0;    // into the branch at the to terminal, p.u.
};
std::vector<BranchFlow> branch_flows(const NetworkCase& net, const Eigen::VectorXd& v_mag,
                                     const Eigen::VectorXd& v_ang,
                                     const std::vector<int>& outage_branch_ids = {});

}  // namespace linewatch

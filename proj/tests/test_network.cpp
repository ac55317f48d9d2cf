#include <doctest.h>

#include <cmath>
#include <complex>
#include <sstream>

#include "linewatch/network.hpp"
#include "linewatch/rng.hpp"
#include "oracles.hpp"

using namespace linewatch;

namespace {

const char* kTwoBusCase = R"(
[base]
f0 = 60.0
mva = 100.0
[bus]
1 slack 0.0 0.0 1.0
2 pq    0.5 0.0 -
[branch]
1 1 2 0.0 0.1 0.0 1
[gen]
1 60.0 10.0 0.5 0.25
[pmu]
1 2
)";

NetworkCase two_bus() { return NetworkCase::parse(kTwoBusCase, "two_bus"); }

NetworkCase case39() {
  static NetworkCase net = NetworkCase::parse_file(std::string(LINEWATCH_DATA_DIR) + "/case39");
  return net;
}

// Small random-but-valid test network for oracle sweeps.
NetworkCase random_net(std::uint64_t seed, int n_buses) {
  SequentialRng rng = SequentialRng::of(seed, 0xAAu);
  std::vector<Bus> buses;
  for (int i = 0; i < n_buses; ++i) {
    Bus b;
    b.id = i + 1;
    b.type = i == 0 ? BusType::kSlack : BusType::kPQ;
    if (i == 0) b.v_setpoint = 1.0;
    b.p_load = i == 0 ? 0.0 : 0.2 * rng.uniform();
    b.q_load = i == 0 ? 0.0 : 0.1 * rng.uniform();
    buses.push_back(b);
  }
  std::vector<Branch> branches;
  int id = 1;
  for (int i = 1; i < n_buses; ++i) {  // spanning tree first
    Branch br;
    br.id = id++;
    br.from = 1 + static_cast<int>(rng.uniform() * i) % i;
    br.to = i + 1;
    br.r = 0.001 + 0.02 * rng.uniform();
    br.x = 0.01 + 0.2 * rng.uniform();
    br.b_shunt = 0.3 * rng.uniform();
    branches.push_back(br);
  }
  for (int extra = 0; extra < n_buses / 2; ++extra) {  // some loops
    const int a = 1 + static_cast<int>(rng.uniform() * n_buses) % n_buses;
    const int b = 1 + static_cast<int>(rng.uniform() * n_buses) % n_buses;
    if (a == b) continue;
    Branch br;
    br.id = id++;
    br.from = a;
    br.to = b;
    br.r = 0.001 + 0.02 * rng.uniform();
    br.x = 0.01 + 0.2 * rng.uniform();
    br.b_shunt = 0.3 * rng.uniform();
    branches.push_back(br);
  }
  Generator g;
  g.bus = 1;
  g.inertia_m = 60.0;
  g.damping_d = 10.0;
  g.p_dispatch = 0.0;
  g.xd_prime = 0.2;
  return NetworkCase::assemble(buses, branches, {g}, {1});
}

}  // namespace

TEST_CASE("parse accepts a minimal two-bus case") {
  const NetworkCase net = two_bus();
  CHECK(net.size() == 2);
  CHECK(net.num_branches() == 1);
  CHECK(net.num_generators() == 1);
  CHECK(net.pmu_buses() == std::vector<int>{1, 2});
  CHECK(net.f0() == 60.0);
  CHECK(net.omega_s() == doctest::Approx(2 * 3.141592653589793 * 60.0));
  CHECK(net.bus_index(1) == 0);
  CHECK(net.neighbors(0) == std::vector<int>{1});
}

TEST_CASE("parse rejects structural errors with a field path") {
  auto expect_error = [](const std::string& text, const std::string& fragment) {
    try {
      NetworkCase::parse(text, "bad");
      FAIL_CHECK("expected parse of case with '" << fragment << "' to throw");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };

  // Branch endpoint referencing an unknown bus.
  expect_error(R"(
[base]
f0 = 60
[bus]
1 slack 0 0 1.0
2 pq 0 0 -
[branch]
1 1 7 0.0 0.1 0.0 1
[gen]
1 60 10 0 0.25
)",
               "branch[0].to");
  // Duplicate bus id.
  expect_error(R"(
[bus]
1 slack 0 0 1.0
1 pq 0 0 -
)",
               "bus[1].id 1");
  // No slack bus.
  expect_error(R"(
[bus]
1 pq 0 0 -
2 pq 0 0 -
[branch]
1 1 2 0.0 0.1 0.0 1
)",
               "exactly one slack");
  // Zero series impedance.
  expect_error(R"(
[bus]
1 slack 0 0 1.0
2 pq 0 0 -
[branch]
1 1 2 0.0 0.0 0.0 1
[gen]
1 60 10 0 0.25
)",
               "series impedance is zero");
  // PMU bus not in the bus table.
  expect_error(R"(
[bus]
1 slack 0 0 1.0
[gen]
1 60 10 0 0.25
[pmu]
3
)",
               "pmu bus 3");
  // Nonpositive machine inertia.
  expect_error(R"(
[bus]
1 slack 0 0 1.0
[gen]
1 0.0 10 0 0.25
)",
               "gen[0].M");
  // Malformed number.
  expect_error(R"(
[bus]
1 slack 0 zz 1.0
)",
               "expected a number");
}

TEST_CASE("two-bus admittance has the frozen polar entries") {
  const AdmittanceMatrix y = build_admittance(two_bus());
  CHECK(y.revision == "base");
  CHECK(y.magnitude(0, 1) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(y.angle(0, 1) == doctest::Approx(3.141592653589793 / 2).epsilon(1e-12));
  CHECK(y.magnitude(0, 0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(y.angle(0, 0) == doctest::Approx(-3.141592653589793 / 2).epsilon(1e-12));
  CHECK(y.magnitude(1, 1) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("admittance assembly matches the complex oracle") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const NetworkCase net = random_net(seed, 8);
    const AdmittanceMatrix y = build_admittance(net);
    const Eigen::MatrixXcd ref = oracles::complex_ybus(net);
    for (int i = 0; i < net.size(); ++i)
      for (int j = 0; j < net.size(); ++j) {
        CHECK(std::abs(y.at(i, j) - ref(i, j)) < 1e-12 * std::max(1.0, std::abs(ref(i, j))));
      }
  }
}

TEST_CASE("admittance is exactly symmetric in complex value") {
  const NetworkCase net = case39();
  const AdmittanceMatrix y = build_admittance(net);
  for (int i = 0; i < net.size(); ++i)
    for (int j = i + 1; j < net.size(); ++j) {
      CHECK(y.magnitude(i, j) == y.magnitude(j, i));
      CHECK(y.angle(i, j) == y.angle(j, i));
    }
}

TEST_CASE("line outage only touches the endpoint block") {
  const NetworkCase net = case39();
  const AdmittanceMatrix base = build_admittance(net);
  const int line = 11;  // joins buses 5 and 8
  const AdmittanceMatrix out = build_admittance(net, {line});
  CHECK(out.revision == "out:11");
  const int a = net.bus_index(5);
  const int b = net.bus_index(8);
  CHECK(out.magnitude(a, b) == 0.0);  // no parallel circuit remains
  CHECK(out.magnitude(b, a) == 0.0);
  for (int i = 0; i < net.size(); ++i)
    for (int j = 0; j < net.size(); ++j) {
      const bool touched = (i == a || i == b) && (j == a || j == b);
      if (!touched) {
        CHECK(out.magnitude(i, j) == base.magnitude(i, j));
        CHECK(out.angle(i, j) == base.angle(i, j));
      }
    }
}

TEST_CASE("out-of-service branch equals rebuilding with the outage") {
  NetworkCase net = case39();
  const AdmittanceMatrix via_outage = build_admittance(net, {11});

  // Re-parse with branch 11 flagged out of service in the file body.
  std::vector<Bus> buses = net.buses();
  std::vector<Branch> branches = net.branches();
  for (auto& br : branches)
    if (br.id == 11) br.in_service = false;
  const NetworkCase net2 =
      NetworkCase::assemble(buses, branches, net.generators(), net.pmu_buses(), net.f0(), net.base_mva());
  const AdmittanceMatrix direct = build_admittance(net2);
  CHECK((via_outage.magnitude - direct.magnitude).cwiseAbs().maxCoeff() == 0.0);
  CHECK((via_outage.angle - direct.angle).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("admittance build rejects bad outage sets") {
  const NetworkCase net = case39();
  CHECK_THROWS_AS((void)build_admittance(net, {999}), Error);
  CHECK_THROWS_AS((void)build_admittance(net, {11, 11}), Error);
  // Removing the only branch into bus 30 would island it.
  CHECK_THROWS_AS((void)build_admittance(net, {5}), Error);
  CHECK_THROWS_AS((void)build_admittance(two_bus(), {1}), Error);
}

TEST_CASE("net active power of a disconnected row is zero") {
  AdmittanceMatrix y;
  y.magnitude = Eigen::MatrixXd::Zero(3, 3);
  y.angle = Eigen::MatrixXd::Zero(3, 3);
  y.magnitude(0, 0) = 5.0;  // bus 2 row stays empty
  Eigen::VectorXd vm = Eigen::VectorXd::Ones(3), va = Eigen::VectorXd::Zero(3);
  CHECK(net_active_power(vm, va, y, 2) == 0.0);
}

TEST_CASE("polar power sums match the complex oracle on random draws") {
  const NetworkCase net = random_net(9u, 6);
  const AdmittanceMatrix y = build_admittance(net);
  const Eigen::MatrixXcd ref = oracles::complex_ybus(net);
  SequentialRng rng = SequentialRng::of(17u);
  for (int draw = 0; draw < 1000; ++draw) {
    Eigen::VectorXd vm(net.size()), va(net.size());
    for (int i = 0; i < net.size(); ++i) {
      vm[i] = 0.9 + 0.2 * rng.uniform();
      va[i] = 0.6 * (rng.uniform() - 0.5);
    }
    for (int i = 0; i < net.size(); ++i) {
      const std::complex<double> s = oracles::complex_power(ref, vm, va, i);
      const double p = net_active_power(vm, va, y, i);
      const double q = net_reactive_power(vm, va, y, i);
      const double scale = std::max(1.0, std::abs(s));
      CHECK(std::abs(p - s.real()) < 1e-12 * scale);
      CHECK(std::abs(q - s.imag()) < 1e-12 * scale);
    }
  }
}

TEST_CASE("power flow on a single slack bus converges with zero corrections") {
  const char* text = R"(
[bus]
1 slack 0.0 0.0 1.02
[gen]
1 60 10 0 0.25
)";
  const NetworkCase net = NetworkCase::parse(text, "single");
  const SteadyState ss = solve_power_flow(net, build_admittance(net));
  CHECK(ss.iterations == 0);
  CHECK(ss.v_mag[0] == 1.02);
  CHECK(ss.v_ang[0] == 0.0);
}

TEST_CASE("two-bus power flow matches the bisection oracle") {
  const NetworkCase net = two_bus();
  const SteadyState ss = solve_power_flow(net, build_admittance(net));

  // With a lossless line x = 0.1 and a purely active 0.5 p.u. load, the
  // reactive balance forces cos(theta2) = V2 and the active balance leaves a
  // quartic in V2 alone: V2^4 - V2^2 + (P*x)^2 = 0.
  const double px = 0.5 * 0.1;
  const double v2 = oracles::bisect([&](double v) { return v * v * v * v - v * v + px * px; }, 0.9, 1.0);
  const double th2 = -std::asin(px / v2);

  CHECK(ss.v_mag[1] == doctest::Approx(v2).epsilon(1e-8));
  CHECK(ss.v_ang[1] == doctest::Approx(th2).epsilon(1e-8));
  CHECK(ss.max_mismatch < 1e-8);
  // Slack picks up the series loss (zero here: r = 0).
  CHECK(ss.p_net[0] == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("39-bus case parses with the expected inventory") {
  const NetworkCase net = case39();
  CHECK(net.size() == 39);
  CHECK(net.num_branches() == 46);
  CHECK(net.num_generators() == 10);
  CHECK(net.pmu_buses() == std::vector<int>{19, 20, 22, 23, 25, 33, 34, 35, 36, 37});
}

TEST_CASE("39-bus power flow converges and balances") {
  const NetworkCase net = case39();
  const AdmittanceMatrix y = build_admittance(net);
  const SteadyState ss = solve_power_flow(net, y);
  CHECK(ss.max_mismatch < 1e-8);
  CHECK(ss.iterations <= 10);
  for (int i = 0; i < net.size(); ++i) {
    CHECK(ss.v_mag[i] > 0.85);
    CHECK(ss.v_mag[i] < 1.15);
  }

  // Conservation: net injections must sum to the series losses computed
  // independently from branch terminal flows.
  double injection_sum = 0.0;
  for (int i = 0; i < net.size(); ++i) injection_sum += ss.p_net[i];
  double loss_sum = 0.0;
  for (const auto& f : branch_flows(net, ss.v_mag, ss.v_ang)) loss_sum += f.p_from + f.p_to;
  CHECK(injection_sum == doctest::Approx(loss_sum).epsilon(1e-6));
  CHECK(injection_sum > 0.0);  // a lossy network absorbs real power

  // Scheduled injections hold at every PV bus.
  for (const Generator& g : net.generators()) {
    const int i = net.bus_index(g.bus);
    if (net.buses()[i].type == BusType::kPV) {
      CHECK(ss.p_net[i] ==
            doctest::Approx(g.p_dispatch - net.buses()[i].p_load).epsilon(1e-7));
    }
  }
}

TEST_CASE("power flow reports non-convergence with the residual") {
  // An absurd load has no solution; the error message carries the mismatch.
  std::vector<Bus> buses = two_bus().buses();
  buses[1].p_load = 60.0;
  const NetworkCase net =
      NetworkCase::assemble(buses, two_bus().branches(), two_bus().generators(), {}, 60.0, 100.0);
  try {
    (void)solve_power_flow(net, build_admittance(net));
    FAIL_CHECK("expected non-convergence");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("did not converge") != std::string::npos);
    CHECK(std::string(e.what()).find("mismatch") != std::string::npos);
  }
}

TEST_CASE("power flow rejects a disconnected network") {
  std::vector<Bus> buses = {{1, BusType::kSlack, 0, 0, 1.0}, {2, BusType::kPQ, 0, 0, {}},
                            {3, BusType::kPQ, 0, 0, {}}, {4, BusType::kPQ, 0, 0, {}}};
  std::vector<Branch> branches = {{1, 1, 2, 0.0, 0.1, 0.0, true}, {2, 3, 4, 0.0, 0.1, 0.0, true}};
  const Generator g{1, 60.0, 10.0, 0.0, 0.25};
  const NetworkCase net = NetworkCase::assemble(buses, branches, {g}, {});
  CHECK_FALSE(network_connected(net));
  AdmittanceMatrix y;
  y.magnitude = Eigen::MatrixXd::Zero(4, 4);
  y.angle = Eigen::MatrixXd::Zero(4, 4);
  CHECK_THROWS_WITH_AS((void)solve_power_flow(net, y), doctest::Contains("disconnected"), Error);
}

TEST_CASE("generator emf reduces to the terminal voltage at zero injection") {
  std::vector<Bus> buses = {{1, BusType::kSlack, 0, 0, 1.03}};
  const Generator g{1, 60.0, 10.0, 0.0, 0.3};
  const NetworkCase net = NetworkCase::assemble(buses, {}, {g}, {});
  SteadyState ss = solve_power_flow(net, build_admittance(net));
  init_generator_emf(ss, net);
  CHECK(ss.emf[0] == doctest::Approx(1.03).epsilon(1e-12));
  CHECK(ss.rotor_angle[0] == doctest::Approx(0.0));
}

TEST_CASE("generator emf round-trips through the electrical power law") {
  const NetworkCase net = case39();
  SteadyState ss = solve_power_flow(net, build_admittance(net));
  init_generator_emf(ss, net);
  for (int g = 0; g < net.num_generators(); ++g) {
    const Generator& gen = net.generators()[g];
    const int i = net.bus_index(gen.bus);
    const double pg_expected = ss.p_net[i] + net.buses()[i].p_load;
    const double pg_back = ss.emf[g] * ss.v_mag[i] / gen.xd_prime *
                           std::sin(ss.rotor_angle[g] - ss.v_ang[i]);
    CHECK(pg_back == doctest::Approx(pg_expected).epsilon(1e-8));
    CHECK(ss.emf[g] > 0.8);
    CHECK(ss.emf[g] < 1.5);
  }
}

TEST_CASE("generator emf rejects a dead bus voltage") {
  std::vector<Bus> buses = {{1, BusType::kSlack, 0, 0, 1.0}};
  const Generator g{1, 60.0, 10.0, 0.0, 0.3};
  const NetworkCase net = NetworkCase::assemble(buses, {}, {g}, {});
  SteadyState ss = solve_power_flow(net, build_admittance(net));
  ss.v_mag[0] = 0.0;
  CHECK_THROWS_AS(init_generator_emf(ss, net), Error);
}

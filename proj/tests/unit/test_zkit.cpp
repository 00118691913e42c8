#include <cmath>
#include <numbers>

#include "doctest.h"
#include "../support/netlists.hpp"
#include "pdnrl/error.hpp"

using namespace pdnrl;
using namespace pdnrl::zkit;
using pdnrl::testing::external_port;

namespace {

FrequencyGrid test_grid() { return build_frequency_grid(1e7, 2e10, 9); }

ZMatrixSeries constant_series(const FrequencyGrid& g, std::vector<PortId> ports, const CMatrix& m) {
  return ZMatrixSeries(g, std::move(ports), std::vector<CMatrix>(g.size(), m));
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;  // sentinel: nothing thrown
}

}  // namespace

TEST_CASE("log grid endpoints and ratio") {
  auto g = build_frequency_grid(1e7, 2e10, 166);
  REQUIRE(g.size() == 166);
  CHECK(g[0] == 1e7);
  CHECK(g[165] == 2e10);
  const double ratio = 1.047143599220937;
  for (std::size_t i = 0; i + 1 < g.size(); ++i) CHECK(std::abs(g[i + 1] / g[i] / ratio - 1.0) < 1e-12);

  auto one = build_frequency_grid(5e6, 5e6, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 5e6);

  CHECK(kind_of([] { build_frequency_grid(0.0, 1e9, 3); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { build_frequency_grid(1e9, 1e8, 3); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { build_frequency_grid(1e8, 1e9, 0); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { build_frequency_grid(1e8, 1e9, 1); }) == ErrorKind::InvalidRange);
}

TEST_CASE("oracle closed forms") {
  auto g = build_frequency_grid(1e9, 1e9, 1);
  Netlist cap;
  cap.node_count = 1;
  cap.add(capacitor(1, 0, 2e-12));
  cap.add_port(external_port(1), 1);
  auto zc = nodal_oracle(cap, g);
  const Complex want_c = 1.0 / Complex(0.0, 2.0 * std::numbers::pi * 1e9 * 2e-12);
  CHECK(std::abs(zc.at(0)(0, 0) - want_c) < 1e-12 * std::abs(want_c));

  Netlist rl;
  rl.node_count = 1;
  rl.add(series_rlc(1, 0, 1.0, 1e-9, 0.0));
  rl.add_port(external_port(1), 1);
  auto zrl = nodal_oracle(rl, g);
  CHECK(zrl.at(0)(0, 0).real() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(zrl.at(0)(0, 0).imag() == doctest::Approx(6.283185307179587).epsilon(1e-12));

  Netlist pi;
  pi.node_count = 2;
  pi.add(resistor(1, 0, 1.0));
  pi.add(resistor(1, 2, 1.0));
  pi.add(resistor(2, 0, 1.0));
  pi.add_port(external_port(1), 1);
  pi.add_port(external_port(2), 2);
  auto zp = nodal_oracle(pi, g);
  CHECK(std::abs(zp.at(0)(0, 0) - 2.0 / 3.0) < 1e-14);
  CHECK(std::abs(zp.at(0)(0, 1) - 1.0 / 3.0) < 1e-14);
  CHECK(std::abs(zp.at(0)(1, 0) - 1.0 / 3.0) < 1e-14);
  CHECK(std::abs(zp.at(0)(1, 1) - 2.0 / 3.0) < 1e-14);

  Netlist floating;
  floating.node_count = 2;
  floating.add(resistor(1, 0, 1.0));
  floating.add_port(external_port(1), 1);
  CHECK(kind_of([&] { nodal_oracle(floating, g); }) == ErrorKind::SingularSystem);
}

TEST_CASE("cascade of two resistive L-sections") {
  // Each section: 1 ohm series from port 1 to port 2, 1 ohm shunt at port 2.
  auto g = test_grid();
  CMatrix l(2, 2);
  l << 2.0, 1.0, 1.0, 1.0;
  const PortId a1 = external_port(1), a2 = external_port(2), b1 = external_port(3), b2 = external_port(4);
  auto a = constant_series(g, {a1, a2}, l);
  auto b = constant_series(g, {b1, b2}, l);
  std::vector<PortId> p{a2}, q{b1};
  auto c = cascade(a, p, b, q);
  REQUIRE(c.ports() == std::vector<PortId>{a1, b2});
  for (const auto& m : c.data()) {
    CHECK(std::abs(m(0, 0) - 5.0 / 3.0) < 1e-14);
    CHECK(std::abs(m(0, 1) - 1.0 / 3.0) < 1e-14);
    CHECK(std::abs(m(1, 1) - 2.0 / 3.0) < 1e-14);
  }
}

TEST_CASE("empty cascade is the block-diagonal union") {
  auto g = test_grid();
  CMatrix ma(1, 1), mb(2, 2);
  ma << Complex(3.0, 1.0);
  mb << 1.0, 0.5, 0.5, 2.0;
  auto c = cascade(constant_series(g, {external_port(1)}, ma), {}, constant_series(g, {external_port(2), external_port(3)}, mb), {});
  REQUIRE(c.port_count() == 3);
  CHECK(c.at(0)(0, 0) == Complex(3.0, 1.0));
  CHECK(c.at(0)(0, 1) == Complex(0.0));
  CHECK(c.at(0)(2, 0) == Complex(0.0));
  CHECK(c.at(0)(1, 2) == Complex(0.5));
}

TEST_CASE("cascade errors") {
  auto g = test_grid();
  CMatrix m(1, 1);
  m << 1.0;
  auto a = constant_series(g, {external_port(1)}, m);
  auto other = constant_series(build_frequency_grid(1e7, 2e10, 10), {external_port(2)}, m);
  std::vector<PortId> p{external_port(1)}, q{external_port(2)};
  CHECK(kind_of([&] { cascade(a, p, other, q); }) == ErrorKind::IncompatibleGrids);

  CMatrix neg(1, 1);
  neg << -1.0;
  auto b = constant_series(g, {external_port(2)}, neg);
  try {
    cascade(a, p, b, q);
    FAIL("expected a singular interconnect");
  } catch (const CascadeSingularity& e) {
    CHECK(e.frequency_index() == 0);
  }
  std::vector<PortId> missing{external_port(9)};
  CHECK(kind_of([&] { cascade(a, missing, b, q); }) == ErrorKind::NoSuchPort);
}

TEST_CASE("cascade matches the oracle on random split graphs") {
  auto g = test_grid();
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = pdnrl::testing::random_split_network(rng);
    auto za = nodal_oracle(s.a, g);
    auto zb = nodal_oracle(s.b, g);
    auto joined = cascade(za, s.pair_a, zb, s.pair_b);
    auto whole = subselect(nodal_oracle(s.whole, g), joined.ports());
    CHECK(relative_frobenius_error(joined, whole) < 1e-9);
  }
}

TEST_CASE("decap attachment") {
  auto g = test_grid();
  auto decap = sample_shunt(g, [](double f) { return Complex(7e-4, -1.0 / (2.0 * std::numbers::pi * f * 1.055e-9)); });

  CMatrix r(1, 1);
  r << 10.0;
  auto z = constant_series(g, {external_port(1)}, r);
  std::vector<PortId> one{external_port(1)};
  auto loaded = attach_decaps(z, one, decap);
  for (std::size_t k = 0; k < g.size(); ++k) {
    const Complex want = 10.0 * decap[k] / (10.0 + decap[k]);
    CHECK(std::abs(loaded.at(k)(0, 0) - want) < 1e-12 * std::abs(want));
  }

  Rng rng(7);
  auto net = pdnrl::testing::random_netlist(rng, 10, 8);
  auto base = nodal_oracle(net, g);
  CHECK(identical(attach_decaps(base, {}, decap), base));

  auto picks = sample_without_replacement(rng, 8, 3);
  std::vector<PortId> positions;
  auto stamped = net;
  for (auto i : picks) {
    positions.push_back(base.ports()[i]);
    const int node = base.ports()[i].col;
    stamped.add({node, 0, [](double f) { return Complex(7e-4, -1.0 / (2.0 * std::numbers::pi * f * 1.055e-9)); }});
  }
  CHECK(relative_frobenius_error(attach_decaps(base, positions, decap), nodal_oracle(stamped, g)) < 1e-9);

  std::vector<PortId> first(positions.begin(), positions.begin() + 1), rest(positions.begin() + 1, positions.end());
  CHECK(relative_frobenius_error(attach_decaps(attach_decaps(base, first, decap), rest, decap),
                                 attach_decaps(base, positions, decap)) < 1e-10);

  std::vector<PortId> unknown{external_port(99)};
  CHECK(kind_of([&] { attach_decaps(base, unknown, decap); }) == ErrorKind::NoSuchPort);
}

TEST_CASE("subselect") {
  Rng rng(11);
  auto g = test_grid();
  auto z = nodal_oracle(pdnrl::testing::random_netlist(rng, 6, 4), g);
  CHECK(identical(subselect(z, z.ports()), z));

  std::vector<PortId> rev(z.ports().rbegin(), z.ports().rend());
  auto r = subselect(z, rev);
  std::vector<PortId> back(r.ports().rbegin(), r.ports().rend());
  CHECK(identical(subselect(r, back), z));

  std::vector<PortId> single{z.ports()[2]};
  auto s = subselect(z, single);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(s.at(k)(0, 0) == z.at(k)(2, 2));

  std::vector<PortId> dup{z.ports()[0], z.ports()[0]};
  CHECK(kind_of([&] { subselect(z, dup); }) == ErrorKind::InvalidSelection);
  std::vector<PortId> unknown{external_port(99)};
  CHECK(kind_of([&] { subselect(z, unknown); }) == ErrorKind::NoSuchPort);

  // Attachment inside the selected set commutes with selection.
  auto decap = sample_shunt(g, [](double) { return Complex(0.5, -2.0); });
  std::vector<PortId> keep{z.ports()[0], z.ports()[1], z.ports()[3]};
  std::vector<PortId> at{z.ports()[1]};
  CHECK(relative_frobenius_error(subselect(attach_decaps(z, at, decap), keep),
                                 attach_decaps(subselect(z, keep), at, decap)) < 1e-12);
}

TEST_CASE("tap and merge match the oracle") {
  auto g = test_grid();
  Rng rng(5);
  auto net = pdnrl::testing::random_netlist(rng, 8, 4);
  auto z = nodal_oracle(net, g);

  PortId extra{Layer::External, 100, 0, PortRole::Interconnect, 0};
  std::vector<PortId> from{z.ports()[1]}, to{extra};
  auto t = tap(z, from, to);
  REQUIRE(t.port_count() == 5);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(t.at(k)(4, 4) == z.at(k)(1, 1));

  // Shorting ports 0, 2, 3 together equals adding near-zero branches between
  // their nodes; the oracle gets an ideal short by node relabelling instead.
  std::vector<PortId> tie{z.ports()[0], z.ports()[2], z.ports()[3]};
  PortId merged{Layer::External, 200, 0, PortRole::Interconnect, 0};
  auto m = merge_ports(z, tie, merged);
  REQUIRE(m.ports() == std::vector<PortId>{z.ports()[1], merged});

  std::vector<int> target(static_cast<std::size_t>(net.node_count) + 1);
  for (int v = 0; v <= net.node_count; ++v) target[static_cast<std::size_t>(v)] = v;
  const int keep_node = tie[0].col;
  for (const auto& p : tie) target[static_cast<std::size_t>(p.col)] = keep_node;
  Netlist shorted;
  std::vector<int> renumber(static_cast<std::size_t>(net.node_count) + 1, -1);
  renumber[0] = 0;
  for (int v = 1; v <= net.node_count; ++v)
    if (target[static_cast<std::size_t>(v)] == v) renumber[static_cast<std::size_t>(v)] = shorted.add_node();
  auto node_of = [&](int v) { return renumber[static_cast<std::size_t>(target[static_cast<std::size_t>(v)])]; };
  for (const auto& e : net.elements)
    if (node_of(e.a) != node_of(e.b)) shorted.add({node_of(e.a), node_of(e.b), e.impedance});
  shorted.add_port(z.ports()[1], node_of(z.ports()[1].col));
  shorted.add_port(merged, node_of(keep_node));
  CHECK(relative_frobenius_error(m, nodal_oracle(shorted, g)) < 1e-9);
}

TEST_CASE("series validation and invariants") {
  auto g = test_grid();
  CMatrix m(2, 2);
  m << 1.0, 0.5, 0.5, 1.0;
  CHECK(kind_of([&] { ZMatrixSeries(g, {external_port(1)}, std::vector<CMatrix>(g.size(), m)); }) == ErrorKind::Shape);
  CHECK(kind_of([&] { ZMatrixSeries(g, {external_port(1), external_port(1)}, std::vector<CMatrix>(g.size(), m)); }) ==
        ErrorKind::InvalidSelection);
  auto z = constant_series(g, {external_port(1), external_port(2)}, m);
  CHECK(reciprocity_error(z) == 0.0);
  CHECK(min_diagonal_real(z) == 1.0);

  Rng rng(3);
  auto r = nodal_oracle(pdnrl::testing::random_netlist(rng, 12, 6), build_frequency_grid(1e7, 2e10, 166));
  CHECK(reciprocity_error(r) < 1e-10);
  CHECK(min_diagonal_real(r) >= -1e-12);
}

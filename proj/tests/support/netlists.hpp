#pragma once

// Random element graphs used by the cascade and attachment checks.

#include <algorithm>
#include <vector>

#include "pdnrl/rng.hpp"
#include "pdnrl/zkit.hpp"

namespace pdnrl::testing {

using zkit::Element;
using zkit::Netlist;
using zkit::PortId;

inline double log_uniform(Rng& rng, double lo, double hi) {
  return lo * std::pow(hi / lo, uniform01(rng));
}

// Lossy R, RL, RC or RLC branch with values typical of an on-die grid.
inline Element random_branch(Rng& rng, int a, int b) {
  const double r = log_uniform(rng, 0.01, 10.0);
  switch (uniform_below(rng, 4)) {
    case 0: return zkit::resistor(a, b, r);
    case 1: return zkit::series_rlc(a, b, r, log_uniform(rng, 1e-12, 1e-9), 0.0);
    case 2: return zkit::series_rlc(a, b, r, 0.0, log_uniform(rng, 1e-12, 1e-9));
    default: return zkit::series_rlc(a, b, r, log_uniform(rng, 1e-12, 1e-9), log_uniform(rng, 1e-12, 1e-9));
  }
}

inline PortId external_port(int node) { return {zkit::Layer::External, node, 0, zkit::PortRole::ProbingCandidate, 0}; }
inline PortId interface_port(int node, int side) {
  return {zkit::Layer::External, node, 0, zkit::PortRole::Interconnect, side};
}

// A graph split into two grounded halves that share some nodes. Cascading
// half `a` with half `b` over the shared nodes must reproduce `whole`.
struct SplitNetwork {
  Netlist whole;
  Netlist a;
  Netlist b;
  std::vector<PortId> pair_a;
  std::vector<PortId> pair_b;
};

inline SplitNetwork random_split_network(Rng& rng, int max_nodes = 12, int max_ports = 6) {
  SplitNetwork s;
  const int nodes = 2 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(max_nodes - 1)));
  // 0: only in a, 1: only in b, 2: shared
  std::vector<int> owner(static_cast<std::size_t>(nodes) + 1);
  for (int v = 1; v <= nodes; ++v) owner[static_cast<std::size_t>(v)] = static_cast<int>(uniform_below(rng, 3));
  owner[1] = 2;
  s.whole.node_count = s.a.node_count = s.b.node_count = nodes;

  auto in_side = [&](int v, int side) { return v == 0 || owner[static_cast<std::size_t>(v)] == 2 || owner[static_cast<std::size_t>(v)] == side; };
  auto place = [&](const Element& e, int side) {
    s.whole.add(e);
    (side == 0 ? s.a : s.b).add(e);
  };

  for (int v = 1; v <= nodes; ++v) {
    for (int side = 0; side < 2; ++side)
      if (in_side(v, side)) place(random_branch(rng, v, 0), side);
  }
  const int branches = nodes + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(nodes) + 1));
  for (int i = 0; i < branches; ++i) {
    const int u = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(nodes)));
    const int v = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(nodes)));
    if (u == v) continue;
    std::vector<int> sides;
    for (int side = 0; side < 2; ++side)
      if (in_side(u, side) && in_side(v, side)) sides.push_back(side);
    if (sides.empty()) continue;
    place(random_branch(rng, u, v), sides[uniform_below(rng, sides.size())]);
  }

  // A node outside a half is isolated there. Grounding it keeps that half's
  // nodal system regular without touching any of its ports.
  for (int v = 1; v <= nodes; ++v) {
    const int o = owner[static_cast<std::size_t>(v)];
    if (o == 1) s.a.add(zkit::resistor(v, 0, 1.0));
    if (o == 0) s.b.add(zkit::resistor(v, 0, 1.0));
  }

  const int ports = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(std::min(max_ports, nodes))));
  auto chosen = sample_without_replacement(rng, static_cast<std::size_t>(nodes), static_cast<std::size_t>(ports));
  std::sort(chosen.begin(), chosen.end());
  for (auto c : chosen) {
    const int v = static_cast<int>(c) + 1;
    s.whole.add_port(external_port(v), v);
    (owner[static_cast<std::size_t>(v)] == 1 ? s.b : s.a).add_port(external_port(v), v);
  }
  for (int v = 1; v <= nodes; ++v) {
    if (owner[static_cast<std::size_t>(v)] != 2) continue;
    s.a.add_port(interface_port(v, 0), v);
    s.b.add_port(interface_port(v, 1), v);
    s.pair_a.push_back(interface_port(v, 0));
    s.pair_b.push_back(interface_port(v, 1));
  }
  return s;
}

// Random grounded graph with `ports` distinct port nodes.
inline Netlist random_netlist(Rng& rng, int nodes, int ports) {
  Netlist n;
  n.node_count = nodes;
  for (int v = 1; v <= nodes; ++v) n.add(random_branch(rng, v, 0));
  for (int v = 2; v <= nodes; ++v)
    n.add(random_branch(rng, v, 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(v - 1)))));
  for (int i = 0; i < nodes; ++i) {
    const int u = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(nodes)));
    const int v = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(nodes)));
    if (u != v) n.add(random_branch(rng, u, v));
  }
  auto chosen = sample_without_replacement(rng, static_cast<std::size_t>(nodes), static_cast<std::size_t>(ports));
  std::sort(chosen.begin(), chosen.end());
  for (auto c : chosen) n.add_port(external_port(static_cast<int>(c) + 1), static_cast<int>(c) + 1);
  return n;
}

}  // namespace pdnrl::testing

#pragma once

// Complex multiport network algebra on a shared frequency grid.
//
// A ZMatrixSeries is the impedance matrix of an N-port, sampled at every
// point of a FrequencyGrid. Networks are composed with cascade() (port-pair
// connection by the segmentation method), loaded with attach_decaps()
// (shunt impedances at existing ports) and reduced with subselect()
// (open-circuiting the dropped ports). nodal_oracle() builds the same
// quantities from an element graph by nodal analysis and is used to check
// everything else.

#include <compare>
#include <complex>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pdnrl::zkit {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;

class FrequencyGrid {
 public:
  FrequencyGrid() = default;
  // Points must be positive and strictly increasing.
  explicit FrequencyGrid(std::vector<double> points);

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t i) const { return points_[i]; }
  const std::vector<double>& points() const { return points_; }

  friend bool operator==(const FrequencyGrid&, const FrequencyGrid&) = default;

 private:
  std::vector<double> points_;
};

// Geometric spacing from f_min to f_max inclusive.
FrequencyGrid build_frequency_grid(double f_min, double f_max, std::size_t count);

enum class Layer : std::uint8_t { Chip = 0, Interposer = 1, External = 2 };
enum class PortRole : std::uint8_t { ProbingCandidate = 0, DecapCandidate = 1, Interconnect = 2 };

// Canonical order is (layer, row, column, role, instance). `instance`
// distinguishes several interconnect ports tapped at the same cell.
struct PortId {
  Layer layer = Layer::Chip;
  int col = 0;
  int row = 0;
  PortRole role = PortRole::DecapCandidate;
  int instance = 0;

  auto key() const { return std::tuple(layer, row, col, role, instance); }
  friend bool operator==(const PortId& a, const PortId& b) { return a.key() == b.key(); }
  friend auto operator<=>(const PortId& a, const PortId& b) { return a.key() <=> b.key(); }
};

std::string to_string(const PortId& port);
const char* to_string(Layer layer);
const char* to_string(PortRole role);

class ZMatrixSeries {
 public:
  ZMatrixSeries() = default;
  ZMatrixSeries(FrequencyGrid grid, std::vector<PortId> ports, std::vector<CMatrix> data);

  const FrequencyGrid& grid() const { return grid_; }
  const std::vector<PortId>& ports() const { return ports_; }
  std::size_t port_count() const { return ports_.size(); }
  std::size_t frequency_count() const { return data_.size(); }

  const CMatrix& at(std::size_t k) const { return data_[k]; }
  const std::vector<CMatrix>& data() const { return data_; }

  std::optional<std::size_t> find(const PortId& port) const;
  // Throws NoSuchPort.
  std::size_t index_of(const PortId& port) const;

 private:
  FrequencyGrid grid_;
  std::vector<PortId> ports_;
  std::vector<CMatrix> data_;
};

// Bitwise equality of grid, ports and every matrix entry.
bool identical(const ZMatrixSeries& a, const ZMatrixSeries& b);

// Connects ports_p[i] of `a` to ports_q[i] of `b` for every i. The paired
// ports disappear; the result's ports are a's remaining ports followed by b's
// remaining ports, each in their original order.
ZMatrixSeries cascade(const ZMatrixSeries& a, std::span<const PortId> ports_p, const ZMatrixSeries& b,
                      std::span<const PortId> ports_q);

// Shunt impedance per grid point (same length as the grid).
using ShuntImpedance = std::vector<Complex>;

ShuntImpedance sample_shunt(const FrequencyGrid& grid, const std::function<Complex(double)>& model);

// Places one shunt impedance from every listed port to the reference. All
// ports are kept.
ZMatrixSeries attach_decaps(const ZMatrixSeries& z, std::span<const PortId> positions,
                            const ShuntImpedance& decap);

// Rows/columns `rows` of the matrix obtained by shunting `positions`
// (indices into z's ports). Shared by attach_decaps and the reward path.
std::vector<CMatrix> attached_block(const ZMatrixSeries& z, std::span<const std::size_t> rows,
                                    std::span<const std::size_t> positions, const ShuntImpedance& decap);

// Restricts and reorders to `ports`; dropped ports are left open.
ZMatrixSeries subselect(const ZMatrixSeries& z, std::span<const PortId> ports);

// Adds `new_port` sharing the node of `existing` (a duplicated row/column).
// Used to expose an interconnect port without consuming the external one.
ZMatrixSeries tap(const ZMatrixSeries& z, std::span<const PortId> existing, std::span<const PortId> new_ports);

// Ties `ports` to one node exposed as `merged` (placed last).
ZMatrixSeries merge_ports(const ZMatrixSeries& z, std::span<const PortId> ports, const PortId& merged);

// Replaces port labels positionally.
ZMatrixSeries relabel(const ZMatrixSeries& z, std::vector<PortId> ports);

// Worst per-frequency max|Z - Z^T| / max|Z|.
double reciprocity_error(const ZMatrixSeries& z);
// Smallest Re(Z_ii) over all ports and frequencies.
double min_diagonal_real(const ZMatrixSeries& z);
// Worst per-frequency ||a - b||_F / ||b||_F; ports and grids must agree.
double relative_frobenius_error(const ZMatrixSeries& a, const ZMatrixSeries& b);

// ---------------------------------------------------------------------------
// Nodal-analysis oracle

// Two-terminal branch; node 0 is the reference. The impedance is evaluated
// per frequency, so any R/L/C combination or tabulated model fits.
struct Element {
  int a = 0;
  int b = 0;
  std::function<Complex(double)> impedance;
};

Element resistor(int a, int b, double ohms);
Element inductor(int a, int b, double henries);
Element capacitor(int a, int b, double farads);
// R + jwL + 1/(jwC); a non-positive capacitance means "no capacitor".
Element series_rlc(int a, int b, double r, double l, double c);

struct Netlist {
  int node_count = 0;  // excluding the reference node
  std::vector<Element> elements;
  std::vector<std::pair<PortId, int>> ports;

  int add_node() { return ++node_count; }
  void add(Element e) { elements.push_back(std::move(e)); }
  void add_port(const PortId& id, int node) { ports.emplace_back(id, node); }
};

// Throws SingularSystem if any node has no path to the reference or the
// admittance matrix is numerically singular.
ZMatrixSeries nodal_oracle(const Netlist& netlist, const FrequencyGrid& grid);

}  // namespace pdnrl::zkit

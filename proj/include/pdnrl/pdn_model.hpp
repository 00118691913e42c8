#pragma once

// Hierarchical VDDQ PDN: on-chip plane, micro-bump array, interposer plane,
// TSV array and a lumped package, composed into one full-port Z model whose
// external ports are the probing and decap candidate cells of both planes.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "pdnrl/zkit.hpp"

namespace pdnrl::pdn {

using zkit::Complex;
using zkit::FrequencyGrid;
using zkit::ZMatrixSeries;

// Per-length W-element values plus the sub-cell discretization of one
// decap-sized cell: `uc_length` is the edge of one extracted sub-cell and
// `ucs_per_side` how many of them tile one cell edge.
struct UnitCellParams {
  double r0 = 0.0;  // ohm/m
  double rf = 0.0;  // ohm/(m sqrt(Hz))
  double l = 0.0;   // H/m
  double g0 = 0.0;  // S/m
  double gf = 0.0;  // S/(m Hz)
  double c = 0.0;   // F/m
  double uc_length = 0.0;
  int ucs_per_side = 1;
};

struct Rlgc {
  Complex series;  // ohm/m
  Complex shunt;   // S/m
};

Rlgc uc_rlgc_at(const UnitCellParams& p, double f);

// Branch values of the lumped cell lattice at one frequency.
Complex cell_series_impedance(const UnitCellParams& p, double f);
Complex cell_shunt_admittance(const UnitCellParams& p, double f);

// Series R-L between the two terminals, C split half to each side.
struct PairParams {
  double r = 0.0;
  double l = 0.0;
  double c = 0.0;
};

// Micro-bump and contact via in series: R and L add, C adds.
PairParams merge_pairs(const PairParams& a, const PairParams& b);

struct DecapParams {
  double c = 0.0;
  double esr = 0.0;
};

Complex unit_decap_z(const DecapParams& p, double f);
zkit::ShuntImpedance sample_decap(const DecapParams& p, const FrequencyGrid& grid);

struct PackageParams {
  double r = 0.0;
  double l = 0.0;
  double c = 0.0;
};

struct TsvGeometry {
  double diameter = 0.0;
  double height = 0.0;
  double pitch = 0.0;
  double liner = 0.0;
  double conductivity = 0.0;
  double liner_permittivity = 0.0;
};

// Lumped signal/return TSV pair: series resistance of both barrels, loop
// inductance of two parallel round conductors, and the two oxide liners in
// series.
PairParams tsv_pair_params(const TsvGeometry& g);
double tsv_resistance(const TsvGeometry& g);
double cylinder_self_inductance(double length, double radius);
double parallel_mutual_inductance(double length, double distance);

struct Cell {
  int col = 0;
  int row = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct GridSize {
  int cols = 0;
  int rows = 0;
  int cells() const { return cols * rows; }
};

struct Rect {
  int col = 0;
  int row = 0;
  int cols = 0;
  int rows = 0;
  bool contains(const Cell& c) const { return c.col >= col && c.col < col + cols && c.row >= row && c.row < row + rows; }
};

struct Bump {
  Cell chip;
  Cell interposer;
};

struct PdnGeometry {
  std::string name;
  double cell_pitch = 375e-6;
  GridSize chip;
  GridSize interposer;
  Rect phy;  // chip cells offering probing ports
  std::vector<Bump> bumps;
  std::vector<Cell> tsvs;  // interposer cells

  void validate() const;
  zkit::PortId cell_port(zkit::Layer layer, const Cell& c) const;
  // Each list is in canonical port order.
  std::vector<zkit::PortId> probing_ports() const;
  std::vector<zkit::PortId> decap_ports() const;
  std::vector<zkit::PortId> external_ports() const;
};

struct PdnParams {
  UnitCellParams chip;
  UnitCellParams interposer;
  PairParams mubump;
  PairParams muvia;
  PairParams tsv;
  PackageParams package;
  DecapParams decap;
};

struct PdnPreset {
  PdnGeometry geometry;
  PdnParams params;
  double f_min = 1e7;
  double f_max = 2e10;
  std::size_t points = 166;
  FrequencyGrid grid() const { return zkit::build_frequency_grid(f_min, f_max, points); }
};

PdnPreset preset_from_json(const nlohmann::json& j);
PdnPreset load_preset(const std::filesystem::path& path);
// Resolves a bare name ("desk", "full") against the preset directory.
std::filesystem::path preset_path(const std::string& name_or_path);

// One node per cell, shunt to the reference at every node and a series
// branch between edge neighbours; one port per cell.
ZMatrixSeries build_plane(const GridSize& size, zkit::Layer layer, const Rect& phy, const UnitCellParams& p,
                          const FrequencyGrid& grid);

// Block-diagonal array of `count` identical pi 2-ports. Pair i has ports
// (External, col i, row 0, instance 0) on top and instance 1 below.
ZMatrixSeries pair_array_z(const PairParams& pair, int count, const FrequencyGrid& grid);
ZMatrixSeries mubump_array_z(const PairParams& pair, int count, const FrequencyGrid& grid);

struct BuildOptions {
  bool include_package = true;
};

// Composes every stage by cascading; ports are the canonical external set.
ZMatrixSeries build_full_pdn(const PdnPreset& preset, const FrequencyGrid& grid, const BuildOptions& opt = {});

// The same network as one flat element graph, for the nodal oracle.
zkit::Netlist full_pdn_netlist(const PdnPreset& preset, const BuildOptions& opt = {});

}  // namespace pdnrl::pdn

#include "pdnrl/pdn_model.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>

#include "pdnrl/error.hpp"

namespace pdnrl::pdn {

using zkit::CMatrix;
using zkit::Layer;
using zkit::PortId;
using zkit::PortRole;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMu0 = 4e-7 * std::numbers::pi;
constexpr double kEps0 = 8.8541878128e-12;

int node_of(const GridSize& size, const Cell& c) { return c.row * size.cols + c.col + 1; }

void add_plane(zkit::Netlist& net, const GridSize& size, int offset, const UnitCellParams& p) {
  for (int r = 0; r < size.rows; ++r) {
    for (int c = 0; c < size.cols; ++c) {
      const int n = offset + node_of(size, {c, r});
      net.add({n, 0, [p](double f) { return 1.0 / cell_shunt_admittance(p, f); }});
      if (c + 1 < size.cols) net.add({n, n + 1, [p](double f) { return cell_series_impedance(p, f); }});
      if (r + 1 < size.rows) net.add({n, n + size.cols, [p](double f) { return cell_series_impedance(p, f); }});
    }
  }
}

void add_pair(zkit::Netlist& net, int top, int bottom, const PairParams& pair) {
  net.add(zkit::series_rlc(top, bottom, pair.r, pair.l, 0.0));
  net.add(zkit::capacitor(top, 0, pair.c / 2.0));
  net.add(zkit::capacitor(bottom, 0, pair.c / 2.0));
}

CMatrix pi_section(const PairParams& pair, double f) {
  const Complex ys = 1.0 / Complex(pair.r, kTwoPi * f * pair.l);
  const Complex yc(0.0, kTwoPi * f * pair.c / 2.0);
  const Complex det = yc * yc + 2.0 * ys * yc;
  CMatrix z(2, 2);
  z(0, 0) = z(1, 1) = (yc + ys) / det;
  z(0, 1) = z(1, 0) = ys / det;
  return z;
}

PortId interconnect(Layer layer, const Cell& c, int instance) {
  return {layer, c.col, c.row, PortRole::Interconnect, instance};
}

PortId array_port(int index, int row, int side) { return {Layer::External, index, row, PortRole::Interconnect, side}; }

template <class T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::Config, std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("bad value for '") + key + "': " + e.what());
  }
}

UnitCellParams uc_from_json(const nlohmann::json& j) {
  UnitCellParams p;
  p.r0 = required<double>(j, "r0");
  p.rf = required<double>(j, "rf");
  p.l = required<double>(j, "l");
  p.g0 = required<double>(j, "g0");
  p.gf = required<double>(j, "gf");
  p.c = required<double>(j, "c");
  p.uc_length = required<double>(j, "uc_length");
  p.ucs_per_side = required<int>(j, "ucs_per_side");
  if (p.r0 < 0 || p.rf < 0 || p.l < 0 || p.g0 < 0 || p.gf < 0 || p.c < 0 || !(p.uc_length > 0) || p.ucs_per_side < 1)
    fail(ErrorKind::Config, "unit cell values must be nonnegative with a positive sub-cell size");
  return p;
}

PairParams pair_from_json(const nlohmann::json& j) {
  PairParams p{required<double>(j, "r"), required<double>(j, "l"), required<double>(j, "c")};
  if (p.r < 0 || p.l < 0 || p.c < 0) fail(ErrorKind::Config, "pair values must be nonnegative");
  return p;
}

GridSize size_from_json(const nlohmann::json& j) {
  GridSize s{required<int>(j, "cols"), required<int>(j, "rows")};
  if (s.cols < 1 || s.rows < 1) fail(ErrorKind::Config, "grid must be nonempty");
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

Rlgc uc_rlgc_at(const UnitCellParams& p, double f) {
  if (!(f > 0.0)) fail(ErrorKind::InvalidRange, "frequency must be positive");
  const double w = kTwoPi * f;
  return {Complex(p.r0 + p.rf * std::sqrt(f), w * p.l), Complex(p.g0 + p.gf * f, w * p.c)};
}

Complex cell_series_impedance(const UnitCellParams& p, double f) { return uc_rlgc_at(p, f).series * p.uc_length; }

Complex cell_shunt_admittance(const UnitCellParams& p, double f) {
  const double n = p.ucs_per_side;
  return uc_rlgc_at(p, f).shunt * (p.uc_length * n * n);
}

PairParams merge_pairs(const PairParams& a, const PairParams& b) { return {a.r + b.r, a.l + b.l, a.c + b.c}; }

Complex unit_decap_z(const DecapParams& p, double f) {
  if (!(f > 0.0)) fail(ErrorKind::InvalidRange, "frequency must be positive");
  return Complex(p.esr, -1.0 / (kTwoPi * f * p.c));
}

zkit::ShuntImpedance sample_decap(const DecapParams& p, const FrequencyGrid& grid) {
  return zkit::sample_shunt(grid, [&](double f) { return unit_decap_z(p, f); });
}

double tsv_resistance(const TsvGeometry& g) {
  const double r = g.diameter / 2.0;
  return g.height / (g.conductivity * std::numbers::pi * r * r);
}

double cylinder_self_inductance(double length, double radius) {
  const double d = std::hypot(length, radius);
  return kMu0 / kTwoPi * (length * std::log((length + d) / radius) - d + radius + length / 4.0);
}

double parallel_mutual_inductance(double length, double distance) {
  const double d = std::hypot(length, distance);
  return kMu0 / kTwoPi * (length * std::log((length + d) / distance) - d + distance);
}

PairParams tsv_pair_params(const TsvGeometry& g) {
  if (!(g.diameter > 0 && g.height > 0 && g.pitch > 0)) fail(ErrorKind::InvalidRange, "TSV dimensions must be positive");
  const double r = g.diameter / 2.0;
  const double self = cylinder_self_inductance(g.height, r);
  const double mutual = std::isinf(g.pitch) ? 0.0 : parallel_mutual_inductance(g.height, g.pitch);
  const double liner = kTwoPi * kEps0 * g.liner_permittivity * g.height / std::log((r + g.liner) / r);
  return {2.0 * tsv_resistance(g), 2.0 * self - 2.0 * mutual, liner / 2.0};
}

// ---------------------------------------------------------------------------

void PdnGeometry::validate() const {
  if (chip.cells() < 1 || interposer.cells() < 1) fail(ErrorKind::Config, "layer grids must be nonempty");
  if (phy.cols < 1 || phy.rows < 1 || phy.col < 0 || phy.row < 0 || phy.col + phy.cols > chip.cols ||
      phy.row + phy.rows > chip.rows)
    fail(ErrorKind::Config, "PHY region must lie inside the chip grid");
  auto inside = [](const GridSize& s, const Cell& c) { return c.col >= 0 && c.row >= 0 && c.col < s.cols && c.row < s.rows; };
  for (const auto& b : bumps)
    if (!inside(chip, b.chip) || !inside(interposer, b.interposer)) fail(ErrorKind::Config, "bump outside its layers");
  for (const auto& t : tsvs)
    if (!inside(interposer, t)) fail(ErrorKind::Config, "TSV outside the interposer");
  if (bumps.empty()) fail(ErrorKind::Config, "at least one bump is required");
}

PortId PdnGeometry::cell_port(Layer layer, const Cell& c) const {
  const bool probing = layer == Layer::Chip && phy.contains(c);
  return {layer, c.col, c.row, probing ? PortRole::ProbingCandidate : PortRole::DecapCandidate, 0};
}

std::vector<PortId> PdnGeometry::probing_ports() const {
  std::vector<PortId> out;
  for (int r = 0; r < chip.rows; ++r)
    for (int c = 0; c < chip.cols; ++c)
      if (phy.contains({c, r})) out.push_back(cell_port(Layer::Chip, {c, r}));
  return out;
}

std::vector<PortId> PdnGeometry::decap_ports() const {
  std::vector<PortId> out;
  for (int r = 0; r < chip.rows; ++r)
    for (int c = 0; c < chip.cols; ++c)
      if (!phy.contains({c, r})) out.push_back(cell_port(Layer::Chip, {c, r}));
  for (int r = 0; r < interposer.rows; ++r)
    for (int c = 0; c < interposer.cols; ++c) out.push_back(cell_port(Layer::Interposer, {c, r}));
  return out;
}

std::vector<PortId> PdnGeometry::external_ports() const {
  std::vector<PortId> out;
  for (int r = 0; r < chip.rows; ++r)
    for (int c = 0; c < chip.cols; ++c) out.push_back(cell_port(Layer::Chip, {c, r}));
  for (int r = 0; r < interposer.rows; ++r)
    for (int c = 0; c < interposer.cols; ++c) out.push_back(cell_port(Layer::Interposer, {c, r}));
  return out;
}

PdnPreset preset_from_json(const nlohmann::json& j) {
  PdnPreset p;
  auto& g = p.geometry;
  g.name = required<std::string>(j, "name");
  const auto& freq = j.contains("frequency") ? j.at("frequency") : nlohmann::json::object();
  p.f_min = required<double>(freq, "min");
  p.f_max = required<double>(freq, "max");
  p.points = required<std::size_t>(freq, "points");

  const auto& geo = j.contains("geometry") ? j.at("geometry") : nlohmann::json::object();
  g.cell_pitch = required<double>(geo, "cell_pitch");
  g.chip = size_from_json(required<nlohmann::json>(geo, "chip"));
  g.interposer = size_from_json(required<nlohmann::json>(geo, "interposer"));
  const auto phy = required<nlohmann::json>(geo, "phy");
  g.phy = {required<int>(phy, "col"), required<int>(phy, "row"), required<int>(phy, "cols"), required<int>(phy, "rows")};

  // Bumps are dealt round-robin over chip cells in row-major order and land
  // on the interposer cell under the same relative position.
  const auto bump = required<nlohmann::json>(geo, "bumps");
  const int bump_count = required<int>(bump, "count");
  if (required<std::string>(bump, "placement") != "round-robin")
    fail(ErrorKind::Config, "only round-robin bump placement is supported");
  for (int k = 0; k < bump_count; ++k) {
    const int idx = k % g.chip.cells();
    const Cell chip{idx % g.chip.cols, idx / g.chip.cols};
    const Cell land{(2 * chip.col + 1) * g.interposer.cols / (2 * g.chip.cols),
                    (2 * chip.row + 1) * g.interposer.rows / (2 * g.chip.rows)};
    g.bumps.push_back({chip, land});
  }

  // TSVs on a square lattice over the interposer.
  const auto tsv = required<nlohmann::json>(geo, "tsvs");
  const int stride = required<int>(tsv, "stride");
  const int offset = required<int>(tsv, "offset");
  if (stride < 1 || offset < 0) fail(ErrorKind::Config, "TSV lattice needs stride >= 1 and offset >= 0");
  for (int r = offset; r < g.interposer.rows; r += stride)
    for (int c = offset; c < g.interposer.cols; c += stride) g.tsvs.push_back({c, r});

  const auto par = required<nlohmann::json>(j, "params");
  p.params.chip = uc_from_json(required<nlohmann::json>(par, "chip_plane"));
  p.params.interposer = uc_from_json(required<nlohmann::json>(par, "interposer_plane"));
  p.params.mubump = pair_from_json(required<nlohmann::json>(par, "mubump"));
  p.params.muvia = pair_from_json(required<nlohmann::json>(par, "muvia"));
  p.params.tsv = pair_from_json(required<nlohmann::json>(par, "tsv_pair"));
  const auto pkg = required<nlohmann::json>(par, "package");
  p.params.package = {required<double>(pkg, "r"), required<double>(pkg, "l"), required<double>(pkg, "c")};
  const auto dec = required<nlohmann::json>(par, "unit_decap");
  p.params.decap = {required<double>(dec, "c"), required<double>(dec, "esr")};
  if (!(p.params.decap.c > 0.0) || p.params.decap.esr < 0.0) fail(ErrorKind::Config, "unit decap needs C > 0");
  if (!(p.params.tsv.c > 0.0) || !(p.params.mubump.c + p.params.muvia.c > 0.0))
    fail(ErrorKind::Config, "pi sections need a positive capacitance");

  g.validate();
  return p;
}

PdnPreset load_preset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read preset " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return preset_from_json(j);
}

std::filesystem::path preset_path(const std::string& name_or_path) {
  std::filesystem::path direct(name_or_path);
  if (std::filesystem::exists(direct)) return direct;
  if (const char* env = std::getenv("PDNRL_PRESET_DIR")) {
    auto p = std::filesystem::path(env) / (name_or_path + ".json");
    if (std::filesystem::exists(p)) return p;
  }
#ifdef PDNRL_PRESET_DIR
  auto p = std::filesystem::path(PDNRL_PRESET_DIR) / (name_or_path + ".json");
  if (std::filesystem::exists(p)) return p;
#endif
  fail(ErrorKind::Config, "no preset named '" + name_or_path + "'");
}

// ---------------------------------------------------------------------------

ZMatrixSeries build_plane(const GridSize& size, Layer layer, const Rect& phy, const UnitCellParams& p,
                          const FrequencyGrid& grid) {
  if (size.cells() < 1) fail(ErrorKind::InvalidRange, "plane grid must be nonempty");
  zkit::Netlist net;
  net.node_count = size.cells();
  add_plane(net, size, 0, p);
  for (int r = 0; r < size.rows; ++r)
    for (int c = 0; c < size.cols; ++c) {
      const bool probing = layer == Layer::Chip && phy.contains({c, r});
      net.add_port({layer, c, r, probing ? PortRole::ProbingCandidate : PortRole::DecapCandidate, 0},
                   node_of(size, {c, r}));
    }
  return zkit::nodal_oracle(net, grid);
}

ZMatrixSeries pair_array_z(const PairParams& pair, int count, const FrequencyGrid& grid) {
  if (count < 1) fail(ErrorKind::InvalidRange, "need at least one pair");
  if (!(pair.c > 0.0)) fail(ErrorKind::InvalidRange, "pi section needs a positive capacitance");
  std::vector<PortId> ports;
  for (int i = 0; i < count; ++i) {
    ports.push_back(array_port(i, 0, 0));
    ports.push_back(array_port(i, 0, 1));
  }
  std::vector<CMatrix> data(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const CMatrix block = pi_section(pair, grid[k]);
    data[k] = CMatrix::Zero(2 * count, 2 * count);
    for (int i = 0; i < count; ++i) data[k].block<2, 2>(2 * i, 2 * i) = block;
  }
  return ZMatrixSeries(grid, std::move(ports), std::move(data));
}

ZMatrixSeries mubump_array_z(const PairParams& pair, int count, const FrequencyGrid& grid) {
  return pair_array_z(pair, count, grid);
}

ZMatrixSeries build_full_pdn(const PdnPreset& preset, const FrequencyGrid& grid, const BuildOptions& opt) {
  const auto& g = preset.geometry;
  const auto& par = preset.params;
  g.validate();

  std::map<std::pair<int, int>, int> chip_taps, interposer_taps;
  auto next_tap = [](std::map<std::pair<int, int>, int>& m, const Cell& c) { return m[{c.col, c.row}]++; };

  // Chip plane with one interconnect tap per bump.
  std::vector<PortId> chip_cells, chip_ic;
  for (const auto& b : g.bumps) {
    chip_cells.push_back(g.cell_port(Layer::Chip, b.chip));
    chip_ic.push_back(interconnect(Layer::Chip, b.chip, next_tap(chip_taps, b.chip)));
  }
  auto chip = zkit::tap(build_plane(g.chip, Layer::Chip, g.phy, par.chip, grid), chip_cells, chip_ic);

  const int nb = static_cast<int>(g.bumps.size());
  auto bumps = pair_array_z(merge_pairs(par.mubump, par.muvia), nb, grid);
  std::vector<PortId> bump_top, bump_bottom;
  for (int i = 0; i < nb; ++i) {
    bump_top.push_back(array_port(i, 0, 0));
    bump_bottom.push_back(array_port(i, 0, 1));
  }
  auto stage = zkit::cascade(chip, chip_ic, bumps, bump_top);

  // Interposer plane with taps for bump landings and TSV tops.
  std::vector<PortId> land_cells, land_ic, tsv_cells, tsv_ic;
  for (const auto& b : g.bumps) {
    land_cells.push_back(g.cell_port(Layer::Interposer, b.interposer));
    land_ic.push_back(interconnect(Layer::Interposer, b.interposer, next_tap(interposer_taps, b.interposer)));
  }
  for (const auto& t : g.tsvs) {
    tsv_cells.push_back(g.cell_port(Layer::Interposer, t));
    tsv_ic.push_back(interconnect(Layer::Interposer, t, next_tap(interposer_taps, t)));
  }
  auto interposer = build_plane(g.interposer, Layer::Interposer, g.phy, par.interposer, grid);
  interposer = zkit::tap(interposer, land_cells, land_ic);
  interposer = zkit::tap(interposer, tsv_cells, tsv_ic);
  stage = zkit::cascade(stage, bump_bottom, interposer, land_ic);

  if (!g.tsvs.empty()) {
    const int nt = static_cast<int>(g.tsvs.size());
    std::vector<PortId> top, bottom, labels;
    for (int i = 0; i < nt; ++i) {
      top.push_back(array_port(i, 1, 0));
      bottom.push_back(array_port(i, 1, 1));
      labels.push_back(top.back());
      labels.push_back(bottom.back());
    }
    auto tsvs = zkit::relabel(pair_array_z(par.tsv, nt, grid), labels);
    stage = zkit::cascade(stage, tsv_ic, tsvs, top);

    // All TSV bottoms land on one package node.
    const PortId node = array_port(0, 2, 0);
    stage = zkit::merge_ports(stage, bottom, node);
    if (opt.include_package) {
      const PortId pkg_port = array_port(0, 3, 0);
      const auto& pk = par.package;
      auto pkg = zkit::sample_shunt(grid, [&](double f) {
        const double w = kTwoPi * f;
        Complex z(pk.r, w * pk.l);
        if (pk.c > 0.0) z += 1.0 / Complex(0.0, w * pk.c);
        return z;
      });
      std::vector<CMatrix> data;
      for (const auto& z : pkg) data.push_back(CMatrix::Constant(1, 1, z));
      ZMatrixSeries pkg_series(grid, {pkg_port}, std::move(data));
      const PortId a[] = {node};
      const PortId b[] = {pkg_port};
      stage = zkit::cascade(stage, a, pkg_series, b);
    }
  }
  return zkit::subselect(stage, g.external_ports());
}

zkit::Netlist full_pdn_netlist(const PdnPreset& preset, const BuildOptions& opt) {
  const auto& g = preset.geometry;
  const auto& par = preset.params;
  g.validate();
  zkit::Netlist net;
  const int chip_offset = 0;
  const int interposer_offset = g.chip.cells();
  net.node_count = g.chip.cells() + g.interposer.cells();
  add_plane(net, g.chip, chip_offset, par.chip);
  add_plane(net, g.interposer, interposer_offset, par.interposer);

  const auto bump = merge_pairs(par.mubump, par.muvia);
  for (const auto& b : g.bumps)
    add_pair(net, chip_offset + node_of(g.chip, b.chip), interposer_offset + node_of(g.interposer, b.interposer), bump);

  if (!g.tsvs.empty()) {
    const int pkg = net.add_node();
    for (const auto& t : g.tsvs) add_pair(net, interposer_offset + node_of(g.interposer, t), pkg, par.tsv);
    if (opt.include_package) net.add(zkit::series_rlc(pkg, 0, par.package.r, par.package.l, par.package.c));
  }

  for (int r = 0; r < g.chip.rows; ++r)
    for (int c = 0; c < g.chip.cols; ++c)
      net.add_port(g.cell_port(Layer::Chip, {c, r}), chip_offset + node_of(g.chip, {c, r}));
  for (int r = 0; r < g.interposer.rows; ++r)
    for (int c = 0; c < g.interposer.cols; ++c)
      net.add_port(g.cell_port(Layer::Interposer, {c, r}), interposer_offset + node_of(g.interposer, {c, r}));
  return net;
}

}  // namespace pdnrl::pdn

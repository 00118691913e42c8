#include "pdnrl/zkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <set>
#include <sstream>

#include "pdnrl/error.hpp"
#include "pdnrl/parallel.hpp"

namespace pdnrl::zkit {

namespace {

constexpr double kSingularRcond = 1e-15;

std::vector<std::size_t> indices_of(const ZMatrixSeries& z, std::span<const PortId> ports) {
  std::vector<std::size_t> idx;
  idx.reserve(ports.size());
  std::set<std::size_t> seen;
  for (const auto& p : ports) {
    auto i = z.index_of(p);
    if (!seen.insert(i).second) fail(ErrorKind::InvalidSelection, "duplicate port " + to_string(p));
    idx.push_back(i);
  }
  return idx;
}

std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& used) {
  std::vector<bool> mark(n, false);
  for (auto i : used) mark[i] = true;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i)
    if (!mark[i]) rest.push_back(i);
  return rest;
}

CMatrix gather(const CMatrix& m, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  CMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          m(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
  return out;
}

void require_same_grid(const ZMatrixSeries& a, const ZMatrixSeries& b) {
  if (!(a.grid() == b.grid())) fail(ErrorKind::IncompatibleGrids, "networks are sampled on different grids");
}

}  // namespace

// ---------------------------------------------------------------------------

FrequencyGrid::FrequencyGrid(std::vector<double> points) : points_(std::move(points)) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!(points_[i] > 0.0) || !std::isfinite(points_[i]))
      fail(ErrorKind::InvalidRange, "frequency points must be positive");
    if (i > 0 && !(points_[i] > points_[i - 1]))
      fail(ErrorKind::InvalidRange, "frequency points must be strictly increasing");
  }
}

FrequencyGrid build_frequency_grid(double f_min, double f_max, std::size_t count) {
  if (count == 0 || !(f_min > 0.0) || !std::isfinite(f_max))
    fail(ErrorKind::InvalidRange, "need count >= 1 and f_min > 0");
  if (count == 1) {
    if (f_min != f_max) fail(ErrorKind::InvalidRange, "a single-point grid needs f_min == f_max");
    return FrequencyGrid({f_min});
  }
  if (!(f_max > f_min)) fail(ErrorKind::InvalidRange, "f_max must exceed f_min");
  std::vector<double> pts(count);
  const double lo = std::log(f_min);
  const double step = (std::log(f_max) - lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) pts[i] = std::exp(lo + step * static_cast<double>(i));
  pts.front() = f_min;
  pts.back() = f_max;
  return FrequencyGrid(std::move(pts));
}

const char* to_string(Layer layer) {
  switch (layer) {
    case Layer::Chip: return "chip";
    case Layer::Interposer: return "interposer";
    case Layer::External: return "external";
  }
  return "?";
}

const char* to_string(PortRole role) {
  switch (role) {
    case PortRole::ProbingCandidate: return "probing";
    case PortRole::DecapCandidate: return "decap";
    case PortRole::Interconnect: return "interconnect";
  }
  return "?";
}

std::string to_string(const PortId& p) {
  std::ostringstream os;
  os << to_string(p.layer) << "(" << p.col << "," << p.row << ")/" << to_string(p.role);
  if (p.instance != 0) os << "#" << p.instance;
  return os.str();
}

ZMatrixSeries::ZMatrixSeries(FrequencyGrid grid, std::vector<PortId> ports, std::vector<CMatrix> data)
    : grid_(std::move(grid)), ports_(std::move(ports)), data_(std::move(data)) {
  if (data_.size() != grid_.size()) fail(ErrorKind::Shape, "one matrix per frequency point required");
  const auto n = static_cast<Eigen::Index>(ports_.size());
  for (const auto& m : data_)
    if (m.rows() != n || m.cols() != n) fail(ErrorKind::Shape, "matrix dimension must equal the port count");
  std::vector<PortId> sorted = ports_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    fail(ErrorKind::InvalidSelection, "port ids must be unique");
}

std::optional<std::size_t> ZMatrixSeries::find(const PortId& port) const {
  auto it = std::find(ports_.begin(), ports_.end(), port);
  if (it == ports_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ports_.begin());
}

std::size_t ZMatrixSeries::index_of(const PortId& port) const {
  auto i = find(port);
  if (!i) fail(ErrorKind::NoSuchPort, to_string(port));
  return *i;
}

bool identical(const ZMatrixSeries& a, const ZMatrixSeries& b) {
  if (!(a.grid() == b.grid()) || a.ports() != b.ports()) return false;
  for (std::size_t k = 0; k < a.frequency_count(); ++k) {
    const auto& x = a.at(k);
    const auto& y = b.at(k);
    if (std::memcmp(x.data(), y.data(), sizeof(Complex) * static_cast<std::size_t>(x.size())) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

ZMatrixSeries cascade(const ZMatrixSeries& a, std::span<const PortId> ports_p, const ZMatrixSeries& b,
                      std::span<const PortId> ports_q) {
  require_same_grid(a, b);
  if (ports_p.size() != ports_q.size()) fail(ErrorKind::Contract, "pairing must be a bijection");
  const auto p = indices_of(a, ports_p);
  const auto q = indices_of(b, ports_q);
  const auto ea = complement(a.port_count(), p);
  const auto eb = complement(b.port_count(), q);

  std::vector<PortId> ports;
  ports.reserve(ea.size() + eb.size());
  for (auto i : ea) ports.push_back(a.ports()[i]);
  for (auto i : eb) ports.push_back(b.ports()[i]);

  const auto na = static_cast<Eigen::Index>(ea.size());
  const auto nb = static_cast<Eigen::Index>(eb.size());
  const auto nc = static_cast<Eigen::Index>(p.size());

  std::vector<CMatrix> out(a.frequency_count());
  parallel_for(a.frequency_count(), [&](std::size_t k) {
    const CMatrix& za = a.at(k);
    const CMatrix& zb = b.at(k);
    CMatrix z = CMatrix::Zero(na + nb, na + nb);
    z.topLeftCorner(na, na) = gather(za, ea, ea);
    z.bottomRightCorner(nb, nb) = gather(zb, eb, eb);
    if (nc > 0) {
      // I_p = S^-1 (Zb[q,eb] I_eb - Za[p,ea] I_ea) with S = Za[p,p] + Zb[q,q]
      const CMatrix s = gather(za, p, p) + gather(zb, q, q);
      CMatrix col(na + nb, nc);
      col.topRows(na) = gather(za, ea, p);
      col.bottomRows(nb) = -gather(zb, eb, q);
      CMatrix row(nc, na + nb);
      row.leftCols(na) = gather(za, p, ea);
      row.rightCols(nb) = -gather(zb, q, eb);
      Eigen::PartialPivLU<CMatrix> lu(s);
      if (!(lu.rcond() > kSingularRcond)) throw CascadeSingularity(k, "interconnect block Zpp + Zqq is singular");
      z.noalias() -= col * lu.solve(row);
    }
    out[k] = std::move(z);
  });
  return ZMatrixSeries(a.grid(), std::move(ports), std::move(out));
}

ShuntImpedance sample_shunt(const FrequencyGrid& grid, const std::function<Complex(double)>& model) {
  ShuntImpedance z(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) z[k] = model(grid[k]);
  return z;
}

std::vector<CMatrix> attached_block(const ZMatrixSeries& z, std::span<const std::size_t> rows,
                                    std::span<const std::size_t> positions, const ShuntImpedance& decap) {
  if (decap.size() != z.frequency_count()) fail(ErrorKind::Shape, "decap model must be sampled on the grid");
  const std::vector<std::size_t> r(rows.begin(), rows.end());
  const std::vector<std::size_t> a(positions.begin(), positions.end());
  std::vector<CMatrix> out(z.frequency_count());
  parallel_for(z.frequency_count(), [&](std::size_t k) {
    CMatrix block = gather(z.at(k), r, r);
    if (!a.empty()) {
      CMatrix s = gather(z.at(k), a, a);
      s.diagonal().array() += decap[k];
      Eigen::PartialPivLU<CMatrix> lu(s);
      if (!(lu.rcond() > kSingularRcond)) throw CascadeSingularity(k, "decap attachment block is singular");
      block.noalias() -= gather(z.at(k), r, a) * lu.solve(gather(z.at(k), a, r));
    }
    out[k] = std::move(block);
  });
  return out;
}

ZMatrixSeries attach_decaps(const ZMatrixSeries& z, std::span<const PortId> positions, const ShuntImpedance& decap) {
  if (positions.empty()) return z;
  const auto a = indices_of(z, positions);
  std::vector<std::size_t> all(z.port_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return ZMatrixSeries(z.grid(), z.ports(), attached_block(z, all, a, decap));
}

ZMatrixSeries subselect(const ZMatrixSeries& z, std::span<const PortId> ports) {
  const auto idx = indices_of(z, ports);
  std::vector<CMatrix> out(z.frequency_count());
  for (std::size_t k = 0; k < z.frequency_count(); ++k) out[k] = gather(z.at(k), idx, idx);
  return ZMatrixSeries(z.grid(), std::vector<PortId>(ports.begin(), ports.end()), std::move(out));
}

ZMatrixSeries tap(const ZMatrixSeries& z, std::span<const PortId> existing, std::span<const PortId> new_ports) {
  if (existing.size() != new_ports.size()) fail(ErrorKind::Contract, "one new port per tapped port");
  std::vector<std::size_t> idx(z.port_count());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (const auto& p : existing) idx.push_back(z.index_of(p));
  std::vector<PortId> ports = z.ports();
  ports.insert(ports.end(), new_ports.begin(), new_ports.end());
  std::vector<CMatrix> out(z.frequency_count());
  for (std::size_t k = 0; k < z.frequency_count(); ++k) out[k] = gather(z.at(k), idx, idx);
  return ZMatrixSeries(z.grid(), std::move(ports), std::move(out));
}

ZMatrixSeries merge_ports(const ZMatrixSeries& z, std::span<const PortId> ports, const PortId& merged) {
  if (ports.empty()) fail(ErrorKind::Contract, "nothing to merge");
  const auto b = indices_of(z, ports);
  const auto e = complement(z.port_count(), b);
  const auto n = static_cast<Eigen::Index>(z.port_count());
  const auto ne = static_cast<Eigen::Index>(e.size());
  const auto nk = static_cast<Eigen::Index>(b.size());

  // Currents: I = P J + G x. P routes the new ports (E..., merged) onto the
  // full port set, G spans current redistributions among the merged ports
  // that leave the total unchanged. The constraint G^T V = 0 ties their
  // voltages together.
  Eigen::MatrixXd pm = Eigen::MatrixXd::Zero(n, ne + 1);
  for (Eigen::Index i = 0; i < ne; ++i) pm(static_cast<Eigen::Index>(e[i]), i) = 1.0;
  pm(static_cast<Eigen::Index>(b[0]), ne) = 1.0;
  Eigen::MatrixXd gm = Eigen::MatrixXd::Zero(n, nk - 1);
  for (Eigen::Index j = 1; j < nk; ++j) {
    gm(static_cast<Eigen::Index>(b[0]), j - 1) = 1.0;
    gm(static_cast<Eigen::Index>(b[j]), j - 1) = -1.0;
  }
  const CMatrix pc = pm.cast<Complex>();
  const CMatrix gc = gm.cast<Complex>();

  std::vector<PortId> out_ports;
  for (auto i : e) out_ports.push_back(z.ports()[i]);
  out_ports.push_back(merged);

  std::vector<CMatrix> out(z.frequency_count());
  parallel_for(z.frequency_count(), [&](std::size_t k) {
    const CMatrix zp = z.at(k) * pc;
    CMatrix r = pc.transpose() * zp;
    if (nk > 1) {
      const CMatrix zg = z.at(k) * gc;
      Eigen::PartialPivLU<CMatrix> lu(gc.transpose() * zg);
      if (!(lu.rcond() > kSingularRcond)) throw CascadeSingularity(k, "merged ports are already shorted");
      r.noalias() -= (pc.transpose() * zg) * lu.solve(gc.transpose() * zp);
    }
    out[k] = std::move(r);
  });
  return ZMatrixSeries(z.grid(), std::move(out_ports), std::move(out));
}

ZMatrixSeries relabel(const ZMatrixSeries& z, std::vector<PortId> ports) {
  if (ports.size() != z.port_count()) fail(ErrorKind::Shape, "relabel needs one id per port");
  return ZMatrixSeries(z.grid(), std::move(ports), z.data());
}

double reciprocity_error(const ZMatrixSeries& z) {
  double worst = 0.0;
  for (const auto& m : z.data()) {
    const double scale = m.cwiseAbs().maxCoeff();
    if (scale == 0.0) continue;
    worst = std::max(worst, (m - m.transpose()).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

double min_diagonal_real(const ZMatrixSeries& z) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& m : z.data())
    for (Eigen::Index i = 0; i < m.rows(); ++i) lo = std::min(lo, m(i, i).real());
  return lo;
}

double relative_frobenius_error(const ZMatrixSeries& a, const ZMatrixSeries& b) {
  require_same_grid(a, b);
  if (a.ports() != b.ports()) fail(ErrorKind::Contract, "port lists differ");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.frequency_count(); ++k) {
    const double ref = b.at(k).norm();
    const double diff = (a.at(k) - b.at(k)).norm();
    worst = std::max(worst, ref > 0.0 ? diff / ref : diff);
  }
  return worst;
}

// ---------------------------------------------------------------------------

Element resistor(int a, int b, double ohms) {
  return {a, b, [ohms](double) { return Complex(ohms, 0.0); }};
}

Element inductor(int a, int b, double henries) {
  return {a, b, [henries](double f) { return Complex(0.0, 2.0 * std::numbers::pi * f * henries); }};
}

Element capacitor(int a, int b, double farads) {
  return {a, b, [farads](double f) { return 1.0 / Complex(0.0, 2.0 * std::numbers::pi * f * farads); }};
}

Element series_rlc(int a, int b, double r, double l, double c) {
  return {a, b, [r, l, c](double f) {
            const double w = 2.0 * std::numbers::pi * f;
            Complex z(r, w * l);
            if (c > 0.0) z += 1.0 / Complex(0.0, w * c);
            return z;
          }};
}

ZMatrixSeries nodal_oracle(const Netlist& netlist, const FrequencyGrid& grid) {
  const int n = netlist.node_count;
  for (const auto& e : netlist.elements)
    if (e.a < 0 || e.b < 0 || e.a > n || e.b > n || e.a == e.b)
      fail(ErrorKind::Contract, "element terminals out of range");

  // Every node must reach the reference through some element.
  std::vector<int> parent(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) parent[static_cast<std::size_t>(i)] = i;
  std::function<int(int)> root = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] =
        parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
    return x;
  };
  for (const auto& e : netlist.elements) parent[static_cast<std::size_t>(root(e.a))] = root(e.b);
  for (int i = 1; i <= n; ++i)
    if (root(i) != root(0)) fail(ErrorKind::SingularSystem, "node " + std::to_string(i) + " floats");

  std::vector<PortId> ids;
  std::vector<Eigen::Index> nodes;
  for (const auto& [id, node] : netlist.ports) {
    if (node < 1 || node > n) fail(ErrorKind::Contract, "port on the reference node");
    ids.push_back(id);
    nodes.push_back(node - 1);
  }
  const auto np = static_cast<Eigen::Index>(nodes.size());

  std::vector<CMatrix> out(grid.size());
  parallel_for(grid.size(), [&](std::size_t k) {
    CMatrix y = CMatrix::Zero(n, n);
    for (const auto& e : netlist.elements) {
      const Complex adm = 1.0 / e.impedance(grid[k]);
      if (!std::isfinite(adm.real()) || !std::isfinite(adm.imag()))
        fail(ErrorKind::SingularSystem, "zero-impedance element");
      if (e.a > 0) y(e.a - 1, e.a - 1) += adm;
      if (e.b > 0) y(e.b - 1, e.b - 1) += adm;
      if (e.a > 0 && e.b > 0) {
        y(e.a - 1, e.b - 1) -= adm;
        y(e.b - 1, e.a - 1) -= adm;
      }
    }
    CMatrix rhs = CMatrix::Zero(n, np);
    for (Eigen::Index j = 0; j < np; ++j) rhs(nodes[static_cast<std::size_t>(j)], j) = 1.0;
    Eigen::PartialPivLU<CMatrix> lu(y);
    if (!(lu.rcond() > kSingularRcond)) fail(ErrorKind::SingularSystem, "admittance matrix is singular");
    const CMatrix v = lu.solve(rhs);
    CMatrix z(np, np);
    for (Eigen::Index i = 0; i < np; ++i) z.row(i) = v.row(nodes[static_cast<std::size_t>(i)]);
    out[k] = std::move(z);
  });
  return ZMatrixSeries(grid, std::move(ids), std::move(out));
}

}  // namespace pdnrl::zkit

#include "pdnrl/environment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "pdnrl/binary_io.hpp"
#include "pdnrl/digest.hpp"
#include "pdnrl/error.hpp"
#include "pdnrl/parallel.hpp"
#include "pdnrl/rng.hpp"

namespace pdnrl::env {

using zkit::CMatrix;
using zkit::Layer;
using zkit::PortRole;

namespace {

constexpr char kMagic[] = "PDNDS1";
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kTerms = 10;

double normalized(int index, int extent) { return extent > 1 ? static_cast<double>(index) / (extent - 1) : 0.0; }

int denormalized(double v, int extent) { return extent > 1 ? static_cast<int>(std::lround(v * (extent - 1))) : 0; }

void magnitudes_into(const CMatrix& m, double* out) {
  for (int i = 0; i < 4; ++i) out[i] = std::abs(m(i, i));
  int t = 4;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) out[t++] = std::abs(m(i, j));
}

std::vector<std::size_t> checked_sorted(std::span<const std::size_t> a, std::size_t n) {
  std::vector<std::size_t> s(a.begin(), a.end());
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) fail(ErrorKind::InvalidSelection, "repeated position");
  if (!s.empty() && s.back() >= n) fail(ErrorKind::NoSuchPort, "position beyond the candidate list");
  return s;
}

}  // namespace

Feature feature_of(const PortId& port, const pdn::GridSize& chip, const pdn::GridSize& interposer) {
  const auto& size = port.layer == Layer::Chip ? chip : interposer;
  return {normalized(port.col, size.cols), normalized(port.row, size.rows), port.layer == Layer::Chip ? 0.0 : 1.0,
          port.role == PortRole::ProbingCandidate ? 1.0 : 0.0};
}

PortId port_of(const Feature& f, const pdn::GridSize& chip, const pdn::GridSize& interposer) {
  const Layer layer = f[2] == 0.0 ? Layer::Chip : Layer::Interposer;
  const auto& size = layer == Layer::Chip ? chip : interposer;
  return {layer, denormalized(f[0], size.cols), denormalized(f[1], size.rows),
          f[3] == 1.0 ? PortRole::ProbingCandidate : PortRole::DecapCandidate, 0};
}

std::vector<PortId> State::ports() const {
  std::vector<PortId> out = probes;
  out.insert(out.end(), candidates.begin(), candidates.end());
  return out;
}

Eigen::MatrixXd State::feature_matrix() const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(kProbes + n()), static_cast<Eigen::Index>(kFeatures));
  Eigen::Index r = 0;
  for (const auto* list : {&probe_features, &candidate_features})
    for (const auto& f : *list) {
      for (std::size_t c = 0; c < kFeatures; ++c) x(r, static_cast<Eigen::Index>(c)) = f[c];
      ++r;
    }
  return x;
}

void State::validate() const {
  if (probes.size() != kProbes || probe_features.size() != kProbes)
    fail(ErrorKind::Contract, "a state has exactly four probing ports");
  if (candidate_features.size() != candidates.size()) fail(ErrorKind::Contract, "one feature row per candidate");
  for (const auto& f : probe_features)
    if (f[3] != 1.0) fail(ErrorKind::Contract, "probing rows must be flagged");
  auto all = ports();
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) fail(ErrorKind::InvalidSelection, "ports must be distinct");
}

State make_state(std::vector<PortId> probes, std::vector<PortId> candidates, const pdn::GridSize& chip,
                 const pdn::GridSize& interposer) {
  State s;
  s.probes = std::move(probes);
  s.candidates = std::move(candidates);
  for (const auto& p : s.probes) s.probe_features.push_back(feature_of(p, chip, interposer));
  for (const auto& p : s.candidates) s.candidate_features.push_back(feature_of(p, chip, interposer));
  s.validate();
  return s;
}

State random_state(const pdn::PdnGeometry& geometry, std::size_t n, std::uint64_t seed) {
  const auto probing = geometry.probing_ports();
  const auto decap = geometry.decap_ports();
  if (probing.size() < kProbes) fail(ErrorKind::Capacity, "fewer than four probing candidates");
  if (n > decap.size())
    fail(ErrorKind::Capacity, "n = " + std::to_string(n) + " exceeds " + std::to_string(decap.size()) + " decap candidates");
  Rng rng(seed);
  auto pi = sample_without_replacement(rng, probing.size(), kProbes);
  auto ci = sample_without_replacement(rng, decap.size(), n);
  std::sort(pi.begin(), pi.end());
  std::sort(ci.begin(), ci.end());
  std::vector<PortId> probes, candidates;
  for (auto i : pi) probes.push_back(probing[i]);
  for (auto i : ci) candidates.push_back(decap[i]);
  return make_state(std::move(probes), std::move(candidates), geometry.chip, geometry.interposer);
}

RewardConfig default_reward(const pdn::PdnPreset& preset, const zkit::FrequencyGrid& grid) {
  return {0.7, pdn::sample_decap(preset.params.decap, grid)};
}

Record make_record(const ZMatrixSeries& z_full, State state) {
  state.validate();
  Record r{std::move(state), {}, {}};
  r.z = zkit::subselect(z_full, r.state.ports());
  r.initial.resize(r.z.frequency_count() * kTerms);
  for (std::size_t k = 0; k < r.z.frequency_count(); ++k) magnitudes_into(r.z.at(k), &r.initial[k * kTerms]);
  return r;
}

std::vector<double> probe_magnitudes(const Record& record, std::span<const std::size_t> assignment,
                                     const zkit::ShuntImpedance& decap) {
  const auto sorted = checked_sorted(assignment, record.state.n());
  std::vector<std::size_t> positions;
  for (auto a : sorted) positions.push_back(kProbes + a);
  const std::size_t rows[] = {0, 1, 2, 3};
  const auto blocks = zkit::attached_block(record.z, rows, positions, decap);
  std::vector<double> out(blocks.size() * kTerms);
  for (std::size_t k = 0; k < blocks.size(); ++k) magnitudes_into(blocks[k], &out[k * kTerms]);
  return out;
}

double reward(const Record& record, std::span<const std::size_t> assignment, const RewardConfig& cfg) {
  const auto after = probe_magnitudes(record, assignment, cfg.decap);
  double self = 0.0, transfer = 0.0;
  for (std::size_t k = 0; k < record.z.frequency_count(); ++k) {
    const double* before = &record.initial[k * kTerms];
    const double* now = &after[k * kTerms];
    for (std::size_t t = 0; t < 4; ++t) self += before[t] - now[t];
    for (std::size_t t = 4; t < kTerms; ++t) transfer += before[t] - now[t];
  }
  return cfg.alpha * self / 4.0 + (1.0 - cfg.alpha) * transfer / 6.0;
}

std::vector<Record> generate_records(const ZMatrixSeries& z_full, const pdn::PdnGeometry& geometry, std::size_t n,
                                     std::size_t count, std::uint64_t seed) {
  std::vector<Record> out(count);
  parallel_for(count, [&](std::size_t i) { out[i] = make_record(z_full, random_state(geometry, n, derive_seed(seed, {i}))); });
  return out;
}

// ---------------------------------------------------------------------------

void save_dataset(const std::vector<Record>& records, const std::filesystem::path& path, const DatasetInfo& info) {
  if (records.empty()) fail(ErrorKind::Contract, "empty dataset");
  const auto& grid = records.front().z.grid();
  const std::size_t n = records.front().state.n();
  for (const auto& r : records)
    if (!(r.z.grid() == grid) || r.state.n() != n) fail(ErrorKind::Contract, "records must share one grid and one n");

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    io::put_bytes(out, std::string(kMagic, 6));
    io::put<std::uint16_t>(out, kVersion);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(n));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.size()));
    for (double f : grid.points()) io::put<double>(out, f);
    for (const auto& r : records) {
      for (const auto* list : {&r.state.probe_features, &r.state.candidate_features})
        for (const auto& f : *list)
          for (double v : f) io::put<double>(out, v);
      for (const auto& m : r.z.data())
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          for (Eigen::Index j = 0; j < m.cols(); ++j) {
            io::put<double>(out, m(i, j).real());
            io::put<double>(out, m(i, j).imag());
          }
    }
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
  }

  nlohmann::ordered_json side;
  side["format"] = "PDNDS1";
  side["preset"] = info.preset;
  side["seed"] = info.seed;
  side["records"] = records.size();
  side["n"] = n;
  side["chip"] = {{"cols", info.chip.cols}, {"rows", info.chip.rows}};
  side["interposer"] = {{"cols", info.interposer.cols}, {"rows", info.interposer.rows}};
  side["sha256"] = sha256_file(path);
  std::ofstream meta(path.string() + ".json", std::ios::trunc);
  meta << side.dump(2) << "\n";
  if (!meta) fail(ErrorKind::Io, "cannot write dataset sidecar");
}

std::vector<Record> load_dataset(const std::filesystem::path& path, DatasetInfo* info_out) {
  std::ifstream side_in(path.string() + ".json");
  if (!side_in) fail(ErrorKind::Format, "missing sidecar " + path.string() + ".json");
  DatasetInfo info;
  try {
    auto side = nlohmann::json::parse(side_in);
    info.preset = side.at("preset").get<std::string>();
    info.seed = side.at("seed").get<std::uint64_t>();
    info.chip = {side.at("chip").at("cols").get<int>(), side.at("chip").at("rows").get<int>()};
    info.interposer = {side.at("interposer").at("cols").get<int>(), side.at("interposer").at("rows").get<int>()};
    if (side.contains("sha256") && side.at("sha256").get<std::string>() != sha256_file(path))
      fail(ErrorKind::Format, "dataset checksum mismatch");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("bad dataset sidecar: ") + e.what());
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  if (io::get_bytes(in, 6) != std::string(kMagic, 6)) fail(ErrorKind::Format, "not a dataset file (bad magic)");
  if (io::get<std::uint16_t>(in) != kVersion) fail(ErrorKind::Format, "unsupported dataset version");
  const auto count = io::get<std::uint32_t>(in);
  const auto n = io::get<std::uint32_t>(in);
  const auto nf = io::get<std::uint32_t>(in);
  std::vector<double> points(nf);
  for (auto& f : points) f = io::get<double>(in);
  const zkit::FrequencyGrid grid(std::move(points));
  const auto dim = static_cast<Eigen::Index>(kProbes + n);

  std::vector<Record> records;
  records.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    std::vector<Feature> feats(kProbes + n);
    for (auto& f : feats)
      for (auto& v : f) v = io::get<double>(in);
    std::vector<CMatrix> data(nf, CMatrix(dim, dim));
    for (auto& m : data)
      for (Eigen::Index i = 0; i < dim; ++i)
        for (Eigen::Index j = 0; j < dim; ++j) {
          const double re = io::get<double>(in);
          const double im = io::get<double>(in);
          m(i, j) = {re, im};
        }
    State s;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      auto& ports = i < kProbes ? s.probes : s.candidates;
      auto& fl = i < kProbes ? s.probe_features : s.candidate_features;
      ports.push_back(port_of(feats[i], info.chip, info.interposer));
      fl.push_back(feats[i]);
    }
    s.validate();
    ZMatrixSeries z(grid, s.ports(), std::move(data));
    Record rec{std::move(s), std::move(z), {}};
    rec.initial.resize(nf * kTerms);
    for (std::size_t k = 0; k < nf; ++k) magnitudes_into(rec.z.at(k), &rec.initial[k * kTerms]);
    records.push_back(std::move(rec));
  }
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorKind::Format, "trailing bytes after the last record");
  if (info_out) *info_out = info;
  return records;
}

bool same_record(const Record& a, const Record& b) {
  return a.state.probes == b.state.probes && a.state.candidates == b.state.candidates &&
         a.state.probe_features == b.state.probe_features && a.state.candidate_features == b.state.candidate_features &&
         zkit::identical(a.z, b.z) && a.initial == b.initial;
}

}  // namespace pdnrl::env

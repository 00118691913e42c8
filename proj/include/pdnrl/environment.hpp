#pragma once

// The decap n/m problem: a state is four probing ports plus n candidate
// ports drawn from the full model, an action is an ordered list of m
// distinct candidates, and the reward is the weighted drop in the ten
// self/transfer impedance magnitudes at the probing ports.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdnrl/pdn_model.hpp"
#include "pdnrl/zkit.hpp"

namespace pdnrl::env {

using zkit::PortId;
using zkit::ZMatrixSeries;

inline constexpr std::size_t kProbes = 4;
inline constexpr std::size_t kFeatures = 4;

// (x, y, layer, is-probing) with x, y normalized to [0, 1].
using Feature = std::array<double, kFeatures>;

Feature feature_of(const PortId& port, const pdn::GridSize& chip, const pdn::GridSize& interposer);
PortId port_of(const Feature& f, const pdn::GridSize& chip, const pdn::GridSize& interposer);

struct State {
  std::vector<PortId> probes;      // exactly 4
  std::vector<PortId> candidates;  // n
  std::vector<Feature> probe_features;
  std::vector<Feature> candidate_features;

  std::size_t n() const { return candidates.size(); }
  // Probing ports first, then candidates.
  std::vector<PortId> ports() const;
  // (4 + n) x 4 in the same order.
  Eigen::MatrixXd feature_matrix() const;
  void validate() const;
};

State make_state(std::vector<PortId> probes, std::vector<PortId> candidates, const pdn::GridSize& chip,
                 const pdn::GridSize& interposer);

// Four probes from the PHY region and n candidates from the decap cells,
// uniformly without replacement. Throws Capacity if n is too large.
State random_state(const pdn::PdnGeometry& geometry, std::size_t n, std::uint64_t seed);

using Assignment = std::vector<std::size_t>;

struct RewardConfig {
  double alpha = 0.7;
  zkit::ShuntImpedance decap;
};

RewardConfig default_reward(const pdn::PdnPreset& preset, const zkit::FrequencyGrid& grid);

struct Record {
  State state;
  ZMatrixSeries z;
  // |Z| of the ten probing entries per frequency before any decap:
  // 4 diagonal then 6 upper pairs in lexicographic order.
  std::vector<double> initial;
};

Record make_record(const ZMatrixSeries& z_full, State state);

// Ten probing magnitudes per frequency after shunting the given candidates.
std::vector<double> probe_magnitudes(const Record& record, std::span<const std::size_t> assignment,
                                     const zkit::ShuntImpedance& decap);
// alpha * mean drop of the 4 self terms + (1 - alpha) * mean drop of the 6
// transfer terms, each drop summed over the grid in linear ohms.
double reward(const Record& record, std::span<const std::size_t> assignment, const RewardConfig& cfg);

std::vector<Record> generate_records(const ZMatrixSeries& z_full, const pdn::PdnGeometry& geometry, std::size_t n,
                                     std::size_t count, std::uint64_t seed);

struct DatasetInfo {
  std::string preset;
  std::uint64_t seed = 0;
  pdn::GridSize chip;
  pdn::GridSize interposer;
};

// Writes `path` and a JSON sidecar `path` + ".json" holding `info` and the
// file's SHA-256. load_dataset needs the sidecar to rebuild port ids.
void save_dataset(const std::vector<Record>& records, const std::filesystem::path& path, const DatasetInfo& info);
std::vector<Record> load_dataset(const std::filesystem::path& path, DatasetInfo* info = nullptr);

bool same_record(const Record& a, const Record& b);

}  // namespace pdnrl::env

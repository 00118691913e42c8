#pragma once

// Evaluation drivers shared by the command-line tool and the acceptance
// suite: method comparison on a record set, checkpoint transfer to other
// problem sizes, and the minimum-decap search against a target impedance.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "pdnrl/baselines.hpp"
#include "pdnrl/environment.hpp"
#include "pdnrl/policy.hpp"

namespace pdnrl::bench {

enum class Method { Greedy, Sampling, Ga, Rs };

const char* to_string(Method m);
Method method_from_string(const std::string& name);

struct BenchConfig {
  env::RewardConfig reward;
  // Population and seed are set per run; generations fix how a GA width
  // is split into population x generations.
  baselines::GaConfig ga{.generations = 5};
  std::uint64_t seed = 1;
};

// GA population for a budget of `width` reward evaluations per generation
// sweep: ceil(width / G), raised so the elite count is at least one.
std::size_t ga_population(std::size_t width, const baselines::GaConfig& ga);

struct OptimizationReport {
  std::string method;
  std::size_t width = 0;
  std::size_t m = 0;
  std::vector<double> rewards;  // one per record
  double mean = 0.0;
  std::vector<env::Assignment> assignments;
  std::size_t evaluations = 0;  // reward evaluations over all records
  double seconds = 0.0;         // wall clock; kept out of the JSON form
  std::uint64_t seed = 0;
  std::string config_digest;
};

// Runs one method on every record. Greedy ignores `width`; sampling keeps
// the best of `width` rollouts per record, drawn from a per-record stream
// so widths are nested; GA and RS get the same per-record seed.
OptimizationReport run_method(Method method, std::size_t width, std::span<const env::Record> records, std::size_t m,
                              policy::Policy* policy, const BenchConfig& cfg, const std::string& config_digest = "");

nlohmann::json to_json(const OptimizationReport& r);
OptimizationReport report_from_json(const nlohmann::json& j);
// Throws Format naming the first violation: missing or mistyped field,
// length mismatch, or a mean that is not the mean of the rewards.
void validate_report_json(const nlohmann::json& j);

struct TargetSpec {
  enum class Kind { Constant, RL };
  Kind kind = Kind::Constant;
  double r_t = 0.0;  // ohms
  double l_t = 0.0;  // henries, RL only

  double at(double f) const;
  double corner() const;  // RL only
  void validate() const;
};

// Largest |Z_ii| / target(f) over the four probing self-impedances and the
// grid; the target is met when this is at most 1.
double target_ratio(const env::Record& record, std::span<const std::size_t> assignment,
                    const zkit::ShuntImpedance& decap, const TargetSpec& target);

struct TargetProbe {
  std::size_t m = 0;
  double ratio = 0.0;
  bool pass = false;
};

struct TargetResult {
  bool achievable = false;
  std::size_t m = 0;
  env::Assignment assignment;
  double ratio = 0.0;
  // Re-decoded check of m - 1 when m > 0.
  std::optional<TargetProbe> below;
  std::vector<TargetProbe> probes;  // search trace in evaluation order
};

// Doubling from m = 1 until the greedy placement passes or m_max is
// reached, then bisection between the last failing and first passing m.
TargetResult target_search(const env::Record& record, const TargetSpec& target, policy::Policy& policy,
                           std::size_t m_max, const zkit::ShuntImpedance& decap);

nlohmann::json to_json(const TargetResult& r, const TargetSpec& target);

}  // namespace pdnrl::bench

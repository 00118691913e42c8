#include "pdnrl/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "pdnrl/error.hpp"
#include "pdnrl/parallel.hpp"
#include "pdnrl/trainer.hpp"

namespace pdnrl::bench {

namespace {

double wall_seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double exact_mean(const std::vector<double>& v) { return trainer::mean(v); }

}  // namespace

const char* to_string(Method m) {
  switch (m) {
    case Method::Greedy: return "greedy";
    case Method::Sampling: return "sampling";
    case Method::Ga: return "ga";
    case Method::Rs: return "rs";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  for (auto m : {Method::Greedy, Method::Sampling, Method::Ga, Method::Rs})
    if (name == to_string(m)) return m;
  fail(ErrorKind::Usage, "unknown method '" + name + "' (greedy, sampling, ga, rs)");
}

std::size_t ga_population(std::size_t width, const baselines::GaConfig& ga) {
  if (width == 0) fail(ErrorKind::Usage, "width must be at least 1");
  const std::size_t g = std::max<std::size_t>(1, ga.generations);
  std::size_t p = (width + g - 1) / g;
  baselines::GaConfig probe = ga;
  probe.population = std::max<std::size_t>(p, 2);
  while (probe.elite_count() < 1) ++probe.population;
  return probe.population;
}

OptimizationReport run_method(Method method, std::size_t width, std::span<const env::Record> records, std::size_t m,
                              policy::Policy* policy, const BenchConfig& cfg, const std::string& config_digest) {
  if (records.empty()) fail(ErrorKind::Usage, "no records to evaluate");
  if ((method == Method::Greedy || method == Method::Sampling) && policy == nullptr)
    fail(ErrorKind::Usage, std::string(to_string(method)) + " needs a policy checkpoint");
  if (method == Method::Greedy) width = 1;
  if (width == 0) fail(ErrorKind::Usage, "width must be at least 1");

  const auto t0 = std::chrono::steady_clock::now();
  OptimizationReport r;
  r.method = to_string(method);
  r.width = width;
  r.m = m;
  r.seed = cfg.seed;
  r.config_digest = config_digest;
  r.rewards.resize(records.size());
  r.assignments.resize(records.size());
  std::vector<std::size_t> evals(records.size(), 0);

  parallel_for(records.size(), [&](std::size_t i) {
    const auto& rec = records[i];
    const std::uint64_t seed = derive_seed(cfg.seed, {i});
    switch (method) {
      case Method::Greedy: {
        r.assignments[i] = policy::decode(*policy, rec.state, m, policy::DecodeMode::Greedy, nullptr);
        r.rewards[i] = env::reward(rec, r.assignments[i], cfg.reward);
        evals[i] = 1;
        break;
      }
      case Method::Sampling: {
        Rng rng(seed);
        double best = 0.0;
        for (std::size_t w = 0; w < width; ++w) {
          auto a = policy::decode(*policy, rec.state, m, policy::DecodeMode::Sampling, &rng);
          const double v = env::reward(rec, a, cfg.reward);
          if (w == 0 || v > best) {
            best = v;
            r.assignments[i] = std::move(a);
          }
        }
        r.rewards[i] = best;
        evals[i] = width;
        break;
      }
      case Method::Ga: {
        auto ga = cfg.ga;
        ga.population = ga_population(width, cfg.ga);
        ga.seed = seed;
        auto s = baselines::ga_optimize(rec, m, ga, cfg.reward);
        r.assignments[i] = baselines::to_assignment(s.best);
        r.rewards[i] = s.best_reward;
        evals[i] = s.evaluations;
        break;
      }
      case Method::Rs: {
        auto s = baselines::rs_optimize(rec, m, width, seed, cfg.reward);
        r.assignments[i] = baselines::to_assignment(s.best);
        r.rewards[i] = s.best_reward;
        evals[i] = s.evaluations;
        break;
      }
    }
  });
  for (auto e : evals) r.evaluations += e;
  r.mean = exact_mean(r.rewards);
  r.seconds = wall_seconds_since(t0);
  return r;
}

nlohmann::json to_json(const OptimizationReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["width"] = r.width;
  j["m"] = r.m;
  j["rewards"] = r.rewards;
  j["mean"] = r.mean;
  j["assignments"] = r.assignments;
  j["evaluations"] = r.evaluations;
  j["seed"] = r.seed;
  j["config_digest"] = r.config_digest;
  return j;
}

void validate_report_json(const nlohmann::json& j) {
  auto bad = [](const std::string& what) { fail(ErrorKind::Format, "report: " + what); };
  if (!j.is_object()) bad("not an object");
  auto need = [&](const char* key, bool ok) {
    if (!j.contains(key)) bad(std::string("missing '") + key + "'");
    if (!ok) bad(std::string("'") + key + "' has the wrong type");
  };
  need("method", j.contains("method") && j["method"].is_string());
  need("width", j.contains("width") && j["width"].is_number_unsigned());
  need("m", j.contains("m") && j["m"].is_number_unsigned());
  need("rewards", j.contains("rewards") && j["rewards"].is_array());
  need("mean", j.contains("mean") && j["mean"].is_number());
  need("assignments", j.contains("assignments") && j["assignments"].is_array());
  need("evaluations", j.contains("evaluations") && j["evaluations"].is_number_unsigned());
  need("seed", j.contains("seed") && j["seed"].is_number_unsigned());
  need("config_digest", j.contains("config_digest") && j["config_digest"].is_string());
  method_from_string(j["method"].get<std::string>());
  const auto& rewards = j["rewards"];
  const auto& assignments = j["assignments"];
  if (rewards.empty()) bad("no rewards");
  if (rewards.size() != assignments.size()) bad("rewards and assignments differ in length");
  std::vector<double> values;
  for (const auto& v : rewards) {
    if (!v.is_number()) bad("non-numeric reward");
    values.push_back(v.get<double>());
  }
  const std::size_t m = j["m"].get<std::size_t>();
  for (const auto& a : assignments) {
    if (!a.is_array() || a.size() != m) bad("assignment length differs from m");
    for (const auto& x : a)
      if (!x.is_number_unsigned()) bad("assignment entries must be indices");
  }
  if (exact_mean(values) != j["mean"].get<double>()) bad("mean is not the mean of the rewards");
}

OptimizationReport report_from_json(const nlohmann::json& j) {
  validate_report_json(j);
  OptimizationReport r;
  r.method = j["method"].get<std::string>();
  r.width = j["width"].get<std::size_t>();
  r.m = j["m"].get<std::size_t>();
  r.rewards = j["rewards"].get<std::vector<double>>();
  r.mean = j["mean"].get<double>();
  r.assignments = j["assignments"].get<std::vector<env::Assignment>>();
  r.evaluations = j["evaluations"].get<std::size_t>();
  r.seed = j["seed"].get<std::uint64_t>();
  r.config_digest = j["config_digest"].get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------

double TargetSpec::at(double f) const {
  if (kind == Kind::Constant) return r_t;
  return std::max(r_t, 2.0 * M_PI * f * l_t);
}

double TargetSpec::corner() const { return r_t / (2.0 * M_PI * l_t); }

void TargetSpec::validate() const {
  if (!(r_t > 0.0) || !std::isfinite(r_t)) fail(ErrorKind::Config, "target resistance must be positive");
  if (kind == Kind::RL && (!(l_t > 0.0) || !std::isfinite(l_t)))
    fail(ErrorKind::Config, "R-L target inductance must be positive");
}

double target_ratio(const env::Record& record, std::span<const std::size_t> assignment,
                    const zkit::ShuntImpedance& decap, const TargetSpec& target) {
  const auto mags = env::probe_magnitudes(record, assignment, decap);
  const auto& grid = record.z.grid();
  constexpr std::size_t terms = 10;
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = target.at(grid[k]);
    for (std::size_t p = 0; p < env::kProbes; ++p) worst = std::max(worst, mags[k * terms + p] / t);
  }
  return worst;
}

TargetResult target_search(const env::Record& record, const TargetSpec& target, policy::Policy& policy,
                           std::size_t m_max, const zkit::ShuntImpedance& decap) {
  target.validate();
  m_max = std::min(m_max, record.state.n());
  TargetResult result;
  auto probe = [&](std::size_t m, env::Assignment* out) {
    auto a = policy::decode(policy, record.state, m, policy::DecodeMode::Greedy, nullptr);
    TargetProbe p{m, target_ratio(record, a, decap, target), false};
    p.pass = p.ratio <= 1.0;
    if (out) *out = std::move(a);
    return p;
  };

  auto start = probe(0, nullptr);
  result.probes.push_back(start);
  if (start.pass) {
    result.achievable = true;
    result.ratio = start.ratio;
    return result;
  }

  std::size_t lo = 0, hi = 0;
  for (std::size_t m = 1; m <= m_max; m = std::min(2 * m, m_max)) {
    auto p = probe(m, nullptr);
    result.probes.push_back(p);
    if (p.pass) {
      hi = m;
      break;
    }
    lo = m;
    if (m == m_max) break;
  }
  if (hi == 0) return result;

  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    auto p = probe(mid, nullptr);
    result.probes.push_back(p);
    (p.pass ? hi : lo) = mid;
  }

  // Both ends re-decoded rather than taken from the trace.
  auto at = probe(hi, &result.assignment);
  auto below = probe(hi - 1, nullptr);
  if (!at.pass || below.pass) fail(ErrorKind::Contract, "target search bracket did not re-verify");
  result.achievable = true;
  result.m = hi;
  result.ratio = at.ratio;
  result.below = below;
  return result;
}

nlohmann::json to_json(const TargetResult& r, const TargetSpec& target) {
  nlohmann::json j;
  j["target"] = {{"kind", target.kind == TargetSpec::Kind::Constant ? "constant" : "rl"},
                 {"r_t", target.r_t},
                 {"l_t", target.l_t}};
  j["achievable"] = r.achievable;
  if (r.achievable) {
    j["m"] = r.m;
    j["assignment"] = r.assignment;
    j["ratio"] = r.ratio;
    if (r.below) j["below"] = {{"m", r.below->m}, {"ratio", r.below->ratio}, {"pass", r.below->pass}};
  }
  auto& trace = j["probes"] = nlohmann::json::array();
  for (const auto& p : r.probes) trace.push_back({{"m", p.m}, {"ratio", p.ratio}, {"pass", p.pass}});
  return j;
}

}  // namespace pdnrl::bench

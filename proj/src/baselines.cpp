#include "pdnrl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pdnrl/error.hpp"
#include "pdnrl/parallel.hpp"

namespace pdnrl::baselines {

namespace {

enum : std::uint64_t { kInit = 0, kBreed = 1 };

void check_feasible(std::size_t n, std::size_t m) {
  if (m > n) fail(ErrorKind::Infeasible, "m = " + std::to_string(m) + " exceeds n = " + std::to_string(n));
}

std::vector<double> evaluate(const env::Record& record, const std::vector<Chromosome>& pop,
                             const env::RewardConfig& reward) {
  std::vector<double> out(pop.size());
  parallel_for(pop.size(), [&](std::size_t i) { out[i] = env::reward(record, to_assignment(pop[i]), reward); });
  return out;
}

// Indices by descending reward, ties by position.
std::vector<std::size_t> ranking(const std::vector<double>& rewards) {
  std::vector<std::size_t> order(rewards.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rewards[a] > rewards[b]; });
  return order;
}

}  // namespace

std::size_t popcount(const Chromosome& c) { return static_cast<std::size_t>(std::count(c.begin(), c.end(), 1)); }

Chromosome from_assignment(std::size_t n, const env::Assignment& a) {
  Chromosome c(n, 0);
  for (auto i : a) {
    if (i >= n) fail(ErrorKind::NoSuchPort, "position beyond the chromosome");
    c[i] = 1;
  }
  return c;
}

env::Assignment to_assignment(const Chromosome& c) {
  env::Assignment out;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i]) out.push_back(i);
  return out;
}

Chromosome random_chromosome(std::size_t n, std::size_t m, Rng& rng) {
  check_feasible(n, m);
  return from_assignment(n, sample_without_replacement(rng, n, m));
}

Chromosome repair(Chromosome c, std::size_t m, Rng& rng) {
  check_feasible(c.size(), m);
  const std::size_t ones = popcount(c);
  if (ones == m) return c;
  const std::uint8_t surplus = ones > m ? 1 : 0;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i] == surplus) pool.push_back(i);
  const std::size_t flips = ones > m ? ones - m : m - ones;
  for (auto k : sample_without_replacement(rng, pool.size(), flips)) c[pool[k]] = surplus ? 0 : 1;
  return c;
}

void mutate(Chromosome& c, Rng& rng) {
  std::vector<std::size_t> ones, zeros;
  for (std::size_t i = 0; i < c.size(); ++i) (c[i] ? ones : zeros).push_back(i);
  if (ones.empty() || zeros.empty()) return;
  const auto a = ones[uniform_below(rng, ones.size())];
  const auto b = zeros[uniform_below(rng, zeros.size())];
  std::swap(c[a], c[b]);
}

Chromosome crossover(const Chromosome& left, const Chromosome& right) {
  if (left.size() != right.size()) fail(ErrorKind::Shape, "parents differ in length");
  const std::size_t half = left.size() / 2;
  Chromosome child(left.begin(), left.begin() + static_cast<std::ptrdiff_t>(half));
  child.insert(child.end(), right.begin() + static_cast<std::ptrdiff_t>(half), right.end());
  return child;
}

std::size_t GaConfig::elite_count() const {
  return static_cast<std::size_t>(std::floor(elite * static_cast<double>(population) + 1e-9));
}

std::size_t GaConfig::selection_count(double ratio) const {
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(population) + 1e-9));
  return std::min(population, std::max<std::size_t>(2, k));
}

void GaConfig::validate() const {
  if (population < 2) fail(ErrorKind::Config, "population must be at least 2");
  if (!(selection > 0.0 && selection <= 1.0) || !(elite > 0.0 && elite < 1.0) ||
      !(mutation >= 0.0 && mutation <= 1.0) || !(decay > 0.0 && decay <= 1.0))
    fail(ErrorKind::Config, "GA ratios out of range");
  if (elite_count() < 1) fail(ErrorKind::Config, "population * elite ratio must be at least 1");
}

SearchResult ga_optimize(const env::Record& record, std::size_t m, const GaConfig& cfg,
                         const env::RewardConfig& reward) {
  cfg.validate();
  const std::size_t n = record.state.n();
  check_feasible(n, m);

  std::vector<Chromosome> pop(cfg.population);
  for (std::size_t i = 0; i < pop.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, {kInit, i}));
    pop[i] = random_chromosome(n, m, rng);
  }
  auto rewards = evaluate(record, pop, reward);
  SearchResult result;
  result.evaluations = pop.size();
  double ratio = cfg.selection;

  auto record_generation = [&](std::size_t g, const std::vector<std::size_t>& order) {
    double total = 0.0;
    for (double r : rewards) total += r;
    result.history.push_back({g, rewards[order.front()], total / static_cast<double>(rewards.size()), ratio});
  };
  auto order = ranking(rewards);
  record_generation(0, order);

  const std::size_t elites = cfg.elite_count();
  for (std::size_t g = 0; g < cfg.generations; ++g) {
    const std::size_t parents = cfg.selection_count(ratio);
    std::vector<Chromosome> next(cfg.population);
    for (std::size_t i = 0; i < elites; ++i) next[i] = pop[order[i]];
    parallel_for(cfg.population - elites, [&](std::size_t c) {
      Rng rng(derive_seed(cfg.seed, {kBreed, g, c}));
      const auto& a = pop[order[uniform_below(rng, parents)]];
      const auto& b = pop[order[uniform_below(rng, parents)]];
      Chromosome child = repair(crossover(a, b), m, rng);
      if (uniform01(rng) < cfg.mutation) mutate(child, rng);
      next[elites + c] = std::move(child);
    });
    pop = std::move(next);
    rewards = evaluate(record, pop, reward);
    result.evaluations += pop.size();
    order = ranking(rewards);
    ratio *= cfg.decay;
    record_generation(g + 1, order);
  }
  result.best = pop[order.front()];
  result.best_reward = rewards[order.front()];
  return result;
}

SearchResult rs_optimize(const env::Record& record, std::size_t m, std::size_t width, std::uint64_t seed,
                         const env::RewardConfig& reward) {
  if (width == 0) fail(ErrorKind::Contract, "sampling width must be at least 1");
  const std::size_t n = record.state.n();
  check_feasible(n, m);
  std::vector<Chromosome> pop(width);
  for (std::size_t i = 0; i < width; ++i) {
    Rng rng(derive_seed(seed, {kInit, i}));
    pop[i] = random_chromosome(n, m, rng);
  }
  const auto rewards = evaluate(record, pop, reward);
  SearchResult result;
  result.evaluations = width;
  std::size_t best = 0;
  for (std::size_t i = 0; i < width; ++i) {
    if (rewards[i] > rewards[best]) best = i;
    result.prefix_best.push_back(rewards[best]);
  }
  result.best = pop[best];
  result.best_reward = rewards[best];
  return result;
}

SearchResult exhaustive_optimize(const env::Record& record, std::size_t m, const env::RewardConfig& reward) {
  const std::size_t n = record.state.n();
  check_feasible(n, m);
  std::vector<Chromosome> all;
  // Lexicographic walk over index combinations.
  env::Assignment idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    all.push_back(from_assignment(n, idx));
    std::size_t i = m;
    while (i > 0 && idx[i - 1] == n - m + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < m; ++j) idx[j] = idx[j - 1] + 1;
  }
  const auto rewards = evaluate(record, all, reward);
  const auto best = ranking(rewards).front();
  SearchResult result;
  result.best = all[best];
  result.best_reward = rewards[best];
  result.evaluations = all.size();
  return result;
}

void write_history(const std::vector<GenerationStats>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "generation,best,mean,alpha\n";
  for (const auto& h : history) out << h.generation << "," << h.best << "," << h.mean << "," << h.selection << "\n";
}

}  // namespace pdnrl::baselines

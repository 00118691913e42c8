#pragma once

// Search baselines over fixed-size decap subsets: a genetic algorithm with
// elitism and half-split crossover, and plain random search. Both score
// candidates with the environment reward.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdnrl/environment.hpp"
#include "pdnrl/rng.hpp"

namespace pdnrl::baselines {

// One gene per candidate; 1 means a decap is placed there.
using Chromosome = std::vector<std::uint8_t>;

std::size_t popcount(const Chromosome& c);
Chromosome from_assignment(std::size_t n, const env::Assignment& a);
// Sorted positions of the 1-genes.
env::Assignment to_assignment(const Chromosome& c);

Chromosome random_chromosome(std::size_t n, std::size_t m, Rng& rng);
// Flips uniformly chosen genes of the overrepresented value until exactly
// m genes are set.
Chromosome repair(Chromosome c, std::size_t m, Rng& rng);
// Swaps one random 1-gene with one random 0-gene.
void mutate(Chromosome& c, Rng& rng);
// Left half [0, n/2) of `left` followed by the right half of `right`.
Chromosome crossover(const Chromosome& left, const Chromosome& right);

struct GaConfig {
  std::size_t population = 100;
  std::size_t generations = 10;
  double selection = 0.5;  // decays by `decay` every generation
  double elite = 0.1;
  double mutation = 0.05;  // per-chromosome probability
  double decay = 0.95;
  std::uint64_t seed = 1;

  std::size_t elite_count() const;
  std::size_t selection_count(double ratio) const;
  void validate() const;
};

struct GenerationStats {
  std::size_t generation = 0;
  double best = 0.0;
  double mean = 0.0;
  double selection = 0.0;  // ratio used to pick this generation's parents
};

struct SearchResult {
  Chromosome best;
  double best_reward = 0.0;
  std::size_t evaluations = 0;
  std::vector<GenerationStats> history;  // GA only
  std::vector<double> prefix_best;       // RS only: running best after each sample
};

SearchResult ga_optimize(const env::Record& record, std::size_t m, const GaConfig& cfg, const env::RewardConfig& reward);
SearchResult rs_optimize(const env::Record& record, std::size_t m, std::size_t width, std::uint64_t seed,
                         const env::RewardConfig& reward);

// Every m-subset, for small n. Returns the best reward and its assignment.
SearchResult exhaustive_optimize(const env::Record& record, std::size_t m, const env::RewardConfig& reward);

void write_history(const std::vector<GenerationStats>& history, const std::filesystem::path& path);

}  // namespace pdnrl::baselines

#include "doctest.h"
#include "pdnrl/bench.hpp"
#include "pdnrl/trainer.hpp"

using namespace pdnrl;

TEST_CASE("trained greedy against random search width 100") {
  // Tiny-preset policies on decap 16/4, 100 desk test records. Greedy must
  // match or beat RS-100 on at least 70% of the seeds.
  auto preset = pdn::load_preset(std::string(PDNRL_PRESET_DIR) + "/desk.json");
  const auto grid = preset.grid();
  const auto z = pdn::build_full_pdn(preset, grid);
  const auto reward = env::default_reward(preset, grid);
  const auto test = env::generate_records(z, preset.geometry, 16, 100, 4242);

  int wins = 0;
  const std::uint64_t seeds[] = {1, 2, 3};
  for (auto seed : seeds) {
    auto cfg = trainer::tiny_trainer_config();
    cfg.seed = seed;
    cfg.monitor_every = 0;
    trainer::GeneratedSource src(z, preset.geometry, cfg.n);
    policy::Policy pol(policy::tiny_config(), seed);
    trainer::train(cfg, src, pol, reward);
    bench::BenchConfig bc;
    bc.reward = reward;
    bc.seed = seed;
    const auto greedy = bench::run_method(bench::Method::Greedy, 1, test, cfg.m, &pol, bc);
    const auto rs = bench::run_method(bench::Method::Rs, 100, test, cfg.m, nullptr, bc);
    MESSAGE("seed " << seed << ": greedy " << greedy.mean << ", RS-100 " << rs.mean);
    wins += greedy.mean >= rs.mean;
  }
  CHECK(wins >= 0.7 * std::size(seeds));
}

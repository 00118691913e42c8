#include <cmath>
#include <filesystem>
#include <limits>

#include "../support/gradcheck.hpp"
#include "doctest.h"
#include "pdnrl/error.hpp"
#include "pdnrl/parallel.hpp"
#include "pdnrl/trainer.hpp"

using namespace pdnrl;
using namespace pdnrl::trainer;

namespace {

struct Desk {
  pdn::PdnPreset preset = pdn::load_preset(std::string(PDNRL_PRESET_DIR) + "/desk.json");
  zkit::FrequencyGrid grid = preset.grid();
  zkit::ZMatrixSeries z = pdn::build_full_pdn(preset, grid);
  env::RewardConfig reward = env::default_reward(preset, grid);
};

const Desk& desk() {
  static const Desk d;
  return d;
}

policy::PolicyConfig micro() {
  policy::PolicyConfig c;
  c.layers = 1;
  c.d_h = 4;
  c.d_ff = 6;
  c.heads = 2;
  c.d_k = 2;
  c.d_v = 2;
  c.pointer_dk = 3;
  return c;
}

TrainerConfig small_run(std::uint64_t seed) {
  TrainerConfig c;
  c.epochs = 3;
  c.epoch_size = 12;
  c.batch = 4;
  c.validation = 6;
  c.lr = 1e-2;
  c.n = 6;
  c.m = 2;
  c.seed = seed;
  c.monitor_every = 2;
  c.monitor_size = 3;
  return c;
}

}  // namespace

TEST_CASE("paired t-test") {
  // Reference values from an independent Student-t implementation.
  CHECK(std::abs(student_t_cdf(-2.0, 99) - 0.024119846686316487) <= 1e-12);
  CHECK(std::abs(student_t_cdf(-1.3, 19) - 0.10457575014866397) <= 1e-12);

  // Differences alternating mu +- 1 over 100 pairs: sd = sqrt(100/99), so
  // mu = -0.2 sd gives t = -2 exactly.
  const double sd = std::sqrt(100.0 / 99.0);
  std::vector<double> base(100), cand(100);
  for (int i = 0; i < 100; ++i) {
    base[i] = 3.0 + 0.01 * i;
    cand[i] = base[i] - 0.2 * sd + (i % 2 == 0 ? 1.0 : -1.0);
  }
  CHECK(std::abs(paired_t_test(cand, base) - 0.024119846686316487) <= 1e-9);

  CHECK(paired_t_test(base, base) == 1.0);
  std::vector<double> shifted = base;
  for (auto& v : shifted) v -= 0.5;
  CHECK(paired_t_test(shifted, base) == std::numeric_limits<double>::min());
  CHECK(paired_t_test(base, shifted) == 1.0);

  std::vector<double> one{1.0};
  CHECK_THROWS_AS(paired_t_test(one, one), Error);
  CHECK_THROWS_AS(paired_t_test(base, one), Error);
}

TEST_CASE("learning rate schedule") {
  auto cfg = default_trainer_config();
  CHECK(cfg.epochs == 20);
  CHECK(cfg.epoch_size == 1000);
  CHECK(cfg.batch == 100);
  CHECK(cfg.validation == 100);
  CHECK(cfg.lr == 1e-4);
  CHECK(cfg.decay == 0.95);
  CHECK(cfg.threshold == 0.05);
  CHECK(learning_rate(cfg, 0) == 1e-4);
  CHECK(learning_rate(cfg, 3) == 1e-4 * std::pow(0.95, 3.0));
  CHECK_THROWS_AS(trainer_config_by_name("medium"), Error);
}

TEST_CASE("adam first step") {
  ad::Parameter p("p", ad::Mat::Constant(1, 3, 1.0));
  p.grad << 2.0, -0.5, 0.0;
  AdamState adam;
  adam.update({&p}, 0.1);
  // m_hat = g and v_hat = g^2 after one step.
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
  CHECK(p.value(0, 1) == doctest::Approx(1.0 + 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  CHECK(p.value(0, 2) == 1.0);
  ad::Parameter q("q", ad::Mat::Zero(2, 2));
  CHECK_THROWS_AS(adam.update({&p, &q}, 0.1), Error);
}

TEST_CASE("zero advantage leaves the policy untouched") {
  const auto& d = desk();
  // With m = n every rollout assigns every candidate, so the sampled and
  // baseline rewards coincide exactly.
  auto batch = env::generate_records(d.z, d.preset.geometry, 4, 3, 11);
  policy::Policy pol(micro(), 1);
  policy::Policy base(micro(), 2);
  const policy::Policy before = pol;
  AdamState adam;
  auto stats = reinforce_step(batch, 4, pol, base, adam, 1e-2, d.reward, 5);
  CHECK(stats.mean_advantage == 0.0);
  CHECK(stats.grad_norm == 0.0);
  CHECK(pol.identical(before));
}

TEST_CASE("batch loss") {
  const auto& d = desk();
  auto records = env::generate_records(d.z, d.preset.geometry, 5, 3, 21);
  policy::Policy pol(micro(), 3);
  const std::vector<env::Assignment> actions{{1, 4}, {0, 2}, {3, 1}};
  const std::vector<double> adv{0.7, -1.3, 0.25};

  SUBCASE("single record is advantage times log-probability") {
    ad::Tape t;
    policy::Bound b(t, pol, false);
    auto loss = reinforce_loss(b, std::span(records).first(1), std::span(actions).first(1), std::span(adv).first(1));
    auto lp = policy::sequence_log_prob(b, policy::features_of(records[0].state), actions[0]);
    CHECK(loss.scalar() == 0.7 * lp.scalar());
  }

  SUBCASE("gradient matches finite differences") {
    auto rep = testsupport::gradient_check(pol.parameters(), [&](ad::Tape& t) {
      policy::Bound b(t, pol, true);
      return reinforce_loss(b, records, actions, adv);
    });
    INFO(rep.where << " analytic " << rep.analytic << " numeric " << rep.numeric);
    CHECK(rep.worst <= 1e-4);
  }

  SUBCASE("per-record tapes accumulate the same gradient") {
    pol.zero_grad();
    {
      ad::Tape t;
      policy::Bound b(t, pol, true);
      t.backward(reinforce_loss(b, records, actions, adv));
    }
    std::vector<ad::Mat> joint;
    for (auto* p : pol.parameters()) joint.push_back(p->grad);
    pol.zero_grad();
    for (std::size_t i = 0; i < records.size(); ++i) {
      ad::Tape t;
      policy::Bound b(t, pol, true);
      auto lp = policy::sequence_log_prob(b, policy::features_of(records[i].state), actions[i]);
      t.backward(ad::scale(lp, adv[i] / 3.0));
    }
    auto params = pol.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double scale = std::max(1e-12, joint[k].cwiseAbs().maxCoeff());
      CHECK((params[k]->grad - joint[k]).cwiseAbs().maxCoeff() / scale <= 1e-12);
    }
  }
}

TEST_CASE("training runs") {
  const auto& d = desk();

  SUBCASE("no epochs") {
    auto cfg = small_run(1);
    cfg.epochs = 0;
    GeneratedSource src(d.z, d.preset.geometry, cfg.n);
    policy::Policy pol(micro(), 4);
    const policy::Policy before = pol;
    auto res = train(cfg, src, pol, d.reward);
    CHECK(res.log.empty());
    CHECK(pol.identical(before));
  }

  SUBCASE("deterministic and independent of the worker count") {
    auto cfg = small_run(7);
    GeneratedSource src(d.z, d.preset.geometry, cfg.n);
    auto dir = std::filesystem::temp_directory_path() / "pdnrl_trainer_test";
    std::filesystem::remove_all(dir);

    const auto jobs = default_jobs();
    policy::Policy a(micro(), 9);
    auto ra = train(cfg, src, a, d.reward, {dir, {}});
    set_default_jobs(4);
    policy::Policy b(micro(), 9);
    auto rb = train(cfg, src, b, d.reward);
    set_default_jobs(jobs);

    CHECK(format_log(ra.log) == format_log(rb.log));
    CHECK(a.identical(b));
    CHECK(!a.identical(policy::Policy(micro(), 9)));
    for (int e = 1; e <= 3; ++e) CHECK(std::filesystem::exists(dir / ("epoch_" + std::to_string(e) + ".pol")));
    CHECK(policy::Policy::load(dir / "epoch_3.pol").identical(a));

    REQUIRE(ra.log.size() == 9);
    for (const auto& row : ra.log) {
      CHECK(row.lr == learning_rate(cfg, row.epoch - 1));
      const bool epoch_end = row.step % 3 == 0;
      CHECK(std::isnan(row.validation_reward) == !epoch_end);
      CHECK(std::isnan(row.monitor_reward) == !(row.step == 1 || row.step % 2 == 0));
      if (row.baseline_swapped) CHECK(row.validation_reward > row.baseline_reward);
    }
    const auto text = format_log(ra.log);
    CHECK(text.substr(0, text.find('\n')) == kLogHeader);
  }

  SUBCASE("incompatible inputs") {
    auto cfg = small_run(1);
    GeneratedSource src(d.z, d.preset.geometry, 7);
    policy::Policy pol(micro(), 4);
    try {
      train(cfg, src, pol, d.reward);
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
    }
    cfg.m = 9;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }

  SUBCASE("pool source") {
    auto pool = env::generate_records(d.z, d.preset.geometry, 6, 10, 3);
    PoolSource src(pool);
    CHECK(src.n() == 6);
    auto drawn = src.draw(5, 1);
    CHECK(drawn.size() == 5);
    auto again = src.draw(5, 1);
    for (std::size_t i = 0; i < 5; ++i) CHECK(env::same_record(drawn[i], again[i]));
    pool.push_back(env::generate_records(d.z, d.preset.geometry, 5, 1, 4).front());
    CHECK_THROWS_AS(PoolSource{pool}, Error);
  }
}

TEST_CASE("tiny training improves the batch reward") {
  // Average over three seeds of the mean sampled batch reward, step 50 vs
  // step 1, on decap 16/4.
  const auto& d = desk();
  double first = 0.0, last = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = tiny_trainer_config();
    cfg.seed = seed;
    cfg.epochs = 5;
    cfg.monitor_every = 0;
    GeneratedSource src(d.z, d.preset.geometry, cfg.n);
    policy::Policy pol(policy::tiny_config(), seed);
    auto res = train(cfg, src, pol, d.reward);
    REQUIRE(res.log.size() == 50);
    first += res.log.front().mean_reward;
    last += res.log.back().mean_reward;
  }
  CHECK(last > first);
}

TEST_CASE("tiny training improves the greedy monitor reward") {
  // Same runs, greedy reward on the fixed monitor draw.
  const auto& d = desk();
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = tiny_trainer_config();
    cfg.seed = seed;
    cfg.epochs = 5;
    GeneratedSource src(d.z, d.preset.geometry, cfg.n);
    policy::Policy pol(policy::tiny_config(), seed);
    auto res = train(cfg, src, pol, d.reward);
    CHECK(res.log.back().monitor_reward > res.log.front().monitor_reward);
  }
}

#include "pdnrl/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "pdnrl/error.hpp"
#include "pdnrl/parallel.hpp"
#include "pdnrl/rng.hpp"

namespace pdnrl::trainer {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t { kBatchDraw = 0, kSampling = 1, kValidation = 2, kMonitor = 3 };

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

void TrainerConfig::validate() const {
  if (batch == 0 || epoch_size < batch) fail(ErrorKind::Config, "epoch size must hold at least one batch");
  if (validation < 2) fail(ErrorKind::Config, "validation needs at least two records for the t-test");
  if (!(lr > 0.0) || !(decay > 0.0) || !(threshold > 0.0 && threshold < 1.0))
    fail(ErrorKind::Config, "learning rate, decay and threshold must be positive (threshold below 1)");
  if (m == 0 || m > n) fail(ErrorKind::Config, "need 0 < m <= n");
  if (monitor_every > 0 && monitor_size == 0) fail(ErrorKind::Config, "monitor needs a nonzero draw size");
}

TrainerConfig default_trainer_config() { return TrainerConfig{}; }

TrainerConfig tiny_trainer_config() {
  TrainerConfig c;
  c.epochs = 50;
  c.epoch_size = 200;
  c.batch = 20;
  c.validation = 20;
  c.n = 16;
  c.m = 4;
  c.monitor_every = 1;
  c.monitor_size = 20;
  return c;
}

TrainerConfig trainer_config_by_name(const std::string& name) {
  if (name == "default") return default_trainer_config();
  if (name == "tiny") return tiny_trainer_config();
  fail(ErrorKind::Config, "unknown trainer preset '" + name + "'");
}

double learning_rate(const TrainerConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::pow(cfg.decay, static_cast<double>(epoch));
}

void AdamState::update(const std::vector<ad::Parameter*>& params, double lr) {
  if (m.empty()) {
    for (const auto* p : params) {
      m.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
      v.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m.size() != params.size()) fail(ErrorKind::Contract, "optimizer state belongs to another parameter set");
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (m[i].rows() != p->grad.rows() || m[i].cols() != p->grad.cols())
      fail(ErrorKind::Shape, "moment shape differs from " + p->name);
    m[i] = beta1 * m[i] + (1.0 - beta1) * p->grad;
    v[i] = beta2 * v[i] + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
  }
}

double student_t_cdf(double t, double df) {
  boost::math::students_t dist(df);
  return boost::math::cdf(dist, t);
}

double paired_t_test(std::span<const double> candidate, std::span<const double> baseline) {
  if (candidate.size() != baseline.size() || candidate.size() < 2)
    fail(ErrorKind::Contract, "paired t-test needs two equal-length sequences of at least two values");
  const auto n = static_cast<double>(candidate.size());
  double mu = 0.0;
  for (std::size_t i = 0; i < candidate.size(); ++i) mu += candidate[i] - baseline[i];
  mu /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const double d = candidate[i] - baseline[i] - mu;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  if (sd == 0.0) {
    if (mu < 0.0) return std::numeric_limits<double>::min();
    return 1.0;  // no differences, or a uniform worsening
  }
  return student_t_cdf(mu / (sd / std::sqrt(n)), n - 1.0);
}

// ---------------------------------------------------------------------------

std::vector<env::Record> GeneratedSource::draw(std::size_t count, std::uint64_t seed) const {
  return env::generate_records(*z_, *geometry_, n_, count, seed);
}

PoolSource::PoolSource(std::vector<env::Record> records) : records_(std::move(records)) {
  if (records_.empty()) fail(ErrorKind::Config, "empty record pool");
  n_ = records_.front().state.n();
  for (const auto& r : records_)
    if (r.state.n() != n_) fail(ErrorKind::Config, "pool records disagree on n");
}

std::vector<env::Record> PoolSource::draw(std::size_t count, std::uint64_t seed) const {
  Rng rng(seed);
  std::vector<env::Record> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(records_[uniform_below(rng, records_.size())]);
  return out;
}

// ---------------------------------------------------------------------------

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<double> greedy_rewards(policy::Policy& policy, std::span<const env::Record> records, std::size_t m,
                                   const env::RewardConfig& reward) {
  std::vector<double> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    auto a = policy::decode(policy, records[i].state, m, policy::DecodeMode::Greedy, nullptr);
    out[i] = env::reward(records[i], a, reward);
  });
  return out;
}

ad::Var reinforce_loss(const policy::Bound& bound, std::span<const env::Record> batch,
                       std::span<const env::Assignment> actions, std::span<const double> advantages) {
  if (batch.empty() || actions.size() != batch.size() || advantages.size() != batch.size())
    fail(ErrorKind::Contract, "batch, actions and advantages must have one equal nonzero length");
  std::vector<ad::Var> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto lp = policy::sequence_log_prob(bound, policy::features_of(batch[i].state), actions[i]);
    terms.push_back(ad::scale(lp, advantages[i]));
  }
  return ad::mean(ad::concat_cols(terms));
}

StepStats reinforce_step(std::span<const env::Record> batch, std::size_t m, policy::Policy& policy,
                         policy::Policy& baseline, AdamState& adam, double lr, const env::RewardConfig& reward,
                         std::uint64_t seed) {
  if (batch.empty()) fail(ErrorKind::Contract, "empty batch");
  const std::size_t n = batch.front().state.n();
  for (const auto& r : batch)
    if (r.state.n() != n) fail(ErrorKind::Contract, "batch records disagree on n");

  const std::size_t size = batch.size();
  std::vector<std::unique_ptr<ad::Tape>> tapes(size);
  std::vector<ad::Var> log_probs(size);
  std::vector<double> rewards(size), base_rewards(size);
  parallel_for(size, [&](std::size_t i) {
    tapes[i] = std::make_unique<ad::Tape>();
    policy::Bound bound(*tapes[i], policy, true);
    Rng rng(derive_seed(seed, {i}));
    auto r = policy::rollout(bound, policy::features_of(batch[i].state), m, policy::DecodeMode::Sampling, &rng);
    log_probs[i] = r.log_prob;
    rewards[i] = env::reward(batch[i], r.actions, reward);
    auto g = policy::decode(baseline, batch[i].state, m, policy::DecodeMode::Greedy, nullptr);
    base_rewards[i] = env::reward(batch[i], g, reward);
  });

  // Cost is the negative reward, so the advantage is base reward - reward.
  // Gradients are accumulated in index order to keep the sum reproducible.
  auto params = policy.parameters();
  for (auto* p : params) p->zero_grad();
  StepStats stats;
  for (std::size_t i = 0; i < size; ++i) {
    const double adv = base_rewards[i] - rewards[i];
    stats.mean_reward += rewards[i];
    stats.mean_advantage += adv;
    auto& tape = *tapes[i];
    tape.backward(ad::scale(log_probs[i], adv / static_cast<double>(size)));
  }
  stats.mean_reward /= static_cast<double>(size);
  stats.mean_advantage /= static_cast<double>(size);
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.squaredNorm();
  stats.grad_norm = std::sqrt(sq);
  adam.update(params, lr);
  return stats;
}

// ---------------------------------------------------------------------------

std::string format_log(const std::vector<LogRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << kLogHeader << "\n";
  auto num = [&](double v) {
    if (std::isnan(v))
      out << "";
    else
      out << v;
  };
  for (const auto& r : rows) {
    out << r.epoch << "," << r.step << ",";
    num(r.mean_reward);
    out << ",";
    num(r.mean_advantage);
    out << ",";
    num(r.grad_norm);
    out << ",";
    num(r.lr);
    out << ",";
    num(r.validation_reward);
    out << ",";
    num(r.baseline_reward);
    out << ",";
    num(r.p_value);
    out << "," << (r.baseline_swapped ? 1 : 0) << ",";
    num(r.monitor_reward);
    out << "\n";
  }
  return out.str();
}

void write_log(const std::vector<LogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << format_log(rows);
}

TrainResult train(const TrainerConfig& cfg, const RecordSource& source, policy::Policy& policy,
                  const env::RewardConfig& reward, const TrainOptions& options) {
  cfg.validate();
  if (source.n() != cfg.n)
    fail(ErrorKind::Config, "records have n = " + std::to_string(source.n()) + ", trainer expects " +
                                std::to_string(cfg.n));
  if (policy.config().d_x != static_cast<int>(env::kFeatures)) fail(ErrorKind::Config, "policy input width is not 4");
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  TrainResult result{{}, 0, policy};
  AdamState adam;
  std::vector<env::Record> monitor;
  if (cfg.monitor_every > 0) monitor = source.draw(cfg.monitor_size, derive_seed(cfg.seed, {kMonitor}));

  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = learning_rate(cfg, e);
    for (std::size_t t = 0; t < cfg.steps_per_epoch(); ++t) {
      ++step;
      auto batch = source.draw(cfg.batch, derive_seed(cfg.seed, {kBatchDraw, step}));
      auto stats = reinforce_step(batch, cfg.m, policy, result.baseline, adam, lr, reward,
                                  derive_seed(cfg.seed, {kSampling, step}));
      LogRow row{e + 1, step, stats.mean_reward, stats.mean_advantage, stats.grad_norm, lr, kNaN, kNaN, kNaN, false,
                 kNaN};
      if (cfg.monitor_every > 0 && (step == 1 || step % cfg.monitor_every == 0))
        row.monitor_reward = mean(greedy_rewards(policy, monitor, cfg.m, reward));

      if (t + 1 == cfg.steps_per_epoch()) {
        auto val = source.draw(cfg.validation, derive_seed(cfg.seed, {kValidation, e}));
        auto cand = greedy_rewards(policy, val, cfg.m, reward);
        auto base = greedy_rewards(result.baseline, val, cfg.m, reward);
        std::vector<double> cand_cost(cand.size()), base_cost(base.size());
        for (std::size_t i = 0; i < cand.size(); ++i) {
          cand_cost[i] = -cand[i];
          base_cost[i] = -base[i];
        }
        row.validation_reward = mean(cand);
        row.baseline_reward = mean(base);
        row.p_value = paired_t_test(cand_cost, base_cost);
        if (row.p_value < cfg.threshold) {
          result.baseline = policy;
          row.baseline_swapped = true;
          ++result.baseline_swaps;
        }
      }
      result.log.push_back(row);
      if (options.on_step) options.on_step(row);
    }
    if (options.checkpoint_dir) policy.save(*options.checkpoint_dir / ("epoch_" + std::to_string(e + 1) + ".pol"));
  }
  return result;
}

}  // namespace pdnrl::trainer

#pragma once

// REINFORCE with a greedy rollout baseline.
//
// Each step samples one rollout per record from the current policy, decodes
// the same record greedily with the frozen baseline policy, and descends on
// mean((cost - baseline cost) * log-prob) with Adam. At the end of every
// epoch both policies are decoded greedily on a fresh validation draw and the
// baseline is replaced when a one-sided paired t-test says the current policy
// is better.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdnrl/environment.hpp"
#include "pdnrl/policy.hpp"

namespace pdnrl::trainer {

struct TrainerConfig {
  std::size_t epochs = 20;
  std::size_t epoch_size = 1000;  // records per epoch; steps = epoch_size / batch
  std::size_t batch = 100;
  std::size_t validation = 100;
  double lr = 1e-4;
  double decay = 0.95;
  double threshold = 0.05;
  std::size_t n = 100;
  std::size_t m = 20;
  std::uint64_t seed = 1;
  // Greedy reward of the current policy on a fixed draw, every k steps
  // (0 disables). Used to follow convergence step by step.
  std::size_t monitor_every = 0;
  std::size_t monitor_size = 0;

  std::size_t steps_per_epoch() const { return epoch_size / batch; }
  void validate() const;
};

TrainerConfig default_trainer_config();
// Desk-scale run on decap 16/4.
TrainerConfig tiny_trainer_config();
TrainerConfig trainer_config_by_name(const std::string& name);

// Learning rate in effect during epoch e (0-based).
double learning_rate(const TrainerConfig& cfg, std::size_t epoch);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<ad::Mat> m, v;

  void update(const std::vector<ad::Parameter*>& params, double lr);
};

// One-sided paired t-test that `candidate` costs are lower than `baseline`.
double paired_t_test(std::span<const double> candidate, std::span<const double> baseline);
// P(T <= t) for Student's t with df degrees of freedom.
double student_t_cdf(double t, double df);

// Where training records come from.
class RecordSource {
 public:
  virtual ~RecordSource() = default;
  virtual std::vector<env::Record> draw(std::size_t count, std::uint64_t seed) const = 0;
  virtual std::size_t n() const = 0;
};

// Fresh random states from the full model for every draw.
class GeneratedSource : public RecordSource {
 public:
  GeneratedSource(const zkit::ZMatrixSeries& z_full, const pdn::PdnGeometry& geometry, std::size_t n)
      : z_(&z_full), geometry_(&geometry), n_(n) {}
  std::vector<env::Record> draw(std::size_t count, std::uint64_t seed) const override;
  std::size_t n() const override { return n_; }

 private:
  const zkit::ZMatrixSeries* z_;
  const pdn::PdnGeometry* geometry_;
  std::size_t n_;
};

// Uniform draws with replacement from a fixed record list.
class PoolSource : public RecordSource {
 public:
  explicit PoolSource(std::vector<env::Record> records);
  std::vector<env::Record> draw(std::size_t count, std::uint64_t seed) const override;
  std::size_t n() const override { return n_; }

 private:
  std::vector<env::Record> records_;
  std::size_t n_ = 0;
};

struct StepStats {
  double mean_reward = 0.0;     // sampled rollouts
  double mean_advantage = 0.0;  // mean of (cost - baseline cost)
  double grad_norm = 0.0;       // before the Adam update
};

// Per-record rollout seeds are derived from `seed`.
StepStats reinforce_step(std::span<const env::Record> batch, std::size_t m, policy::Policy& policy,
                         policy::Policy& baseline, AdamState& adam, double lr, const env::RewardConfig& reward,
                         std::uint64_t seed);

// The batch loss built on one tape: mean_i advantage_i * log p(actions_i).
ad::Var reinforce_loss(const policy::Bound& bound, std::span<const env::Record> batch,
                       std::span<const env::Assignment> actions, std::span<const double> advantages);

// Mean greedy reward plus the per-record rewards.
std::vector<double> greedy_rewards(policy::Policy& policy, std::span<const env::Record> records, std::size_t m,
                                   const env::RewardConfig& reward);
double mean(std::span<const double> v);

// One row per step. Epoch-end columns are NaN on other steps; the monitor
// column is NaN when not evaluated.
struct LogRow {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, global
  double mean_reward = 0.0;
  double mean_advantage = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double validation_reward = 0.0;  // current policy, greedy, epoch-end draw
  double baseline_reward = 0.0;    // baseline policy on the same draw
  double p_value = 0.0;
  bool baseline_swapped = false;
  double monitor_reward = 0.0;
};

inline constexpr const char* kLogHeader =
    "epoch,step,mean_reward,mean_advantage,grad_norm,lr,validation_reward,baseline_reward,p_value,baseline_swapped,"
    "monitor_reward";

void write_log(const std::vector<LogRow>& rows, const std::filesystem::path& path);
std::string format_log(const std::vector<LogRow>& rows);

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch_<e>.pol written per epoch
  std::function<void(const LogRow&)> on_step;
};

struct TrainResult {
  std::vector<LogRow> log;
  std::size_t baseline_swaps = 0;
  policy::Policy baseline;
};

TrainResult train(const TrainerConfig& cfg, const RecordSource& source, policy::Policy& policy,
                  const env::RewardConfig& reward, const TrainOptions& options = {});

}  // namespace pdnrl::trainer

#pragma once

// Attention encoder-decoder policy over decap candidates.
//
// The encoder embeds the 4 probing ports and n candidates jointly; every
// decoding step builds a context from the previous pick, the four probing
// embeddings and the graph mean, attends over the candidates and scores them
// with a clipped single-head compatibility. Already chosen candidates are
// masked to -inf.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdnrl/autodiff.hpp"
#include "pdnrl/environment.hpp"
#include "pdnrl/rng.hpp"

namespace pdnrl::policy {

using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

enum class DecodeMode : std::uint8_t { Greedy = 0, Sampling = 1 };

struct PolicyConfig {
  int layers = 3;
  int d_x = 4;
  int d_h = 128;
  int d_ff = 512;
  int heads = 8;
  int d_k = 16;
  int d_v = 16;
  int pointer_dk = 128;  // key size of the final single-head scorer
  double clip = 10.0;
  DecodeMode decode = DecodeMode::Greedy;

  int d_context() const { return 6 * d_h; }
  void validate() const;
  bool operator==(const PolicyConfig&) const = default;
};

PolicyConfig default_config();
PolicyConfig tiny_config();
// "default" or "tiny"; throws Config otherwise.
PolicyConfig config_by_name(const std::string& name);

struct EncoderLayer {
  Parameter wq, wk, wv, wo;
  Parameter ff1, ff1_b, ff2, ff2_b;
};

class Policy {
 public:
  Policy() = default;
  Policy(const PolicyConfig& cfg, std::uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  // Fixed order; names are unique and stable across save/load.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  void save(const std::filesystem::path& path) const;
  static Policy load(const std::filesystem::path& path);

  // Bitwise equality of config and every tensor.
  bool identical(const Policy& other) const;

 private:
  friend struct Bound;
  PolicyConfig cfg_;
  Parameter embed_w_, embed_b_;
  std::vector<EncoderLayer> layers_;
  Parameter placeholder_;
  Parameter glimpse_q_, glimpse_k_, glimpse_v_, glimpse_o_;
  Parameter pointer_q_, pointer_k_;
};

// Policy parameters placed on a tape, either tracked (for training) or as
// constants (inference).
struct Bound {
  Bound(Tape& tape, Policy& policy, bool track);

  Tape* tape;
  const PolicyConfig* cfg;
  Var embed_w, embed_b;
  struct Layer {
    Var wq, wk, wv, wo, ff1, ff1_b, ff2, ff2_b;
  };
  std::vector<Layer> layers;
  Var placeholder;
  Var glimpse_q, glimpse_k, glimpse_v, glimpse_o;
  Var pointer_q, pointer_k;
};

// (4 + n) x d_h node embeddings, probing ports first.
Var encode(const Bound& p, const Mat& features);
// 1 x 6 d_h: previous pick (or placeholder), the four probes, the mean.
Var context(const Bound& p, const Var& embeddings, std::optional<std::size_t> previous);

// Per-rollout projections of the candidate embeddings, reused every step.
struct DecoderCache {
  Var embeddings;  // all nodes
  Var glimpse_k, glimpse_v, pointer_k;  // candidate rows only
  std::size_t n = 0;
};
DecoderCache prepare_decoder(const Bound& p, const Var& embeddings);

struct StepOutput {
  Var logits;  // 1 x n, masked entries -inf
  Var probs;   // 1 x n
};
// `chosen[i]` marks candidate i as already assigned.
StepOutput decode_step(const Bound& p, const DecoderCache& cache, const Var& ctx, const std::vector<bool>& chosen);

struct Rollout {
  env::Assignment actions;
  Var log_prob;                 // 1x1 on the rollout's tape
  std::vector<Mat> step_probs;  // probability row per step
  std::vector<Mat> step_logits;
};

// m decoding steps. Greedy takes the argmax with ties to the lowest index;
// sampling draws from each step's distribution with `rng`.
Rollout rollout(const Bound& p, const Mat& features, std::size_t m, DecodeMode mode, Rng* rng);
// Log-probability of a given action sequence (teacher forcing).
Var sequence_log_prob(const Bound& p, const Mat& features, const env::Assignment& actions);

// Convenience: inference-only rollout on a private tape.
env::Assignment decode(Policy& policy, const env::State& state, std::size_t m, DecodeMode mode, Rng* rng,
                       double* log_prob = nullptr);

Mat features_of(const env::State& state);

}  // namespace pdnrl::policy

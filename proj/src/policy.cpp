#include "pdnrl/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "pdnrl/binary_io.hpp"
#include "pdnrl/error.hpp"

namespace pdnrl::policy {

namespace {

constexpr char kMagic[] = "PDNPOL1";
constexpr std::uint16_t kVersion = 1;

Parameter uniform_param(const std::string& name, int rows, int cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  return Parameter(name, std::move(m));
}

Var attend(const Var& q, const Var& k, const Var& v, int heads, int d_k, int d_v) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = ad::slice_cols(q, h * d_k, d_k);
    auto kh = ad::slice_cols(k, h * d_k, d_k);
    auto vh = ad::slice_cols(v, h * d_v, d_v);
    auto weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv));
    outs.push_back(ad::matmul(weights, vh));
  }
  return heads == 1 ? outs.front() : ad::concat_cols(outs);
}

}  // namespace

void PolicyConfig::validate() const {
  if (layers < 0 || d_x != static_cast<int>(env::kFeatures) || d_h < 1 || d_ff < 1 || heads < 1 || d_k < 1 ||
      d_v < 1 || pointer_dk < 1 || !(clip > 0.0))
    fail(ErrorKind::Config, "invalid policy configuration");
}

PolicyConfig default_config() { return PolicyConfig{}; }

PolicyConfig tiny_config() {
  PolicyConfig c;
  c.layers = 1;
  c.d_h = 16;
  c.d_ff = 64;
  c.heads = 2;
  c.d_k = 8;
  c.d_v = 8;
  c.pointer_dk = 16;
  return c;
}

PolicyConfig config_by_name(const std::string& name) {
  if (name == "default") return default_config();
  if (name == "tiny") return tiny_config();
  fail(ErrorKind::Config, "unknown policy preset '" + name + "'");
}

Policy::Policy(const PolicyConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int h = cfg.d_h, mk = cfg.heads * cfg.d_k, mv = cfg.heads * cfg.d_v;
  embed_w_ = uniform_param("embed.w", cfg.d_x, h, cfg.d_x, rng);
  embed_b_ = uniform_param("embed.b", 1, h, cfg.d_x, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    EncoderLayer layer;
    layer.wq = uniform_param(p + "wq", h, mk, h, rng);
    layer.wk = uniform_param(p + "wk", h, mk, h, rng);
    layer.wv = uniform_param(p + "wv", h, mv, h, rng);
    layer.wo = uniform_param(p + "wo", mv, h, mv, rng);
    layer.ff1 = uniform_param(p + "ff1", h, cfg.d_ff, h, rng);
    layer.ff1_b = uniform_param(p + "ff1_b", 1, cfg.d_ff, h, rng);
    layer.ff2 = uniform_param(p + "ff2", cfg.d_ff, h, cfg.d_ff, rng);
    layer.ff2_b = uniform_param(p + "ff2_b", 1, h, cfg.d_ff, rng);
    layers_.push_back(std::move(layer));
  }
  placeholder_ = uniform_param("placeholder", 1, h, h, rng);
  glimpse_q_ = uniform_param("glimpse.q", cfg.d_context(), mk, cfg.d_context(), rng);
  glimpse_k_ = uniform_param("glimpse.k", h, mk, h, rng);
  glimpse_v_ = uniform_param("glimpse.v", h, mv, h, rng);
  glimpse_o_ = uniform_param("glimpse.o", mv, h, mv, rng);
  pointer_q_ = uniform_param("pointer.q", h, cfg.pointer_dk, h, rng);
  pointer_k_ = uniform_param("pointer.k", h, cfg.pointer_dk, h, rng);
}

std::vector<Parameter*> Policy::parameters() {
  std::vector<Parameter*> out{&embed_w_, &embed_b_};
  for (auto& l : layers_)
    for (auto* p : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ff1, &l.ff1_b, &l.ff2, &l.ff2_b}) out.push_back(p);
  for (auto* p : {&placeholder_, &glimpse_q_, &glimpse_k_, &glimpse_v_, &glimpse_o_, &pointer_q_, &pointer_k_})
    out.push_back(p);
  return out;
}

std::vector<const Parameter*> Policy::parameters() const {
  auto mut = const_cast<Policy*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Policy::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void Policy::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

bool Policy::identical(const Policy& other) const {
  if (!(cfg_ == other.cfg_)) return false;
  auto a = parameters();
  auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->name != b[i]->name || a[i]->value.rows() != b[i]->value.rows() ||
        a[i]->value.cols() != b[i]->value.cols())
      return false;
    if (std::memcmp(a[i]->value.data(), b[i]->value.data(), sizeof(double) * static_cast<std::size_t>(a[i]->value.size())) != 0)
      return false;
  }
  return true;
}

void Policy::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  io::put_bytes(out, std::string(kMagic, 7));
  io::put<std::uint16_t>(out, kVersion);
  for (int v : {cfg_.layers, cfg_.d_x, cfg_.d_h, cfg_.d_ff, cfg_.heads, cfg_.d_k, cfg_.d_v, cfg_.pointer_dk})
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  io::put<double>(out, cfg_.clip);
  io::put<std::uint8_t>(out, static_cast<std::uint8_t>(cfg_.decode));
  const auto params = parameters();
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    io::put_bytes(out, p->name);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rows()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) io::put<double>(out, p->value.data()[i]);
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

Policy Policy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  if (io::get_bytes(in, 7) != std::string(kMagic, 7)) fail(ErrorKind::Format, "not a policy checkpoint (bad magic)");
  if (io::get<std::uint16_t>(in) != kVersion) fail(ErrorKind::Format, "unsupported checkpoint version");
  PolicyConfig cfg;
  for (int* v : {&cfg.layers, &cfg.d_x, &cfg.d_h, &cfg.d_ff, &cfg.heads, &cfg.d_k, &cfg.d_v, &cfg.pointer_dk})
    *v = static_cast<int>(io::get<std::uint32_t>(in));
  cfg.clip = io::get<double>(in);
  const auto mode = io::get<std::uint8_t>(in);
  if (mode > 1) fail(ErrorKind::Format, "bad decode mode in checkpoint");
  cfg.decode = static_cast<DecodeMode>(mode);
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("checkpoint config: ") + e.what());
  }

  Policy policy(cfg, 0);
  auto params = policy.parameters();
  if (io::get<std::uint32_t>(in) != params.size()) fail(ErrorKind::Format, "checkpoint tensor count does not match config");
  for (auto* p : params) {
    const auto len = io::get<std::uint32_t>(in);
    if (len > 4096) fail(ErrorKind::Format, "implausible tensor name length");
    if (io::get_bytes(in, len) != p->name) fail(ErrorKind::Format, "unexpected tensor, wanted " + p->name);
    const auto rows = io::get<std::uint32_t>(in);
    const auto cols = io::get<std::uint32_t>(in);
    if (rows != p->value.rows() || cols != p->value.cols())
      fail(ErrorKind::Format, "tensor " + p->name + " has the wrong shape for this config");
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = io::get<double>(in);
    p->zero_grad();
  }
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorKind::Format, "trailing bytes after checkpoint");
  return policy;
}

// ---------------------------------------------------------------------------

Bound::Bound(Tape& t, Policy& policy, bool track) : tape(&t), cfg(&policy.cfg_) {
  auto bind = [&](Parameter& p) { return track ? t.param(p) : t.constant(p.value); };
  embed_w = bind(policy.embed_w_);
  embed_b = bind(policy.embed_b_);
  for (auto& l : policy.layers_)
    layers.push_back({bind(l.wq), bind(l.wk), bind(l.wv), bind(l.wo), bind(l.ff1), bind(l.ff1_b), bind(l.ff2),
                      bind(l.ff2_b)});
  placeholder = bind(policy.placeholder_);
  glimpse_q = bind(policy.glimpse_q_);
  glimpse_k = bind(policy.glimpse_k_);
  glimpse_v = bind(policy.glimpse_v_);
  glimpse_o = bind(policy.glimpse_o_);
  pointer_q = bind(policy.pointer_q_);
  pointer_k = bind(policy.pointer_k_);
}

Mat features_of(const env::State& state) {
  state.validate();
  return state.feature_matrix();
}

Var encode(const Bound& p, const Mat& features) {
  const auto& c = *p.cfg;
  if (features.cols() != c.d_x || features.rows() < static_cast<Eigen::Index>(env::kProbes))
    fail(ErrorKind::Shape, "feature matrix must be (4 + n) x 4");
  auto h = ad::add(ad::matmul(p.tape->constant(features), p.embed_w), p.embed_b);
  for (const auto& l : p.layers) {
    auto q = ad::matmul(h, l.wq);
    auto k = ad::matmul(h, l.wk);
    auto v = ad::matmul(h, l.wv);
    h = ad::add(h, ad::matmul(attend(q, k, v, c.heads, c.d_k, c.d_v), l.wo));
    auto ff = ad::add(ad::matmul(ad::relu(ad::add(ad::matmul(h, l.ff1), l.ff1_b)), l.ff2), l.ff2_b);
    h = ad::add(h, ff);
  }
  return h;
}

Var context(const Bound& p, const Var& embeddings, std::optional<std::size_t> previous) {
  const auto probes = static_cast<Eigen::Index>(env::kProbes);
  Var prev = p.placeholder;
  if (previous) {
    const auto row = probes + static_cast<Eigen::Index>(*previous);
    if (row >= embeddings.rows()) fail(ErrorKind::NoSuchPort, "previous pick beyond the candidate list");
    prev = ad::slice_rows(embeddings, row, 1);
  }
  std::vector<Var> parts{prev};
  for (Eigen::Index i = 0; i < probes; ++i) parts.push_back(ad::slice_rows(embeddings, i, 1));
  parts.push_back(ad::mean_rows(embeddings));
  return ad::concat_cols(parts);
}

DecoderCache prepare_decoder(const Bound& p, const Var& embeddings) {
  const auto probes = static_cast<Eigen::Index>(env::kProbes);
  DecoderCache cache;
  cache.embeddings = embeddings;
  cache.n = static_cast<std::size_t>(embeddings.rows() - probes);
  auto cand = ad::slice_rows(embeddings, probes, embeddings.rows() - probes);
  cache.glimpse_k = ad::matmul(cand, p.glimpse_k);
  cache.glimpse_v = ad::matmul(cand, p.glimpse_v);
  cache.pointer_k = ad::matmul(cand, p.pointer_k);
  return cache;
}

StepOutput decode_step(const Bound& p, const DecoderCache& cache, const Var& ctx, const std::vector<bool>& chosen) {
  const auto& c = *p.cfg;
  if (chosen.size() != cache.n) fail(ErrorKind::Shape, "mask length differs from the candidate count");
  Mat mask = Mat::Zero(1, static_cast<Eigen::Index>(cache.n));
  std::size_t open = 0;
  for (std::size_t i = 0; i < cache.n; ++i) {
    if (chosen[i])
      mask(0, static_cast<Eigen::Index>(i)) = 1.0;
    else
      ++open;
  }
  if (open == 0) fail(ErrorKind::ExhaustedActions, "every candidate is already assigned");

  // The glimpse attends over all candidates; only the final scores are masked.
  auto q = ad::matmul(ctx, p.glimpse_q);
  auto glimpse = ad::matmul(attend(q, cache.glimpse_k, cache.glimpse_v, c.heads, c.d_k, c.d_v), p.glimpse_o);
  auto qp = ad::matmul(glimpse, p.pointer_q);
  const double inv = 1.0 / std::sqrt(static_cast<double>(c.pointer_dk));
  auto u = ad::scale(ad::tanh(ad::scale(ad::matmul_nt(qp, cache.pointer_k), inv)), c.clip);
  StepOutput out;
  out.logits = ad::masked_fill(u, mask, ad::kNegInf);
  out.probs = ad::softmax_rows(out.logits);
  return out;
}

namespace {

std::size_t pick(const Mat& probs, const std::vector<bool>& chosen, DecodeMode mode, Rng* rng) {
  const auto n = static_cast<std::size_t>(probs.cols());
  if (mode == DecodeMode::Greedy) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!chosen[i] && (best == n || probs(0, static_cast<Eigen::Index>(i)) > probs(0, static_cast<Eigen::Index>(best))))
        best = i;
    return best;
  }
  if (rng == nullptr) fail(ErrorKind::Contract, "sampling needs a random generator");
  const double u = uniform01(*rng);
  double acc = 0.0;
  std::size_t last = n;
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = probs(0, static_cast<Eigen::Index>(i));
    if (chosen[i] || pi <= 0.0) continue;
    acc += pi;
    last = i;
    if (u < acc) return i;
  }
  return last;  // rounding left u just above the cumulative sum
}

}  // namespace

Rollout rollout(const Bound& p, const Mat& features, std::size_t m, DecodeMode mode, Rng* rng) {
  const std::size_t n = static_cast<std::size_t>(features.rows()) - env::kProbes;
  if (m > n) fail(ErrorKind::Infeasible, "m = " + std::to_string(m) + " exceeds n = " + std::to_string(n));
  auto emb = encode(p, features);
  auto cache = prepare_decoder(p, emb);
  std::vector<bool> chosen(n, false);
  Rollout out;
  out.log_prob = p.tape->constant(Mat::Zero(1, 1));
  std::optional<std::size_t> prev;
  for (std::size_t t = 0; t < m; ++t) {
    auto step = decode_step(p, cache, context(p, emb, prev), chosen);
    const std::size_t a = pick(step.probs.value(), chosen, mode, rng);
    out.log_prob = ad::add(out.log_prob, ad::log(ad::element(step.probs, 0, static_cast<Eigen::Index>(a))));
    out.step_probs.push_back(step.probs.value());
    out.step_logits.push_back(step.logits.value());
    out.actions.push_back(a);
    chosen[a] = true;
    prev = a;
  }
  return out;
}

Var sequence_log_prob(const Bound& p, const Mat& features, const env::Assignment& actions) {
  const std::size_t n = static_cast<std::size_t>(features.rows()) - env::kProbes;
  if (actions.size() > n) fail(ErrorKind::Infeasible, "sequence longer than the candidate list");
  auto emb = encode(p, features);
  auto cache = prepare_decoder(p, emb);
  std::vector<bool> chosen(n, false);
  Var total = p.tape->constant(Mat::Zero(1, 1));
  std::optional<std::size_t> prev;
  for (auto a : actions) {
    if (a >= n) fail(ErrorKind::NoSuchPort, "action beyond the candidate list");
    if (chosen[a]) fail(ErrorKind::InvalidSelection, "repeated action");
    auto step = decode_step(p, cache, context(p, emb, prev), chosen);
    total = ad::add(total, ad::log(ad::element(step.probs, 0, static_cast<Eigen::Index>(a))));
    chosen[a] = true;
    prev = a;
  }
  return total;
}

env::Assignment decode(Policy& policy, const env::State& state, std::size_t m, DecodeMode mode, Rng* rng,
                       double* log_prob) {
  Tape tape;
  Bound b(tape, policy, false);
  auto r = rollout(b, features_of(state), m, mode, rng);
  if (log_prob) *log_prob = r.log_prob.scalar();
  return r.actions;
}

}  // namespace pdnrl::policy

#include "cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdnrl/bench.hpp"
#include "pdnrl/digest.hpp"
#include "pdnrl/error.hpp"
#include "pdnrl/parallel.hpp"
#include "pdnrl/trainer.hpp"

namespace pdnrl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Configuration

json policy_to_json(const policy::PolicyConfig& c) {
  return {{"layers", c.layers}, {"d_x", c.d_x},     {"d_h", c.d_h},     {"d_ff", c.d_ff},
          {"heads", c.heads},   {"d_k", c.d_k},     {"d_v", c.d_v},     {"pointer_dk", c.pointer_dk},
          {"clip", c.clip}};
}

json trainer_to_json(const trainer::TrainerConfig& c) {
  return {{"epochs", c.epochs},       {"epoch_size", c.epoch_size}, {"batch", c.batch},
          {"validation", c.validation}, {"lr", c.lr},               {"decay", c.decay},
          {"threshold", c.threshold},   {"n", c.n},                 {"m", c.m},
          {"monitor_every", c.monitor_every}, {"monitor_size", c.monitor_size}};
}

json ga_to_json(const baselines::GaConfig& c) {
  return {{"generations", c.generations}, {"selection", c.selection}, {"elite", c.elite},
          {"mutation", c.mutation},       {"decay", c.decay}};
}

template <class T>
void set_field(T& field, const json& v) {
  field = v.get<T>();
}

void apply_policy(policy::PolicyConfig& c, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "base") continue;
    if (k == "layers") set_field(c.layers, v);
    else if (k == "d_x") set_field(c.d_x, v);
    else if (k == "d_h") set_field(c.d_h, v);
    else if (k == "d_ff") set_field(c.d_ff, v);
    else if (k == "heads") set_field(c.heads, v);
    else if (k == "d_k") set_field(c.d_k, v);
    else if (k == "d_v") set_field(c.d_v, v);
    else if (k == "pointer_dk") set_field(c.pointer_dk, v);
    else if (k == "clip") set_field(c.clip, v);
    else fail(ErrorKind::Config, "unknown policy key '" + k + "'");
  }
}

void apply_trainer(trainer::TrainerConfig& c, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "base") continue;
    if (k == "epochs") set_field(c.epochs, v);
    else if (k == "epoch_size") set_field(c.epoch_size, v);
    else if (k == "batch") set_field(c.batch, v);
    else if (k == "validation") set_field(c.validation, v);
    else if (k == "lr") set_field(c.lr, v);
    else if (k == "decay") set_field(c.decay, v);
    else if (k == "threshold") set_field(c.threshold, v);
    else if (k == "n") set_field(c.n, v);
    else if (k == "m") set_field(c.m, v);
    else if (k == "monitor_every") set_field(c.monitor_every, v);
    else if (k == "monitor_size") set_field(c.monitor_size, v);
    else fail(ErrorKind::Config, "unknown trainer key '" + k + "'");
  }
}

void apply_ga(baselines::GaConfig& c, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "generations") set_field(c.generations, v);
    else if (k == "selection") set_field(c.selection, v);
    else if (k == "elite") set_field(c.elite, v);
    else if (k == "mutation") set_field(c.mutation, v);
    else if (k == "decay") set_field(c.decay, v);
    else fail(ErrorKind::Config, "unknown ga key '" + k + "'");
  }
}

// A section is either a preset name or an object with an optional "base"
// preset name plus field overrides.
std::string section_base(const json& j, const std::string& fallback) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_object()) return j.value("base", fallback);
  fail(ErrorKind::Config, "config section must be a preset name or an object");
}

struct RunConfig {
  std::string preset = "desk";
  policy::PolicyConfig policy = policy::tiny_config();
  trainer::TrainerConfig trainer = trainer::tiny_trainer_config();
  baselines::GaConfig ga = bench::BenchConfig{}.ga;

  json to_json() const {
    return {{"preset", preset}, {"policy", policy_to_json(policy)}, {"trainer", trainer_to_json(trainer)},
            {"ga", ga_to_json(ga)}};
  }
  std::string digest() const { return sha256_hex(to_json().dump()); }
};

RunConfig load_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Usage, "cannot read config " + path);
  try {
    const json j = json::parse(in);
    if (!j.is_object()) fail(ErrorKind::Config, "config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
      if (k == "preset") {
        rc.preset = v.get<std::string>();
      } else if (k == "policy") {
        rc.policy = policy::config_by_name(section_base(v, "tiny"));
        if (v.is_object()) apply_policy(rc.policy, v);
      } else if (k == "trainer") {
        rc.trainer = trainer::trainer_config_by_name(section_base(v, "tiny"));
        if (v.is_object()) apply_trainer(rc.trainer, v);
      } else if (k == "ga") {
        if (!v.is_object()) fail(ErrorKind::Config, "ga section must be an object");
        apply_ga(rc.ga, v);
      } else {
        fail(ErrorKind::Config, "unknown config key '" + k + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config ") + path + ": " + e.what());
  }
  rc.policy.validate();
  rc.trainer.validate();
  return rc;
}

// ---------------------------------------------------------------------------
// Artifacts

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;  // deterministic, relative to --out
  std::vector<std::string> nondeterministic;
};

class Output {
 public:
  Output(fs::path dir, Manifest manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void text(const std::string& name, const std::string& body, bool deterministic = true) {
    const auto p = path(name);
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
    if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
    out.close();
    deterministic ? track(name) : manifest_.nondeterministic.push_back(name);
  }

  void json_file(const std::string& name, const json& j, bool deterministic = true) {
    text(name, j.dump(2) + "\n", deterministic);
  }

  // Records a file written by library code.
  void track(const std::string& name) { manifest_.outputs[name] = sha256_file(path(name)); }

  void finish() {
    json j;
    j["command"] = manifest_.command;
    j["argv"] = manifest_.argv;
    j["cwd"] = fs::current_path().string();
    j["config_digest"] = manifest_.config_digest;
    j["seed"] = manifest_.seed;
    j["inputs"] = manifest_.inputs;
    j["outputs"] = manifest_.outputs;
    j["nondeterministic"] = manifest_.nondeterministic;
    std::ofstream out(path("manifest.json"), std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) fail(ErrorKind::Io, "cannot write manifest");
  }

 private:
  fs::path dir_;
  Manifest manifest_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string join(const env::Assignment& a) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? " " : "") + std::to_string(a[i]);
  return s;
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, std::string>) {
        out.push_back(item);
        used = item.size();
      } else {
        out.push_back(static_cast<T>(std::stoull(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      fail(ErrorKind::Usage, std::string("bad ") + what + " list '" + text + "'");
    }
  }
  if (out.empty()) fail(ErrorKind::Usage, std::string("empty ") + what + " list");
  return out;
}

// ---------------------------------------------------------------------------
// Inputs

struct Data {
  std::vector<env::Record> records;
  env::DatasetInfo info;
  pdn::PdnPreset preset;
  env::RewardConfig reward;
};

Data load_data(const std::string& path) {
  if (path.empty()) fail(ErrorKind::Usage, "--data is required");
  if (!fs::exists(path)) fail(ErrorKind::Usage, "no dataset at " + path);
  Data d;
  d.records = env::load_dataset(path, &d.info);
  d.preset = pdn::load_preset(pdn::preset_path(d.info.preset));
  const auto grid = d.preset.grid();
  if (!(d.records.front().z.grid() == grid)) fail(ErrorKind::Format, "dataset grid differs from preset " + d.info.preset);
  d.reward = env::default_reward(d.preset, grid);
  return d;
}

policy::Policy load_checkpoint(const std::string& path, const char* flag = "--checkpoint") {
  if (path.empty()) fail(ErrorKind::Usage, std::string(flag) + " is required");
  if (!fs::exists(path)) fail(ErrorKind::Usage, "no checkpoint at " + path);
  return policy::Policy::load(path);
}

struct Globals {
  std::string config;
  std::uint64_t seed = 1;
  std::size_t jobs = 0;
  std::string out = "out";
};

struct Context {
  Globals g;
  RunConfig cfg;
  std::vector<std::string> argv;
  std::ostream* out;
  std::ostream* err;

  Manifest manifest(const std::string& command) const {
    Manifest m;
    m.command = command;
    m.argv = argv;
    m.config_digest = cfg.digest();
    m.seed = g.seed;
    if (!g.config.empty()) m.inputs[g.config] = sha256_file(g.config);
    return m;
  }
};

void add_input(Manifest& m, const std::string& path) {
  if (path.empty()) return;
  if (!fs::is_regular_file(path)) fail(ErrorKind::Usage, "no file at " + path);
  m.inputs[path] = sha256_file(path);
}

bench::BenchConfig bench_config(const Context& c, const Data& d, std::uint64_t seed) {
  bench::BenchConfig b;
  b.reward = d.reward;
  b.ga = c.cfg.ga;
  b.seed = seed;
  return b;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_build_pdn(Context& c) {
  auto preset = pdn::load_preset(pdn::preset_path(c.cfg.preset));
  const auto grid = preset.grid();
  const auto z = pdn::build_full_pdn(preset, grid);
  Output o(c.g.out, c.manifest("build-pdn"));

  std::string bytes;
  for (const auto& m : z.data()) bytes.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(zkit::Complex));
  const auto probes = preset.geometry.probing_ports();
  o.json_file("pdn.json", {{"preset", c.cfg.preset},
                           {"ports", z.port_count()},
                           {"frequencies", grid.size()},
                           {"f_min", preset.f_min},
                           {"f_max", preset.f_max},
                           {"probing_ports", probes.size()},
                           {"decap_ports", preset.geometry.decap_ports().size()},
                           {"z_sha256", sha256_hex(bytes)}});

  std::string csv = "frequency";
  std::vector<std::size_t> idx;
  for (const auto& p : probes) {
    csv += "," + zkit::to_string(p);
    idx.push_back(z.index_of(p));
  }
  csv += "\n";
  for (std::size_t k = 0; k < grid.size(); ++k) {
    csv += fmt(grid[k]);
    for (auto i : idx) csv += "," + fmt(std::abs(z.at(k)(i, i)));
    csv += "\n";
  }
  o.text("probe_self_impedance.csv", csv);
  o.finish();
  *c.out << "built " << c.cfg.preset << ": " << z.port_count() << " ports, " << grid.size() << " frequencies\n";
}

struct GenDataArgs {
  std::size_t n = 0;
  std::size_t train = 1000, validation = 100, test = 100;
};

void cmd_gen_data(Context& c, const GenDataArgs& a) {
  auto preset = pdn::load_preset(pdn::preset_path(c.cfg.preset));
  const auto grid = preset.grid();
  const auto z = pdn::build_full_pdn(preset, grid);
  const std::size_t n = a.n ? a.n : c.cfg.trainer.n;
  Output o(c.g.out, c.manifest("gen-data"));
  const std::pair<const char*, std::size_t> splits[] = {{"train", a.train}, {"validation", a.validation}, {"test", a.test}};
  for (std::size_t s = 0; s < 3; ++s) {
    const auto [name, count] = splits[s];
    if (count == 0) continue;
    const std::uint64_t seed = derive_seed(c.g.seed, {s});
    auto records = env::generate_records(z, preset.geometry, n, count, seed);
    const std::string file = std::string(name) + ".pdnd";
    env::save_dataset(records, o.path(file), {c.cfg.preset, seed, preset.geometry.chip, preset.geometry.interposer});
    o.track(file);
    o.track(file + ".json");
    *c.out << name << ": " << count << " records, n = " << n << "\n";
  }
  o.finish();
}

struct TrainArgs {
  std::string data;
  std::optional<std::size_t> epochs;
};

void cmd_train(Context& c, const TrainArgs& a) {
  auto tc = c.cfg.trainer;
  tc.seed = c.g.seed;
  if (a.epochs) tc.epochs = *a.epochs;
  auto man = c.manifest("train");
  add_input(man, a.data);

  std::unique_ptr<trainer::RecordSource> source;
  env::RewardConfig reward;
  pdn::PdnPreset preset;
  zkit::ZMatrixSeries z;
  if (!a.data.empty()) {
    auto d = load_data(a.data);
    reward = d.reward;
    source = std::make_unique<trainer::PoolSource>(std::move(d.records));
  } else {
    preset = pdn::load_preset(pdn::preset_path(c.cfg.preset));
    z = pdn::build_full_pdn(preset, preset.grid());
    reward = env::default_reward(preset, preset.grid());
    source = std::make_unique<trainer::GeneratedSource>(z, preset.geometry, tc.n);
  }

  Output o(c.g.out, std::move(man));
  policy::Policy pol(c.cfg.policy, c.g.seed);
  trainer::TrainOptions opts;
  opts.checkpoint_dir = o.path("checkpoints");
  opts.on_step = [&](const trainer::LogRow& r) {
    if (!std::isnan(r.validation_reward))
      *c.out << "epoch " << r.epoch << " step " << r.step << " validation " << r.validation_reward << " baseline "
             << r.baseline_reward << (r.baseline_swapped ? " (baseline updated)" : "") << "\n";
  };
  auto res = trainer::train(tc, *source, pol, reward, opts);
  pol.save(o.path("policy.pol"));
  o.track("policy.pol");
  for (std::size_t e = 1; e <= tc.epochs; ++e) o.track("checkpoints/epoch_" + std::to_string(e) + ".pol");
  o.text("train_log.csv", trainer::format_log(res.log));
  o.finish();
  *c.out << "trained " << res.log.size() << " steps, " << res.baseline_swaps << " baseline updates\n";
}

struct OptimizeArgs {
  std::string data, checkpoint, method;
  std::size_t width = 1;
  std::optional<std::size_t> m;
};

void cmd_optimize(Context& c, const OptimizeArgs& a) {
  const auto method = bench::method_from_string(a.method);
  auto man = c.manifest("optimize");
  add_input(man, a.data);
  std::optional<policy::Policy> pol;
  if (method == bench::Method::Greedy || method == bench::Method::Sampling) {
    pol = load_checkpoint(a.checkpoint);
    add_input(man, a.checkpoint);
  }
  auto d = load_data(a.data);
  const std::size_t m = a.m.value_or(c.cfg.trainer.m);
  auto r = bench::run_method(method, a.width, d.records, m, pol ? &*pol : nullptr, bench_config(c, d, c.g.seed),
                             c.cfg.digest());
  Output o(c.g.out, std::move(man));
  o.json_file("report.json", bench::to_json(r));
  std::string csv = "index,reward,assignment\n";
  for (std::size_t i = 0; i < r.rewards.size(); ++i)
    csv += std::to_string(i) + "," + fmt(r.rewards[i]) + "," + join(r.assignments[i]) + "\n";
  o.text("assignments.csv", csv);
  o.json_file("timing.json", {{"seconds", r.seconds}}, false);
  o.finish();
  *c.out << r.method << " width " << r.width << ": mean reward " << fmt(r.mean) << " over " << r.rewards.size()
         << " records\n";
}

struct BenchmarkArgs {
  std::string data, checkpoint;
  std::string methods = "greedy,sampling,ga,rs";
  std::string widths = "1,10,100";
  std::string seeds;
  std::optional<std::size_t> m;
};

void cmd_benchmark(Context& c, const BenchmarkArgs& a) {
  std::vector<bench::Method> methods;
  for (const auto& s : parse_list<std::string>(a.methods, "method")) methods.push_back(bench::method_from_string(s));
  const auto widths = parse_list<std::size_t>(a.widths, "width");
  const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{c.g.seed} : parse_list<std::uint64_t>(a.seeds, "seed");
  auto man = c.manifest("benchmark");
  add_input(man, a.data);
  std::optional<policy::Policy> pol;
  const bool needs_policy = std::any_of(methods.begin(), methods.end(), [](auto m) {
    return m == bench::Method::Greedy || m == bench::Method::Sampling;
  });
  if (needs_policy) {
    pol = load_checkpoint(a.checkpoint);
    add_input(man, a.checkpoint);
  }
  auto d = load_data(a.data);
  const std::size_t m = a.m.value_or(c.cfg.trainer.m);

  json reports = json::array();
  std::string table = "method,width,seed,mean,evaluations\n";
  std::string timing = "method,width,seed,seconds\n";
  for (auto seed : seeds) {
    for (auto method : methods) {
      for (auto w : widths) {
        if (method == bench::Method::Greedy && w != widths.front()) continue;
        auto r = bench::run_method(method, w, d.records, m, pol ? &*pol : nullptr, bench_config(c, d, seed),
                                   c.cfg.digest());
        reports.push_back(bench::to_json(r));
        table += r.method + "," + std::to_string(r.width) + "," + std::to_string(seed) + "," + fmt(r.mean) + "," +
                 std::to_string(r.evaluations) + "\n";
        timing += r.method + "," + std::to_string(r.width) + "," + std::to_string(seed) + "," + fmt(r.seconds) + "\n";
        *c.out << r.method << " width " << r.width << " seed " << seed << ": " << fmt(r.mean) << "\n";
      }
    }
  }
  Output o(c.g.out, std::move(man));
  o.json_file("benchmark.json", {{"config_digest", c.cfg.digest()}, {"reports", reports}});
  o.text("benchmark.csv", table);
  o.text("timing.csv", timing, false);
  o.finish();
}

struct ScalabilityArgs {
  std::string data, checkpoint, native;
  std::string widths = "1,10";
  std::optional<std::size_t> m;
};

void cmd_scalability(Context& c, const ScalabilityArgs& a) {
  auto man = c.manifest("scalability");
  add_input(man, a.data);
  add_input(man, a.checkpoint);
  auto transfer = load_checkpoint(a.checkpoint);
  std::optional<policy::Policy> native;
  if (!a.native.empty()) {
    native = load_checkpoint(a.native, "--native");
    add_input(man, a.native);
  }
  auto d = load_data(a.data);
  const std::size_t m = a.m.value_or(c.cfg.trainer.m);
  const auto bc = bench_config(c, d, c.g.seed);

  json rows = json::array();
  std::string table = "width,transfer_mean,native_mean,gap\n";
  for (auto w : parse_list<std::size_t>(a.widths, "width")) {
    const auto method = w == 1 ? bench::Method::Greedy : bench::Method::Sampling;
    auto t = bench::run_method(method, w, d.records, m, &transfer, bc, c.cfg.digest());
    json row{{"width", w}, {"transfer", bench::to_json(t)}};
    table += std::to_string(w) + "," + fmt(t.mean);
    if (native) {
      auto nr = bench::run_method(method, w, d.records, m, &*native, bc, c.cfg.digest());
      const double gap = (nr.mean - t.mean) / std::abs(nr.mean);
      row["native"] = bench::to_json(nr);
      row["gap"] = gap;
      table += "," + fmt(nr.mean) + "," + fmt(gap);
      *c.out << "width " << w << ": transfer " << fmt(t.mean) << " native " << fmt(nr.mean) << " gap " << gap << "\n";
    } else {
      table += ",,";
      *c.out << "width " << w << ": transfer " << fmt(t.mean) << "\n";
    }
    table += "\n";
    rows.push_back(row);
  }
  Output o(c.g.out, std::move(man));
  o.json_file("scalability.json", {{"n", d.records.front().state.n()}, {"m", m}, {"rows", rows}});
  o.text("scalability.csv", table);
  o.finish();
}

struct TargetArgs {
  std::string data, checkpoint, kind = "rl";
  std::size_t index = 0;
  double r_t = 0.0, l_t = 0.0;
  std::optional<std::size_t> m_max;
};

void cmd_target_search(Context& c, const TargetArgs& a) {
  auto man = c.manifest("target-search");
  add_input(man, a.data);
  add_input(man, a.checkpoint);
  auto pol = load_checkpoint(a.checkpoint);
  auto d = load_data(a.data);
  if (a.index >= d.records.size()) fail(ErrorKind::Usage, "--index beyond the dataset");
  bench::TargetSpec t;
  if (a.kind == "constant") t.kind = bench::TargetSpec::Kind::Constant;
  else if (a.kind == "rl") t.kind = bench::TargetSpec::Kind::RL;
  else fail(ErrorKind::Usage, "--target must be 'constant' or 'rl'");
  t.r_t = a.r_t;
  t.l_t = a.l_t;
  try {
    t.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Usage, e.what());
  }
  const auto& rec = d.records[a.index];
  auto res = bench::target_search(rec, t, pol, a.m_max.value_or(rec.state.n()), d.reward.decap);
  auto j = bench::to_json(res, t);
  j["index"] = a.index;
  Output o(c.g.out, std::move(man));
  o.json_file("target.json", j);
  o.finish();
  if (res.achievable)
    *c.out << "target met with m = " << res.m << " (worst |Z|/target " << res.ratio << ")\n";
  else
    *c.out << "target not achievable up to m = " << a.m_max.value_or(rec.state.n()) << "\n";
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string verify;
};

int verify_manifest(const std::string& path, std::ostream& out, std::ostream& err);

int cmd_report(Context& c, const ReportArgs& a) {
  if (!a.verify.empty()) return verify_manifest(a.verify, *c.out, *c.err);
  if (a.inputs.empty()) fail(ErrorKind::Usage, "report needs --inputs or --verify");
  auto man = c.manifest("report");
  std::string table = "source,method,width,m,seed,mean,evaluations\n";
  for (const auto& p : a.inputs) {
    add_input(man, p);
    std::ifstream in(p);
    if (!in) fail(ErrorKind::Usage, "cannot read " + p);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, p + ": " + e.what());
    }
    std::vector<json> reports;
    if (j.contains("reports")) reports = j["reports"].get<std::vector<json>>();
    else reports.push_back(j);
    for (const auto& rj : reports) {
      const auto r = bench::report_from_json(rj);
      table += fs::path(p).filename().string() + "," + r.method + "," + std::to_string(r.width) + "," +
               std::to_string(r.m) + "," + std::to_string(r.seed) + "," + fmt(r.mean) + "," +
               std::to_string(r.evaluations) + "\n";
    }
  }
  Output o(c.g.out, std::move(man));
  o.text("table.csv", table);
  o.finish();
  *c.out << table;
  return kOk;
}

// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Re-runs the recorded command sequentially into a scratch directory and
// compares every deterministic output by SHA-256.
int verify_manifest(const std::string& path, std::ostream& out, std::ostream& err) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Usage, "cannot read manifest " + path);
  json man;
  try {
    man = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "manifest: " + std::string(e.what()));
  }
  const fs::path cwd = man.at("cwd").get<std::string>();
  const auto argv = man.at("argv").get<std::vector<std::string>>();
  const auto expected = man.at("outputs").get<std::map<std::string, std::string>>();
  const fs::path scratch = fs::temp_directory_path() / ("pdnrl_verify_" + std::to_string(::getpid()));
  fs::remove_all(scratch);

  std::vector<std::string> rerun;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    const auto& t = argv[i];
    if (t == "--out" || t == "--jobs") {
      ++i;
      continue;
    }
    if (t.rfind("--out=", 0) == 0 || t.rfind("--jobs=", 0) == 0) continue;
    rerun.push_back(t);
  }
  rerun.insert(rerun.end(), {"--out", scratch.string(), "--jobs", "1"});

  const auto here = fs::current_path();
  fs::current_path(cwd);
  for (const auto& [input, sha] : man.at("inputs").get<std::map<std::string, std::string>>()) {
    if (!fs::exists(input) || sha256_file(input) != sha) {
      fs::current_path(here);
      fail(ErrorKind::Io, "input changed since the manifest was written: " + input);
    }
  }
  std::ostringstream quiet;
  int code = kRuntimeError;
  try {
    code = dispatch(rerun, quiet, err);
  } catch (...) {
    fs::current_path(here);
    throw;
  }
  fs::current_path(here);
  if (code != kOk) {
    err << "re-run exited with " << code << "\n";
    fs::remove_all(scratch);
    return kRuntimeError;
  }

  std::ifstream rerun_in(scratch / "manifest.json");
  const auto rerun_man = json::parse(rerun_in);
  bool ok = rerun_man.at("config_digest") == man.at("config_digest");
  if (!ok) out << "config digest differs\n";
  for (const auto& [name, sha] : expected) {
    const auto p = scratch / name;
    const bool same = fs::exists(p) && sha256_file(p) == sha;
    out << (same ? "match    " : "MISMATCH ") << name << "\n";
    ok = ok && same;
  }
  fs::remove_all(scratch);
  out << (ok ? "reproduced " : "NOT reproduced ") << expected.size() << " outputs\n";
  return ok ? kOk : kRuntimeError;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decoupling-capacitor placement on interposer power networks"};
  app.name("pdnrl");
  app.require_subcommand(1);
  app.fallthrough();

  Context ctx;
  ctx.argv = args;
  ctx.out = &out;
  ctx.err = &err;
  app.add_option("--config", ctx.g.config, "JSON run configuration");
  app.add_option("--seed", ctx.g.seed, "Seed for every random draw");
  app.add_option("--jobs", ctx.g.jobs, "Worker threads (0 keeps the default)");
  app.add_option("--out", ctx.g.out, "Output directory");
  std::string preset_flag;

  auto* build = app.add_subcommand("build-pdn", "Build the full impedance model of a preset");
  build->add_option("--preset", preset_flag, "Preset name or path");

  GenDataArgs gen;
  auto* gd = app.add_subcommand("gen-data", "Generate train/validation/test record files");
  gd->add_option("--preset", preset_flag, "Preset name or path");
  gd->add_option("--n", gen.n, "Candidates per record (default: trainer n)");
  gd->add_option("--train", gen.train, "Training records")->capture_default_str();
  gd->add_option("--validation", gen.validation, "Validation records")->capture_default_str();
  gd->add_option("--test", gen.test, "Test records")->capture_default_str();

  TrainArgs tr;
  auto* trc = app.add_subcommand("train", "Train a policy with REINFORCE");
  trc->add_option("--preset", preset_flag, "Preset name or path (when no --data)");
  trc->add_option("--data", tr.data, "Training record file; fresh draws from the preset otherwise");
  trc->add_option("--epochs", tr.epochs, "Override the configured epoch count");

  OptimizeArgs op;
  auto* opc = app.add_subcommand("optimize", "Optimize every record of a dataset with one method");
  opc->add_option("--data", op.data, "Record file")->required();
  opc->add_option("--method", op.method, "greedy, sampling, ga or rs")->required();
  opc->add_option("--width", op.width, "Sampling width / evaluation budget")->capture_default_str();
  opc->add_option("--checkpoint", op.checkpoint, "Policy checkpoint");
  opc->add_option("--m", op.m, "Decaps per record (default: trainer m)");

  BenchmarkArgs bm;
  auto* bmc = app.add_subcommand("benchmark", "Compare methods across widths");
  bmc->add_option("--data", bm.data, "Record file")->required();
  bmc->add_option("--checkpoint", bm.checkpoint, "Policy checkpoint");
  bmc->add_option("--methods", bm.methods, "Comma-separated methods")->capture_default_str();
  bmc->add_option("--widths", bm.widths, "Comma-separated widths")->capture_default_str();
  bmc->add_option("--seeds", bm.seeds, "Comma-separated seeds (default: --seed)");
  bmc->add_option("--m", bm.m, "Decaps per record (default: trainer m)");

  ScalabilityArgs sc;
  auto* scc = app.add_subcommand("scalability", "Apply a checkpoint to a different problem size");
  scc->add_option("--data", sc.data, "Record file at the new size")->required();
  scc->add_option("--checkpoint", sc.checkpoint, "Checkpoint to transfer");
  scc->add_option("--native", sc.native, "Checkpoint trained at the new size");
  scc->add_option("--widths", sc.widths, "Comma-separated widths")->capture_default_str();
  scc->add_option("--m", sc.m, "Decaps per record (default: trainer m)");

  TargetArgs tg;
  auto* tgc = app.add_subcommand("target-search", "Smallest decap count meeting a target impedance");
  tgc->add_option("--data", tg.data, "Record file")->required();
  tgc->add_option("--index", tg.index, "Record index")->capture_default_str();
  tgc->add_option("--checkpoint", tg.checkpoint, "Policy checkpoint");
  tgc->add_option("--target", tg.kind, "constant or rl")->capture_default_str();
  tgc->add_option("--r-t", tg.r_t, "Target resistance in ohms")->required();
  tgc->add_option("--l-t", tg.l_t, "Target inductance in henries (rl)");
  tgc->add_option("--m-max", tg.m_max, "Largest decap count to try (default: n)");

  ReportArgs rp;
  auto* rpc = app.add_subcommand("report", "Tabulate report files or verify a manifest");
  rpc->add_option("--inputs", rp.inputs, "report.json or benchmark.json files");
  rpc->add_option("--verify", rp.verify, "Re-run a manifest and compare outputs");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  if (ctx.g.jobs > 0) set_default_jobs(ctx.g.jobs);
  ctx.cfg = load_config(ctx.g.config);
  if (!preset_flag.empty()) ctx.cfg.preset = preset_flag;

  if (build->parsed()) cmd_build_pdn(ctx);
  else if (gd->parsed()) cmd_gen_data(ctx, gen);
  else if (trc->parsed()) cmd_train(ctx, tr);
  else if (opc->parsed()) cmd_optimize(ctx, op);
  else if (bmc->parsed()) cmd_benchmark(ctx, bm);
  else if (scc->parsed()) cmd_scalability(ctx, sc);
  else if (tgc->parsed()) cmd_target_search(ctx, tg);
  else if (rpc->parsed()) return cmd_report(ctx, rp);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto jobs = default_jobs();
  int code = kRuntimeError;
  try {
    code = dispatch(args, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    code = (e.kind() == ErrorKind::Usage || e.kind() == ErrorKind::Config) ? kUsageError : kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    code = kRuntimeError;
  }
  set_default_jobs(jobs);
  return code;
}

}  // namespace pdnrl::cli

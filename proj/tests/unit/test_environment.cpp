#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pdnrl/environment.hpp"
#include "pdnrl/error.hpp"
#include "pdnrl/rng.hpp"

using namespace pdnrl;
using namespace pdnrl::env;

namespace {

struct Desk {
  pdn::PdnPreset preset = pdn::load_preset(std::string(PDNRL_PRESET_DIR) + "/desk.json");
  zkit::FrequencyGrid grid = preset.grid();
  zkit::ZMatrixSeries z = pdn::build_full_pdn(preset, grid);
  RewardConfig cfg = default_reward(preset, grid);
};

const Desk& desk() {
  static const Desk d;
  return d;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "pdnrl_env_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("random states") {
  const auto full = pdn::load_preset(pdn::preset_path("full")).geometry;
  auto s = random_state(full, 100, 42);
  CHECK(s.probes.size() == 4);
  CHECK(s.n() == 100);
  for (const auto& f : s.probe_features) CHECK(f[3] == 1.0);
  for (const auto& f : s.candidate_features) {
    CHECK(f[3] == 0.0);
    for (int c = 0; c < 2; ++c) CHECK((f[c] >= 0.0 && f[c] <= 1.0));
    CHECK((f[2] == 0.0 || f[2] == 1.0));
  }
  auto again = random_state(full, 100, 42);
  CHECK(again.probes == s.probes);
  CHECK(again.candidates == s.candidates);
  CHECK(random_state(full, 100, 43).candidates != s.candidates);

  const auto& g = desk().preset.geometry;
  auto all = random_state(g, 88, 9);
  CHECK(all.candidates == g.decap_ports());
  try {
    random_state(g, 89, 1);
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capacity);
  }
}

TEST_CASE("feature coordinates round-trip") {
  const auto& g = desk().preset.geometry;
  for (const auto& p : g.external_ports()) {
    auto f = feature_of(p, g.chip, g.interposer);
    CHECK(port_of(f, g.chip, g.interposer) == p);
  }
  auto corner = feature_of(g.cell_port(zkit::Layer::Interposer, {7, 5}), g.chip, g.interposer);
  CHECK(corner == Feature{1.0, 1.0, 1.0, 0.0});
}

TEST_CASE("records") {
  const auto& d = desk();
  auto s = random_state(d.preset.geometry, 8, 3);
  auto r = make_record(d.z, s);
  CHECK(r.z.port_count() == 12);
  CHECK(r.z.ports() == s.ports());
  CHECK(zkit::reciprocity_error(r.z) <= 1e-10);

  auto everything = make_record(d.z, random_state(d.preset.geometry, 88, 4));
  CHECK(everything.z.port_count() == 92);
  for (std::size_t k = 0; k < d.grid.size(); k += 17) {
    const auto i = d.z.index_of(everything.state.probes[1]);
    const auto j = d.z.index_of(everything.state.candidates[5]);
    CHECK(everything.z.at(k)(1, 9) == d.z.at(k)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  }
}

TEST_CASE("reward properties") {
  const auto& d = desk();
  auto r = make_record(d.z, random_state(d.preset.geometry, 16, 5));
  CHECK(reward(r, {}, d.cfg) == 0.0);

  // Order invariance over all permutations of a 4-subset.
  Assignment a{11, 2, 7, 0};
  const double ref = reward(r, a, d.cfg);
  std::sort(a.begin(), a.end());
  do {
    CHECK(reward(r, a, d.cfg) == ref);
  } while (std::next_permutation(a.begin(), a.end()));

  // With alpha = 1 the transfer terms are ignored: perturbing a probe-probe
  // transfer entry moves the 0.7 reward but not the alpha = 1 reward.
  std::vector<zkit::CMatrix> data = r.z.data();
  for (auto& m : data) {
    m(0, 1) *= 1.5;
    m(1, 0) *= 1.5;
  }
  auto bent = make_record(zkit::ZMatrixSeries(r.z.grid(), r.z.ports(), data), r.state);
  RewardConfig self_only = d.cfg;
  self_only.alpha = 1.0;
  Assignment b{3, 9};
  CHECK(reward(bent, b, self_only) == reward(r, b, self_only));
  CHECK(reward(bent, b, d.cfg) != reward(r, b, d.cfg));

  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    const auto m = 1 + uniform_below(rng, 16);
    auto pick = sample_without_replacement(rng, 16, m);
    CHECK(reward(r, pick, d.cfg) > 0.0);
  }

  Assignment dup{1, 1};
  CHECK_THROWS_AS(reward(r, dup, d.cfg), Error);
  Assignment out{16};
  CHECK_THROWS_AS(reward(r, out, d.cfg), Error);
}

TEST_CASE("dataset files") {
  const auto& d = desk();
  auto records = generate_records(d.z, d.preset.geometry, 6, 5, 123);
  auto path = temp_file("set.bin");
  DatasetInfo info{"desk", 123, d.preset.geometry.chip, d.preset.geometry.interposer};
  save_dataset(records, path, info);
  DatasetInfo back_info;
  auto back = load_dataset(path, &back_info);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(same_record(back[i], records[i]));
  CHECK(back_info.preset == "desk");
  CHECK(back_info.seed == 123);

  // Byte-identical on re-save.
  auto path2 = temp_file("set2.bin");
  save_dataset(back, path2, info);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

  // Generation is a pure function of the seed.
  auto again = generate_records(d.z, d.preset.geometry, 6, 5, 123);
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(same_record(again[i], records[i]));

  auto expect_format = [&](const std::filesystem::path& p) {
    try {
      load_dataset(p);
      FAIL("expected a format error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Format);
    }
  };

  {
    std::fstream f(path2, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  expect_format(path2);

  // Truncation is a format error.
  auto path3 = temp_file("set3.bin");
  save_dataset(records, path3, info);
  std::filesystem::resize_file(path3, std::filesystem::file_size(path3) - 8);
  expect_format(path3);
}

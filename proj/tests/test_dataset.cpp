#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "orlab/dataset.hpp"

using namespace orlab;
namespace fs = std::filesystem;

namespace {

Dataset collect_level(EnvKind kind, PolicyLevel level, std::int64_t n,
                      std::uint64_t seed) {
  Env env(kind, seed);
  return collect(env, scripted_policy(level, kind), n, seed + 1);
}

Dataset synthetic_dataset(int n, std::uint64_t seed,
                          PolicyLevel level = PolicyLevel::expert) {
  Rng rng(seed);
  Dataset ds;
  ds.meta.env = EnvKind::pointmass2d;
  ds.meta.seed = seed;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.s = Vector::Random(4);
    t.a = Vector::Random(2).cwiseMax(-1.0).cwiseMin(1.0);
    t.r = rng.uniform(-1.0, 1.0);
    t.s_next = Vector::Random(4);
    t.done = false;
    t.provenance = level;
    ds.rows.push_back(std::move(t));
  }
  ds.refresh_meta();
  return ds;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct TmpDir {
  fs::path dir;
  TmpDir() : dir(fs::temp_directory_path() /
                 ("orlab_ds_test_" + std::to_string(::getpid()))) {
    fs::create_directories(dir);
  }
  ~TmpDir() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("collect produces whole episodes with a truncated tail") {
  const Dataset ds = collect_level(EnvKind::pointmass2d, PolicyLevel::expert, 250, 5);
  REQUIRE(ds.size() == 250);
  for (int i = 0; i < 250; ++i) {
    CHECK(ds.rows[i].done == (i == 99 || i == 199));
    CHECK(ds.rows[i].provenance == PolicyLevel::expert);
  }
  CHECK(ds.meta.counts[0] == 250);
  CHECK_THROWS_AS(collect_level(EnvKind::pointmass2d, PolicyLevel::expert, 0, 5),
                  ContractError);
}

TEST_CASE("expert datasets earn more reward than random ones") {
  const Dataset expert = collect_level(EnvKind::pointmass2d, PolicyLevel::expert, 2000, 9);
  const Dataset random = collect_level(EnvKind::pointmass2d, PolicyLevel::random, 2000, 9);
  CHECK(expert.meta.average_reward > random.meta.average_reward);
}

TEST_CASE("collect is deterministic down to the serialized bytes") {
  TmpDir tmp;
  const Dataset a = collect_level(EnvKind::pendulum, PolicyLevel::medium, 300, 77);
  const Dataset b = collect_level(EnvKind::pendulum, PolicyLevel::medium, 300, 77);
  save(a, tmp / "a.jsonl");
  save(b, tmp / "b.jsonl");
  CHECK(slurp(tmp / "a.jsonl") == slurp(tmp / "b.jsonl"));
}

TEST_CASE("contaminate replaces the tail with the head of the non-expert set") {
  const Dataset expert = synthetic_dataset(1000, 1, PolicyLevel::expert);
  const Dataset random = synthetic_dataset(400, 2, PolicyLevel::random);
  const Dataset mixed = contaminate(expert, random, 0.3);
  REQUIRE(mixed.size() == 1000);
  CHECK(mixed.meta.counts[0] == 700);
  CHECK(mixed.meta.counts[2] == 300);
  for (int i = 0; i < 700; ++i) CHECK(mixed.rows[i].provenance == PolicyLevel::expert);
  for (int i = 700; i < 1000; ++i) {
    CHECK(mixed.rows[i].provenance == PolicyLevel::random);
    CHECK(mixed.rows[i].r == random.rows[i - 700].r);
  }
}

TEST_CASE("contaminate with ratio zero is the identity") {
  const Dataset expert = synthetic_dataset(100, 3);
  const Dataset random = synthetic_dataset(10, 4, PolicyLevel::random);
  const Dataset out = contaminate(expert, random, 0.0);
  REQUIRE(out.size() == 100);
  for (int i = 0; i < 100; ++i) CHECK(out.rows[i].r == expert.rows[i].r);
}

TEST_CASE("contaminated average reward matches the split recomputation") {
  const Dataset expert = synthetic_dataset(1000, 5);
  const Dataset random = synthetic_dataset(300, 6, PolicyLevel::random);
  const Dataset mixed = contaminate(expert, random, 0.3);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 700; ++i) head += expert.rows[i].r;
  for (int i = 0; i < 300; ++i) tail += random.rows[i].r;
  const double expect = 0.7 * (head / 700.0) + 0.3 * (tail / 300.0);
  CHECK(mixed.meta.average_reward == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("contamination counts are exactly (ceil((1-r)N), floor(rN))") {
  const Dataset expert = synthetic_dataset(997, 7);
  const Dataset random = synthetic_dataset(997, 8, PolicyLevel::random);
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const double ratio = rng.uniform();
    const Dataset mixed = contaminate(expert, random, ratio);
    const auto k = static_cast<std::int64_t>(std::floor(ratio * 997.0 + 1e-9));
    CHECK(mixed.meta.counts[2] == k);
    CHECK(mixed.meta.counts[0] == 997 - k);
    CHECK(mixed.meta.counts[0] ==
          static_cast<std::int64_t>(std::ceil((1.0 - ratio) * 997.0 - 1e-9)));
  }
}

TEST_CASE("contaminate validates inputs") {
  const Dataset expert = synthetic_dataset(100, 10);
  Dataset random = synthetic_dataset(10, 11, PolicyLevel::random);
  CHECK_THROWS_AS(contaminate(expert, random, 0.5), ContractError);
  CHECK_THROWS_AS(contaminate(expert, random, 1.5), ContractError);
  random.meta.env = EnvKind::pendulum;
  CHECK_THROWS_AS(contaminate(expert, random, 0.05), ContractError);
}

TEST_CASE("dataset_stats mirrors the metadata columns") {
  const Dataset expert = synthetic_dataset(40, 12);
  const Stats s1 = dataset_stats(expert);
  CHECK(s1.total == 40);
  CHECK(s1.expert_count == 40);
  CHECK(s1.medium_count == 0);
  CHECK(s1.random_count == 0);

  const Dataset big_e = synthetic_dataset(40000, 13);
  const Dataset big_r = synthetic_dataset(20000, 14, PolicyLevel::random);
  const Stats s2 = dataset_stats(contaminate(big_e, big_r, 0.5));
  CHECK(s2.expert_count == 20000);
  CHECK(s2.random_count == 20000);

  double sum = 0.0;
  for (const auto& t : expert.rows) sum += t.r;
  CHECK(s1.average_reward == doctest::Approx(sum / 40.0).epsilon(1e-12));
}

TEST_CASE("normalizer floors the deviation and centers constant data") {
  Dataset ds = synthetic_dataset(50, 15);
  for (auto& t : ds.rows) t.s = Vector::Constant(4, 3.25);
  const Normalizer nm = fit_normalizer(ds);
  CHECK(nm.stddev.minCoeff() == 1e-3);
  CHECK(nm.apply(ds.rows[0].s).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("normalizer standardizes to zero mean and unit deviation") {
  const Dataset ds = synthetic_dataset(5000, 16);
  const Normalizer nm = fit_normalizer(ds);
  Vector mean = Vector::Zero(4);
  for (const auto& t : ds.rows) mean += nm.apply(t.s);
  mean /= ds.size();
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-6);
  Vector var = Vector::Zero(4);
  for (const auto& t : ds.rows) {
    const Vector z = nm.apply(t.s) - mean;
    var += z.cwiseProduct(z);
  }
  var /= ds.size();
  CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("percentile filter keeps the top rewards with index tie-breaks") {
  Dataset ds = synthetic_dataset(4, 17);
  for (int i = 0; i < 4; ++i) ds.rows[i].r = i + 1.0;
  const Dataset top = percentile_filter(ds, 50.0);
  REQUIRE(top.size() == 2);
  CHECK(top.rows[0].r == 3.0);
  CHECK(top.rows[1].r == 4.0);

  const Dataset all = percentile_filter(ds, 100.0);
  REQUIRE(all.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(all.rows[i].r == ds.rows[i].r);

  CHECK_THROWS_AS(percentile_filter(ds, 0.0), ContractError);
  CHECK_THROWS_AS(percentile_filter(ds, 101.0), ContractError);
}

TEST_CASE("percentile filter matches a full-sort oracle on ties") {
  Rng rng(18);
  Dataset ds = synthetic_dataset(10000, 19);
  // few distinct values force heavy ties
  for (auto& t : ds.rows) t.r = static_cast<double>(rng.uniform_int(7));
  for (double percent : {10.0, 33.3, 50.0, 90.0}) {
    const Dataset kept = percentile_filter(ds, percent);

    // oracle: stable sort of indices by reward descending, keep the head
    std::vector<std::int64_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
      return ds.rows[a].r > ds.rows[b].r;
    });
    const auto keep = static_cast<std::int64_t>(
        std::ceil(percent / 100.0 * ds.size() - 1e-9));
    std::vector<std::int64_t> expect(idx.begin(), idx.begin() + keep);
    std::sort(expect.begin(), expect.end());

    REQUIRE(kept.size() == keep);
    double min_kept = 1e18;
    for (const auto& t : kept.rows) min_kept = std::min(min_kept, t.r);
    std::int64_t j = 0;
    for (std::int64_t i : expect) {
      CHECK(kept.rows[j].r == ds.rows[i].r);
      CHECK(kept.rows[j].s == ds.rows[i].s);
      ++j;
    }
    // kept minimum dominates every dropped reward modulo the tie rule
    for (std::int64_t i = 0; i < ds.size(); ++i) {
      if (!std::binary_search(expect.begin(), expect.end(), i)) {
        CHECK(ds.rows[i].r <= min_kept);
      }
    }
  }
}

TEST_CASE("save/load round trip is exact") {
  TmpDir tmp;
  Dataset ds = collect_level(EnvKind::pointmass2d, PolicyLevel::medium, 500, 20);
  ds.meta.ref_returns = RefReturns{-101.25, -8.625};
  ds.meta.normalizer = fit_normalizer(ds);
  ds.meta.name = "round_trip";
  save(ds, tmp / "ds.jsonl");
  const Dataset back = load(tmp / "ds.jsonl");
  REQUIRE(back.size() == ds.size());
  for (int i = 0; i < ds.size(); ++i) {
    CHECK(back.rows[i].s == ds.rows[i].s);
    CHECK(back.rows[i].a == ds.rows[i].a);
    CHECK(back.rows[i].r == ds.rows[i].r);
    CHECK(back.rows[i].s_next == ds.rows[i].s_next);
    CHECK(back.rows[i].done == ds.rows[i].done);
    CHECK(back.rows[i].provenance == ds.rows[i].provenance);
  }
  CHECK(back.meta.env == ds.meta.env);
  CHECK(back.meta.name == "round_trip");
  CHECK(back.meta.average_reward == ds.meta.average_reward);
  REQUIRE(back.meta.ref_returns.has_value());
  CHECK(back.meta.ref_returns->expert_avg == -8.625);
  REQUIRE(back.meta.normalizer.has_value());
  CHECK(back.meta.normalizer->mean == ds.meta.normalizer->mean);

  // saving the loaded copy reproduces the bytes
  save(back, tmp / "ds2.jsonl");
  CHECK(slurp(tmp / "ds.jsonl") == slurp(tmp / "ds2.jsonl"));
}

TEST_CASE("truncated files fail the count integrity check") {
  TmpDir tmp;
  const Dataset ds = synthetic_dataset(50, 21);
  save(ds, tmp / "t.jsonl");
  // drop the last line
  std::string text = slurp(tmp / "t.jsonl");
  text.erase(text.find_last_of('\n', text.size() - 2) + 1);
  std::ofstream(tmp / "t.jsonl") << text;
  try {
    load(tmp / "t.jsonl");
    FAIL("expected an integrity error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("50") != std::string::npos);
    CHECK(msg.find("49") != std::string::npos);
  }
}

TEST_CASE("malformed lines report their line number") {
  TmpDir tmp;
  const Dataset ds = synthetic_dataset(5, 22);
  save(ds, tmp / "m.jsonl");
  std::string text = slurp(tmp / "m.jsonl");
  std::ofstream(tmp / "m.jsonl") << text << "{not json\n";
  try {
    load(tmp / "m.jsonl");
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 6") != std::string::npos);
  }
}

TEST_CASE("mixed provenance counts are reconstructed on load") {
  TmpDir tmp;
  const Dataset expert = synthetic_dataset(60, 23);
  const Dataset medium = synthetic_dataset(30, 24, PolicyLevel::medium);
  const Dataset mixed = contaminate(expert, medium, 0.4);
  save(mixed, tmp / "mix.jsonl");
  const Dataset back = load(tmp / "mix.jsonl");
  CHECK(back.meta.counts[0] == 36);
  CHECK(back.meta.counts[1] == 24);
  CHECK(back.meta.counts[2] == 0);
}

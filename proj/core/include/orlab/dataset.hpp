#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "orlab/env.hpp"

namespace orlab {

struct Transition {
  Vector s;
  Vector a;
  double r = 0.0;
  Vector s_next;
  bool done = false;
  PolicyLevel provenance = PolicyLevel::expert;
};

// Per-dimension state standardization; std floored at 1e-3.
struct Normalizer {
  Vector mean;
  Vector stddev;

  Vector apply(const Vector& s) const {
    return ((s - mean).array() / stddev.array()).matrix();
  }
  Matrix apply_rows(const Matrix& s) const;
};

struct DatasetMeta {
  EnvKind env = EnvKind::pointmass2d;
  std::uint64_t seed = 0;
  // counts indexed by PolicyLevel {expert, medium, random}
  std::array<std::int64_t, 3> counts{0, 0, 0};
  double average_reward = 0.0;
  std::optional<RefReturns> ref_returns;
  std::optional<Normalizer> normalizer;
  std::string name;
};

struct Dataset {
  std::vector<Transition> rows;
  DatasetMeta meta;

  std::int64_t size() const { return static_cast<std::int64_t>(rows.size()); }
  // Recounts provenance and recomputes the average reward from the rows.
  void refresh_meta();
};

// Exactly n transitions from whole episodes, the last episode truncated at n.
// `seed` drives the behavior policy; the environment uses its own stream.
Dataset collect(Env& env, const ScriptedPolicy& policy, std::int64_t n,
                std::uint64_t seed);

// Replace the final floor(ratio*N) transitions of the expert set with the
// first floor(ratio*N) transitions of the non-expert set. Output size equals
// the expert set size; metadata is recomputed.
Dataset contaminate(const Dataset& expert_ds, const Dataset& nonexpert_ds,
                    double ratio);

struct Stats {
  std::int64_t total = 0;
  std::int64_t expert_count = 0;
  std::int64_t medium_count = 0;
  std::int64_t random_count = 0;
  double average_reward = 0.0;
};

Stats dataset_stats(const Dataset& ds);

Normalizer fit_normalizer(const Dataset& ds);

// Keep the ceil(percent/100 * N) transitions with the highest immediate
// reward; ties broken by original index (earlier wins). Kept transitions
// preserve their original relative order.
Dataset percentile_filter(const Dataset& ds, double percent);

// One JSON object per line with keys s, a, r, s_next, done, provenance and a
// sidecar metadata file at path + ".meta.json". Round trips exactly.
void save(const Dataset& ds, const std::string& path);
Dataset load(const std::string& path);

// Convenience views used by training and evaluation.
struct DatasetView {
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Vector done;        // 1.0 where the transition ended the episode
  std::vector<PolicyLevel> provenance;
};

DatasetView make_view(const Dataset& ds);

}  // namespace orlab

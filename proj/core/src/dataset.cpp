#include "orlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace orlab {

using nlohmann::json;

Matrix Normalizer::apply_rows(const Matrix& s) const {
  Matrix out = s;
  out.rowwise() -= mean.transpose();
  out.array().rowwise() /= stddev.transpose().array();
  return out;
}

void Dataset::refresh_meta() {
  meta.counts = {0, 0, 0};
  double sum = 0.0;
  for (const auto& t : rows) {
    meta.counts[static_cast<int>(t.provenance)] += 1;
    sum += t.r;
  }
  meta.average_reward = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
}

Dataset collect(Env& env, const ScriptedPolicy& policy, std::int64_t n,
                std::uint64_t seed) {
  if (n < 1) throw ContractError("collect: n must be >= 1");
  Dataset ds;
  ds.rows.reserve(n);
  Rng policy_rng(seed);
  while (ds.size() < n) {
    Vector s = env.reset();
    bool done = false;
    while (!done && ds.size() < n) {
      const Vector a = policy.act(s, policy_rng);
      const StepResult r = env.step(a);
      ds.rows.push_back(Transition{s, a, r.reward, r.next_state, r.done,
                                   policy.level});
      s = r.next_state;
      done = r.done;
    }
  }
  ds.meta.env = env.spec().kind;
  ds.meta.seed = seed;
  ds.meta.name = to_string(policy.level);
  ds.refresh_meta();
  return ds;
}

namespace {

// floor with a small forward nudge so ratio*N lands on the intended integer
// despite binary rounding (0.3 * 1000 must give 300, not 299).
std::int64_t floor_count(double ratio, std::int64_t n) {
  return static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

std::int64_t ceil_count(double frac, std::int64_t n) {
  return static_cast<std::int64_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
}

}  // namespace

Dataset contaminate(const Dataset& expert_ds, const Dataset& nonexpert_ds,
                    double ratio) {
  if (ratio < 0.0 || ratio > 1.0) {
    throw ContractError("contaminate: ratio must be in [0, 1]");
  }
  if (expert_ds.meta.env != nonexpert_ds.meta.env) {
    throw ContractError("contaminate: datasets come from different environments");
  }
  const std::int64_t n = expert_ds.size();
  const std::int64_t k = floor_count(ratio, n);
  if (nonexpert_ds.size() < k) {
    throw ContractError("contaminate: non-expert dataset too small (" +
                        std::to_string(nonexpert_ds.size()) + " < " +
                        std::to_string(k) + ")");
  }
  Dataset out;
  out.rows.assign(expert_ds.rows.begin(), expert_ds.rows.end() - k);
  out.rows.insert(out.rows.end(), nonexpert_ds.rows.begin(),
                  nonexpert_ds.rows.begin() + k);
  out.meta = expert_ds.meta;
  out.refresh_meta();
  return out;
}

Stats dataset_stats(const Dataset& ds) {
  Stats s;
  s.total = ds.size();
  double sum = 0.0;
  for (const auto& t : ds.rows) {
    switch (t.provenance) {
      case PolicyLevel::expert: s.expert_count += 1; break;
      case PolicyLevel::medium: s.medium_count += 1; break;
      case PolicyLevel::random: s.random_count += 1; break;
    }
    sum += t.r;
  }
  s.average_reward = s.total == 0 ? 0.0 : sum / static_cast<double>(s.total);
  return s;
}

Normalizer fit_normalizer(const Dataset& ds) {
  if (ds.rows.empty()) throw ContractError("fit_normalizer: empty dataset");
  const int d = static_cast<int>(ds.rows.front().s.size());
  Vector mean = Vector::Zero(d);
  for (const auto& t : ds.rows) mean += t.s;
  mean /= static_cast<double>(ds.size());
  Vector var = Vector::Zero(d);
  for (const auto& t : ds.rows) var += (t.s - mean).cwiseProduct(t.s - mean);
  var /= static_cast<double>(ds.size());
  Normalizer nm;
  nm.mean = mean;
  nm.stddev = var.cwiseSqrt().cwiseMax(1e-3);
  return nm;
}

Dataset percentile_filter(const Dataset& ds, double percent) {
  if (percent <= 0.0 || percent > 100.0) {
    throw ContractError("percentile_filter: percent must be in (0, 100]");
  }
  const std::int64_t n = ds.size();
  const std::int64_t keep = std::min(n, std::max<std::int64_t>(
                                            1, ceil_count(percent / 100.0, n)));
  std::vector<std::int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    if (ds.rows[a].r != ds.rows[b].r) return ds.rows[a].r > ds.rows[b].r;
    return a < b;
  });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.rows.reserve(keep);
  for (std::int64_t i : idx) out.rows.push_back(ds.rows[i]);
  out.meta = ds.meta;
  out.meta.name = ds.meta.name + "_p" + std::to_string(static_cast<int>(percent));
  out.refresh_meta();
  return out;
}

namespace {

json vec_to_json(const Vector& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector vec_from_json(const json& a) {
  Vector v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

std::string meta_path(const std::string& path) { return path + ".meta.json"; }

}  // namespace

void save(const Dataset& ds, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save: cannot open " + path);
  for (const auto& t : ds.rows) {
    json j;
    j["s"] = vec_to_json(t.s);
    j["a"] = vec_to_json(t.a);
    j["r"] = t.r;
    j["s_next"] = vec_to_json(t.s_next);
    j["done"] = t.done;
    j["provenance"] = to_string(t.provenance);
    out << j.dump() << "\n";
  }
  out.close();
  if (!out) throw std::runtime_error("save: write failed for " + path);

  json m;
  m["env"] = to_string(ds.meta.env);
  m["seed"] = ds.meta.seed;
  m["name"] = ds.meta.name;
  m["total"] = ds.size();
  m["counts"] = {{"expert", ds.meta.counts[0]},
                 {"medium", ds.meta.counts[1]},
                 {"random", ds.meta.counts[2]}};
  m["average_reward"] = ds.meta.average_reward;
  if (ds.meta.ref_returns) {
    m["reference_returns"] = {{"random", ds.meta.ref_returns->random_avg},
                              {"expert", ds.meta.ref_returns->expert_avg}};
  }
  if (ds.meta.normalizer) {
    m["normalizer"] = {{"mean", vec_to_json(ds.meta.normalizer->mean)},
                       {"std", vec_to_json(ds.meta.normalizer->stddev)}};
  }
  std::ofstream mo(meta_path(path));
  if (!mo) throw std::runtime_error("save: cannot open " + meta_path(path));
  mo << m.dump(2) << "\n";
  mo.close();
  if (!mo) throw std::runtime_error("save: write failed for " + meta_path(path));
}

Dataset load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load: cannot open " + path);

  Dataset ds;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      Transition t;
      t.s = vec_from_json(j.at("s"));
      t.a = vec_from_json(j.at("a"));
      t.r = j.at("r").get<double>();
      t.s_next = vec_from_json(j.at("s_next"));
      t.done = j.at("done").get<bool>();
      t.provenance = policy_level_from_string(j.at("provenance").get<std::string>());
      ds.rows.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw std::runtime_error("load: malformed record at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }

  std::ifstream mi(meta_path(path));
  if (!mi) throw std::runtime_error("load: missing metadata file " + meta_path(path));
  json m;
  try {
    mi >> m;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("load: malformed metadata: ") + e.what());
  }
  ds.meta.env = env_kind_from_string(m.at("env").get<std::string>());
  ds.meta.seed = m.at("seed").get<std::uint64_t>();
  ds.meta.name = m.value("name", std::string());
  ds.meta.average_reward = m.at("average_reward").get<double>();
  if (m.contains("reference_returns")) {
    RefReturns rr;
    rr.random_avg = m["reference_returns"].at("random").get<double>();
    rr.expert_avg = m["reference_returns"].at("expert").get<double>();
    ds.meta.ref_returns = rr;
  }
  if (m.contains("normalizer")) {
    Normalizer nm;
    nm.mean = vec_from_json(m["normalizer"].at("mean"));
    nm.stddev = vec_from_json(m["normalizer"].at("std"));
    ds.meta.normalizer = nm;
  }

  const std::int64_t expected_total = m.at("total").get<std::int64_t>();
  if (expected_total != ds.size()) {
    throw std::runtime_error("load: integrity error, metadata expects " +
                             std::to_string(expected_total) + " transitions, found " +
                             std::to_string(ds.size()));
  }
  std::array<std::int64_t, 3> expected_counts = {
      m.at("counts").at("expert").get<std::int64_t>(),
      m.at("counts").at("medium").get<std::int64_t>(),
      m.at("counts").at("random").get<std::int64_t>()};
  std::array<std::int64_t, 3> found{0, 0, 0};
  for (const auto& t : ds.rows) found[static_cast<int>(t.provenance)] += 1;
  if (found != expected_counts) {
    throw std::runtime_error(
        "load: integrity error, provenance counts expected (" +
        std::to_string(expected_counts[0]) + "," + std::to_string(expected_counts[1]) +
        "," + std::to_string(expected_counts[2]) + "), found (" +
        std::to_string(found[0]) + "," + std::to_string(found[1]) + "," +
        std::to_string(found[2]) + ")");
  }
  ds.meta.counts = found;
  return ds;
}

DatasetView make_view(const Dataset& ds) {
  if (ds.rows.empty()) throw ContractError("make_view: empty dataset");
  const std::int64_t n = ds.size();
  const int sd = static_cast<int>(ds.rows.front().s.size());
  const int ad = static_cast<int>(ds.rows.front().a.size());
  DatasetView v;
  v.states.resize(n, sd);
  v.actions.resize(n, ad);
  v.rewards.resize(n);
  v.next_states.resize(n, sd);
  v.done.resize(n);
  v.provenance.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const Transition& t = ds.rows[i];
    v.states.row(i) = t.s.transpose();
    v.actions.row(i) = t.a.transpose();
    v.rewards[i] = t.r;
    v.next_states.row(i) = t.s_next.transpose();
    v.done[i] = t.done ? 1.0 : 0.0;
    v.provenance.push_back(t.provenance);
  }
  return v;
}

}  // namespace orlab

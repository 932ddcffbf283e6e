#pragma once

// (safety, proxy, task) distribution triples.
//
// Generated scenarios place the proxy input support on the contiguous block
// [0, h) and the task input support on [h - k, 2h - k), where h = ceil(contexts / 2)
// and k = round(overlap_frac * h) is the number of shared contexts. The safety
// inputs live on the proxy block, so similarity = 1 makes the proxy an exact copy.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safetune/errors.hpp"
#include "safetune/prob.hpp"

namespace safetune {

struct DistributionPair {
  Categorical d;
  ConditionalTable mu;

  friend bool operator==(const DistributionPair&, const DistributionPair&) = default;
};

struct Scenario {
  Alphabet alphabet;
  DistributionPair safety;
  DistributionPair proxy;
  DistributionPair task;
  double floor = 1e-3;
  std::uint64_t seed = 0;
  double overlap_frac = 0.0;
  double similarity = 1.0;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

struct GeneratorConfig {
  Alphabet alphabet{8, 4};
  double overlap_frac = 0.5;
  double similarity = 1.0;
  double floor = 1e-3;
};

/// |supp(a) ∩ supp(b)| / max(1, |supp(b)|).
inline double support_overlap(const Categorical& a, const Categorical& b) {
  detail::require_same_size(a.size(), b.size(), "support_overlap");
  std::size_t both = 0;
  std::size_t nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i] > 0.0) {
      ++nb;
      if (a[i] > 0.0) ++both;
    }
  }
  return static_cast<double>(both) / static_cast<double>(std::max<std::size_t>(1, nb));
}

/// Checks every scenario invariant; throws InvalidInput with a field path.
inline void validate(const Scenario& s) {
  s.alphabet.validate();
  const std::size_t c = s.alphabet.contexts;
  const std::size_t m = s.alphabet.outputs;
  if (!(s.floor > 0.0) || !(s.floor < 1.0 / static_cast<double>(m))) {
    throw InvalidInput("floor: must lie in (0, 1/outputs)");
  }
  if (!(s.similarity >= 0.0 && s.similarity <= 1.0)) throw InvalidInput("similarity: must lie in [0, 1]");
  if (!(s.overlap_frac >= 0.0 && s.overlap_frac <= 1.0)) throw InvalidInput("overlap_frac: must lie in [0, 1]");

  const std::pair<const char*, const DistributionPair*> pairs[] = {
      {"safety", &s.safety}, {"proxy", &s.proxy}, {"task", &s.task}};
  for (const auto& [name, pair] : pairs) {
    if (pair->d.size() != c) throw InvalidInput(std::string(name) + ".d: expected " + std::to_string(c) + " entries");
    if (pair->mu.contexts() != c || pair->mu.outputs() != m) {
      throw InvalidInput(std::string(name) + ".mu: expected shape " + std::to_string(c) + "x" + std::to_string(m));
    }
    for (std::size_t x = 0; x < c; ++x) {
      for (std::size_t y = 0; y < m; ++y) {
        if (pair->mu(x, y) < s.floor) {
          throw InvalidInput(std::string(name) + ".mu[" + std::to_string(x) + "][" + std::to_string(y) +
                             "]: entry below floor");
        }
      }
    }
  }
  if (s.similarity == 1.0 && !(s.proxy == s.safety)) {
    throw InvalidInput("proxy: similarity = 1 requires the proxy to equal the safety pair");
  }
}

namespace detail {

// Exponential normalization of i.i.d. standard normals: an exchangeable simplex sampler.
inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(n);
  for (double& v : z) v = normal(rng);
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

inline std::vector<double> block_distribution(std::mt19937_64& rng, std::size_t size, std::size_t begin,
                                              std::size_t count) {
  std::vector<double> p(size, 0.0);
  const auto w = random_simplex(rng, count);
  std::copy(w.begin(), w.end(), p.begin() + static_cast<std::ptrdiff_t>(begin));
  return p;
}

// Random rows lifted onto the floor: delta + (1 - m delta) q keeps every entry >= delta.
inline std::vector<double> floored_rows(std::mt19937_64& rng, std::size_t c, std::size_t m, double delta) {
  std::vector<double> flat;
  flat.reserve(c * m);
  const double scale = 1.0 - static_cast<double>(m) * delta;
  for (std::size_t x = 0; x < c; ++x) {
    for (double q : random_simplex(rng, m)) flat.push_back(delta + scale * q);
  }
  return flat;
}

inline std::vector<double> mix(std::span<const double> a, std::span<const double> b, double w) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = w * a[i] + (1.0 - w) * b[i];
  return out;
}

}  // namespace detail

/// Deterministic in `seed`. The noise components are drawn before mixing, so
/// scenarios that differ only in similarity share every random draw.
inline Scenario generate(std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.alphabet.validate();
  const std::size_t c = cfg.alphabet.contexts;
  const std::size_t m = cfg.alphabet.outputs;
  if (!(cfg.floor > 0.0) || !(cfg.floor < 1.0 / static_cast<double>(m))) {
    throw InvalidConfig("floor must lie in (0, 1/outputs)");
  }
  if (!(cfg.overlap_frac >= 0.0 && cfg.overlap_frac <= 1.0)) throw InvalidConfig("overlap_frac must lie in [0, 1]");
  if (!(cfg.similarity >= 0.0 && cfg.similarity <= 1.0)) throw InvalidConfig("similarity must lie in [0, 1]");

  const std::size_t half = (c + 1) / 2;
  const auto shared = static_cast<std::size_t>(std::llround(cfg.overlap_frac * static_cast<double>(half)));
  const std::size_t task_begin = half - shared;
  if (task_begin + half > c) {
    throw InvalidConfig("overlap_frac " + std::to_string(cfg.overlap_frac) + " infeasible for " +
                        std::to_string(c) + " contexts: blocks of " + std::to_string(half) +
                        " sharing " + std::to_string(shared) + " do not fit");
  }

  std::mt19937_64 rng(seed);
  const auto d_s = detail::block_distribution(rng, c, 0, half);
  const auto d_noise = detail::block_distribution(rng, c, 0, half);
  const auto d_f = detail::block_distribution(rng, c, task_begin, half);
  const auto mu_s = detail::floored_rows(rng, c, m, cfg.floor);
  const auto mu_noise = detail::floored_rows(rng, c, m, cfg.floor);
  const auto mu_f = detail::floored_rows(rng, c, m, cfg.floor);

  Scenario s;
  s.alphabet = cfg.alphabet;
  s.floor = cfg.floor;
  s.seed = seed;
  s.similarity = cfg.similarity;
  s.overlap_frac = static_cast<double>(shared) / static_cast<double>(half);
  s.safety = {Categorical(d_s, "safety.d"), ConditionalTable(c, m, mu_s, "safety.mu")};
  s.task = {Categorical(d_f, "task.d"), ConditionalTable(c, m, mu_f, "task.mu")};
  if (cfg.similarity == 1.0) {
    s.proxy = s.safety;
  } else {
    s.proxy = {Categorical(detail::mix(d_s, d_noise, cfg.similarity), "proxy.d"),
               ConditionalTable(c, m, detail::mix(mu_s, mu_noise, cfg.similarity), "proxy.mu")};
  }
  validate(s);
  return s;
}

namespace detail {

inline nlohmann::json pair_to_json(const DistributionPair& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t x = 0; x < p.mu.contexts(); ++x) {
    const auto r = p.mu.row(x);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"d", std::vector<double>(p.d.probs().begin(), p.d.probs().end())}, {"mu", rows}};
}

inline DistributionPair pair_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.contains(name)) throw ParseError(name + ": missing");
  const auto& node = j.at(name);
  std::vector<double> d;
  std::vector<std::vector<double>> mu;
  try {
    d = node.at("d").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(name + ".d: " + e.what());
  }
  try {
    mu = node.at("mu").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(name + ".mu: " + e.what());
  }
  try {
    return {Categorical(std::move(d), name + ".d"), ConditionalTable::from_rows(mu, name + ".mu")};
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string(key) + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json scenario_to_json(const Scenario& s) {
  return {{"alphabet", {{"contexts", s.alphabet.contexts}, {"outputs", s.alphabet.outputs}}},
          {"seed", s.seed},
          {"overlap_frac", s.overlap_frac},
          {"similarity", s.similarity},
          {"floor", s.floor},
          {"safety", detail::pair_to_json(s.safety)},
          {"proxy", detail::pair_to_json(s.proxy)},
          {"task", detail::pair_to_json(s.task)}};
}

/// Parses and validates. overlap_frac is recomputed from the supports.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("scenario: expected a JSON object");
  Scenario s;
  if (!j.contains("alphabet")) throw ParseError("alphabet: missing");
  s.alphabet.contexts = detail::field<std::size_t>(j.at("alphabet"), "contexts");
  s.alphabet.outputs = detail::field<std::size_t>(j.at("alphabet"), "outputs");
  s.seed = detail::field<std::uint64_t>(j, "seed");
  s.similarity = detail::field<double>(j, "similarity");
  s.floor = detail::field<double>(j, "floor");
  s.safety = detail::pair_from_json(j, "safety");
  s.proxy = detail::pair_from_json(j, "proxy");
  s.task = detail::pair_from_json(j, "task");
  try {
    if (s.proxy.d.size() != s.task.d.size()) throw InvalidInput("task.d: size differs from proxy.d");
    s.overlap_frac = support_overlap(s.proxy.d, s.task.d);
    validate(s);
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
  return s;
}

inline void save(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << scenario_to_json(s).dump(2) << '\n';
  if (!out) throw InvalidInput("write failed: " + path.string());
}

inline Scenario load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

}  // namespace safetune

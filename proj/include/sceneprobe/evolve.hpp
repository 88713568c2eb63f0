#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sceneprobe/core.hpp"
#include "sceneprobe/gateway.hpp"
#include "sceneprobe/scene.hpp"

namespace sceneprobe::evolve {

using nlohmann::json;
using scene::TaskInstruction;

class UncoveredSlotError : public std::runtime_error {
 public:
  explicit UncoveredSlotError(const std::string& slot)
      : std::runtime_error("lexicon does not cover slot: " + slot) {}
};

class SchemaMismatchError : public std::runtime_error {
 public:
  SchemaMismatchError() : std::runtime_error("crossover parents have different slot schemas") {}
};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct InstructionTemplate {
  std::vector<std::string> slot_names;
  std::map<std::string, std::string> values;

  /// Slot values joined in slot order with single spaces.
  std::string rendered() const {
    std::string out;
    for (const auto& slot : slot_names) {
      const std::string& v = values.at(slot);
      if (v.empty()) continue;
      if (!out.empty()) out += ' ';
      out += v;
    }
    return out;
  }

  json to_json() const { return json{{"slots", slot_names}, {"values", values}}; }
  static InstructionTemplate from_json(const json& j) {
    InstructionTemplate t;
    t.slot_names = j.at("slots").get<std::vector<std::string>>();
    t.values = j.at("values").get<std::map<std::string, std::string>>();
    for (const auto& s : t.slot_names) {
      if (!t.values.count(s)) throw ConfigError("template is missing a value for slot " + s);
    }
    return t;
  }
};

struct CandidateInstruction {
  InstructionTemplate tmpl;
  std::string text;
  std::optional<double> fitness;
};

inline CandidateInstruction make_candidate(InstructionTemplate t) {
  CandidateInstruction c;
  c.text = t.rendered();
  c.tmpl = std::move(t);
  return c;
}

struct Lexicon {
  std::map<std::string, std::vector<std::string>> entries;

  bool covers(const InstructionTemplate& t) const {
    for (const auto& s : t.slot_names) {
      auto it = entries.find(s);
      if (it == entries.end() || it->second.empty()) return false;
    }
    return true;
  }

  json to_json() const { return json(entries); }
  static Lexicon from_json(const json& j) {
    Lexicon l;
    l.entries = j.get<std::map<std::string, std::vector<std::string>>>();
    return l;
  }
};

struct GaConfig {
  int population_size = 16;  // n
  int generations = 5;       // G
  double p_mut = 0.3;
  int crossover_count = 8;   // children produced by crossover per refill
  int top_m = 4;             // M: elite size and final selection size

  void validate() const {
    if (top_m < 1) throw ConfigError("GA top_m must be >= 1");
    if (population_size < top_m) throw ConfigError("GA population_size must be >= top_m");
    if (p_mut < 0.0 || p_mut > 1.0) throw ConfigError("GA p_mut must lie in [0,1]");
    if (generations < 0) throw ConfigError("GA generations must be >= 0");
    if (crossover_count < 0) throw ConfigError("GA crossover_count must be >= 0");
  }

  json to_json() const {
    return json{{"population_size", population_size},
                {"generations", generations},
                {"p_mut", p_mut},
                {"crossover_count", crossover_count},
                {"top_m", top_m}};
  }
  static GaConfig from_json(const json& j) {
    GaConfig c;
    c.population_size = j.value("population_size", 16);
    c.generations = j.value("generations", 5);
    c.p_mut = j.value("p_mut", 0.3);
    c.crossover_count = j.value("crossover_count", 8);
    c.top_m = j.value("top_m", 4);
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Each slot is independently replaced with probability p_mut by a different
/// lexicon value (mutation never silently no-ops a mutated slot). The parent
/// is untouched; the child's fitness is unset.
inline CandidateInstruction mutate(const CandidateInstruction& parent, const Lexicon& lexicon,
                                   double p_mut, RngStream& rng) {
  InstructionTemplate child = parent.tmpl;
  for (const auto& slot : child.slot_names) {
    auto it = lexicon.entries.find(slot);
    if (it == lexicon.entries.end() || it->second.empty()) throw UncoveredSlotError(slot);
    if (p_mut <= 0.0) continue;
    if (p_mut < 1.0 && rng.uniform01() >= p_mut) continue;
    std::vector<std::string> alternatives;
    for (const auto& v : it->second) {
      if (v != child.values.at(slot)) alternatives.push_back(v);
    }
    if (alternatives.empty()) continue;  // the lexicon offers no different value
    child.values[slot] = alternatives[rng.index(alternatives.size())];
  }
  return make_candidate(std::move(child));
}

/// Single uniform cut point in [1, n-1]; slots before the cut come from a,
/// the rest from b.
inline CandidateInstruction crossover(const CandidateInstruction& a, const CandidateInstruction& b,
                                      RngStream& rng) {
  if (a.tmpl.slot_names != b.tmpl.slot_names) throw SchemaMismatchError();
  const auto& slots = a.tmpl.slot_names;
  if (slots.size() < 2) return make_candidate(a.tmpl);
  std::size_t cut = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(slots.size()) - 1));
  InstructionTemplate child;
  child.slot_names = slots;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    child.values[slots[i]] = (i < cut ? a : b).tmpl.values.at(slots[i]);
  }
  return make_candidate(std::move(child));
}

/// Cosine similarity between the candidate and the task, via the embedding
/// backend. Stores the score on the candidate.
inline double fitness(gw::Gateway& gateway, CandidateInstruction& candidate,
                      const TaskInstruction& task) {
  if (candidate.text.empty()) throw std::invalid_argument("fitness: empty candidate text");
  double f = cosine(gateway.embed_text(candidate.text), gateway.embed_text(task.text));
  candidate.fitness = f;
  return f;
}

// ---------------------------------------------------------------------------
// Generational loop
// ---------------------------------------------------------------------------

struct EvolutionResult {
  std::vector<CandidateInstruction> selected;          // top M, fitness descending
  std::vector<CandidateInstruction> final_population;  // all scored, sorted
  json trace = json::array();                          // per-generation fitness stats
};

namespace detail {

inline void sort_population(std::vector<CandidateInstruction>& pop) {
  std::stable_sort(pop.begin(), pop.end(),
                   [](const CandidateInstruction& a, const CandidateInstruction& b) {
                     if (*a.fitness != *b.fitness) return *a.fitness > *b.fitness;
                     return a.text < b.text;  // deterministic tie-break
                   });
}

}  // namespace detail

inline EvolutionResult evolve_population(gw::Gateway& gateway,
                                         const std::vector<InstructionTemplate>& seeds,
                                         const Lexicon& lexicon, const TaskInstruction& task,
                                         const GaConfig& cfg, RngStream& rng) {
  cfg.validate();
  if (seeds.empty()) throw ConfigError("evolve_population: seed templates must be non-empty");
  for (const auto& s : seeds) {
    if (!lexicon.covers(s)) throw UncoveredSlotError("(seed template slot)");
  }

  const auto task_vec = gateway.embed_text(task.text);
  auto score = [&](CandidateInstruction& c) {
    if (!c.fitness) c.fitness = cosine(gateway.embed_text(c.text), task_vec);
  };

  std::vector<CandidateInstruction> pop;
  pop.reserve(static_cast<std::size_t>(cfg.population_size));
  for (const auto& s : seeds) {
    if (static_cast<int>(pop.size()) >= cfg.population_size) break;
    pop.push_back(make_candidate(s));
  }
  std::size_t seed_cursor = 0;
  while (static_cast<int>(pop.size()) < cfg.population_size) {
    pop.push_back(mutate(make_candidate(seeds[seed_cursor % seeds.size()]), lexicon, cfg.p_mut, rng));
    ++seed_cursor;
  }

  EvolutionResult result;
  for (auto& c : pop) score(c);
  detail::sort_population(pop);

  for (int g = 0; g < cfg.generations; ++g) {
    const int m = std::min<int>(cfg.top_m, static_cast<int>(pop.size()));
    std::vector<CandidateInstruction> next(pop.begin(), pop.begin() + m);  // elites persist
    int refill_index = 0;
    while (static_cast<int>(next.size()) < cfg.population_size) {
      CandidateInstruction child;
      if (refill_index < cfg.crossover_count && m >= 1) {
        std::size_t i = rng.index(static_cast<std::size_t>(m));
        std::size_t j = m > 1 ? (i + 1 + rng.index(static_cast<std::size_t>(m - 1))) %
                                    static_cast<std::size_t>(m)
                              : i;
        child = mutate(crossover(next[i], next[j], rng), lexicon, cfg.p_mut, rng);
      } else {
        child = mutate(next[rng.index(static_cast<std::size_t>(m))], lexicon, cfg.p_mut, rng);
      }
      next.push_back(std::move(child));
      ++refill_index;
    }
    pop = std::move(next);
    for (auto& c : pop) score(c);
    detail::sort_population(pop);

    double sum = 0.0;
    for (const auto& c : pop) sum += *c.fitness;
    result.trace.push_back(json{{"generation", g + 1},
                                {"best", *pop.front().fitness},
                                {"mean", sum / static_cast<double>(pop.size())}});
  }

  result.selected.assign(pop.begin(),
                         pop.begin() + std::min<int>(cfg.top_m, static_cast<int>(pop.size())));
  result.final_population = std::move(pop);
  return result;
}

}  // namespace sceneprobe::evolve

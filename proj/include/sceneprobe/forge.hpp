#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sceneprobe/core.hpp"
#include "sceneprobe/gateway.hpp"
#include "sceneprobe/image_io.hpp"
#include "sceneprobe/prompts.hpp"
#include "sceneprobe/scene.hpp"

namespace sceneprobe::forge {

using nlohmann::json;
using scene::HarmCategory;
using scene::SceneImage;
using scene::SceneRecord;
using scene::TaskInstruction;
using scene::TaskKind;

class InsufficientScenesError : public std::runtime_error {
 public:
  InsufficientScenesError(std::size_t want, std::size_t have)
      : std::runtime_error("requested " + std::to_string(want) + " scenes but only " +
                           std::to_string(have) + " are available") {}
};

class GroundingError : public std::runtime_error {
 public:
  explicit GroundingError(const std::string& msg) : std::runtime_error(msg) {}
};

class VerificationError : public std::runtime_error {
 public:
  VerificationError(const std::string& msg, std::vector<std::string> ids)
      : std::runtime_error(msg), offending_ids(std::move(ids)) {}
  std::vector<std::string> offending_ids;
};

// ---------------------------------------------------------------------------
// Affordances: static capability table keyed by object category. Gates which
// harm categories can ground in a scene.
// ---------------------------------------------------------------------------

inline const std::map<std::string, std::vector<std::string>>& affordance_table() {
  static const std::map<std::string, std::vector<std::string>> table{
      {"knife", {"sharp"}},        {"scissors", {"sharp"}},
      {"vase", {"breakable"}},     {"glass", {"breakable"}},
      {"window", {"breakable"}},   {"plate", {"breakable"}},
      {"mirror", {"breakable"}},   {"stove", {"toggleable"}},
      {"lamp", {"toggleable"}},    {"tv", {"toggleable"}},
      {"fridge", {"container"}},   {"drawer", {"container"}},
      {"cabinet", {"container"}},  {"camera", {"camera_like"}},
      {"laptop", {"camera_like"}}, {"phone", {"camera_like"}},
      {"sink", {"liquid_source"}}, {"faucet", {"liquid_source"}},
      {"bathtub", {"liquid_source"}}, {"plant", {"organic"}},
      {"table", {"surface"}},      {"counter", {"surface"}},
      {"desk", {"surface"}},       {"shelf", {"surface"}},
  };
  return table;
}

inline std::vector<std::string> affordances_of(const scene::SceneObject& o) {
  auto it = affordance_table().find(to_lower(o.category));
  if (it == affordance_table().end()) return {};
  return it->second;
}

inline bool scene_has_affordance(const SceneRecord& rec, const std::string& aff) {
  for (const auto& o : rec.objects) {
    for (const auto& a : affordances_of(o)) {
      if (a == aff) return true;
    }
  }
  return false;
}

/// Which affordances each harm category needs before an instruction can be
/// grounded in a scene.
inline bool category_feasible(const SceneRecord& rec, HarmCategory cat) {
  switch (cat) {
    case HarmCategory::DC:
      return scene_has_affordance(rec, "sharp") && scene_has_affordance(rec, "organic");
    case HarmCategory::DI:
      return scene_has_affordance(rec, "breakable");
    case HarmCategory::WR:
      return scene_has_affordance(rec, "liquid_source") || scene_has_affordance(rec, "toggleable");
    case HarmCategory::SD:
      return scene_has_affordance(rec, "liquid_source");
    case HarmCategory::IP:
      return scene_has_affordance(rec, "camera_like");
  }
  return false;
}

inline json objects_with_affordances(const SceneRecord& rec) {
  json arr = json::array();
  for (const auto& o : rec.objects) {
    json oj = o.to_json();
    oj["affordances"] = affordances_of(o);
    arr.push_back(oj);
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Scene sources
// ---------------------------------------------------------------------------

class SceneSource {
 public:
  virtual ~SceneSource() = default;
  virtual std::size_t available() const = 0;
  /// Draws count images; deterministic for a given rng stream state.
  virtual std::vector<std::shared_ptr<const SceneImage>> sample(std::size_t count,
                                                                RngStream& rng) = 0;
};

/// Reads PNG scenes from a directory. A companion <stem>.sidecar.json file,
/// when present, carries the ground truth consumed by stub backends.
class DirectorySource : public SceneSource {
 public:
  explicit DirectorySource(std::string path) : path_(std::move(path)) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path_)) throw ConfigError("scene directory not found: " + path_);
    for (const auto& e : fs::directory_iterator(path_)) {
      if (e.path().extension() == ".png") files_.push_back(e.path().string());
    }
    std::sort(files_.begin(), files_.end());
  }

  std::size_t available() const override { return files_.size(); }

  std::vector<std::shared_ptr<const SceneImage>> sample(std::size_t count,
                                                        RngStream& rng) override {
    if (count > files_.size()) throw InsufficientScenesError(count, files_.size());
    std::vector<std::size_t> order(files_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);  // uniform draw without replacement
    std::vector<std::shared_ptr<const SceneImage>> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(load(files_[order[i]]));
    return out;
  }

  static std::shared_ptr<const SceneImage> load(const std::string& png_path) {
    auto buf = read_png(png_path);
    auto img = std::make_shared<SceneImage>();
    img->width = buf.width;
    img->height = buf.height;
    img->pixels = std::move(buf.pixels);
    img->source_id = std::filesystem::path(png_path).filename().string();
    auto sidecar_path = std::filesystem::path(png_path).replace_extension(".sidecar.json");
    if (std::filesystem::exists(sidecar_path)) {
      std::ifstream in(sidecar_path);
      std::stringstream ss;
      ss << in.rdbuf();
      img->sidecar = ss.str();
    }
    return img;
  }

 private:
  std::string path_;
  std::vector<std::string> files_;
};

/// Deterministic synthetic scenes for offline runs: four room templates with
/// typed objects, a distinct background per index, and a sidecar holding the
/// ground truth the stubs echo back.
class FixtureSource : public SceneSource {
 public:
  struct Options {
    int width = 320;
    int height = 240;
    std::set<std::size_t> blank_scenes;        // no objects -> filtered out
    std::set<std::size_t> facing_wall_scenes;  // description names no objects
    std::map<std::size_t, std::size_t> duplicate_of;  // near-identical twins
  };

  explicit FixtureSource(std::uint64_t seed) : seed_(seed) {}
  FixtureSource(std::uint64_t seed, Options opts) : seed_(seed), opts_(std::move(opts)) {}

  std::size_t available() const override { return static_cast<std::size_t>(-1); }

  std::vector<std::shared_ptr<const SceneImage>> sample(std::size_t count,
                                                        RngStream& /*rng*/) override {
    std::vector<std::shared_ptr<const SceneImage>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_scene(i));
    return out;
  }

  std::shared_ptr<const SceneImage> make_scene(std::size_t index) const {
    std::size_t effective = index;
    auto dup = opts_.duplicate_of.find(index);
    if (dup != opts_.duplicate_of.end()) effective = dup->second;

    auto img = std::make_shared<SceneImage>();
    img->width = opts_.width;
    img->height = opts_.height;
    img->pixels.assign(static_cast<std::size_t>(opts_.width) * opts_.height * 3, 0);
    img->source_id = "fixture-" + std::to_string(index);

    if (opts_.blank_scenes.count(index)) {
      return img;  // all-zero frame, empty sidecar
    }

    std::uint64_t mix = splitmix64(seed_ ^ (0x5ce4ef1c7u + effective));
    Rgb bg{static_cast<std::uint8_t>(40 + mix % 160),
           static_cast<std::uint8_t>(40 + (mix >> 8) % 160),
           static_cast<std::uint8_t>(40 + (mix >> 16) % 160)};
    for (int y = 0; y < opts_.height; ++y) {
      for (int x = 0; x < opts_.width; ++x) img->set(x, y, bg);
    }

    const RoomTemplate& room = room_template(effective % 4);
    json objects = json::array();
    int slot = 0;
    for (const auto& obj : room.objects) {
      json oj{{"name", obj.name}, {"category", obj.category}, {"interactable", true}};
      if (obj.with_region) {
        Rect r = obj.region;
        oj["region"] = {r.x, r.y, r.w, r.h};
        Rgb fill{static_cast<std::uint8_t>(60 + (mix >> (slot % 5)) % 180),
                 static_cast<std::uint8_t>(60 + (mix >> (slot % 7 + 3)) % 180),
                 static_cast<std::uint8_t>(60 + (mix >> (slot % 11 + 5)) % 180)};
        for (int y = r.y; y < r.y + r.h && y < opts_.height; ++y) {
          for (int x = r.x; x < r.x + r.w && x < opts_.width; ++x) img->set(x, y, fill);
        }
      }
      objects.push_back(oj);
      ++slot;
    }

    // Duplicates keep the twin's pixels and description except for one pixel,
    // so scene ids stay distinct while embeddings collide.
    if (dup != opts_.duplicate_of.end()) {
      img->set(0, 0, Rgb{static_cast<std::uint8_t>(index & 0xff), 7, 7});
    }

    static const char* kShades[5] = {"amber", "teal", "ivory", "slate", "coral"};
    std::string description;
    if (opts_.facing_wall_scenes.count(index)) {
      description = "featureless blank surface fills the frame scene" + std::to_string(index);
    } else {
      description = std::string(kShades[effective % 5]) + " " + room.name + " scene" +
                    std::to_string(effective) + " holding";
      for (const auto& obj : room.objects) description += " " + obj.name;
    }

    json sidecar{{"room_type", room.name},
                 {"description", description},
                 {"objects", objects}};
    img->sidecar = sidecar.dump();
    return img;
  }

  std::string room_of(std::size_t index) const {
    std::size_t effective = index;
    auto dup = opts_.duplicate_of.find(index);
    if (dup != opts_.duplicate_of.end()) effective = dup->second;
    return room_template(effective % 4).name;
  }

 private:
  struct FixtureObject {
    std::string name;
    std::string category;
    bool with_region = false;
    Rect region;
  };
  struct RoomTemplate {
    std::string name;
    std::vector<FixtureObject> objects;
  };

  static const RoomTemplate& room_template(std::size_t idx) {
    static const std::vector<RoomTemplate> rooms{
        {"kitchen",
         {{"table", "table", true, {60, 110, 200, 120}},
          {"knife", "knife", false, {}},
          {"vase", "vase", true, {140, 80, 40, 40}},
          {"stove", "stove", false, {}},
          {"sink", "sink", false, {}},
          {"plant", "plant", false, {}},
          {"cup", "cup", false, {}}}},
        {"living_room",
         {{"table", "table", true, {80, 120, 180, 100}},
          {"tv", "tv", true, {20, 30, 80, 60}},
          {"vase", "vase", false, {}},
          {"plant", "plant", false, {}},
          {"lamp", "lamp", false, {}},
          {"camera", "camera", false, {}}}},
        {"bedroom",
         {{"bed", "bed", true, {40, 130, 220, 100}},
          {"lamp", "lamp", false, {}},
          {"camera", "camera", false, {}},
          {"drawer", "drawer", false, {}},
          {"window", "window", true, {220, 10, 90, 80}},
          {"phone", "phone", false, {}}}},
        {"bathroom",
         {{"sink", "sink", true, {100, 140, 120, 80}},
          {"mirror", "mirror", true, {110, 20, 100, 70}},
          {"towel", "towel", false, {}},
          {"bathtub", "bathtub", false, {}},
          {"cabinet", "cabinet", false, {}}}},
    };
    return rooms[idx % rooms.size()];
  }

  std::uint64_t seed_;
  Options opts_;
};

inline std::vector<std::shared_ptr<const SceneImage>> sample_scenes(SceneSource& source,
                                                                    std::size_t count,
                                                                    RngStream& rng) {
  if (count < 1) throw std::invalid_argument("sample_scenes: count must be >= 1");
  return source.sample(count, rng);
}

// ---------------------------------------------------------------------------
// Filtering and dedup
// ---------------------------------------------------------------------------

struct FilterRules {
  int min_objects = 2;
  bool wall_facing_check = true;
};

struct FilterOutcome {
  std::vector<SceneRecord> kept;
  struct Drop {
    std::string scene_id;
    std::string reason;
  };
  std::vector<Drop> dropped;
};

/// Drops records with too few interactive objects and, optionally, records
/// whose description mentions none of their objects (the wall-facing proxy).
inline FilterOutcome filter_invalid(const std::vector<SceneRecord>& records,
                                    const FilterRules& rules = {}) {
  FilterOutcome out;
  for (const auto& rec : records) {
    if (!rec.valid || static_cast<int>(rec.objects.size()) < rules.min_objects) {
      out.dropped.push_back({rec.scene_id, "insufficient-objects"});
      continue;
    }
    if (rules.wall_facing_check) {
      auto desc_toks = tokens(rec.description);
      std::set<std::string> desc_set(desc_toks.begin(), desc_toks.end());
      bool mentions_any = false;
      for (const auto& name : rec.object_names()) {
        if (desc_set.count(name)) mentions_any = true;
      }
      if (!mentions_any) {
        out.dropped.push_back({rec.scene_id, "facing-wall"});
        continue;
      }
    }
    out.kept.push_back(rec);
  }
  return out;
}

struct DedupReport {
  std::vector<std::string> kept_ids;
  struct Dropped {
    std::string scene_id;
    std::string twin_id;  // the kept record it duplicates
    double similarity;
  };
  std::vector<Dropped> dropped;

  json to_json() const {
    json d = json::array();
    for (const auto& e : dropped) {
      d.push_back(json{{"scene_id", e.scene_id}, {"twin", e.twin_id}, {"similarity", e.similarity}});
    }
    return json{{"kept", kept_ids}, {"dropped", d}};
  }
};

/// Greedy first-kept dedup over description embeddings, scanning in stable
/// scene-id order. A record survives iff its similarity to every already-kept
/// record stays at or below the threshold.
inline DedupReport dedup(gw::Gateway& gateway, const std::vector<SceneRecord>& records,
                         double theta_dup) {
  std::vector<const SceneRecord*> ordered;
  for (const auto& r : records) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(),
            [](const SceneRecord* a, const SceneRecord* b) { return a->scene_id < b->scene_id; });

  DedupReport report;
  std::vector<std::pair<const SceneRecord*, std::vector<double>>> kept;
  for (const SceneRecord* rec : ordered) {
    auto emb = gateway.embed_text(rec->description);
    const SceneRecord* twin = nullptr;
    double twin_sim = 0.0;
    for (const auto& [kept_rec, kept_emb] : kept) {
      double sim = cosine(emb, kept_emb);
      if (sim > theta_dup && sim > twin_sim) {
        twin = kept_rec;
        twin_sim = sim;
      }
    }
    if (twin) {
      report.dropped.push_back({rec->scene_id, twin->scene_id, twin_sim});
    } else {
      report.kept_ids.push_back(rec->scene_id);
      kept.emplace_back(rec, std::move(emb));
    }
  }
  return report;
}

inline std::vector<SceneRecord> apply_dedup(const std::vector<SceneRecord>& records,
                                            const DedupReport& report) {
  std::set<std::string> keep(report.kept_ids.begin(), report.kept_ids.end());
  std::vector<SceneRecord> out;
  for (const auto& r : records) {
    if (keep.count(r.scene_id)) out.push_back(r);
  }
  std::sort(out.begin(), out.end(),
            [](const SceneRecord& a, const SceneRecord& b) { return a.scene_id < b.scene_id; });
  return out;
}

// ---------------------------------------------------------------------------
// Instruction generation
// ---------------------------------------------------------------------------

namespace detail {

/// Generated instructions must name only objects of their scene, and every
/// declared reference must actually appear in the text.
inline bool grounded(const json& item, const SceneRecord& rec) {
  if (!item.is_object() || !item.contains("text") || !item.contains("objects")) return false;
  const std::string text = item.value("text", "");
  if (text.empty()) return false;
  auto known = rec.object_names();
  auto txt_toks = tokens(text);
  std::set<std::string> txt_set(txt_toks.begin(), txt_toks.end());
  const auto& objs = item.at("objects");
  if (!objs.is_array() || objs.empty()) return false;
  for (const auto& o : objs) {
    std::string name = to_lower(o.get<std::string>());
    if (!known.count(name) || !txt_set.count(name)) return false;
  }
  return true;
}

}  // namespace detail

/// Three benign instructions (simple, medium, complex), each grounded in the
/// scene's objects. Ungrounded replies are regenerated up to twice.
inline std::array<TaskInstruction, 3> gen_benign(gw::Gateway& gateway, const SceneRecord& rec) {
  static const char* kKeys[3] = {"simple", "medium", "complex"};
  static const TaskKind kKinds[3] = {TaskKind::benign_simple, TaskKind::benign_medium,
                                     TaskKind::benign_complex};
  const json objects = objects_with_affordances(rec);
  std::string last_failure;
  for (int attempt = 0; attempt < 3; ++attempt) {
    std::string reply =
        gateway.chat_generate(prompts::gen_benign(rec.description, objects));
    json parsed = json::parse(reply, nullptr, false);
    if (!parsed.is_object()) {
      last_failure = "reply is not structured";
      continue;
    }
    std::array<TaskInstruction, 3> out;
    bool ok = true;
    for (int i = 0; i < 3 && ok; ++i) {
      if (!parsed.contains(kKeys[i]) || !detail::grounded(parsed.at(kKeys[i]), rec)) {
        last_failure = std::string(kKeys[i]) + " instruction is not grounded in the scene";
        ok = false;
        break;
      }
      out[static_cast<std::size_t>(i)] =
          scene::make_instruction(parsed.at(kKeys[i]).value("text", ""), kKinds[i]);
    }
    if (ok) return out;
  }
  throw GroundingError("gen_benign failed for scene " + rec.scene_id + ": " + last_failure);
}

/// Up to k_max malicious instructions across the requested categories, each
/// gated by scene affordances and grounded in scene objects. Grounding
/// failures are skipped, not fatal.
inline std::vector<TaskInstruction> gen_malicious(gw::Gateway& gateway, const SceneRecord& rec,
                                                  const std::set<HarmCategory>& categories,
                                                  int k_max_per_scene) {
  static const HarmCategory kOrder[5] = {HarmCategory::DC, HarmCategory::DI, HarmCategory::WR,
                                         HarmCategory::SD, HarmCategory::IP};
  const json objects = objects_with_affordances(rec);
  std::vector<TaskInstruction> out;
  for (HarmCategory cat : kOrder) {
    if (static_cast<int>(out.size()) >= k_max_per_scene) break;
    if (!categories.count(cat) || !category_feasible(rec, cat)) continue;
    std::string reply = gateway.chat_generate(prompts::gen_malicious(
        scene::to_string(cat), rec.description, objects, k_max_per_scene));
    json parsed = json::parse(reply, nullptr, false);
    if (!parsed.is_object()) continue;
    for (const auto& item : parsed.value("instructions", json::array())) {
      if (static_cast<int>(out.size()) >= k_max_per_scene) break;
      if (!detail::grounded(item, rec)) continue;  // skip, not fatal
      out.push_back(scene::make_instruction(item.value("text", ""), TaskKind::malicious, cat));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct BoundInstruction {
  std::string id;
  std::string scene_id;
  TaskInstruction instruction;

  json to_json() const {
    json j = instruction.to_json();
    j["id"] = id;
    j["scene_id"] = scene_id;
    return j;
  }
  static BoundInstruction from_json(const json& j) {
    BoundInstruction b;
    b.id = j.at("id").get<std::string>();
    b.scene_id = j.at("scene_id").get<std::string>();
    b.instruction = TaskInstruction::from_json(j);
    return b;
  }
};

struct DatasetManifest {
  std::vector<SceneRecord> scenes;  // kept, sorted by scene id
  std::vector<BoundInstruction> benign;
  std::vector<BoundInstruction> malicious;
  json stats;
  std::string config_digest;
  std::uint64_t master_seed = 0;
  DedupReport dedup_report;
  std::vector<FilterOutcome::Drop> filter_drops;

  const SceneRecord* find_scene(const std::string& scene_id) const {
    for (const auto& s : scenes) {
      if (s.scene_id == scene_id) return &s;
    }
    return nullptr;
  }
};

/// Distribution statistics, recomputable bit-exactly from the records.
inline json compute_stats(const DatasetManifest& m) {
  json per_room = json::object();
  for (const auto& s : m.scenes) {
    std::string room = s.room_type.empty() ? "unknown" : s.room_type;
    per_room[room] = per_room.value(room, 0) + 1;
  }
  json rooms = json::object();
  for (const auto& [room, count] : per_room.items()) {
    double pct = m.scenes.empty() ? 0.0
                                  : 100.0 * count.get<double>() /
                                        static_cast<double>(m.scenes.size());
    rooms[room] = json{{"count", count}, {"pct", pct}};
  }

  std::map<std::string, std::size_t> cat_counts;
  for (const auto& b : m.malicious) {
    cat_counts[scene::to_string(*b.instruction.harm_category)] += 1;
  }
  json cats = json::object();
  for (const auto& [cat, count] : cat_counts) {
    double pct = m.malicious.empty()
                     ? 0.0
                     : 100.0 * static_cast<double>(count) / static_cast<double>(m.malicious.size());
    cats[cat] = json{{"count", count}, {"pct", pct}};
  }

  std::vector<double> lengths;
  for (const auto& b : m.benign) lengths.push_back(b.instruction.word_length);
  for (const auto& b : m.malicious) lengths.push_back(b.instruction.word_length);
  std::sort(lengths.begin(), lengths.end());

  return json{{"scene_count", m.scenes.size()},
              {"benign_count", m.benign.size()},
              {"malicious_count", m.malicious.size()},
              {"per_room", rooms},
              {"per_category", cats},
              {"length",
               {{"mean", mean_of(lengths)},
                {"median", quantile_sorted(lengths, 0.5)},
                {"q1", quantile_sorted(lengths, 0.25)},
                {"q3", quantile_sorted(lengths, 0.75)}}}};
}

/// Assembles the manifest and re-verifies every instruction: grounding,
/// category tagging, and benign cardinality.
inline DatasetManifest build_manifest(std::vector<SceneRecord> kept,
                                      std::vector<BoundInstruction> benign,
                                      std::vector<BoundInstruction> malicious,
                                      const std::string& config_digest,
                                      std::uint64_t master_seed) {
  DatasetManifest m;
  std::sort(kept.begin(), kept.end(),
            [](const SceneRecord& a, const SceneRecord& b) { return a.scene_id < b.scene_id; });
  m.scenes = std::move(kept);
  m.benign = std::move(benign);
  m.malicious = std::move(malicious);
  m.config_digest = config_digest;
  m.master_seed = master_seed;

  std::vector<std::string> offending;
  auto verify = [&](const BoundInstruction& b, bool want_category) {
    const SceneRecord* rec = m.find_scene(b.scene_id);
    if (!rec) {
      offending.push_back(b.id);
      return;
    }
    if (b.instruction.harm_category.has_value() != want_category) {
      offending.push_back(b.id);
      return;
    }
    auto known = rec->object_names();
    auto toks = tokens(b.instruction.text);
    bool mentions_known = false;
    for (const auto& t : toks) {
      if (known.count(t)) mentions_known = true;
    }
    if (!mentions_known || b.instruction.word_length != word_count(b.instruction.text)) {
      offending.push_back(b.id);
    }
  };
  for (const auto& b : m.benign) verify(b, false);
  for (const auto& b : m.malicious) verify(b, true);
  if (m.benign.size() != 3 * m.scenes.size()) {
    offending.push_back("(benign-cardinality " + std::to_string(m.benign.size()) + " != 3*" +
                        std::to_string(m.scenes.size()) + ")");
  }
  if (!offending.empty()) {
    std::string msg = "manifest verification failed:";
    for (const auto& id : offending) msg += " " + id;
    throw VerificationError(msg, offending);
  }

  m.stats = compute_stats(m);
  return m;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json manifest_to_json(const DatasetManifest& m,
                             const std::map<std::string, std::string>& image_paths) {
  json scenes = json::array();
  for (const auto& s : m.scenes) {
    auto it = image_paths.find(s.scene_id);
    json sj = scene::record_to_json(s, it == image_paths.end() ? "" : it->second);
    sj["sidecar"] = s.image ? s.image->sidecar : "";
    scenes.push_back(sj);
  }
  json benign = json::array();
  for (const auto& b : m.benign) benign.push_back(b.to_json());
  json malicious = json::array();
  for (const auto& b : m.malicious) malicious.push_back(b.to_json());
  json drops = json::array();
  for (const auto& d : m.filter_drops) {
    drops.push_back(json{{"scene_id", d.scene_id}, {"reason", d.reason}});
  }
  return json{{"scenes", scenes},
              {"benign", benign},
              {"malicious", malicious},
              {"stats", m.stats},
              {"dedup", m.dedup_report.to_json()},
              {"filter_drops", drops},
              {"provenance", {{"config_digest", m.config_digest}, {"master_seed", m.master_seed}}}};
}

/// Reloads a manifest; scene images are read back from their PNG paths
/// (relative to base_dir) and re-attached to their stored sidecars.
inline DatasetManifest manifest_from_json(const json& j, const std::string& base_dir) {
  DatasetManifest m;
  for (const auto& sj : j.at("scenes")) {
    SceneRecord rec;
    rec.scene_id = sj.at("scene_id").get<std::string>();
    rec.room_type = sj.value("room_type", "");
    rec.description = sj.value("description", "");
    rec.valid = sj.value("valid", true);
    for (const auto& oj : sj.value("objects", json::array())) {
      rec.objects.push_back(scene::SceneObject::from_json(oj));
    }
    std::string rel = sj.value("image_path", "");
    if (!rel.empty()) {
      auto full = (std::filesystem::path(base_dir) / rel).string();
      auto buf = read_png(full);
      auto img = std::make_shared<SceneImage>();
      img->width = buf.width;
      img->height = buf.height;
      img->pixels = std::move(buf.pixels);
      img->source_id = rel;
      img->sidecar = sj.value("sidecar", "");
      rec.image = img;
    }
    m.scenes.push_back(std::move(rec));
  }
  for (const auto& bj : j.at("benign")) m.benign.push_back(BoundInstruction::from_json(bj));
  for (const auto& bj : j.at("malicious")) m.malicious.push_back(BoundInstruction::from_json(bj));
  m.stats = j.value("stats", json::object());
  if (j.contains("provenance")) {
    m.config_digest = j.at("provenance").value("config_digest", "");
    m.master_seed = j.at("provenance").value("master_seed", 0ull);
  }
  return m;
}

}  // namespace sceneprobe::forge

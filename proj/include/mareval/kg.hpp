#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mareval/jsonl.hpp"
#include "mareval/util.hpp"

namespace mareval {

/// An entity of the background multimodal knowledge graph: display label,
/// free-text description and zero or more image references (paths relative to
/// the graph directory, absolute paths, or URIs). The first image reference is
/// the canonical one used when a prompt needs a single image.
struct Entity {
  std::string id;
  std::string label;
  std::string description;
  std::vector<std::string> image_refs;
};

struct Relation {
  std::string id;
  std::string label;
  std::string description;
};

struct Triplet {
  std::string head;
  std::string relation;
  std::string tail;

  bool operator==(const Triplet&) const = default;
  bool operator<(const Triplet& o) const {
    return std::tie(head, relation, tail) < std::tie(o.head, o.relation, o.tail);
  }
};

enum class Modality { visual, textual };

inline char modality_code(Modality m) { return m == Modality::visual ? 'v' : 't'; }

inline Modality parse_modality(std::string_view s) {
  if (s == "visual") return Modality::visual;
  if (s == "textual") return Modality::textual;
  throw Error(ErrorKind::parse, "malformed modality tag '" + std::string(s) +
                                    "' (expected \"visual\" or \"textual\")");
}

inline const char* modality_name(Modality m) {
  return m == Modality::visual ? "visual" : "textual";
}

/// Per-slot modality assignment for one analogy question. The four named
/// configurations are vvt, ttv, vtv and tvt; all eight combinations parse.
struct ModalityConfig {
  Modality head = Modality::textual;
  Modality tail = Modality::textual;
  Modality query = Modality::textual;

  std::string code() const {
    return {modality_code(head), modality_code(tail), modality_code(query)};
  }

  static ModalityConfig from_code(std::string_view code) {
    if (code.size() != 3)
      throw Error(ErrorKind::parse, "bad modality code '" + std::string(code) + "'");
    auto one = [&](char c) {
      if (c == 'v') return Modality::visual;
      if (c == 't') return Modality::textual;
      throw Error(ErrorKind::parse, "bad modality code '" + std::string(code) + "'");
    };
    return ModalityConfig{one(code[0]), one(code[1]), one(code[2])};
  }

  bool operator==(const ModalityConfig&) const = default;
};

/// One analogy question (e_h, e_t) : (e_q, ?) with gold answer e_a. The gold
/// relation, when present, is withheld from prompts and used only for
/// relation-inference scoring.
struct AnalogyQuestion {
  std::string id;
  std::string example_head;
  std::string example_tail;
  std::string query;
  std::string gold_answer;
  std::optional<std::string> gold_relation;
  ModalityConfig modality;
  std::optional<std::vector<std::string>> options;
};

inline bool is_uri(std::string_view ref) {
  auto pos = ref.find("://");
  if (pos == std::string_view::npos || pos == 0) return false;
  for (std::size_t i = 0; i < pos; ++i) {
    if (!std::isalpha(static_cast<unsigned char>(ref[i]))) return false;
  }
  return true;
}

namespace detail {

inline std::string loc(const std::filesystem::path& file, std::size_t line) {
  return file.filename().string() + ":" + std::to_string(line);
}

inline std::string require_string(const nlohmann::json& rec, const char* key,
                                  const std::filesystem::path& file,
                                  std::size_t line) {
  if (!rec.contains(key) || !rec[key].is_string()) {
    throw Error(ErrorKind::parse,
                loc(file, line) + ": missing or non-string key '" + key + "'");
  }
  return rec[key].get<std::string>();
}

inline void warn_unknown_keys(const nlohmann::json& rec,
                              const std::set<std::string>& known,
                              const std::filesystem::path& file, std::size_t line,
                              std::vector<std::string>* warnings) {
  if (!warnings) return;
  for (auto it = rec.begin(); it != rec.end(); ++it) {
    if (!known.count(it.key())) {
      warnings->push_back(loc(file, line) + ": unknown key '" + it.key() +
                          "' ignored");
    }
  }
}

}  // namespace detail

/// The background multimodal knowledge graph. Immutable after load; safe to
/// share read-only across threads.
class KnowledgeGraph {
 public:
  using PairIndex = std::map<std::pair<std::string, std::string>,
                             std::vector<std::string>>;

  KnowledgeGraph() = default;

  /// Loads entities.jsonl, relations.jsonl and triplets.jsonl from `dir` and
  /// builds both indexes. Unknown record keys are reported through `warnings`.
  static KnowledgeGraph load(const std::filesystem::path& dir,
                             std::vector<std::string>* warnings = nullptr) {
    KnowledgeGraph kg;
    kg.base_dir_ = dir;

    const auto entities_file = dir / "entities.jsonl";
    for_each_jsonl(entities_file, [&](std::size_t line, const nlohmann::json& rec) {
      Entity e;
      e.id = detail::require_string(rec, "id", entities_file, line);
      e.label = detail::require_string(rec, "label", entities_file, line);
      if (e.id.empty())
        throw Error(ErrorKind::parse, detail::loc(entities_file, line) + ": empty entity id");
      if (e.label.empty())
        throw Error(ErrorKind::parse, detail::loc(entities_file, line) + ": empty entity label");
      if (rec.contains("description") && rec["description"].is_string())
        e.description = rec["description"].get<std::string>();
      if (rec.contains("images")) {
        if (!rec["images"].is_array())
          throw Error(ErrorKind::parse,
                      detail::loc(entities_file, line) + ": 'images' must be an array");
        for (const auto& img : rec["images"]) {
          if (!img.is_string())
            throw Error(ErrorKind::parse,
                        detail::loc(entities_file, line) + ": image refs must be strings");
          e.image_refs.push_back(img.get<std::string>());
        }
      }
      detail::warn_unknown_keys(rec, {"id", "label", "description", "images"},
                                entities_file, line, warnings);
      if (!kg.entities_.emplace(e.id, std::move(e)).second) {
        throw Error(ErrorKind::duplicate_id,
                    detail::loc(entities_file, line) + ": duplicate entity id '" +
                        rec["id"].get<std::string>() + "'");
      }
    });

    const auto relations_file = dir / "relations.jsonl";
    for_each_jsonl(relations_file, [&](std::size_t line, const nlohmann::json& rec) {
      Relation r;
      r.id = detail::require_string(rec, "id", relations_file, line);
      r.label = detail::require_string(rec, "label", relations_file, line);
      if (r.id.empty())
        throw Error(ErrorKind::parse, detail::loc(relations_file, line) + ": empty relation id");
      if (rec.contains("description") && rec["description"].is_string())
        r.description = rec["description"].get<std::string>();
      detail::warn_unknown_keys(rec, {"id", "label", "description"},
                                relations_file, line, warnings);
      if (!kg.relations_.emplace(r.id, std::move(r)).second) {
        throw Error(ErrorKind::duplicate_id,
                    detail::loc(relations_file, line) + ": duplicate relation id '" +
                        rec["id"].get<std::string>() + "'");
      }
    });

    const auto triplets_file = dir / "triplets.jsonl";
    for_each_jsonl(triplets_file, [&](std::size_t line, const nlohmann::json& rec) {
      Triplet t;
      t.head = detail::require_string(rec, "head", triplets_file, line);
      t.relation = detail::require_string(rec, "relation", triplets_file, line);
      t.tail = detail::require_string(rec, "tail", triplets_file, line);
      detail::warn_unknown_keys(rec, {"head", "relation", "tail"}, triplets_file,
                                line, warnings);
      auto describe = [&t]() {
        return "(" + t.head + ", " + t.relation + ", " + t.tail + ")";
      };
      if (!kg.entities_.count(t.head))
        throw Error(ErrorKind::dangling_reference,
                    detail::loc(triplets_file, line) + ": unknown head '" + t.head +
                        "' in triplet " + describe());
      if (!kg.relations_.count(t.relation))
        throw Error(ErrorKind::dangling_reference,
                    detail::loc(triplets_file, line) + ": unknown relation '" +
                        t.relation + "' in triplet " + describe());
      if (!kg.entities_.count(t.tail))
        throw Error(ErrorKind::dangling_reference,
                    detail::loc(triplets_file, line) + ": unknown tail '" + t.tail +
                        "' in triplet " + describe());
      kg.triplets_.push_back(std::move(t));
    });

    kg.rebuild_indexes();
    return kg;
  }

  /// Writes the graph back as the three JSONL files, lexicographically ordered.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::vector<nlohmann::json> recs;
    for (const auto& [id, e] : entities_) {
      nlohmann::json r{{"id", e.id}, {"label", e.label}, {"description", e.description}};
      r["images"] = e.image_refs;
      recs.push_back(std::move(r));
    }
    write_jsonl(dir / "entities.jsonl", recs);

    recs.clear();
    for (const auto& [id, r] : relations_) {
      recs.push_back({{"id", r.id}, {"label", r.label}, {"description", r.description}});
    }
    write_jsonl(dir / "relations.jsonl", recs);

    recs.clear();
    std::vector<Triplet> sorted = triplets_;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& t : sorted) {
      recs.push_back({{"head", t.head}, {"relation", t.relation}, {"tail", t.tail}});
    }
    write_jsonl(dir / "triplets.jsonl", recs);
  }

  const std::map<std::string, Entity>& entities() const { return entities_; }
  const std::map<std::string, Relation>& relations() const { return relations_; }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  const std::filesystem::path& base_dir() const { return base_dir_; }

  bool has_entity(std::string_view id) const {
    return entities_.count(std::string(id)) > 0;
  }
  bool has_relation(std::string_view id) const {
    return relations_.count(std::string(id)) > 0;
  }

  const Entity& entity(const std::string& id) const {
    auto it = entities_.find(id);
    if (it == entities_.end())
      throw Error(ErrorKind::unknown_id, "unknown entity id '" + id + "'");
    return it->second;
  }

  const Relation& relation(const std::string& id) const {
    auto it = relations_.find(id);
    if (it == relations_.end())
      throw Error(ErrorKind::unknown_id, "unknown relation id '" + id + "'");
    return it->second;
  }

  /// All relations r with (head, r, tail) in the triplet set, ordered by id.
  std::vector<std::string> relations_between(const std::string& head,
                                             const std::string& tail) const {
    entity(head);
    entity(tail);
    auto it = rel_index_.find({head, tail});
    return it == rel_index_.end() ? std::vector<std::string>{} : it->second;
  }

  /// All tails t with (head, relation, t) in the triplet set, ordered by id.
  std::vector<std::string> tails_for(const std::string& head,
                                     const std::string& relation_id) const {
    entity(head);
    relation(relation_id);
    auto it = tail_index_.find({head, relation_id});
    return it == tail_index_.end() ? std::vector<std::string>{} : it->second;
  }

  /// Resolves an image reference against the graph directory. URIs pass
  /// through untouched.
  std::filesystem::path resolve_image(const std::string& ref) const {
    if (is_uri(ref)) return ref;
    std::filesystem::path p(ref);
    if (p.is_absolute()) return p;
    return base_dir_ / p;
  }

  /// Canonical image of an entity (the first reference), if any.
  std::optional<std::string> canonical_image(const std::string& entity_id) const {
    const Entity& e = entity(entity_id);
    if (e.image_refs.empty()) return std::nullopt;
    return e.image_refs.front();
  }

  /// Re-derives invariants and returns human-readable diagnostics; empty means
  /// clean. `check_images` additionally tests local image refs for
  /// readability (URIs are never fetched).
  std::vector<std::string> validate(bool check_images = true) const {
    std::vector<std::string> diags;
    for (const auto& [id, e] : entities_) {
      if (id.empty()) diags.push_back("entity with empty id");
      if (e.label.empty()) diags.push_back("entity '" + id + "' has empty label");
      if (check_images) {
        for (const auto& ref : e.image_refs) {
          if (is_uri(ref)) continue;
          std::ifstream probe(resolve_image(ref), std::ios::binary);
          if (!probe)
            diags.push_back("entity '" + id + "' image not readable: " + ref);
        }
      }
    }
    for (const auto& [id, r] : relations_) {
      if (id.empty()) diags.push_back("relation with empty id");
    }
    for (const auto& t : triplets_) {
      if (!entities_.count(t.head))
        diags.push_back("dangling head '" + t.head + "'");
      if (!relations_.count(t.relation))
        diags.push_back("dangling relation '" + t.relation + "'");
      if (!entities_.count(t.tail))
        diags.push_back("dangling tail '" + t.tail + "'");
    }
    KnowledgeGraph rebuilt;
    rebuilt.triplets_ = triplets_;
    rebuilt.rebuild_indexes();
    if (rebuilt.rel_index_ != rel_index_ || rebuilt.tail_index_ != tail_index_)
      diags.push_back("indexes inconsistent with triplet list");
    return diags;
  }

  const PairIndex& relation_index() const { return rel_index_; }
  const PairIndex& tail_index() const { return tail_index_; }

 private:
  void rebuild_indexes() {
    rel_index_.clear();
    tail_index_.clear();
    for (const auto& t : triplets_) {
      auto& rels = rel_index_[{t.head, t.tail}];
      if (!contains(rels, t.relation)) rels.push_back(t.relation);
      auto& tails = tail_index_[{t.head, t.relation}];
      if (!contains(tails, t.tail)) tails.push_back(t.tail);
    }
    for (auto& [k, v] : rel_index_) std::sort(v.begin(), v.end());
    for (auto& [k, v] : tail_index_) std::sort(v.begin(), v.end());
  }

  std::map<std::string, Entity> entities_;
  std::map<std::string, Relation> relations_;
  std::vector<Triplet> triplets_;
  PairIndex rel_index_;
  PairIndex tail_index_;
  std::filesystem::path base_dir_;
};

inline KnowledgeGraph load_kg(const std::filesystem::path& dir,
                              std::vector<std::string>* warnings = nullptr) {
  return KnowledgeGraph::load(dir, warnings);
}

/// Checks one question against the graph; throws on the first violation.
inline void validate_question(const AnalogyQuestion& q, const KnowledgeGraph& kg,
                              const std::string& where) {
  auto need_entity = [&](const std::string& id, const char* slot) {
    if (!kg.has_entity(id))
      throw Error(ErrorKind::unknown_id,
                  where + ": unknown " + slot + " entity id '" + id + "'");
  };
  need_entity(q.example_head, "example_head");
  need_entity(q.example_tail, "example_tail");
  need_entity(q.query, "query");
  need_entity(q.gold_answer, "gold_answer");
  if (q.gold_relation) {
    if (!kg.has_relation(*q.gold_relation))
      throw Error(ErrorKind::unknown_id,
                  where + ": unknown gold_relation id '" + *q.gold_relation + "'");
    auto rels = kg.relations_between(q.example_head, q.example_tail);
    if (!contains(rels, *q.gold_relation))
      throw Error(ErrorKind::invalid_argument,
                  where + ": gold_relation '" + *q.gold_relation +
                      "' does not connect (" + q.example_head + ", " +
                      q.example_tail + ") in the graph");
  }
  if (q.options) {
    std::set<std::string> seen;
    for (const auto& o : *q.options) {
      need_entity(o, "option");
      if (!seen.insert(o).second)
        throw Error(ErrorKind::invalid_argument,
                    where + ": duplicate option '" + o + "'");
    }
    if (!seen.count(q.gold_answer))
      throw Error(ErrorKind::invalid_argument,
                  where + ": options do not include the gold answer '" +
                      q.gold_answer + "'");
  }
}

/// Loads questions.jsonl; every question is validated against the graph.
inline std::vector<AnalogyQuestion> load_questions(
    const std::filesystem::path& path, const KnowledgeGraph& kg,
    std::vector<std::string>* warnings = nullptr) {
  std::vector<AnalogyQuestion> out;
  for_each_jsonl(path, [&](std::size_t line, const nlohmann::json& rec) {
    AnalogyQuestion q;
    q.id = detail::require_string(rec, "id", path, line);
    q.example_head = detail::require_string(rec, "example_head", path, line);
    q.example_tail = detail::require_string(rec, "example_tail", path, line);
    q.query = detail::require_string(rec, "query", path, line);
    q.gold_answer = detail::require_string(rec, "gold_answer", path, line);
    if (rec.contains("gold_relation") && !rec["gold_relation"].is_null())
      q.gold_relation = rec["gold_relation"].get<std::string>();
    if (!rec.contains("modality") || !rec["modality"].is_object())
      throw Error(ErrorKind::parse,
                  detail::loc(path, line) + ": missing 'modality' object");
    const auto& m = rec["modality"];
    q.modality.head = parse_modality(detail::require_string(m, "head", path, line));
    q.modality.tail = parse_modality(detail::require_string(m, "tail", path, line));
    q.modality.query = parse_modality(detail::require_string(m, "query", path, line));
    if (rec.contains("options") && !rec["options"].is_null()) {
      if (!rec["options"].is_array())
        throw Error(ErrorKind::parse,
                    detail::loc(path, line) + ": 'options' must be an array");
      q.options = rec["options"].get<std::vector<std::string>>();
    }
    detail::warn_unknown_keys(rec,
                              {"id", "example_head", "example_tail", "query",
                               "gold_answer", "gold_relation", "modality", "options"},
                              path, line, warnings);
    validate_question(q, kg, detail::loc(path, line));
    out.push_back(std::move(q));
  });
  return out;
}

inline nlohmann::json question_to_json(const AnalogyQuestion& q) {
  nlohmann::json rec{{"id", q.id},
                     {"example_head", q.example_head},
                     {"example_tail", q.example_tail},
                     {"query", q.query},
                     {"gold_answer", q.gold_answer},
                     {"modality",
                      {{"head", modality_name(q.modality.head)},
                       {"tail", modality_name(q.modality.tail)},
                       {"query", modality_name(q.modality.query)}}}};
  if (q.gold_relation) rec["gold_relation"] = *q.gold_relation;
  if (q.options) rec["options"] = *q.options;
  return rec;
}

inline void save_questions(const std::filesystem::path& path,
                           std::vector<AnalogyQuestion> questions) {
  std::sort(questions.begin(), questions.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<nlohmann::json> recs;
  recs.reserve(questions.size());
  for (const auto& q : questions) recs.push_back(question_to_json(q));
  write_jsonl(path, recs);
}

}  // namespace mareval

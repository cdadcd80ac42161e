#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mareval/kg.hpp"
#include "mareval/util.hpp"

namespace mareval {

enum class PromptMode { qa, multiple_choice, true_false };

inline const char* mode_name(PromptMode m) {
  switch (m) {
    case PromptMode::qa: return "qa";
    case PromptMode::multiple_choice: return "mc";
    case PromptMode::true_false: return "tf";
  }
  return "?";
}

inline PromptMode parse_mode(std::string_view s) {
  if (s == "qa") return PromptMode::qa;
  if (s == "mc") return PromptMode::multiple_choice;
  if (s == "tf") return PromptMode::true_false;
  throw Error(ErrorKind::invalid_argument,
              "unknown mode '" + std::string(s) + "' (expected qa, mc or tf)");
}

/// Reference to the image content of one turn. Multiple parts mean the parts
/// are combined side by side before sending.
struct ImageRef {
  std::vector<std::string> parts;

  bool empty() const { return parts.empty(); }

  std::string render() const {
    if (parts.empty()) return "";
    if (parts.size() == 1) return parts.front();
    std::string out = "combine(";
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) out += ", ";
      out += parts[i];
    }
    out += ")";
    return out;
  }
};

enum class Role { system, user, assistant };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

struct Turn {
  Role role = Role::user;
  std::string text;
  ImageRef image;
};

/// A dialogue ready for a chat backend. `meta` carries evaluation bookkeeping
/// (task kind and entity ids) that is never serialized onto the wire; the
/// mock backend reads it to act as a knowledge-graph oracle.
struct DialoguePrompt {
  std::vector<Turn> turns;
  std::map<std::string, std::string> meta;
};

/// The unified analogical prompt: a single token string plus the image
/// attachments for the visual slots, in head/tail/query order.
struct UnifiedPrompt {
  std::string token_text;
  std::vector<std::string> image_slots;
};

/// Backend-produced rewrites of the side information. Keys of `entity_texts`
/// are "head", "tail" and "query".
struct Reconstruction {
  std::map<std::string, std::string> entity_texts;
  std::string relation_text;
};

struct AblationFlags {
  bool include_tr = true;  // relation side text T_r
  bool include_te = true;  // entity side texts T_h / T_t / T_q
};

/// Named template set with embedded defaults. A template file consists of
/// `@key` header lines, each followed by the template body until the next
/// header; bodies keep internal newlines, trailing blank lines are trimmed.
class TemplateSet {
 public:
  TemplateSet() {
    t_["step1_head"] =
        "This image shows the tail entity of a knowledge-graph triplet. The tail "
        "entity is \"{tail}\" and the relation is \"{relation}\". Name the head "
        "entity.";
    t_["step1_relation"] =
        "This image shows two entities side by side: \"{head}\" on the left and "
        "\"{tail}\" on the right. Name the relation that connects them.";
    t_["step1_tail"] =
        "This image shows the head entity of a knowledge-graph triplet. The head "
        "entity is \"{head}\" and the relation is \"{relation}\". Name the tail "
        "entity.";
    t_["question1"] =
        "Consider an analogy example pair: the first item is {head} and the second "
        "item is {tail}. They are linked by an unstated relation. Confirm you "
        "understand the pair.";
    t_["answer1"] = "Understood. The example pair is {head} and {tail}.";
    t_["question2_qa"] =
        "Now apply the same relation to {query}. First state the relation you "
        "inferred, then name the entity that completes the analogy. Reply in the "
        "form: Relation: <relation>. Answer: <entity>.";
    t_["question2_mc"] =
        "Now apply the same relation to {query}. Choose the entity that completes "
        "the analogy from these options:\n{options}\nFirst state the relation you "
        "inferred, then give the chosen option. Reply in the form: Relation: "
        "<relation>. Answer: <option>.";
    t_["question2_tf"] =
        "Now apply the same relation to {query}. Is \"{candidate}\" the entity "
        "that completes the analogy? First state the relation you inferred, then "
        "answer True or False. Reply in the form: Relation: <relation>. Answer: "
        "<True or False>.";
    t_["answer2"] = "Relation: {relation}. Answer: {answer}.";
    t_["recon_visual"] = "Describe the entity shown in the image in one concise sentence.";
    t_["recon_textual"] =
        "Rewrite this entity description in one concise sentence. Entity: {label}. "
        "Description: {description}";
    t_["recon_relation"] =
        "In one short phrase, state the relation that links \"{head}\" to \"{tail}\".";
  }

  static TemplateSet from_file(const std::filesystem::path& path) {
    TemplateSet ts;
    std::string text = read_text_file(path);
    std::string key;
    std::string body;
    auto flush = [&]() {
      if (key.empty()) return;
      while (!body.empty() && (body.back() == '\n' || body.back() == '\r'))
        body.pop_back();
      if (!ts.t_.count(key))
        throw Error(ErrorKind::config,
                    path.string() + ": unknown template key '" + key + "'");
      ts.t_[key] = body;
    };
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto eol = text.find('\n', pos);
      std::string line = text.substr(pos, eol == std::string::npos ? eol : eol - pos);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line.front() == '@') {
        flush();
        key = trim(line.substr(1));
        body.clear();
      } else if (!key.empty()) {
        body += line;
        body += '\n';
      } else if (!trim(line).empty()) {
        throw Error(ErrorKind::config,
                    path.string() + ": content before first @key header");
      }
      if (eol == std::string::npos) break;
      pos = eol + 1;
    }
    flush();
    return ts;
  }

  /// Substitutes every `{name}` token; a placeholder with no binding is a
  /// configuration error.
  std::string render(const std::string& key,
                     const std::map<std::string, std::string>& bindings) const {
    auto it = t_.find(key);
    if (it == t_.end())
      throw Error(ErrorKind::config, "no template named '" + key + "'");
    const std::string& tpl = it->second;
    std::string out;
    out.reserve(tpl.size());
    std::size_t pos = 0;
    while (pos < tpl.size()) {
      auto open = tpl.find('{', pos);
      if (open == std::string::npos) {
        out += tpl.substr(pos);
        break;
      }
      out += tpl.substr(pos, open - pos);
      auto close = tpl.find('}', open);
      if (close == std::string::npos)
        throw Error(ErrorKind::config, "unbalanced '{' in template '" + key + "'");
      std::string name = tpl.substr(open + 1, close - open - 1);
      auto b = bindings.find(name);
      if (b == bindings.end())
        throw Error(ErrorKind::config,
                    "template '" + key + "' uses unbound placeholder {" + name + "}");
      out += b->second;
      pos = close + 1;
    }
    return out;
  }

 private:
  std::map<std::string, std::string> t_;
};

namespace detail {

inline std::string canonical_image_or_throw(const KnowledgeGraph& kg,
                                            const std::string& entity_id,
                                            const std::string& slot) {
  auto img = kg.canonical_image(entity_id);
  if (!img)
    throw Error(ErrorKind::missing_image, "entity '" + entity_id +
                                              "' has no image for visual slot " + slot);
  return kg.resolve_image(*img).string();
}

inline std::string entity_text(const KnowledgeGraph& kg, const std::string& id,
                               const std::string& slot, const Reconstruction* recon) {
  if (recon) {
    auto it = recon->entity_texts.find(slot);
    if (it != recon->entity_texts.end() && !it->second.empty()) return it->second;
  }
  return kg.entity(id).description;
}

inline std::string relation_text(const KnowledgeGraph& kg, const AnalogyQuestion& q,
                                 const Reconstruction* recon) {
  if (recon && !recon->relation_text.empty()) return recon->relation_text;
  if (q.gold_relation) return kg.relation(*q.gold_relation).description;
  return "";
}

}  // namespace detail

/// Renders the single-sequence analogical prompt
///   [CLS] T_h e_h T_r [R] T_t e_t [SEP] || T_q e_q T_r [R] [MASK] [SEP]
/// where every T_* is side text (reconstructed if available, otherwise the
/// stored description) and e_* are entity labels. Ablation flags drop the
/// corresponding T_* pieces; empty pieces collapse so the text stays single
/// spaced. Visual slots additionally contribute their canonical image.
inline UnifiedPrompt build_unified(const AnalogyQuestion& q, const KnowledgeGraph& kg,
                                   const AblationFlags& flags = {},
                                   const Reconstruction* recon = nullptr) {
  const Entity& head = kg.entity(q.example_head);
  const Entity& tail = kg.entity(q.example_tail);
  const Entity& query = kg.entity(q.query);

  std::string t_h, t_t, t_q, t_r;
  if (flags.include_te) {
    t_h = detail::entity_text(kg, head.id, "head", recon);
    t_t = detail::entity_text(kg, tail.id, "tail", recon);
    t_q = detail::entity_text(kg, query.id, "query", recon);
  }
  if (flags.include_tr) t_r = detail::relation_text(kg, q, recon);

  std::vector<std::string> tokens = {"[CLS]", t_h,   head.label, t_r, "[R]",
                                     t_t,     tail.label, "[SEP]", "||", t_q,
                                     query.label, t_r, "[R]", "[MASK]", "[SEP]"};
  UnifiedPrompt out;
  for (const auto& tok : tokens) {
    if (tok.empty()) continue;
    if (!out.token_text.empty()) out.token_text += ' ';
    out.token_text += tok;
  }
  struct Slot {
    const char* name;
    const std::string* id;
    Modality m;
  };
  for (const Slot& s : {Slot{"head", &head.id, q.modality.head},
                        Slot{"tail", &tail.id, q.modality.tail},
                        Slot{"query", &query.id, q.modality.query}}) {
    if (s.m == Modality::visual)
      out.image_slots.push_back(detail::canonical_image_or_throw(kg, *s.id, s.name));
  }
  return out;
}

/// First-stage fine-tuning prompts for one triplet (head / relation / tail
/// prediction). The head task shows the tail image, the tail task shows the
/// head image, and the relation task shows both images combined.
struct Step1Prompt {
  ImageRef image;
  std::string text;
  std::string target;
};

struct Step1Prompts {
  Step1Prompt head;
  Step1Prompt relation;
  Step1Prompt tail;
};

inline Step1Prompts build_step1(const Triplet& t, const KnowledgeGraph& kg,
                                const TemplateSet& templates = {}) {
  const Entity& head = kg.entity(t.head);
  const Entity& tail = kg.entity(t.tail);
  const Relation& rel = kg.relation(t.relation);
  std::string head_img = detail::canonical_image_or_throw(kg, head.id, "head");
  std::string tail_img = detail::canonical_image_or_throw(kg, tail.id, "tail");

  Step1Prompts out;
  out.head.image = ImageRef{{tail_img}};
  out.head.text = templates.render("step1_head",
                                   {{"tail", tail.label}, {"relation", rel.label}});
  out.head.target = head.label;

  out.relation.image = ImageRef{{head_img, tail_img}};
  out.relation.text = templates.render("step1_relation",
                                       {{"head", head.label}, {"tail", tail.label}});
  out.relation.target = rel.label;

  out.tail.image = ImageRef{{head_img}};
  out.tail.text = templates.render("step1_tail",
                                   {{"head", head.label}, {"relation", rel.label}});
  out.tail.target = tail.label;
  return out;
}

namespace detail {

/// How each slot is referred to inside dialogue text: textual slots by label,
/// visual slots by position inside the combined image.
struct SlotPhrases {
  std::string head, tail, query;
  std::vector<std::string> image_parts;  // head/tail/query order
};

inline SlotPhrases slot_phrases(const AnalogyQuestion& q, const KnowledgeGraph& kg) {
  struct Slot {
    const char* name;
    const std::string* id;
    Modality m;
    std::string* out;
  };
  SlotPhrases p;
  std::vector<Slot> slots = {{"head", &q.example_head, q.modality.head, &p.head},
                             {"tail", &q.example_tail, q.modality.tail, &p.tail},
                             {"query", &q.query, q.modality.query, &p.query}};
  int visual_total = 0;
  for (const auto& s : slots)
    if (s.m == Modality::visual) ++visual_total;
  static const char* kOrdinal[] = {"first", "second", "third"};
  int visual_seen = 0;
  for (auto& s : slots) {
    if (s.m == Modality::visual) {
      p.image_parts.push_back(canonical_image_or_throw(kg, *s.id, s.name));
      if (visual_total == 1)
        *s.out = "the entity in the image";
      else
        *s.out = std::string("the ") + kOrdinal[visual_seen] + " entity in the image";
      ++visual_seen;
    } else {
      *s.out = kg.entity(*s.id).label;
    }
  }
  return p;
}

inline std::string render_options(const std::vector<std::string>& option_ids,
                                  const KnowledgeGraph& kg) {
  if (option_ids.size() > 26)
    throw Error(ErrorKind::invalid_argument, "more than 26 options");
  std::string out;
  for (std::size_t i = 0; i < option_ids.size(); ++i) {
    if (i) out += '\n';
    out += char('A' + i);
    out += ") ";
    out += kg.entity(option_ids[i]).label;
  }
  return out;
}

inline std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += ids[i];
  }
  return out;
}

}  // namespace detail

/// Second-stage dialogue for one question: a first user turn carrying the
/// combined image of all visual slots plus the example-pair framing, then a
/// second user turn asking for relation and answer in the requested mode.
/// `options` is required for multiple choice; `tf_candidate` for true/false.
inline DialoguePrompt build_step2(
    const AnalogyQuestion& q, const KnowledgeGraph& kg, PromptMode mode,
    const std::vector<std::string>* options = nullptr,
    const std::string* tf_candidate = nullptr, const TemplateSet& templates = {}) {
  auto phrases = detail::slot_phrases(q, kg);
  DialoguePrompt d;

  Turn t1;
  t1.role = Role::user;
  t1.image.parts = phrases.image_parts;
  t1.text = templates.render("question1", {{"head", phrases.head},
                                           {"tail", phrases.tail}});
  d.turns.push_back(std::move(t1));

  Turn t2;
  t2.role = Role::user;
  switch (mode) {
    case PromptMode::qa:
      t2.text = templates.render("question2_qa", {{"query", phrases.query}});
      break;
    case PromptMode::multiple_choice: {
      if (!options || options->empty())
        throw Error(ErrorKind::invalid_argument,
                    "multiple-choice prompt requires options");
      t2.text = templates.render(
          "question2_mc",
          {{"query", phrases.query}, {"options", detail::render_options(*options, kg)}});
      break;
    }
    case PromptMode::true_false: {
      if (!tf_candidate)
        throw Error(ErrorKind::invalid_argument,
                    "true/false prompt requires a candidate");
      t2.text = templates.render("question2_tf",
                                 {{"query", phrases.query},
                                  {"candidate", kg.entity(*tf_candidate).label}});
      break;
    }
  }
  d.turns.push_back(std::move(t2));

  d.meta["task"] = "analogy";
  d.meta["question_id"] = q.id;
  d.meta["mode"] = mode_name(mode);
  d.meta["head"] = q.example_head;
  d.meta["tail"] = q.example_tail;
  d.meta["query"] = q.query;
  d.meta["gold"] = q.gold_answer;
  if (q.gold_relation) d.meta["gold_relation"] = *q.gold_relation;
  if (options) d.meta["options"] = detail::join_ids(*options);
  if (tf_candidate) d.meta["tf_candidate"] = *tf_candidate;
  return d;
}

/// Reconstruction prompts for one question, in head/tail/query/relation order.
/// Visual slots ask the backend to describe the slot's image; textual slots
/// ask it to rewrite the stored description; the relation prompt names the
/// example pair.
inline std::vector<DialoguePrompt> build_reconstruction_prompts(
    const AnalogyQuestion& q, const KnowledgeGraph& kg,
    const TemplateSet& templates = {}) {
  std::vector<DialoguePrompt> out;
  struct Slot {
    const char* name;
    const std::string* id;
    Modality m;
  };
  for (const Slot& s : {Slot{"head", &q.example_head, q.modality.head},
                        Slot{"tail", &q.example_tail, q.modality.tail},
                        Slot{"query", &q.query, q.modality.query}}) {
    const Entity& e = kg.entity(*s.id);
    DialoguePrompt d;
    Turn t;
    t.role = Role::user;
    if (s.m == Modality::visual) {
      t.image.parts = {detail::canonical_image_or_throw(kg, e.id, s.name)};
      t.text = templates.render("recon_visual", {});
    } else {
      t.text = templates.render(
          "recon_textual", {{"label", e.label}, {"description", e.description}});
    }
    d.turns.push_back(std::move(t));
    d.meta["task"] = "describe_entity";
    d.meta["entity"] = e.id;
    d.meta["slot"] = s.name;
    d.meta["question_id"] = q.id;
    out.push_back(std::move(d));
  }
  DialoguePrompt rel;
  Turn t;
  t.role = Role::user;
  t.text = templates.render("recon_relation",
                            {{"head", kg.entity(q.example_head).label},
                             {"tail", kg.entity(q.example_tail).label}});
  rel.turns.push_back(std::move(t));
  rel.meta["task"] = "describe_relation";
  rel.meta["head"] = q.example_head;
  rel.meta["tail"] = q.example_tail;
  rel.meta["question_id"] = q.id;
  out.push_back(std::move(rel));
  return out;
}

/// Samples a multiple-choice option list: the gold answer plus `count - 1`
/// distractors drawn uniformly without replacement from all entities except
/// the question's own, then shuffled. Deterministic in (seed, question id).
inline std::vector<std::string> sample_options(const AnalogyQuestion& q,
                                               const KnowledgeGraph& kg, int count,
                                               std::uint64_t seed) {
  if (count < 2)
    throw Error(ErrorKind::invalid_argument, "option count must be >= 2");
  std::set<std::string> excluded = {q.gold_answer, q.example_head, q.example_tail,
                                    q.query};
  std::vector<std::string> pool;
  for (const auto& [id, e] : kg.entities())
    if (!excluded.count(id)) pool.push_back(id);
  if (pool.size() + 1 < std::size_t(count))
    throw Error(ErrorKind::invalid_argument,
                "not enough entities to sample " + std::to_string(count) +
                    " options for question '" + q.id + "'");
  Rng rng(mix64(seed, fnv1a64(q.id), fnv1a64("options")));
  std::vector<std::string> opts = {q.gold_answer};
  for (int i = 1; i < count; ++i) {
    std::size_t pick = rng.below(pool.size());
    opts.push_back(pool[pick]);
    pool.erase(pool.begin() + std::ptrdiff_t(pick));
  }
  rng.shuffle(opts);
  return opts;
}

/// Picks the true/false candidate: the gold answer with probability
/// 1 - corruption_rate, otherwise a uniformly drawn wrong entity.
/// Deterministic in (seed, question id).
inline std::string sample_tf_candidate(const AnalogyQuestion& q,
                                       const KnowledgeGraph& kg,
                                       std::uint64_t seed, double corruption_rate) {
  if (corruption_rate < 0.0 || corruption_rate > 1.0)
    throw Error(ErrorKind::invalid_argument, "corruption rate must be in [0, 1]");
  Rng rng(mix64(seed, fnv1a64(q.id), fnv1a64("tf")));
  if (rng.unit() >= corruption_rate) return q.gold_answer;
  std::set<std::string> excluded = {q.gold_answer, q.example_head, q.example_tail,
                                    q.query};
  std::vector<std::string> pool;
  for (const auto& [id, e] : kg.entities())
    if (!excluded.count(id)) pool.push_back(id);
  if (pool.empty()) return q.gold_answer;
  return pool[rng.below(pool.size())];
}

}  // namespace mareval

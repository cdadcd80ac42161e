#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mareval/image.hpp"
#include "mareval/jsonl.hpp"
#include "mareval/kg.hpp"
#include "mareval/prompt.hpp"
#include "mareval/util.hpp"

namespace mareval {

/// One emitted fine-tuning record: conversational messages plus the expected
/// assistant reply. Image paths are relative to the emission directory.
struct FtRecord {
  std::string id;
  std::string stage;  // "step1" or "step2"
  struct Message {
    std::string role;
    std::string content;
    std::vector<std::string> images;
  };
  std::vector<Message> messages;
  std::string target;
};

struct FtSummary {
  std::string stage;
  std::size_t records = 0;
  std::size_t skipped = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t images_written = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string sanitize_filename(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' ||
              c == '-';
    out.push_back(ok ? c : '_');
  }
  return out;
}

inline nlohmann::json ft_record_to_json(const FtRecord& r) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : r.messages) {
    nlohmann::json j{{"role", m.role}, {"content", m.content}};
    if (!m.images.empty()) j["images"] = m.images;
    msgs.push_back(std::move(j));
  }
  return {{"id", r.id}, {"stage", r.stage}, {"messages", std::move(msgs)},
          {"target", r.target}};
}

/// Flat prompt/response rendering for toolchains that want single strings.
inline nlohmann::json ft_record_to_flat_json(const FtRecord& r) {
  std::string prompt;
  for (const auto& m : r.messages) {
    if (!prompt.empty()) prompt += '\n';
    std::string role = to_lower(m.role);
    for (auto& c : role) c = char(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& img : m.images) prompt += role + ": <image: " + img + ">\n";
    prompt += role + ": " + m.content;
  }
  return {{"id", r.id}, {"stage", r.stage}, {"prompt", prompt},
          {"response", r.target}};
}

/// Copies one entity's canonical image into images/entities/, verifying it
/// decodes. Returns the emission-relative path. Idempotent per entity.
class ImageMaterializer {
 public:
  ImageMaterializer(const KnowledgeGraph& kg, std::filesystem::path out_dir)
      : kg_(kg), out_dir_(std::move(out_dir)) {}

  std::string entity_image(const std::string& entity_id) {
    auto it = entity_paths_.find(entity_id);
    if (it != entity_paths_.end()) return it->second;
    auto ref = kg_.canonical_image(entity_id);
    if (!ref)
      throw Error(ErrorKind::missing_image, "entity '" + entity_id + "' has no image");
    if (is_uri(*ref))
      throw Error(ErrorKind::missing_image,
                  "entity '" + entity_id + "' has only a remote image reference");
    std::filesystem::path src = kg_.resolve_image(*ref);
    load_image(src);  // must decode; corrupt refs are caught at emission time
    std::string ext = src.extension().string();
    if (ext.empty()) ext = ".png";
    std::string rel = "images/entities/" + sanitize_filename(entity_id) + ext;
    write_file_once(out_dir_ / rel, slurp_binary(src));
    entity_paths_.emplace(entity_id, rel);
    return rel;
  }

  std::string combined_pair(const std::string& head_id, const std::string& tail_id) {
    std::string rel = "images/combined/" + sanitize_filename(head_id) + "__" +
                      sanitize_filename(tail_id) + ".png";
    if (written_.count(rel)) return rel;
    RasterImage img = combine_images({load_entity(head_id), load_entity(tail_id)});
    write_file_once(out_dir_ / rel, encode_png(img));
    return rel;
  }

  std::string combined_custom(const std::string& name,
                              const std::vector<std::string>& entity_ids) {
    std::string rel = "images/combined/" + sanitize_filename(name) + ".png";
    if (written_.count(rel)) return rel;
    std::vector<RasterImage> imgs;
    imgs.reserve(entity_ids.size());
    for (const auto& id : entity_ids) imgs.push_back(load_entity(id));
    write_file_once(out_dir_ / rel, encode_png(combine_images(imgs)));
    return rel;
  }

  std::size_t images_written() const { return written_.size(); }

 private:
  RasterImage load_entity(const std::string& entity_id) {
    auto ref = kg_.canonical_image(entity_id);
    if (!ref)
      throw Error(ErrorKind::missing_image, "entity '" + entity_id + "' has no image");
    if (is_uri(*ref))
      throw Error(ErrorKind::missing_image,
                  "entity '" + entity_id + "' has only a remote image reference");
    return load_image(kg_.resolve_image(*ref));
  }

  void write_file_once(const std::filesystem::path& dest,
                       const std::vector<unsigned char>& bytes) {
    std::string rel = std::filesystem::relative(dest, out_dir_).generic_string();
    if (written_.count(rel)) return;
    std::filesystem::create_directories(dest.parent_path());
    std::ofstream out(dest, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + dest.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              std::streamsize(bytes.size()));
    written_.insert(rel);
  }

  const KnowledgeGraph& kg_;
  std::filesystem::path out_dir_;
  std::map<std::string, std::string> entity_paths_;
  std::set<std::string> written_;
};

inline void write_ft_outputs(const std::filesystem::path& out_dir,
                             const std::string& file_stem,
                             const std::vector<FtRecord>& records, bool flat,
                             FtSummary& summary) {
  std::vector<nlohmann::json> lines;
  lines.reserve(records.size());
  for (const auto& r : records)
    lines.push_back(flat ? ft_record_to_flat_json(r) : ft_record_to_json(r));
  write_jsonl(out_dir / (file_stem + ".jsonl"), lines);
  summary.records = records.size();
  nlohmann::json s{{"stage", summary.stage},
                   {"records", summary.records},
                   {"skipped", summary.skipped},
                   {"seed", summary.seed},
                   {"config_hash", summary.config_hash},
                   {"images_written", summary.images_written},
                   {"warnings", summary.warnings}};
  write_text_file(out_dir / "summary.json", s.dump(2) + "\n");
}

}  // namespace detail

/// Emits the step-1 corpus: three records (head / relation / tail prediction)
/// per triplet whose two entities both carry a local, decodable image.
/// Triplets ordered by (head, relation, tail); skipped ones are counted.
inline FtSummary gen_step1(const KnowledgeGraph& kg,
                           const std::filesystem::path& out_dir,
                           const TemplateSet& templates = {}, bool flat = false,
                           std::uint64_t seed = 0) {
  std::filesystem::create_directories(out_dir);
  FtSummary summary;
  summary.stage = "step1";
  summary.seed = seed;
  summary.config_hash = to_hex(fnv1a64(std::string("step1|flat=") +
                                       (flat ? "1" : "0")));
  detail::ImageMaterializer images(kg, out_dir);

  std::vector<Triplet> sorted = kg.triplets();
  std::sort(sorted.begin(), sorted.end());
  std::vector<FtRecord> records;
  for (const auto& t : sorted) {
    std::string head_img, tail_img, pair_img;
    try {
      head_img = images.entity_image(t.head);
      tail_img = images.entity_image(t.tail);
      pair_img = images.combined_pair(t.head, t.tail);
    } catch (const Error& e) {
      ++summary.skipped;
      summary.warnings.push_back("skipped (" + t.head + ", " + t.relation + ", " +
                                 t.tail + "): " + e.what());
      continue;
    }
    Step1Prompts p = build_step1(t, kg, templates);
    std::string base = "step1:" + t.head + ":" + t.relation + ":" + t.tail;
    records.push_back({base + ":head",
                       "step1",
                       {{"user", p.head.text, {tail_img}}},
                       p.head.target});
    records.push_back({base + ":relation",
                       "step1",
                       {{"user", p.relation.text, {pair_img}}},
                       p.relation.target});
    records.push_back({base + ":tail",
                       "step1",
                       {{"user", p.tail.text, {head_img}}},
                       p.tail.target});
  }
  summary.images_written = images.images_written();
  detail::write_ft_outputs(out_dir, "step1", records, flat, summary);
  return summary;
}

/// Emits the step-2 corpus: one two-turn dialogue record per question, target
/// being the relation statement plus the gold answer in the requested mode.
/// Questions that cannot be materialized (missing images, no relation path)
/// are skipped and counted.
inline FtSummary gen_step2(const std::vector<AnalogyQuestion>& questions,
                           const KnowledgeGraph& kg,
                           const std::filesystem::path& out_dir, PromptMode mode,
                           std::uint64_t seed, int option_count = 10,
                           double tf_corruption_rate = 0.5,
                           const TemplateSet& templates = {}, bool flat = false) {
  std::filesystem::create_directories(out_dir);
  FtSummary summary;
  summary.stage = "step2";
  summary.seed = seed;
  summary.config_hash =
      to_hex(mix64(fnv1a64(std::string("step2|mode=") + mode_name(mode) +
                           "|opts=" + std::to_string(option_count) +
                           "|flat=" + (flat ? "1" : "0")),
                   seed));
  detail::ImageMaterializer images(kg, out_dir);

  std::vector<AnalogyQuestion> sorted = questions;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<FtRecord> records;
  for (const auto& q : sorted) {
    try {
      // Relation the target states: the gold one, or the first graph path.
      std::string relation_id;
      if (q.gold_relation) {
        relation_id = *q.gold_relation;
      } else {
        for (const auto& r : kg.relations_between(q.example_head, q.example_tail)) {
          if (contains(kg.tails_for(q.query, r), q.gold_answer)) {
            relation_id = r;
            break;
          }
        }
        if (relation_id.empty())
          throw Error(ErrorKind::oracle_gap, "no relation path for training target");
      }

      std::vector<std::string> options;
      const std::vector<std::string>* options_ptr = nullptr;
      std::string tf_candidate;
      const std::string* tf_ptr = nullptr;
      std::string answer_text;
      if (mode == PromptMode::multiple_choice) {
        options = q.options ? *q.options : sample_options(q, kg, option_count, seed);
        options_ptr = &options;
        std::size_t gold_pos = options.size();
        for (std::size_t i = 0; i < options.size(); ++i)
          if (options[i] == q.gold_answer) gold_pos = i;
        answer_text = std::string(1, char('A' + gold_pos)) + ") " +
                      kg.entity(q.gold_answer).label;
      } else if (mode == PromptMode::true_false) {
        tf_candidate = sample_tf_candidate(q, kg, seed, tf_corruption_rate);
        tf_ptr = &tf_candidate;
        answer_text = tf_candidate == q.gold_answer ? "True" : "False";
      } else {
        answer_text = kg.entity(q.gold_answer).label;
      }

      DialoguePrompt d = build_step2(q, kg, mode, options_ptr, tf_ptr, templates);

      std::vector<std::string> turn1_images;
      std::vector<std::string> visual_ids;
      struct Slot {
        const std::string* id;
        Modality m;
      };
      for (const Slot& s : {Slot{&q.example_head, q.modality.head},
                            Slot{&q.example_tail, q.modality.tail},
                            Slot{&q.query, q.modality.query}})
        if (s.m == Modality::visual) visual_ids.push_back(*s.id);
      if (visual_ids.size() == 1)
        turn1_images.push_back(images.entity_image(visual_ids.front()));
      else if (visual_ids.size() > 1)
        turn1_images.push_back(images.combined_custom("q_" + q.id, visual_ids));

      FtRecord rec;
      rec.id = "step2:" + q.id;
      rec.stage = "step2";
      rec.messages.push_back({"user", d.turns[0].text, turn1_images});
      rec.messages.push_back(
          {"assistant",
           templates.render("answer1", {{"head", kg.entity(q.example_head).label},
                                        {"tail", kg.entity(q.example_tail).label}}),
           {}});
      rec.messages.push_back({"user", d.turns[1].text, {}});
      rec.target = templates.render(
          "answer2",
          {{"relation", kg.relation(relation_id).label}, {"answer", answer_text}});
      records.push_back(std::move(rec));
    } catch (const Error& e) {
      ++summary.skipped;
      summary.warnings.push_back("skipped " + q.id + ": " + e.what());
    }
  }
  summary.images_written = images.images_written();
  detail::write_ft_outputs(out_dir, "step2", records, flat, summary);
  return summary;
}

}  // namespace mareval

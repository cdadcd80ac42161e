// Deterministic synthetic corpus generator for the test suite: a knowledge
// graph whose every (head, tail) pair is linked by exactly one relation, plus
// analogy questions guaranteed to have a supporting relation path. With these
// invariants a zero-error oracle must answer every question correctly, which
// the accuracy tests rely on.
#pragma once

#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "mareval/image.hpp"
#include "mareval/jsonl.hpp"
#include "mareval/kg.hpp"
#include "mareval/util.hpp"

namespace mareval::test {

struct SynthSpec {
  int entity_count = 50;
  int relation_count = 8;
  int triplets_per_relation = 15;  // heads drawn from the first 15 entities
  std::uint64_t seed = 1;
  bool with_images = true;
};

struct SynthCorpus {
  std::filesystem::path dir;
  KnowledgeGraph kg;
  std::vector<AnalogyQuestion> questions;
};

namespace detail {

inline std::vector<std::string> noun_pool() {
  return {"anchor",  "basket",  "candle",  "dolphin", "engine",  "falcon",
          "garnet",  "hammer",  "island",  "jacket",  "kettle",  "lantern",
          "magnet",  "needle",  "orchard", "pepper",  "quartz",  "ribbon",
          "saddle",  "teapot",  "umbrella", "violin", "walnut",  "yarrow",
          "zeppelin", "barrel", "cactus",  "drum",    "easel",   "fern",
          "glacier", "harp",    "ingot",   "jigsaw",  "kite",    "lever",
          "mosaic",  "nugget",  "oboe",    "prism",   "quill",   "rudder",
          "sphinx",  "tripod",  "urchin",  "vault",   "wig",     "xylophone",
          "yoke",    "zinnia"};
}

inline std::string pad4(int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", n);
  return buf;
}

}  // namespace detail

/// Builds the corpus under `dir` (entities/relations/triplets/questions
/// JSONL plus per-entity PNGs) and loads it back through the library.
inline SynthCorpus make_synth_corpus(const std::filesystem::path& dir,
                                     int question_count,
                                     const SynthSpec& spec = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  if (spec.with_images) fs::create_directories(dir / "images");

  const auto nouns = detail::noun_pool();
  if (spec.entity_count > int(nouns.size()))
    throw Error(ErrorKind::invalid_argument, "noun pool too small");
  if (spec.triplets_per_relation * 2 > spec.entity_count)
    throw Error(ErrorKind::invalid_argument, "entity pool too small for triplets");

  std::vector<std::string> entity_ids, relation_ids;
  std::vector<nlohmann::json> recs;
  for (int i = 0; i < spec.entity_count; ++i) {
    std::string id = "syn" + detail::pad4(i);
    entity_ids.push_back(id);
    nlohmann::json rec{{"id", id},
                       {"label", nouns[std::size_t(i)]},
                       {"description", "a study object shaped like a " +
                                           nouns[std::size_t(i)]}};
    if (spec.with_images) {
      std::uint64_t c = mix64(spec.seed, fnv1a64(id), fnv1a64("color"));
      RasterImage img = RasterImage::solid(6, 6, (unsigned char)(c & 0xff),
                                           (unsigned char)((c >> 8) & 0xff),
                                           (unsigned char)((c >> 16) & 0xff));
      save_png(img, dir / "images" / (id + ".png"));
      rec["images"] = {"images/" + id + ".png"};
    }
    recs.push_back(std::move(rec));
  }
  write_jsonl(dir / "entities.jsonl", recs);

  static const char* kRelWords[] = {"alpha", "bravo", "chorus", "delta",
                                    "ember", "fjord", "gamma", "harbor",
                                    "indigo", "jade"};
  recs.clear();
  for (int k = 0; k < spec.relation_count; ++k) {
    std::string id = "rel" + std::to_string(k);
    relation_ids.push_back(id);
    recs.push_back({{"id", id},
                    {"label", std::string("linked by ") + kRelWords[k % 10]},
                    {"description", std::string("synthetic relation ") +
                                        kRelWords[k % 10]}});
  }
  write_jsonl(dir / "relations.jsonl", recs);

  // Per relation: distinct heads from the shuffled front half, distinct tails
  // from the shuffled back half, with global (head, tail) pair uniqueness so
  // relations_between() is single-valued everywhere.
  const int per = spec.triplets_per_relation;
  std::set<std::pair<int, int>> used_pairs;
  std::vector<std::vector<std::pair<int, int>>> rel_triplets(
      std::size_t(spec.relation_count));
  recs.clear();
  for (int k = 0; k < spec.relation_count; ++k) {
    std::vector<int> order(std::size_t(spec.entity_count));
    for (int i = 0; i < spec.entity_count; ++i) order[std::size_t(i)] = i;
    Rng rng(mix64(spec.seed, std::uint64_t(k), fnv1a64("synth-rel")));
    rng.shuffle(order);
    for (int i = 0; i < per; ++i) {
      int head = order[std::size_t(i)];
      int tail = -1;
      for (int j = 0; j < per; ++j) {
        int cand = order[std::size_t(per + (i + j) % per)];
        if (!used_pairs.count({head, cand})) {
          tail = cand;
          break;
        }
      }
      if (tail < 0)
        throw Error(ErrorKind::invalid_argument, "synth pair pool exhausted");
      used_pairs.insert({head, tail});
      rel_triplets[std::size_t(k)].push_back({head, tail});
      recs.push_back({{"head", entity_ids[std::size_t(head)]},
                      {"relation", relation_ids[std::size_t(k)]},
                      {"tail", entity_ids[std::size_t(tail)]}});
    }
  }
  write_jsonl(dir / "triplets.jsonl", recs);

  // Questions pair triplet i with triplet (i + d) % per of the same relation:
  // the first is the example, the second supplies query and gold. Modality
  // configurations rotate independently of the relation index.
  static const char* kConfigs[] = {"vvt", "ttv", "vtv", "tvt"};
  SynthCorpus out;
  out.dir = dir;
  int idx = 0;
  for (int d = 1; d < per && int(out.questions.size()) < question_count; ++d) {
    for (int k = 0; k < spec.relation_count && int(out.questions.size()) < question_count; ++k) {
      for (int i = 0; i < per && int(out.questions.size()) < question_count; ++i) {
        auto [h1, t1] = rel_triplets[std::size_t(k)][std::size_t(i)];
        auto [h2, t2] = rel_triplets[std::size_t(k)][std::size_t((i + d) % per)];
        AnalogyQuestion q;
        q.id = "syn-q" + detail::pad4(idx);
        q.example_head = entity_ids[std::size_t(h1)];
        q.example_tail = entity_ids[std::size_t(t1)];
        q.query = entity_ids[std::size_t(h2)];
        q.gold_answer = entity_ids[std::size_t(t2)];
        q.gold_relation = relation_ids[std::size_t(k)];
        q.modality = ModalityConfig::from_code(kConfigs[idx % 4]);
        out.questions.push_back(std::move(q));
        ++idx;
      }
    }
  }
  if (int(out.questions.size()) < question_count)
    throw Error(ErrorKind::invalid_argument,
                "synth spec cannot produce " + std::to_string(question_count) +
                    " questions");
  save_questions(dir / "questions.jsonl", out.questions);

  out.kg = KnowledgeGraph::load(dir);
  // save_questions sorts by id; re-read so order matches the file.
  out.questions = load_questions(dir / "questions.jsonl", out.kg);
  return out;
}

/// Fresh scratch directory under the system temp root, unique per call.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  auto p = std::filesystem::temp_directory_path() /
           ("mareval-test-" + tag + "-" + std::to_string(++counter) + "-" +
            std::to_string(std::uint64_t(::getpid())));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mareval::test

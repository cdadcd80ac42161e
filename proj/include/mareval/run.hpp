#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mareval/client.hpp"
#include "mareval/eval.hpp"
#include "mareval/jsonl.hpp"
#include "mareval/kg.hpp"
#include "mareval/mapper.hpp"
#include "mareval/prompt.hpp"
#include "mareval/util.hpp"

namespace mareval {

/// Everything one evaluation run depends on. Serializes canonically so the
/// run manifest can prove two runs were configured identically.
struct RunConfig {
  std::filesystem::path kg_dir;
  std::filesystem::path questions_path;
  std::filesystem::path out_dir;
  std::filesystem::path templates_path;

  BackendKind backend = BackendKind::mock_oracle;
  std::string endpoint;
  std::string model = "mareval-mock";
  std::string auth_env = "MAREVAL_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 3;
  double backoff_initial_s = 0.5;
  double oracle_error_rate = 0.0;

  PromptMode mode = PromptMode::multiple_choice;
  std::string subtask = "all";
  bool use_tr = true;
  bool use_te = true;
  bool use_mapper = true;
  bool use_recon = true;
  std::uint64_t seed = 0;
  int parallelism = 1;
  int option_count = 10;
  double tf_corruption_rate = 0.5;

  std::string embedding_provider = "local";  // local | remote
  std::string embedding_endpoint;
  std::string embedding_model;

  long limit = 0;  // 0 = no limit

  nlohmann::json to_json() const {
    return nlohmann::json{{"kg_dir", kg_dir.string()},
                          {"questions", questions_path.string()},
                          {"out_dir", out_dir.string()},
                          {"templates", templates_path.string()},
                          {"backend", backend_name(backend)},
                          {"endpoint", endpoint},
                          {"model", model},
                          {"auth_env", auth_env},
                          {"timeout_s", timeout_s},
                          {"max_retries", max_retries},
                          {"backoff_initial_s", backoff_initial_s},
                          {"oracle_error_rate", oracle_error_rate},
                          {"mode", mode_name(mode)},
                          {"subtask", subtask},
                          {"use_tr", use_tr},
                          {"use_te", use_te},
                          {"use_mapper", use_mapper},
                          {"use_recon", use_recon},
                          {"seed", seed},
                          {"parallelism", parallelism},
                          {"option_count", option_count},
                          {"tf_corruption_rate", tf_corruption_rate},
                          {"embedding_provider", embedding_provider},
                          {"embedding_endpoint", embedding_endpoint},
                          {"embedding_model", embedding_model},
                          {"limit", limit}};
  }

  std::string config_hash() const { return to_hex(fnv1a64(to_json().dump())); }

  void validate() const {
    namespace fs = std::filesystem;
    if (kg_dir.empty() || !fs::is_directory(kg_dir))
      throw Error(ErrorKind::config, "kg_dir is not a directory: " + kg_dir.string());
    if (questions_path.empty() || !fs::is_regular_file(questions_path))
      throw Error(ErrorKind::config,
                  "questions file not found: " + questions_path.string());
    if (!templates_path.empty() && !fs::is_regular_file(templates_path))
      throw Error(ErrorKind::config,
                  "templates file not found: " + templates_path.string());
    if (out_dir.empty())
      throw Error(ErrorKind::config, "out_dir is required");
    if (backend == BackendKind::remote && endpoint.empty())
      throw Error(ErrorKind::config, "remote backend requires endpoint");
    if (oracle_error_rate < 0.0 || oracle_error_rate > 1.0)
      throw Error(ErrorKind::config, "oracle_error_rate must be in [0, 1]");
    if (mode == PromptMode::multiple_choice && option_count < 2)
      throw Error(ErrorKind::config, "multiple choice requires option_count >= 2");
    if (tf_corruption_rate < 0.0 || tf_corruption_rate > 1.0)
      throw Error(ErrorKind::config, "tf_corruption_rate must be in [0, 1]");
    if (parallelism < 1) throw Error(ErrorKind::config, "parallelism must be >= 1");
    if (limit < 0) throw Error(ErrorKind::config, "limit must be >= 0");
    if (subtask != "all") ModalityConfig::from_code(subtask);
    if (embedding_provider != "local" && embedding_provider != "remote")
      throw Error(ErrorKind::config,
                  "embedding_provider must be local or remote, got '" +
                      embedding_provider + "'");
    if (embedding_provider == "remote" && embedding_endpoint.empty())
      throw Error(ErrorKind::config, "remote embeddings require embedding_endpoint");
  }
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& value) {
  std::string v = to_lower(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorKind::config, "bad boolean for '" + key + "': " + value);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out;
  in >> out;
  if (in.fail() || !in.eof())
    throw Error(ErrorKind::config, "bad number for '" + key + "': " + value);
  return out;
}

}  // namespace detail

/// Applies one `key=value` setting; shared by the config-file loader and the
/// CLI override flags.
inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
  if (key == "kg_dir") cfg.kg_dir = value;
  else if (key == "questions") cfg.questions_path = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "prompt_templates" || key == "templates") cfg.templates_path = value;
  else if (key == "backend") cfg.backend = parse_backend(value);
  else if (key == "endpoint") cfg.endpoint = value;
  else if (key == "model") cfg.model = value;
  else if (key == "auth_env") cfg.auth_env = value;
  else if (key == "timeout_s") cfg.timeout_s = detail::parse_number<double>(key, value);
  else if (key == "max_retries") cfg.max_retries = detail::parse_number<int>(key, value);
  else if (key == "backoff_initial_s")
    cfg.backoff_initial_s = detail::parse_number<double>(key, value);
  else if (key == "oracle_error_rate")
    cfg.oracle_error_rate = detail::parse_number<double>(key, value);
  else if (key == "mode") cfg.mode = parse_mode(value);
  else if (key == "subtask") cfg.subtask = value;
  else if (key == "use_tr") cfg.use_tr = detail::parse_bool(key, value);
  else if (key == "use_te") cfg.use_te = detail::parse_bool(key, value);
  else if (key == "use_mapper") cfg.use_mapper = detail::parse_bool(key, value);
  else if (key == "use_recon") cfg.use_recon = detail::parse_bool(key, value);
  else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(key, value);
  else if (key == "parallelism")
    cfg.parallelism = detail::parse_number<int>(key, value);
  else if (key == "option_count")
    cfg.option_count = detail::parse_number<int>(key, value);
  else if (key == "tf_corruption_rate")
    cfg.tf_corruption_rate = detail::parse_number<double>(key, value);
  else if (key == "embedding_provider") cfg.embedding_provider = value;
  else if (key == "embedding_endpoint") cfg.embedding_endpoint = value;
  else if (key == "embedding_model") cfg.embedding_model = value;
  else if (key == "limit") cfg.limit = detail::parse_number<long>(key, value);
  else throw Error(ErrorKind::config, "unknown config key '" + key + "'");
}

/// Plain declarative config: one `key = value` per line, `#` comments.
inline RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg;
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open config: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::config, path.string() + ":" + std::to_string(line_no) +
                                         ": expected key=value");
    try {
      apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " +
                                e.what());
    }
  }
  return cfg;
}

struct RunArtifacts {
  std::filesystem::path out_dir;
  EvalReport report;
  std::vector<QuestionResult> results;
  std::vector<std::string> warnings;
};

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  write_text_file(tmp, content);
  std::filesystem::rename(tmp, path);
}

inline void write_jsonl_atomic(const std::filesystem::path& path,
                               const std::vector<nlohmann::json>& records) {
  std::string body;
  for (const auto& r : records) {
    body += r.dump();
    body += '\n';
  }
  write_text_atomic(path, body);
}

inline std::map<std::string, Transcript> load_transcripts(
    const std::filesystem::path& path) {
  std::map<std::string, Transcript> out;
  if (!std::filesystem::exists(path)) return out;
  for_each_jsonl(path, [&](std::size_t, const nlohmann::json& rec) {
    Transcript t = Transcript::from_json(rec);
    out[t.key] = std::move(t);  // later lines win: append-only file, newest last
  });
  return out;
}

/// Fingerprint of all template bodies, used to key the reconstruction cache.
inline std::string template_fingerprint(const TemplateSet& ts) {
  std::uint64_t h = fnv1a64("templates");
  for (const char* key :
       {"step1_head", "step1_relation", "step1_tail", "question1", "answer1",
        "question2_qa", "question2_mc", "question2_tf", "answer2", "recon_visual",
        "recon_textual", "recon_relation"}) {
    std::map<std::string, std::string> probe;
    // Render with throwaway bindings to capture the resolved body; placeholder
    // names are stable, so binding them to themselves is lossless.
    for (const char* ph : {"head", "tail", "query", "relation", "options",
                           "candidate", "label", "description", "answer"})
      probe[ph] = std::string("{") + ph + "}";
    h = mix64(h, fnv1a64(std::string(key) + "\x1f" + ts.render(key, probe)));
  }
  return to_hex(h);
}

struct PendingQuestion {
  const AnalogyQuestion* q = nullptr;
  std::vector<std::string> options;      // mc only
  std::string tf_candidate;              // tf only
  std::optional<DialoguePrompt> prompt;  // absent if building failed
  std::optional<std::string> build_error;
};

inline EmbedFn make_embedder(const RunConfig& cfg) {
  if (cfg.embedding_provider == "local") return embed_local;
#ifdef MAREVAL_HAS_HTTPLIB
  std::string endpoint = cfg.embedding_endpoint;
  std::string model = cfg.embedding_model;
  std::string auth_env = cfg.auth_env;
  double timeout = cfg.timeout_s;
  return [endpoint, model, auth_env, timeout](std::string_view text) {
    auto vecs = remote_embed(endpoint, model, auth_env,
                             {std::string(text)}, timeout);
    return vecs.front();
  };
#else
  throw Error(ErrorKind::config, "remote embeddings support not compiled in");
#endif
}

/// Exact-normalized-match grounding used when the mapper is ablated: the
/// ranking holds just the matched item, or nothing.
inline GroundedRanking ground_exact_only(const std::string& answer,
                                         const std::vector<VocabItem>& items) {
  std::string norm = normalize_label(normalize_answer(answer));
  GroundedRanking out;
  for (const auto& item : items) {
    if (normalize_label(item.label) == norm) {
      out.ranked.push_back({item.id, item.label, 1.0});
      out.exact_match = true;
      break;
    }
  }
  return out;
}

/// "C" or "c" alone names an option; expand it to that option's label so it
/// grounds the same way "C) label" does.
inline std::string resolve_bare_option_letter(const std::string& answer,
                                              const std::vector<std::string>& options,
                                              const KnowledgeGraph& kg) {
  std::string s = trim(answer);
  while (!s.empty() && (s.back() == '.' || s.back() == ')')) s.pop_back();
  s = trim(s);
  if (s.size() != 1 || !std::isalpha(static_cast<unsigned char>(s[0])))
    return answer;
  std::size_t idx =
      std::size_t(std::tolower(static_cast<unsigned char>(s[0])) - 'a');
  if (idx >= options.size()) return answer;
  return kg.entity(options[idx]).label;
}

}  // namespace detail

/// Executes one evaluation run end to end: select questions, reconstruct side
/// information (optional), render prompts, complete against the backend,
/// ground, score, and write the artifact set:
///   transcripts.jsonl, unified.jsonl, results.jsonl,
///   report.{json,md,csv}, run_manifest.json, recon_cache.json (when used).
/// Interrupted runs resume from transcripts.jsonl; backend failures are
/// recorded per question and scored as misses.
inline RunArtifacts cmd_run(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  RunArtifacts art;
  art.out_dir = cfg.out_dir;

  KnowledgeGraph kg = KnowledgeGraph::load(cfg.kg_dir, &art.warnings);
  std::vector<AnalogyQuestion> questions =
      load_questions(cfg.questions_path, kg, &art.warnings);
  if (cfg.subtask != "all") {
    std::erase_if(questions, [&](const AnalogyQuestion& q) {
      return q.modality.code() != cfg.subtask;
    });
  }
  std::sort(questions.begin(), questions.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  if (cfg.limit > 0 && questions.size() > std::size_t(cfg.limit))
    questions.resize(std::size_t(cfg.limit));
  if (questions.empty())
    throw Error(ErrorKind::empty_input, "no questions selected for this run");

  fs::create_directories(cfg.out_dir);
  TemplateSet templates = cfg.templates_path.empty()
                              ? TemplateSet()
                              : TemplateSet::from_file(cfg.templates_path);
  const std::string template_hash = detail::template_fingerprint(templates);

  BackendConfig backend;
  backend.kind = cfg.backend;
  backend.endpoint = cfg.endpoint;
  backend.model = cfg.model;
  backend.auth_env = cfg.auth_env;
  backend.timeout_s = cfg.timeout_s;
  backend.max_retries = cfg.max_retries;
  backend.backoff_initial_s = cfg.backoff_initial_s;
  backend.parallelism = cfg.parallelism;
  backend.oracle = OracleConfig{&kg, cfg.oracle_error_rate, cfg.seed};
  backend.validate();

  const fs::path transcripts_path = cfg.out_dir / "transcripts.jsonl";
  std::map<std::string, Transcript> transcripts =
      detail::load_transcripts(transcripts_path);
  std::ofstream transcript_log(transcripts_path, std::ios::app);
  if (!transcript_log)
    throw Error(ErrorKind::io, "cannot append to " + transcripts_path.string());
  auto log_transcript = [&](const Transcript& t) {
    transcript_log << t.to_json().dump() << '\n';
    transcript_log.flush();
  };

  auto run_batch =
      [&](const std::vector<std::pair<std::string, DialoguePrompt>>& wanted) {
        std::vector<std::pair<std::string, DialoguePrompt>> missing;
        for (const auto& [key, prompt] : wanted) {
          auto it = transcripts.find(key);
          if (it == transcripts.end() || it->second.error) missing.push_back({key, prompt});
        }
        auto fresh = complete_batch(backend, missing, [&](const Transcript& t) {
          log_transcript(t);
        });
        for (auto& t : fresh) transcripts[t.key] = std::move(t);
      };

  // Reconstruction stage: ask the backend to restate each slot's side
  // information; results cached by (subject, backend, template fingerprint).
  const fs::path recon_cache_path = cfg.out_dir / "recon_cache.json";
  std::map<std::string, Reconstruction> recon_by_question;
  if (cfg.use_recon) {
    nlohmann::json cache = nlohmann::json::object();
    if (fs::exists(recon_cache_path)) {
      try {
        cache = nlohmann::json::parse(read_text_file(recon_cache_path));
      } catch (const nlohmann::json::exception&) {
        cache = nlohmann::json::object();
      }
    }
    auto cache_key = [&](const DialoguePrompt& p) {
      if (p.meta.at("task") == "describe_entity")
        return "ent|" + p.meta.at("entity") + "|" + backend_name(cfg.backend) + "|" +
               template_hash;
      return "rel|" + p.meta.at("head") + "|" + p.meta.at("tail") + "|" +
             backend_name(cfg.backend) + "|" + template_hash;
    };
    std::vector<std::pair<std::string, DialoguePrompt>> needed;
    std::set<std::string> queued;
    std::map<std::string, std::vector<DialoguePrompt>> prompts_by_question;
    for (const auto& q : questions) {
      auto prompts = build_reconstruction_prompts(q, kg, templates);
      for (const auto& p : prompts) {
        std::string ck = cache_key(p);
        if (!cache.contains(ck) && queued.insert(ck).second)
          needed.push_back({"recon:" + ck, p});
      }
      prompts_by_question[q.id] = std::move(prompts);
    }
    run_batch(needed);
    for (const auto& [key, prompt] : needed) {
      auto it = transcripts.find(key);
      if (it != transcripts.end() && !it->second.error)
        cache[key.substr(6)] = it->second.response;
    }
    detail::write_text_atomic(recon_cache_path, cache.dump(2) + "\n");
    for (const auto& q : questions) {
      Reconstruction recon;
      for (const auto& p : prompts_by_question[q.id]) {
        std::string ck = cache_key(p);
        if (!cache.contains(ck)) continue;
        std::string text = cache[ck].get<std::string>();
        if (p.meta.at("task") == "describe_entity")
          recon.entity_texts[p.meta.at("slot")] = text;
        else
          recon.relation_text = text;
      }
      recon_by_question[q.id] = std::move(recon);
    }
  }
  auto recon_for = [&](const std::string& qid) -> const Reconstruction* {
    auto it = recon_by_question.find(qid);
    return it == recon_by_question.end() ? nullptr : &it->second;
  };

  // Unified single-sequence prompts are always emitted; they are the
  // MPT-facing rendering of the same questions.
  {
    std::vector<nlohmann::json> unified;
    AblationFlags flags{cfg.use_tr, cfg.use_te};
    for (const auto& q : questions) {
      nlohmann::json rec{{"id", q.id}, {"subtask", q.modality.code()}};
      try {
        UnifiedPrompt up = build_unified(q, kg, flags, recon_for(q.id));
        rec["token_text"] = up.token_text;
        rec["image_slots"] = up.image_slots;
      } catch (const Error& e) {
        rec["error"] = e.what();
      }
      unified.push_back(std::move(rec));
    }
    detail::write_jsonl_atomic(cfg.out_dir / "unified.jsonl", unified);
  }

  // Dialogue prompts for the chat backend.
  std::vector<detail::PendingQuestion> pending(questions.size());
  std::vector<std::pair<std::string, DialoguePrompt>> wanted;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const AnalogyQuestion& q = questions[i];
    pending[i].q = &q;
    try {
      const std::vector<std::string>* options_ptr = nullptr;
      const std::string* tf_ptr = nullptr;
      if (cfg.mode == PromptMode::multiple_choice) {
        pending[i].options =
            q.options ? *q.options : sample_options(q, kg, cfg.option_count, cfg.seed);
        options_ptr = &pending[i].options;
      } else if (cfg.mode == PromptMode::true_false) {
        pending[i].tf_candidate =
            sample_tf_candidate(q, kg, cfg.seed, cfg.tf_corruption_rate);
        tf_ptr = &pending[i].tf_candidate;
      }
      pending[i].prompt = build_step2(q, kg, cfg.mode, options_ptr, tf_ptr, templates);
      wanted.push_back({"q:" + q.id, *pending[i].prompt});
    } catch (const Error& e) {
      pending[i].build_error = std::string(error_kind_name(e.kind())) + ": " + e.what();
    }
  }
  run_batch(wanted);

  // Rewrite the transcript log sorted and deduplicated (newest per key wins).
  {
    std::vector<nlohmann::json> lines;
    for (const auto& [key, t] : transcripts) lines.push_back(t.to_json());
    detail::write_jsonl_atomic(transcripts_path, lines);
  }

  // Grounding vocabularies.
  EmbedFn embedder = cfg.use_mapper ? detail::make_embedder(cfg) : EmbedFn{};
  std::vector<VocabItem> entity_items, relation_items;
  for (const auto& [id, e] : kg.entities()) entity_items.push_back({id, e.label});
  for (const auto& [id, r] : kg.relations()) relation_items.push_back({id, r.label});
  const std::vector<VocabItem> tf_items = {{"false", "False"}, {"true", "True"}};
  std::optional<VocabIndex> entity_index, relation_index, tf_index;
  if (cfg.use_mapper) {
    if (cfg.mode == PromptMode::qa)
      entity_index = VocabIndex::build(entity_items, embedder, cfg.embedding_provider);
    if (cfg.mode == PromptMode::true_false)
      tf_index = VocabIndex::build(tf_items, embedder, cfg.embedding_provider);
    relation_index =
        VocabIndex::build(relation_items, embedder, cfg.embedding_provider);
  }

  // Score each question.
  for (const auto& p : pending) {
    const AnalogyQuestion& q = *p.q;
    QuestionResult r;
    r.question_id = q.id;
    r.subtask = q.modality.code();
    r.mode = mode_name(cfg.mode);
    r.gold_id = cfg.mode == PromptMode::true_false
                    ? (p.tf_candidate == q.gold_answer ? "true" : "false")
                    : q.gold_answer;
    r.gold_relation = q.gold_relation;

    if (p.build_error) {
      r.error = p.build_error;
      art.results.push_back(std::move(r));
      continue;
    }
    const Transcript& t = transcripts.at("q:" + q.id);
    if (t.error) {
      r.error = t.error;
      art.results.push_back(std::move(r));
      continue;
    }
    ParsedAnswer parsed = parse_analogy_response(t.response);
    r.raw_answer = t.response;

    std::string answer = parsed.answer;
    if (cfg.mode == PromptMode::multiple_choice)
      answer = detail::resolve_bare_option_letter(answer, p.options, kg);

    try {
      GroundedRanking ranking;
      if (cfg.mode == PromptMode::multiple_choice) {
        std::vector<VocabItem> option_items;
        for (const auto& id : p.options)
          option_items.push_back({id, kg.entity(id).label});
        ranking = cfg.use_mapper
                      ? ground(answer, VocabIndex::build(option_items, embedder,
                                                         cfg.embedding_provider),
                               embedder)
                      : detail::ground_exact_only(answer, option_items);
      } else if (cfg.mode == PromptMode::true_false) {
        ranking = cfg.use_mapper ? ground(answer, *tf_index, embedder)
                                 : detail::ground_exact_only(answer, tf_items);
      } else {
        ranking = cfg.use_mapper ? ground(answer, *entity_index, embedder)
                                 : detail::ground_exact_only(answer, entity_items);
      }
      r.ranking = ranking.ranked;
      r.gold_rank = ranking.rank_of(r.gold_id);
      if (!ranking.ranked.empty()) r.predicted_id = ranking.ranked.front().id;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ungroundable) throw;
      // Ungroundable output is a miss, not a failure.
    }

    if (parsed.relation && !relation_items.empty()) {
      try {
        GroundedRanking rel = cfg.use_mapper
                                  ? ground(*parsed.relation, *relation_index, embedder)
                                  : detail::ground_exact_only(*parsed.relation,
                                                              relation_items);
        r.relation_ranking = rel.ranked;
        if (!rel.ranked.empty()) r.predicted_relation = rel.ranked.front().id;
        if (q.gold_relation) r.relation_gold_rank = rel.rank_of(*q.gold_relation);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::ungroundable) throw;
      }
    }
    art.results.push_back(std::move(r));
  }

  art.report = score_run(art.results);

  // Persist artifacts.
  {
    std::vector<QuestionResult> sorted = art.results;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.question_id < b.question_id;
    });
    std::vector<nlohmann::json> lines;
    for (const auto& r : sorted) lines.push_back(result_to_json(r));
    detail::write_jsonl_atomic(cfg.out_dir / "results.jsonl", lines);
  }
  detail::write_text_atomic(cfg.out_dir / "report.json",
                            report_to_json(art.report).dump(2) + "\n");
  detail::write_text_atomic(cfg.out_dir / "report.md", report_to_markdown(art.report));
  detail::write_text_atomic(cfg.out_dir / "report.csv", report_to_csv(art.report));

  nlohmann::json manifest{
      {"config", cfg.to_json()},
      {"config_hash", cfg.config_hash()},
      {"template_hash", template_hash},
      {"seed", cfg.seed},
      {"questions_selected", questions.size()},
      {"kg", {{"entities", kg.entities().size()},
              {"relations", kg.relations().size()},
              {"triplets", kg.triplets().size()}}},
      {"artifacts", {"transcripts.jsonl", "unified.jsonl", "results.jsonl",
                     "report.json", "report.md", "report.csv"}}};
  detail::write_text_atomic(cfg.out_dir / "run_manifest.json",
                            manifest.dump(2) + "\n");
  return art;
}

/// Rebuilds report.{json,md,csv} for a finished run directory from its
/// results.jsonl alone.
inline EvalReport cmd_report(const std::filesystem::path& run_dir) {
  auto results = read_results(run_dir / "results.jsonl");
  EvalReport rep = score_run(results);
  detail::write_text_atomic(run_dir / "report.json",
                            report_to_json(rep).dump(2) + "\n");
  detail::write_text_atomic(run_dir / "report.md", report_to_markdown(rep));
  detail::write_text_atomic(run_dir / "report.csv", report_to_csv(rep));
  return rep;
}

}  // namespace mareval

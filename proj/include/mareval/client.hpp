#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#ifdef MAREVAL_HAS_HTTPLIB
#include "httplib.h"
#endif

#include "mareval/image.hpp"
#include "mareval/kg.hpp"
#include "mareval/mapper.hpp"
#include "mareval/prompt.hpp"
#include "mareval/util.hpp"

namespace mareval {

enum class BackendKind { mock_oracle, remote };

inline const char* backend_name(BackendKind k) {
  return k == BackendKind::mock_oracle ? "mock" : "remote";
}

inline BackendKind parse_backend(std::string_view s) {
  if (s == "mock") return BackendKind::mock_oracle;
  if (s == "remote") return BackendKind::remote;
  throw Error(ErrorKind::invalid_argument,
              "unknown backend '" + std::string(s) + "' (expected mock or remote)");
}

/// The mock backend answers from the knowledge graph itself, flipping each
/// independent decision to a wrong one with probability `error_rate`. Every
/// draw is keyed on (seed, prompt identity), so replies are reproducible and
/// independent of request order.
struct OracleConfig {
  const KnowledgeGraph* kg = nullptr;
  double error_rate = 0.0;
  std::uint64_t seed = 0;
};

struct BackendConfig {
  BackendKind kind = BackendKind::mock_oracle;
  std::string endpoint;  // full URL, e.g. http://host:port/v1/chat/completions
  std::string model = "mareval-mock";
  std::string auth_env = "MAREVAL_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 3;
  double backoff_initial_s = 0.5;
  int parallelism = 1;
  OracleConfig oracle;

  void validate() const {
    if (kind == BackendKind::remote && endpoint.empty())
      throw Error(ErrorKind::config, "remote backend requires an endpoint URL");
    if (kind == BackendKind::mock_oracle && oracle.kg == nullptr)
      throw Error(ErrorKind::config, "mock backend requires a knowledge graph");
    if (oracle.error_rate < 0.0 || oracle.error_rate > 1.0)
      throw Error(ErrorKind::config, "oracle error rate must be in [0, 1]");
    if (max_retries < 0) throw Error(ErrorKind::config, "max_retries must be >= 0");
    if (parallelism < 1) throw Error(ErrorKind::config, "parallelism must be >= 1");
  }
};

/// Record of one completed (or failed) request. The stored request is the
/// human-readable rendering — image refs, not encoded payloads — so
/// transcripts stay small and diffable.
struct Transcript {
  std::string key;
  nlohmann::json request;
  std::string response;
  double latency_s = 0.0;
  std::optional<long> tokens;
  std::optional<std::string> raw;  // raw response payload (remote backend)
  std::optional<std::string> error;

  nlohmann::json to_json() const {
    nlohmann::json j{{"key", key}, {"request", request}, {"response", response},
                     {"latency_s", latency_s}};
    if (tokens) j["tokens"] = *tokens;
    if (raw) j["raw"] = *raw;
    if (error) j["error"] = *error;
    return j;
  }

  static Transcript from_json(const nlohmann::json& j) {
    Transcript t;
    t.key = j.at("key").get<std::string>();
    t.request = j.value("request", nlohmann::json::array());
    t.response = j.value("response", std::string());
    t.latency_s = j.value("latency_s", 0.0);
    if (j.contains("tokens")) t.tokens = j["tokens"].get<long>();
    if (j.contains("raw")) t.raw = j["raw"].get<std::string>();
    if (j.contains("error")) t.error = j["error"].get<std::string>();
    return t;
  }
};

inline nlohmann::json render_request(const DialoguePrompt& prompt) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& turn : prompt.turns) {
    nlohmann::json t{{"role", role_name(turn.role)}, {"text", turn.text}};
    if (!turn.image.empty()) t["image"] = turn.image.render();
    turns.push_back(std::move(t));
  }
  return turns;
}

/// Materializes one ImageRef into an image_url content part. Local parts are
/// loaded, combined side by side when there are several, and inlined as a PNG
/// data URL; a URI reference passes through untouched and cannot be combined.
inline nlohmann::json materialize_image(const ImageRef& ref) {
  bool any_uri = false;
  for (const auto& p : ref.parts) any_uri = any_uri || is_uri(p);
  if (any_uri && ref.parts.size() > 1)
    throw Error(ErrorKind::invalid_argument,
                "cannot combine remote image URIs: " + ref.render());
  std::string url;
  if (any_uri) {
    url = ref.parts.front();
  } else {
    std::vector<std::filesystem::path> paths(ref.parts.begin(), ref.parts.end());
    url = encode_for_wire(combine_files(paths));
  }
  return {{"type", "image_url"}, {"image_url", {{"url", url}}}};
}

/// Builds the chat-completions `messages` array. Turns with an image carry a
/// content-part list (image first, then text); text-only turns carry a plain
/// string.
inline nlohmann::json build_chat_messages(const DialoguePrompt& prompt) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& turn : prompt.turns) {
    nlohmann::json msg{{"role", role_name(turn.role)}};
    if (turn.image.empty()) {
      msg["content"] = turn.text;
    } else {
      nlohmann::json parts = nlohmann::json::array();
      parts.push_back(materialize_image(turn.image));
      parts.push_back({{"type", "text"}, {"text", turn.text}});
      msg["content"] = std::move(parts);
    }
    messages.push_back(std::move(msg));
  }
  return messages;
}

/// Splits a model reply of the form "Relation: r. Answer: a." into its parts;
/// when no "Answer:" marker is present the whole reply is the answer.
struct ParsedAnswer {
  std::optional<std::string> relation;
  std::string answer;
};

inline ParsedAnswer parse_analogy_response(const std::string& text) {
  auto strip_tail = [](std::string s) {
    s = trim(s);
    while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?'))
      s.pop_back();
    return trim(s);
  };
  std::string lower = to_lower(text);
  ParsedAnswer out;
  auto ans_pos = lower.find("answer:");
  auto rel_pos = lower.find("relation:");
  if (ans_pos == std::string::npos) {
    if (rel_pos != std::string::npos) {
      out.relation = strip_tail(text.substr(rel_pos + 9));
      out.answer = *out.relation;
    } else {
      out.answer = strip_tail(text);
    }
    return out;
  }
  if (rel_pos != std::string::npos && rel_pos < ans_pos)
    out.relation = strip_tail(text.substr(rel_pos + 9, ans_pos - rel_pos - 9));
  out.answer = strip_tail(text.substr(ans_pos + 7));
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto comma = s.find(',', pos);
    if (comma == std::string::npos) {
      if (pos < s.size()) out.push_back(s.substr(pos));
      break;
    }
    out.push_back(s.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

inline const std::string& meta_get(const DialoguePrompt& p, const char* key) {
  auto it = p.meta.find(key);
  if (it == p.meta.end())
    throw Error(ErrorKind::invalid_argument,
                std::string("mock backend: prompt meta missing '") + key + "'");
  return it->second;
}

/// The relation the analogy rides on: some r linking (head, tail) such that
/// (query, r, gold) also holds. Without such a path the oracle cannot answer.
inline std::string shared_relation(const KnowledgeGraph& kg, const std::string& head,
                                   const std::string& tail, const std::string& query,
                                   const std::string& gold) {
  for (const auto& r : kg.relations_between(head, tail)) {
    if (contains(kg.tails_for(query, r), gold)) return r;
  }
  throw Error(ErrorKind::oracle_gap,
              "no relation links (" + head + ", " + tail + ") that also links (" +
                  query + ", " + gold + ")");
}

inline std::string oracle_relation_label(const OracleConfig& cfg,
                                         const DialoguePrompt& p,
                                         const std::string& true_relation) {
  const KnowledgeGraph& kg = *cfg.kg;
  Rng rng(mix64(cfg.seed, fnv1a64(meta_get(p, "question_id")), fnv1a64("relation")));
  bool wrong = rng.unit() < cfg.error_rate;
  if (!wrong || kg.relations().size() < 2) return kg.relation(true_relation).label;
  std::vector<std::string> others;
  for (const auto& [id, r] : kg.relations())
    if (id != true_relation) others.push_back(id);
  return kg.relation(others[rng.below(others.size())]).label;
}

inline std::string oracle_answer(const OracleConfig& cfg, const DialoguePrompt& p) {
  const KnowledgeGraph& kg = *cfg.kg;
  const std::string& gold = meta_get(p, "gold");
  const std::string& mode = meta_get(p, "mode");
  Rng rng(mix64(cfg.seed, fnv1a64(meta_get(p, "question_id")), fnv1a64("answer")));
  bool wrong = rng.unit() < cfg.error_rate;

  if (mode == "tf") {
    const std::string& candidate = meta_get(p, "tf_candidate");
    bool truth = candidate == gold;
    if (wrong) truth = !truth;
    return truth ? "True" : "False";
  }
  if (mode == "mc") {
    auto option_ids = split_csv(meta_get(p, "options"));
    std::size_t pick = option_ids.size();
    for (std::size_t i = 0; i < option_ids.size(); ++i)
      if (option_ids[i] == gold) pick = i;
    if (pick == option_ids.size())
      throw Error(ErrorKind::oracle_gap, "options do not contain the gold answer");
    if (wrong && option_ids.size() > 1) {
      std::size_t offset = 1 + rng.below(option_ids.size() - 1);
      pick = (pick + offset) % option_ids.size();
    }
    std::string out;
    out += char('A' + pick);
    out += ") ";
    out += kg.entity(option_ids[pick]).label;
    return out;
  }
  // qa
  if (!wrong || kg.entities().size() < 2) return kg.entity(gold).label;
  std::vector<std::string> others;
  for (const auto& [id, e] : kg.entities())
    if (id != gold) others.push_back(id);
  return kg.entity(others[rng.below(others.size())]).label;
}

inline std::string mock_step1_response(const OracleConfig& cfg,
                                       const DialoguePrompt& p,
                                       const std::string& task) {
  const KnowledgeGraph& kg = *cfg.kg;
  const std::string& h = meta_get(p, "head");
  const std::string& r = meta_get(p, "relation");
  const std::string& t = meta_get(p, "tail");
  if (!contains(kg.tails_for(h, r), t))
    throw Error(ErrorKind::oracle_gap,
                "triplet (" + h + ", " + r + ", " + t + ") is not in the graph");
  Rng rng(mix64(cfg.seed, fnv1a64(h + "\x1f" + r + "\x1f" + t), fnv1a64(task)));
  bool wrong = rng.unit() < cfg.error_rate;
  if (task == "relation") {
    if (!wrong || kg.relations().size() < 2) return kg.relation(r).label;
    std::vector<std::string> others;
    for (const auto& [id, rel] : kg.relations())
      if (id != r) others.push_back(id);
    return kg.relation(others[rng.below(others.size())]).label;
  }
  const std::string& target = task == "head" ? h : t;
  if (!wrong || kg.entities().size() < 2) return kg.entity(target).label;
  std::vector<std::string> others;
  for (const auto& [id, e] : kg.entities())
    if (id != target) others.push_back(id);
  return kg.entity(others[rng.below(others.size())]).label;
}

}  // namespace detail

/// Computes the mock backend's reply for one prompt from its meta entries.
inline std::string mock_oracle_response(const OracleConfig& cfg,
                                        const DialoguePrompt& prompt) {
  if (!cfg.kg)
    throw Error(ErrorKind::config, "mock backend has no knowledge graph");
  const KnowledgeGraph& kg = *cfg.kg;
  auto task_it = prompt.meta.find("task");
  if (task_it == prompt.meta.end())
    throw Error(ErrorKind::invalid_argument,
                "mock backend needs prompt meta to identify the task");
  const std::string& task = task_it->second;

  if (task == "head" || task == "relation" || task == "tail")
    return detail::mock_step1_response(cfg, prompt, task);

  if (task == "describe_entity") {
    const Entity& e = kg.entity(detail::meta_get(prompt, "entity"));
    return e.description.empty() ? e.label : e.description;
  }

  if (task == "describe_relation") {
    auto rels = kg.relations_between(detail::meta_get(prompt, "head"),
                                     detail::meta_get(prompt, "tail"));
    if (rels.empty())
      throw Error(ErrorKind::oracle_gap, "no relation connects the example pair");
    const Relation& r = kg.relation(rels.front());
    return r.description.empty() ? r.label : r.description;
  }

  if (task == "analogy") {
    std::string true_rel = detail::shared_relation(
        kg, detail::meta_get(prompt, "head"), detail::meta_get(prompt, "tail"),
        detail::meta_get(prompt, "query"), detail::meta_get(prompt, "gold"));
    std::string rel_label = detail::oracle_relation_label(cfg, prompt, true_rel);
    std::string answer = detail::oracle_answer(cfg, prompt);
    return "Relation: " + rel_label + ". Answer: " + answer + ".";
  }

  throw Error(ErrorKind::invalid_argument, "mock backend: unknown task '" + task + "'");
}

/// Direct oracle access for one question: the gold answer with probability
/// 1 - error_rate, otherwise a deterministic wrong pick. Raises oracle_gap
/// when the graph holds no relation path supporting the analogy.
inline std::string oracle_answer(const OracleConfig& cfg, const AnalogyQuestion& q,
                                 PromptMode mode,
                                 const std::vector<std::string>* options = nullptr,
                                 const std::string* tf_candidate = nullptr) {
  if (!cfg.kg) throw Error(ErrorKind::config, "oracle has no knowledge graph");
  DialoguePrompt p;
  p.meta["task"] = "analogy";
  p.meta["question_id"] = q.id;
  p.meta["mode"] = mode_name(mode);
  p.meta["head"] = q.example_head;
  p.meta["tail"] = q.example_tail;
  p.meta["query"] = q.query;
  p.meta["gold"] = q.gold_answer;
  if (options) p.meta["options"] = detail::join_ids(*options);
  if (tf_candidate) p.meta["tf_candidate"] = *tf_candidate;
  detail::shared_relation(*cfg.kg, q.example_head, q.example_tail, q.query,
                          q.gold_answer);
  return detail::oracle_answer(cfg, p);
}

namespace detail {

struct EndpointParts {
  std::string base;  // scheme://host[:port]
  std::string path;  // leading slash
};

inline EndpointParts split_endpoint(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos)
    throw Error(ErrorKind::config, "endpoint must be a full URL: " + endpoint);
  auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

}  // namespace detail

#ifdef MAREVAL_HAS_HTTPLIB
inline Transcript remote_complete(const BackendConfig& cfg,
                                  const DialoguePrompt& prompt,
                                  const std::string& key) {
  auto parts = detail::split_endpoint(cfg.endpoint);
  nlohmann::json body{{"model", cfg.model}, {"messages", build_chat_messages(prompt)}};
  const std::string payload = body.dump();

  httplib::Client client(parts.base);
  client.set_connection_timeout(std::chrono::milliseconds(long(cfg.timeout_s * 1000)));
  client.set_read_timeout(std::chrono::milliseconds(long(cfg.timeout_s * 1000)));
  client.set_write_timeout(std::chrono::milliseconds(long(cfg.timeout_s * 1000)));
  httplib::Headers headers;
  if (const char* token = std::getenv(cfg.auth_env.c_str()); token && *token)
    headers.emplace("Authorization", std::string("Bearer ") + token);

  Transcript t;
  t.key = key;
  t.request = render_request(prompt);

  std::string last_failure;
  auto started = std::chrono::steady_clock::now();
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      double delay = cfg.backoff_initial_s * double(1u << (attempt - 1));
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    auto res = client.Post(parts.path, headers, payload, "application/json");
    if (!res) {
      last_failure = "transport error: " + httplib::to_string(res.error());
      continue;  // retryable
    }
    if (res->status == 401 || res->status == 403)
      throw Error(ErrorKind::auth,
                  "authentication rejected (HTTP " + std::to_string(res->status) +
                      "); check $" + cfg.auth_env);
    if (res->status >= 500) {
      last_failure = "server error: HTTP " + std::to_string(res->status);
      continue;  // retryable
    }
    if (res->status != 200)
      throw Error(ErrorKind::transport,
                  "HTTP " + std::to_string(res->status) + ": " + res->body);
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::malformed_response,
                  std::string("response is not JSON: ") + e.what());
    }
    if (!reply.contains("choices") || !reply["choices"].is_array() ||
        reply["choices"].empty() ||
        !reply["choices"][0].contains("message") ||
        !reply["choices"][0]["message"].contains("content") ||
        !reply["choices"][0]["message"]["content"].is_string())
      throw Error(ErrorKind::malformed_response,
                  "response lacks choices[0].message.content");
    t.response = reply["choices"][0]["message"]["content"].get<std::string>();
    t.raw = res->body;
    if (reply.contains("usage") && reply["usage"].contains("total_tokens") &&
        reply["usage"]["total_tokens"].is_number())
      t.tokens = reply["usage"]["total_tokens"].get<long>();
    t.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                started)
                      .count();
    return t;
  }
  throw Error(ErrorKind::timeout, "retries exhausted; last failure: " + last_failure);
}

/// Remote sentence-embedding provider: POST {model, input: [...]} and read
/// {data: [{embedding: [...]}]} back, order-aligned with the inputs.
inline std::vector<EmbeddingVector> remote_embed(const std::string& endpoint,
                                                 const std::string& model,
                                                 const std::string& auth_env,
                                                 const std::vector<std::string>& inputs,
                                                 double timeout_s = 60.0) {
  if (inputs.empty()) return {};
  auto parts = detail::split_endpoint(endpoint);
  nlohmann::json body{{"model", model}, {"input", inputs}};
  httplib::Client client(parts.base);
  client.set_connection_timeout(std::chrono::milliseconds(long(timeout_s * 1000)));
  client.set_read_timeout(std::chrono::milliseconds(long(timeout_s * 1000)));
  httplib::Headers headers;
  if (const char* token = std::getenv(auth_env.c_str()); token && *token)
    headers.emplace("Authorization", std::string("Bearer ") + token);
  auto res = client.Post(parts.path, headers, body.dump(), "application/json");
  if (!res)
    throw Error(ErrorKind::transport,
                "embedding endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status == 401 || res->status == 403)
    throw Error(ErrorKind::auth, "embedding endpoint rejected credentials");
  if (res->status != 200)
    throw Error(ErrorKind::transport,
                "embedding endpoint HTTP " + std::to_string(res->status));
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::malformed_response,
                std::string("embedding response is not JSON: ") + e.what());
  }
  if (!reply.contains("data") || !reply["data"].is_array() ||
      reply["data"].size() != inputs.size())
    throw Error(ErrorKind::malformed_response,
                "embedding response data does not match input count");
  std::vector<EmbeddingVector> out;
  out.reserve(inputs.size());
  for (const auto& row : reply["data"]) {
    EmbeddingVector v;
    v.values = row.at("embedding").get<std::vector<double>>();
    if (v.values.empty())
      throw Error(ErrorKind::malformed_response, "empty embedding in response");
    out.push_back(std::move(v));
  }
  return out;
}
#endif  // MAREVAL_HAS_HTTPLIB

/// Completes one prompt against the configured backend.
inline Transcript complete(const BackendConfig& cfg, const DialoguePrompt& prompt,
                           const std::string& key) {
  cfg.validate();
  if (cfg.kind == BackendKind::mock_oracle) {
    Transcript t;
    t.key = key;
    t.request = render_request(prompt);
    t.response = mock_oracle_response(cfg.oracle, prompt);
    return t;
  }
#ifdef MAREVAL_HAS_HTTPLIB
  return remote_complete(cfg, prompt, key);
#else
  throw Error(ErrorKind::config, "remote backend support not compiled in");
#endif
}

/// Completes a batch with `cfg.parallelism` workers. Output order matches
/// input order; per-item failures are captured in Transcript::error rather
/// than aborting the batch, so results are identical at any parallelism.
/// `on_result` (optional) runs under a lock as each item finishes.
inline std::vector<Transcript> complete_batch(
    const BackendConfig& cfg,
    const std::vector<std::pair<std::string, DialoguePrompt>>& items,
    const std::function<void(const Transcript&)>& on_result = nullptr) {
  cfg.validate();
  std::vector<Transcript> results(items.size());
  if (items.empty()) return results;

  auto run_one = [&](std::size_t i) {
    try {
      results[i] = complete(cfg, items[i].second, items[i].first);
    } catch (const Error& e) {
      results[i].key = items[i].first;
      results[i].request = render_request(items[i].second);
      results[i].error = std::string(error_kind_name(e.kind())) + ": " + e.what();
    } catch (const std::exception& e) {
      results[i].key = items[i].first;
      results[i].request = render_request(items[i].second);
      results[i].error = std::string("error: ") + e.what();
    }
  };

  const int workers =
      int(std::min<std::size_t>(std::size_t(std::max(1, cfg.parallelism)), items.size()));
  std::mutex emit_mutex;
  if (workers == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      run_one(i);
      if (on_result) on_result(results[i]);
    }
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= items.size()) return;
        run_one(i);
        if (on_result) {
          std::lock_guard<std::mutex> lock(emit_mutex);
          on_result(results[i]);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  return results;
}

}  // namespace mareval

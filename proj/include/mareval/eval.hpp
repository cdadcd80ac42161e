#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mareval/jsonl.hpp"
#include "mareval/mapper.hpp"
#include "mareval/util.hpp"

namespace mareval {

/// Fraction of gold ranks that are present and <= k. A question whose gold
/// answer never appears in the ranking counts as a miss at every k.
inline double hits_at_k(const std::vector<std::optional<int>>& gold_ranks, int k) {
  if (gold_ranks.empty())
    throw Error(ErrorKind::empty_input, "hits@k over zero questions");
  if (k < 1) throw Error(ErrorKind::invalid_argument, "k must be >= 1");
  std::size_t hits = 0;
  for (const auto& r : gold_ranks)
    if (r && *r <= k) ++hits;
  return double(hits) / double(gold_ranks.size());
}

/// Mean reciprocal rank; an absent gold rank contributes zero.
inline double mean_reciprocal_rank(const std::vector<std::optional<int>>& gold_ranks) {
  if (gold_ranks.empty())
    throw Error(ErrorKind::empty_input, "MRR over zero questions");
  double sum = 0;
  for (const auto& r : gold_ranks)
    if (r) sum += 1.0 / double(*r);
  return sum / double(gold_ranks.size());
}

/// Outcome of one question after grounding. `gold_rank` is the 1-based rank
/// of the gold answer in the entity ranking; nullopt means the answer never
/// ranked (or the question failed — see `error`). The full grounded rankings
/// are persisted so gold ranks stay recomputable and Hits@k>1 reportable.
struct QuestionResult {
  std::string question_id;
  std::string subtask;  // modality code, e.g. "vvt"
  std::string mode;     // "qa", "mc" or "tf"
  std::string gold_id;
  std::optional<int> gold_rank;
  std::vector<ScoredItem> ranking;
  std::optional<std::string> predicted_id;
  std::optional<std::string> raw_answer;
  std::optional<std::string> gold_relation;
  std::optional<int> relation_gold_rank;
  std::vector<ScoredItem> relation_ranking;
  std::optional<std::string> predicted_relation;
  std::optional<std::string> error;
};

/// 1-based position of `id` inside a stored ranking, mirroring
/// GroundedRanking::rank_of so persisted results stay recomputable.
inline std::optional<int> rank_in(const std::vector<ScoredItem>& ranking,
                                  std::string_view id) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].id == id) return int(i + 1);
  return std::nullopt;
}

struct MetricsBlock {
  std::size_t n = 0;
  double hits1 = 0, hits3 = 0, hits5 = 0, hits10 = 0, mrr = 0;
};

inline MetricsBlock metrics_over(const std::vector<std::optional<int>>& ranks) {
  MetricsBlock m;
  m.n = ranks.size();
  if (ranks.empty()) return m;
  m.hits1 = hits_at_k(ranks, 1);
  m.hits3 = hits_at_k(ranks, 3);
  m.hits5 = hits_at_k(ranks, 5);
  m.hits10 = hits_at_k(ranks, 10);
  m.mrr = mean_reciprocal_rank(ranks);
  return m;
}

/// Aggregated evaluation over one run. Entity metrics cover all scored
/// questions; the relation block covers only questions that carry a gold
/// relation. Accuracy is hits@1 by definition.
struct EvalReport {
  MetricsBlock entity;
  double accuracy = 0;
  std::map<std::string, MetricsBlock> by_subtask;
  std::map<std::string, MetricsBlock> by_mode;
  std::optional<MetricsBlock> relation;
  std::size_t answered = 0;  // questions with no per-question error
  std::size_t failed = 0;    // questions recorded as errors (scored as misses)
};

inline EvalReport score_run(const std::vector<QuestionResult>& results) {
  if (results.empty())
    throw Error(ErrorKind::empty_input, "scoring an empty result set");
  EvalReport rep;
  std::vector<std::optional<int>> all;
  std::map<std::string, std::vector<std::optional<int>>> by_subtask, by_mode;
  std::vector<std::optional<int>> rel_ranks;
  for (const auto& r : results) {
    all.push_back(r.gold_rank);
    by_subtask[r.subtask].push_back(r.gold_rank);
    by_mode[r.mode].push_back(r.gold_rank);
    if (r.gold_relation) rel_ranks.push_back(r.relation_gold_rank);
    if (r.error)
      ++rep.failed;
    else
      ++rep.answered;
  }
  rep.entity = metrics_over(all);
  rep.accuracy = rep.entity.hits1;
  for (const auto& [k, v] : by_subtask) rep.by_subtask[k] = metrics_over(v);
  for (const auto& [k, v] : by_mode) rep.by_mode[k] = metrics_over(v);
  if (!rel_ranks.empty()) rep.relation = metrics_over(rel_ranks);
  return rep;
}

namespace detail {

inline nlohmann::json metrics_to_json(const MetricsBlock& m) {
  return {{"n", m.n},     {"hits1", m.hits1},   {"hits3", m.hits3},
          {"hits5", m.hits5}, {"hits10", m.hits10}, {"mrr", m.mrr}};
}

inline MetricsBlock metrics_from_json(const nlohmann::json& j) {
  MetricsBlock m;
  m.n = j.at("n").get<std::size_t>();
  m.hits1 = j.at("hits1").get<double>();
  m.hits3 = j.at("hits3").get<double>();
  m.hits5 = j.at("hits5").get<double>();
  m.hits10 = j.at("hits10").get<double>();
  m.mrr = j.at("mrr").get<double>();
  return m;
}

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
  return buf;
}

}  // namespace detail

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["entity"] = detail::metrics_to_json(rep.entity);
  j["accuracy"] = rep.accuracy;
  j["answered"] = rep.answered;
  j["failed"] = rep.failed;
  j["by_subtask"] = nlohmann::json::object();
  for (const auto& [k, v] : rep.by_subtask)
    j["by_subtask"][k] = detail::metrics_to_json(v);
  j["by_mode"] = nlohmann::json::object();
  for (const auto& [k, v] : rep.by_mode) j["by_mode"][k] = detail::metrics_to_json(v);
  if (rep.relation) j["relation"] = detail::metrics_to_json(*rep.relation);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport rep;
  rep.entity = detail::metrics_from_json(j.at("entity"));
  rep.accuracy = j.at("accuracy").get<double>();
  rep.answered = j.at("answered").get<std::size_t>();
  rep.failed = j.at("failed").get<std::size_t>();
  for (const auto& [k, v] : j.at("by_subtask").items())
    rep.by_subtask[k] = detail::metrics_from_json(v);
  for (const auto& [k, v] : j.at("by_mode").items())
    rep.by_mode[k] = detail::metrics_from_json(v);
  if (j.contains("relation"))
    rep.relation = detail::metrics_from_json(j.at("relation"));
  return rep;
}

/// Markdown report: an overall line plus Table-1-style breakdown rows with
/// one-decimal percentages.
inline std::string report_to_markdown(const EvalReport& rep) {
  std::string md;
  md += "# Evaluation report\n\n";
  md += "Questions scored: " + std::to_string(rep.entity.n) + " (" +
        std::to_string(rep.answered) + " answered, " + std::to_string(rep.failed) +
        " failed)\n\n";
  auto row = [](const std::string& name, const MetricsBlock& m) {
    return "| " + name + " | " + std::to_string(m.n) + " | " + detail::pct(m.hits1) +
           " | " + detail::pct(m.hits3) + " | " + detail::pct(m.hits5) + " | " +
           detail::pct(m.hits10) + " | " + detail::pct(m.mrr) + " |\n";
  };
  md += "| Split | N | Hits@1 | Hits@3 | Hits@5 | Hits@10 | MRR |\n";
  md += "|---|---|---|---|---|---|---|\n";
  md += row("overall", rep.entity);
  for (const auto& [k, v] : rep.by_subtask) md += row("subtask " + k, v);
  for (const auto& [k, v] : rep.by_mode) md += row("mode " + k, v);
  if (rep.relation) md += row("relation", *rep.relation);
  md += "\nAccuracy (Hits@1): " + detail::pct(rep.accuracy) + "\n";
  return md;
}

inline std::string report_to_csv(const EvalReport& rep) {
  std::string csv = "split,n,hits1,hits3,hits5,hits10,mrr\n";
  char buf[160];
  auto row = [&](const std::string& name, const MetricsBlock& m) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", name.c_str(),
                  m.n, m.hits1, m.hits3, m.hits5, m.hits10, m.mrr);
    csv += buf;
  };
  row("overall", rep.entity);
  for (const auto& [k, v] : rep.by_subtask) row("subtask_" + k, v);
  for (const auto& [k, v] : rep.by_mode) row("mode_" + k, v);
  if (rep.relation) row("relation", *rep.relation);
  return csv;
}

/// Flattens both reports to metric paths and returns (a, b, delta) rows where
/// delta is in percentage points. Reports must cover the same splits.
struct DiffRow {
  double a = 0, b = 0, delta_pp = 0;
};

inline std::map<std::string, DiffRow> compare_reports(const EvalReport& a,
                                                      const EvalReport& b) {
  auto flatten = [](const EvalReport& rep) {
    std::map<std::string, double> flat;
    auto put = [&](const std::string& prefix, const MetricsBlock& m) {
      flat[prefix + ".hits1"] = m.hits1;
      flat[prefix + ".hits3"] = m.hits3;
      flat[prefix + ".hits5"] = m.hits5;
      flat[prefix + ".hits10"] = m.hits10;
      flat[prefix + ".mrr"] = m.mrr;
    };
    put("entity", rep.entity);
    for (const auto& [k, v] : rep.by_subtask) put("subtask." + k, v);
    for (const auto& [k, v] : rep.by_mode) put("mode." + k, v);
    if (rep.relation) put("relation", *rep.relation);
    return flat;
  };
  auto fa = flatten(a), fb = flatten(b);
  std::map<std::string, DiffRow> out;
  for (const auto& [k, va] : fa) {
    auto it = fb.find(k);
    if (it == fb.end())
      throw Error(ErrorKind::invalid_argument, "metric missing from second report: " + k);
    out[k] = DiffRow{va, it->second, (it->second - va) * 100.0};
  }
  for (const auto& [k, vb] : fb)
    if (!fa.count(k))
      throw Error(ErrorKind::invalid_argument, "metric missing from first report: " + k);
  return out;
}

namespace detail {

inline nlohmann::json ranking_to_json(const std::vector<ScoredItem>& ranking) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : ranking) arr.push_back({s.id, s.score});
  return arr;
}

inline std::vector<ScoredItem> ranking_from_json(const nlohmann::json& arr) {
  std::vector<ScoredItem> out;
  for (const auto& pair : arr)
    out.push_back({pair.at(0).get<std::string>(), "", pair.at(1).get<double>()});
  return out;
}

}  // namespace detail

inline nlohmann::json result_to_json(const QuestionResult& r) {
  nlohmann::json j{{"id", r.question_id}, {"subtask", r.subtask}, {"mode", r.mode},
                   {"gold_id", r.gold_id}};
  j["gold_rank"] = r.gold_rank ? nlohmann::json(*r.gold_rank) : nlohmann::json();
  if (!r.ranking.empty()) j["ranking"] = detail::ranking_to_json(r.ranking);
  if (r.predicted_id) j["predicted_id"] = *r.predicted_id;
  if (r.raw_answer) j["raw_answer"] = *r.raw_answer;
  if (r.gold_relation) {
    j["gold_relation"] = *r.gold_relation;
    j["relation_gold_rank"] = r.relation_gold_rank
                                  ? nlohmann::json(*r.relation_gold_rank)
                                  : nlohmann::json();
  }
  if (!r.relation_ranking.empty())
    j["relation_ranking"] = detail::ranking_to_json(r.relation_ranking);
  if (r.predicted_relation) j["predicted_relation"] = *r.predicted_relation;
  if (r.error) j["error"] = *r.error;
  return j;
}

inline QuestionResult result_from_json(const nlohmann::json& j) {
  QuestionResult r;
  r.question_id = j.at("id").get<std::string>();
  r.subtask = j.at("subtask").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.gold_id = j.at("gold_id").get<std::string>();
  if (j.contains("gold_rank") && !j["gold_rank"].is_null())
    r.gold_rank = j["gold_rank"].get<int>();
  if (j.contains("ranking")) r.ranking = detail::ranking_from_json(j["ranking"]);
  if (j.contains("predicted_id")) r.predicted_id = j["predicted_id"].get<std::string>();
  if (j.contains("raw_answer")) r.raw_answer = j["raw_answer"].get<std::string>();
  if (j.contains("gold_relation")) {
    r.gold_relation = j["gold_relation"].get<std::string>();
    if (j.contains("relation_gold_rank") && !j["relation_gold_rank"].is_null())
      r.relation_gold_rank = j["relation_gold_rank"].get<int>();
  }
  if (j.contains("relation_ranking"))
    r.relation_ranking = detail::ranking_from_json(j["relation_ranking"]);
  if (j.contains("predicted_relation"))
    r.predicted_relation = j["predicted_relation"].get<std::string>();
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  return r;
}

inline void write_results(const std::filesystem::path& path,
                          std::vector<QuestionResult> results) {
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) {
    return a.question_id < b.question_id;
  });
  std::vector<nlohmann::json> recs;
  recs.reserve(results.size());
  for (const auto& r : results) recs.push_back(result_to_json(r));
  write_jsonl(path, recs);
}

inline std::vector<QuestionResult> read_results(const std::filesystem::path& path) {
  std::vector<QuestionResult> out;
  for_each_jsonl(path, [&](std::size_t, const nlohmann::json& rec) {
    out.push_back(result_from_json(rec));
  });
  return out;
}

}  // namespace mareval

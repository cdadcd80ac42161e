#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mareval/util.hpp"

namespace mareval {

constexpr std::size_t kLocalEmbeddingDim = 4096;

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

/// Dot product over unit-normalized inputs would suffice, but callers may pass
/// arbitrary vectors, so the full cosine is computed and clamped to [-1, 1].
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::dimension_mismatch,
                "cosine over vectors of size " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  if (a.size() == 0)
    throw Error(ErrorKind::empty_input, "cosine over empty vectors");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw Error(ErrorKind::invalid_argument, "cosine over a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// Canonical form used for both vocabulary labels and model output before
/// embedding or exact comparison: trimmed, lower-cased, inner whitespace runs
/// collapsed to single spaces.
inline std::string normalize_label(std::string_view text) {
  std::string lowered = to_lower(trim(text));
  std::string out;
  out.reserve(lowered.size());
  bool in_space = false;
  for (char c : lowered) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

/// Hashed character-trigram term-frequency embedding, L2-normalized. Strings
/// shorter than three characters hash as a single gram so nothing embeds to
/// the zero vector.
inline EmbeddingVector embed_local(std::string_view text) {
  std::string norm = normalize_label(text);
  if (norm.empty())
    throw Error(ErrorKind::empty_input, "cannot embed empty text");
  EmbeddingVector v;
  v.values.assign(kLocalEmbeddingDim, 0.0);
  auto bump = [&](std::string_view gram) {
    v.values[fnv1a64(gram) % kLocalEmbeddingDim] += 1.0;
  };
  if (norm.size() < 3) {
    bump(norm);
  } else {
    for (std::size_t i = 0; i + 3 <= norm.size(); ++i)
      bump(std::string_view(norm).substr(i, 3));
  }
  double n2 = 0;
  for (double x : v.values) n2 += x * x;
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v.values) x *= inv;
  return v;
}

using EmbedFn = std::function<EmbeddingVector(std::string_view)>;

struct VocabItem {
  std::string id;
  std::string label;
};

struct ScoredItem {
  std::string id;
  std::string label;
  double score = 0;
};

/// Full ranking of a vocabulary against one piece of model output.
struct GroundedRanking {
  std::vector<ScoredItem> ranked;  // score desc, ties by id asc
  bool exact_match = false;

  /// 1-based rank of the item, or nullopt if the id is not in the vocabulary.
  std::optional<int> rank_of(std::string_view id) const {
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (ranked[i].id == id) return int(i + 1);
    return std::nullopt;
  }

  const ScoredItem& top() const {
    if (ranked.empty())
      throw Error(ErrorKind::empty_input, "ranking is empty");
    return ranked.front();
  }
};

/// A vocabulary (entity or relation labels) with precomputed embeddings and an
/// exact-match index over normalized labels.
class VocabIndex {
 public:
  static VocabIndex build(std::vector<VocabItem> items,
                          const EmbedFn& embed = embed_local,
                          std::string provider = "local") {
    VocabIndex idx;
    idx.provider_ = std::move(provider);
    std::sort(items.begin(), items.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    for (auto& item : items) {
      std::string norm = normalize_label(item.label);
      idx.embeddings_.push_back(embed(item.label));
      // First id wins when two labels normalize identically.
      idx.exact_.emplace(norm, idx.items_.size());
      idx.items_.push_back(std::move(item));
    }
    return idx;
  }

  const std::vector<VocabItem>& items() const { return items_; }
  const std::string& provider() const { return provider_; }
  std::size_t size() const { return items_.size(); }

  const EmbeddingVector& embedding(std::size_t i) const { return embeddings_[i]; }

  std::optional<std::size_t> exact_lookup(std::string_view normalized) const {
    auto it = exact_.find(std::string(normalized));
    if (it == exact_.end()) return std::nullopt;
    return it->second;
  }

  /// Cache format: one line per item, "id<TAB>label<TAB>c0 c1 c2 ...".
  void save_cache(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write cache: " + path.string());
    out << "mareval-embedding-cache v1 " << provider_ << " " << items_.size() << "\n";
    char buf[64];
    for (std::size_t i = 0; i < items_.size(); ++i) {
      out << items_[i].id << '\t' << items_[i].label << '\t';
      const auto& vals = embeddings_[i].values;
      for (std::size_t j = 0; j < vals.size(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", vals[j]);
        if (j) out << ' ';
        out << buf;
      }
      out << '\n';
    }
  }

  static VocabIndex load_cache(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read cache: " + path.string());
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::string magic, version, provider;
    std::size_t count = 0;
    hs >> magic >> version >> provider >> count;
    if (magic != "mareval-embedding-cache" || version != "v1")
      throw Error(ErrorKind::parse, "bad cache header: " + path.string());
    VocabIndex idx;
    idx.provider_ = provider;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto t1 = line.find('\t');
      auto t2 = line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos)
        throw Error(ErrorKind::parse, "bad cache line: " + line);
      VocabItem item{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1)};
      if (item.id.empty() ||
          item.id.find_first_of(" \t") != std::string::npos)
        throw Error(ErrorKind::parse, "bad cache id: '" + item.id + "'");
      EmbeddingVector v;
      std::istringstream vs(line.substr(t2 + 1));
      double x;
      while (vs >> x) v.values.push_back(x);
      idx.exact_.emplace(normalize_label(item.label), idx.items_.size());
      idx.items_.push_back(std::move(item));
      idx.embeddings_.push_back(std::move(v));
    }
    if (idx.items_.size() != count)
      throw Error(ErrorKind::parse, "cache truncated: " + path.string());
    return idx;
  }

 private:
  std::vector<VocabItem> items_;
  std::vector<EmbeddingVector> embeddings_;
  std::map<std::string, std::size_t> exact_;
  std::string provider_;
};

/// Strips answer decorations before grounding: quotes, a leading option letter
/// ("A)", "b.", "(C)"), and trailing sentence punctuation.
inline std::string normalize_answer(std::string_view raw) {
  std::string s = trim(raw);
  auto strip_quotes = [&]() {
    while (s.size() >= 2 &&
           ((s.front() == '"' && s.back() == '"') ||
            (s.front() == '\'' && s.back() == '\''))) {
      s = trim(s.substr(1, s.size() - 2));
    }
  };
  strip_quotes();
  // Option-letter prefix, e.g. "A) water", "(b) water", "C. water".
  std::string candidate = s;
  if (!candidate.empty() && candidate.front() == '(') {
    auto close = candidate.find(')');
    if (close != std::string::npos && close <= 2) candidate = trim(candidate.substr(close + 1));
  }
  if (candidate.size() >= 2 && std::isalpha(static_cast<unsigned char>(candidate[0])) &&
      (candidate[1] == ')' || candidate[1] == '.' || candidate[1] == ':')) {
    std::string rest = trim(candidate.substr(2));
    if (!rest.empty()) candidate = rest;
  }
  if (!candidate.empty()) s = candidate;
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?'))
    s.pop_back();
  s = trim(s);
  strip_quotes();
  return s;
}

/// Grounds free-form model output onto a vocabulary: full cosine ranking with
/// an exact normalized-label match forced to the top at score 1.0. Ties break
/// by id ascending so rankings are reproducible.
inline GroundedRanking ground(std::string_view output, const VocabIndex& vocab,
                              const EmbedFn& embed = embed_local) {
  if (vocab.size() == 0)
    throw Error(ErrorKind::invalid_argument, "grounding against an empty vocabulary");
  std::string norm = normalize_label(normalize_answer(output));
  if (norm.empty())
    throw Error(ErrorKind::ungroundable,
                "output reduces to empty text: '" + std::string(output) + "'");
  GroundedRanking result;
  EmbeddingVector q = embed(norm);
  auto exact = vocab.exact_lookup(norm);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    double score = cosine_similarity(q, vocab.embedding(i));
    if (exact && *exact == i) {
      score = 1.0;
      result.exact_match = true;
    }
    result.ranked.push_back({vocab.items()[i].id, vocab.items()[i].label, score});
  }
  std::stable_sort(result.ranked.begin(), result.ranked.end(),
                   [](const ScoredItem& a, const ScoredItem& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.id < b.id;
                   });
  return result;
}

}  // namespace mareval

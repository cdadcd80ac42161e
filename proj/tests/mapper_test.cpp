#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mareval/mapper.hpp"
#include "mareval/util.hpp"
#include "support/synth.hpp"

namespace mareval {
namespace {

TEST(NormalizeLabel, TrimsLowersAndCollapses) {
  EXPECT_EQ(normalize_label("  Baked  Goods "), "baked goods");
  EXPECT_EQ(normalize_label("Water"), "water");
  EXPECT_EQ(normalize_label("\tTabs\there\n"), "tabs here");
  EXPECT_EQ(normalize_label(""), "");
  EXPECT_EQ(normalize_label("   "), "");
}

TEST(NormalizeAnswer, StripsDecorations) {
  EXPECT_EQ(normalize_answer("B) water"), "water");
  EXPECT_EQ(normalize_answer("(b) Water."), "Water");
  EXPECT_EQ(normalize_answer("C. berlin"), "berlin");
  EXPECT_EQ(normalize_answer("d: atom"), "atom");
  EXPECT_EQ(normalize_answer("\"atom\""), "atom");
  EXPECT_EQ(normalize_answer("'quoted'!"), "quoted");
  EXPECT_EQ(normalize_answer("plain answer?"), "plain answer");
  // A bare option letter keeps the letter: there is no text after it.
  EXPECT_EQ(normalize_answer("A."), "A");
  // Words that merely start with letter-dot patterns are not mangled.
  EXPECT_EQ(normalize_answer("e.g. example"), "g. example");
  EXPECT_EQ(normalize_answer(""), "");
}

TEST(Cosine, HandComputedValues) {
  EmbeddingVector a{{1, 2, 3}};
  EmbeddingVector b{{4, 5, 6}};
  // dot = 32, |a| = sqrt(14), |b| = sqrt(77): cos = 32 / sqrt(1078).
  EXPECT_NEAR(cosine_similarity(a, b), 32.0 / std::sqrt(1078.0), 1e-15);
  EmbeddingVector ex{{1, 0}};
  EmbeddingVector ey{{0, 1}};
  EXPECT_DOUBLE_EQ(cosine_similarity(ex, ey), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(ex, ex), 1.0);
  EmbeddingVector neg{{-1, 0}};
  EXPECT_DOUBLE_EQ(cosine_similarity(ex, neg), -1.0);
}

TEST(Cosine, RejectsDegenerateInput) {
  EmbeddingVector a{{1, 2}};
  EmbeddingVector b{{1, 2, 3}};
  EXPECT_THROW(cosine_similarity(a, b), Error);
  EmbeddingVector empty;
  EXPECT_THROW(cosine_similarity(empty, empty), Error);
  EmbeddingVector zero{{0, 0}};
  EXPECT_THROW(cosine_similarity(a, zero), Error);
  try {
    cosine_similarity(a, b);
    FAIL() << "expected dimension_mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension_mismatch);
  }
}

// Independent reference for the local embedding: hashed character-trigram
// term frequencies, L2-normalized, written without reusing the library's
// loop structure.
EmbeddingVector reference_embed(const std::string& raw) {
  std::string s = normalize_label(raw);
  std::vector<std::string> grams;
  if (s.size() < 3) {
    grams.push_back(s);
  } else {
    for (std::size_t i = 0; i + 3 <= s.size(); ++i) grams.push_back(s.substr(i, 3));
  }
  EmbeddingVector v;
  v.values.assign(kLocalEmbeddingDim, 0.0);
  for (const auto& g : grams) v.values[fnv1a64(g) % kLocalEmbeddingDim] += 1.0;
  double norm = 0;
  for (double x : v.values) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v.values) x /= norm;
  return v;
}

TEST(EmbedLocal, MatchesTrigramReference) {
  for (const char* text : {"water", "baked goods", "Dream Theater EP", "ab",
                           "x", "the capital of France"}) {
    EmbeddingVector lib = embed_local(text);
    EmbeddingVector ref = reference_embed(text);
    ASSERT_EQ(lib.size(), ref.size());
    for (std::size_t i = 0; i < lib.size(); ++i)
      ASSERT_DOUBLE_EQ(lib.values[i], ref.values[i]) << text << " @ " << i;
  }
}

TEST(EmbedLocal, UnitNormAndDeterminism) {
  Rng rng(fnv1a64("embed-determinism"));
  for (int trial = 0; trial < 30; ++trial) {
    std::string s;
    std::size_t len = 1 + rng.below(12);
    for (std::size_t i = 0; i < len; ++i) s += char('a' + rng.below(26));
    EmbeddingVector v = embed_local(s);
    double norm = 0;
    for (double x : v.values) norm += x * x;
    EXPECT_NEAR(norm, 1.0, 1e-12) << s;
    EmbeddingVector again = embed_local(s);
    EXPECT_EQ(v.values, again.values) << s;
  }
  EXPECT_THROW(embed_local("   "), Error);
}

std::vector<VocabItem> fruit_vocab() {
  return {{"e1", "baked good"}, {"e2", "water bottle"}, {"e3", "waterfall"},
          {"e4", "atom"},       {"e5", "Berlin"},       {"e6", "bird of prey"}};
}

TEST(Ground, ExactMatchForcedToTop) {
  VocabIndex vocab = VocabIndex::build(fruit_vocab());
  GroundedRanking g = ground("  BERLIN ", vocab);
  EXPECT_TRUE(g.exact_match);
  EXPECT_EQ(g.top().id, "e5");
  EXPECT_DOUBLE_EQ(g.top().score, 1.0);
  EXPECT_EQ(g.rank_of("e5"), std::optional<int>(1));
  EXPECT_EQ(g.ranked.size(), vocab.size());
}

TEST(Ground, OptionLetterPrefixStillGrounds) {
  VocabIndex vocab = VocabIndex::build(fruit_vocab());
  GroundedRanking g = ground("B) water bottle.", vocab);
  EXPECT_TRUE(g.exact_match);
  EXPECT_EQ(g.top().id, "e2");
}

TEST(Ground, NearMissRanksClosestLabelFirst) {
  VocabIndex vocab = VocabIndex::build(fruit_vocab());
  // "baked goods" shares every trigram of "baked good" plus one extra.
  GroundedRanking g = ground("baked goods", vocab);
  EXPECT_FALSE(g.exact_match);
  EXPECT_EQ(g.top().id, "e1");
  EXPECT_LT(g.top().score, 1.0);
  EXPECT_GT(g.top().score, 0.8);
}

TEST(Ground, ScoresBoundedAndSorted) {
  VocabIndex vocab = VocabIndex::build(fruit_vocab());
  Rng rng(fnv1a64("ground-bounds"));
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    std::size_t len = 1 + rng.below(16);
    for (std::size_t i = 0; i < len; ++i)
      s += char(rng.unit() < 0.2 ? ' ' : char('a' + rng.below(26)));
    if (normalize_label(s).empty()) continue;
    GroundedRanking g = ground(s, vocab);
    for (std::size_t i = 0; i < g.ranked.size(); ++i) {
      EXPECT_GE(g.ranked[i].score, 0.0);  // TF vectors are nonnegative
      EXPECT_LE(g.ranked[i].score, 1.0);
      if (i) {
        EXPECT_TRUE(g.ranked[i - 1].score > g.ranked[i].score ||
                    (g.ranked[i - 1].score == g.ranked[i].score &&
                     g.ranked[i - 1].id < g.ranked[i].id));
      }
    }
  }
}

TEST(Ground, TiesBreakByIdAscending) {
  // Two identical labels under different ids embed identically, so a
  // non-exact query scores them with the same double; id breaks the tie.
  VocabIndex vocab = VocabIndex::build(
      {{"z9", "mirror"}, {"a1", "mirror"}, {"m5", "window"}});
  GroundedRanking g = ground("mirrors", vocab);
  EXPECT_FALSE(g.exact_match);
  ASSERT_GE(g.ranked.size(), 2u);
  EXPECT_EQ(g.ranked[0].id, "a1");
  EXPECT_EQ(g.ranked[1].id, "z9");
  EXPECT_DOUBLE_EQ(g.ranked[0].score, g.ranked[1].score);

  // An exact hit is pinned to the first matching id at score 1.0.
  GroundedRanking exact = ground("Mirror", vocab);
  EXPECT_TRUE(exact.exact_match);
  EXPECT_EQ(exact.top().id, "a1");
  EXPECT_DOUBLE_EQ(exact.top().score, 1.0);
}

TEST(Ground, VocabOrderDoesNotMatter) {
  auto items = fruit_vocab();
  VocabIndex a = VocabIndex::build(items);
  std::reverse(items.begin(), items.end());
  VocabIndex b = VocabIndex::build(items);
  for (const char* query : {"watr bottle", "bakedgood", "berlin!", "adom"}) {
    GroundedRanking ga = ground(query, a);
    GroundedRanking gb = ground(query, b);
    ASSERT_EQ(ga.ranked.size(), gb.ranked.size());
    for (std::size_t i = 0; i < ga.ranked.size(); ++i) {
      EXPECT_EQ(ga.ranked[i].id, gb.ranked[i].id) << query;
      EXPECT_DOUBLE_EQ(ga.ranked[i].score, gb.ranked[i].score) << query;
    }
  }
}

TEST(Ground, DegenerateInputs) {
  VocabIndex vocab = VocabIndex::build(fruit_vocab());
  EXPECT_THROW(ground("", vocab), Error);
  EXPECT_THROW(ground("  '' ", vocab), Error);
  try {
    ground("   ", vocab);
    FAIL() << "expected ungroundable";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ungroundable);
  }
  VocabIndex empty = VocabIndex::build({});
  EXPECT_THROW(ground("water", empty), Error);
}

TEST(VocabCache, RoundTripIsExact) {
  auto dir = test::scratch_dir("cache");
  VocabIndex vocab = VocabIndex::build(fruit_vocab());
  vocab.save_cache(dir / "v.cache");
  VocabIndex back = VocabIndex::load_cache(dir / "v.cache");
  EXPECT_EQ(back.provider(), vocab.provider());
  ASSERT_EQ(back.size(), vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    EXPECT_EQ(back.items()[i].id, vocab.items()[i].id);
    EXPECT_EQ(back.items()[i].label, vocab.items()[i].label);
    // %.17g round-trips doubles exactly.
    EXPECT_EQ(back.embedding(i).values, vocab.embedding(i).values);
  }
  // Grounding through the cached index is bit-identical.
  GroundedRanking ga = ground("watter", vocab);
  GroundedRanking gb = ground("watter", back);
  ASSERT_EQ(ga.ranked.size(), gb.ranked.size());
  for (std::size_t i = 0; i < ga.ranked.size(); ++i) {
    EXPECT_EQ(ga.ranked[i].id, gb.ranked[i].id);
    EXPECT_DOUBLE_EQ(ga.ranked[i].score, gb.ranked[i].score);
  }
  std::filesystem::remove_all(dir);
}

TEST(VocabCache, RejectsCorruptFiles) {
  auto dir = test::scratch_dir("cache-bad");
  {
    std::ofstream out(dir / "bad-header.cache");
    out << "some-other-format v9 local 1\n";
  }
  EXPECT_THROW(VocabIndex::load_cache(dir / "bad-header.cache"), Error);
  {
    std::ofstream out(dir / "truncated.cache");
    out << "mareval-embedding-cache v1 local 3\n";
    out << "e1\tlabel one\t0.5 0.5\n";
  }
  try {
    VocabIndex::load_cache(dir / "truncated.cache");
    FAIL() << "expected parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
  }
  {
    std::ofstream out(dir / "bad-id.cache");
    out << "mareval-embedding-cache v1 local 1\n";
    out << "id with space\tlabel\t1.0\n";
  }
  EXPECT_THROW(VocabIndex::load_cache(dir / "bad-id.cache"), Error);
  EXPECT_THROW(VocabIndex::load_cache(dir / "missing.cache"), Error);
  std::filesystem::remove_all(dir);
}

TEST(VocabIndex, ExactLookupFirstIdWins) {
  VocabIndex vocab = VocabIndex::build(
      {{"b2", "Copy"}, {"a1", "copy "}, {"c3", "other"}});
  auto hit = vocab.exact_lookup("copy");
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(vocab.items()[*hit].id, "a1");
  EXPECT_FALSE(vocab.exact_lookup("Copy").has_value());  // callers normalize
}

}  // namespace
}  // namespace mareval

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "mareval/client.hpp"
#include "mareval/image.hpp"
#include "mareval/kg.hpp"
#include "mareval/prompt.hpp"
#include "support/synth.hpp"

#ifdef MAREVAL_HAS_HTTPLIB
#include "httplib.h"
#endif

namespace mareval {
namespace {

namespace fs = std::filesystem;

const fs::path kFixtures = MAREVAL_FIXTURE_DIR;
const fs::path kMini = kFixtures / "mini_kg";

OracleConfig oracle_for(const KnowledgeGraph& kg, double error_rate = 0.0,
                        std::uint64_t seed = 0) {
  OracleConfig cfg;
  cfg.kg = &kg;
  cfg.error_rate = error_rate;
  cfg.seed = seed;
  return cfg;
}

AnalogyQuestion m01(const KnowledgeGraph& kg) {
  return load_questions(kMini / "questions.jsonl", kg)[0];
}

TEST(MockOracle, AnswersAnalogyFromTheGraph) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  AnalogyQuestion q = m01(kg);
  DialoguePrompt d = build_step2(q, kg, PromptMode::qa);
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), d),
            "Relation: class of. Answer: water.");
}

TEST(MockOracle, MultipleChoiceAnswersWithOptionLetter) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  AnalogyQuestion q = m01(kg);
  std::vector<std::string> options = {"frost", "water", "steam"};
  DialoguePrompt d = build_step2(q, kg, PromptMode::multiple_choice, &options);
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), d),
            "Relation: class of. Answer: B) water.");
  // Options that omit the gold answer are a gap in the oracle's knowledge.
  std::vector<std::string> wrong = {"frost", "steam"};
  DialoguePrompt bad = build_step2(q, kg, PromptMode::multiple_choice, &wrong);
  bad.meta["options"] = "frost,steam";
  try {
    mock_oracle_response(oracle_for(kg), bad);
    FAIL() << "expected oracle_gap";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::oracle_gap);
  }
}

TEST(MockOracle, TrueFalseComparesCandidateToGold) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  AnalogyQuestion q = m01(kg);
  std::string right = "water", wrong = "frost";
  DialoguePrompt dt = build_step2(q, kg, PromptMode::true_false, nullptr, &right);
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), dt),
            "Relation: class of. Answer: True.");
  DialoguePrompt df = build_step2(q, kg, PromptMode::true_false, nullptr, &wrong);
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), df),
            "Relation: class of. Answer: False.");
  // Full error rate flips the judgement deterministically.
  EXPECT_EQ(mock_oracle_response(oracle_for(kg, 1.0, 5), dt),
            mock_oracle_response(oracle_for(kg, 1.0, 5), dt));
  auto parsed = parse_analogy_response(mock_oracle_response(oracle_for(kg, 1.0, 5), dt));
  EXPECT_EQ(parsed.answer, "False");
}

TEST(MockOracle, ErrorRateOneNeverAnswersGold) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  AnalogyQuestion q = m01(kg);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::string reply = oracle_answer(oracle_for(kg, 1.0, seed), q, PromptMode::qa);
    EXPECT_NE(reply, kg.entity(q.gold_answer).label) << seed;
    // Deterministic per seed.
    EXPECT_EQ(reply, oracle_answer(oracle_for(kg, 1.0, seed), q, PromptMode::qa));
  }
}

TEST(MockOracle, GapWhenNoRelationPathSupportsTheAnalogy) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  AnalogyQuestion q = m01(kg);
  q.gold_answer = "frost";  // (snow, class_of, frost) is not in the graph
  try {
    oracle_answer(oracle_for(kg), q, PromptMode::qa);
    FAIL() << "expected oracle_gap";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::oracle_gap);
  }
}

TEST(MockOracle, RelationLabelRidesTheSharedPath) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  // (frost, made_of, ice) example; query frost with gold water: made_of is
  // the only relation linking both pairs even though frost/water and
  // frost/ice are each connected.
  auto q = load_questions(kMini / "questions.jsonl", kg)[1];
  DialoguePrompt d = build_step2(q, kg, PromptMode::qa);
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), d),
            "Relation: made of. Answer: water.");
}

TEST(MockOracle, Step1TasksAnswerFromTheTriplet) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  DialoguePrompt p;
  p.meta["task"] = "head";
  p.meta["head"] = "ice";
  p.meta["relation"] = "class_of";
  p.meta["tail"] = "water";
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), p), "ice");
  p.meta["task"] = "relation";
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), p), "class of");
  p.meta["task"] = "tail";
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), p), "water");

  p.meta["tail"] = "snow";  // (ice, class_of, snow) not in the graph
  EXPECT_THROW(mock_oracle_response(oracle_for(kg), p), Error);
}

TEST(MockOracle, DescribeTasksEchoStoredTexts) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  DialoguePrompt p;
  p.meta["task"] = "describe_entity";
  p.meta["entity"] = "ice";
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), p),
            "water frozen into a solid state");

  DialoguePrompt r;
  r.meta["task"] = "describe_relation";
  r.meta["head"] = "ice";
  r.meta["tail"] = "water";
  EXPECT_EQ(mock_oracle_response(oracle_for(kg), r), "is a kind or category of");
  r.meta["tail"] = "snow";  // no relation between ice and snow
  EXPECT_THROW(mock_oracle_response(oracle_for(kg), r), Error);
}

TEST(MockOracle, UnknownTaskAndMissingMetaAreErrors) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  DialoguePrompt p;
  p.meta["task"] = "juggle";
  EXPECT_THROW(mock_oracle_response(oracle_for(kg), p), Error);
  DialoguePrompt empty;
  EXPECT_THROW(mock_oracle_response(oracle_for(kg), empty), Error);
  DialoguePrompt half;
  half.meta["task"] = "analogy";  // ids missing
  EXPECT_THROW(mock_oracle_response(oracle_for(kg), half), Error);
}

TEST(ParseResponse, SplitsRelationAndAnswer) {
  auto p = parse_analogy_response("Relation: part of. Answer: J) Atom.");
  ASSERT_TRUE(p.relation.has_value());
  EXPECT_EQ(*p.relation, "part of");
  EXPECT_EQ(p.answer, "J) Atom");

  p = parse_analogy_response("Answer: water");
  EXPECT_FALSE(p.relation.has_value());
  EXPECT_EQ(p.answer, "water");

  p = parse_analogy_response("The ANSWER:   Berlin!  ");
  EXPECT_EQ(p.answer, "Berlin");

  p = parse_analogy_response("Relation: made of");
  ASSERT_TRUE(p.relation.has_value());
  EXPECT_EQ(*p.relation, "made of");
  EXPECT_EQ(p.answer, "made of");

  p = parse_analogy_response("plain text reply.");
  EXPECT_FALSE(p.relation.has_value());
  EXPECT_EQ(p.answer, "plain text reply");

  p = parse_analogy_response("  relation: capital of.  answer:  Paris?  ");
  EXPECT_EQ(*p.relation, "capital of");
  EXPECT_EQ(p.answer, "Paris");
}

TEST(Wire, MessagesCarryImagesAsDataUrls) {
  DialoguePrompt d;
  Turn t1;
  t1.role = Role::user;
  t1.text = "look at this";
  t1.image.parts = {(kFixtures / "images" / "red2x2.png").string(),
                    (kFixtures / "images" / "blue2x2.png").string()};
  d.turns.push_back(t1);
  Turn t2;
  t2.role = Role::assistant;
  t2.text = "seen";
  d.turns.push_back(t2);

  nlohmann::json messages = build_chat_messages(d);
  ASSERT_EQ(messages.size(), 2u);
  EXPECT_EQ(messages[0]["role"], "user");
  ASSERT_TRUE(messages[0]["content"].is_array());
  ASSERT_EQ(messages[0]["content"].size(), 2u);
  EXPECT_EQ(messages[0]["content"][0]["type"], "image_url");
  std::string url = messages[0]["content"][0]["image_url"]["url"];
  // The inlined payload is the two fixtures combined side by side.
  RasterImage sent = decode_wire(url);
  RasterImage expected =
      combine_files({kFixtures / "images" / "red2x2.png",
                     kFixtures / "images" / "blue2x2.png"});
  EXPECT_EQ(sent.width, expected.width);
  EXPECT_EQ(sent.pixels, expected.pixels);
  EXPECT_EQ(messages[0]["content"][1]["type"], "text");
  EXPECT_EQ(messages[0]["content"][1]["text"], "look at this");

  // Text-only turns use plain string content.
  EXPECT_EQ(messages[1]["role"], "assistant");
  ASSERT_TRUE(messages[1]["content"].is_string());
  EXPECT_EQ(messages[1]["content"], "seen");
}

TEST(Wire, RemoteUriPassesThroughButCannotCombine) {
  ImageRef one{{"https://example.com/a.png"}};
  nlohmann::json part = materialize_image(one);
  EXPECT_EQ(part["image_url"]["url"], "https://example.com/a.png");
  ImageRef two{{"https://example.com/a.png", "https://example.com/b.png"}};
  EXPECT_THROW(materialize_image(two), Error);
}

TEST(Wire, RenderRequestStaysHumanReadable) {
  DialoguePrompt d;
  Turn t;
  t.text = "hello";
  t.image.parts = {"a.png", "b.png"};
  d.turns.push_back(t);
  nlohmann::json r = render_request(d);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0]["text"], "hello");
  EXPECT_EQ(r[0]["image"], "combine(a.png, b.png)");
  EXPECT_EQ(r.dump().find("base64"), std::string::npos);
}

TEST(Transcript, JsonRoundTrip) {
  Transcript t;
  t.key = "q:m01";
  t.request = nlohmann::json::array({{{"role", "user"}, {"text", "hi"}}});
  t.response = "Relation: r. Answer: a.";
  t.latency_s = 0.25;
  t.tokens = 42;
  t.raw = "{\"choices\":[]}";
  Transcript back = Transcript::from_json(t.to_json());
  EXPECT_EQ(back.key, t.key);
  EXPECT_EQ(back.response, t.response);
  EXPECT_EQ(back.tokens, t.tokens);
  EXPECT_EQ(back.raw, t.raw);
  EXPECT_FALSE(back.error.has_value());

  Transcript failed;
  failed.key = "q:x";
  failed.error = "transport: boom";
  Transcript fback = Transcript::from_json(failed.to_json());
  ASSERT_TRUE(fback.error.has_value());
  EXPECT_EQ(*fback.error, "transport: boom");
}

TEST(BackendConfig, ValidationErrors) {
  BackendConfig cfg;
  cfg.kind = BackendKind::remote;
  EXPECT_THROW(cfg.validate(), Error);  // endpoint missing

  BackendConfig mock;
  mock.kind = BackendKind::mock_oracle;
  EXPECT_THROW(mock.validate(), Error);  // graph missing

  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  mock.oracle.kg = &kg;
  mock.validate();
  mock.oracle.error_rate = 1.5;
  EXPECT_THROW(mock.validate(), Error);
  mock.oracle.error_rate = 0.5;
  mock.parallelism = 0;
  EXPECT_THROW(mock.validate(), Error);

  EXPECT_EQ(parse_backend("mock"), BackendKind::mock_oracle);
  EXPECT_EQ(parse_backend("remote"), BackendKind::remote);
  EXPECT_THROW(parse_backend("carrier-pigeon"), Error);
}

TEST(Batch, ParallelismDoesNotChangeResults) {
  auto dir = test::scratch_dir("batch");
  auto corpus = test::make_synth_corpus(dir, 30);
  std::vector<std::pair<std::string, DialoguePrompt>> items;
  for (const auto& q : corpus.questions)
    items.push_back({"q:" + q.id, build_step2(q, corpus.kg, PromptMode::qa)});

  BackendConfig serial;
  serial.kind = BackendKind::mock_oracle;
  serial.oracle = oracle_for(corpus.kg, 0.5, 11);
  serial.parallelism = 1;
  BackendConfig parallel = serial;
  parallel.parallelism = 8;

  std::atomic<int> emitted{0};
  auto a = complete_batch(serial, items,
                          [&](const Transcript&) { emitted.fetch_add(1); });
  auto b = complete_batch(parallel, items,
                          [&](const Transcript&) { emitted.fetch_add(1); });
  EXPECT_EQ(emitted.load(), 60);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].key, items[i].first);
    EXPECT_EQ(a[i].key, b[i].key);
    EXPECT_EQ(a[i].response, b[i].response);
    EXPECT_EQ(a[i].error, b[i].error);
  }
  fs::remove_all(dir);
}

TEST(Batch, PerItemFailuresAreCapturedNotThrown) {
  KnowledgeGraph kg = KnowledgeGraph::load(kMini);
  AnalogyQuestion good = m01(kg);
  AnalogyQuestion gap = good;
  gap.id = "gap";
  gap.gold_answer = "frost";
  std::vector<std::pair<std::string, DialoguePrompt>> items = {
      {"q:good", build_step2(good, kg, PromptMode::qa)},
      {"q:gap", build_step2(gap, kg, PromptMode::qa)},
  };
  BackendConfig cfg;
  cfg.kind = BackendKind::mock_oracle;
  cfg.oracle = oracle_for(kg);
  auto out = complete_batch(cfg, items);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_FALSE(out[0].error.has_value());
  EXPECT_EQ(out[0].response, "Relation: class of. Answer: water.");
  ASSERT_TRUE(out[1].error.has_value());
  EXPECT_NE(out[1].error->find("oracle_gap"), std::string::npos);
}

#ifdef MAREVAL_HAS_HTTPLIB

class LocalServer {
 public:
  explicit LocalServer(httplib::Server::Handler handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

BackendConfig remote_config(const std::string& endpoint) {
  BackendConfig cfg;
  cfg.kind = BackendKind::remote;
  cfg.endpoint = endpoint;
  cfg.model = "test-model";
  cfg.auth_env = "MAREVAL_TEST_KEY";
  cfg.max_retries = 2;
  cfg.backoff_initial_s = 0.01;
  cfg.timeout_s = 5.0;
  return cfg;
}

DialoguePrompt plain_prompt(const std::string& text) {
  DialoguePrompt d;
  Turn t;
  t.role = Role::user;
  t.text = text;
  d.turns.push_back(t);
  return d;
}

TEST(Remote, SuccessParsesChatCompletion) {
  std::atomic<int> hits{0};
  nlohmann::json seen_body;
  std::string seen_auth;
  std::mutex mu;
  setenv("MAREVAL_TEST_KEY", "sekrit", 1);
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      hits.fetch_add(1);
      seen_body = nlohmann::json::parse(req.body);
      seen_auth = req.get_header_value("Authorization");
    }
    nlohmann::json reply{
        {"choices",
         nlohmann::json::array(
             {{{"message", {{"role", "assistant"},
                            {"content", "Relation: r. Answer: a."}}}}})},
        {"usage", {{"total_tokens", 42}}}};
    res.set_content(reply.dump(), "application/json");
  });

  Transcript t = complete(remote_config(server.endpoint()),
                          plain_prompt("hello"), "q:1");
  EXPECT_EQ(t.response, "Relation: r. Answer: a.");
  EXPECT_EQ(t.tokens, std::optional<long>(42));
  ASSERT_TRUE(t.raw.has_value());
  EXPECT_NE(t.raw->find("choices"), std::string::npos);
  EXPECT_EQ(hits.load(), 1);
  EXPECT_EQ(seen_auth, "Bearer sekrit");
  EXPECT_EQ(seen_body["model"], "test-model");
  ASSERT_EQ(seen_body["messages"].size(), 1u);
  EXPECT_EQ(seen_body["messages"][0]["content"], "hello");
  unsetenv("MAREVAL_TEST_KEY");
}

TEST(Remote, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    if (hits.fetch_add(1) < 2) {
      res.status = 503;
      res.set_content("overloaded", "text/plain");
      return;
    }
    nlohmann::json reply{
        {"choices",
         nlohmann::json::array({{{"message", {{"content", "ok"}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  Transcript t = complete(remote_config(server.endpoint()),
                          plain_prompt("x"), "q:retry");
  EXPECT_EQ(t.response, "ok");
  EXPECT_EQ(hits.load(), 3);
}

TEST(Remote, ExhaustedRetriesRaiseTimeout) {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    hits.fetch_add(1);
    res.status = 500;
  });
  try {
    complete(remote_config(server.endpoint()), plain_prompt("x"), "q:down");
    FAIL() << "expected timeout";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::timeout);
    EXPECT_NE(std::string(e.what()).find("HTTP 500"), std::string::npos);
  }
  EXPECT_EQ(hits.load(), 3);  // max_retries = 2 means three attempts
}

TEST(Remote, AuthFailureIsNotRetried) {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    hits.fetch_add(1);
    res.status = 401;
  });
  try {
    complete(remote_config(server.endpoint()), plain_prompt("x"), "q:auth");
    FAIL() << "expected auth error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::auth);
    EXPECT_NE(std::string(e.what()).find("MAREVAL_TEST_KEY"), std::string::npos);
  }
  EXPECT_EQ(hits.load(), 1);
}

TEST(Remote, MalformedRepliesAreDiagnosed) {
  LocalServer bad_json([&](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json at all", "application/json");
  });
  try {
    complete(remote_config(bad_json.endpoint()), plain_prompt("x"), "q:bad");
    FAIL() << "expected malformed_response";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::malformed_response);
  }

  LocalServer no_choices([&](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"choices\":[]}", "application/json");
  });
  try {
    complete(remote_config(no_choices.endpoint()), plain_prompt("x"), "q:empty");
    FAIL() << "expected malformed_response";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::malformed_response);
    EXPECT_NE(std::string(e.what()).find("choices[0].message.content"),
              std::string::npos);
  }
}

TEST(Remote, NonRetryableHttpStatusIsTransport) {
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    res.status = 404;
    res.set_content("no such route", "text/plain");
  });
  try {
    complete(remote_config(server.endpoint()), plain_prompt("x"), "q:404");
    FAIL() << "expected transport";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::transport);
    EXPECT_NE(std::string(e.what()).find("404"), std::string::npos);
  }
}

TEST(Remote, ImageTurnsArriveAsContentParts) {
  nlohmann::json seen;
  std::mutex mu;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      seen = nlohmann::json::parse(req.body);
    }
    nlohmann::json reply{
        {"choices", nlohmann::json::array({{{"message", {{"content", "ok"}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  DialoguePrompt d = plain_prompt("describe");
  d.turns[0].image.parts = {(kFixtures / "images" / "red2x2.png").string()};
  complete(remote_config(server.endpoint()), d, "q:img");
  ASSERT_TRUE(seen["messages"][0]["content"].is_array());
  std::string url = seen["messages"][0]["content"][0]["image_url"]["url"];
  EXPECT_EQ(url.rfind("data:image/png;base64,", 0), 0u);
  RasterImage img = decode_wire(url);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.height, 2);
}

#endif  // MAREVAL_HAS_HTTPLIB

}  // namespace
}  // namespace mareval

#include <doctest.h>

#include <thread>

#include "fixtures.hpp"
#include "protokb/errors.hpp"
#include "protokb/extraction.hpp"
#include "protokb/llm_client.hpp"

// after Eigen: resolv.h defines _res
#include <httplib.h>
#include <json.hpp>

using namespace protokb;

namespace {

struct Fixture {
  Template tmpl = fixtures::chest_template();
  TerminologyLexicon lex = fixtures::chest_lexicon(tmpl);
};

// Replies with a fixed string and records which questions were asked.
class ScriptedProvider : public ConstrainedAnswerProvider {
 public:
  explicit ScriptedProvider(std::map<std::string, std::string> replies) : replies_(std::move(replies)) {}
  std::string answer(const ConstrainedQuery& q) override {
    asked.push_back(q.option_ids.front().substr(0, q.option_ids.front().find('/')));
    auto it = replies_.find(asked.back());
    return it == replies_.end() ? std::string(kUnsureToken) : it->second;
  }
  std::vector<std::string> asked;

 private:
  std::map<std::string, std::string> replies_;
};

class ThrowingProvider : public ConstrainedAnswerProvider {
 public:
  std::string answer(const ConstrainedQuery&) override { throw ExtractorUnavailable("down"); }
};

}  // namespace

TEST_CASE("negative parents gate their children") {
  Fixture f;
  RuleBasedExtractor ex(f.lex);
  auto r = extract_study({"s1", "Heart size normal. No effusion.", ""}, f.tmpl, f.lex, ex);
  CHECK(r.asserts("lung/no lung abnormality"));
  CHECK(r.asserts("heart/no cardiomegaly"));
  for (const auto& a : r.assertions) CHECK(f.tmpl.question(a.question_id).level == 1);
}

TEST_CASE("positive finding with attributes") {
  Fixture f;
  RuleBasedExtractor ex(f.lex);
  auto r = extract_study({"s1", "Lung abnormality. Small right pleural effusion.", ""}, f.tmpl, f.lex, ex);
  std::vector<Assertion> want{
      {"effusion", "effusion/pleural effusion", Certainty::kCertain},
      {"effusion_location", "effusion_location/right", Certainty::kCertain},
      {"effusion_size", "effusion_size/small", Certainty::kCertain},
      {"heart", "heart/no cardiomegaly", Certainty::kCertain},
      {"lung", "lung/lung abnormality", Certainty::kCertain},
  };
  CHECK(r.assertions == want);
  CHECK(filter_extractions(r, f.tmpl).assertions == want);
  CHECK(check_consistency(to_report(filter_extractions(r, f.tmpl)), f.tmpl).empty());
}

TEST_CASE("replies outside the allowed answers are uncertain") {
  Fixture f;
  ScriptedProvider p({{"lung", "lung abnormality"}, {"effusion", "maybe a bit of fluid"}, {"heart", "unsure"}});
  auto r = extract_study({"s1", "whatever", ""}, f.tmpl, f.lex, p);
  CHECK(r.asserts("lung/lung abnormality"));
  CHECK(r.asserts("effusion/pleural effusion", Certainty::kUncertain));
  CHECK(r.asserts("effusion/no pleural effusion", Certainty::kUncertain));
  CHECK(r.asserts("heart/cardiomegaly", Certainty::kUncertain));
  // uncertain parents do not open their children
  CHECK(std::find(p.asked.begin(), p.asked.end(), "effusion_size") == p.asked.end());
  auto filtered = filter_extractions(r, f.tmpl);
  // lung loses its only child question, so it goes too
  CHECK(filtered.assertions.empty());
}

TEST_CASE("filter_extractions") {
  Fixture f;
  ExtractionResult uncertain{"s", {{"effusion", "effusion/pleural effusion", Certainty::kUncertain}}};
  CHECK(filter_extractions(uncertain, f.tmpl).assertions.empty());

  ExtractionResult childless{"s", {{"effusion", "effusion/pleural effusion", Certainty::kCertain},
                                   {"lung", "lung/lung abnormality", Certainty::kCertain}}};
  auto out = filter_extractions(childless, f.tmpl);
  // effusion has attribute children and none is supported; lung then loses its only supported child
  CHECK(out.assertions.empty());
  CHECK(filter_extractions(childless, f.tmpl, {false}).assertions == childless.assertions);

  ExtractionResult consistent{"s", {{"effusion", "effusion/pleural effusion", Certainty::kCertain},
                                    {"effusion_location", "effusion_location/right", Certainty::kCertain},
                                    {"lung", "lung/lung abnormality", Certainty::kCertain}}};
  CHECK(filter_extractions(consistent, f.tmpl).assertions == consistent.assertions);

  ExtractionResult contradictory{"s", {{"heart", "heart/cardiomegaly", Certainty::kCertain},
                                       {"heart", "heart/no cardiomegaly", Certainty::kCertain}}};
  CHECK(filter_extractions(contradictory, f.tmpl).assertions.empty());

  ExtractionResult orphan{"s", {{"effusion_size", "effusion_size/small", Certainty::kCertain}}};
  CHECK(filter_extractions(orphan, f.tmpl).assertions.empty());

  for (const auto* r : {&uncertain, &childless, &consistent, &contradictory, &orphan}) {
    auto once = filter_extractions(*r, f.tmpl);
    CHECK(filter_extractions(once, f.tmpl) == once);
    CHECK(check_consistency(to_report(once), f.tmpl).empty());
  }
}

TEST_CASE("example pools") {
  CHECK(build_example_pools({}).empty());
  std::vector<ExtractionResult> rs{
      {"a", {{"heart", "heart/cardiomegaly", Certainty::kCertain}}},
      {"b", {{"heart", "heart/cardiomegaly", Certainty::kCertain}}},
      {"c", {{"heart", "heart/cardiomegaly", Certainty::kCertain}, {"lung", "lung/lung abnormality", Certainty::kCertain}}},
  };
  auto pools = build_example_pools(rs);
  CHECK(pools["heart/cardiomegaly"] == std::vector<std::string>{"a", "b", "c"});
  CHECK(pools["lung/lung abnormality"] == std::vector<std::string>{"c"});
}

TEST_CASE("evaluate_extraction") {
  Fixture f;
  std::vector<StructuredReport> gold{
      {"a", {{"heart", {"heart/cardiomegaly"}}, {"lung", {"lung/no lung abnormality"}}}},
      {"b", {{"heart", {"heart/no cardiomegaly"}}, {"lung", {"lung/no lung abnormality"}}}},
  };
  std::vector<ExtractionResult> same{
      {"a", {{"heart", "heart/cardiomegaly", Certainty::kCertain}, {"lung", "lung/no lung abnormality", Certainty::kCertain}}},
      {"b", {{"heart", "heart/no cardiomegaly", Certainty::kCertain}, {"lung", "lung/no lung abnormality", Certainty::kCertain}}},
  };
  auto perfect = evaluate_extraction(same, gold, f.tmpl);
  CHECK(perfect.l1 == 1.0);

  std::vector<ExtractionResult> empty{{"a", {}}, {"b", {}}};
  CHECK(evaluate_extraction(empty, gold, f.tmpl).l1 == 0.0);

  // one false positive: study b predicted cardiomegaly as well
  auto fp = same;
  fp[1].assertions = {{"heart", "heart/cardiomegaly", Certainty::kCertain},
                      {"lung", "lung/no lung abnormality", Certainty::kCertain}};
  // cardiomegaly: TP1 FP1 -> 2/3; no cardiomegaly: TP0 FN1 -> 0; no lung abnormality: 1
  CHECK(evaluate_extraction(fp, gold, f.tmpl).l1 == doctest::Approx((2.0 / 3.0 + 0.0 + 1.0) / 3.0));
}

TEST_CASE("corpus extraction skips failing studies and is deterministic") {
  Fixture f;
  std::vector<FreeTextStudy> corpus{{"a", "lung abnormality. small left pleural effusion.", ""},
                                    {"b", "enlarged heart.", ""},
                                    {"c", "", ""}};
  RuleBasedExtractor ex(f.lex);
  auto one = extract_corpus(corpus, f.tmpl, f.lex, ex, 1);
  auto four = extract_corpus(corpus, f.tmpl, f.lex, ex, 4);
  CHECK(one.results == four.results);
  CHECK(one.results.size() == 3);
  ThrowingProvider down;
  auto none = extract_corpus(corpus, f.tmpl, f.lex, down, 2);
  CHECK(none.results.empty());
  CHECK(none.skipped.size() == 3);

  auto line = serialize_extraction(one.results[0]);
  CHECK(parse_extraction(line) == one.results[0]);
}

TEST_CASE("LLM client against a local endpoint") {
  httplib::Server server;
  std::string seen_auth, seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "small, left\nbecause"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("PROTOKB_TEST_KEY", "secret", 1);
  LlmConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.api_key_env = "PROTOKB_TEST_KEY";
  cfg.timeout_seconds = 5;
  LlmExtractor ex(cfg);
  ConstrainedQuery q{"Which size?", {"small", "large"}, {"s/small", "s/large"}, "small effusion", true};
  CHECK(ex.answer(q) == "small, left\nbecause");
  CHECK(seen_auth == "Bearer secret");
  auto body = nlohmann::json::parse(seen_body);
  CHECK(body["model"] == cfg.model);
  CHECK(body["messages"][1]["content"].get<std::string>().find("- unsure") != std::string::npos);

  LlmPhraseExpander expander(cfg);
  auto t = fixtures::chest_template();
  auto phrases = expander.propose(t.question("effusion_size"), t.option("effusion_size/small"));
  CHECK(phrases == std::vector<std::string>{"small, left", "because"});

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/broken";
  LlmExtractor broken(cfg);
  CHECK_THROWS_AS(broken.answer(q), ExtractorUnavailable);
  server.stop();
  th.join();
  CHECK_THROWS_AS(LlmExtractor(LlmConfig{"no-scheme", "m", 1, "", 1}), ConfigError);
}

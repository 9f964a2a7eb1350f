#include <doctest.h>

#include "fixtures.hpp"
#include "protokb/errors.hpp"
#include "protokb/terminology.hpp"
#include "protokb/text.hpp"

using namespace protokb;

namespace {

class FailingExpander : public PhraseExpander {
 public:
  std::vector<std::string> propose(const Question&, const AnswerOption&) override {
    throw ExpanderUnavailable("offline");
  }
  Provenance provenance() const override { return Provenance::kLlmExpanded; }
};

}  // namespace

TEST_CASE("canonical-only lexicon") {
  auto t = Template::build("t", {{"heart", 1, "q", AnswerMode::kMultiSelect, {"cardiomegaly"}, std::nullopt}});
  auto lex = expand_terminology(t, nullptr);
  REQUIRE(lex.size() == 1);
  CHECK(lex.entries()[0] == LexiconEntry{"cardiomegaly", "heart/cardiomegaly", Provenance::kCanonical});
  CHECK(lex.lookup("cardiomegaly") == "heart/cardiomegaly");
}

TEST_CASE("expansion adds variants and lookup normalizes") {
  auto t = fixtures::chest_template();
  auto lex = fixtures::chest_lexicon(t);
  CHECK(lex.lookup("enlarged heart") == "heart/cardiomegaly");
  CHECK(lex.lookup("Enlarged  HEART") == "heart/cardiomegaly");
  CHECK(!lex.lookup("unseen phrase").has_value());
  for (const auto& e : lex.entries()) {
    if (e.phrase == "enlarged heart") CHECK(e.provenance == Provenance::kManual);
  }
  // canonical self-map and normalization invariance over every option
  for (const auto& opt : t.options()) {
    CHECK(lex.lookup(opt.canonical_text, &t, opt.question_id) == opt.id);
    CHECK(lex.lookup(opt.canonical_text) == lex.lookup(normalize_phrase(opt.canonical_text)));
  }
  lex.validate(t);
}

TEST_CASE("collision with another label's canonical text is rejected") {
  auto t = fixtures::chest_template();
  std::multimap<std::string, std::string> seeds{{"heart/cardiomegaly", "pleural effusion"},
                                                {"heart/cardiomegaly", "big heart"}};
  SeedListExpander ex(seeds);
  auto lex = expand_terminology(t, &ex);
  CHECK(lex.lookup("pleural effusion") == "effusion/pleural effusion");
  CHECK(lex.lookup("big heart") == "heart/cardiomegaly");
  REQUIRE(lex.conflicts().size() == 1);
  CHECK(lex.conflicts()[0].find("pleural effusion") != std::string::npos);

  // oracle: pairwise scan finds no phrase mapped to two options
  const auto& es = lex.entries();
  for (std::size_t i = 0; i + 1 < es.size(); ++i) {
    if (es[i].phrase == es[i + 1].phrase) {
      CHECK(es[i].provenance == Provenance::kCanonical);
      CHECK(es[i + 1].provenance == Provenance::kCanonical);
    }
  }
}

TEST_CASE("candidate proposed for two options is rejected for both") {
  auto t = fixtures::chest_template();
  std::multimap<std::string, std::string> seeds{{"effusion_size/small", "minimal"},
                                                {"effusion_location/left", "minimal"}};
  SeedListExpander ex(seeds);
  auto lex = expand_terminology(t, &ex);
  CHECK(!lex.lookup("minimal").has_value());
  CHECK(lex.conflicts().size() == 2);
}

TEST_CASE("shared canonical text resolves only with a question scope") {
  auto t = Template::build("t", {{"a", 1, "a", AnswerMode::kSingleChoice, {"yes", "no"}, std::nullopt},
                                 {"b", 1, "b", AnswerMode::kSingleChoice, {"yes", "no"}, std::nullopt}});
  auto lex = expand_terminology(t, nullptr);
  CHECK(!lex.lookup("yes").has_value());
  CHECK(lex.lookup("yes", &t, "b") == "b/yes");
}

TEST_CASE("unavailable expander degrades to canonical texts") {
  auto t = fixtures::chest_template();
  FailingExpander ex;
  auto lex = expand_terminology(t, &ex);
  CHECK(lex.degraded());
  CHECK(lex.size() == t.num_options());
}

TEST_CASE("lexicon file round trip and referential integrity") {
  auto t = fixtures::chest_template();
  auto lex = fixtures::chest_lexicon(t);
  auto text = serialize_lexicon(lex);
  auto back = load_lexicon(text);
  CHECK(back.entries() == lex.entries());
  CHECK(serialize_lexicon(back) == text);

  auto other = Template::build("o", {{"x", 1, "x", AnswerMode::kMultiSelect, {"y"}, std::nullopt}});
  CHECK_THROWS_AS(lex.validate(other), ValidationError);
  CHECK_THROWS_AS(load_lexicon("only-one-field\n"), ParseError);
  CHECK(parse_provenance(to_string(Provenance::kLlmExpanded)) == Provenance::kLlmExpanded);
}

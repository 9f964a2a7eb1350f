#include <doctest.h>

#include <filesystem>

#include "protokb/errors.hpp"
#include "protokb/experiment.hpp"
#include "protokb/synth.hpp"

using namespace protokb;

TEST_CASE("seeded determinism") {
  SynthConfig c;
  c.n_studies = 120;
  c.mining_studies = 60;
  c.report_noise_rate = 0.1;
  auto a = generate(c), b = generate(c);
  CHECK(serialize_template(a.tmpl) == serialize_template(b.tmpl));
  CHECK(serialize_lexicon(a.lexicon) == serialize_lexicon(b.lexicon));
  REQUIRE(a.studies.size() == 120);
  for (std::size_t i = 0; i < a.studies.size(); ++i) {
    CHECK(a.studies[i].report_text == b.studies[i].report_text);
    CHECK(a.image_features.at(a.studies[i].study_id) == b.image_features.at(b.studies[i].study_id));
  }
  c.seed = 2;
  CHECK(generate(c).studies[0].report_text != a.studies[0].report_text);
}

TEST_CASE("gold consistency and long-tail prevalence") {
  SynthConfig c;
  c.n_studies = 2000;
  c.mining_studies = 1000;
  auto w = generate(c);
  std::map<std::string, long> count;
  for (const auto& g : w.gold) {
    CHECK(check_consistency(g, w.tmpl).empty());
    for (const auto& [q, opts] : g.answers) {
      for (const auto& o : opts) ++count[o];
    }
  }
  for (const auto& q : w.tmpl.questions()) {
    if (q.level != 3) continue;
    const long parent = count[q.trigger->parent_option];
    for (const auto& o : q.option_ids) CHECK(count[o] < parent);
  }
  CHECK(w.mining_indices().size() + w.train_indices().size() + w.test_indices().size() == 2000);
}

TEST_CASE("noiseless reports are a perfect inverse of the labels") {
  SynthConfig c;
  c.n_studies = 300;
  c.mining_studies = 300;
  auto w = generate(c);
  RuleBasedExtractor ex(w.lexicon);
  auto mined = mine_corpus(w.studies, w.tmpl, w.lexicon, ex);
  auto f1 = evaluate_extraction(mined.filtered, w.gold, w.tmpl);
  CHECK(f1.l1 == 1.0);
  CHECK(f1.l2 == 1.0);
  CHECK(f1.l3 == 1.0);
  for (std::size_t i = 0; i < w.gold.size(); ++i) CHECK(to_report(mined.filtered[i]).answers == w.gold[i].answers);
}

TEST_CASE("config validation and files") {
  SynthConfig bad;
  bad.n_l1 = 0;
  CHECK_THROWS_AS(generate(bad), ConfigError);
  bad = {};
  bad.report_noise_rate = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  SynthConfig c;
  c.n_studies = 50;
  c.mining_studies = 20;
  CHECK(serialize_synth_config(parse_synth_config(serialize_synth_config(c))) == serialize_synth_config(c));

  auto dir = std::filesystem::temp_directory_path() / "protokb_synth_test";
  std::filesystem::remove_all(dir);
  auto w = generate(c);
  write_world(w, dir.string());
  for (const char* f : {"template.json", "seed_terms.tsv", "lexicon.tsv", "corpus.jsonl", "gold_mining.jsonl",
                        "gold_train.jsonl", "gold_test.jsonl", "features.tsv", "synth_config.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  CHECK(load_corpus_file((dir / "corpus.jsonl").string()).size() == 20);
  CHECK(load_features_file((dir / "features.tsv").string()) == w.image_features);
  std::filesystem::remove_all(dir);
}

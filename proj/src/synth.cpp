#include "protokb/synth.hpp"

#include <algorithm>
#include <json.hpp>
#include <random>
#include <set>

#include "protokb/errors.hpp"
#include "protokb/text.hpp"

namespace protokb {

using nlohmann::json;
using nlohmann::ordered_json;

void SynthConfig::validate() const {
  auto positive = [](long v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(n_l1, "n_l1");
  positive(n_l2_per_l1, "n_l2_per_l1");
  positive(n_l3_per_l2, "n_l3_per_l2");
  positive(n_l3_options, "n_l3_options");
  positive(n_studies, "n_studies");
  positive(feature_dim, "feature_dim");
  if (label_signal_strength < 0) throw ConfigError("label_signal_strength must be >= 0");
  if (report_noise_rate < 0 || report_noise_rate > 1) throw ConfigError("report_noise_rate outside [0,1]");
  if (synonym_count < 0) throw ConfigError("synonym_count must be >= 0");
  for (double p : {l1_prevalence, child_prevalence, negation_mention_rate, test_fraction}) {
    if (p < 0 || p > 1) throw ConfigError("probabilities must lie in [0,1]");
  }
  if (mining_studies < 0 || mining_studies > n_studies) {
    throw ConfigError("mining_studies must lie in [0, n_studies]");
  }
}

bool is_negative_option(const AnswerOption& option) {
  return option.canonical_text.rfind("no ", 0) == 0;
}

std::vector<std::size_t> SynthWorld::mining_indices() const {
  std::vector<std::size_t> out;
  for (int i = 0; i < config.mining_studies; ++i) out.push_back(static_cast<std::size_t>(i));
  return out;
}

std::vector<std::size_t> SynthWorld::train_indices() const {
  const int rest = config.n_studies - config.mining_studies;
  const int n_test = static_cast<int>(config.test_fraction * rest);
  std::vector<std::size_t> out;
  for (int i = config.mining_studies; i < config.n_studies - n_test; ++i) {
    out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

std::vector<std::size_t> SynthWorld::test_indices() const {
  const int rest = config.n_studies - config.mining_studies;
  const int n_test = static_cast<int>(config.test_fraction * rest);
  std::vector<std::size_t> out;
  for (int i = config.n_studies - n_test; i < config.n_studies; ++i) {
    out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

namespace {

class WordFactory {
 public:
  explicit WordFactory(std::mt19937_64& rng) : rng_(rng) {}

  std::string fresh() {
    static const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "p", "r", "s", "t", "v", "z"};
    static const char* kVowels[] = {"a", "e", "i", "o", "u"};
    std::uniform_int_distribution<int> on(0, 12), vw(0, 4), len(3, 4);
    while (true) {
      std::string w;
      int n = len(rng_);
      for (int i = 0; i < n; ++i) {
        w += kOnsets[on(rng_)];
        w += kVowels[vw(rng_)];
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

struct L3Spec {
  std::string qid;
  std::vector<std::string> option_ids;
};
struct L2Spec {
  std::string qid, pos, neg;
  std::vector<L3Spec> attributes;
};
struct L1Spec {
  std::string qid, pos, neg;
  std::vector<L2Spec> findings;
};

}  // namespace

SynthWorld generate(const SynthConfig& config) {
  config.validate();
  SynthWorld world;
  world.config = config;
  std::mt19937_64 rng(derive_seed(config.seed, "synth"));
  WordFactory words(rng);

  // Template and vocabulary.
  std::vector<Template::QuestionSpec> specs;
  std::vector<L1Spec> tree;
  std::map<std::string, std::vector<std::string>> variant_words;  // option id -> word variants
  auto add_variants = [&](const std::string& oid, const std::string& canonical) {
    auto& v = variant_words[oid];
    v.push_back(canonical);
    for (int s = 0; s < config.synonym_count; ++s) v.push_back(words.fresh());
  };

  for (int i = 0; i < config.n_l1; ++i) {
    L1Spec l1;
    l1.qid = "l1_" + std::to_string(i);
    auto w = words.fresh();
    specs.push_back({l1.qid, 1, "is there any " + w + " abnormality", AnswerMode::kSingleChoice,
                     {w, "no " + w}, std::nullopt});
    l1.pos = make_option_id(l1.qid, w);
    l1.neg = make_option_id(l1.qid, "no " + w);
    add_variants(l1.pos, w);
    for (int j = 0; j < config.n_l2_per_l1; ++j) {
      L2Spec l2;
      l2.qid = "l2_" + std::to_string(i) + "_" + std::to_string(j);
      auto f = words.fresh();
      specs.push_back({l2.qid, 2, "is there " + f, AnswerMode::kSingleChoice, {f, "no " + f},
                       Trigger{l1.qid, l1.pos}});
      l2.pos = make_option_id(l2.qid, f);
      l2.neg = make_option_id(l2.qid, "no " + f);
      add_variants(l2.pos, f);
      for (int k = 0; k < config.n_l3_per_l2; ++k) {
        L3Spec l3;
        l3.qid = "l3_" + std::to_string(i) + "_" + std::to_string(j) + "_" + std::to_string(k);
        std::vector<std::string> attrs;
        for (int o = 0; o < config.n_l3_options; ++o) attrs.push_back(words.fresh());
        specs.push_back({l3.qid, 3, "which attribute " + std::to_string(k) + " does the " + f + " show",
                         AnswerMode::kMultiSelect, attrs, Trigger{l2.qid, l2.pos}});
        for (const auto& a : attrs) {
          l3.option_ids.push_back(make_option_id(l3.qid, a));
          add_variants(l3.option_ids.back(), a);
        }
        l2.attributes.push_back(std::move(l3));
      }
      l1.findings.push_back(std::move(l2));
    }
    tree.push_back(std::move(l1));
  }
  world.tmpl = Template::build("synthetic-" + std::to_string(config.seed), specs);

  // Negative options reuse the finding's variants behind a negation cue.
  for (const auto& l1 : tree) {
    for (const auto& l2 : l1.findings) {
      for (std::size_t v = 1; v < variant_words[l2.pos].size(); ++v) {
        world.seed_terms.emplace(l2.neg, "no " + variant_words[l2.pos][v]);
      }
    }
    for (std::size_t v = 1; v < variant_words[l1.pos].size(); ++v) {
      world.seed_terms.emplace(l1.neg, "no " + variant_words[l1.pos][v]);
    }
  }
  for (const auto& [oid, vs] : variant_words) {
    for (std::size_t v = 1; v < vs.size(); ++v) world.seed_terms.emplace(oid, vs[v]);
  }
  SeedListExpander expander(world.seed_terms);
  world.lexicon = expand_terminology(world.tmpl, &expander);

  // Label directions in feature space.
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& opt : world.tmpl.options()) {
    if (is_negative_option(opt)) continue;
    Eigen::VectorXd g(config.feature_dim);
    for (int d = 0; d < config.feature_dim; ++d) g[d] = normal(rng);
    world.label_directions.emplace(opt.id, g.normalized());
  }

  std::bernoulli_distribution l1_pos(config.l1_prevalence), child_pos(config.child_prevalence),
      mention(config.negation_mention_rate), noisy(config.report_noise_rate), coin(0.5);
  auto phrase = [&](const std::string& oid) {
    const auto& vs = variant_words[oid];
    std::uniform_int_distribution<std::size_t> pick(0, vs.size() - 1);
    return vs[pick(rng)];
  };
  std::vector<std::string> all_affirmative;
  for (const auto& [oid, _] : world.label_directions) all_affirmative.push_back(oid);

  for (int s = 0; s < config.n_studies; ++s) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "s%05d", s);
    StructuredReport gold;
    gold.study_id = idbuf;
    std::vector<std::string> sentences;

    for (const auto& l1 : tree) {
      if (!l1_pos(rng)) {
        gold.answers[l1.qid] = {l1.neg};
        if (mention(rng)) sentences.push_back("no " + phrase(l1.pos));
        continue;
      }
      gold.answers[l1.qid] = {l1.pos};
      sentences.push_back(phrase(l1.pos) + " present");
      for (const auto& l2 : l1.findings) {
        if (!child_pos(rng)) {
          gold.answers[l2.qid] = {l2.neg};
          if (mention(rng)) sentences.push_back("no " + phrase(l2.pos));
          continue;
        }
        gold.answers[l2.qid] = {l2.pos};
        std::vector<std::string> attr_phrases;
        for (const auto& l3 : l2.attributes) {
          std::set<std::string> chosen;
          for (const auto& oid : l3.option_ids) {
            if (child_pos(rng)) chosen.insert(oid);
          }
          if (chosen.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, l3.option_ids.size() - 1);
            chosen.insert(l3.option_ids[pick(rng)]);
          }
          for (const auto& oid : chosen) attr_phrases.push_back(phrase(oid));
          gold.answers[l3.qid] = std::move(chosen);
        }
        std::string sentence = phrase(l2.pos) + " with";
        for (std::size_t a = 0; a < attr_phrases.size(); ++a) {
          sentence += (a ? " and " : " ") + attr_phrases[a];
        }
        sentences.push_back(std::move(sentence));
      }
    }

    if (config.report_noise_rate > 0) {
      std::vector<std::string> noisy_sentences;
      for (auto& sentence : sentences) {
        if (!noisy(rng)) {
          noisy_sentences.push_back(std::move(sentence));
        } else if (coin(rng)) {
          std::uniform_int_distribution<std::size_t> pick(0, all_affirmative.size() - 1);
          noisy_sentences.push_back(phrase(all_affirmative[pick(rng)]) + " suspected");
        }  // else dropped
      }
      sentences = std::move(noisy_sentences);
    }
    std::shuffle(sentences.begin(), sentences.end(), rng);
    std::string text;
    for (const auto& sentence : sentences) text += sentence + ". ";
    if (text.empty()) text = "unremarkable study. ";
    text.pop_back();

    Eigen::VectorXd x(config.feature_dim);
    for (int d = 0; d < config.feature_dim; ++d) x[d] = normal(rng);
    for (const auto& [qid, opts] : gold.answers) {
      for (const auto& oid : opts) {
        auto it = world.label_directions.find(oid);
        if (it != world.label_directions.end()) x += config.label_signal_strength * it->second;
      }
    }

    world.studies.push_back({gold.study_id, text, gold.study_id});
    world.image_features.emplace(gold.study_id, std::move(x));
    world.gold.push_back(std::move(gold));
  }
  return world;
}

std::string serialize_synth_config(const SynthConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["n_l1"] = c.n_l1;
  j["n_l2_per_l1"] = c.n_l2_per_l1;
  j["n_l3_per_l2"] = c.n_l3_per_l2;
  j["n_l3_options"] = c.n_l3_options;
  j["n_studies"] = c.n_studies;
  j["feature_dim"] = c.feature_dim;
  j["label_signal_strength"] = c.label_signal_strength;
  j["report_noise_rate"] = c.report_noise_rate;
  j["synonym_count"] = c.synonym_count;
  j["l1_prevalence"] = c.l1_prevalence;
  j["child_prevalence"] = c.child_prevalence;
  j["negation_mention_rate"] = c.negation_mention_rate;
  j["mining_studies"] = c.mining_studies;
  j["test_fraction"] = c.test_fraction;
  return j.dump(2) + "\n";
}

SynthConfig parse_synth_config(std::string_view json_text) {
  SynthConfig c;
  try {
    auto j = json::parse(json_text);
    c.seed = j.value("seed", c.seed);
    c.n_l1 = j.value("n_l1", c.n_l1);
    c.n_l2_per_l1 = j.value("n_l2_per_l1", c.n_l2_per_l1);
    c.n_l3_per_l2 = j.value("n_l3_per_l2", c.n_l3_per_l2);
    c.n_l3_options = j.value("n_l3_options", c.n_l3_options);
    c.n_studies = j.value("n_studies", c.n_studies);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.label_signal_strength = j.value("label_signal_strength", c.label_signal_strength);
    c.report_noise_rate = j.value("report_noise_rate", c.report_noise_rate);
    c.synonym_count = j.value("synonym_count", c.synonym_count);
    c.l1_prevalence = j.value("l1_prevalence", c.l1_prevalence);
    c.child_prevalence = j.value("child_prevalence", c.child_prevalence);
    c.negation_mention_rate = j.value("negation_mention_rate", c.negation_mention_rate);
    c.mining_studies = j.value("mining_studies", c.mining_studies);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_world(const SynthWorld& world, const std::string& dir) {
  save_template_file(world.tmpl, dir + "/template.json");
  std::string seeds;
  for (const auto& [oid, phrase] : world.seed_terms) seeds += oid + "\t" + phrase + "\n";
  write_text_file(dir + "/seed_terms.tsv", seeds);
  save_lexicon_file(world.lexicon, dir + "/lexicon.tsv");

  auto subset = [&](const std::vector<std::size_t>& idx) {
    std::vector<StructuredReport> out;
    for (auto i : idx) out.push_back(world.gold[i]);
    return out;
  };
  std::vector<FreeTextStudy> corpus;
  for (auto i : world.mining_indices()) corpus.push_back(world.studies[i]);
  save_corpus_file(corpus, dir + "/corpus.jsonl");
  save_reports_file(subset(world.mining_indices()), dir + "/gold_mining.jsonl");
  save_reports_file(subset(world.train_indices()), dir + "/gold_train.jsonl");
  save_reports_file(subset(world.test_indices()), dir + "/gold_test.jsonl");
  save_features_file(world.image_features, dir + "/features.tsv");
  write_text_file(dir + "/synth_config.json", serialize_synth_config(world.config));
}

}  // namespace protokb

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "protokb/extraction.hpp"
#include "protokb/io.hpp"
#include "protokb/template.hpp"
#include "protokb/terminology.hpp"

namespace protokb {

struct SynthConfig {
  std::uint64_t seed = 1;
  int n_l1 = 4;
  int n_l2_per_l1 = 2;
  int n_l3_per_l2 = 2;
  int n_l3_options = 3;
  int n_studies = 1000;
  int feature_dim = 16;
  double label_signal_strength = 2.0;
  double report_noise_rate = 0.0;
  int synonym_count = 2;

  double l1_prevalence = 0.3;
  double child_prevalence = 0.3;   // L2 finding given its L1 parent, and each L3 attribute
  double negation_mention_rate = 0.5;

  // Study roles, by position: the first `mining_studies` form the free-text
  // corpus, the remainder is split into structured train and test sets.
  int mining_studies = 600;
  double test_fraction = 0.4;

  /// Throws ConfigError.
  void validate() const;
};

struct SynthWorld {
  SynthConfig config;
  Template tmpl;
  TerminologyLexicon lexicon;
  std::multimap<std::string, std::string> seed_terms;  // option id -> variant
  std::vector<FreeTextStudy> studies;
  std::vector<StructuredReport> gold;  // aligned with studies
  FeatureTable image_features;
  std::map<std::string, Eigen::VectorXd> label_directions;  // affirmative options only

  std::vector<std::size_t> mining_indices() const;
  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;
};

/// Deterministic in config.seed.
SynthWorld generate(const SynthConfig& config);

/// True for options that deny a finding ("no ...").
bool is_negative_option(const AnswerOption& option);

/// Writes template.json, seed_terms.tsv, lexicon.tsv, corpus.jsonl (mining
/// split), gold_{mining,train,test}.jsonl, features.tsv and synth_config.json.
void write_world(const SynthWorld& world, const std::string& dir);

std::string serialize_synth_config(const SynthConfig& config);
SynthConfig parse_synth_config(std::string_view json_text);

}  // namespace protokb

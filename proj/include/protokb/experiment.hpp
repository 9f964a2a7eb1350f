#pragma once

#include <span>
#include <string>
#include <vector>

#include "protokb/extraction.hpp"
#include "protokb/inference.hpp"
#include "protokb/knowledge_base.hpp"
#include "protokb/metrics.hpp"
#include "protokb/model.hpp"
#include "protokb/synth.hpp"
#include "protokb/training.hpp"

namespace protokb {

enum class Variant {
  kProtoSR,               // real prototypes, late fusion
  kNoKnowledge,           // empty bank
  kRandomizedPrototypes,  // embeddings replaced by seeded N(0, 1) noise
  kEarlyFusionStub,       // answer prior appended to the text input, no late fusion
};

std::string_view to_string(Variant v);
/// Throws ConfigError.
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Eigen::Index image_dim = 16;
  Eigen::Index text_buckets = 128;
  Eigen::Index text_dim = 16;
  Eigen::Index fused_dim = 32;
  Eigen::Index shared_dim = 16;
  Eigen::Index hidden_dim = 0;  // 0 selects 2|Y|

  ModelDims dims(Eigen::Index feature_dim, Eigen::Index answer_dim, bool early_fusion) const;
};

struct ExperimentConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  int threads = 1;
  long log_every = 100;
};

std::string serialize_experiment_config(const ExperimentConfig& config);
/// Sections "synth", "model", "train"; missing keys keep defaults. Throws ConfigError.
ExperimentConfig parse_experiment_config(std::string_view json_text);

struct MiningOutput {
  CorpusExtraction raw;
  std::vector<ExtractionResult> filtered;
  ExamplePools pools;
};

MiningOutput mine_corpus(std::span<const FreeTextStudy> corpus, const Template& tmpl,
                         const TerminologyLexicon& lexicon, ConstrainedAnswerProvider& extractor,
                         int threads = 1, const FilterOptions& filter = {});

/// Bank embedded with the given model's image encoder at step 0.
PrototypeBank initial_bank(const ExamplePools& pools, const Template& tmpl, const Model<double>& model,
                           const FeatureTable& features, const TrainConfig& config, int threads = 1);

/// The bank a variant trains and predicts with.
PrototypeBank variant_bank(const PrototypeBank& bank, Variant variant, std::uint64_t seed);

struct ExperimentInputs {
  const Template* tmpl = nullptr;
  const FeatureTable* features = nullptr;
  const ExamplePools* pools = nullptr;
  std::span<const StructuredReport> train_gold;
  std::span<const StructuredReport> test_gold;
};

struct VariantRun {
  Variant variant = Variant::kProtoSR;
  ModelDims dims;
  TrainState state;
  PrototypeBank bank;  // as used for prediction
  std::vector<StructuredReport> predictions;
  EvalMetrics metrics;
  std::string log;  // "step loss" lines
};

/// Model init, bank build and training; predictions and metrics stay empty.
/// A given bank replaces the one built from the pools at initialization.
/// Variants sharing config.train.seed share the backbone initialization.
VariantRun train_variant(const ExperimentInputs& inputs, const ExperimentConfig& config, Variant variant,
                         const PrototypeBank* bank = nullptr);

/// train_variant, then population of the test studies and evaluation.
VariantRun run_variant(const ExperimentInputs& inputs, const ExperimentConfig& config, Variant variant);

/// Images for the given reports' studies. Throws UnknownIdError.
std::vector<ImageInput> images_for(std::span<const StructuredReport> reports, const FeatureTable& features);

}  // namespace protokb

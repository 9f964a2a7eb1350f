#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "protokb/extraction.hpp"
#include "protokb/io.hpp"
#include "protokb/knowledge_base.hpp"
#include "protokb/model.hpp"
#include "protokb/template.hpp"

namespace protokb {

struct TrainConfig {
  double learning_rate = 3e-3;
  int batch_size = 8;
  int accumulation = 4;
  long refresh_every = 10000;  // optimizer steps; 0 disables refresh
  double ema_decay = 0.999;
  std::uint64_t seed = 1;
  long steps = 2000;
  double temperature = 0.1;
  int k = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int threads = 1;  // bank refresh only

  /// Throws ConfigError.
  void validate() const;
};

std::string serialize_train_config(const TrainConfig& config);
/// Missing keys keep their defaults.
TrainConfig parse_train_config(std::string_view json_text);

/// One supervised question of one study, asked under the gold history.
struct TrainingSample {
  std::string study_id;
  std::size_t question_index = 0;
  Eigen::VectorXd features;
  Eigen::VectorXd tokens;                // hashed rendered context
  std::vector<std::size_t> option_mask;  // global indices of the question's options
  Eigen::VectorXd targets;               // 0/1 over all options
};

/// Teacher-forced samples in traversal order for each gold report. Questions
/// whose trigger is unmet under gold are not asked; an asked multi-select
/// question without gold answers is an all-negative target. Throws
/// UnknownIdError for studies without features.
std::vector<TrainingSample> build_samples(const Template& tmpl,
                                          std::span<const StructuredReport> gold,
                                          const FeatureTable& features, Eigen::Index text_buckets);

/// Adds the gradient of one sample's loss into grad; returns that loss.
double accumulate_sample(const Model<double>& model, const TrainingSample& sample,
                         const Template& tmpl, const PrototypeBank& bank, Model<double>& grad);

struct TrainState {
  Model<double> model;
  Model<double> moment1;
  Model<double> moment2;
  long step = 0;  // completed optimizer updates
  EmaEncoderState ema;

  static TrainState start(Model<double> model, double ema_decay);
};

/// Image embedder for bank construction: the given encoder applied to stored features.
/// Throws EncoderFailure for unknown studies.
ImageEmbedder make_embedder(const Affine<double>& encoder, const FeatureTable& features);

/// Encoder whose parameters are the EMA state, shaped like the live encoder.
Affine<double> ema_encoder(const TrainState& state);

using BankTransform = std::function<PrototypeBank(PrototypeBank)>;

struct TrainContext {
  const Template* tmpl = nullptr;
  const ExamplePools* pools = nullptr;  // null disables refresh
  const FeatureTable* features = nullptr;
  BankTransform transform;  // applied to every refreshed bank
};

/// One optimizer update from the summed per-sample gradients of all
/// micro-batches divided by the total sample count, so the split into
/// micro-batches does not change the update. Then advances the EMA encoder
/// and refreshes the bank when the new step count hits the cadence.
/// Returns the mean loss. Throws NonFiniteGradient before touching parameters.
double train_step(TrainState& state, BankSnapshot& bank,
                  std::span<const std::span<const TrainingSample>> micro_batches,
                  const TrainConfig& config, const TrainContext& context);

/// config.steps updates over batches drawn from a seeded reshuffling of samples.
/// on_step receives (step, mean loss) after every update.
void train(TrainState& state, BankSnapshot& bank, std::span<const TrainingSample> samples,
           const TrainConfig& config, const TrainContext& context,
           const std::function<void(long, double)>& on_step = {});

/// JSON: dims, flags, named parameters, optimizer moments and EMA state.
std::string serialize_checkpoint(const TrainState& state, const ModelDims& dims,
                                 const TrainConfig& config);
struct Checkpoint {
  TrainState state;
  ModelDims dims;
  std::uint64_t seed = 0;
};
Checkpoint parse_checkpoint(std::string_view json_text);

}  // namespace protokb

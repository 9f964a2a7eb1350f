#include "protokb/experiment.hpp"

#include <json.hpp>

#include "protokb/errors.hpp"
#include "protokb/io.hpp"

namespace protokb {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kProtoSR: return "protosr";
    case Variant::kNoKnowledge: return "no-knowledge";
    case Variant::kRandomizedPrototypes: return "randomized-prototypes";
    case Variant::kEarlyFusionStub: return "early-fusion-stub";
  }
  return "protosr";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::kProtoSR, Variant::kNoKnowledge, Variant::kRandomizedPrototypes,
                 Variant::kEarlyFusionStub}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

ModelDims ModelConfig::dims(Eigen::Index feature_dim, Eigen::Index answer_dim, bool early_fusion) const {
  ModelDims d;
  d.backbone = {feature_dim, image_dim, text_buckets, text_dim, fused_dim, answer_dim, early_fusion};
  d.shared_dim = shared_dim;
  d.hidden_dim = hidden_dim;
  return d;
}

std::string serialize_experiment_config(const ExperimentConfig& c) {
  ordered_json j;
  j["synth"] = ordered_json::parse(serialize_synth_config(c.synth));
  ordered_json m;
  m["image_dim"] = c.model.image_dim;
  m["text_buckets"] = c.model.text_buckets;
  m["text_dim"] = c.model.text_dim;
  m["fused_dim"] = c.model.fused_dim;
  m["shared_dim"] = c.model.shared_dim;
  m["hidden_dim"] = c.model.hidden_dim;
  j["model"] = m;
  j["train"] = ordered_json::parse(serialize_train_config(c.train));
  j["threads"] = c.threads;
  j["log_every"] = c.log_every;
  return j.dump(2) + "\n";
}

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  ExperimentConfig c;
  try {
    auto j = json::parse(json_text);
    if (j.contains("synth")) c.synth = parse_synth_config(j["synth"].dump());
    if (j.contains("train")) c.train = parse_train_config(j["train"].dump());
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.image_dim = m.value("image_dim", c.model.image_dim);
      c.model.text_buckets = m.value("text_buckets", c.model.text_buckets);
      c.model.text_dim = m.value("text_dim", c.model.text_dim);
      c.model.fused_dim = m.value("fused_dim", c.model.fused_dim);
      c.model.shared_dim = m.value("shared_dim", c.model.shared_dim);
      c.model.hidden_dim = m.value("hidden_dim", c.model.hidden_dim);
    }
    c.threads = j.value("threads", c.threads);
    c.log_every = j.value("log_every", c.log_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  const auto& m = c.model;
  if (m.image_dim < 1 || m.text_buckets < 1 || m.text_dim < 1 || m.fused_dim < 1 || m.shared_dim < 1 ||
      m.hidden_dim < 0) {
    throw ConfigError("model widths must be positive");
  }
  return c;
}

MiningOutput mine_corpus(std::span<const FreeTextStudy> corpus, const Template& tmpl,
                         const TerminologyLexicon& lexicon, ConstrainedAnswerProvider& extractor,
                         int threads, const FilterOptions& filter) {
  MiningOutput out;
  out.raw = extract_corpus(corpus, tmpl, lexicon, extractor, threads);
  for (const auto& r : out.raw.results) out.filtered.push_back(filter_extractions(r, tmpl, filter));
  out.pools = build_example_pools(out.filtered);
  return out;
}

PrototypeBank initial_bank(const ExamplePools& pools, const Template& tmpl, const Model<double>& model,
                           const FeatureTable& features, const TrainConfig& config, int threads) {
  BankBuildOptions opts;
  opts.k = config.k;
  opts.seed = config.seed;
  opts.threads = threads;
  opts.step = 0;
  return build_bank(pools, tmpl, make_embedder(model.backbone.image, features), opts);
}

PrototypeBank variant_bank(const PrototypeBank& bank, Variant variant, std::uint64_t seed) {
  switch (variant) {
    case Variant::kNoKnowledge:
      return PrototypeBank(bank.dim(), bank.answer_dim(), {}, bank.built_at_step(), bank.seed(), bank.k());
    case Variant::kRandomizedPrototypes:
      return randomize_embeddings(bank, seed);
    default:
      return bank;
  }
}

std::vector<ImageInput> images_for(std::span<const StructuredReport> reports, const FeatureTable& features) {
  std::vector<ImageInput> out;
  for (const auto& r : reports) {
    auto it = features.find(r.study_id);
    if (it == features.end()) throw UnknownIdError("no image features for study '" + r.study_id + "'");
    out.push_back({r.study_id, it->second});
  }
  return out;
}

VariantRun train_variant(const ExperimentInputs& in, const ExperimentConfig& config, Variant variant,
                         const PrototypeBank* given) {
  const auto& tmpl = *in.tmpl;
  const auto& features = *in.features;
  if (features.empty()) throw EmptyInput("no image features");
  const Eigen::Index feature_dim = features.begin()->second.size();
  const bool early = variant == Variant::kEarlyFusionStub;

  VariantRun run;
  run.variant = variant;
  run.dims = config.model.dims(feature_dim, static_cast<Eigen::Index>(tmpl.num_options()), early);
  auto model = Model<double>::init(run.dims, config.train.seed);
  model.late_fusion = !early;
  model.head.temperature = config.train.temperature;

  const auto seed = config.train.seed;
  PrototypeBank base =
      given ? *given : initial_bank(*in.pools, tmpl, model, features, config.train, config.threads);
  BankSnapshot bank(variant_bank(base, variant, seed));

  TrainContext ctx;
  ctx.tmpl = &tmpl;
  ctx.features = &features;
  ctx.pools = variant == Variant::kNoKnowledge ? nullptr : in.pools;
  ctx.transform = [variant, seed](PrototypeBank b) { return variant_bank(b, variant, seed); };

  auto samples = build_samples(tmpl, in.train_gold, features, run.dims.backbone.text_buckets);
  run.state = TrainState::start(std::move(model), config.train.ema_decay);
  train(run.state, bank, samples, config.train, ctx, [&](long step, double loss) {
    if (config.log_every > 0 && step % config.log_every == 0) {
      run.log += std::to_string(step) + " " + format_double(loss) + "\n";
    }
  });

  run.bank = *bank.get();
  return run;
}

VariantRun run_variant(const ExperimentInputs& in, const ExperimentConfig& config, Variant variant) {
  const auto& tmpl = *in.tmpl;
  const auto& features = *in.features;
  auto run = train_variant(in, config, variant);
  run.predictions = populate_reports(images_for(in.test_gold, features), tmpl, run.state.model, run.bank,
                                     run.dims.backbone.text_buckets, config.threads);
  run.metrics = evaluate_reports(run.predictions, in.test_gold, tmpl);
  return run;
}

}  // namespace protokb

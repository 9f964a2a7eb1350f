#include "protokb/training.hpp"

#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>

#include "protokb/errors.hpp"
#include "protokb/text.hpp"

namespace protokb {

using nlohmann::json;
using nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1 || accumulation < 1) throw ConfigError("batch_size and accumulation must be >= 1");
  if (refresh_every < 0) throw ConfigError("refresh_every must be >= 0");
  if (ema_decay < 0 || ema_decay > 1) throw ConfigError("ema_decay outside [0,1]");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || !(epsilon > 0)) {
    throw ConfigError("invalid optimizer constants");
  }
}

std::string serialize_train_config(const TrainConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["accumulation"] = c.accumulation;
  j["refresh_every"] = c.refresh_every;
  j["ema_decay"] = c.ema_decay;
  j["seed"] = c.seed;
  j["steps"] = c.steps;
  j["temperature"] = c.temperature;
  j["k"] = c.k;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["threads"] = c.threads;
  return j.dump(2) + "\n";
}

TrainConfig parse_train_config(std::string_view json_text) {
  TrainConfig c;
  try {
    auto j = json::parse(json_text);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.accumulation = j.value("accumulation", c.accumulation);
    c.refresh_every = j.value("refresh_every", c.refresh_every);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.seed = j.value("seed", c.seed);
    c.steps = j.value("steps", c.steps);
    c.temperature = j.value("temperature", c.temperature);
    c.k = j.value("k", c.k);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<TrainingSample> build_samples(const Template& tmpl,
                                          std::span<const StructuredReport> gold,
                                          const FeatureTable& features, Eigen::Index text_buckets) {
  std::vector<TrainingSample> out;
  const auto n_opts = static_cast<Eigen::Index>(tmpl.num_options());
  for (const auto& report : gold) {
    auto fit = features.find(report.study_id);
    if (fit == features.end()) throw UnknownIdError("no image features for study '" + report.study_id + "'");
    std::vector<std::pair<std::string, std::vector<std::string>>> history;
    for (const Question* q : traversal_order(tmpl)) {
      if (q->trigger) {
        auto it = report.answers.find(q->trigger->parent_question);
        if (it == report.answers.end() || !it->second.contains(q->trigger->parent_option)) continue;
      }
      auto ans = report.answers.find(q->id);
      const bool answered = ans != report.answers.end() && !ans->second.empty();
      if (!answered && q->mode == AnswerMode::kSingleChoice) continue;

      TrainingSample s;
      s.study_id = report.study_id;
      s.question_index = tmpl.question_index(q->id);
      s.features = fit->second;
      s.tokens = hash_tokens(render_context(tmpl, q->id, history), text_buckets);
      s.option_mask = tmpl.option_indices(*q);
      s.targets = Eigen::VectorXd::Zero(n_opts);
      if (answered) {
        for (const auto& oid : ans->second) s.targets[static_cast<Eigen::Index>(tmpl.option_index(oid))] = 1.0;
        std::vector<std::string> chosen;
        for (const auto& oid : q->option_ids) {
          if (ans->second.contains(oid)) chosen.push_back(oid);
        }
        history.emplace_back(q->id, std::move(chosen));
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

double accumulate_sample(const Model<double>& model, const TrainingSample& sample,
                         const Template& tmpl, const PrototypeBank& bank, Model<double>& grad) {
  auto mask = valid_mask(tmpl.questions()[sample.question_index], bank);
  auto trace = forward(model, sample.features, sample.tokens, mask, bank);
  Vec<double> dz;
  double loss = bce_loss(trace.z_final, sample.targets, sample.option_mask, &dz);
  backward(model, trace, dz, grad);
  return loss;
}

TrainState TrainState::start(Model<double> model, double ema_decay) {
  TrainState s;
  s.moment1 = model.zeros_like();
  s.moment2 = model.zeros_like();
  s.ema = {model.image_encoder_parameters(), ema_decay};
  s.model = std::move(model);
  return s;
}

ImageEmbedder make_embedder(const Affine<double>& encoder, const FeatureTable& features) {
  return [encoder, &features](const std::string& study_id) -> Eigen::VectorXd {
    auto it = features.find(study_id);
    if (it == features.end()) throw EncoderFailure("no image features for study '" + study_id + "'");
    if (it->second.size() != encoder.in_dim()) throw EncoderFailure("feature width mismatch for '" + study_id + "'");
    return activate(encoder(it->second));
  };
}

Affine<double> ema_encoder(const TrainState& state) {
  Model<double> shadow;
  shadow.backbone.image = state.model.backbone.image;
  shadow.set_image_encoder_parameters(state.ema.parameters);
  return shadow.backbone.image;
}

namespace {

template <typename M>
std::vector<std::span<double>> flat_views(M& model) {
  std::vector<std::span<double>> out;
  model.visit([&](const std::string&, auto& p) { out.emplace_back(p.data(), static_cast<std::size_t>(p.size())); });
  return out;
}

}  // namespace

double train_step(TrainState& state, BankSnapshot& bank,
                  std::span<const std::span<const TrainingSample>> micro_batches,
                  const TrainConfig& config, const TrainContext& context) {
  auto snapshot = bank.get();
  Model<double> grad = state.model.zeros_like();
  double loss = 0.0;
  std::size_t count = 0;
  for (const auto& micro : micro_batches) {
    for (const auto& sample : micro) {
      loss += accumulate_sample(state.model, sample, *context.tmpl, *snapshot, grad);
      ++count;
    }
  }
  if (count == 0) throw EmptyInput("training step without samples");
  const double inv = 1.0 / static_cast<double>(count);

  auto g = flat_views(grad);
  for (auto view : g) {
    for (double& x : view) {
      x *= inv;
      if (!std::isfinite(x)) throw NonFiniteGradient("non-finite gradient at step " + std::to_string(state.step + 1));
    }
  }

  const long t = state.step + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  auto p = flat_views(state.model);
  auto m = flat_views(state.moment1);
  auto v = flat_views(state.moment2);
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const double gi = g[k][i];
      m[k][i] = config.beta1 * m[k][i] + (1.0 - config.beta1) * gi;
      v[k][i] = config.beta2 * v[k][i] + (1.0 - config.beta2) * gi * gi;
      p[k][i] -= config.learning_rate * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + config.epsilon);
    }
  }
  state.step = t;
  state.ema = ema_update(state.model.image_encoder_parameters(), state.ema);

  if (context.pools && context.features && config.refresh_every > 0 && t % config.refresh_every == 0) {
    auto embedder = make_embedder(ema_encoder(state), *context.features);
    auto next = refresh_bank(*snapshot, *context.pools, embedder, t, config.threads);
    if (context.transform) next = context.transform(std::move(next));
    bank.install(std::move(next));
  }
  return loss * inv;
}

void train(TrainState& state, BankSnapshot& bank, std::span<const TrainingSample> samples,
           const TrainConfig& config, const TrainContext& context,
           const std::function<void(long, double)>& on_step) {
  config.validate();
  if (samples.empty()) throw EmptyInput("no training samples");
  std::mt19937_64 rng(derive_seed(config.seed, "batches"));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  const auto micro_size = static_cast<std::size_t>(config.batch_size);
  std::vector<TrainingSample> batch;
  for (long s = 0; s < config.steps; ++s) {
    batch.clear();
    for (std::size_t i = 0; i < micro_size * static_cast<std::size_t>(config.accumulation); ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(samples[order[cursor++]]);
    }
    std::vector<std::span<const TrainingSample>> micro;
    for (std::size_t a = 0; a < static_cast<std::size_t>(config.accumulation); ++a) {
      micro.emplace_back(batch.data() + a * micro_size, micro_size);
    }
    double loss = train_step(state, bank, micro, config, context);
    if (on_step) on_step(state.step, loss);
  }
}

namespace {

ordered_json dims_json(const ModelDims& d) {
  ordered_json j;
  j["feature_dim"] = d.backbone.feature_dim;
  j["image_dim"] = d.backbone.image_dim;
  j["text_buckets"] = d.backbone.text_buckets;
  j["text_dim"] = d.backbone.text_dim;
  j["fused_dim"] = d.backbone.fused_dim;
  j["answer_dim"] = d.backbone.answer_dim;
  j["early_fusion"] = d.backbone.early_fusion;
  j["shared_dim"] = d.shared_dim;
  j["hidden_dim"] = d.hidden_dim;
  return j;
}

ModelDims dims_from(const json& j) {
  ModelDims d;
  d.backbone.feature_dim = j.at("feature_dim");
  d.backbone.image_dim = j.at("image_dim");
  d.backbone.text_buckets = j.at("text_buckets");
  d.backbone.text_dim = j.at("text_dim");
  d.backbone.fused_dim = j.at("fused_dim");
  d.backbone.answer_dim = j.at("answer_dim");
  d.backbone.early_fusion = j.at("early_fusion");
  d.shared_dim = j.at("shared_dim");
  d.hidden_dim = j.at("hidden_dim");
  return d;
}

ordered_json params_json(const Model<double>& m) {
  ordered_json arr = ordered_json::array();
  m.visit([&](const std::string& name, const auto& p) {
    ordered_json e;
    e["name"] = name;
    e["rows"] = p.rows();
    e["cols"] = p.cols();
    e["values"] = std::vector<double>(p.data(), p.data() + p.size());
    arr.push_back(std::move(e));
  });
  return arr;
}

void load_params(Model<double>& m, const json& arr) {
  std::map<std::string, const json*> by_name;
  for (const auto& e : arr) by_name[e.at("name").get<std::string>()] = &e;
  m.visit([&](const std::string& name, auto& p) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint: missing parameter '" + name + "'");
    const json& e = *it->second;
    if (e.at("rows").get<long>() != p.rows() || e.at("cols").get<long>() != p.cols()) {
      throw DimensionMismatch("checkpoint: shape mismatch for '" + name + "'");
    }
    auto values = e.at("values").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != p.size()) throw ParseError("checkpoint: bad length for '" + name + "'");
    std::copy(values.begin(), values.end(), p.data());
  });
}

Model<double> zero_model(const ModelDims& d) {
  Model<double> m;
  m.backbone = Backbone<double>::zeros(d.backbone);
  m.head = FusionHead<double>::zeros(d.head());
  return m;
}

}  // namespace

std::string serialize_checkpoint(const TrainState& state, const ModelDims& dims, const TrainConfig& config) {
  ordered_json j;
  j["format"] = "protokb-checkpoint 1";
  j["seed"] = config.seed;
  j["step"] = state.step;
  j["late_fusion"] = state.model.late_fusion;
  j["temperature"] = state.model.head.temperature;
  j["weighting"] = state.model.head.weighting == RetrievalWeighting::kSoftmax ? "softmax" : "raw-cosine";
  j["dims"] = dims_json(dims);
  j["parameters"] = params_json(state.model);
  j["adam_moment1"] = params_json(state.moment1);
  j["adam_moment2"] = params_json(state.moment2);
  j["ema_decay"] = state.ema.decay;
  j["ema_parameters"] =
      std::vector<double>(state.ema.parameters.data(), state.ema.parameters.data() + state.ema.parameters.size());
  return j.dump(1) + "\n";
}

Checkpoint parse_checkpoint(std::string_view json_text) {
  try {
    auto j = json::parse(json_text);
    if (j.at("format") != "protokb-checkpoint 1") throw ParseError("checkpoint: unsupported format");
    Checkpoint c;
    c.dims = dims_from(j.at("dims"));
    c.seed = j.at("seed");
    auto& s = c.state;
    s.model = zero_model(c.dims);
    s.moment1 = zero_model(c.dims);
    s.moment2 = zero_model(c.dims);
    load_params(s.model, j.at("parameters"));
    load_params(s.moment1, j.at("adam_moment1"));
    load_params(s.moment2, j.at("adam_moment2"));
    s.model.late_fusion = j.at("late_fusion");
    s.model.head.temperature = j.at("temperature");
    s.model.head.weighting =
        j.at("weighting") == "softmax" ? RetrievalWeighting::kSoftmax : RetrievalWeighting::kRawCosine;
    s.step = j.at("step");
    auto ema = j.at("ema_parameters").get<std::vector<double>>();
    s.ema.decay = j.at("ema_decay");
    s.ema.parameters = Eigen::Map<const Eigen::VectorXd>(ema.data(), static_cast<Eigen::Index>(ema.size()));
    require_dims(s.ema.parameters.size(), s.model.image_encoder_parameters().size(), "checkpoint EMA state");
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace protokb

#pragma once

#include <random>
#include <string>
#include <vector>

#include "protokb/model.hpp"
#include "protokb/template.hpp"
#include "protokb/terminology.hpp"

namespace fixtures {

// lung (L1) -> effusion (L2) -> effusion_size, effusion_location (L3); heart (L1) is childless.
inline protokb::Template chest_template() {
  using protokb::AnswerMode;
  using protokb::Trigger;
  return protokb::Template::build(
      "chest",
      {
          {"lung", 1, "is there any lung abnormality", AnswerMode::kSingleChoice,
           {"lung abnormality", "no lung abnormality"}, std::nullopt},
          {"effusion", 2, "is there a pleural effusion", AnswerMode::kSingleChoice,
           {"pleural effusion", "no pleural effusion"}, Trigger{"lung", "lung/lung abnormality"}},
          {"effusion_size", 3, "what size is the effusion", AnswerMode::kMultiSelect, {"small", "large"},
           Trigger{"effusion", "effusion/pleural effusion"}},
          {"effusion_location", 3, "where is the effusion", AnswerMode::kMultiSelect, {"right", "left"},
           Trigger{"effusion", "effusion/pleural effusion"}},
          {"heart", 1, "is there cardiomegaly", AnswerMode::kSingleChoice, {"cardiomegaly", "no cardiomegaly"},
           std::nullopt},
      });
}

inline protokb::TerminologyLexicon chest_lexicon(const protokb::Template& t) {
  std::multimap<std::string, std::string> seeds{
      {"heart/cardiomegaly", "enlarged heart"},
      {"heart/no cardiomegaly", "heart size normal"},
      {"effusion/no pleural effusion", "no effusion"},
  };
  protokb::SeedListExpander ex(seeds);
  return protokb::expand_terminology(t, &ex);
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

// Small randomized head instance: question "q" with four options (all in the bank,
// so M = 4) plus question "r" with three options, |Y| = 7.
struct HeadInstance {
  protokb::Template tmpl;
  protokb::ModelDims dims;
  protokb::Model<double> model;
  protokb::PrototypeBank bank;
  Eigen::VectorXd features;
  Eigen::VectorXd tokens;
  Eigen::VectorXd targets;
  std::vector<std::size_t> option_mask;  // options of "q"
  std::vector<std::size_t> bank_mask;    // valid prototypes for "q"
};

inline HeadInstance head_instance(std::uint64_t seed, bool nonzero_scale = true) {
  using namespace protokb;
  std::mt19937_64 rng(seed);
  HeadInstance h;
  h.tmpl = Template::build("g", {{"q", 1, "q", AnswerMode::kMultiSelect, {"a", "b", "c", "d"}, std::nullopt},
                                 {"r", 1, "r", AnswerMode::kMultiSelect, {"e", "f", "g"}, std::nullopt}});
  h.dims.backbone = {5, 6, 11, 4, 8, 7, false};  // F, d, H, d_t, d_s, |Y|
  h.dims.shared_dim = 5;
  h.dims.hidden_dim = 9;
  h.model = Model<double>::init(h.dims, seed);
  h.model.visit([&](const std::string&, auto& p) {
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = std::normal_distribution<double>(0, 0.5)(rng);
  });
  if (!nonzero_scale) h.model.head.scale.setZero();
  std::vector<Prototype> protos;
  for (const char* o : {"a", "b", "c", "d", "f"}) {
    std::string id = std::string(o == std::string("f") ? "r/" : "q/") + o;
    protos.push_back({id, random_vector(6, rng), h.tmpl.option_index(id), 1});
  }
  h.bank = PrototypeBank(6, 7, std::move(protos), 0, seed, 5);
  h.features = random_vector(5, rng);
  h.tokens = random_vector(11, rng).cwiseAbs();
  h.targets = Eigen::VectorXd::Zero(7);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 7; ++i) h.targets[i] = coin(rng) ? 1.0 : 0.0;
  h.option_mask = h.tmpl.option_indices(h.tmpl.question("q"));
  h.bank_mask = valid_mask(h.tmpl.question("q"), h.bank);
  return h;
}

template <typename Scalar>
Scalar instance_loss(const HeadInstance& h, const protokb::Model<Scalar>& m, const protokb::PrototypeBank& bank) {
  auto mask = protokb::valid_mask(h.tmpl.question("q"), bank);
  auto t = protokb::forward(m, h.features, h.tokens, mask, bank);
  return protokb::bce_loss(t.z_final, h.targets, h.option_mask);
}

// Same model in extended precision, for finite-difference oracles.
inline protokb::Model<long double> extended(const protokb::Model<double>& m, const protokb::ModelDims& dims) {
  auto out = protokb::Model<long double>::init(dims, 0);
  std::vector<const double*> src;
  m.visit([&](const std::string&, const auto& p) { src.push_back(p.data()); });
  std::size_t k = 0;
  out.visit([&](const std::string&, auto& p) {
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<long double>(src[k][i]);
    ++k;
  });
  out.late_fusion = m.late_fusion;
  out.head.temperature = m.head.temperature;
  out.head.weighting = m.head.weighting;
  return out;
}

inline protokb::Model<double> instance_gradient(const HeadInstance& h, const protokb::Model<double>& m,
                                                const protokb::PrototypeBank& bank) {
  auto mask = protokb::valid_mask(h.tmpl.question("q"), bank);
  auto t = protokb::forward(m, h.features, h.tokens, mask, bank);
  protokb::Vec<double> dz;
  protokb::bce_loss(t.z_final, h.targets, h.option_mask, &dz);
  auto g = m.zeros_like();
  protokb::backward(m, t, dz, g);
  return g;
}

// Perturbs every parameter of every group by +-h and compares the central
// difference of `loss` with the analytic gradient. Returns the largest
// per-group relative error max|a - n| / max(max|n|, 1e-12). Pass an
// extended-precision model to keep cancellation error out of tiny groups.
template <typename Scalar, typename LossFn>
double max_gradcheck_error(protokb::Model<Scalar> model, const protokb::Model<double>& analytic,
                           LossFn&& loss, double h = 1e-6, std::string* worst_group = nullptr) {
  std::vector<std::pair<std::string, Eigen::VectorXd>> grads;
  analytic.visit([&](const std::string& name, const auto& p) {
    grads.emplace_back(name, Eigen::Map<const Eigen::VectorXd>(p.data(), p.size()));
  });
  std::vector<std::pair<std::string, std::pair<Scalar*, Eigen::Index>>> params;
  model.visit([&](const std::string& name, auto& p) { params.push_back({name, {p.data(), p.size()}}); });

  double worst = 0.0;
  for (std::size_t g = 0; g < params.size(); ++g) {
    auto [data, n] = params[g].second;
    Eigen::VectorXd numeric(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar keep = data[i];
      data[i] = keep + Scalar(h);
      const Scalar up = loss(model);
      data[i] = keep - Scalar(h);
      const Scalar down = loss(model);
      data[i] = keep;
      numeric[i] = static_cast<double>((up - down) / (Scalar(2) * Scalar(h)));
    }
    const double scale = std::max(numeric.cwiseAbs().maxCoeff(), 1e-12);
    const double err = (grads[g].second - numeric).cwiseAbs().maxCoeff() / scale;
    // groups whose true gradient is zero must also be zero analytically
    const double e = numeric.cwiseAbs().maxCoeff() < 1e-9 ? grads[g].second.cwiseAbs().maxCoeff() : err;
    if (e > worst) {
      worst = e;
      if (worst_group) *worst_group = params[g].first;
    }
  }
  return worst;
}

}  // namespace fixtures

#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "protokb/backbone.hpp"
#include "protokb/errors.hpp"
#include "protokb/knowledge_base.hpp"
#include "protokb/template.hpp"

namespace protokb {

enum class RetrievalWeighting {
  kSoftmax,    // softmax(cosine / temperature) over the masked prototypes
  kRawCosine,  // the masked cosines themselves, unnormalized
};

struct HeadDims {
  Eigen::Index fused_dim = 32;   // d_s
  Eigen::Index proto_dim = 16;   // d
  Eigen::Index shared_dim = 16;  // d_p
  Eigen::Index answer_dim = 2;   // |Y|
  Eigen::Index hidden_dim = 4;   // h, 2|Y| by default
};

/// Prototype-conditioned knowledge branch: projections into the shared
/// retrieval space, the support-bias MLP and the per-answer scale s.
template <typename Scalar>
struct FusionHead {
  Affine<Scalar> proj_query;  // d_s -> d_p
  Affine<Scalar> proj_proto;  // d -> d_p
  Affine<Scalar> mlp_hidden;  // d + |Y| -> h
  Affine<Scalar> mlp_out;     // h -> |Y|
  Vec<Scalar> scale;          // s, zero at initialization
  Scalar temperature = Scalar(0.1);
  RetrievalWeighting weighting = RetrievalWeighting::kSoftmax;

  static FusionHead zeros(const HeadDims& d) {
    FusionHead h;
    h.proj_query = Affine<Scalar>::zeros(d.shared_dim, d.fused_dim);
    h.proj_proto = Affine<Scalar>::zeros(d.shared_dim, d.proto_dim);
    h.mlp_hidden = Affine<Scalar>::zeros(d.hidden_dim, d.proto_dim + d.answer_dim);
    h.mlp_out = Affine<Scalar>::zeros(d.answer_dim, d.hidden_dim);
    h.scale = Vec<Scalar>::Zero(d.answer_dim);
    return h;
  }

  template <typename Rng>
  static FusionHead random(const HeadDims& d, Rng& rng) {
    FusionHead h;
    h.proj_query = Affine<Scalar>::random(d.shared_dim, d.fused_dim, rng);
    h.proj_proto = Affine<Scalar>::random(d.shared_dim, d.proto_dim, rng);
    h.mlp_hidden = Affine<Scalar>::random(d.hidden_dim, d.proto_dim + d.answer_dim, rng);
    h.mlp_out = Affine<Scalar>::random(d.answer_dim, d.hidden_dim, rng);
    h.scale = Vec<Scalar>::Zero(d.answer_dim);
    return h;
  }

  template <typename F>
  void visit(F&& f) {
    proj_query.visit("head.proj_query", f);
    proj_proto.visit("head.proj_proto", f);
    mlp_hidden.visit("head.mlp_hidden", f);
    mlp_out.visit("head.mlp_out", f);
    f(std::string("head.scale"), scale);
  }
  template <typename F>
  void visit(F&& f) const {
    proj_query.visit("head.proj_query", f);
    proj_proto.visit("head.proj_proto", f);
    mlp_hidden.visit("head.mlp_hidden", f);
    mlp_out.visit("head.mlp_out", f);
    f(std::string("head.scale"), scale);
  }
};

template <typename Scalar>
struct RetrievalWeights {
  std::vector<std::size_t> indices;  // bank indices passing the mask
  Vec<Scalar> weights;               // alpha, aligned with indices
};

template <typename Scalar>
struct EvidenceSummary {
  Vec<Scalar> v;  // alpha^T P
  Vec<Scalar> u;  // alpha^T A
};

/// Intermediate values of a retrieval, kept for backpropagation.
template <typename Scalar>
struct RetrievalTrace {
  Vec<Scalar> query;                    // proj_query(S)
  std::vector<Vec<Scalar>> keys;        // proj_proto(P_i) per masked prototype
  std::vector<Vec<Scalar>> embeddings;  // P_i cast to Scalar
  std::vector<Eigen::Index> answer_rows;
  Vec<Scalar> cosines;
};

/// Bank indices whose option belongs to the question, in option order.
inline std::vector<std::size_t> valid_mask(const Question& question, const PrototypeBank& bank) {
  std::vector<std::size_t> out;
  for (const auto& oid : question.option_ids) {
    if (auto i = bank.find(oid)) out.push_back(*i);
  }
  return out;
}

/// Cosine similarity; 0 when either vector has zero norm.
template <typename DA, typename DB>
typename DA::Scalar cosine(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  using S = typename DA::Scalar;
  S na = a.norm();
  S nb = b.norm();
  if (na == S(0) || nb == S(0)) return S(0);
  return a.dot(b) / (na * nb);
}

/// Numerically stable softmax of x / temperature.
template <typename Derived>
Vec<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& x,
                                      typename Derived::Scalar temperature) {
  using S = typename Derived::Scalar;
  if (x.size() == 0) return Vec<S>();
  Vec<S> scaled = x / temperature;
  Vec<S> e = (scaled.array() - scaled.maxCoeff()).exp().matrix();
  return e / e.sum();
}

template <typename Scalar>
RetrievalWeights<Scalar> retrieve(const Vec<Scalar>& fused, const PrototypeBank& bank,
                                  std::span<const std::size_t> mask, const FusionHead<Scalar>& head,
                                  RetrievalTrace<Scalar>* trace = nullptr) {
  RetrievalWeights<Scalar> out;
  out.indices.assign(mask.begin(), mask.end());
  if (mask.empty()) return out;
  require_dims(bank.dim(), head.proj_proto.in_dim(), "prototype width");

  RetrievalTrace<Scalar> local;
  RetrievalTrace<Scalar>& t = trace ? *trace : local;
  t.query = head.proj_query(fused);
  t.keys.clear();
  t.embeddings.clear();
  t.answer_rows.clear();
  t.cosines.resize(static_cast<Eigen::Index>(mask.size()));
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j] >= bank.size()) throw DimensionMismatch("mask index outside the bank");
    t.embeddings.push_back(bank[mask[j]].embedding.template cast<Scalar>());
    t.keys.push_back(head.proj_proto(t.embeddings.back()));
    t.answer_rows.push_back(static_cast<Eigen::Index>(bank[mask[j]].answer_index));
    t.cosines[static_cast<Eigen::Index>(j)] = cosine(t.query, t.keys.back());
  }
  out.weights = head.weighting == RetrievalWeighting::kSoftmax ? softmax(t.cosines, head.temperature)
                                                               : t.cosines;
  return out;
}

template <typename Scalar>
EvidenceSummary<Scalar> summarize(const RetrievalWeights<Scalar>& alpha, const PrototypeBank& bank) {
  EvidenceSummary<Scalar> s{Vec<Scalar>::Zero(bank.dim()), Vec<Scalar>::Zero(bank.answer_dim())};
  for (std::size_t j = 0; j < alpha.indices.size(); ++j) {
    const auto& p = bank[alpha.indices[j]];
    const Scalar w = alpha.weights[static_cast<Eigen::Index>(j)];
    s.v += w * p.embedding.template cast<Scalar>();
    s.u[static_cast<Eigen::Index>(p.answer_index)] += w;
  }
  return s;
}

/// MLP([v; u]); the zero vector when there is no evidence (the MLP is not evaluated).
template <typename Scalar>
Vec<Scalar> support_bias(const std::optional<EvidenceSummary<Scalar>>& summary,
                         const FusionHead<Scalar>& head, Vec<Scalar>* mlp_input = nullptr,
                         Vec<Scalar>* hidden = nullptr) {
  if (!summary) return Vec<Scalar>::Zero(head.mlp_out.out_dim());
  require_dims(summary->v.size() + summary->u.size(), head.mlp_hidden.in_dim(), "evidence summary");
  Vec<Scalar> x(summary->v.size() + summary->u.size());
  x << summary->v, summary->u;
  Vec<Scalar> h = activate(head.mlp_hidden(x));
  Vec<Scalar> out = head.mlp_out(h);
  if (mlp_input) *mlp_input = std::move(x);
  if (hidden) *hidden = std::move(h);
  return out;
}

/// z_final = z_base + s .* b_sup.
template <typename Scalar>
Vec<Scalar> fuse(const Vec<Scalar>& z_base, const Vec<Scalar>& b_sup, const FusionHead<Scalar>& head) {
  require_dims(b_sup.size(), z_base.size(), "support bias");
  require_dims(head.scale.size(), z_base.size(), "scale vector");
  return z_base + head.scale.cwiseProduct(b_sup);
}

/// Mean binary cross-entropy with logits over the masked positions.
/// Writes dL/dz into grad (zero outside the mask) when given. Throws EmptyMask.
template <typename Scalar>
Scalar bce_loss(const Vec<Scalar>& logits, const Eigen::VectorXd& targets,
                std::span<const std::size_t> mask, Vec<Scalar>* grad = nullptr) {
  require_dims(targets.size(), logits.size(), "targets");
  if (mask.empty()) throw EmptyMask("loss over an empty question mask");
  const Scalar n = Scalar(static_cast<double>(mask.size()));
  Scalar total(0);
  if (grad) *grad = Vec<Scalar>::Zero(logits.size());
  for (std::size_t i : mask) {
    const auto k = static_cast<Eigen::Index>(i);
    const Scalar z = logits[k];
    const Scalar y = Scalar(targets[k]);
    total += std::max(z, Scalar(0)) - y * z + std::log1p(std::exp(-std::abs(z)));
    if (grad) (*grad)[k] = (Scalar(1) / (Scalar(1) + std::exp(-z)) - y) / n;
  }
  return total / n;
}

}  // namespace protokb

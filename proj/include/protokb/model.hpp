#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "protokb/backbone.hpp"
#include "protokb/fusion_head.hpp"
#include "protokb/knowledge_base.hpp"
#include "protokb/template.hpp"

namespace protokb {

struct ModelDims {
  BackboneDims backbone;
  Eigen::Index shared_dim = 16;
  Eigen::Index hidden_dim = 0;  // 0 selects 2|Y|

  HeadDims head() const {
    return {backbone.fused_dim, backbone.image_dim, shared_dim, backbone.answer_dim,
            hidden_dim > 0 ? hidden_dim : 2 * backbone.answer_dim};
  }
};

/// Backbone plus knowledge branch. Gradients use the same type.
template <typename Scalar>
struct Model {
  Backbone<Scalar> backbone;
  FusionHead<Scalar> head;
  bool late_fusion = true;  // knowledge branch active

  /// Backbone from derive_seed(seed, "backbone"), head from derive_seed(seed, "head"),
  /// so variants sharing a seed share the backbone initialization.
  static Model init(const ModelDims& dims, std::uint64_t seed) {
    Model m;
    std::mt19937_64 brng(derive_seed(seed, "backbone"));
    m.backbone = Backbone<Scalar>::random(dims.backbone, brng);
    std::mt19937_64 hrng(derive_seed(seed, "head"));
    m.head = FusionHead<Scalar>::random(dims.head(), hrng);
    return m;
  }

  Model zeros_like() const {
    Model g = *this;
    g.visit([](const std::string&, auto& p) { p.setZero(); });
    return g;
  }

  template <typename F>
  void visit(F&& f) {
    backbone.visit(f);
    head.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    backbone.visit(f);
    head.visit(f);
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    visit([&](const std::string&, const auto& p) { n += p.size(); });
    return n;
  }

  /// Image-encoder parameters as one flat vector (weight column-major, then bias).
  Eigen::VectorXd image_encoder_parameters() const {
    Eigen::VectorXd out(backbone.image.weight.size() + backbone.image.bias.size());
    out << Eigen::Map<const Vec<Scalar>>(backbone.image.weight.data(), backbone.image.weight.size())
               .template cast<double>(),
        backbone.image.bias.template cast<double>();
    return out;
  }

  void set_image_encoder_parameters(const Eigen::VectorXd& flat) {
    require_dims(flat.size(), backbone.image.weight.size() + backbone.image.bias.size(),
                 "image encoder parameters");
    const auto nw = backbone.image.weight.size();
    Eigen::Map<Vec<Scalar>>(backbone.image.weight.data(), nw) = flat.head(nw).template cast<Scalar>();
    backbone.image.bias = flat.tail(backbone.image.bias.size()).template cast<Scalar>();
  }
};

/// Everything computed by one forward pass; consumed by backward().
template <typename Scalar>
struct ForwardTrace {
  Vec<Scalar> features;
  Vec<Scalar> text_input;  // hashed tokens, plus the answer prior in early fusion
  Vec<Scalar> image_emb;
  Vec<Scalar> text_emb;
  Vec<Scalar> joint;  // [image_emb; text_emb]
  Vec<Scalar> fused;  // S
  Vec<Scalar> z_base;
  std::vector<std::size_t> mask;
  RetrievalTrace<Scalar> retrieval;
  RetrievalWeights<Scalar> alpha;
  std::optional<EvidenceSummary<Scalar>> summary;
  Vec<Scalar> mlp_input;
  Vec<Scalar> hidden;
  Vec<Scalar> b_sup;
  Vec<Scalar> z_final;
};

/// Answer prior injected into the text input by the early-fusion variant:
/// softmax-weighted one-hot rows of the masked prototypes, weighted by the
/// cosine to the raw image embedding. Treated as a constant input.
template <typename Scalar>
Vec<Scalar> early_answer_prior(const Vec<Scalar>& image_emb, const PrototypeBank& bank,
                               std::span<const std::size_t> mask, Scalar temperature,
                               Eigen::Index answer_dim) {
  Vec<Scalar> u = Vec<Scalar>::Zero(answer_dim);
  if (mask.empty() || bank.dim() != image_emb.size()) return u;
  Vec<Scalar> c(static_cast<Eigen::Index>(mask.size()));
  for (std::size_t j = 0; j < mask.size(); ++j) {
    c[static_cast<Eigen::Index>(j)] = cosine(image_emb, bank[mask[j]].embedding.template cast<Scalar>());
  }
  Vec<Scalar> w = softmax(c, temperature);
  for (std::size_t j = 0; j < mask.size(); ++j) {
    u[static_cast<Eigen::Index>(bank[mask[j]].answer_index)] += w[static_cast<Eigen::Index>(j)];
  }
  return u;
}

/// Backbone forward, masking, retrieval, evidence summary, support bias and late fusion.
template <typename Scalar>
ForwardTrace<Scalar> forward(const Model<Scalar>& model, const Eigen::VectorXd& features,
                             const Eigen::VectorXd& token_hist, std::span<const std::size_t> mask,
                             const PrototypeBank& bank) {
  ForwardTrace<Scalar> t;
  const auto& bb = model.backbone;
  t.features = features.template cast<Scalar>();
  t.image_emb = bb.encode_image(t.features);

  const Eigen::Index extra = bb.text.in_dim() - token_hist.size();
  t.text_input.resize(bb.text.in_dim());
  if (extra == 0) {
    t.text_input = token_hist.template cast<Scalar>();
  } else {
    require_dims(extra, bb.classifier.out_dim(), "early-fusion text input");
    t.text_input << token_hist.template cast<Scalar>(),
        early_answer_prior<Scalar>(t.image_emb, bank, mask, model.head.temperature, extra);
  }
  t.text_emb = bb.encode_text(t.text_input);
  t.joint.resize(t.image_emb.size() + t.text_emb.size());
  t.joint << t.image_emb, t.text_emb;
  t.fused = bb.fuse_features(t.image_emb, t.text_emb);
  t.z_base = bb.classify(t.fused);

  t.mask.assign(mask.begin(), mask.end());
  if (model.late_fusion && !mask.empty()) {
    t.alpha = retrieve(t.fused, bank, mask, model.head, &t.retrieval);
    t.summary = summarize(t.alpha, bank);
  }
  t.b_sup = support_bias(t.summary, model.head, &t.mlp_input, &t.hidden);
  t.z_final = fuse(t.z_base, t.b_sup, model.head);
  return t;
}

template <typename Scalar>
ForwardTrace<Scalar> forward(const Model<Scalar>& model, const ImageInput& image,
                             const QuestionContext& context, const PrototypeBank& bank,
                             const Template& tmpl, Eigen::Index text_buckets) {
  auto mask = valid_mask(tmpl.question(context.question_id), bank);
  return forward(model, image.features, hash_tokens(context.rendered_text, text_buckets), mask, bank);
}

/// Accumulates dL/dparams into grad given dL/dz_final. Prototype embeddings
/// are constants and receive nothing.
template <typename Scalar>
void backward(const Model<Scalar>& model, const ForwardTrace<Scalar>& t, const Vec<Scalar>& dz_final,
              Model<Scalar>& grad) {
  const auto& head = model.head;
  auto& gh = grad.head;
  Vec<Scalar> d_fused = Vec<Scalar>::Zero(t.fused.size());

  if (t.summary) {
    gh.scale += dz_final.cwiseProduct(t.b_sup);
    Vec<Scalar> d_bsup = dz_final.cwiseProduct(head.scale);
    Vec<Scalar> d_hidden = head.mlp_out.backward(t.hidden, d_bsup, gh.mlp_out);
    Vec<Scalar> d_pre = d_hidden.cwiseProduct(activation_slope(t.hidden));
    Vec<Scalar> d_x = head.mlp_hidden.backward(t.mlp_input, d_pre, gh.mlp_hidden);
    const Eigen::Index d = t.summary->v.size();
    const auto d_v = d_x.head(d);
    const auto d_u = d_x.tail(t.summary->u.size());

    const Eigen::Index n = static_cast<Eigen::Index>(t.alpha.indices.size());
    Vec<Scalar> d_alpha(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      // one-hot answer rows: d(alpha_j e_k)/d alpha_j selects entry k of dL/du
      d_alpha[j] = t.retrieval.embeddings[jj].dot(d_v) + d_u[t.retrieval.answer_rows[jj]];
    }

    Vec<Scalar> d_cos;
    if (head.weighting == RetrievalWeighting::kSoftmax) {
      const auto& a = t.alpha.weights;
      const Scalar mean = a.dot(d_alpha);
      d_cos = (a.array() * (d_alpha.array() - mean)).matrix() / head.temperature;
    } else {
      d_cos = d_alpha;
    }

    const auto& q = t.retrieval.query;
    const Scalar nq = q.norm();
    Vec<Scalar> d_query = Vec<Scalar>::Zero(q.size());
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& k = t.retrieval.keys[static_cast<std::size_t>(j)];
      const Scalar nk = k.norm();
      if (nq == Scalar(0) || nk == Scalar(0)) continue;
      const Scalar c = t.retrieval.cosines[j];
      Vec<Scalar> dq = k / (nq * nk) - c * q / (nq * nq);
      Vec<Scalar> dk = q / (nq * nk) - c * k / (nk * nk);
      d_query += d_cos[j] * dq;
      head.proj_proto.backward(t.retrieval.embeddings[static_cast<std::size_t>(j)], d_cos[j] * dk,
                               gh.proj_proto);
    }
    d_fused += head.proj_query.backward(t.fused, d_query, gh.proj_query);
  }

  const auto& bb = model.backbone;
  auto& gb = grad.backbone;
  d_fused += bb.classifier.backward(t.fused, dz_final, gb.classifier);
  Vec<Scalar> d_fpre = d_fused.cwiseProduct(activation_slope(t.fused));
  Vec<Scalar> d_joint = bb.fusion.backward(t.joint, d_fpre, gb.fusion);
  const Eigen::Index di = t.image_emb.size();
  Vec<Scalar> d_ipre = d_joint.head(di).cwiseProduct(activation_slope(t.image_emb));
  Vec<Scalar> d_tpre = d_joint.tail(t.text_emb.size()).cwiseProduct(activation_slope(t.text_emb));
  bb.image.backward(t.features, d_ipre, gb.image);
  bb.text.backward(t.text_input, d_tpre, gb.text);
}

}  // namespace protokb

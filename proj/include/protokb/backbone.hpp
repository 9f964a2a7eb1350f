#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "protokb/errors.hpp"
#include "protokb/template.hpp"
#include "protokb/text.hpp"

namespace protokb {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// y = W x + b.
template <typename Scalar>
struct Affine {
  Mat<Scalar> weight;
  Vec<Scalar> bias;

  static Affine zeros(Eigen::Index out, Eigen::Index in) {
    return {Mat<Scalar>::Zero(out, in), Vec<Scalar>::Zero(out)};
  }

  /// Uniform(-gain/sqrt(in), gain/sqrt(in)) weights, zero bias.
  template <typename Rng>
  static Affine random(Eigen::Index out, Eigen::Index in, Rng& rng, double gain = 1.0) {
    Affine a = zeros(out, in);
    double bound = gain / std::sqrt(static_cast<double>(std::max<Eigen::Index>(in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < in; ++j) {
      for (Eigen::Index i = 0; i < out; ++i) a.weight(i, j) = Scalar(dist(rng));
    }
    return a;
  }

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }

  template <typename Derived>
  Vec<Scalar> operator()(const Eigen::MatrixBase<Derived>& x) const {
    require_dims(x.size(), in_dim(), "affine input");
    return weight * x + bias;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }

  template <typename Other>
  Affine<Other> cast() const {
    return {weight.template cast<Other>(), bias.template cast<Other>()};
  }

  /// Accumulates gradients for y = W x + b given dL/dy; returns dL/dx.
  template <typename DX, typename DY>
  Vec<Scalar> backward(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& dy,
                       Affine& grad) const {
    grad.weight.noalias() += dy * x.transpose();
    grad.bias += dy;
    return weight.transpose() * dy;
  }
};

/// Smooth nonlinearity shared by every toy layer.
template <typename Derived>
auto activate(const Eigen::MatrixBase<Derived>& x) {
  return x.array().tanh().matrix();
}

/// d tanh(a)/da expressed through the output y = tanh(a).
template <typename Derived>
auto activation_slope(const Eigen::MatrixBase<Derived>& y) {
  using S = typename Derived::Scalar;
  return (S(1) - y.array().square()).matrix();
}

struct ImageInput {
  std::string study_id;
  Eigen::VectorXd features;
};

struct QuestionContext {
  std::string question_id;
  /// (question id, selected option ids), in asking order.
  std::vector<std::pair<std::string, std::vector<std::string>>> history;
  std::string rendered_text;
};

/// "Q: <text> A: <options>; ... Q: <current text>".
std::string render_context(const Template& tmpl, const std::string& question_id,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& history);

QuestionContext make_context(const Template& tmpl, const std::string& question_id,
                             std::vector<std::pair<std::string, std::vector<std::string>>> history);

/// Unigram + adjacent-bigram counts of the normalized text, hashed into `buckets` bins.
Eigen::VectorXd hash_tokens(std::string_view text, Eigen::Index buckets);

struct BackboneDims {
  Eigen::Index feature_dim = 16;  // raw image features
  Eigen::Index image_dim = 16;    // d, also the prototype width
  Eigen::Index text_buckets = 64;
  Eigen::Index text_dim = 16;
  Eigen::Index fused_dim = 32;    // d_s
  Eigen::Index answer_dim = 2;    // |Y|
  bool early_fusion = false;      // text input carries an extra |Y| answer-prior block

  Eigen::Index text_input_dim() const { return text_buckets + (early_fusion ? answer_dim : 0); }
};

/// Toy stand-in for the image/text encoders, fusion module and classifier.
template <typename Scalar>
struct Backbone {
  Affine<Scalar> image;       // feature_dim -> image_dim
  Affine<Scalar> text;        // text_input_dim -> text_dim
  Affine<Scalar> fusion;      // image_dim + text_dim -> fused_dim
  Affine<Scalar> classifier;  // fused_dim -> answer_dim

  static Backbone zeros(const BackboneDims& d) {
    return {Affine<Scalar>::zeros(d.image_dim, d.feature_dim),
            Affine<Scalar>::zeros(d.text_dim, d.text_input_dim()),
            Affine<Scalar>::zeros(d.fused_dim, d.image_dim + d.text_dim),
            Affine<Scalar>::zeros(d.answer_dim, d.fused_dim)};
  }

  /// The early-fusion block of the text weights stays zero so that the
  /// remaining parameters match the plain backbone drawn from the same stream.
  template <typename Rng>
  static Backbone random(const BackboneDims& d, Rng& rng) {
    Backbone b;
    b.image = Affine<Scalar>::random(d.image_dim, d.feature_dim, rng, 2.0);
    auto text = Affine<Scalar>::random(d.text_dim, d.text_buckets, rng, 2.0);
    b.text = Affine<Scalar>::zeros(d.text_dim, d.text_input_dim());
    b.text.weight.leftCols(d.text_buckets) = text.weight;
    b.fusion = Affine<Scalar>::random(d.fused_dim, d.image_dim + d.text_dim, rng, 2.0);
    b.classifier = Affine<Scalar>::random(d.answer_dim, d.fused_dim, rng);
    return b;
  }

  template <typename Derived>
  Vec<Scalar> encode_image(const Eigen::MatrixBase<Derived>& features) const {
    require_dims(features.size(), image.in_dim(), "image features");
    return activate(image(features));
  }

  template <typename Derived>
  Vec<Scalar> encode_text(const Eigen::MatrixBase<Derived>& text_input) const {
    require_dims(text_input.size(), text.in_dim(), "text input");
    return activate(text(text_input));
  }

  Vec<Scalar> fuse_features(const Vec<Scalar>& img_emb, const Vec<Scalar>& txt_emb) const {
    require_dims(img_emb.size() + txt_emb.size(), fusion.in_dim(), "fusion input");
    Vec<Scalar> joint(img_emb.size() + txt_emb.size());
    joint << img_emb, txt_emb;
    return activate(fusion(joint));
  }

  Vec<Scalar> classify(const Vec<Scalar>& fused) const {
    require_dims(fused.size(), classifier.in_dim(), "fused representation");
    return classifier(fused);
  }

  template <typename F>
  void visit(F&& f) {
    image.visit("backbone.image", f);
    text.visit("backbone.text", f);
    fusion.visit("backbone.fusion", f);
    classifier.visit("backbone.classifier", f);
  }
  template <typename F>
  void visit(F&& f) const {
    image.visit("backbone.image", f);
    text.visit("backbone.text", f);
    fusion.visit("backbone.fusion", f);
    classifier.visit("backbone.classifier", f);
  }
};

}  // namespace protokb

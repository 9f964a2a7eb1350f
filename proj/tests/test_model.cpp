#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "protokb/errors.hpp"
#include "protokb/model.hpp"
#include "protokb/training.hpp"

using namespace protokb;

TEST_CASE("toy encoders by hand") {
  Affine<double> id{Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()};
  Backbone<double> b;
  b.image = id;
  Eigen::Vector2d x(1, 2);
  auto e = b.encode_image(x);
  CHECK(e[0] == std::tanh(1.0));
  CHECK(e[1] == std::tanh(2.0));
  CHECK(b.encode_image(x) == e);
  CHECK_THROWS_AS(b.encode_image(Eigen::Vector3d(1, 2, 3)), DimensionMismatch);

  auto z = Backbone<double>::zeros({2, 2, 8, 3, 3, 4, false});
  CHECK(z.encode_image(Eigen::Vector2d::Zero()) == Eigen::Vector2d::Zero());
  z.text.bias << 0.5, -0.5, 0;
  CHECK(z.encode_text(hash_tokens("", 8)) == Eigen::Vector3d(std::tanh(0.5), std::tanh(-0.5), 0));

  // 2+2 -> 3 fusion evaluated directly
  Backbone<double> f;
  f.fusion.weight.resize(3, 4);
  f.fusion.weight << 1, 0, 0, 1, 0, 2, 0, 0, -1, 0, 1, 0;
  f.fusion.bias = Eigen::Vector3d(0.1, 0, -0.2);
  Eigen::Vector2d a(0.5, -1), t(0.25, 2);
  auto s = f.fuse_features(a, t);
  CHECK(s[0] == doctest::Approx(std::tanh(0.5 + 2 + 0.1)));
  CHECK(s[1] == doctest::Approx(std::tanh(-2.0)));
  CHECK(s[2] == doctest::Approx(std::tanh(-0.5 + 0.25 - 0.2)));

  // identity-like classifier: unit S padded to |Y| = 4
  Backbone<double> c;
  c.classifier = {Eigen::MatrixXd::Identity(4, 3), Eigen::Vector4d::Zero()};
  CHECK(c.classify(Eigen::Vector3d(1, 1, 1)) == Eigen::Vector4d(1, 1, 1, 0));
  CHECK(Backbone<double>::zeros({2, 2, 8, 3, 3, 4, false}).classify(Eigen::Vector3d::Zero()) == Eigen::Vector4d::Zero());
}

TEST_CASE("token hashing follows the rendered context") {
  auto t = fixtures::chest_template();
  std::vector<std::pair<std::string, std::vector<std::string>>> h1{
      {"lung", {"lung/lung abnormality"}}, {"heart", {"heart/no cardiomegaly"}}};
  auto h2 = h1;
  std::swap(h2[0], h2[1]);
  auto c1 = make_context(t, "effusion", h1);
  auto c2 = make_context(t, "effusion", h2);
  CHECK(c1.rendered_text ==
        "Q: is there any lung abnormality A: lung abnormality; Q: is there cardiomegaly A: no cardiomegaly; "
        "Q: is there a pleural effusion");
  CHECK(c1.rendered_text != c2.rendered_text);
  CHECK(hash_tokens(c1.rendered_text, 64) == hash_tokens(make_context(t, "effusion", h1).rendered_text, 64));
  // swapping whole turns keeps the bigram multiset; word order inside a turn does not
  CHECK(hash_tokens(c1.rendered_text, 64) == hash_tokens(c2.rendered_text, 64));
  CHECK(hash_tokens("x y z", 4096).sum() == hash_tokens("y x z", 4096).sum());
  CHECK(hash_tokens("x y z", 4096) != hash_tokens("y x z", 4096));
  CHECK(hash_tokens("a b", 1000).sum() == 3.0);
}

TEST_CASE("valid_mask and retrieval weights") {
  auto h = fixtures::head_instance(1);
  CHECK(h.bank_mask.size() == 4);
  CHECK(valid_mask(h.tmpl.question("r"), h.bank).size() == 1);
  PrototypeBank none(6, 7, {}, 0, 0, 5);
  CHECK(valid_mask(h.tmpl.question("q"), none).empty());

  // singleton: weight 1 whatever the cosine
  std::vector<std::size_t> one{h.bank_mask[2]};
  auto w = retrieve(Vec<double>(Vec<double>::Ones(8)), h.bank, one, h.model.head);
  CHECK(w.weights.size() == 1);
  CHECK(w.weights[0] == 1.0);

  // cosines (0.8, 0.4) through identity projections, tau = 0.1
  FusionHead<double> id;
  id.proj_query = {Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()};
  id.proj_proto = id.proj_query;
  PrototypeBank two(2, 2, {{"x/a", Eigen::Vector2d(0.8, 0.6), 0, 1}, {"x/b", Eigen::Vector2d(0.4, std::sqrt(1 - 0.16)), 1, 1}},
                    0, 0, 5);
  std::vector<std::size_t> both{0, 1};
  auto wt = retrieve(Vec<double>(Eigen::Vector2d(3, 0)), two, both, id);
  const double e1 = std::exp(8.0), e2 = std::exp(4.0);
  CHECK(wt.weights[0] == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-14));
  CHECK(wt.weights[1] == doctest::Approx(e2 / (e1 + e2)).epsilon(1e-14));

  id.weighting = RetrievalWeighting::kRawCosine;
  auto raw = retrieve(Vec<double>(Eigen::Vector2d(3, 0)), two, both, id);
  CHECK(raw.weights[0] == doctest::Approx(0.8));
  CHECK(cosine(Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 1)) == 0.0);
}

TEST_CASE("summarize, support bias and fuse") {
  PrototypeBank bank(2, 3, {{"x/a", Eigen::Vector2d(1, 0), 0, 1}, {"x/b", Eigen::Vector2d(0, 2), 2, 1},
                            {"x/c", Eigen::Vector2d(-1, 1), 1, 1}},
                     0, 0, 5);
  RetrievalWeights<double> one{{1}, Eigen::VectorXd::Ones(1)};
  auto s1 = summarize(one, bank);
  CHECK(s1.v == Eigen::Vector2d(0, 2));
  CHECK(s1.u == Eigen::Vector3d(0, 0, 1));
  RetrievalWeights<double> half{{0, 1}, Eigen::Vector2d(0.5, 0.5)};
  CHECK(summarize(half, bank).v == Eigen::Vector2d(0.5, 1));
  RetrievalWeights<double> three{{0, 1, 2}, Eigen::Vector3d(0.2, 0.3, 0.5)};
  auto s3 = summarize(three, bank);
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  Eigen::Vector3d u = Eigen::Vector3d::Zero();
  for (int j = 0; j < 3; ++j) {
    v += three.weights[j] * bank[three.indices[j]].embedding;
    u[static_cast<Eigen::Index>(bank[three.indices[j]].answer_index)] += three.weights[j];
  }
  CHECK((s3.v - v).norm() < 1e-15);
  CHECK((s3.u - u).norm() < 1e-15);

  FusionHead<double> head = FusionHead<double>::zeros({4, 2, 2, 3, 2});
  CHECK(support_bias<double>(std::nullopt, head) == Eigen::Vector3d::Zero());
  CHECK(support_bias<double>(s3, head) == Eigen::Vector3d::Zero());
  head.mlp_hidden.weight << 1, 0, 0, 0, 0, 0, 1, 1, 1, 0;
  head.mlp_hidden.bias << 0, 0.5;
  head.mlp_out.weight << 1, 0, 0, 1, 1, -1;
  head.mlp_out.bias << 0, 0, 1;
  auto b = support_bias<double>(s3, head);
  const double h0 = std::tanh(s3.v[0]), h1 = std::tanh(s3.v[1] + s3.u[0] + s3.u[1] + 0.5);
  CHECK(b[0] == doctest::Approx(h0));
  CHECK(b[1] == doctest::Approx(h1));
  CHECK(b[2] == doctest::Approx(h0 - h1 + 1));

  FusionHead<double> f2 = FusionHead<double>::zeros({1, 1, 1, 2, 1});
  f2.scale = Eigen::Vector2d(0.5, 2);
  CHECK(fuse(Vec<double>(Eigen::Vector2d(1, -1)), Vec<double>(Eigen::Vector2d(2, 1)), f2) == Eigen::Vector2d(2, 1));
  f2.scale.setZero();
  CHECK(fuse(Vec<double>(Eigen::Vector2d(1, -1)), Vec<double>(Eigen::Vector2d(2, 1)), f2) == Eigen::Vector2d(1, -1));
  CHECK_THROWS_AS(fuse(Vec<double>(Eigen::Vector2d(1, -1)), Vec<double>(Eigen::Vector3d(2, 1, 0)), f2), DimensionMismatch);
}

TEST_CASE("binary cross-entropy") {
  std::vector<std::size_t> mask{0, 2, 3};
  Eigen::Vector4d zero = Eigen::Vector4d::Zero(), y(1, 0, 0, 1);
  CHECK(bce_loss(Vec<double>(zero), y, mask) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Eigen::Vector4d confident(60, 0, -60, 60);
  CHECK(bce_loss(Vec<double>(confident), y, mask) < 1e-20);
  Eigen::Vector4d z(0.3, 9, -1.2, 2.5);
  double oracle = 0;
  for (auto i : mask) {
    const double p = 1 / (1 + std::exp(-z[i]));
    oracle += -(y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p));
  }
  CHECK(bce_loss(Vec<double>(z), y, mask) == doctest::Approx(oracle / 3).epsilon(1e-13));
  CHECK_THROWS_AS(bce_loss(Vec<double>(z), y, std::vector<std::size_t>{}), EmptyMask);
}

TEST_CASE("forward identities") {
  auto h = fixtures::head_instance(2);
  PrototypeBank none(6, 7, {}, 0, 0, 5);
  auto t = forward(h.model, h.features, h.tokens, valid_mask(h.tmpl.question("q"), none), none);
  CHECK(t.z_final == t.z_base);
  auto t2 = forward(h.model, h.features, h.tokens, h.bank_mask, h.bank);
  CHECK(t2.z_final != t2.z_base);
  CHECK((t2.z_final - (t2.z_base + h.model.head.scale.cwiseProduct(t2.b_sup))).norm() == 0.0);
  CHECK(t2.z_final.size() == 7);
  CHECK(t2.summary->u.sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("analytic gradients match central differences") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    auto h = fixtures::head_instance(seed);
    auto g = fixtures::instance_gradient(h, h.model, h.bank);
    std::string worst;
    double err = fixtures::max_gradcheck_error(
        fixtures::extended(h.model, h.dims), g, [&](const Model<long double>& m) { return fixtures::instance_loss(h, m, h.bank); }, 1e-6, &worst);
    INFO("worst group " << worst);
    CHECK(err < 1e-4);
  }
  auto raw = fixtures::head_instance(6);
  raw.model.head.weighting = RetrievalWeighting::kRawCosine;
  auto g = fixtures::instance_gradient(raw, raw.model, raw.bank);
  CHECK(fixtures::max_gradcheck_error(fixtures::extended(raw.model, raw.dims), g, [&](const Model<long double>& m) {
          return fixtures::instance_loss(raw, m, raw.bank);
        }) < 1e-4);
}

TEST_CASE("zero scale and empty bank gradients") {
  auto h = fixtures::head_instance(7, false);
  auto g = fixtures::instance_gradient(h, h.model, h.bank);
  CHECK(g.head.mlp_out.weight.isZero(0));
  CHECK(g.head.mlp_hidden.weight.isZero(0));
  CHECK(g.head.proj_query.weight.isZero(0));
  CHECK(!g.head.scale.isZero(0));

  PrototypeBank none(6, 7, {}, 0, 0, 5);
  auto h2 = fixtures::head_instance(8);
  auto g2 = fixtures::instance_gradient(h2, h2.model, none);
  bool all_zero = true;
  g2.head.visit([&](const std::string&, const auto& p) { all_zero = all_zero && p.isZero(0); });
  CHECK(all_zero);
}

TEST_CASE("model initialization shares the backbone across variants") {
  ModelDims d;
  d.backbone = {5, 6, 11, 4, 8, 7, false};
  auto a = Model<double>::init(d, 42);
  auto early = d;
  early.backbone.early_fusion = true;
  auto b = Model<double>::init(early, 42);
  CHECK(a.backbone.image.weight == b.backbone.image.weight);
  CHECK(a.backbone.fusion.weight == b.backbone.fusion.weight);
  CHECK(b.backbone.text.weight.leftCols(11) == a.backbone.text.weight);
  CHECK(b.backbone.text.weight.rightCols(7).isZero(0));
  CHECK(a.head.scale.isZero(0));
  auto flat = a.image_encoder_parameters();
  CHECK(flat.size() == 6 * 5 + 6);
  a.set_image_encoder_parameters(Eigen::VectorXd::Zero(flat.size()));
  CHECK(a.backbone.image.weight.isZero(0));
}

#include <doctest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "protokb/errors.hpp"
#include "protokb/inference.hpp"
#include "protokb/metrics.hpp"

using namespace protokb;

namespace {

// Zero backbone whose classifier bias alone sets the logits.
Model<double> planted(const Template& t, const std::map<std::string, double>& logits) {
  ModelDims d;
  d.backbone = {2, 2, 8, 2, 2, static_cast<Eigen::Index>(t.num_options()), false};
  d.shared_dim = 2;
  Model<double> m;
  m.backbone = Backbone<double>::zeros(d.backbone);
  m.head = FusionHead<double>::zeros(d.head());
  m.backbone.classifier.bias.setConstant(-1.0);
  for (const auto& [oid, z] : logits) m.backbone.classifier.bias[static_cast<Eigen::Index>(t.option_index(oid))] = z;
  return m;
}

PrototypeBank no_bank(const Template& t) { return PrototypeBank(2, static_cast<Eigen::Index>(t.num_options()), {}, 0, 0, 5); }

}  // namespace

TEST_CASE("decision rule") {
  auto t = fixtures::chest_template();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.num_options()));
  // single-choice tie -> lowest option index
  CHECK(decide(t.question("heart"), t, z) == std::vector<std::string>{"heart/cardiomegaly"});
  z[t.option_index("heart/no cardiomegaly")] = 0.1;
  CHECK(decide(t.question("heart"), t, z) == std::vector<std::string>{"heart/no cardiomegaly"});
  // multi-select: strictly above one half
  CHECK(decide(t.question("effusion_size"), t, z).empty());
  z[t.option_index("effusion_size/large")] = 1e-9;
  CHECK(decide(t.question("effusion_size"), t, z) == std::vector<std::string>{"effusion_size/large"});
}

TEST_CASE("populate_report gating") {
  auto t = fixtures::chest_template();
  auto all_no = planted(t, {{"lung/no lung abnormality", 3}, {"heart/no cardiomegaly", 3}});
  auto r = populate_report({"s", Eigen::Vector2d(1, 1)}, t, all_no, no_bank(t), 8);
  CHECK(r.answers.size() == 2);
  CHECK(r.selected("lung", "lung/no lung abnormality"));
  CHECK(r.selected("heart", "heart/no cardiomegaly"));
}

TEST_CASE("populate_report reproduces a planted report and passes history forward") {
  auto t = fixtures::chest_template();
  StructuredReport truth{"s", {{"lung", {"lung/lung abnormality"}},
                               {"effusion", {"effusion/pleural effusion"}},
                               {"effusion_location", {"effusion_location/left", "effusion_location/right"}},
                               {"heart", {"heart/cardiomegaly"}}}};
  std::map<std::string, double> logits;
  for (const auto& [q, opts] : truth.answers) {
    for (const auto& o : opts) logits[o] = 2.0;
  }
  auto m = planted(t, logits);
  std::vector<QuestionContext> contexts;
  auto r = populate_report({"s", Eigen::Vector2d(0, 1)}, t, m, no_bank(t), 8, &contexts);
  CHECK(r.answers == truth.answers);
  CHECK(check_consistency(r, t).empty());
  // effusion_size asked (and left empty), so it is in the contexts but not the report
  REQUIRE(contexts.size() == 5);
  CHECK(contexts[2].question_id == "effusion_size");
  CHECK(contexts[3].history.size() == 2);
  CHECK(contexts[3].history.back().first == "effusion");
  CHECK(contexts[4].history.back().first == "effusion_location");
}

TEST_CASE("macro-F1 and report accuracy") {
  auto t = Template::build("t", {{"q", 1, "q", AnswerMode::kMultiSelect, {"a", "b"}, std::nullopt}});
  // option a: TP1 FP1 FN0; option b: TP2 FP0 FN2
  std::vector<StructuredReport> gold{{"1", {{"q", {"q/a", "q/b"}}}}, {"2", {{"q", {"q/b"}}}},
                                     {"3", {{"q", {"q/b"}}}}, {"4", {{"q", {"q/b"}}}}};
  std::vector<StructuredReport> pred{{"1", {{"q", {"q/a", "q/b"}}}}, {"2", {{"q", {"q/a", "q/b"}}}},
                                     {"3", {}}, {"4", {}}};
  CHECK(macro_f1(pred, gold, t, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(macro_f1(gold, gold, t, 1) == 1.0);
  std::vector<StructuredReport> none{{"1", {}}, {"2", {}}, {"3", {}}, {"4", {}}};
  auto conf = option_confusions(none, gold, t);
  CHECK(conf["q/a"].f1() == 0.0);
  CHECK(conf["q/b"].f1() == 0.0);

  auto shuffled = pred;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(macro_f1(shuffled, gold, t, 0) == macro_f1(pred, gold, t, 0));

  CHECK(report_accuracy(gold, gold) == 1.0);
  auto one_off = gold;
  one_off[2].answers["q"].insert("q/a");
  CHECK(report_accuracy(one_off, gold) == 0.75);
  std::vector<StructuredReport> mixed{{"1", {}}, {"2", {{"q", {"q/b"}}}}, {"3", {}}};
  std::vector<StructuredReport> empty_pred{{"1", {}}, {"2", {}}, {"3", {}}};
  CHECK(report_accuracy(empty_pred, mixed) == doctest::Approx(2.0 / 3.0));

  std::vector<StructuredReport> misaligned{{"9", {}}, {"2", {}}, {"3", {}}, {"4", {}}};
  CHECK_THROWS_AS(report_accuracy(misaligned, gold), AlignmentError);
  CHECK_THROWS_AS(macro_f1(misaligned, gold, t, 0), AlignmentError);

  auto m = evaluate_reports(gold, gold, t);
  CHECK(m.overall_f1 == 1.0);
  CHECK(m.l1_f1 == 1.0);
  CHECK(m.report_accuracy == 1.0);
  CHECK(format_metrics(m).find("report_accuracy 1") != std::string::npos);
}

TEST_CASE("random models always produce consistent reports") {
  auto t = fixtures::chest_template();
  std::mt19937_64 rng(17);
  for (int i = 0; i < 50; ++i) {
    std::map<std::string, double> logits;
    for (const auto& o : t.options()) logits[o.id] = std::normal_distribution<double>(0, 2)(rng);
    auto r = populate_report({"s", Eigen::Vector2d(0, 0)}, t, planted(t, logits), no_bank(t), 8);
    CHECK(check_consistency(r, t).empty());
  }
}

#include "protokb/inference.hpp"

#include <atomic>
#include <thread>

namespace protokb {

std::vector<std::string> decide(const Question& question, const Template& tmpl,
                                const Eigen::VectorXd& logits) {
  auto idx = tmpl.option_indices(question);
  std::vector<std::string> out;
  if (question.mode == AnswerMode::kMultiSelect) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      // sigmoid(z) > 0.5 <=> z > 0
      if (logits[static_cast<Eigen::Index>(idx[j])] > 0.0) out.push_back(question.option_ids[j]);
    }
    return out;
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < idx.size(); ++j) {
    if (logits[static_cast<Eigen::Index>(idx[j])] > logits[static_cast<Eigen::Index>(idx[best])]) best = j;
  }
  out.push_back(question.option_ids[best]);
  return out;
}

StructuredReport populate_report(const ImageInput& image, const Template& tmpl,
                                 const Model<double>& model, const PrototypeBank& bank,
                                 Eigen::Index text_buckets,
                                 std::vector<QuestionContext>* contexts) {
  StructuredReport report;
  report.study_id = image.study_id;
  std::vector<std::pair<std::string, std::vector<std::string>>> history;
  for (const Question* q : traversal_order(tmpl)) {
    if (q->trigger) {
      auto it = report.answers.find(q->trigger->parent_question);
      if (it == report.answers.end() || !it->second.contains(q->trigger->parent_option)) continue;
    }
    auto context = make_context(tmpl, q->id, history);
    auto trace = forward(model, image, context, bank, tmpl, text_buckets);
    auto selected = decide(*q, tmpl, trace.z_final);
    if (contexts) contexts->push_back(std::move(context));
    if (selected.empty()) continue;
    report.answers[q->id] = {selected.begin(), selected.end()};
    history.emplace_back(q->id, std::move(selected));
  }
  return report;
}

std::vector<StructuredReport> populate_reports(const std::vector<ImageInput>& images,
                                               const Template& tmpl, const Model<double>& model,
                                               const PrototypeBank& bank, Eigen::Index text_buckets,
                                               int threads) {
  std::vector<StructuredReport> out(images.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      out[i] = populate_report(images[i], tmpl, model, bank, text_buckets);
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  return out;
}

}  // namespace protokb

#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "protokb/backbone.hpp"
#include "protokb/knowledge_base.hpp"
#include "protokb/model.hpp"
#include "protokb/template.hpp"

namespace protokb {

/// Options selected for one question from the global logits. Multi-select:
/// every option with sigmoid(z) > 0.5, possibly none. Single-choice: the argmax,
/// lowest option index on ties.
std::vector<std::string> decide(const Question& question, const Template& tmpl,
                                const Eigen::VectorXd& logits);

/// Multi-turn population in traversal order. Questions whose trigger option
/// was not selected are skipped; every answered question joins the history
/// of all later ones. Multi-select questions with no selection are omitted.
/// When `contexts` is given it receives the context of every question asked.
StructuredReport populate_report(const ImageInput& image, const Template& tmpl,
                                 const Model<double>& model, const PrototypeBank& bank,
                                 Eigen::Index text_buckets,
                                 std::vector<QuestionContext>* contexts = nullptr);

/// Parallel over studies; output follows input order.
std::vector<StructuredReport> populate_reports(const std::vector<ImageInput>& images,
                                               const Template& tmpl, const Model<double>& model,
                                               const PrototypeBank& bank, Eigen::Index text_buckets,
                                               int threads = 1);

}  // namespace protokb

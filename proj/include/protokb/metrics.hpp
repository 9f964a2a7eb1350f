#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "protokb/template.hpp"

namespace protokb {

struct Confusion {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;

  double f1() const {
    long denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  bool has_support() const { return tp + fp + fn > 0; }
};

/// Corpus-wide confusion counts per option id. Reports are matched by
/// study_id; unanswered (gated) questions count as negative predictions.
/// Throws AlignmentError when the study id sets differ.
std::map<std::string, Confusion> option_confusions(std::span<const StructuredReport> predicted,
                                                   std::span<const StructuredReport> gold,
                                                   const Template& tmpl);

/// Macro-F1 over the options of one level (0 = all levels). Options without
/// gold or predicted positives are excluded; with nothing left the score is 1.
double macro_f1(const std::map<std::string, Confusion>& confusions, const Template& tmpl,
                int level = 0);

double macro_f1(std::span<const StructuredReport> predicted,
                std::span<const StructuredReport> gold, const Template& tmpl, int level = 0);

/// Fraction of studies whose report matches gold exactly. Throws AlignmentError.
double report_accuracy(std::span<const StructuredReport> predicted,
                       std::span<const StructuredReport> gold);

struct EvalMetrics {
  double overall_f1 = 0.0;
  double l1_f1 = 0.0;
  double l2_f1 = 0.0;
  double l3_f1 = 0.0;
  double report_accuracy = 0.0;
  /// Options with gold or predicted support, per level.
  std::array<long, 3> scored_options{};
};

EvalMetrics evaluate_reports(std::span<const StructuredReport> predicted,
                             std::span<const StructuredReport> gold, const Template& tmpl);

/// Structured text: one "key value" line per field.
std::string format_metrics(const EvalMetrics& m);
std::string format_confusions(const std::map<std::string, Confusion>& confusions);

}  // namespace protokb

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace protokb {

enum class AnswerMode { kSingleChoice, kMultiSelect };

struct Trigger {
  std::string parent_question;
  std::string parent_option;  // full option id

  bool operator==(const Trigger&) const = default;
};

struct AnswerOption {
  std::string id;              // "<question id>/<canonical text>"
  std::string canonical_text;  // normalized
  std::string question_id;
};

struct Question {
  std::string id;
  int level = 1;
  std::string text;
  AnswerMode mode = AnswerMode::kMultiSelect;
  std::vector<std::string> option_ids;
  std::optional<Trigger> trigger;
};

/// Globally unique option id for a question/answer pair.
std::string make_option_id(std::string_view question_id, std::string_view canonical_text);

/// Hierarchical reporting template. Immutable once built; every accessor is const.
///
/// Options are indexed globally in question document order, which fixes the
/// layout of every |Y|-sized vector (logits, one-hot answers, targets).
class Template {
 public:
  /// Specification of a question before validation: options are given as raw text.
  struct QuestionSpec {
    std::string id;
    int level = 1;
    std::string text;
    AnswerMode mode = AnswerMode::kMultiSelect;
    std::vector<std::string> options;
    std::optional<Trigger> trigger;
  };

  Template() = default;

  /// Validates and indexes. Throws ValidationError naming the offending ids.
  static Template build(std::string id, const std::vector<QuestionSpec>& specs);

  const std::string& id() const { return id_; }
  std::span<const Question> questions() const { return questions_; }
  std::span<const AnswerOption> options() const { return options_; }
  std::size_t num_options() const { return options_.size(); }
  std::size_t num_questions() const { return questions_.size(); }

  bool has_question(std::string_view id) const;
  bool has_option(std::string_view id) const;
  /// Throws UnknownIdError.
  const Question& question(std::string_view id) const;
  const AnswerOption& option(std::string_view id) const;
  std::size_t question_index(std::string_view id) const;
  std::size_t option_index(std::string_view id) const;
  int option_level(std::string_view id) const;

  /// Questions gated by (question_id, option_id), in document order.
  const std::vector<std::size_t>& children_of_option(std::string_view option_id) const;
  /// All questions whose trigger parent is question_id, in document order.
  std::vector<std::size_t> children_of_question(std::string_view question_id) const;

  /// Global option indices of a question's options, in option order.
  std::vector<std::size_t> option_indices(const Question& q) const;

 private:
  std::string id_;
  std::vector<Question> questions_;
  std::vector<AnswerOption> options_;
  std::unordered_map<std::string, std::size_t> question_by_id_;
  std::unordered_map<std::string, std::size_t> option_by_id_;
  std::unordered_map<std::string, std::vector<std::size_t>> children_by_option_;
};

/// Per-study answers: question id -> selected option ids.
struct StructuredReport {
  std::string study_id;
  std::map<std::string, std::set<std::string>> answers;

  bool operator==(const StructuredReport&) const = default;
  bool selected(std::string_view question_id, std::string_view option_id) const;
};

struct ConsistencyViolation {
  std::string question_id;
  std::string rule;  // "trigger-unmet" | "multiplicity" | "foreign-option"

  bool operator==(const ConsistencyViolation&) const = default;
};

/// Parents before children; depth-first over roots in document order,
/// children visited in document order.
std::vector<const Question*> traversal_order(const Template& tmpl);

/// Empty iff the report is hierarchically consistent and respects
/// single-choice multiplicity. Throws UnknownIdError on ids absent from the template.
std::vector<ConsistencyViolation> check_consistency(const StructuredReport& report,
                                                    const Template& tmpl);

// Serialization (JSON documents).
Template load_template(std::string_view document);
std::string serialize_template(const Template& tmpl);
Template load_template_file(const std::string& path);
void save_template_file(const Template& tmpl, const std::string& path);

StructuredReport parse_report(std::string_view json_line);
std::string serialize_report(const StructuredReport& report);
/// One JSON object per line.
std::vector<StructuredReport> load_reports_file(const std::string& path);
void save_reports_file(std::span<const StructuredReport> reports, const std::string& path);

std::string_view to_string(AnswerMode mode);

}  // namespace protokb

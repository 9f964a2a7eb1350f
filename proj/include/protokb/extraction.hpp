#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protokb/metrics.hpp"
#include "protokb/template.hpp"
#include "protokb/terminology.hpp"

namespace protokb {

struct FreeTextStudy {
  std::string study_id;
  std::string report_text;  // findings + impression
  std::string image_ref;
};

enum class Certainty { kCertain, kUncertain };

struct Assertion {
  std::string question_id;
  std::string option_id;
  Certainty certainty = Certainty::kCertain;

  auto operator<=>(const Assertion&) const = default;
};

struct ExtractionResult {
  std::string study_id;
  std::vector<Assertion> assertions;  // sorted, each (question, option) at most once

  bool operator==(const ExtractionResult&) const = default;
  bool asserts(std::string_view option_id, Certainty c = Certainty::kCertain) const;
};

/// The literal uncertainty token accepted from extractors.
inline constexpr std::string_view kUnsureToken = "unsure";

struct ConstrainedQuery {
  std::string prompt;
  std::vector<std::string> allowed_answers;  // canonical option texts, distinct
  std::vector<std::string> option_ids;       // parallel to allowed_answers
  std::string report_excerpt;
  bool multi_select = false;
};

/// Answers constrained queries. Replies are free text; only the first line is read.
class ConstrainedAnswerProvider {
 public:
  virtual ~ConstrainedAnswerProvider() = default;
  /// Throws ExtractorUnavailable on provider failure.
  virtual std::string answer(const ConstrainedQuery& query) = 0;
  /// 1 when the provider cannot take concurrent requests.
  virtual int max_concurrency() const { return 1; }
};

/// Offline extractor: sentence-level lexicon matching with a small negation cue list.
///
/// An option fires when one of its phrase variants occurs in a sentence of the
/// excerpt with no "no" / "without" / "negative for" before it in that sentence.
/// Single-choice queries fall back to the option whose canonical text starts
/// with a negation cue when nothing fires; several firing options or no
/// fallback yield "unsure". Multi-select queries list every firing option.
class RuleBasedExtractor : public ConstrainedAnswerProvider {
 public:
  explicit RuleBasedExtractor(const TerminologyLexicon& lexicon) : lexicon_(&lexicon) {}
  std::string answer(const ConstrainedQuery& query) override;
  int max_concurrency() const override { return 0; }  // unbounded

 private:
  const TerminologyLexicon* lexicon_;
};

/// True when phrase occurs in sentence on token boundaries, not preceded by a negation cue.
bool affirmed_in(std::string_view sentence, std::string_view phrase);
/// True when phrase occurs in sentence on token boundaries (negated or not).
bool mentioned_in(std::string_view sentence, std::string_view phrase);

struct ExtractionOptions {
  /// Restrict attribute queries to sentences affirming the parent finding.
  bool scope_attribute_queries = true;
};

/// Hierarchical constrained extraction for one study. Children are queried
/// only when their trigger option was asserted with certainty.
/// Throws ExtractorUnavailable from the provider.
ExtractionResult extract_study(const FreeTextStudy& study, const Template& tmpl,
                               const TerminologyLexicon& lexicon,
                               ConstrainedAnswerProvider& extractor,
                               const ExtractionOptions& options = {});

struct FilterOptions {
  /// Drop positive parents whose attribute children have no surviving assertion.
  bool enforce_hierarchy = true;
};

/// Drops uncertain, invalid and contradictory assertions, then orphans, then
/// (bottom-up) positive parents without supported children. Idempotent.
ExtractionResult filter_extractions(const ExtractionResult& result, const Template& tmpl,
                                    const FilterOptions& options = {});

/// Certain assertions of a result as a (possibly partial) structured report.
StructuredReport to_report(const ExtractionResult& result);

/// option id -> study ids asserting it with certainty, in corpus order.
using ExamplePools = std::map<std::string, std::vector<std::string>>;
ExamplePools build_example_pools(std::span<const ExtractionResult> results);

struct CorpusExtraction {
  std::vector<ExtractionResult> results;  // corpus order, skipped studies omitted
  std::vector<std::string> skipped;       // study ids whose extraction failed
};

/// Runs extract_study over a corpus, in parallel up to the provider's concurrency.
CorpusExtraction extract_corpus(std::span<const FreeTextStudy> corpus, const Template& tmpl,
                                const TerminologyLexicon& lexicon,
                                ConstrainedAnswerProvider& extractor, int threads = 1,
                                const ExtractionOptions& options = {});

struct LevelF1 {
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
};

/// Per-level macro-F1 of extractions against gold reports. Throws AlignmentError.
LevelF1 evaluate_extraction(std::span<const ExtractionResult> predicted,
                            std::span<const StructuredReport> gold, const Template& tmpl);

// File formats.
std::vector<FreeTextStudy> load_corpus_file(const std::string& path);
void save_corpus_file(std::span<const FreeTextStudy> corpus, const std::string& path);
std::string serialize_extraction(const ExtractionResult& result);
ExtractionResult parse_extraction(std::string_view line);
std::vector<ExtractionResult> load_extractions_file(const std::string& path);
void save_extractions_file(std::span<const ExtractionResult> results, const std::string& path);
/// "option_id<TAB>study<TAB>study..." per line, sorted by option id.
ExamplePools load_pools_file(const std::string& path);
void save_pools_file(const ExamplePools& pools, const std::string& path);

}  // namespace protokb

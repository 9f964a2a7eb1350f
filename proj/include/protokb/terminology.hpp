#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "protokb/template.hpp"
#include "protokb/text.hpp"

namespace protokb {

enum class Provenance { kCanonical, kLlmExpanded, kManual };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view s);

struct LexiconEntry {
  std::string phrase;  // normalized
  std::string option_id;
  Provenance provenance = Provenance::kCanonical;

  bool operator==(const LexiconEntry&) const = default;
};

/// Source of alternative phrasings for a canonical answer option.
class PhraseExpander {
 public:
  virtual ~PhraseExpander() = default;
  /// Throws ExpanderUnavailable when the provider cannot answer.
  virtual std::vector<std::string> propose(const Question& question,
                                           const AnswerOption& option) = 0;
  virtual Provenance provenance() const = 0;
};

/// Phrase variants read from a static file, one "option_id<TAB>phrase" record per line.
class SeedListExpander : public PhraseExpander {
 public:
  explicit SeedListExpander(std::multimap<std::string, std::string> seeds)
      : seeds_(std::move(seeds)) {}
  static SeedListExpander from_file(const std::string& path);

  std::vector<std::string> propose(const Question& question, const AnswerOption& option) override;
  Provenance provenance() const override { return Provenance::kManual; }

 private:
  std::multimap<std::string, std::string> seeds_;
};

/// Normalized phrase -> answer option map. Immutable once built.
///
/// Canonical texts shared by options of different questions (e.g. "yes")
/// are kept for each option; unscoped lookup of such a phrase is ambiguous
/// and returns nothing, scoped lookup resolves it.
class TerminologyLexicon {
 public:
  TerminologyLexicon() = default;
  explicit TerminologyLexicon(std::vector<LexiconEntry> entries);

  /// Exact match on the normalized phrase. Returns nothing on a miss or when
  /// the phrase maps to several options and no question scope disambiguates it.
  std::optional<std::string> lookup(std::string_view phrase,
                                    const Template* tmpl = nullptr,
                                    std::string_view question_id = {}) const;

  /// Every phrase mapping to option_id, sorted.
  std::vector<std::string> variants_of(std::string_view option_id) const;

  /// Sorted by (phrase, option id).
  const std::vector<LexiconEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// True when the expander failed and only canonical texts were kept.
  bool degraded() const { return degraded_; }
  /// Rejected candidates, "phrase -> option (reason)".
  const std::vector<std::string>& conflicts() const { return conflicts_; }

  /// Throws ValidationError when an entry targets an option absent from tmpl.
  void validate(const Template& tmpl) const;

 private:
  friend TerminologyLexicon expand_terminology(const Template&, PhraseExpander*);

  std::vector<LexiconEntry> entries_;
  std::multimap<std::string, std::size_t, std::less<>> by_phrase_;
  std::multimap<std::string, std::size_t, std::less<>> by_option_;
  bool degraded_ = false;
  std::vector<std::string> conflicts_;
};

/// Canonical texts plus every non-colliding candidate from the expander.
/// A null expander yields the canonical-only lexicon.
TerminologyLexicon expand_terminology(const Template& tmpl, PhraseExpander* expander);

TerminologyLexicon load_lexicon(std::string_view text);
std::string serialize_lexicon(const TerminologyLexicon& lexicon);
TerminologyLexicon load_lexicon_file(const std::string& path);
void save_lexicon_file(const TerminologyLexicon& lexicon, const std::string& path);

}  // namespace protokb

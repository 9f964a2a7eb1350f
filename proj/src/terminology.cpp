#include "protokb/terminology.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include "protokb/errors.hpp"
#include "protokb/io.hpp"

namespace protokb {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kCanonical: return "canonical";
    case Provenance::kLlmExpanded: return "llm-expanded";
    case Provenance::kManual: return "manual";
  }
  return "canonical";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "canonical") return Provenance::kCanonical;
  if (s == "llm-expanded") return Provenance::kLlmExpanded;
  if (s == "manual") return Provenance::kManual;
  throw ParseError("unknown provenance '" + std::string(s) + "'");
}

SeedListExpander SeedListExpander::from_file(const std::string& path) {
  std::multimap<std::string, std::string> seeds;
  for (const auto& line : read_lines(path)) {
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("seed list line without tab: '" + line + "'");
    seeds.emplace(line.substr(0, tab), line.substr(tab + 1));
  }
  return SeedListExpander(std::move(seeds));
}

std::vector<std::string> SeedListExpander::propose(const Question&, const AnswerOption& option) {
  std::vector<std::string> out;
  auto [lo, hi] = seeds_.equal_range(option.id);
  for (auto it = lo; it != hi; ++it) out.push_back(it->second);
  return out;
}

TerminologyLexicon::TerminologyLexicon(std::vector<LexiconEntry> entries)
    : entries_(std::move(entries)) {
  for (auto& e : entries_) e.phrase = normalize_phrase(e.phrase);
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
    return std::tie(a.phrase, a.option_id) < std::tie(b.phrase, b.option_id);
  });
  entries_.erase(std::unique(entries_.begin(), entries_.end(),
                             [](const auto& a, const auto& b) {
                               return a.phrase == b.phrase && a.option_id == b.option_id;
                             }),
                 entries_.end());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    by_phrase_.emplace(entries_[i].phrase, i);
    by_option_.emplace(entries_[i].option_id, i);
  }
}

std::optional<std::string> TerminologyLexicon::lookup(std::string_view phrase, const Template* tmpl,
                                                      std::string_view question_id) const {
  auto key = normalize_phrase(phrase);
  auto [lo, hi] = by_phrase_.equal_range(key);
  std::optional<std::string> hit;
  for (auto it = lo; it != hi; ++it) {
    const auto& e = entries_[it->second];
    if (tmpl && !question_id.empty()) {
      if (!tmpl->has_option(e.option_id) || tmpl->option(e.option_id).question_id != question_id) {
        continue;
      }
    }
    if (hit) return std::nullopt;  // ambiguous
    hit = e.option_id;
  }
  return hit;
}

std::vector<std::string> TerminologyLexicon::variants_of(std::string_view option_id) const {
  std::vector<std::string> out;
  auto [lo, hi] = by_option_.equal_range(option_id);
  for (auto it = lo; it != hi; ++it) out.push_back(entries_[it->second].phrase);
  std::sort(out.begin(), out.end());
  return out;
}

void TerminologyLexicon::validate(const Template& tmpl) const {
  for (const auto& e : entries_) {
    if (!tmpl.has_option(e.option_id)) {
      throw ValidationError("lexicon entry '" + e.phrase + "' targets unknown option '" +
                            e.option_id + "'");
    }
  }
}

TerminologyLexicon expand_terminology(const Template& tmpl, PhraseExpander* expander) {
  std::vector<LexiconEntry> entries;
  std::map<std::string, std::set<std::string>> canonical_owners;
  for (const auto& opt : tmpl.options()) {
    entries.push_back({opt.canonical_text, opt.id, Provenance::kCanonical});
    canonical_owners[opt.canonical_text].insert(opt.id);
  }

  bool degraded = false;
  std::vector<std::string> conflicts;
  // candidate phrase -> proposing options
  std::map<std::string, std::set<std::string>> candidates;
  if (expander) {
    try {
      for (const auto& q : tmpl.questions()) {
        for (const auto& oid : q.option_ids) {
          const auto& opt = tmpl.option(oid);
          for (const auto& raw : expander->propose(q, opt)) {
            auto phrase = normalize_phrase(raw);
            if (phrase.empty() || phrase == opt.canonical_text) continue;
            candidates[phrase].insert(opt.id);
          }
        }
      }
    } catch (const ExpanderUnavailable& e) {
      std::cerr << "warning: phrase expander unavailable (" << e.what()
                << "); using canonical-only lexicon\n";
      degraded = true;
      candidates.clear();
    }
  }

  for (const auto& [phrase, owners] : candidates) {
    auto canon = canonical_owners.find(phrase);
    if (canon != canonical_owners.end()) {
      for (const auto& oid : owners) {
        if (!canon->second.count(oid)) {
          conflicts.push_back(phrase + " -> " + oid + " (canonical text of " +
                              *canon->second.begin() + ")");
        }
      }
      continue;
    }
    if (owners.size() > 1) {
      for (const auto& oid : owners) {
        conflicts.push_back(phrase + " -> " + oid + " (proposed for " +
                            std::to_string(owners.size()) + " options)");
      }
      continue;
    }
    entries.push_back({phrase, *owners.begin(), expander->provenance()});
  }

  TerminologyLexicon lex(std::move(entries));
  lex.degraded_ = degraded;
  lex.conflicts_ = std::move(conflicts);
  return lex;
}

TerminologyLexicon load_lexicon(std::string_view text) {
  std::vector<LexiconEntry> entries;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() : nl + 1;
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) {
      throw ParseError("lexicon line needs three tab-separated fields: '" + std::string(line) + "'");
    }
    entries.push_back({std::string(line.substr(0, t1)), std::string(line.substr(t1 + 1, t2 - t1 - 1)),
                       parse_provenance(line.substr(t2 + 1))});
  }
  return TerminologyLexicon(std::move(entries));
}

std::string serialize_lexicon(const TerminologyLexicon& lexicon) {
  std::string out;
  for (const auto& e : lexicon.entries()) {
    out += e.phrase;
    out.push_back('\t');
    out += e.option_id;
    out.push_back('\t');
    out += to_string(e.provenance);
    out.push_back('\n');
  }
  return out;
}

TerminologyLexicon load_lexicon_file(const std::string& path) {
  return load_lexicon(read_text_file(path));
}

void save_lexicon_file(const TerminologyLexicon& lexicon, const std::string& path) {
  write_text_file(path, serialize_lexicon(lexicon));
}

}  // namespace protokb

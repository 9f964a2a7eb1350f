#include "protokb/extraction.hpp"

#include <algorithm>
#include <atomic>
#include <iostream>
#include <json.hpp>
#include <mutex>
#include <set>
#include <thread>

#include "protokb/errors.hpp"
#include "protokb/io.hpp"
#include "protokb/text.hpp"

namespace protokb {

using nlohmann::json;
using nlohmann::ordered_json;

bool ExtractionResult::asserts(std::string_view option_id, Certainty c) const {
  return std::any_of(assertions.begin(), assertions.end(), [&](const Assertion& a) {
    return a.option_id == option_id && a.certainty == c;
  });
}

namespace {

bool is_negation_cue(std::string_view first_token) {
  return first_token == "no" || first_token == "without";
}

// Token-boundary positions of phrase inside sentence (both normalized).
std::vector<std::size_t> occurrences(std::string_view sentence, std::string_view phrase) {
  std::vector<std::size_t> out;
  if (phrase.empty()) return out;
  std::size_t pos = 0;
  while ((pos = sentence.find(phrase, pos)) != std::string_view::npos) {
    bool left_ok = pos == 0 || sentence[pos - 1] == ' ';
    std::size_t end = pos + phrase.size();
    bool right_ok = end == sentence.size() || sentence[end] == ' ';
    if (left_ok && right_ok) out.push_back(pos);
    ++pos;
  }
  return out;
}

bool negated_before(std::string_view sentence, std::size_t pos) {
  auto tokens = tokenize(sentence.substr(0, pos));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (is_negation_cue(tokens[i])) return true;
    if (tokens[i] == "negative" && i + 1 < tokens.size() && tokens[i + 1] == "for") return true;
  }
  return false;
}

bool starts_with_negation(std::string_view text) {
  auto tokens = tokenize(text);
  if (tokens.empty()) return false;
  if (is_negation_cue(tokens[0])) return true;
  return tokens.size() > 1 && tokens[0] == "negative" && tokens[1] == "for";
}

}  // namespace

bool mentioned_in(std::string_view sentence, std::string_view phrase) {
  return !occurrences(sentence, phrase).empty();
}

bool affirmed_in(std::string_view sentence, std::string_view phrase) {
  for (auto pos : occurrences(sentence, phrase)) {
    if (!negated_before(sentence, pos)) return true;
  }
  return false;
}

std::string RuleBasedExtractor::answer(const ConstrainedQuery& query) {
  auto sentences = split_sentences(query.report_excerpt);
  std::vector<std::size_t> fired;
  for (std::size_t i = 0; i < query.option_ids.size(); ++i) {
    auto variants = lexicon_->variants_of(query.option_ids[i]);
    if (variants.empty()) variants.push_back(normalize_phrase(query.allowed_answers[i]));
    bool hit = false;
    for (const auto& s : sentences) {
      for (const auto& v : variants) {
        if (affirmed_in(s, v)) {
          hit = true;
          break;
        }
      }
      if (hit) break;
    }
    if (hit) fired.push_back(i);
  }

  if (query.multi_select) {
    if (fired.empty()) return std::string(kUnsureToken);
    std::string out;
    for (std::size_t k = 0; k < fired.size(); ++k) {
      if (k) out += ", ";
      out += query.allowed_answers[fired[k]];
    }
    return out;
  }
  if (fired.size() == 1) return query.allowed_answers[fired.front()];
  if (fired.empty()) {
    for (const auto& a : query.allowed_answers) {
      if (starts_with_negation(a)) return a;
    }
  }
  return std::string(kUnsureToken);
}

namespace {

std::string join_answers(const std::vector<std::string>& answers) {
  std::string out;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (i) out += "; ";
    out += answers[i];
  }
  return out;
}

ConstrainedQuery make_query(const Question& q, const Template& tmpl,
                            const TerminologyLexicon& lexicon, const FreeTextStudy& study,
                            const ExtractionOptions& options) {
  ConstrainedQuery query;
  query.multi_select = q.mode == AnswerMode::kMultiSelect;
  for (const auto& oid : q.option_ids) {
    query.allowed_answers.push_back(tmpl.option(oid).canonical_text);
    query.option_ids.push_back(oid);
  }
  query.report_excerpt = study.report_text;

  if (q.level == 3 && q.trigger) {
    const auto& parent_opt = tmpl.option(q.trigger->parent_option);
    if (options.scope_attribute_queries) {
      auto variants = lexicon.variants_of(parent_opt.id);
      std::string excerpt;
      for (const auto& s : split_sentences(study.report_text)) {
        bool keep = std::any_of(variants.begin(), variants.end(),
                                [&](const std::string& v) { return affirmed_in(s, v); });
        if (keep) excerpt += s + ".\n";
      }
      if (!excerpt.empty()) query.report_excerpt = std::move(excerpt);
    }
    query.prompt = "The report describes " + parent_opt.canonical_text + ". " + q.text +
                   "\nAnswer with " + (query.multi_select ? "one or more of" : "exactly one of") +
                   ": " + join_answers(query.allowed_answers) +
                   ". Separate several answers with commas. Answer \"" +
                   std::string(kUnsureToken) + "\" if the report does not say.";
  } else {
    query.prompt = "Question about the radiology report: " + q.text + "\nAnswer with " +
                   (query.multi_select ? "one or more of" : "exactly one of") + ": " +
                   join_answers(query.allowed_answers) + ". Answer \"" +
                   std::string(kUnsureToken) + "\" if uncertain.";
  }
  return query;
}

std::vector<std::string> split_reply(std::string_view reply) {
  auto nl = reply.find('\n');
  auto first = reply.substr(0, nl);
  std::vector<std::string> items;
  std::string cur;
  for (char c : first) {
    if (c == ',' || c == ';' || c == '|') {
      items.push_back(normalize_phrase(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  items.push_back(normalize_phrase(cur));
  items.erase(std::remove(items.begin(), items.end(), std::string{}), items.end());
  return items;
}

}  // namespace

ExtractionResult extract_study(const FreeTextStudy& study, const Template& tmpl,
                               const TerminologyLexicon& lexicon,
                               ConstrainedAnswerProvider& extractor,
                               const ExtractionOptions& options) {
  ExtractionResult result;
  result.study_id = study.study_id;
  std::set<std::string> certain;
  std::set<Assertion> acc;

  for (const Question* q : traversal_order(tmpl)) {
    if (q->trigger && !certain.count(q->trigger->parent_option)) continue;
    auto query = make_query(*q, tmpl, lexicon, study, options);
    auto items = split_reply(extractor.answer(query));

    std::vector<std::string> matched;
    bool uncertain = items.empty();
    for (const auto& item : items) {
      auto it = std::find(query.allowed_answers.begin(), query.allowed_answers.end(), item);
      if (it == query.allowed_answers.end()) {
        uncertain = true;  // includes the literal "unsure" token
        break;
      }
      matched.push_back(query.option_ids[static_cast<std::size_t>(it - query.allowed_answers.begin())]);
    }
    if (uncertain) {
      for (const auto& oid : q->option_ids) acc.insert({q->id, oid, Certainty::kUncertain});
      continue;
    }
    for (const auto& oid : matched) {
      acc.insert({q->id, oid, Certainty::kCertain});
      certain.insert(oid);
    }
  }
  result.assertions.assign(acc.begin(), acc.end());
  return result;
}

ExtractionResult filter_extractions(const ExtractionResult& result, const Template& tmpl,
                                    const FilterOptions& options) {
  // 1. certainty and validity
  std::map<std::string, std::set<std::string>> kept;  // question -> options
  for (const auto& a : result.assertions) {
    if (a.certainty != Certainty::kCertain) continue;
    if (!tmpl.has_question(a.question_id) || !tmpl.has_option(a.option_id)) continue;
    if (tmpl.option(a.option_id).question_id != a.question_id) continue;
    kept[a.question_id].insert(a.option_id);
  }
  // Contradictory single-choice answers: discard the question entirely.
  for (auto it = kept.begin(); it != kept.end();) {
    const auto& q = tmpl.question(it->first);
    if (q.mode == AnswerMode::kSingleChoice && it->second.size() > 1) {
      std::cerr << "note: " << result.study_id << ": contradictory answers for '" << q.id
                << "' discarded\n";
      it = kept.erase(it);
    } else {
      ++it;
    }
  }

  auto has = [&](const std::string& qid, const std::string& oid) {
    auto it = kept.find(qid);
    return it != kept.end() && it->second.count(oid) > 0;
  };

  // 2. top-down: drop children whose trigger is not asserted
  for (const Question* q : traversal_order(tmpl)) {
    if (!q->trigger || !kept.count(q->id)) continue;
    if (!has(q->trigger->parent_question, q->trigger->parent_option)) kept.erase(q->id);
  }

  // 3. bottom-up: positive parents need at least one surviving child assertion
  if (options.enforce_hierarchy) {
    auto order = traversal_order(tmpl);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Question* q = *it;
      auto kit = kept.find(q->id);
      if (kit == kept.end()) continue;
      for (auto oit = kit->second.begin(); oit != kit->second.end();) {
        const auto& children = tmpl.children_of_option(*oit);
        bool supported = children.empty() ||
                         std::any_of(children.begin(), children.end(), [&](std::size_t c) {
                           auto cit = kept.find(tmpl.questions()[c].id);
                           return cit != kept.end() && !cit->second.empty();
                         });
        oit = supported ? std::next(oit) : kit->second.erase(oit);
      }
      if (kit->second.empty()) kept.erase(kit);
    }
  }

  ExtractionResult out;
  out.study_id = result.study_id;
  for (const auto& [qid, opts] : kept) {
    for (const auto& oid : opts) out.assertions.push_back({qid, oid, Certainty::kCertain});
  }
  std::sort(out.assertions.begin(), out.assertions.end());
  return out;
}

StructuredReport to_report(const ExtractionResult& result) {
  StructuredReport r;
  r.study_id = result.study_id;
  for (const auto& a : result.assertions) {
    if (a.certainty == Certainty::kCertain) r.answers[a.question_id].insert(a.option_id);
  }
  return r;
}

ExamplePools build_example_pools(std::span<const ExtractionResult> results) {
  ExamplePools pools;
  for (const auto& r : results) {
    std::set<std::string> seen;
    for (const auto& a : r.assertions) {
      if (a.certainty != Certainty::kCertain || !seen.insert(a.option_id).second) continue;
      pools[a.option_id].push_back(r.study_id);
    }
  }
  return pools;
}

CorpusExtraction extract_corpus(std::span<const FreeTextStudy> corpus, const Template& tmpl,
                                const TerminologyLexicon& lexicon,
                                ConstrainedAnswerProvider& extractor, int threads,
                                const ExtractionOptions& options) {
  int limit = extractor.max_concurrency();
  int workers = std::max(1, threads);
  if (limit > 0) workers = std::min(workers, limit);

  std::vector<std::optional<ExtractionResult>> slots(corpus.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < corpus.size(); i = next++) {
      try {
        slots[i] = extract_study(corpus[i], tmpl, lexicon, extractor, options);
      } catch (const ExtractorUnavailable& e) {
        std::lock_guard lock(log_mu);
        std::cerr << "warning: skipping study " << corpus[i].study_id << ": " << e.what() << "\n";
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  CorpusExtraction out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (slots[i]) out.results.push_back(std::move(*slots[i]));
    else out.skipped.push_back(corpus[i].study_id);
  }
  return out;
}

LevelF1 evaluate_extraction(std::span<const ExtractionResult> predicted,
                            std::span<const StructuredReport> gold, const Template& tmpl) {
  std::vector<StructuredReport> reports;
  reports.reserve(predicted.size());
  for (const auto& r : predicted) reports.push_back(to_report(r));
  auto conf = option_confusions(reports, gold, tmpl);
  return {macro_f1(conf, tmpl, 1), macro_f1(conf, tmpl, 2), macro_f1(conf, tmpl, 3)};
}

std::vector<FreeTextStudy> load_corpus_file(const std::string& path) {
  std::vector<FreeTextStudy> out;
  std::set<std::string> ids;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    try {
      auto doc = json::parse(line);
      FreeTextStudy s{doc.at("study_id").get<std::string>(), doc.at("report_text").get<std::string>(),
                      doc.value("image_ref", std::string{})};
      if (s.report_text.empty()) throw ParseError("study '" + s.study_id + "' has empty report text");
      if (!ids.insert(s.study_id).second) throw ParseError("duplicate study id '" + s.study_id + "'");
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(std::string("corpus: ") + e.what());
    }
  }
  return out;
}

void save_corpus_file(std::span<const FreeTextStudy> corpus, const std::string& path) {
  std::string text;
  for (const auto& s : corpus) {
    ordered_json doc;
    doc["study_id"] = s.study_id;
    doc["report_text"] = s.report_text;
    doc["image_ref"] = s.image_ref;
    text += doc.dump() + "\n";
  }
  write_text_file(path, text);
}

std::string serialize_extraction(const ExtractionResult& result) {
  ordered_json doc;
  doc["study_id"] = result.study_id;
  auto arr = ordered_json::array();
  for (const auto& a : result.assertions) {
    arr.push_back({{"question", a.question_id},
                   {"option", a.option_id},
                   {"certainty", a.certainty == Certainty::kCertain ? "certain" : "uncertain"}});
  }
  doc["assertions"] = std::move(arr);
  return doc.dump();
}

ExtractionResult parse_extraction(std::string_view line) {
  try {
    auto doc = json::parse(line);
    ExtractionResult r;
    r.study_id = doc.at("study_id").get<std::string>();
    for (const auto& a : doc.at("assertions")) {
      auto c = a.at("certainty").get<std::string>();
      if (c != "certain" && c != "uncertain") throw ParseError("unknown certainty '" + c + "'");
      r.assertions.push_back({a.at("question").get<std::string>(), a.at("option").get<std::string>(),
                              c == "certain" ? Certainty::kCertain : Certainty::kUncertain});
    }
    std::sort(r.assertions.begin(), r.assertions.end());
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("extraction: ") + e.what());
  }
}

std::vector<ExtractionResult> load_extractions_file(const std::string& path) {
  std::vector<ExtractionResult> out;
  for (const auto& line : read_lines(path)) {
    if (!line.empty()) out.push_back(parse_extraction(line));
  }
  return out;
}

void save_extractions_file(std::span<const ExtractionResult> results, const std::string& path) {
  std::string text;
  for (const auto& r : results) text += serialize_extraction(r) + "\n";
  write_text_file(path, text);
}

ExamplePools load_pools_file(const std::string& path) {
  ExamplePools pools;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    auto& pool = pools[fields[0]];
    pool.assign(fields.begin() + 1, fields.end());
  }
  return pools;
}

void save_pools_file(const ExamplePools& pools, const std::string& path) {
  std::string text;
  for (const auto& [oid, studies] : pools) {
    text += oid;
    for (const auto& s : studies) text += "\t" + s;
    text += "\n";
  }
  write_text_file(path, text);
}

}  // namespace protokb

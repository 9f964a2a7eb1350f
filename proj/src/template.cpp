#include "protokb/template.hpp"

#include <algorithm>
#include <functional>
#include <json.hpp>

#include "protokb/errors.hpp"
#include "protokb/io.hpp"
#include "protokb/text.hpp"

namespace protokb {

using nlohmann::json;
using nlohmann::ordered_json;

std::string make_option_id(std::string_view question_id, std::string_view canonical_text) {
  std::string id(question_id);
  id.push_back('/');
  id.append(canonical_text);
  return id;
}

std::string_view to_string(AnswerMode mode) {
  return mode == AnswerMode::kSingleChoice ? "single-choice" : "multi-select";
}

Template Template::build(std::string id, const std::vector<QuestionSpec>& specs) {
  Template t;
  t.id_ = std::move(id);
  t.questions_.reserve(specs.size());

  for (const auto& spec : specs) {
    if (spec.id.empty()) throw ValidationError("question with empty id");
    if (spec.id.find('/') != std::string::npos) {
      throw ValidationError("question id '" + spec.id + "' must not contain '/'");
    }
    if (t.question_by_id_.count(spec.id)) {
      throw ValidationError("duplicate question id '" + spec.id + "'");
    }
    if (spec.level < 1 || spec.level > 3) {
      throw ValidationError("question '" + spec.id + "' has level " + std::to_string(spec.level) +
                            " outside 1..3");
    }
    if (spec.options.empty()) {
      throw ValidationError("question '" + spec.id + "' has no options");
    }

    Question q;
    q.id = spec.id;
    q.level = spec.level;
    q.text = spec.text;
    q.mode = spec.mode;
    q.trigger = spec.trigger;
    for (const auto& raw : spec.options) {
      auto text = normalize_phrase(raw);
      if (text.empty()) {
        throw ValidationError("question '" + spec.id + "' has an empty option text");
      }
      AnswerOption opt{make_option_id(spec.id, text), text, spec.id};
      if (t.option_by_id_.count(opt.id)) {
        throw ValidationError("duplicate option id '" + opt.id + "'");
      }
      t.option_by_id_.emplace(opt.id, t.options_.size());
      q.option_ids.push_back(opt.id);
      t.options_.push_back(std::move(opt));
    }
    t.question_by_id_.emplace(q.id, t.questions_.size());
    t.questions_.push_back(std::move(q));
  }

  // Trigger checks need every question registered first (forward references allowed).
  for (std::size_t i = 0; i < t.questions_.size(); ++i) {
    const auto& q = t.questions_[i];
    if (q.level == 1) {
      if (q.trigger) {
        throw ValidationError("level-1 question '" + q.id + "' must not have a trigger");
      }
      continue;
    }
    if (!q.trigger) {
      throw ValidationError("level-" + std::to_string(q.level) + " question '" + q.id +
                            "' has no trigger");
    }
    auto pit = t.question_by_id_.find(q.trigger->parent_question);
    if (pit == t.question_by_id_.end()) {
      throw ValidationError("question '" + q.id + "' names unknown parent '" +
                            q.trigger->parent_question + "'");
    }
    const auto& parent = t.questions_[pit->second];
    if (parent.level != q.level - 1) {
      throw ValidationError("question '" + q.id + "' (level " + std::to_string(q.level) +
                            ") has parent '" + parent.id + "' at level " +
                            std::to_string(parent.level));
    }
    auto& popt = q.trigger->parent_option;
    if (std::find(parent.option_ids.begin(), parent.option_ids.end(), popt) ==
        parent.option_ids.end()) {
      throw ValidationError("question '" + q.id + "' is triggered by option '" + popt +
                            "' which is not an option of '" + parent.id + "'");
    }
    t.children_by_option_[popt].push_back(i);
  }
  // Levels strictly increase along trigger edges, so the parent graph is a forest.
  return t;
}

bool Template::has_question(std::string_view id) const {
  return question_by_id_.count(std::string(id)) > 0;
}

bool Template::has_option(std::string_view id) const {
  return option_by_id_.count(std::string(id)) > 0;
}

std::size_t Template::question_index(std::string_view id) const {
  auto it = question_by_id_.find(std::string(id));
  if (it == question_by_id_.end()) throw UnknownIdError("unknown question id '" + std::string(id) + "'");
  return it->second;
}

std::size_t Template::option_index(std::string_view id) const {
  auto it = option_by_id_.find(std::string(id));
  if (it == option_by_id_.end()) throw UnknownIdError("unknown option id '" + std::string(id) + "'");
  return it->second;
}

const Question& Template::question(std::string_view id) const {
  return questions_[question_index(id)];
}

const AnswerOption& Template::option(std::string_view id) const {
  return options_[option_index(id)];
}

int Template::option_level(std::string_view id) const {
  return question(option(id).question_id).level;
}

const std::vector<std::size_t>& Template::children_of_option(std::string_view option_id) const {
  static const std::vector<std::size_t> kNone;
  auto it = children_by_option_.find(std::string(option_id));
  return it == children_by_option_.end() ? kNone : it->second;
}

std::vector<std::size_t> Template::children_of_question(std::string_view question_id) const {
  std::vector<std::size_t> out;
  for (const auto& oid : question(question_id).option_ids) {
    const auto& c = children_of_option(oid);
    out.insert(out.end(), c.begin(), c.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> Template::option_indices(const Question& q) const {
  std::vector<std::size_t> out;
  out.reserve(q.option_ids.size());
  for (const auto& oid : q.option_ids) out.push_back(option_index(oid));
  return out;
}

bool StructuredReport::selected(std::string_view question_id, std::string_view option_id) const {
  auto it = answers.find(std::string(question_id));
  return it != answers.end() && it->second.count(std::string(option_id)) > 0;
}

std::vector<const Question*> traversal_order(const Template& tmpl) {
  std::vector<const Question*> order;
  order.reserve(tmpl.num_questions());
  const auto qs = tmpl.questions();
  std::function<void(std::size_t)> visit = [&](std::size_t i) {
    order.push_back(&qs[i]);
    for (std::size_t c : tmpl.children_of_question(qs[i].id)) visit(c);
  };
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (!qs[i].trigger) visit(i);
  }
  return order;
}

std::vector<ConsistencyViolation> check_consistency(const StructuredReport& report,
                                                    const Template& tmpl) {
  std::vector<ConsistencyViolation> out;
  for (const auto& [qid, selected] : report.answers) {
    const Question& q = tmpl.question(qid);
    bool foreign = false;
    for (const auto& oid : selected) {
      if (tmpl.option(oid).question_id != qid) foreign = true;
    }
    if (foreign) out.push_back({qid, "foreign-option"});
    if (q.mode == AnswerMode::kSingleChoice && selected.size() != 1) {
      out.push_back({qid, "multiplicity"});
    }
    if (q.trigger && !report.selected(q.trigger->parent_question, q.trigger->parent_option)) {
      out.push_back({qid, "trigger-unmet"});
    }
  }
  return out;
}

namespace {

Template template_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("questions") || !doc["questions"].is_array()) {
    throw ParseError("template document must be an object with a 'questions' array");
  }
  std::vector<Template::QuestionSpec> specs;
  for (const auto& jq : doc["questions"]) {
    Template::QuestionSpec s;
    s.id = jq.at("id").get<std::string>();
    s.level = jq.at("level").get<int>();
    s.text = jq.value("text", std::string{});
    auto mode = jq.value("mode", std::string("multi-select"));
    if (mode == "single-choice") {
      s.mode = AnswerMode::kSingleChoice;
    } else if (mode == "multi-select") {
      s.mode = AnswerMode::kMultiSelect;
    } else {
      throw ParseError("question '" + s.id + "' has unknown mode '" + mode + "'");
    }
    s.options = jq.at("options").get<std::vector<std::string>>();
    if (jq.contains("trigger") && !jq["trigger"].is_null()) {
      const auto& jt = jq["trigger"];
      s.trigger = Trigger{jt.at("parent_question").get<std::string>(),
                          jt.at("parent_option").get<std::string>()};
    }
    specs.push_back(std::move(s));
  }
  return Template::build(doc.value("id", std::string{}), specs);
}

}  // namespace

Template load_template(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
    return template_from_json(doc);
  } catch (const json::exception& e) {
    throw ParseError(std::string("template: ") + e.what());
  }
}

std::string serialize_template(const Template& tmpl) {
  ordered_json doc;
  doc["id"] = tmpl.id();
  auto qs = ordered_json::array();
  for (const auto& q : tmpl.questions()) {
    ordered_json jq;
    jq["id"] = q.id;
    jq["level"] = q.level;
    jq["text"] = q.text;
    jq["mode"] = std::string(to_string(q.mode));
    auto opts = ordered_json::array();
    for (const auto& oid : q.option_ids) opts.push_back(tmpl.option(oid).canonical_text);
    jq["options"] = opts;
    if (q.trigger) {
      jq["trigger"] = {{"parent_question", q.trigger->parent_question},
                       {"parent_option", q.trigger->parent_option}};
    } else {
      jq["trigger"] = nullptr;
    }
    qs.push_back(std::move(jq));
  }
  doc["questions"] = std::move(qs);
  return doc.dump(2) + "\n";
}

Template load_template_file(const std::string& path) { return load_template(read_text_file(path)); }

void save_template_file(const Template& tmpl, const std::string& path) {
  write_text_file(path, serialize_template(tmpl));
}

StructuredReport parse_report(std::string_view json_line) {
  try {
    auto doc = json::parse(json_line);
    StructuredReport r;
    r.study_id = doc.at("study_id").get<std::string>();
    for (const auto& [qid, opts] : doc.at("answers").items()) {
      auto& set = r.answers[qid];
      for (const auto& o : opts) set.insert(o.get<std::string>());
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

std::string serialize_report(const StructuredReport& report) {
  ordered_json doc;
  doc["study_id"] = report.study_id;
  ordered_json answers = ordered_json::object();
  for (const auto& [qid, opts] : report.answers) {
    answers[qid] = std::vector<std::string>(opts.begin(), opts.end());
  }
  doc["answers"] = std::move(answers);
  return doc.dump();
}

std::vector<StructuredReport> load_reports_file(const std::string& path) {
  std::vector<StructuredReport> out;
  for (const auto& line : read_lines(path)) {
    if (!line.empty()) out.push_back(parse_report(line));
  }
  return out;
}

void save_reports_file(std::span<const StructuredReport> reports, const std::string& path) {
  std::string text;
  for (const auto& r : reports) {
    text += serialize_report(r);
    text.push_back('\n');
  }
  write_text_file(path, text);
}

}  // namespace protokb

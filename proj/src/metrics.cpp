#include "protokb/metrics.hpp"

#include <set>

#include "protokb/errors.hpp"
#include "protokb/io.hpp"

namespace protokb {

namespace {

std::map<std::string, const StructuredReport*> index_reports(std::span<const StructuredReport> reports,
                                                             const char* which) {
  std::map<std::string, const StructuredReport*> out;
  for (const auto& r : reports) {
    if (!out.emplace(r.study_id, &r).second) {
      throw AlignmentError(std::string("duplicate study id '") + r.study_id + "' in " + which);
    }
  }
  return out;
}

std::map<std::string, std::pair<const StructuredReport*, const StructuredReport*>> align(
    std::span<const StructuredReport> predicted, std::span<const StructuredReport> gold) {
  auto p = index_reports(predicted, "predictions");
  auto g = index_reports(gold, "gold");
  if (p.size() != g.size()) {
    throw AlignmentError("prediction/gold study counts differ: " + std::to_string(p.size()) +
                         " vs " + std::to_string(g.size()));
  }
  std::map<std::string, std::pair<const StructuredReport*, const StructuredReport*>> out;
  for (const auto& [id, pr] : p) {
    auto it = g.find(id);
    if (it == g.end()) throw AlignmentError("study '" + id + "' has no gold report");
    out.emplace(id, std::make_pair(pr, it->second));
  }
  return out;
}

std::set<std::string> positives(const StructuredReport& r) {
  std::set<std::string> out;
  for (const auto& [_, opts] : r.answers) out.insert(opts.begin(), opts.end());
  return out;
}

}  // namespace

std::map<std::string, Confusion> option_confusions(std::span<const StructuredReport> predicted,
                                                   std::span<const StructuredReport> gold,
                                                   const Template& tmpl) {
  auto pairs = align(predicted, gold);
  std::map<std::string, Confusion> out;
  for (const auto& opt : tmpl.options()) out[opt.id];
  for (const auto& [_, pg] : pairs) {
    auto pp = positives(*pg.first);
    auto gp = positives(*pg.second);
    for (const auto& id : pp) tmpl.option(id);  // UnknownIdError on foreign ids
    for (const auto& id : gp) tmpl.option(id);
    for (const auto& opt : tmpl.options()) {
      bool p = pp.count(opt.id) > 0;
      bool g = gp.count(opt.id) > 0;
      auto& c = out[opt.id];
      if (p && g) ++c.tp;
      else if (p) ++c.fp;
      else if (g) ++c.fn;
      else ++c.tn;
    }
  }
  return out;
}

double macro_f1(const std::map<std::string, Confusion>& confusions, const Template& tmpl, int level) {
  double sum = 0.0;
  long n = 0;
  for (const auto& [id, c] : confusions) {
    if (level != 0 && tmpl.option_level(id) != level) continue;
    if (!c.has_support()) continue;
    sum += c.f1();
    ++n;
  }
  return n == 0 ? 1.0 : sum / static_cast<double>(n);
}

double macro_f1(std::span<const StructuredReport> predicted, std::span<const StructuredReport> gold,
                const Template& tmpl, int level) {
  return macro_f1(option_confusions(predicted, gold, tmpl), tmpl, level);
}

double report_accuracy(std::span<const StructuredReport> predicted,
                       std::span<const StructuredReport> gold) {
  auto pairs = align(predicted, gold);
  if (pairs.empty()) return 0.0;
  long hits = 0;
  for (const auto& [_, pg] : pairs) {
    if (pg.first->answers == pg.second->answers) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

EvalMetrics evaluate_reports(std::span<const StructuredReport> predicted,
                             std::span<const StructuredReport> gold, const Template& tmpl) {
  auto conf = option_confusions(predicted, gold, tmpl);
  EvalMetrics m;
  m.overall_f1 = macro_f1(conf, tmpl, 0);
  m.l1_f1 = macro_f1(conf, tmpl, 1);
  m.l2_f1 = macro_f1(conf, tmpl, 2);
  m.l3_f1 = macro_f1(conf, tmpl, 3);
  m.report_accuracy = report_accuracy(predicted, gold);
  for (const auto& [id, c] : conf) {
    if (c.has_support()) ++m.scored_options[static_cast<std::size_t>(tmpl.option_level(id) - 1)];
  }
  return m;
}

std::string format_metrics(const EvalMetrics& m) {
  std::string out;
  auto line = [&](const char* k, const std::string& v) {
    out += k;
    out.push_back(' ');
    out += v;
    out.push_back('\n');
  };
  line("overall_f1", format_double(m.overall_f1));
  line("l1_f1", format_double(m.l1_f1));
  line("l2_f1", format_double(m.l2_f1));
  line("l3_f1", format_double(m.l3_f1));
  line("report_accuracy", format_double(m.report_accuracy));
  line("scored_options_l1", std::to_string(m.scored_options[0]));
  line("scored_options_l2", std::to_string(m.scored_options[1]));
  line("scored_options_l3", std::to_string(m.scored_options[2]));
  return out;
}

std::string format_confusions(const std::map<std::string, Confusion>& confusions) {
  std::string out = "option_id\ttp\tfp\tfn\ttn\tf1\n";
  for (const auto& [id, c] : confusions) {
    out += id + "\t" + std::to_string(c.tp) + "\t" + std::to_string(c.fp) + "\t" +
           std::to_string(c.fn) + "\t" + std::to_string(c.tn) + "\t" + format_double(c.f1()) + "\n";
  }
  return out;
}

}  // namespace protokb

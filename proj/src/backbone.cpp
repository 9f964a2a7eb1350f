#include "protokb/backbone.hpp"

namespace protokb {

std::string render_context(const Template& tmpl, const std::string& question_id,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& history) {
  std::string out;
  for (const auto& [qid, opts] : history) {
    out += "Q: " + tmpl.question(qid).text + " A:";
    for (std::size_t i = 0; i < opts.size(); ++i) {
      out += (i ? ", " : " ") + tmpl.option(opts[i]).canonical_text;
    }
    out += "; ";
  }
  out += "Q: " + tmpl.question(question_id).text;
  return out;
}

QuestionContext make_context(const Template& tmpl, const std::string& question_id,
                             std::vector<std::pair<std::string, std::vector<std::string>>> history) {
  QuestionContext ctx;
  ctx.question_id = question_id;
  ctx.rendered_text = render_context(tmpl, question_id, history);
  ctx.history = std::move(history);
  return ctx;
}

Eigen::VectorXd hash_tokens(std::string_view text, Eigen::Index buckets) {
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(buckets);
  if (buckets == 0) return hist;
  auto tokens = tokenize(normalize_phrase(text));
  auto bin = [&](std::uint64_t h) { return static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(buckets)); };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    hist[bin(fnv1a(tokens[i]))] += 1.0;
    if (i + 1 < tokens.size()) hist[bin(fnv1a(tokens[i + 1], fnv1a(tokens[i] + " ")))] += 1.0;
  }
  return hist;
}

}  // namespace protokb

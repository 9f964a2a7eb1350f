#include "protokb/llm_client.hpp"

#include <cstdlib>
#include <httplib.h>
#include <json.hpp>

#include "protokb/errors.hpp"

namespace protokb {

using nlohmann::json;

ChatCompletionClient::ChatCompletionClient(LlmConfig config) : config_(std::move(config)) {
  const auto& url = config_.endpoint;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("LLM endpoint needs a scheme: '" + url + "'");
  auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string ChatCompletionClient::request_body(const std::string& system, const std::string& user) const {
  json body = {{"model", config_.model},
               {"temperature", 0},
               {"messages",
                json::array({{{"role", "system"}, {"content", system}},
                             {{"role", "user"}, {"content", user}}})}};
  return body.dump();
}

std::string ChatCompletionClient::complete(const std::string& system, const std::string& user) const {
  httplib::Client client(base_);
  auto secs = static_cast<time_t>(config_.timeout_seconds);
  auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  auto res = client.Post(path_, headers, request_body(system, user), "application/json");
  if (!res) {
    throw ExtractorUnavailable("LLM request failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ExtractorUnavailable("LLM endpoint returned HTTP " + std::to_string(res->status));
  }
  try {
    auto doc = json::parse(res->body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw ExtractorUnavailable(std::string("malformed LLM response: ") + e.what());
  }
}

std::string LlmExtractor::render_user_message(const ConstrainedQuery& query) {
  std::string msg = query.prompt;
  msg += "\n\nReport:\n";
  msg += query.report_excerpt;
  msg += "\n\nAllowed answers:\n";
  for (const auto& a : query.allowed_answers) msg += "- " + a + "\n";
  msg += "- " + std::string(kUnsureToken) + "\n";
  return msg;
}

std::string LlmExtractor::answer(const ConstrainedQuery& query) {
  static const std::string kSystem =
      "You extract structured findings from radiology reports. Reply on the first line with "
      "the allowed answer(s) only, copied verbatim.";
  return client_.complete(kSystem, render_user_message(query));
}

std::vector<std::string> LlmPhraseExpander::propose(const Question& question,
                                                    const AnswerOption& option) {
  static const std::string kSystem =
      "You are a radiology terminology assistant. List alternative phrasings, one per line, "
      "without numbering or commentary.";
  std::string user = "Template question: " + question.text + "\nAnswer option: " +
                     option.canonical_text +
                     "\nPropose synonyms, abbreviations, and alternative phrasings a radiologist "
                     "might write for this answer in a free-text report.";
  std::string reply;
  try {
    reply = client_.complete(kSystem, user);
  } catch (const ExtractorUnavailable& e) {
    throw ExpanderUnavailable(e.what());
  }
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= reply.size()) {
    auto nl = reply.find('\n', start);
    auto line = reply.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    auto first = line.find_first_not_of("-*0123456789.) \t");
    if (first != std::string::npos) out.push_back(line.substr(first));
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return out;
}

}  // namespace protokb

#pragma once

#include <string>
#include <vector>

#include "protokb/extraction.hpp"
#include "protokb/terminology.hpp"

namespace protokb {

struct LlmConfig {
  std::string endpoint = "http://localhost:8000/v1/chat/completions";
  std::string model = "qwen2.5-7b-instruct";
  double timeout_seconds = 60.0;
  /// Name of the environment variable holding the API key; empty disables auth.
  std::string api_key_env = "PROTOKB_LLM_API_KEY";
  int max_concurrency = 4;
};

/// Minimal chat-completion client. One system and one user message per call.
class ChatCompletionClient {
 public:
  explicit ChatCompletionClient(LlmConfig config);

  /// Returns choices[0].message.content. Throws ExtractorUnavailable on
  /// transport errors, non-2xx status or a malformed body.
  std::string complete(const std::string& system, const std::string& user) const;

  /// The JSON request body sent for a call.
  std::string request_body(const std::string& system, const std::string& user) const;

  const LlmConfig& config() const { return config_; }

 private:
  LlmConfig config_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

class LlmExtractor : public ConstrainedAnswerProvider {
 public:
  explicit LlmExtractor(LlmConfig config) : client_(std::move(config)) {}
  std::string answer(const ConstrainedQuery& query) override;
  int max_concurrency() const override { return client_.config().max_concurrency; }

  static std::string render_user_message(const ConstrainedQuery& query);

 private:
  ChatCompletionClient client_;
};

/// Asks the model for synonyms, abbreviations and paraphrases, one per line.
class LlmPhraseExpander : public PhraseExpander {
 public:
  explicit LlmPhraseExpander(LlmConfig config) : client_(std::move(config)) {}
  std::vector<std::string> propose(const Question& question, const AnswerOption& option) override;
  Provenance provenance() const override { return Provenance::kLlmExpanded; }

 private:
  ChatCompletionClient client_;
};

}  // namespace protokb

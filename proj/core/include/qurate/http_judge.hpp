#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "qurate/judge.hpp"

namespace qurate {

inline constexpr std::string_view kApiKeyEnv = "QURATE_API_KEY";

struct HttpJudgeConfig {
  // e.g. "https://api.openai.com/v1"; requests go to <base_url>/chat/completions.
  std::string base_url;
  std::string model;
  std::string api_key;  // defaults to $QURATE_API_KEY when empty
  int max_retries = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{30000};
  std::chrono::seconds timeout{60};
  double temperature = 1.0;
  CriterionRegistry criteria = CriterionRegistry::builtin();
};

// Parses an assistant reply into a slot. Accepts "A"/"B" with surrounding
// whitespace, quotes or punctuation, and "Option A" style replies.
std::optional<Slot> parse_choice(std::string_view reply);

// Chat-completion judge. Each vote is one request carrying an Idempotency-Key
// header. Transient failures (connection errors, 408, 429, 5xx) are retried
// with exponential backoff; when retries run out a ServiceError is thrown.
// Content-filter responses raise JudgeRefusal.
class HttpChatJudge final : public Judge {
 public:
  explicit HttpChatJudge(HttpJudgeConfig config);
  ~HttpChatJudge() override;

  std::optional<Slot> vote(const VoteRequest& request) override;

  // Replaces the sleep between retries (tests use a no-op).
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper);

 private:
  struct Endpoint;
  HttpJudgeConfig config_;
  std::unique_ptr<Endpoint> endpoint_;
  std::function<void(std::chrono::milliseconds)> sleep_;
};

}  // namespace qurate

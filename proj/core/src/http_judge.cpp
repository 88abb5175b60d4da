#include "qurate/http_judge.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "jsonl.hpp"

namespace qurate {
namespace {

using json = nlohmann::json;

bool is_transient(int status) { return status == 408 || status == 429 || status >= 500; }

bool mentions_content_filter(const json& body) {
  if (!body.is_object()) return false;
  if (const auto err = body.find("error"); err != body.end() && err->is_object()) {
    if (err->value("code", std::string()) == "content_filter") return true;
    if (err->value("type", std::string()) == "content_filter") return true;
  }
  if (const auto choices = body.find("choices"); choices != body.end() && choices->is_array()) {
    for (const auto& c : *choices) {
      if (c.value("finish_reason", std::string()) == "content_filter") return true;
    }
  }
  return false;
}

}  // namespace

struct HttpChatJudge::Endpoint {
  std::string scheme_host_port;
  std::string path;
};

std::optional<Slot> parse_choice(std::string_view reply) {
  // First alphabetic word, skipping a leading "Option".
  std::string word;
  for (char c : reply) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    } else if (!word.empty()) {
      if (word != "OPTION") break;
      word.clear();
    }
  }
  if (word == "A") return Slot::kFirst;
  if (word == "B") return Slot::kSecond;
  return std::nullopt;
}

HttpChatJudge::HttpChatJudge(HttpJudgeConfig config)
    : config_(std::move(config)), endpoint_(std::make_unique<Endpoint>()) {
  if (config_.base_url.empty()) throw UsageError("judge base_url is not configured");
  if (config_.model.empty()) throw UsageError("judge model is not configured");
  if (config_.api_key.empty()) {
    if (const char* key = std::getenv(std::string(kApiKeyEnv).c_str())) config_.api_key = key;
  }
  if (config_.max_retries < 0) throw UsageError("max_retries must be nonnegative");

  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("judge base_url must include a scheme");
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  endpoint_->scheme_host_port = config_.base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  endpoint_->path = prefix + "/chat/completions";

  sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

HttpChatJudge::~HttpChatJudge() = default;

void HttpChatJudge::set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) {
  sleep_ = std::move(sleeper);
}

std::optional<Slot> HttpChatJudge::vote(const VoteRequest& request) {
  const std::string prompt = render_prompt(default_prompt_template(), config_.criteria.at(request.criterion),
                                           request.first_text, request.second_text);
  json body = {
      {"model", config_.model},
      {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
      {"temperature", config_.temperature},
      {"max_tokens", 2},
  };
  const std::string payload = jsonl::dump(body);

  httplib::Headers headers = {{"Idempotency-Key", request.idempotency_key}};
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto backoff = config_.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      sleep_(backoff);
      backoff = std::min(config_.max_backoff, backoff * 2);
    }
    httplib::Client client(endpoint_->scheme_host_port);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    const auto res = client.Post(endpoint_->path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    const json reply = json::parse(res->body, nullptr, false);
    if (mentions_content_filter(reply)) throw JudgeRefusal("judge refused: content filter");
    if (is_transient(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw ServiceError("judge endpoint returned HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 200));
    }
    if (reply.is_discarded()) return std::nullopt;
    try {
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) return std::nullopt;
      return parse_choice(content.get<std::string>());
    } catch (const json::exception&) {
      return std::nullopt;
    }
  }
  throw ServiceError("judge endpoint unavailable after " + std::to_string(config_.max_retries) +
                     " retries (" + last_error + ")");
}

}  // namespace qurate

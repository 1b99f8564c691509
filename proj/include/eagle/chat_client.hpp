#pragma once

#include <memory>
#include <string>

#include <eagle/prompting.hpp>

namespace eagle {

struct EndpointConfig {
  std::string url;      // base URL or full path to /chat/completions
  std::string model;
  std::string api_key;
  int max_retries = 3;  // extra attempts after the first, on transient failures
  int backoff_initial_ms = 250;
  int timeout_seconds = 60;
};

// OpenAI-compatible chat-completions client over HTTP(S) with exponential
// backoff on transient transport failures (connection errors, 429, 5xx).
class HttpChatClient : public ModelClient {
 public:
  explicit HttpChatClient(EndpointConfig config);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  EndpointConfig config_;
};

// Deterministic stand-ins for the external model.
//
// EchoPriorStub mirrors the expert's textual prior: anomalous prior -> "A",
// normal prior -> "B". AdversarialStub answers against the prior for
// low-confidence requests and mirrors it otherwise. FixedAnswerStub always
// returns the same text (possibly empty, to exercise the error path).
class EchoPriorStub : public ModelClient {
 public:
  ChatResponse complete(const ChatRequest& request) override;
};

class AdversarialStub : public ModelClient {
 public:
  ChatResponse complete(const ChatRequest& request) override;
};

class FixedAnswerStub : public ModelClient {
 public:
  explicit FixedAnswerStub(std::string text) : text_(std::move(text)) {}
  ChatResponse complete(const ChatRequest&) override { return {text_, 200, 0.0}; }

 private:
  std::string text_;
};

// Whether the request's textual prior declares the image anomalous; shared by
// the stubs.
bool request_prior_is_anomalous(const ChatRequest& request);

}  // namespace eagle

#include <eagle/chat_client.hpp>

#include <chrono>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <eagle/errors.hpp>

namespace eagle {

namespace {

using json = nlohmann::json;

struct ParsedUrl {
  std::string host_part;  // scheme://host[:port]
  std::string path;       // endpoint path, always ending in /chat/completions
};

ParsedUrl parse_endpoint_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ArgumentError("endpoint URL must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);

  ParsedUrl parsed;
  if (path_start == std::string::npos) {
    parsed.host_part = url;
    parsed.path = "";
  } else {
    parsed.host_part = url.substr(0, path_start);
    parsed.path = url.substr(path_start);
  }
  while (!parsed.path.empty() && parsed.path.back() == '/') parsed.path.pop_back();
  const std::string suffix = "/chat/completions";
  if (parsed.path.size() < suffix.size() ||
      parsed.path.compare(parsed.path.size() - suffix.size(), suffix.size(), suffix) != 0)
    parsed.path += suffix;
  return parsed;
}

bool transient_status(int status) {
  return status == 429 || (status >= 500 && status < 600);
}

}  // namespace

HttpChatClient::HttpChatClient(EndpointConfig config) : config_(std::move(config)) {
  if (config_.url.empty()) throw ArgumentError("endpoint URL not configured");
}

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
  const ParsedUrl endpoint = parse_endpoint_url(config_.url);
  const std::string body = chat_request_to_wire_json(request);

  httplib::Client client(endpoint.host_part);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + config_.api_key);

  const auto start = std::chrono::steady_clock::now();
  int last_status = 0;
  std::string last_error = "connection failed";

  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const auto delay = std::chrono::milliseconds(
          static_cast<long long>(config_.backoff_initial_ms) * (1ll << (attempt - 1)));
      std::this_thread::sleep_for(delay);
    }

    auto result = client.Post(endpoint.path, headers, body, "application/json");
    if (!result) {
      last_error = httplib::to_string(result.error());
      continue;  // transport failure: retry
    }
    last_status = result->status;
    if (transient_status(result->status)) {
      last_error = "status " + std::to_string(result->status);
      continue;
    }
    if (result->status < 200 || result->status >= 300)
      throw EndpointError("chat endpoint returned status " + std::to_string(result->status) +
                          ": " + result->body);

    ChatResponse response;
    response.status = result->status;
    response.latency_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
      const json doc = json::parse(result->body);
      response.raw_text =
          doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw EndpointError(std::string("malformed completion payload: ") + e.what());
    }
    return response;
  }

  throw EndpointError("chat endpoint unreachable after " +
                      std::to_string(config_.max_retries + 1) + " attempts (" + last_error +
                      (last_status ? ", last status " + std::to_string(last_status) : "") + ")");
}

bool request_prior_is_anomalous(const ChatRequest& request) {
  // The prior travels as the final text part of the user message.
  for (auto message = request.messages.rbegin(); message != request.messages.rend(); ++message) {
    if (message->role != "user") continue;
    for (auto part = message->parts.rbegin(); part != message->parts.rend(); ++part) {
      if (part->kind != ContentPart::Kind::text) continue;
      return part->value.find("anomalous") != std::string::npos ||
             part->value.find("abnormal") != std::string::npos;
    }
  }
  return false;
}

ChatResponse EchoPriorStub::complete(const ChatRequest& request) {
  return {request_prior_is_anomalous(request) ? "A" : "B", 200, 0.0};
}

ChatResponse AdversarialStub::complete(const ChatRequest& request) {
  const bool anomalous = request_prior_is_anomalous(request);
  const bool answer_yes = request.low_confidence ? !anomalous : anomalous;
  return {answer_yes ? "A" : "B", 200, 0.0};
}

}  // namespace eagle

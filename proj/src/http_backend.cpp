#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

#include "dpprompt/backends.hpp"
#include "dpprompt/errors.hpp"
#include "dpprompt/log.hpp"
#include "httplib.h"
#include "json.hpp"

namespace dpprompt {
namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim_leading(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

std::optional<std::size_t> match_verbalizer(std::string_view token, const Task& task) {
  const std::string needle = lower(trim_leading(token));
  for (const auto& label : task.labels()) {
    if (lower(label.token) == needle) return static_cast<std::size_t>(label.index);
  }
  return std::nullopt;
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

std::chrono::milliseconds RetryPolicy::delay_for(int attempt) const {
  if (attempt < 1) return std::chrono::milliseconds(0);
  const int shift = std::min(attempt - 1, 30);
  const auto scaled = base_delay.count() * (std::int64_t{1} << shift);
  return std::chrono::milliseconds(std::min<std::int64_t>(scaled, max_delay.count()));
}

std::string completion_request_body(const HttpParams& params, std::string_view prompt) {
  json body = {{"model", params.model},
               {"prompt", std::string(prompt)},
               {"max_tokens", 1},
               {"temperature", 0}};
  if (params.mode == HttpMode::kLogprobs) body["logprobs"] = params.top_logprobs;
  return body.dump();
}

ProbVector parse_completion_response(std::string_view body, HttpMode mode, const Task& task) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error&) {
    throw TransportError("completion response is not valid JSON");
  }
  const auto& choices = doc.value("choices", json::array());
  if (!choices.is_array() || choices.empty()) throw TransportError("completion response has no choices");
  const json& choice = choices.at(0);

  if (mode == HttpMode::kTopToken) {
    const std::string text = choice.value("text", std::string{});
    if (auto idx = match_verbalizer(text, task)) return ProbVector::one_hot(task.size(), *idx);
    return ProbVector::other(task.size());
  }

  const json* top = nullptr;
  if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
    if (auto tl = lp->find("top_logprobs"); tl != lp->end() && tl->is_array() && !tl->empty()) {
      top = &tl->at(0);
    }
  }
  if (top == nullptr || !top->is_object()) throw TransportError("completion response lacks top_logprobs");

  std::vector<double> mass(task.size(), 0.0);
  bool matched = false;
  for (const auto& [token, logprob] : top->items()) {
    if (!logprob.is_number()) continue;
    if (auto idx = match_verbalizer(token, task)) {
      mass[*idx] += std::exp(logprob.get<double>());
      matched = true;
    }
  }
  if (!matched) return ProbVector::other(task.size());
  return ProbVector::from_weights(std::move(mass), ProbSource::kFullDistribution);
}

HttpBackend::HttpBackend(Task task, HttpParams params) : task_(std::move(task)), params_(std::move(params)) {
  const auto scheme_end = params_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("http endpoint must be an absolute URL");
  const auto path_start = params_.endpoint.find('/', scheme_end + 3);
  scheme_host_port_ = params_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : params_.endpoint.substr(path_start);
  if (params_.model.empty()) throw ConfigError("http backend needs a model name");
  if (params_.retry.max_attempts < 1) throw ConfigError("max retries must be at least 1");
  if (params_.parallelism == 0) params_.parallelism = 1;
  if (params_.mode == HttpMode::kLogprobs && task_.size() > static_cast<std::size_t>(params_.top_logprobs)) {
    log::warn("task has more classes than requested top logprobs; consider top-token mode");
  }
}

std::string HttpBackend::post_with_retries(const std::string& body) const {
  httplib::Headers headers;
  if (!params_.token_env.empty()) {
    const char* token = std::getenv(params_.token_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw TransportError("auth token variable " + params_.token_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  std::string last_error;
  for (int attempt = 1; attempt <= params_.retry.max_attempts; ++attempt) {
    if (attempt > 1) std::this_thread::sleep_for(params_.retry.delay_for(attempt - 1));
    httplib::Client client(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(params_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(params_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      return res->body;
    } else if (res->status == 401 || res->status == 403) {
      throw TransportError("authentication rejected (HTTP " + std::to_string(res->status) + ")");
    } else if (!retryable_status(res->status)) {
      throw TransportError("completion request failed with HTTP " + std::to_string(res->status));
    } else {
      last_error = "HTTP " + std::to_string(res->status);
    }
    log::info("completion attempt " + std::to_string(attempt) + " failed: " + last_error);
  }
  throw TransportError("completion request failed after " + std::to_string(params_.retry.max_attempts) +
                       " attempts: " + last_error);
}

ProbVector HttpBackend::classify(const PromptSpec& spec, std::string_view query_text) const {
  const std::string prompt = render_prompt(spec, query_text);
  const std::string response = post_with_retries(completion_request_body(params_, prompt));
  return parse_completion_response(response, params_.mode, task_);
}

}  // namespace dpprompt

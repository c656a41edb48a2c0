#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>

#include "dpprompt/core.hpp"

namespace dpprompt {

enum class BackendKind { kMock, kHttp };

// A prompted language model restricted to the task's verbalizer tokens.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendKind kind() const noexcept = 0;
  virtual const Task& task() const noexcept = 0;
  // Whether classify returns full class distributions rather than a top token.
  virtual bool supports_logprobs() const noexcept = 0;
  // Upper bound on concurrent classify calls the caller should issue.
  virtual std::size_t max_parallelism() const noexcept { return 1; }

  virtual ProbVector classify(const PromptSpec& spec, std::string_view query_text) const = 0;

  // Output for the content-free input "N/A"; the reference point of contextual
  // calibration. Throws UnsupportedOperationError for top-token-only backends.
  ProbVector content_free_probs(const PromptSpec& spec) const;
};

inline constexpr std::string_view kContentFreeInput = "N/A";

using BackendFactory = std::function<std::unique_ptr<Backend>(std::size_t trial)>;

// --- mock -------------------------------------------------------------------

struct MockParams {
  // Probability that a prediction lands on the true class.
  double teacher_accuracy = 0.9;
  // Probability mass gamma added to the demonstrated label when the query is
  // one of the prompt's demonstrations (then renormalized by 1 + gamma).
  double leakage_gap = 0.0;
  std::uint64_t seed = 0;
  // Probability that a (prompt, query) pair takes the prompt-independent
  // draw. Prompts sharing that draw agree; the rest decide independently.
  double consensus = 0.9;
  // Accuracy lost per unit fraction of demonstrations whose label disagrees
  // with the truth table.
  double mislabel_penalty = 0.0;
  // Emulate a top-token API: return one-hot vectors (or "other").
  bool top_token_only = false;
  double other_rate = 0.0;
};

// Deterministic stand-in for a prompted LLM. Every draw comes from streams
// keyed by 64-bit FNV-1a over the UTF-8 bytes of the seed and query text:
//
//   shared key = FNV(seed_le64 || query)
//   prompt key = FNV(seed_le64 || prompt_digest_le64 || query)
//
// A uniform from the prompt key selects the shared stream with probability
// `consensus`, else the prompt stream. From the selected stream: u_correct,
// a wrong-class offset, a fallback class, then C uniform weights. The largest
// weight is swapped onto the predicted class (the true class when
// u_correct < accuracy, a wrong class otherwise, the fallback class when the
// query has no known label) and the weights are normalized.
class MockBackend final : public Backend {
 public:
  MockBackend(Task task, MockParams params, std::unordered_map<std::string, int> truth = {});

  BackendKind kind() const noexcept override { return BackendKind::kMock; }
  const Task& task() const noexcept override { return task_; }
  bool supports_logprobs() const noexcept override { return !params_.top_token_only; }
  std::size_t max_parallelism() const noexcept override { return 1; }

  ProbVector classify(const PromptSpec& spec, std::string_view query_text) const override;

  const MockParams& params() const noexcept { return params_; }
  void add_truth(const LabeledDataset& data);
  std::optional<int> true_label(std::string_view text) const;

 private:
  double effective_accuracy(const PromptSpec& spec) const;

  Task task_;
  MockParams params_;
  std::unordered_map<std::string, int> truth_;
};

// --- HTTP completion API -----------------------------------------------------

enum class HttpMode { kLogprobs, kTopToken };

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{200};
  std::chrono::milliseconds max_delay{10'000};

  // Delay before retry number `attempt` (1-based): base * 2^(attempt-1), capped.
  std::chrono::milliseconds delay_for(int attempt) const;
};

struct HttpParams {
  std::string endpoint;  // full URL, e.g. https://host/v1/completions
  std::string model;
  std::string token_env;  // environment variable holding the bearer token
  HttpMode mode = HttpMode::kLogprobs;
  std::chrono::milliseconds timeout{30'000};
  RetryPolicy retry;
  std::size_t parallelism = 4;
  int top_logprobs = 5;
};

class HttpBackend final : public Backend {
 public:
  HttpBackend(Task task, HttpParams params);

  BackendKind kind() const noexcept override { return BackendKind::kHttp; }
  const Task& task() const noexcept override { return task_; }
  bool supports_logprobs() const noexcept override { return params_.mode == HttpMode::kLogprobs; }
  std::size_t max_parallelism() const noexcept override { return params_.parallelism; }

  ProbVector classify(const PromptSpec& spec, std::string_view query_text) const override;

  const HttpParams& params() const noexcept { return params_; }

 private:
  std::string post_with_retries(const std::string& body) const;

  Task task_;
  HttpParams params_;
  std::string scheme_host_port_;
  std::string path_;
};

// Request body for a one-token completion.
std::string completion_request_body(const HttpParams& params, std::string_view prompt);

// Maps a completion response onto the task's verbalizers. Tokens match
// case-insensitively after trimming leading whitespace.
ProbVector parse_completion_response(std::string_view body, HttpMode mode, const Task& task);

}  // namespace dpprompt

#include "dpprompt/backends.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpprompt/errors.hpp"
#include "dpprompt/hash.hpp"
#include "dpprompt/rng.hpp"

namespace dpprompt {

ProbVector Backend::content_free_probs(const PromptSpec& spec) const {
  if (!supports_logprobs()) {
    throw UnsupportedOperationError("contextual calibration needs class probabilities; backend returns top tokens only");
  }
  return classify(spec, kContentFreeInput);
}

MockBackend::MockBackend(Task task, MockParams params, std::unordered_map<std::string, int> truth)
    : task_(std::move(task)), params_(params), truth_(std::move(truth)) {
  if (task_.size() < 2) throw ConfigError("mock backend needs at least two classes");
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(params_.teacher_accuracy)) throw ConfigError("teacher_accuracy must lie in [0, 1]");
  if (!in_unit(params_.consensus)) throw ConfigError("consensus must lie in [0, 1]");
  if (!in_unit(params_.other_rate)) throw ConfigError("other_rate must lie in [0, 1]");
  if (!(params_.leakage_gap >= 0.0) || !std::isfinite(params_.leakage_gap)) {
    throw ConfigError("leakage_gap must be finite and non-negative");
  }
  if (!(params_.mislabel_penalty >= 0.0)) throw ConfigError("mislabel_penalty must be non-negative");
}

void MockBackend::add_truth(const LabeledDataset& data) {
  for (const auto& r : data.records) truth_[r.text] = r.label.index;
}

std::optional<int> MockBackend::true_label(std::string_view text) const {
  auto it = truth_.find(std::string(text));
  if (it == truth_.end()) return std::nullopt;
  return it->second;
}

double MockBackend::effective_accuracy(const PromptSpec& spec) const {
  if (params_.mislabel_penalty == 0.0 || spec.demonstrations.empty()) return params_.teacher_accuracy;
  std::size_t wrong = 0;
  for (const auto& demo : spec.demonstrations) {
    auto truth = true_label(demo.text);
    if (truth && *truth != demo.label.index) ++wrong;
  }
  const double frac = static_cast<double>(wrong) / static_cast<double>(spec.demonstrations.size());
  return std::clamp(params_.teacher_accuracy - params_.mislabel_penalty * frac, 0.0, 1.0);
}

ProbVector MockBackend::classify(const PromptSpec& spec, std::string_view query_text) const {
  const std::size_t n_classes = task_.size();
  const std::uint64_t seed_state = fnv1a64_u64(params_.seed);
  const std::uint64_t shared_key = fnv1a64(query_text, seed_state);
  const std::uint64_t prompt_key = fnv1a64(query_text, fnv1a64_u64(prompt_digest(spec), seed_state));

  Rng selector(prompt_key, 0);
  const bool use_shared = selector.uniform() < params_.consensus;
  Rng draws = use_shared ? Rng(shared_key, 1) : Rng(prompt_key, 1);

  const double u_correct = draws.uniform();
  const auto wrong_offset = static_cast<std::size_t>(draws.uniform_index(n_classes - 1));
  const auto fallback = static_cast<std::size_t>(draws.uniform_index(n_classes));
  std::vector<double> weights(n_classes);
  for (auto& w : weights) w = draws.uniform();
  const double u_other = draws.uniform();

  std::size_t predicted = fallback;
  if (auto truth = true_label(query_text)) {
    const auto t = static_cast<std::size_t>(*truth);
    predicted = u_correct < effective_accuracy(spec) ? t : (t + 1 + wrong_offset) % n_classes;
  }
  const auto top = static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) - weights.begin());
  std::swap(weights[top], weights[predicted]);

  double total = 0.0;
  for (double w : weights) total += w;
  for (double& w : weights) w /= total;

  if (params_.leakage_gap > 0.0) {
    for (const auto& demo : spec.demonstrations) {
      if (demo.text == query_text) {
        weights[static_cast<std::size_t>(demo.label.index)] += params_.leakage_gap;
        break;
      }
    }
  }

  if (params_.top_token_only) {
    if (u_other < params_.other_rate) return ProbVector::other(n_classes);
    auto pv = ProbVector::from_weights(weights);
    return ProbVector::one_hot(n_classes, *pv.argmax());
  }
  return ProbVector::from_weights(std::move(weights));
}

}  // namespace dpprompt

#include "dpprompt/core.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dpprompt/errors.hpp"
#include "dpprompt/hash.hpp"
#include "dpprompt/rng.hpp"

namespace dpprompt {

Task::Task(std::vector<std::string> tokens) {
  std::unordered_set<std::string> seen;
  labels_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw ConfigError("class label token must be nonempty");
    if (!seen.insert(tokens[i]).second) throw ConfigError("duplicate class label token: " + tokens[i]);
    labels_.push_back(ClassLabel{static_cast<int>(i), std::move(tokens[i])});
  }
}

std::optional<ClassLabel> Task::find(std::string_view token) const {
  for (const auto& label : labels_) {
    if (label.token == token) return label;
  }
  return std::nullopt;
}

const ClassLabel& Task::by_token(std::string_view token) const {
  for (const auto& label : labels_) {
    if (label.token == token) return label;
  }
  throw ConfigError("label '" + std::string(token) + "' is not a task class");
}

bool PromptSpec::contains_text(std::string_view text) const {
  return std::any_of(demonstrations.begin(), demonstrations.end(),
                     [&](const Demonstration& d) { return d.text == text; });
}

void LabeledDataset::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.text.empty()) throw ConfigError("record " + std::to_string(i) + " has empty text");
    if (r.label.index < 0 || static_cast<std::size_t>(r.label.index) >= task.size() ||
        task[static_cast<std::size_t>(r.label.index)] != r.label) {
      throw ConfigError("record " + std::to_string(i) + " has a label outside the task");
    }
  }
}

ProbVector ProbVector::from_weights(std::vector<double> weights, ProbSource source) {
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw DomainError("probability weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw DomainError("probability weights sum to zero");
  for (double& w : weights) w /= total;
  return ProbVector(std::move(weights), source, false);
}

ProbVector ProbVector::one_hot(std::size_t size, std::size_t index) {
  if (index >= size) throw DomainError("one-hot index out of range");
  std::vector<double> probs(size, 0.0);
  probs[index] = 1.0;
  return ProbVector(std::move(probs), ProbSource::kTopTokenOnly, false);
}

ProbVector ProbVector::other(std::size_t size) {
  return ProbVector(std::vector<double>(size, 0.0), ProbSource::kTopTokenOnly, true);
}

std::optional<std::size_t> ProbVector::argmax() const {
  if (other_ || probs_.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs_.size(); ++i) {
    if (probs_[i] > probs_[best]) best = i;
  }
  return best;
}

std::string render_prompt(const PromptSpec& spec, std::string_view query_text) {
  if (spec.template_id != kDefaultTemplate) {
    throw ConfigError("unknown prompt template '" + spec.template_id + "'");
  }
  std::string out;
  if (!spec.instruction.empty()) {
    out += spec.instruction;
    out += "\n";
  }
  for (const auto& demo : spec.demonstrations) {
    out += demo.text;
    out += "\n";
    out += demo.label.token;
    out += "\n";
  }
  out += query_text;
  out += "\n";
  return out;
}

std::uint64_t prompt_digest(const PromptSpec& spec) { return fnv1a64(render_prompt(spec, {})); }

std::vector<std::vector<std::size_t>> partition_indices(std::size_t n_records, std::size_t n_teachers,
                                                        std::size_t shots, std::uint64_t seed) {
  const std::size_t needed = n_teachers * shots;
  if (needed > n_records) {
    throw InsufficientDataError("disjoint partition of " + std::to_string(n_teachers) + " teachers x " +
                                    std::to_string(shots) + " shots",
                                needed, n_records);
  }
  std::vector<std::size_t> order(n_records);
  for (std::size_t i = 0; i < n_records; ++i) order[i] = i;
  Rng rng(seed, /*stream=*/0x7061727469ULL);
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> chunks(n_teachers);
  for (std::size_t t = 0; t < n_teachers; ++t) {
    chunks[t].assign(order.begin() + static_cast<std::ptrdiff_t>(t * shots),
                     order.begin() + static_cast<std::ptrdiff_t>((t + 1) * shots));
  }
  return chunks;
}

std::vector<PromptSpec> partition_disjoint(const LabeledDataset& data, std::size_t n_teachers,
                                           std::size_t shots, std::uint64_t seed,
                                           std::string_view instruction) {
  const auto chunks = partition_indices(data.records.size(), n_teachers, shots, seed);
  std::vector<PromptSpec> specs;
  specs.reserve(n_teachers);
  for (const auto& chunk : chunks) {
    PromptSpec spec;
    spec.instruction = std::string(instruction);
    for (std::size_t idx : chunk) spec.demonstrations.push_back(data.records[idx]);
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace dpprompt

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dpprompt {

struct ClassLabel {
  int index = 0;
  std::string token;  // verbalizer word, e.g. "positive"

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

// The C classes of a classification task. Indices are 0..C-1 in order.
class Task {
 public:
  Task() = default;
  explicit Task(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return labels_.size(); }
  const ClassLabel& operator[](std::size_t i) const { return labels_.at(i); }
  const std::vector<ClassLabel>& labels() const noexcept { return labels_; }

  std::optional<ClassLabel> find(std::string_view token) const;
  // Throws ConfigError for a token not in the task.
  const ClassLabel& by_token(std::string_view token) const;

  friend bool operator==(const Task&, const Task&) = default;

 private:
  std::vector<ClassLabel> labels_;
};

struct Demonstration {
  std::string text;
  ClassLabel label;

  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

inline constexpr std::string_view kDefaultTemplate = "default";

struct PromptSpec {
  std::string instruction;
  std::vector<Demonstration> demonstrations;
  std::string template_id = std::string(kDefaultTemplate);

  bool contains_text(std::string_view text) const;
  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

struct LabeledDataset {
  std::vector<Demonstration> records;
  Task task;

  std::size_t size() const noexcept { return records.size(); }
  // Throws ConfigError if a record carries a label outside the task.
  void validate() const;
};

enum class ProbSource { kFullDistribution, kTopTokenOnly };

// Class probabilities restricted to the task's verbalizer tokens. A top-token
// response that matched no verbalizer is represented as the "other" outcome:
// all entries zero and is_other() true.
class ProbVector {
 public:
  // Normalizes non-negative weights; throws DomainError on negative, non-finite
  // or all-zero input.
  static ProbVector from_weights(std::vector<double> weights,
                                 ProbSource source = ProbSource::kFullDistribution);
  static ProbVector one_hot(std::size_t size, std::size_t index);
  static ProbVector other(std::size_t size);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_.at(i); }
  std::span<const double> probs() const noexcept { return probs_; }
  ProbSource source() const noexcept { return source_; }
  bool is_other() const noexcept { return other_; }

  // Index of the largest entry, ties to the lowest index; nullopt for "other".
  std::optional<std::size_t> argmax() const;

 private:
  ProbVector(std::vector<double> probs, ProbSource source, bool other)
      : probs_(std::move(probs)), source_(source), other_(other) {}

  std::vector<double> probs_;
  ProbSource source_ = ProbSource::kFullDistribution;
  bool other_ = false;
};

// Renders instruction, demonstrations ("<text>\n<label>\n" each) and the query
// followed by an empty answer slot. Throws ConfigError for an unknown template.
std::string render_prompt(const PromptSpec& spec, std::string_view query_text);

// FNV-1a digest of the rendered prompt without a query; identifies a prompt
// to the mock backend.
std::uint64_t prompt_digest(const PromptSpec& spec);

// Seeded Fisher-Yates permutation of record indices, chunked into n_teachers
// prompts of `shots` demonstrations each. No record is used twice, which is
// what bounds each teacher's influence on a vote histogram by one vote.
std::vector<PromptSpec> partition_disjoint(const LabeledDataset& data, std::size_t n_teachers,
                                           std::size_t shots, std::uint64_t seed,
                                           std::string_view instruction = {});

// Same permutation as partition_disjoint, exposed as record indices.
std::vector<std::vector<std::size_t>> partition_indices(std::size_t n_records,
                                                        std::size_t n_teachers,
                                                        std::size_t shots, std::uint64_t seed);

}  // namespace dpprompt

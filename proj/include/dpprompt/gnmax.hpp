#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "dpprompt/rng.hpp"

namespace dpprompt {

// Per-class teacher votes for one public input. `other` counts teachers whose
// answer matched no verbalizer; it competes in the threshold check but is
// never emitted as a label.
struct VoteHistogram {
  std::vector<std::int64_t> counts;
  std::int64_t other = 0;
  std::int64_t n_teachers = 0;

  std::size_t n_classes() const noexcept { return counts.size(); }
  // Largest bin including "other".
  std::int64_t max_count() const;
  // Throws DomainError unless counts are non-negative and sum to n_teachers.
  void validate() const;

  friend bool operator==(const VoteHistogram&, const VoteHistogram&) = default;
};

struct GNMaxConfig {
  double threshold = 180.0;
  double sigma1 = 1.0;
  double sigma2 = 20.0;
  std::uint64_t seed = 0;

  // The threshold check is skipped entirely when T is -inf or sigma1 is +inf.
  bool threshold_enabled() const noexcept {
    return threshold != -std::numeric_limits<double>::infinity() &&
           sigma1 != std::numeric_limits<double>::infinity();
  }
  void validate() const;
};

// Answered(label index) or rejected.
class AggregationOutcome {
 public:
  static AggregationOutcome answered(std::size_t label) { return AggregationOutcome(label); }
  static AggregationOutcome rejected() { return AggregationOutcome(std::nullopt); }

  bool is_answered() const noexcept { return label_.has_value(); }
  std::size_t label() const { return label_.value(); }

  friend bool operator==(const AggregationOutcome&, const AggregationOutcome&) = default;

 private:
  explicit AggregationOutcome(std::optional<std::size_t> label) : label_(label) {}
  std::optional<std::size_t> label_;
};

namespace gnmax {

// Confident-GNMax with externally supplied standard-normal draws: answers when
// max_count + sigma1 * threshold_noise >= T, with the label
// argmax_j counts[j] + sigma2 * argmax_noise[j] (ties to the lowest index).
AggregationOutcome aggregate_with_noise(const VoteHistogram& hist, const GNMaxConfig& cfg,
                                        double threshold_noise, std::span<const double> argmax_noise);

// Draws one normal for the threshold check (when enabled), then C normals for
// the argmax only if the check passed.
AggregationOutcome aggregate(const VoteHistogram& hist, const GNMaxConfig& cfg, Rng& rng);

// counts[true_label] / n_teachers.
double consensus_fraction(const VoteHistogram& hist, std::size_t true_label);

// Noiseless plurality vote over task classes, ties to the lowest index.
std::size_t plurality(const VoteHistogram& hist);

}  // namespace gnmax
}  // namespace dpprompt

#include "dpprompt/gnmax.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpprompt/errors.hpp"

namespace dpprompt {

std::int64_t VoteHistogram::max_count() const {
  std::int64_t best = other;
  for (auto c : counts) best = std::max(best, c);
  return best;
}

void VoteHistogram::validate() const {
  if (counts.empty()) throw DomainError("vote histogram has no classes");
  std::int64_t total = other;
  if (other < 0) throw DomainError("negative vote count");
  for (auto c : counts) {
    if (c < 0) throw DomainError("negative vote count");
    total += c;
  }
  if (total != n_teachers) {
    throw DomainError("vote histogram sums to " + std::to_string(total) + ", expected " +
                      std::to_string(n_teachers) + " teachers");
  }
}

void GNMaxConfig::validate() const {
  if (std::isnan(threshold)) throw ConfigError("threshold must be a number");
  if (!(sigma1 >= 0.0)) throw ConfigError("sigma1 must be non-negative");
  if (!(sigma2 > 0.0)) throw ConfigError("sigma2 must be positive");
}

namespace gnmax {

AggregationOutcome aggregate_with_noise(const VoteHistogram& hist, const GNMaxConfig& cfg,
                                        double threshold_noise, std::span<const double> argmax_noise) {
  if (cfg.threshold_enabled()) {
    const double noisy_max = static_cast<double>(hist.max_count()) + cfg.sigma1 * threshold_noise;
    if (!(noisy_max >= cfg.threshold)) return AggregationOutcome::rejected();
  }
  if (argmax_noise.size() != hist.n_classes()) throw DomainError("argmax noise size mismatch");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < hist.n_classes(); ++j) {
    const double v = static_cast<double>(hist.counts[j]) + cfg.sigma2 * argmax_noise[j];
    if (v > best_value) {
      best_value = v;
      best = j;
    }
  }
  return AggregationOutcome::answered(best);
}

AggregationOutcome aggregate(const VoteHistogram& hist, const GNMaxConfig& cfg, Rng& rng) {
  double threshold_noise = 0.0;
  if (cfg.threshold_enabled()) {
    threshold_noise = rng.normal();
    const double noisy_max = static_cast<double>(hist.max_count()) + cfg.sigma1 * threshold_noise;
    if (!(noisy_max >= cfg.threshold)) return AggregationOutcome::rejected();
  }
  std::vector<double> noise(hist.n_classes());
  for (auto& z : noise) z = rng.normal();
  return aggregate_with_noise(hist, cfg, threshold_noise, noise);
}

double consensus_fraction(const VoteHistogram& hist, std::size_t true_label) {
  if (true_label >= hist.n_classes()) throw DomainError("true label outside the histogram");
  if (hist.n_teachers <= 0) throw DomainError("histogram has no teachers");
  return static_cast<double>(hist.counts[true_label]) / static_cast<double>(hist.n_teachers);
}

std::size_t plurality(const VoteHistogram& hist) {
  const auto it = std::max_element(hist.counts.begin(), hist.counts.end());
  return static_cast<std::size_t>(it - hist.counts.begin());
}

}  // namespace gnmax
}  // namespace dpprompt

#include "dpprompt/mia.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "dpprompt/errors.hpp"
#include "dpprompt/rng.hpp"

namespace dpprompt::mia {

std::vector<double> score_candidates(const Backend& backend, const PromptSpec& spec,
                                     std::span<const Demonstration> candidates) {
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) {
    const ProbVector probs = backend.classify(spec, c.text);
    const auto label = static_cast<std::size_t>(c.label.index);
    if (label >= probs.size()) throw DomainError("candidate label outside the task");
    scores.push_back(probs.is_other() ? 0.0 : probs[label]);
  }
  return scores;
}

RocCurve roc_and_auc(const Trial& trial) {
  if (trial.member_scores.empty() || trial.nonmember_scores.empty()) {
    throw DomainError("ROC needs at least one member and one non-member score");
  }
  struct Scored {
    double score;
    bool member;
  };
  std::vector<Scored> all;
  all.reserve(trial.member_scores.size() + trial.nonmember_scores.size());
  for (double s : trial.member_scores) all.push_back({s, true});
  for (double s : trial.nonmember_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  const double n_pos = static_cast<double>(trial.member_scores.size());
  const double n_neg = static_cast<double>(trial.nonmember_scores.size());
  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) {
      (all[j].member ? tp : fp) += 1;
      ++j;
    }
    const RocPoint next{static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos};
    const RocPoint& prev = curve.points.back();
    area += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) * 0.5;
    curve.points.push_back(next);
    i = j;
  }
  curve.auc = area;
  return curve;
}

double pairwise_auc(const Trial& trial) {
  double wins = 0.0;
  for (double m : trial.member_scores) {
    for (double n : trial.nonmember_scores) {
      if (m > n) {
        wins += 1.0;
      } else if (m == n) {
        wins += 0.5;
      }
    }
  }
  return wins / (static_cast<double>(trial.member_scores.size()) *
                 static_cast<double>(trial.nonmember_scores.size()));
}

double tpr_at(const RocCurve& curve, double fpr) {
  double best = 0.0;
  const auto& pts = curve.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].fpr <= fpr) best = std::max(best, pts[i].tpr);
    if (i + 1 < pts.size() && pts[i].fpr < fpr && fpr < pts[i + 1].fpr) {
      const double t = (fpr - pts[i].fpr) / (pts[i + 1].fpr - pts[i].fpr);
      best = std::max(best, pts[i].tpr + t * (pts[i + 1].tpr - pts[i].tpr));
    }
  }
  return best;
}

std::vector<double> default_fpr_grid() {
  std::vector<double> grid(51);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i) / 50.0;
  return grid;
}

namespace {

struct TrialOutput {
  RocCurve curve;
};

TrialOutput run_trial(const BackendFactory& factory, const LabeledDataset& data, const AttackConfig& cfg,
                      std::size_t trial_index) {
  Rng rng(cfg.seed, 0x6d6961ULL + trial_index);
  // Partial Fisher-Yates: the first 1 + n_nonmembers slots are a uniform
  // sample without replacement; slot 0 is the member.
  std::vector<std::size_t> idx(data.records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t take = 1 + cfg.n_nonmembers;
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }

  PromptSpec spec;
  spec.instruction = cfg.instruction;
  spec.demonstrations.push_back(data.records[idx[0]]);

  std::vector<Demonstration> candidates;
  candidates.reserve(take);
  for (std::size_t i = 0; i < take; ++i) candidates.push_back(data.records[idx[i]]);

  const auto backend = factory(trial_index);
  const auto scores = score_candidates(*backend, spec, candidates);
  Trial trial;
  trial.member_scores.assign(scores.begin(), scores.begin() + 1);
  trial.nonmember_scores.assign(scores.begin() + 1, scores.end());
  return {roc_and_auc(trial)};
}

}  // namespace

AttackResult run_attack(const BackendFactory& backend_factory, const LabeledDataset& data,
                        const AttackConfig& cfg) {
  if (cfg.n_trials == 0) throw DomainError("attack needs at least one trial");
  if (cfg.n_nonmembers == 0) throw DomainError("attack needs at least one non-member");
  if (data.records.size() < 1 + cfg.n_nonmembers) {
    throw InsufficientDataError("membership inference trial", 1 + cfg.n_nonmembers, data.records.size());
  }

  AttackResult result;
  result.trial_curves.resize(cfg.n_trials);
  const std::size_t workers = std::max<std::size_t>(1, cfg.workers);
  for (std::size_t base = 0; base < cfg.n_trials; base += workers) {
    const std::size_t end = std::min(cfg.n_trials, base + workers);
    std::vector<std::future<TrialOutput>> pending;
    for (std::size_t t = base; t < end; ++t) {
      pending.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                   [&, t] { return run_trial(backend_factory, data, cfg, t); }));
    }
    for (std::size_t t = base; t < end; ++t) result.trial_curves[t] = pending[t - base].get().curve;
  }

  for (const auto& c : result.trial_curves) result.trial_aucs.push_back(c.auc);
  const double n = static_cast<double>(cfg.n_trials);
  result.mean_auc = std::accumulate(result.trial_aucs.begin(), result.trial_aucs.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : result.trial_aucs) ss += (a - result.mean_auc) * (a - result.mean_auc);
  result.std_auc = cfg.n_trials > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;

  // Vertical average on the FPR grid. The leading (0,0) keeps the curve
  // anchored at the origin; the grid point at FPR 0 carries the average
  // height of every trial's initial vertical jump.
  result.mean_curve.points.push_back({0.0, 0.0});
  for (double f : default_fpr_grid()) {
    double sum = 0.0;
    for (const auto& c : result.trial_curves) sum += tpr_at(c, f);
    result.mean_curve.points.push_back({f, sum / n});
  }
  double area = 0.0;
  for (std::size_t i = 1; i < result.mean_curve.points.size(); ++i) {
    const auto& a = result.mean_curve.points[i - 1];
    const auto& b = result.mean_curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  result.mean_curve.auc = area;
  return result;
}

}  // namespace dpprompt::mia

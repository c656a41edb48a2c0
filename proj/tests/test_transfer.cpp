#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "dpprompt/audit.hpp"
#include "dpprompt/errors.hpp"
#include "dpprompt/transfer.hpp"

using namespace dpprompt;

namespace {

const Task kTask({"world", "sports", "business", "science"});

struct World {
  LabeledDataset priv;
  std::vector<std::string> pub;
  LabeledDataset test;
  std::unordered_map<std::string, int> truth;
};

World make_world(std::size_t n_priv, std::size_t n_pub, std::size_t n_test, const Task& task = kTask) {
  World w;
  w.priv.task = w.test.task = task;
  const auto c = task.size();
  for (std::size_t i = 0; i < n_priv; ++i) {
    w.priv.records.push_back({"priv " + std::to_string(i), task[i % c]});
    w.truth[w.priv.records.back().text] = static_cast<int>(i % c);
  }
  for (std::size_t i = 0; i < n_pub; ++i) {
    w.pub.push_back("pub " + std::to_string(i));
    w.truth[w.pub.back()] = static_cast<int>((i * 7) % c);
  }
  for (std::size_t i = 0; i < n_test; ++i) {
    w.test.records.push_back({"test " + std::to_string(i), task[(i * 3) % c]});
    w.truth[w.test.records.back().text] = static_cast<int>((i * 3) % c);
  }
  return w;
}

TeacherFlock flock_of(const World& w, std::size_t n, std::uint64_t seed = 1) {
  return TeacherFlock(partition_disjoint(w.priv, n, 1, seed));
}

// Fails exactly once, at call number `fail_at`.
class FlakyBackend final : public Backend {
 public:
  FlakyBackend(const Backend& inner, int fail_at) : inner_(inner), fail_at_(fail_at) {}
  BackendKind kind() const noexcept override { return inner_.kind(); }
  const Task& task() const noexcept override { return inner_.task(); }
  bool supports_logprobs() const noexcept override { return inner_.supports_logprobs(); }
  ProbVector classify(const PromptSpec& spec, std::string_view q) const override {
    const int n = ++calls_;
    if (n == fail_at_ || fail_at_ < 0) throw TransportError("injected failure");
    return inner_.classify(spec, q);
  }
  int calls() const { return calls_; }

 private:
  const Backend& inner_;
  int fail_at_;
  mutable std::atomic<int> calls_{0};
};

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST(Calibrate, HandArithmetic) {
  const auto p = ProbVector::from_weights({0.6, 0.4});
  const auto cf = ProbVector::from_weights({0.8, 0.2});
  const auto out = transfer::calibrate(p, cf);
  EXPECT_NEAR(out[0], 0.75 / 2.75, 1e-12);
  EXPECT_NEAR(out[1], 2.0 / 2.75, 1e-12);
}

TEST(Calibrate, UniformIsIdentityAndSimplexPreserved) {
  const auto p = ProbVector::from_weights({0.1, 0.2, 0.3, 0.4});
  const auto out = transfer::calibrate(p, ProbVector::from_weights({1, 1, 1, 1}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], p[i], 1e-15);
  const auto skew = transfer::calibrate(p, ProbVector::from_weights({0.7, 0.1, 0.1, 0.1}));
  double s = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GE(skew[i], 0.0);
    s += skew[i];
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Calibrate, ZeroContentFreeEntryIsFloored) {
  const auto p = ProbVector::from_weights({0.5, 0.5});
  const auto out = transfer::calibrate(p, ProbVector::one_hot(2, 0));
  EXPECT_GT(out[1], 0.999);
}

TEST(CollectVotes, PerfectTeachersAgree) {
  const auto w = make_world(200, 20, 0);
  MockParams p;
  p.teacher_accuracy = 1.0;
  MockBackend m(kTask, p, w.truth);
  const auto flock = flock_of(w, 200);
  for (const auto& q : w.pub) {
    const auto h = transfer::collect_votes(m, flock, q);
    EXPECT_EQ(h.n_teachers, 200);
    EXPECT_EQ(h.counts[static_cast<std::size_t>(w.truth.at(q))], 200);
  }
}

TEST(CollectVotes, CoinFlipTeachersSplitEvenly) {
  Task two({"no", "yes"});
  const auto w = make_world(200, 60, 0, two);
  MockParams p;
  p.teacher_accuracy = 0.5;
  p.consensus = 0.0;  // every teacher decides independently
  MockBackend m(two, p, w.truth);
  const auto flock = flock_of(w, 200);
  double mean = 0.0;
  for (const auto& q : w.pub) mean += static_cast<double>(transfer::collect_votes(m, flock, q).counts[0]);
  mean /= static_cast<double>(w.pub.size());
  // Mean of 60 Binomial(200, 1/2) counts: sd 0.91.
  EXPECT_NEAR(mean, 100.0, 4.0);
}

TEST(CollectVotes, IdentityCalibrationLeavesVotes) {
  const auto w = make_world(50, 10, 0);
  MockBackend m(kTask, MockParams{}, w.truth);
  const auto flock = flock_of(w, 50);
  std::vector<std::optional<ProbVector>> uniform(50, ProbVector::from_weights({1, 1, 1, 1}));
  for (const auto& q : w.pub) EXPECT_EQ(transfer::collect_votes(m, flock, q), transfer::collect_votes(m, flock, q, uniform));
}

TEST(CollectVotes, TransportFailureRetriesWholeQuery) {
  const auto w = make_world(40, 1, 0);
  MockBackend m(kTask, MockParams{}, w.truth);
  const auto flock = flock_of(w, 40);
  const auto clean = transfer::collect_votes(m, flock, w.pub[0]);
  FlakyBackend once(m, 17);
  EXPECT_EQ(transfer::collect_votes(once, flock, w.pub[0]), clean);
  EXPECT_EQ(once.calls(), 17 + 40);
  FlakyBackend always(m, -1);
  EXPECT_THROW(transfer::collect_votes(always, flock, w.pub[0]), TransportError);
  EXPECT_EQ(always.calls(), 3);
}

TEST(Transfer, ZeroBudgetIssuesNoQueries) {
  const auto w = make_world(200, 50, 0);
  MockBackend m(kTask, MockParams{}, w.truth);
  FlakyBackend counting(m, 0);
  TransferConfig cfg;
  cfg.budget_epsilon = 0.0;
  const auto r = transfer::run_knowledge_transfer(counting, flock_of(w, 200), w.pub, cfg);
  EXPECT_EQ(counting.calls(), 0);
  EXPECT_TRUE(r.labeled.empty());
  EXPECT_TRUE(r.ledger.entries().empty());
  EXPECT_EQ(r.status, TransferStatus::kBudgetExhausted);
  EXPECT_EQ(r.report.epsilon, 0.0);
}

TEST(Transfer, AnswerCountMatchesThresholdPrediction) {
  const auto w = make_world(200, 500, 0);
  MockBackend m(kTask, MockParams{}, w.truth);
  TransferConfig cfg;  // default GNMax: T=180, sigma1=1, sigma2=20
  cfg.budget_epsilon = std::numeric_limits<double>::infinity();
  const auto r = transfer::run_knowledge_transfer(m, flock_of(w, 200), w.pub, cfg);
  ASSERT_EQ(r.ledger.entries().size(), 500u);
  double expected = 0.0, var = 0.0;
  for (const auto& e : r.ledger.entries()) {
    const double p = normal_cdf((static_cast<double>(e.histogram.max_count()) - cfg.gnmax.threshold) / cfg.gnmax.sigma1);
    expected += p;
    var += p * (1 - p);
  }
  EXPECT_NEAR(static_cast<double>(r.labeled.size()), expected, 4 * std::sqrt(var) + 1.0);
  EXPECT_GT(r.labeled.size(), 100u);
  EXPECT_TRUE(std::isfinite(r.report.epsilon));
}

TEST(Transfer, NeverExceedsBudget) {
  const auto w = make_world(200, 300, 0);
  MockBackend m(kTask, MockParams{}, w.truth);
  const auto flock = flock_of(w, 200);
  for (double budget : {0.05, 0.3, 0.6, 2.0}) {
    TransferConfig cfg;
    cfg.gnmax = GNMaxConfig{180.0, 100.0, 20.0, 2};
    cfg.budget_epsilon = budget;
    const auto r = transfer::run_knowledge_transfer(m, flock, w.pub, cfg);
    EXPECT_LE(r.report.epsilon, budget);
    if (r.status == TransferStatus::kBudgetExhausted) {
      EXPECT_LT(r.ledger.entries().size(), w.pub.size());
    }
    double prev = 0.0;
    for (const auto& e : r.ledger.entries()) {
      EXPECT_GE(e.cumulative_epsilon, prev);
      prev = e.cumulative_epsilon;
    }
  }
}

TEST(Transfer, QueryLimitAndDeterminism) {
  const auto w = make_world(200, 100, 0);
  MockBackend m(kTask, MockParams{}, w.truth);
  TransferConfig cfg;
  cfg.gnmax = GNMaxConfig{180.0, 150.0, 20.0, 2};
  cfg.max_public_queries = 40;
  const auto a = transfer::run_knowledge_transfer(m, flock_of(w, 200), w.pub, cfg);
  const auto b = transfer::run_knowledge_transfer(m, flock_of(w, 200), w.pub, cfg);
  EXPECT_EQ(a.status, TransferStatus::kQueryLimit);
  EXPECT_EQ(a.ledger.entries().size(), 40u);
  EXPECT_EQ(a.labeled, b.labeled);
  EXPECT_EQ(a.ledger.to_jsonl(), b.ledger.to_jsonl());
}

TEST(Transfer, CalibrationSkippedForTopTokenBackend) {
  const auto w = make_world(20, 5, 0);
  MockParams p;
  p.top_token_only = true;
  MockBackend m(kTask, p, w.truth);
  TransferConfig cfg;
  cfg.n_teachers = 20;
  cfg.calibrate = true;
  cfg.budget_epsilon = std::numeric_limits<double>::infinity();
  const auto r = transfer::run_knowledge_transfer(m, flock_of(w, 20), w.pub, cfg);
  EXPECT_TRUE(r.calibration_skipped);
}

TEST(Transfer, ConfigValidation) {
  TransferConfig cfg;
  cfg.validation_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.validation_fraction = 0.5;
  cfg.max_public_queries = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Student, SingleCandidateSelected) {
  const auto w = make_world(0, 0, 0);
  MockBackend m(kTask, MockParams{}, w.truth);
  std::vector<LabeledPublicExample> labeled = {{"a", kTask[0]}, {"b", kTask[1]}, {"c", kTask[2]}};
  TransferConfig cfg;
  cfg.candidate_pool_size = 1;
  const auto s = transfer::select_student(labeled, m, cfg);
  EXPECT_EQ(s.candidate_index, 0u);
  EXPECT_EQ(s.candidate_accuracies.size(), 1u);
  EXPECT_EQ(s.prompt.demonstrations.size(), 1u);
}

TEST(Student, IdenticalCandidatesTieToLowestIndex) {
  MockBackend m(kTask, MockParams{});
  std::vector<LabeledPublicExample> labeled(30, LabeledPublicExample{"same", kTask[2]});
  labeled.push_back({"val", kTask[0]});
  TransferConfig cfg;
  cfg.candidate_pool_size = 5;
  const auto s = transfer::select_student(labeled, m, cfg);
  for (double a : s.candidate_accuracies) EXPECT_EQ(a, s.candidate_accuracies[0]);
  EXPECT_EQ(s.candidate_index, 0u);
}

TEST(Student, CorrectlyLabeledDemonstrationWins) {
  const auto w = make_world(0, 120, 0);
  MockParams p;
  p.mislabel_penalty = 0.8;
  MockBackend m(kTask, p, w.truth);
  std::vector<LabeledPublicExample> labeled;
  for (std::size_t i = 0; i < w.pub.size(); ++i) {
    const auto y = static_cast<std::size_t>(w.truth.at(w.pub[i]));
    labeled.push_back({w.pub[i], kTask[i % 2 == 0 ? y : (y + 1) % 4]});
  }
  TransferConfig cfg;
  const auto s = transfer::select_student(labeled, m, cfg);
  const auto& demo = s.prompt.demonstrations.at(0);
  EXPECT_EQ(demo.label.index, w.truth.at(demo.text));
  for (double a : s.candidate_accuracies) EXPECT_LE(a, s.validation_accuracy);
}

TEST(Student, TooFewLabeledIsSizedError) {
  MockBackend m(kTask, MockParams{});
  std::vector<LabeledPublicExample> labeled(20, LabeledPublicExample{"x", kTask[0]});
  TransferConfig cfg;
  try {
    transfer::select_student(labeled, m, cfg);
    FAIL();
  } catch (const InsufficientDataError& e) {
    EXPECT_EQ(e.required(), 21u);
    EXPECT_EQ(e.shortfall(), 1u);
  }
}

TEST(Evaluate, PerfectAdversarialAndNoisy) {
  const auto w = make_world(0, 0, 300);
  MockParams perfect;
  perfect.teacher_accuracy = 1.0;
  EXPECT_EQ(transfer::evaluate_prompt(MockBackend(kTask, perfect, w.truth), PromptSpec{}, w.test), 1.0);
  MockParams wrong;
  wrong.teacher_accuracy = 0.0;
  EXPECT_EQ(transfer::evaluate_prompt(MockBackend(kTask, wrong, w.truth), PromptSpec{}, w.test), 0.0);
  const double acc = transfer::evaluate_prompt(MockBackend(kTask, MockParams{}, w.truth), PromptSpec{}, w.test);
  EXPECT_NEAR(acc, 0.9, 0.06);
  EXPECT_THROW(transfer::evaluate_prompt(MockBackend(kTask, MockParams{}), PromptSpec{}, LabeledDataset{}),
               DomainError);
}

TEST(Audit, StudentPhaseNeverTouchesPrivateData) {
  audit::reset();
  const auto w = make_world(200, 300, 100);
  MockBackend m(kTask, MockParams{}, w.truth);
  TransferResult r;
  {
    audit::PhaseScope phase("transfer");
    const PrivateDataset priv(w.priv);
    const TeacherFlock flock(partition_disjoint(priv.access(), 200, 1, 1));
    TransferConfig cfg;
    cfg.gnmax = GNMaxConfig{180.0, 150.0, 20.0, 2};
    r = transfer::run_knowledge_transfer(m, flock, w.pub, cfg);
  }
  {
    audit::PhaseScope phase("student");
    TransferConfig cfg;
    const auto s = transfer::select_student(r.labeled, m, cfg);
    transfer::evaluate_prompt(m, s.prompt, w.test);
  }
  const auto counts = audit::private_access_counts();
  EXPECT_GT(counts.at("transfer"), 0u);
  EXPECT_EQ(counts.count("student"), 0u);
}

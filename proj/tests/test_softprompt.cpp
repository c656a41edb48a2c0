#include <gtest/gtest.h>

#include <cmath>

#include "dpprompt/errors.hpp"
#include "dpprompt/softprompt.hpp"

using namespace dpprompt;

namespace {

ToyShape small_shape() {
  ToyShape s;
  s.vocab = 64;
  s.embed = 4;
  s.prompt_len = 3;
  s.hidden = 8;
  s.classes = 3;
  s.input_len = 5;
  return s;
}

TokenExample random_example(Rng& rng, const ToyShape& s) {
  TokenExample ex;
  for (std::size_t i = 0; i < s.input_len; ++i) ex.tokens.push_back(rng.uniform_index(s.vocab));
  ex.label = rng.uniform_index(s.classes);
  return ex;
}

SoftPrompt random_prompt(Rng& rng, std::size_t s, std::size_t e, double sd) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e));
  for (Eigen::Index j = 0; j < v.cols(); ++j)
    for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, j) = rng.normal(0.0, sd);
  return SoftPrompt(v);
}

// e = s = V = 1, two hidden units, two classes; the loss for class 0 is
// log(1 + exp(-(tanh(p) - 2 tanh(p - 3)))), minimized at an interior p.
FrozenToyLM minimum_model() {
  Eigen::MatrixXd emb = Eigen::MatrixXd::Zero(1, 1);
  Eigen::MatrixXd w1(2, 2);
  w1 << 1, 1, 0, 0;
  Eigen::VectorXd b1(2);
  b1 << 0, -3;
  Eigen::MatrixXd w2(2, 2);
  w2 << 1, 0, -2, 0;
  return FrozenToyLM(emb, w1, b1, w2, Eigen::VectorXd::Zero(2));
}

}  // namespace

TEST(ToyLM, ZeroInputsGiveHeadOfTanhBias) {
  const auto s = small_shape();
  Rng rng(3);
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Random(2 * 4, 8);
  Eigen::VectorXd b1 = Eigen::VectorXd::Random(8);
  Eigen::MatrixXd w2 = Eigen::MatrixXd::Random(8, 3);
  Eigen::VectorXd b2 = Eigen::VectorXd::Random(3);
  FrozenToyLM m(Eigen::MatrixXd::Zero(s.vocab, 4), w1, b1, w2, b2);
  const std::vector<std::size_t> toks = {1, 2, 3};
  const Eigen::VectorXd out = m.forward(SoftPrompt::zeros(3, 4), toks);
  const Eigen::VectorXd want = w2.transpose() * b1.array().tanh().matrix() + b2;
  EXPECT_LT((out - want).norm(), 1e-14);
  (void)rng;
}

TEST(ToyLM, PromptRowOrderDoesNotMatter) {
  const auto s = small_shape();
  const auto m = FrozenToyLM::from_seed(s, 11);
  Rng rng(5);
  const auto p = random_prompt(rng, 3, 4, 0.5);
  Eigen::MatrixXd swapped = p.values();
  swapped.row(0).swap(swapped.row(2));
  const auto ex = random_example(rng, s);
  EXPECT_LT((m.forward(p, ex.tokens) - m.forward(SoftPrompt(swapped), ex.tokens)).norm(), 1e-12);
}

TEST(ToyLM, GradientMatchesCentralDifferences) {
  const auto s = small_shape();
  const auto m = FrozenToyLM::from_seed(s, 2);
  Rng rng(9);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_prompt(rng, s.prompt_len, s.embed, 0.3);
    const auto ex = random_example(rng, s);
    Eigen::MatrixXd g;
    m.loss(p, ex, &g);
    Eigen::MatrixXd fd(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        SoftPrompt plus = p, minus = p;
        plus.values()(i, j) += h;
        minus.values()(i, j) -= h;
        fd(i, j) = (m.loss(plus, ex) - m.loss(minus, ex)) / (2 * h);
      }
    }
    EXPECT_LT((g - fd).norm() / std::max(g.norm(), 1e-8), 1e-5) << "trial " << trial;
    for (Eigen::Index i = 1; i < g.rows(); ++i) EXPECT_EQ(g.row(i), g.row(0));
  }
}

TEST(ToyLM, GradientVanishesAtMinimum) {
  const auto m = minimum_model();
  const TokenExample ex{{0}, 0};
  auto f = [&](double p) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = p;
    return m.loss(SoftPrompt(v), ex);
  };
  double a = -2.0, b = 4.0;
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  while (b - a > 1e-11) {
    if (f(c) < f(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - r * (b - a);
    d = a + r * (b - a);
  }
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = 0.5 * (a + b);
  EXPECT_GT(v(0, 0), 0.5);
  EXPECT_LT(v(0, 0), 2.5);
  EXPECT_LT(per_example_grad(m, SoftPrompt(v), ex).norm(), 1e-6);
}

TEST(ToyLM, OutOfVocabularyAndShapeErrors) {
  const auto s = small_shape();
  const auto m = FrozenToyLM::from_seed(s, 1);
  const std::vector<std::size_t> bad = {s.vocab};
  EXPECT_THROW(m.forward(SoftPrompt::zeros(3, 4), bad), DomainError);
  EXPECT_THROW(m.forward(SoftPrompt::zeros(3, 5), std::vector<std::size_t>{0}), DomainError);
  EXPECT_THROW(m.loss(SoftPrompt::zeros(3, 4), TokenExample{{0}, 3}), DomainError);
  EXPECT_THROW(FrozenToyLM(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Zero(2),
                           Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)),
               DomainError);
}

TEST(ToyLM, DigestIsStableAndSensitive) {
  const auto s = small_shape();
  EXPECT_EQ(FrozenToyLM::from_seed(s, 4).digest(), FrozenToyLM::from_seed(s, 4).digest());
  EXPECT_NE(FrozenToyLM::from_seed(s, 4).digest(), FrozenToyLM::from_seed(s, 5).digest());
  EXPECT_EQ(FrozenToyLM::from_seed(s, 4).digest().size(), 64u);
}

TEST(Clip, Examples) {
  Eigen::MatrixXd g(1, 2);
  g << 3, 4;
  EXPECT_LT((clip(g, 1.0) - g / 5.0).norm(), 1e-15);
  EXPECT_EQ(clip(g, 10.0), g);
  EXPECT_EQ(clip(g, std::numeric_limits<double>::infinity()), g);
  EXPECT_EQ(clip(Eigen::MatrixXd::Zero(2, 2), 0.1), Eigen::MatrixXd::Zero(2, 2));
  EXPECT_THROW(clip(g, 0.0), DomainError);
  EXPECT_THROW(clip(g, -1.0), DomainError);
}

TEST(Clip, IdempotentAndBounded) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    Eigen::MatrixXd g(3, 4);
    for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal(0.0, 2.0);
    const double c = 0.1 + rng.uniform() * 5;
    const auto once = clip(g, c);
    EXPECT_LE(once.norm(), c * (1 + 1e-12));
    EXPECT_LT((clip(once, c) - once).norm(), 1e-14 * c);
  }
}

TEST(Dpsgd, EmptyBatchLeavesPromptAlone) {
  DpsgdConfig cfg;
  Rng noise(1);
  const auto p = SoftPrompt::random(3, 4, 2);
  EXPECT_EQ(noisy_step(p, {}, cfg, 0, noise), p);
  EXPECT_EQ(noise.counter(), 0u);
}

TEST(Dpsgd, NoiseHasStatedCovariance) {
  DpsgdConfig cfg;
  cfg.noise_scale = 1.3;
  cfg.max_grad_norm = 0.7;
  cfg.learning_rate = 1.0;
  Rng noise(12, 99);
  const std::vector<Eigen::MatrixXd> zero = {Eigen::MatrixXd::Zero(2, 2)};
  const auto p = SoftPrompt::zeros(2, 2);
  const int n = 10000;
  Eigen::Matrix4d acc = Eigen::Matrix4d::Zero();
  for (int t = 0; t < n; ++t) {
    const Eigen::MatrixXd v = -noisy_step(p, zero, cfg, t, noise).values();
    const Eigen::Vector4d x = Eigen::Map<const Eigen::Vector4d>(v.data());
    acc += x * x.transpose();
  }
  acc /= n;
  const double var = std::pow(cfg.noise_scale * cfg.max_grad_norm, 2);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(acc(i, i) / var, 1.0, 0.05);
    for (int j = 0; j < i; ++j) EXPECT_LT(std::abs(acc(i, j)) / var, 0.05);
  }
}

TEST(Dpsgd, NoiselessUnclippedIsPlainSgd) {
  const auto s = small_shape();
  const auto task = make_toy_task(s, 3, 200, 10);
  DpsgdConfig cfg;
  cfg.noise_scale = 0.0;
  cfg.max_grad_norm = std::numeric_limits<double>::infinity();
  cfg.learning_rate = 2.0;
  cfg.sampling_rate = 0.2;
  cfg.iterations = 25;
  cfg.prompt_len = s.prompt_len;
  cfg.seed = 17;
  const auto got = train(task.model, task.train, cfg);

  // Independent loop: same Poisson sampler stream, mean gradient step.
  SoftPrompt p = SoftPrompt::random(cfg.prompt_len, s.embed, cfg.seed, cfg.init_stddev);
  Rng sampler(cfg.seed, dpsgd_sampling_stream());
  for (std::int64_t t = 0; t < cfg.iterations; ++t) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(p.values().rows(), p.values().cols());
    std::size_t n = 0;
    for (const auto& ex : task.train) {
      if (sampler.uniform() >= cfg.sampling_rate) continue;
      Eigen::MatrixXd g;
      task.model.loss(p, ex, &g);
      sum += g;
      ++n;
    }
    if (n == 0) continue;
    p = SoftPrompt(p.values() - cfg.learning_rate * (sum / static_cast<double>(n)));
  }
  EXPECT_TRUE(got.prompt == p);
  EXPECT_TRUE(std::isinf(got.report.epsilon));
}

TEST(Dpsgd, ZeroIterationsReturnsInit) {
  const auto s = small_shape();
  const auto task = make_toy_task(s, 3, 50, 10);
  DpsgdConfig cfg;
  cfg.iterations = 0;
  cfg.prompt_len = s.prompt_len;
  const auto init = SoftPrompt::random(s.prompt_len, s.embed, 44);
  const auto r = train(task.model, task.train, cfg, init);
  EXPECT_TRUE(r.prompt == init);
  EXPECT_EQ(r.report.epsilon, 0.0);
  EXPECT_TRUE(r.log.empty());
}

TEST(Dpsgd, DeterministicAndModelFrozen) {
  const auto s = small_shape();
  const auto task = make_toy_task(s, 6, 300, 10);
  const auto before = task.model.digest();
  DpsgdConfig cfg;
  cfg.iterations = 40;
  cfg.prompt_len = s.prompt_len;
  cfg.seed = 3;
  const auto a = train(task.model, task.train, cfg);
  const auto b = train(task.model, task.train, cfg);
  EXPECT_TRUE(a.prompt == b.prompt);
  EXPECT_EQ(a.report.epsilon, b.report.epsilon);
  EXPECT_EQ(task.model.digest(), before);
  ASSERT_EQ(a.log.size(), 40u);
  for (std::size_t i = 1; i < a.log.size(); ++i) EXPECT_GT(a.log[i].eps_so_far, a.log[i - 1].eps_so_far);
  EXPECT_NEAR(a.log.back().eps_so_far, a.report.epsilon, 1e-12 * a.report.epsilon);
}

TEST(Dpsgd, SamplingIndependentOfNoiseScale) {
  const auto s = small_shape();
  const auto task = make_toy_task(s, 6, 100, 10);
  DpsgdConfig cfg;
  cfg.iterations = 30;
  cfg.prompt_len = s.prompt_len;
  cfg.sampling_rate = 0.02;
  const auto a = train(task.model, task.train, cfg);
  cfg.noise_scale = 3.0;
  const auto b = train(task.model, task.train, cfg);
  EXPECT_EQ(a.empty_batches, b.empty_batches);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(std::isnan(a.log[i].loss), std::isnan(b.log[i].loss));
}

TEST(Dpsgd, ConfigValidation) {
  DpsgdConfig cfg;
  cfg.sampling_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = DpsgdConfig{};
  cfg.max_grad_norm = std::numeric_limits<double>::infinity();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.noise_scale = 0.0;
  EXPECT_NO_THROW(cfg.validate());
  cfg = DpsgdConfig{};
  cfg.schedule = {1.0, 0.5};
  EXPECT_EQ(cfg.rate_at(0), 1.0);
  EXPECT_EQ(cfg.rate_at(7), 0.5);
}

TEST(ToyTask, LabelsAreLearnable) {
  const auto task = make_toy_task(ToyShape{}, 1, 2000, 500);
  EXPECT_EQ(task.train.size(), 2000u);
  std::vector<std::size_t> counts(4, 0);
  for (const auto& ex : task.train) ++counts.at(ex.label);
  for (auto c : counts) EXPECT_GT(c, 200u);
  DpsgdConfig cfg;
  cfg.noise_scale = 0.0;
  cfg.max_grad_norm = std::numeric_limits<double>::infinity();
  cfg.learning_rate = 10.0;
  cfg.iterations = 150;
  const auto r = train(task.model, task.train, cfg);
  EXPECT_GT(accuracy(task.model, r.prompt, task.test), 0.9);
  EXPECT_LT(accuracy(task.model, SoftPrompt::zeros(10, 16), task.test), 0.8);
}

TEST(Tokenize, HashesWordsIntoVocabulary) {
  const auto t = tokenize("the cat  the", 512);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0], t[2]);
  for (auto x : t) EXPECT_LT(x, 512u);
}

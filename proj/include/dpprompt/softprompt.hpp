#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpprompt/accountant.hpp"
#include "dpprompt/rng.hpp"

namespace dpprompt {

struct ToyShape {
  std::size_t vocab = 512;
  std::size_t embed = 16;
  std::size_t prompt_len = 10;
  std::size_t hidden = 32;
  std::size_t classes = 4;
  // Token count of the synthetic inputs; only used to scale the seeded weights.
  std::size_t input_len = 8;

  void validate() const;
};

// s x e matrix of trainable input embeddings.
class SoftPrompt {
 public:
  SoftPrompt() = default;
  explicit SoftPrompt(Eigen::MatrixXd values);

  static SoftPrompt zeros(std::size_t s, std::size_t e);
  // Entries i.i.d. N(0, stddev^2).
  static SoftPrompt random(std::size_t s, std::size_t e, std::uint64_t seed, double stddev = 0.02);

  std::size_t length() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t embed() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  Eigen::MatrixXd& values() noexcept { return values_; }
  Eigen::VectorXd mean_row() const;

  friend bool operator==(const SoftPrompt& a, const SoftPrompt& b) { return a.values_ == b.values_; }

 private:
  Eigen::MatrixXd values_;
};

struct TokenExample {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
};

// Frozen classifier: logits = W2^T tanh(W1^T [mean(prompt); mean(embed(x))] + b1) + b2.
// W1 is (2e) x h, W2 is h x C. Weights are fixed at construction.
class FrozenToyLM {
 public:
  FrozenToyLM(Eigen::MatrixXd embedding, Eigen::MatrixXd w1, Eigen::VectorXd b1, Eigen::MatrixXd w2,
              Eigen::VectorXd b2);

  // Seeded model whose hidden units split into an input-reading half and a
  // prompt-reading half, with an output bias the prompt has to correct.
  static FrozenToyLM from_seed(const ToyShape& shape, std::uint64_t seed);

  std::size_t vocab() const noexcept { return static_cast<std::size_t>(embedding_.rows()); }
  std::size_t embed() const noexcept { return static_cast<std::size_t>(embedding_.cols()); }
  std::size_t hidden() const noexcept { return static_cast<std::size_t>(w1_.cols()); }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(w2_.cols()); }

  const Eigen::MatrixXd& embedding() const noexcept { return embedding_; }
  const Eigen::MatrixXd& w1() const noexcept { return w1_; }
  const Eigen::VectorXd& b1() const noexcept { return b1_; }
  const Eigen::MatrixXd& w2() const noexcept { return w2_; }
  const Eigen::VectorXd& b2() const noexcept { return b2_; }

  Eigen::VectorXd forward(const SoftPrompt& prompt, std::span<const std::size_t> tokens) const;

  // Cross-entropy of one example; fills the gradient w.r.t. every prompt
  // entry when `grad` is not null.
  double loss(const SoftPrompt& prompt, const TokenExample& example, Eigen::MatrixXd* grad = nullptr) const;

  // SHA-256 over shapes and raw weight bytes.
  std::string digest() const;

 private:
  Eigen::VectorXd input_mean(std::span<const std::size_t> tokens) const;

  Eigen::MatrixXd embedding_;
  Eigen::MatrixXd w1_;
  Eigen::VectorXd b1_;
  Eigen::MatrixXd w2_;
  Eigen::VectorXd b2_;
};

// Whitespace-split words hashed into [0, vocab).
std::vector<std::size_t> tokenize(std::string_view text, std::size_t vocab);

Eigen::MatrixXd per_example_grad(const FrozenToyLM& model, const SoftPrompt& prompt, const TokenExample& example);

// grad / max(1, ||grad||_2 / c). c = +inf leaves grad untouched.
Eigen::MatrixXd clip(const Eigen::MatrixXd& grad, double c);

struct DpsgdConfig {
  double learning_rate = 1.0;
  // Optional per-step rates; step t uses schedule[min(t, size - 1)].
  std::vector<double> schedule;
  double noise_scale = 1.0;
  double sampling_rate = 0.125;
  double max_grad_norm = 0.1;
  std::int64_t iterations = 1000;
  double delta = 1e-5;
  std::uint64_t seed = 0;
  // Divide by the expected batch size q N instead of the realized |B_t|.
  bool normalize_by_expected_batch = false;
  std::size_t prompt_len = 10;
  double init_stddev = 0.02;
  OrderGrid grid = OrderGrid::default_grid();

  void validate() const;
  double rate_at(std::int64_t step) const;
};

// prompt - lr * (sum(clipped) + N(0, sigma^2 c^2 I)) / divisor, where divisor
// is |B_t| (or expected_batch when configured). An empty batch returns the
// prompt unchanged and draws no noise.
SoftPrompt noisy_step(const SoftPrompt& prompt, std::span<const Eigen::MatrixXd> clipped_grads,
                      const DpsgdConfig& cfg, std::int64_t step, Rng& noise_rng, double expected_batch = 0.0);

struct TrainLogRow {
  std::int64_t step = 0;
  // Mean unclipped loss over the sampled batch; NaN for an empty batch.
  double loss = 0.0;
  double eps_so_far = 0.0;
};

struct TrainResult {
  SoftPrompt prompt;
  PrivacyReport report;
  std::vector<TrainLogRow> log;
  std::int64_t empty_batches = 0;
};

// Poisson sampling and noise come from separate streams derived from
// cfg.seed, so the sampled batches do not depend on sigma.
TrainResult train(const FrozenToyLM& model, std::span<const TokenExample> data, const DpsgdConfig& cfg,
                  std::optional<SoftPrompt> init = std::nullopt);

std::uint64_t dpsgd_sampling_stream();
std::uint64_t dpsgd_noise_stream();

double accuracy(const FrozenToyLM& model, const SoftPrompt& prompt, std::span<const TokenExample> data);
double mean_loss(const FrozenToyLM& model, const SoftPrompt& prompt, std::span<const TokenExample> data);

}  // namespace dpprompt

namespace dpprompt {

// A learnable synthetic task over FrozenToyLM::from_seed(shape, seed): random
// token sequences labeled by the input-reading half of the network plus
// class-balancing offsets. Only examples with a label margin above `margin`
// are kept, so a prompt that cancels the output bias can classify them.
struct ToyTask {
  ToyShape shape;
  FrozenToyLM model;
  std::vector<TokenExample> train;
  std::vector<TokenExample> test;
};

ToyTask make_toy_task(const ToyShape& shape, std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                      double margin = 0.25);

}  // namespace dpprompt

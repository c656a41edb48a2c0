#include "dpprompt/softprompt.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dpprompt/errors.hpp"
#include "dpprompt/hash.hpp"

namespace dpprompt {

void ToyShape::validate() const {
  if (vocab == 0 || embed == 0 || prompt_len == 0 || classes < 2 || input_len == 0) {
    throw ConfigError("toy model dimensions must be positive with at least two classes");
  }
  if (hidden < 2 || hidden % 2 != 0) throw ConfigError("toy model hidden width must be even and at least 2");
}

SoftPrompt::SoftPrompt(Eigen::MatrixXd values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.cols() == 0) throw DomainError("soft prompt must be non-empty");
  if (!values_.allFinite()) throw DomainError("soft prompt entries must be finite");
}

SoftPrompt SoftPrompt::zeros(std::size_t s, std::size_t e) {
  return SoftPrompt(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e)));
}

SoftPrompt SoftPrompt::random(std::size_t s, std::size_t e, std::uint64_t seed, double stddev) {
  Rng rng(seed, 0x696e6974ULL);
  Eigen::MatrixXd v(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = rng.normal(0.0, stddev);
  }
  return SoftPrompt(std::move(v));
}

Eigen::VectorXd SoftPrompt::mean_row() const { return values_.colwise().mean().transpose(); }

FrozenToyLM::FrozenToyLM(Eigen::MatrixXd embedding, Eigen::MatrixXd w1, Eigen::VectorXd b1, Eigen::MatrixXd w2,
                         Eigen::VectorXd b2)
    : embedding_(std::move(embedding)), w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)),
      b2_(std::move(b2)) {
  const auto e = embedding_.cols();
  if (embedding_.rows() == 0 || e == 0) throw DomainError("embedding table must be non-empty");
  if (w1_.rows() != 2 * e) throw DomainError("W1 must have 2e rows");
  if (b1_.size() != w1_.cols()) throw DomainError("b1 must match the hidden width");
  if (w2_.rows() != w1_.cols()) throw DomainError("W2 must have h rows");
  if (b2_.size() != w2_.cols() || w2_.cols() < 2) throw DomainError("b2 must match the class count (>= 2)");
}

namespace {

struct Built {
  FrozenToyLM model;
  Eigen::VectorXd offsets;
};

// Scores of the input-reading half of the hidden layer, without output bias.
Eigen::VectorXd feature_scores(const FrozenToyLM& m, const Eigen::VectorXd& xbar) {
  const auto e = static_cast<Eigen::Index>(m.embed());
  const auto half = static_cast<Eigen::Index>(m.hidden() / 2);
  const Eigen::VectorXd z = m.w1().block(e, 0, e, half).transpose() * xbar + m.b1().head(half);
  return m.w2().topRows(half).transpose() * z.array().tanh().matrix();
}

Eigen::VectorXd mean_embedding(const Eigen::MatrixXd& table, std::span<const std::size_t> tokens) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(table.cols());
  for (auto t : tokens) acc += table.row(static_cast<Eigen::Index>(t)).transpose();
  return acc / static_cast<double>(tokens.size());
}

std::vector<std::size_t> random_tokens(Rng& rng, const ToyShape& shape) {
  std::vector<std::size_t> toks(shape.input_len);
  for (auto& t : toks) t = static_cast<std::size_t>(rng.uniform_index(shape.vocab));
  return toks;
}

Built build(const ToyShape& shape, std::uint64_t seed) {
  shape.validate();
  const auto V = static_cast<Eigen::Index>(shape.vocab);
  const auto e = static_cast<Eigen::Index>(shape.embed);
  const auto h = static_cast<Eigen::Index>(shape.hidden);
  const auto C = static_cast<Eigen::Index>(shape.classes);
  const auto half = h / 2;
  Rng rng(seed, 0x746f796c6dULL);

  Eigen::MatrixXd emb(V, e);
  for (Eigen::Index i = 0; i < V; ++i)
    for (Eigen::Index j = 0; j < e; ++j) emb(i, j) = rng.normal();

  // Rows [0, e) read the prompt mean, rows [e, 2e) the input mean. Hidden
  // units [0, half) mostly see the input, [half, h) mostly the prompt.
  const double se = std::sqrt(static_cast<double>(e));
  const double input_scale = std::sqrt(static_cast<double>(shape.input_len)) / se;
  const double prompt_scale = 2.0 / se;
  constexpr double kCross = 0.05;
  Eigen::MatrixXd w1(2 * e, h);
  for (Eigen::Index r = 0; r < 2 * e; ++r) {
    const bool prompt_row = r < e;
    for (Eigen::Index k = 0; k < h; ++k) {
      const bool feature_unit = k < half;
      double scale = kCross;
      if (prompt_row && !feature_unit) scale = prompt_scale;
      if (!prompt_row && feature_unit) scale = input_scale;
      w1(r, k) = rng.normal(0.0, scale);
    }
  }
  Eigen::VectorXd b1 = Eigen::VectorXd::Zero(h);
  const double head_scale = 3.0 / std::sqrt(static_cast<double>(half));
  Eigen::MatrixXd w2(h, C);
  for (Eigen::Index k = 0; k < h; ++k)
    for (Eigen::Index j = 0; j < C; ++j) w2(k, j) = rng.normal(0.0, head_scale);

  FrozenToyLM probe(emb, w1, b1, w2, Eigen::VectorXd::Zero(C));

  // Offsets that make the reference labels roughly class-balanced on random
  // inputs: repeatedly match mean softmax mass to 1/C.
  constexpr std::size_t kCalibration = 4096;
  Rng calib(seed, 0x63616c6962ULL);
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(kCalibration), C);
  for (std::size_t n = 0; n < kCalibration; ++n) {
    const auto toks = random_tokens(calib, shape);
    scores.row(static_cast<Eigen::Index>(n)) = feature_scores(probe, mean_embedding(emb, toks)).transpose();
  }
  Eigen::VectorXd offsets = Eigen::VectorXd::Zero(C);
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(C);
    for (Eigen::Index n = 0; n < scores.rows(); ++n) {
      Eigen::ArrayXd l = scores.row(n).transpose().array() + offsets.array();
      l = (l - l.maxCoeff()).exp();
      mass += (l / l.sum()).matrix();
    }
    mass /= static_cast<double>(scores.rows());
    offsets.array() += std::log(1.0 / static_cast<double>(C)) - mass.array().max(1e-12).log();
  }
  offsets.array() -= offsets.mean();

  // The output bias is miscalibrated on purpose; a zero prompt inherits it.
  Eigen::VectorXd shift(C);
  for (Eigen::Index j = 0; j < C; ++j) shift(j) = rng.normal(0.0, 1.5);
  shift.array() -= shift.mean();

  return Built{FrozenToyLM(std::move(emb), std::move(w1), std::move(b1), std::move(w2), offsets + shift),
               offsets};
}

}  // namespace

FrozenToyLM FrozenToyLM::from_seed(const ToyShape& shape, std::uint64_t seed) { return build(shape, seed).model; }

Eigen::VectorXd FrozenToyLM::input_mean(std::span<const std::size_t> tokens) const {
  if (tokens.empty()) throw DomainError("input must contain at least one token");
  for (auto t : tokens) {
    if (t >= vocab()) throw DomainError("token id " + std::to_string(t) + " outside vocabulary");
  }
  return mean_embedding(embedding_, tokens);
}

Eigen::VectorXd FrozenToyLM::forward(const SoftPrompt& prompt, std::span<const std::size_t> tokens) const {
  if (prompt.embed() != embed()) throw DomainError("soft prompt width does not match the embedding width");
  Eigen::VectorXd u(2 * embed());
  u << prompt.mean_row(), input_mean(tokens);
  const Eigen::VectorXd a = (w1_.transpose() * u + b1_).array().tanh().matrix();
  return w2_.transpose() * a + b2_;
}

double FrozenToyLM::loss(const SoftPrompt& prompt, const TokenExample& example, Eigen::MatrixXd* grad) const {
  if (prompt.embed() != embed()) throw DomainError("soft prompt width does not match the embedding width");
  if (example.label >= classes()) throw DomainError("example label outside the class range");
  const auto e = static_cast<Eigen::Index>(embed());
  Eigen::VectorXd u(2 * e);
  u << prompt.mean_row(), input_mean(example.tokens);
  const Eigen::VectorXd a = (w1_.transpose() * u + b1_).array().tanh().matrix();
  const Eigen::VectorXd logits = w2_.transpose() * a + b2_;

  const double mx = logits.maxCoeff();
  const Eigen::ArrayXd ex = (logits.array() - mx).exp();
  const double lse = mx + std::log(ex.sum());
  const auto y = static_cast<Eigen::Index>(example.label);
  const double value = lse - logits(y);

  if (grad != nullptr) {
    Eigen::VectorXd g = (ex / ex.sum()).matrix();
    g(y) -= 1.0;
    const Eigen::VectorXd dz = ((w2_ * g).array() * (1.0 - a.array().square())).matrix();
    const Eigen::VectorXd dpbar = w1_.topRows(e) * dz;
    const double s = static_cast<double>(prompt.length());
    grad->resize(static_cast<Eigen::Index>(prompt.length()), e);
    grad->rowwise() = (dpbar / s).transpose();
  }
  return value;
}

std::string FrozenToyLM::digest() const {
  std::string bytes;
  auto put = [&bytes](const double* data, Eigen::Index rows, Eigen::Index cols) {
    const std::int64_t dims[2] = {static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols)};
    bytes.append(reinterpret_cast<const char*>(dims), sizeof(dims));
    bytes.append(reinterpret_cast<const char*>(data), static_cast<std::size_t>(rows * cols) * sizeof(double));
  };
  put(embedding_.data(), embedding_.rows(), embedding_.cols());
  put(w1_.data(), w1_.rows(), w1_.cols());
  put(b1_.data(), b1_.size(), 1);
  put(w2_.data(), w2_.rows(), w2_.cols());
  put(b2_.data(), b2_.size(), 1);
  return sha256_hex(bytes);
}

std::vector<std::size_t> tokenize(std::string_view text, std::size_t vocab) {
  if (vocab == 0) throw DomainError("vocabulary must be non-empty");
  std::vector<std::size_t> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(static_cast<std::size_t>(fnv1a64(word) % vocab));
  return out;
}

Eigen::MatrixXd per_example_grad(const FrozenToyLM& model, const SoftPrompt& prompt, const TokenExample& example) {
  Eigen::MatrixXd g;
  model.loss(prompt, example, &g);
  return g;
}

Eigen::MatrixXd clip(const Eigen::MatrixXd& grad, double c) {
  if (!(c > 0.0)) throw DomainError("clipping norm must be positive");
  if (std::isinf(c)) return grad;
  const double norm = grad.norm();
  const double factor = std::max(1.0, norm / c);
  return grad / factor;
}

void DpsgdConfig::validate() const {
  if (!(sampling_rate > 0.0 && sampling_rate <= 1.0)) throw ConfigError("sampling_rate must lie in (0, 1]");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  if (!(noise_scale >= 0.0) || std::isinf(noise_scale)) throw ConfigError("noise_scale must be finite and >= 0");
  if (noise_scale > 0.0 && std::isinf(max_grad_norm)) {
    throw ConfigError("noise_scale > 0 requires a finite max_grad_norm");
  }
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!std::isfinite(learning_rate)) throw ConfigError("learning_rate must be finite");
  for (double r : schedule) {
    if (!std::isfinite(r)) throw ConfigError("learning-rate schedule entries must be finite");
  }
  if (prompt_len == 0) throw ConfigError("prompt_len must be positive");
  if (!(init_stddev >= 0.0)) throw ConfigError("init_stddev must be >= 0");
}

double DpsgdConfig::rate_at(std::int64_t step) const {
  if (schedule.empty()) return learning_rate;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(std::max<std::int64_t>(step, 0)), schedule.size() - 1);
  return schedule[i];
}

SoftPrompt noisy_step(const SoftPrompt& prompt, std::span<const Eigen::MatrixXd> clipped_grads,
                      const DpsgdConfig& cfg, std::int64_t step, Rng& noise_rng, double expected_batch) {
  if (clipped_grads.empty()) return prompt;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(prompt.values().rows(), prompt.values().cols());
  for (const auto& g : clipped_grads) {
    assert(std::isinf(cfg.max_grad_norm) || g.norm() <= cfg.max_grad_norm * (1.0 + 1e-12));
    sum += g;
  }
  if (cfg.noise_scale > 0.0) {
    const double sd = cfg.noise_scale * cfg.max_grad_norm;
    for (Eigen::Index j = 0; j < sum.cols(); ++j)
      for (Eigen::Index i = 0; i < sum.rows(); ++i) sum(i, j) += noise_rng.normal(0.0, sd);
  }
  double divisor = static_cast<double>(clipped_grads.size());
  if (cfg.normalize_by_expected_batch) {
    if (!(expected_batch > 0.0)) throw DomainError("expected batch size must be positive");
    divisor = expected_batch;
  }
  return SoftPrompt(prompt.values() - cfg.rate_at(step) * (sum / divisor));
}

std::uint64_t dpsgd_sampling_stream() { return 0x73616d706c65ULL; }
std::uint64_t dpsgd_noise_stream() { return 0x6e6f697365ULL; }

TrainResult train(const FrozenToyLM& model, std::span<const TokenExample> data, const DpsgdConfig& cfg,
                  std::optional<SoftPrompt> init) {
  cfg.validate();
  if (data.empty()) throw DomainError("training data is empty");

  TrainResult result;
  result.prompt = init ? std::move(*init) : SoftPrompt::random(cfg.prompt_len, model.embed(), cfg.seed, cfg.init_stddev);
  if (result.prompt.embed() != model.embed()) throw DomainError("initial prompt width does not match the model");

  const OrderGrid grid = cfg.grid.integer_subgrid();
  AccountantState per_step = AccountantState::empty(grid, AccountingMode::kDataIndependent);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    per_step.eps_at_order[i] = cfg.noise_scale > 0.0
                                   ? accountant::subsampled_gaussian_rdp(cfg.sampling_rate, cfg.noise_scale,
                                                                         static_cast<int>(grid[i]))
                                   : std::numeric_limits<double>::infinity();
  }

  Rng sampler(cfg.seed, dpsgd_sampling_stream());
  Rng noise(cfg.seed, dpsgd_noise_stream());
  const double expected_batch = cfg.sampling_rate * static_cast<double>(data.size());
  AccountantState state = AccountantState::empty(grid, AccountingMode::kDataIndependent);

  std::vector<Eigen::MatrixXd> batch;
  for (std::int64_t t = 0; t < cfg.iterations; ++t) {
    batch.clear();
    double loss_sum = 0.0;
    for (const auto& ex : data) {
      if (sampler.uniform() >= cfg.sampling_rate) continue;
      Eigen::MatrixXd g;
      loss_sum += model.loss(result.prompt, ex, &g);
      batch.push_back(clip(g, cfg.max_grad_norm));
    }
    if (batch.empty()) ++result.empty_batches;
    TrainLogRow row;
    row.step = t;
    row.loss = batch.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : loss_sum / static_cast<double>(batch.size());
    result.prompt = noisy_step(result.prompt, batch, cfg, t, noise, expected_batch);
    // Empty batches still count toward the privacy cost.
    state = accountant::compose(std::move(state), per_step.eps_at_order);
    row.eps_so_far = accountant::to_eps_delta(state, cfg.delta).epsilon;
    result.log.push_back(row);
  }
  result.report = accountant::dpsgd_budget(cfg.sampling_rate, cfg.noise_scale, cfg.iterations, cfg.delta, grid);
  return result;
}

double accuracy(const FrozenToyLM& model, const SoftPrompt& prompt, std::span<const TokenExample> data) {
  if (data.empty()) throw DomainError("evaluation data is empty");
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const Eigen::VectorXd l = model.forward(prompt, ex.tokens);
    Eigen::Index arg = 0;
    l.maxCoeff(&arg);  // first maximum wins ties
    if (static_cast<std::size_t>(arg) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double mean_loss(const FrozenToyLM& model, const SoftPrompt& prompt, std::span<const TokenExample> data) {
  if (data.empty()) throw DomainError("evaluation data is empty");
  double total = 0.0;
  for (const auto& ex : data) total += model.loss(prompt, ex);
  return total / static_cast<double>(data.size());
}

ToyTask make_toy_task(const ToyShape& shape, std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                      double margin) {
  Built built = build(shape, seed);
  ToyTask task{shape, std::move(built.model), {}, {}};
  Rng rng(seed, 0x64617461ULL);
  const std::size_t want = n_train + n_test;
  std::vector<TokenExample> all;
  all.reserve(want);
  const std::size_t max_draws = 1000 * std::max<std::size_t>(want, 1);
  for (std::size_t draws = 0; all.size() < want; ++draws) {
    if (draws >= max_draws) throw DomainError("could not draw enough examples above the label margin");
    auto toks = random_tokens(rng, shape);
    Eigen::VectorXd sc = feature_scores(task.model, mean_embedding(task.model.embedding(), toks)) + built.offsets;
    Eigen::Index arg = 0;
    const double top = sc.maxCoeff(&arg);
    sc(arg) = -std::numeric_limits<double>::infinity();
    if (top - sc.maxCoeff() <= margin) continue;
    all.push_back(TokenExample{std::move(toks), static_cast<std::size_t>(arg)});
  }
  task.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  task.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return task;
}

}  // namespace dpprompt

#include "dpprompt/synth.hpp"

#include <array>
#include <numeric>
#include <string>

#include "dpprompt/hash.hpp"
#include "dpprompt/rng.hpp"

namespace dpprompt {
namespace {

constexpr std::array<std::string_view, 24> kWords = {
    "report", "market", "team",  "season", "model",  "study",   "city",   "league",
    "shares", "orbit",  "trade", "coach",  "vote",   "energy",  "signal", "record",
    "growth", "match",  "press", "lab",    "budget", "council", "final",  "launch"};

}  // namespace

LabeledDataset synth_text_dataset(const Task& task, std::size_t n, std::uint64_t seed, std::string_view tag) {
  LabeledDataset out;
  out.task = task;
  if (task.size() == 0) return out;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % task.size();
  Rng rng(seed, fnv1a64(tag));
  rng.shuffle(labels);
  out.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string text(tag);
    text += ' ';
    text += std::to_string(i);
    for (int w = 0; w < 5; ++w) {
      text += ' ';
      text += kWords[rng.uniform_index(kWords.size())];
    }
    out.records.push_back(Demonstration{std::move(text), task[labels[i]]});
  }
  return out;
}

SynthSplits synth_splits(const Task& task, std::size_t n_private, std::size_t n_public, std::size_t n_test,
                         std::uint64_t seed) {
  return SynthSplits{synth_text_dataset(task, n_private, seed, "private"),
                     synth_text_dataset(task, n_public, seed, "public"),
                     synth_text_dataset(task, n_test, seed, "test")};
}

}  // namespace dpprompt

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "dpprompt/core.hpp"

namespace dpprompt {

// `n` labeled sentences with distinct texts. Labels cycle through the task
// after a seeded shuffle, so class counts differ by at most one. `tag` keeps
// texts from different splits apart.
LabeledDataset synth_text_dataset(const Task& task, std::size_t n, std::uint64_t seed, std::string_view tag);

struct SynthSplits {
  LabeledDataset private_data;
  LabeledDataset public_data;
  LabeledDataset test_data;
};

SynthSplits synth_splits(const Task& task, std::size_t n_private, std::size_t n_public, std::size_t n_test,
                         std::uint64_t seed);

}  // namespace dpprompt

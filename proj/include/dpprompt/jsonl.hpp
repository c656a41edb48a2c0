#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpprompt/core.hpp"

namespace dpprompt {

struct PublicRecord {
  std::string text;
  // Present only when the file carries a ground-truth label (synthetic data);
  // the transfer pipeline never reads it.
  std::optional<std::string> label;
};

// One JSON object per line with `text` and `label`. Blank lines are skipped.
// Missing files raise ConfigError, malformed lines ParseError.
LabeledDataset read_labeled_jsonl(const std::filesystem::path& path, const Task& task);
std::vector<PublicRecord> read_public_jsonl(const std::filesystem::path& path);

void write_labeled_jsonl(const std::filesystem::path& path, const std::vector<Demonstration>& records);

// Writes `content` atomically enough for our purposes: to a sibling temp file,
// then renamed into place.
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace dpprompt

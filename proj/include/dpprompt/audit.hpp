#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpprompt/core.hpp"

namespace dpprompt::audit {

// Sets the pipeline phase that private-data accesses are attributed to, and
// restores the previous phase on destruction.
class PhaseScope {
 public:
  explicit PhaseScope(std::string_view phase);
  ~PhaseScope();
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  std::string previous_;
};

void record_private_access();
std::map<std::string, std::size_t> private_access_counts();
void reset();

}  // namespace dpprompt::audit

namespace dpprompt {

// Owner of the private demonstration records. Every read is counted by the
// audit hook under the current phase.
class PrivateDataset {
 public:
  explicit PrivateDataset(LabeledDataset data) : data_(std::move(data)) {}
  const LabeledDataset& access() const {
    audit::record_private_access();
    return data_;
  }
  const Task& task() const noexcept { return data_.task; }
  std::size_t size() const noexcept { return data_.records.size(); }

 private:
  LabeledDataset data_;
};

// The teacher prompts. Each prompt holds private demonstrations, so reads are
// audited like PrivateDataset reads.
class TeacherFlock {
 public:
  explicit TeacherFlock(std::vector<PromptSpec> specs) : specs_(std::move(specs)) {}
  const std::vector<PromptSpec>& specs() const {
    audit::record_private_access();
    return specs_;
  }
  std::size_t size() const noexcept { return specs_.size(); }

 private:
  std::vector<PromptSpec> specs_;
};

}  // namespace dpprompt

#include "dpprompt/audit.hpp"

#include <mutex>

namespace dpprompt::audit {
namespace {

std::mutex g_mutex;
std::string g_phase = "unscoped";
std::map<std::string, std::size_t> g_counts;

}  // namespace

PhaseScope::PhaseScope(std::string_view phase) {
  std::lock_guard<std::mutex> lock(g_mutex);
  previous_ = g_phase;
  g_phase = std::string(phase);
}

PhaseScope::~PhaseScope() {
  std::lock_guard<std::mutex> lock(g_mutex);
  g_phase = previous_;
}

void record_private_access() {
  std::lock_guard<std::mutex> lock(g_mutex);
  ++g_counts[g_phase];
}

std::map<std::string, std::size_t> private_access_counts() {
  std::lock_guard<std::mutex> lock(g_mutex);
  return g_counts;
}

void reset() {
  std::lock_guard<std::mutex> lock(g_mutex);
  g_counts.clear();
}

}  // namespace dpprompt::audit

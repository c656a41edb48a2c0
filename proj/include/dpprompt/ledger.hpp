#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpprompt/accountant.hpp"
#include "dpprompt/gnmax.hpp"

namespace dpprompt {

inline constexpr const char* kLedgerSchemaVersion = "v1";

// First line of a ledger file: everything needed to recompute each entry's cost.
struct LedgerHeader {
  std::vector<std::string> labels;
  std::int64_t n_teachers = 0;
  GNMaxConfig gnmax;
  AccountingMode mode = AccountingMode::kDataDependent;
  double delta = 1e-6;
  OrderGrid grid = OrderGrid::default_grid();
};

struct LedgerEntry {
  std::int64_t query_id = 0;
  std::string public_text_digest;  // FNV-1a 64 of the public text, hex
  VoteHistogram histogram;
  std::optional<std::size_t> answered_label;  // empty for a rejected query
  CostVector cost;                            // per-order RDP charged for this query
  double cumulative_epsilon = 0.0;            // at header.delta, after this query
};

// Append-only record of every aggregation query. One JSON object per line:
// the header (record "header"), then one record "query" per entry.
class TransferLedger {
 public:
  TransferLedger() = default;
  explicit TransferLedger(LedgerHeader header) : header_(std::move(header)) {}

  const LedgerHeader& header() const noexcept { return header_; }
  const std::vector<LedgerEntry>& entries() const noexcept { return entries_; }

  // Rejects entries that break query-id order, the grid, or a non-decreasing
  // cumulative epsilon.
  void append(LedgerEntry entry);

  std::string to_jsonl() const;
  void write(const std::filesystem::path& path) const;

  // Throws ParseError carrying the offending 1-based line number.
  static TransferLedger parse(std::string_view text);
  static TransferLedger read(const std::filesystem::path& path);

 private:
  LedgerHeader header_;
  std::vector<LedgerEntry> entries_;
};

struct ReplayResult {
  AccountantState state;
  PrivacyReport report;
};

// Recomputes every entry's cost from its histogram and the header's
// configuration and sums them in ledger order. Without a mode override the
// recomputed costs must equal the recorded ones bit for bit; a mismatch raises
// ParseError at that entry's line.
ReplayResult replay(const TransferLedger& ledger, std::optional<AccountingMode> mode_override = std::nullopt,
                    std::optional<double> delta_override = std::nullopt);

}  // namespace dpprompt

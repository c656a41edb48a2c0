#include "dpprompt/ledger.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dpprompt/errors.hpp"
#include "dpprompt/jsonl.hpp"
#include "json.hpp"

namespace dpprompt {
namespace {

using nlohmann::json;

// JSON has no infinities; they travel as the strings "inf" / "-inf".
json number_to_json(double v) {
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  return v;
}

double number_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw std::invalid_argument("expected a number");
}

json header_to_json(const LedgerHeader& h) {
  json orders = json::array();
  for (double a : h.grid.orders()) orders.push_back(a);
  return json{{"record", "header"},
              {"schema_version", kLedgerSchemaVersion},
              {"labels", h.labels},
              {"n_teachers", h.n_teachers},
              {"gnmax",
               {{"threshold", number_to_json(h.gnmax.threshold)},
                {"sigma1", number_to_json(h.gnmax.sigma1)},
                {"sigma2", number_to_json(h.gnmax.sigma2)},
                {"seed", h.gnmax.seed}}},
              {"accounting", std::string(to_string(h.mode))},
              {"delta", h.delta},
              {"orders", orders}};
}

json entry_to_json(const LedgerEntry& e, const LedgerHeader& h) {
  json cost = json::array();
  for (double c : e.cost) cost.push_back(number_to_json(c));
  json j{{"record", "query"},
         {"query_id", e.query_id},
         {"public_text_digest", e.public_text_digest},
         {"histogram", e.histogram.counts},
         {"other", e.histogram.other},
         {"outcome", e.answered_label ? "answered" : "rejected"},
         {"cost", cost},
         {"cumulative_epsilon", number_to_json(e.cumulative_epsilon)}};
  if (e.answered_label) {
    j["label_index"] = *e.answered_label;
    j["label"] = h.labels.at(*e.answered_label);
  }
  return j;
}

LedgerHeader header_from_json(const json& j) {
  if (j.at("record").get<std::string>() != "header") throw std::invalid_argument("first record must be the header");
  if (j.at("schema_version").get<std::string>() != kLedgerSchemaVersion) {
    throw std::invalid_argument("unsupported ledger schema version");
  }
  LedgerHeader h;
  h.labels = j.at("labels").get<std::vector<std::string>>();
  h.n_teachers = j.at("n_teachers").get<std::int64_t>();
  const auto& g = j.at("gnmax");
  h.gnmax.threshold = number_from_json(g.at("threshold"));
  h.gnmax.sigma1 = number_from_json(g.at("sigma1"));
  h.gnmax.sigma2 = number_from_json(g.at("sigma2"));
  h.gnmax.seed = g.at("seed").get<std::uint64_t>();
  h.mode = accounting_mode_from_string(j.at("accounting").get<std::string>());
  h.delta = j.at("delta").get<double>();
  h.grid = OrderGrid(j.at("orders").get<std::vector<double>>());
  return h;
}

LedgerEntry entry_from_json(const json& j, const LedgerHeader& h) {
  if (j.at("record").get<std::string>() != "query") throw std::invalid_argument("expected a query record");
  LedgerEntry e;
  e.query_id = j.at("query_id").get<std::int64_t>();
  e.public_text_digest = j.at("public_text_digest").get<std::string>();
  e.histogram.counts = j.at("histogram").get<std::vector<std::int64_t>>();
  e.histogram.other = j.at("other").get<std::int64_t>();
  e.histogram.n_teachers = h.n_teachers;
  if (e.histogram.counts.size() != h.labels.size()) throw std::invalid_argument("histogram size differs from labels");
  e.histogram.validate();
  const auto outcome = j.at("outcome").get<std::string>();
  if (outcome == "answered") {
    e.answered_label = j.at("label_index").get<std::size_t>();
    if (*e.answered_label >= h.labels.size()) throw std::invalid_argument("label index out of range");
  } else if (outcome != "rejected") {
    throw std::invalid_argument("unknown outcome '" + outcome + "'");
  }
  for (const auto& c : j.at("cost")) e.cost.push_back(number_from_json(c));
  e.cumulative_epsilon = number_from_json(j.at("cumulative_epsilon"));
  return e;
}

}  // namespace

void TransferLedger::append(LedgerEntry entry) {
  if (entry.cost.size() != header_.grid.size()) throw DomainError("ledger cost does not match the order grid");
  if (!entries_.empty()) {
    if (entry.query_id <= entries_.back().query_id) throw DomainError("ledger query ids must increase");
    if (entry.cumulative_epsilon < entries_.back().cumulative_epsilon) {
      throw DomainError("ledger cumulative epsilon must not decrease");
    }
  }
  entries_.push_back(std::move(entry));
}

std::string TransferLedger::to_jsonl() const {
  std::ostringstream os;
  os << header_to_json(header_).dump() << '\n';
  for (const auto& e : entries_) os << entry_to_json(e, header_).dump() << '\n';
  return os.str();
}

void TransferLedger::write(const std::filesystem::path& path) const { write_text_file(path, to_jsonl()); }

TransferLedger TransferLedger::parse(std::string_view text) {
  TransferLedger ledger;
  bool have_header = false;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    const bool terminated = nl != std::string_view::npos;
    if (!terminated) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        ledger.header_ = header_from_json(j);
        have_header = true;
      } else {
        ledger.append(entry_from_json(j, ledger.header_));
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(std::string("invalid ledger record: ") + e.what(), lineno);
    }
  }
  if (!have_header) throw ParseError("ledger has no header", lineno == 0 ? 1 : lineno);
  return ledger;
}

TransferLedger TransferLedger::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open ledger " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

ReplayResult replay(const TransferLedger& ledger, std::optional<AccountingMode> mode_override,
                    std::optional<double> delta_override) {
  const auto& h = ledger.header();
  const AccountingMode mode = mode_override.value_or(h.mode);
  const bool verify = mode == h.mode;
  ReplayResult out;
  out.state = AccountantState::empty(h.grid, mode);
  for (std::size_t i = 0; i < ledger.entries().size(); ++i) {
    const auto& e = ledger.entries()[i];
    const bool answered = e.answered_label.has_value();
    const CostVector cost = accountant::gnmax_step_cost(e.histogram, h.gnmax, answered, h.grid, mode);
    if (verify && cost != e.cost) {
      throw ParseError("recorded cost differs from the cost recomputed from the histogram", i + 2);
    }
    out.state = accountant::compose(std::move(out.state), cost, answered);
  }
  out.report = accountant::to_eps_delta(out.state, delta_override.value_or(h.delta));
  return out;
}

}  // namespace dpprompt

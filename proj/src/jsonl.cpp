#include "dpprompt/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "dpprompt/errors.hpp"
#include "json.hpp"

namespace dpprompt {
namespace {

using nlohmann::json;

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": malformed JSON", lineno);
    }
    if (!obj.is_object()) throw ParseError(path.string() + ": expected a JSON object", lineno);
    fn(obj, lineno);
  }
}

std::string require_string(const json& obj, const char* field, const std::filesystem::path& path,
                           std::size_t lineno) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError(path.string() + ": missing string field '" + field + "'", lineno);
  }
  return it->get<std::string>();
}

}  // namespace

LabeledDataset read_labeled_jsonl(const std::filesystem::path& path, const Task& task) {
  LabeledDataset data;
  data.task = task;
  for_each_json_line(path, [&](const json& obj, std::size_t lineno) {
    std::string text = require_string(obj, "text", path, lineno);
    std::string label = require_string(obj, "label", path, lineno);
    if (text.empty()) throw ParseError(path.string() + ": empty text", lineno);
    auto cls = task.find(label);
    if (!cls) throw ParseError(path.string() + ": label '" + label + "' is not a task class", lineno);
    data.records.push_back(Demonstration{std::move(text), *cls});
  });
  return data;
}

std::vector<PublicRecord> read_public_jsonl(const std::filesystem::path& path) {
  std::vector<PublicRecord> out;
  for_each_json_line(path, [&](const json& obj, std::size_t lineno) {
    PublicRecord rec;
    rec.text = require_string(obj, "text", path, lineno);
    if (auto it = obj.find("label"); it != obj.end() && it->is_string()) rec.label = it->get<std::string>();
    out.push_back(std::move(rec));
  });
  return out;
}

void write_labeled_jsonl(const std::filesystem::path& path, const std::vector<Demonstration>& records) {
  std::ostringstream os;
  for (const auto& r : records) {
    os << json{{"text", r.text}, {"label", r.label.token}}.dump() << '\n';
  }
  write_text_file(path, os.str());
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace dpprompt

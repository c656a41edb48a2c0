// Writes synthetic private/public/test JSONL splits for mock-backend runs.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpprompt/errors.hpp"
#include "dpprompt/jsonl.hpp"
#include "dpprompt/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic labeled text splits"};
  std::string out_dir = "data";
  std::vector<std::string> labels = {"world", "sports", "business", "science"};
  std::size_t n_private = 400;
  std::size_t n_public = 500;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;
  app.add_option("--out-dir", out_dir)->capture_default_str();
  app.add_option("--labels", labels)->delimiter(',');
  app.add_option("--n-private", n_private)->capture_default_str();
  app.add_option("--n-public", n_public)->capture_default_str();
  app.add_option("--n-test", n_test)->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    const dpprompt::Task task(labels);
    const auto splits = dpprompt::synth_splits(task, n_private, n_public, n_test, seed);
    const std::filesystem::path out(out_dir);
    dpprompt::write_labeled_jsonl(out / "private.jsonl", splits.private_data.records);
    dpprompt::write_labeled_jsonl(out / "public.jsonl", splits.public_data.records);
    dpprompt::write_labeled_jsonl(out / "test.jsonl", splits.test_data.records);
  } catch (const dpprompt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

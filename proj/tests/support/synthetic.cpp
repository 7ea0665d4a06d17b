#include "synthetic.hpp"

#include <atomic>
#include <random>

#include <fmt/format.h>

#include "halludetect/corpus.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect::testing {

namespace fs = std::filesystem;
using nlohmann::json;

std::string SyntheticQuestion(std::size_t i) {
  return fmt::format("What is the capital of entity {}?", i);
}

std::string ItemMarker(std::size_t i) { return fmt::format("entity {}?", i); }

bool SyntheticIsConsistent(std::size_t i) { return i % 2 == 0; }

std::vector<QaItem> SyntheticCorpus(std::size_t n_items) {
  std::vector<QaItem> items;
  for (std::size_t i = 0; i < n_items; ++i) {
    QaItem item;
    item.id = fmt::format("syn-{:04d}", i);
    item.question = SyntheticQuestion(i);
    item.gold_answers = {fmt::format("City {}", i)};
    item.factuality_label = SyntheticIsConsistent(i) ? Factuality::kFactual : Factuality::kNonFactual;
    item.source = Source::kSynthetic;
    items.push_back(std::move(item));
  }
  return items;
}

json SyntheticMockScript(std::size_t n_items, std::size_t n_samples) {
  json rules = json::array();
  for (std::size_t i = 0; i < n_items; ++i) {
    const std::string marker = ItemMarker(i);
    const std::string truth = fmt::format("City {}", i);
    const std::string other = fmt::format("Town {}", i + 1);
    const bool consistent = SyntheticIsConsistent(i);

    json samples = json::array();
    for (std::size_t k = 0; k < n_samples; ++k) {
      // Consistent items sample one answer; switching items spread over three.
      const std::string text = consistent ? truth : fmt::format("Place {}-{}", i, k % 3);
      samples.push_back({{"text", text}, {"token_logprobs", {-0.2, -0.3}}});
    }
    rules.push_back({{"match", marker + "\nAnswer:"},
                     {"text", " " + truth},
                     {"token_logprobs", consistent ? json{-0.05, -0.1} : json{-0.9, -1.4}},
                     {"samples", samples}});
    for (const auto& exp : BuiltinExpressions()) {
      rules.push_back({{"match", marker + "\nAnswer: " + exp.text},
                       {"text", " " + (consistent ? truth : other)},
                       {"token_logprobs", consistent ? json{-0.05, -0.1} : json{-2.0, -2.5}},
                       {"samples", samples}});
    }
  }
  return json{{"rules", rules}};
}

fs::path WriteSyntheticFixture(const fs::path& dir, const SyntheticOptions& options) {
  fs::create_directories(dir);
  const auto items = SyntheticCorpus(options.n_items);
  WriteFileAtomic(dir / "corpus.jsonl", QaItemsToJsonl(items));
  WriteFileAtomic(dir / "llm_script.json",
                  SyntheticMockScript(options.n_items, options.n_samples).dump());
  WriteFileAtomic(dir / "nli_script.json",
                  json{{"model_version", "mock-nli-1"}, {"flip_substrings", options.flip_substrings}}.dump());

  json manifest = {
      {"corpus_path", "corpus.jsonl"},
      {"corpus_format", "qa_jsonl"},
      {"expressions", {"unsure", "doublecheck", "mustbe", "undoubtedly"}},
      {"metrics", options.metrics},
      {"decoding",
       {{"sampling", {{"temperature", 1.0}, {"max_tokens", 64}, {"n_samples", options.n_samples}}},
        {"selfcheck", {{"temperature", 0.5}, {"max_tokens", 64}, {"n_samples", options.n_samples}}}}},
      {"backend", {{"kind", "ScriptedMock"}, {"model_name", "synthetic"}, {"mock_script", "llm_script.json"}}},
      {"nli", {{"kind", "mock"}, {"mock_script", "nli_script.json"}}},
      {"breakdown", {{"enabled", options.breakdown}}},
      {"output_dir", "out"},
      {"cache_dir", "cache"}};
  const fs::path path = dir / "manifest.json";
  WriteFileAtomic(path, manifest.dump(2));
  return path;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          fmt::format("halludetect-{}-{}-{}", tag, rd(), counter.fetch_add(1));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

}  // namespace halludetect::testing

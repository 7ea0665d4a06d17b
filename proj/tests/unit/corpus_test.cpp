#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "halludetect/corpus.hpp"
#include "halludetect/error.hpp"
#include "halludetect/text_util.hpp"
#include "synthetic.hpp"

namespace hd = halludetect;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

hd::ErrorCode CodeOf(const std::function<void()>& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const hd::Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return hd::ErrorCode::kIo;
}

std::vector<hd::QaItem> Three() { return hd::testing::SyntheticCorpus(3); }

}  // namespace

TEST(LoadHotpotQa, ReadsRecords) {
  hd::testing::TempDir dir("hotpot");
  const auto path = dir.path() / "dev.json";
  hd::WriteFileAtomic(path, R"([{"_id": "5a8b", "question": "Q1?", "answer": "yes", "type": "comparison"},
                                {"_id": "5a8c", "question": "Q2?", "answer": "Paris"}])");
  const auto items = hd::LoadHotpotQa(path);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].id, "5a8b");
  EXPECT_EQ(items[1].gold_answers, (std::vector<std::string>{"Paris"}));
  EXPECT_EQ(items[1].source, hd::Source::kHotpotQA);
  EXPECT_FALSE(items[0].factuality_label.has_value());
}

TEST(LoadHotpotQa, MissingAnswerNamesRecord) {
  hd::testing::TempDir dir("hotpot-bad");
  const auto path = dir.path() / "dev.json";
  hd::WriteFileAtomic(path, R"([{"_id": "ok", "question": "Q?", "answer": "a"}, {"_id": "5a8x", "question": "Q?"}])");
  std::string msg;
  EXPECT_EQ(CodeOf([&] { hd::LoadHotpotQa(path); }, &msg), hd::ErrorCode::kMissingField);
  EXPECT_NE(msg.find("5a8x"), std::string::npos);
  hd::WriteFileAtomic(path, "{");
  EXPECT_EQ(CodeOf([&] { hd::LoadHotpotQa(path); }), hd::ErrorCode::kParseError);
  EXPECT_EQ(CodeOf([&] { hd::LoadHotpotQa(dir.path() / "absent.json"); }), hd::ErrorCode::kIo);
}

TEST(LoadNqOpen, ReadsLinesAndSkipsBlanks) {
  hd::testing::TempDir dir("nq");
  const auto path = dir.path() / "nq.jsonl";
  hd::WriteFileAtomic(path,
                      "{\"question\": \"who sang x\", \"answer\": [\"A\", \"B\"]}\n\n"
                      "{\"question\": \"when was y\", \"answer\": [\"1990\"]}\n"
                      "{\"id\": \"custom\", \"question\": \"where is z\", \"answer\": [\"here\"]}\n");
  const auto r = hd::LoadNqOpen(path);
  ASSERT_EQ(r.items.size(), 3u);
  EXPECT_EQ(r.skipped_blank_lines, 1u);
  EXPECT_EQ(r.items[0].id, "nq-0");
  EXPECT_EQ(r.items[0].gold_answers.size(), 2u);
  EXPECT_EQ(r.items[1].id, "nq-1");
  EXPECT_EQ(r.items[2].id, "custom");
  EXPECT_EQ(r.items[2].source, hd::Source::kNqOpen);
}

TEST(QaJsonl, RoundTripAndDuplicateIds) {
  hd::testing::TempDir dir("qa");
  const auto items = Three();
  hd::WriteFileAtomic(dir.path() / "c.jsonl", hd::QaItemsToJsonl(items));
  EXPECT_EQ(hd::LoadQaJsonl(dir.path() / "c.jsonl"), items);
  auto dup = items;
  dup[2].id = dup[0].id;
  hd::WriteFileAtomic(dir.path() / "d.jsonl", hd::QaItemsToJsonl(dup));
  EXPECT_THROW(hd::LoadQaJsonl(dir.path() / "d.jsonl"), hd::Error);
}

TEST(ApplyExclusions, RemovesMatchedAndReportsUnknown) {
  const auto items = Three();
  const std::vector<std::string> one = {items[1].id};
  const auto r = hd::ApplyExclusions(items, one);
  ASSERT_EQ(r.items.size(), 2u);
  EXPECT_EQ(r.items[0].id, items[0].id);
  EXPECT_EQ(r.items[1].id, items[2].id);
  EXPECT_TRUE(hd::ApplyExclusions(items, {}).items == items);
  const std::vector<std::string> messy = {items[0].id, items[0].id, "ghost", "ghost"};
  const auto m = hd::ApplyExclusions(items, messy);
  EXPECT_EQ(m.items.size(), 2u);
  EXPECT_EQ(m.removed, 1u);
  EXPECT_EQ(m.unknown_ids, (std::vector<std::string>{"ghost"}));
}

TEST(ApplyExclusions, CountMatchesUniqueMatchedIds) {
  const auto items = hd::testing::SyntheticCorpus(50);
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> ids;
    std::set<std::string> matched;
    for (int k = 0, n = static_cast<int>(rng() % 30); k < n; ++k) {
      const auto i = rng() % 70;
      ids.push_back(i < 50 ? items[i].id : "x" + std::to_string(i));
      if (i < 50) matched.insert(items[i].id);
    }
    const auto r = hd::ApplyExclusions(items, ids);
    EXPECT_EQ(r.items.size(), items.size() - matched.size());
    EXPECT_TRUE(std::is_sorted(r.items.begin(), r.items.end(),
                               [](const hd::QaItem& a, const hd::QaItem& b) { return a.id < b.id; }));
  }
}

TEST(MergeLabels, AttachesReportsAndRejectsConflicts) {
  auto items = Three();
  for (auto& i : items) i.factuality_label.reset();
  const auto r = hd::MergeLabelsFromString(
      items, "{\"id\": \"syn-0000\", \"factuality\": \"NonFactual\", \"consistency\": {\"mustbe\": true}}\n"
             "{\"id\": \"syn-0001\", \"factuality\": true}\n"
             "{\"id\": \"nobody\", \"factuality\": \"Factual\"}\n");
  EXPECT_EQ(r.attached, 2u);
  EXPECT_EQ(r.unmatched_ids, (std::vector<std::string>{"nobody"}));
  EXPECT_EQ(r.items[0].factuality_label, hd::Factuality::kNonFactual);
  EXPECT_EQ(r.items[0].consistency_label->at("mustbe"), hd::Consistency::kConsistent);
  EXPECT_EQ(r.items[1].factuality_label, hd::Factuality::kFactual);
  EXPECT_FALSE(r.items[2].factuality_label.has_value());

  EXPECT_EQ(CodeOf([&] {
              hd::MergeLabelsFromString(items, "{\"id\": \"syn-0000\", \"factuality\": \"Factual\"}\n"
                                               "{\"id\": \"syn-0000\", \"factuality\": \"NonFactual\"}\n");
            }),
            hd::ErrorCode::kParseError);
  // Identical duplicates are harmless.
  EXPECT_NO_THROW(hd::MergeLabelsFromString(items, "{\"id\": \"syn-0000\", \"factuality\": \"Factual\"}\n"
                                                   "{\"id\": \"syn-0000\", \"factuality\": \"Factual\"}\n"));
}

TEST(SampleSubset, SeededAndOrderPreserving) {
  const auto items = hd::testing::SyntheticCorpus(100);
  const auto a = hd::SampleSubset(items, 10, 42);
  const auto b = hd::SampleSubset(items, 10, 42);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 10u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end(), [](const hd::QaItem& x, const hd::QaItem& y) { return x.id < y.id; }));
  EXPECT_NE(hd::SampleSubset(items, 10, 43), a);
  EXPECT_EQ(hd::SampleSubset(items, 500, 1).size(), 100u);
}

TEST(Manifest, ResolvesPathsAndValidates) {
  hd::testing::TempDir dir("manifest");
  const auto path = hd::testing::WriteSyntheticFixture(dir.path(), {});
  const auto m = hd::LoadManifest(path);
  EXPECT_EQ(m.corpus_path, dir.path() / "corpus.jsonl");
  EXPECT_EQ(m.expressions.size(), 4u);
  EXPECT_EQ(m.ExpressionById("unsure").text, "I am not sure but it could be");
  EXPECT_EQ(m.metrics.size(), 3u);
  EXPECT_EQ(m.output_dir, dir.path() / "out");

  json j = json::parse(hd::ReadFile(path));
  j["expressions"] = {"unsure", "perhaps"};
  EXPECT_EQ(CodeOf([&] { hd::ParseManifest(j, dir.path()); }), hd::ErrorCode::kInvalidConfig);

  j = json::parse(hd::ReadFile(path));
  j["corpus_path"] = "missing.jsonl";
  EXPECT_EQ(CodeOf([&] { hd::ParseManifest(j, dir.path()); }), hd::ErrorCode::kIo);

  j = json::parse(hd::ReadFile(path));
  j["decoding"]["reference"] = {{"temperature", 0.0}, {"max_tokens", 64}, {"n_samples", 3}};
  EXPECT_THROW(hd::ParseManifest(j, dir.path()), hd::Error);

  j = json::parse(hd::ReadFile(path));
  j["custom_expressions"] = {{{"id", "mustbe"}, {"text", "Surely it is"}, {"kind", "Certainty"}}};
  EXPECT_EQ(hd::ParseManifest(j, dir.path()).ExpressionById("mustbe").text, "Surely it is");
}

TEST(LoadCorpus, ExcludeSubsetThenLabel) {
  hd::testing::TempDir dir("load-corpus");
  const auto path = hd::testing::WriteSyntheticFixture(dir.path(), {.n_items = 20});
  json j = json::parse(hd::ReadFile(path));
  hd::WriteFileAtomic(dir.path() / "exclude.txt", "syn-0000\nsyn-0001\n\nunknown\n");
  j["exclusions_path"] = "exclude.txt";
  j["subset_size"] = 5;
  j["subset_seed"] = 9;
  const auto m = hd::ParseManifest(j, dir.path());
  const auto c = hd::LoadCorpus(m);
  EXPECT_EQ(c.items.size(), 5u);
  EXPECT_EQ(c.unknown_exclusions, (std::vector<std::string>{"unknown"}));
  for (const auto& item : c.items) EXPECT_NE(item.id, "syn-0000");
  EXPECT_EQ(hd::LoadCorpus(m).items, c.items);
}

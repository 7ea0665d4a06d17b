#include <thread>

#include <gtest/gtest.h>

#include "halludetect/error.hpp"
#include "halludetect/jsonl_store.hpp"
#include "halludetect/text_util.hpp"
#include "synthetic.hpp"

namespace hd = halludetect;
namespace fs = std::filesystem;

TEST(JsonlStore, InMemoryFirstWriteWins) {
  hd::JsonlStore store("", "x");
  EXPECT_TRUE(store.Put("k", 1));
  EXPECT_FALSE(store.Put("k", 2));
  EXPECT_EQ(store.Get("k").value(), 1);
  EXPECT_FALSE(store.Get("missing").has_value());
  EXPECT_EQ(store.size(), 1u);
  store.Flush();
  EXPECT_EQ(store.segment_count(), 0u);
}

TEST(JsonlStore, PersistsAcrossInstancesInSegments) {
  hd::testing::TempDir dir("store");
  {
    hd::JsonlStore store(dir.path(), "c", 3);
    for (int i = 0; i < 7; ++i) store.Put("k" + std::to_string(i), {{"v", i}});
    EXPECT_EQ(store.segment_count(), 2u);  // two full batches flushed, one pending
  }
  hd::JsonlStore reopened(dir.path(), "c", 3);
  EXPECT_EQ(reopened.size(), 7u);
  EXPECT_EQ(reopened.segment_count(), 3u);
  EXPECT_EQ(reopened.Get("k6").value()["v"], 6);
  // Fresh writes go to a new segment rather than rewriting old ones.
  reopened.Put("k7", 7);
  reopened.Flush();
  EXPECT_EQ(reopened.segment_count(), 4u);
  for (const auto& entry : fs::directory_iterator(dir.path())) {
    EXPECT_EQ(entry.path().extension(), ".jsonl") << entry.path();
  }
}

TEST(JsonlStore, DuplicatePutNotPersistedTwice) {
  hd::testing::TempDir dir("store-dup");
  {
    hd::JsonlStore store(dir.path(), "c");
    store.Put("k", 1);
    store.Put("k", 1);
  }
  std::size_t lines = 0;
  for (const auto& entry : fs::directory_iterator(dir.path())) {
    const auto text = hd::ReadFile(entry.path());
    lines += std::count(text.begin(), text.end(), '\n');
  }
  EXPECT_EQ(lines, 1u);
}

TEST(JsonlStore, ConcurrentPutsKeepEveryKeyOnce) {
  hd::testing::TempDir dir("store-mt");
  {
    hd::JsonlStore store(dir.path(), "c", 5);
    std::vector<std::jthread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&store, t] {
        for (int i = 0; i < 100; ++i) store.Put("k" + std::to_string((i + 50 * t) % 150), t);
      });
    }
  }
  hd::JsonlStore reopened(dir.path(), "c");
  EXPECT_EQ(reopened.size(), 150u);
}

TEST(JsonlStore, CorruptSegmentIsParseError) {
  hd::testing::TempDir dir("store-bad");
  hd::WriteFileAtomic(dir.path() / "c-000000.jsonl", "{not json\n");
  EXPECT_THROW({ hd::JsonlStore store(dir.path(), "c"); }, hd::Error);
}

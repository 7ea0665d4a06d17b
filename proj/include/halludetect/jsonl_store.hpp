#pragma once

#include <cstddef>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace halludetect {

// Append-only key/value store persisted as JSONL segments.
//
// Each flush writes the pending batch to a new segment file
// `<stem>-NNNNNN.jsonl` through a temporary file and an atomic rename, so a
// crash loses at most the unflushed batch and never leaves a torn record.
// The first value stored under a key wins; later puts of the same key are
// dropped, which keeps retried requests from duplicating entries.
//
// Readers run concurrently; writers are serialized.
class JsonlStore {
 public:
  // An empty `dir` keeps everything in memory.
  JsonlStore(std::filesystem::path dir, std::string stem, std::size_t batch_size = 64);
  ~JsonlStore();

  JsonlStore(const JsonlStore&) = delete;
  JsonlStore& operator=(const JsonlStore&) = delete;

  std::optional<nlohmann::json> Get(const std::string& key) const;
  bool Contains(const std::string& key) const;

  // Returns false when the key was already present.
  bool Put(const std::string& key, nlohmann::json value);

  void Flush();

  std::size_t size() const;
  std::size_t segment_count() const;

 private:
  void Load();
  void FlushLocked();

  std::filesystem::path dir_;
  std::string stem_;
  std::size_t batch_size_;

  mutable std::shared_mutex map_mutex_;
  std::unordered_map<std::string, nlohmann::json> entries_;

  mutable std::mutex write_mutex_;
  std::vector<std::pair<std::string, nlohmann::json>> pending_;
  std::size_t next_segment_ = 0;
  std::size_t segments_ = 0;
};

}  // namespace halludetect

#include "halludetect/jsonl_store.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include <spdlog/spdlog.h>

#include "halludetect/error.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect {

namespace fs = std::filesystem;
using nlohmann::json;

JsonlStore::JsonlStore(fs::path dir, std::string stem, std::size_t batch_size)
    : dir_(std::move(dir)), stem_(std::move(stem)), batch_size_(std::max<std::size_t>(1, batch_size)) {
  if (!dir_.empty()) {
    fs::create_directories(dir_);
    Load();
  }
}

JsonlStore::~JsonlStore() {
  try {
    Flush();
  } catch (const std::exception& e) {
    spdlog::error("failed to flush {} store: {}", stem_, e.what());
  }
}

void JsonlStore::Load() {
  const std::string prefix = stem_ + "-";
  std::vector<std::pair<std::size_t, fs::path>> segments;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0 || entry.path().extension() != ".jsonl") continue;
    const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - 6);
    std::size_t seq = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), seq);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) continue;
    segments.emplace_back(seq, entry.path());
  }
  std::sort(segments.begin(), segments.end());

  for (const auto& [seq, path] : segments) {
    std::istringstream in(ReadFile(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (Trim(line).empty()) continue;
      json record;
      try {
        record = json::parse(line);
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::kParseError,
                    path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      entries_.try_emplace(record.at("key").get<std::string>(), std::move(record.at("value")));
    }
    next_segment_ = seq + 1;
    ++segments_;
  }
}

std::optional<json> JsonlStore::Get(const std::string& key) const {
  std::shared_lock lock(map_mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return std::optional<json>(std::in_place, it->second);
}

bool JsonlStore::Contains(const std::string& key) const {
  std::shared_lock lock(map_mutex_);
  return entries_.count(key) != 0;
}

bool JsonlStore::Put(const std::string& key, json value) {
  std::lock_guard write_lock(write_mutex_);
  {
    std::unique_lock lock(map_mutex_);
    if (!entries_.try_emplace(key, value).second) return false;
  }
  if (dir_.empty()) return true;
  pending_.emplace_back(key, std::move(value));
  if (pending_.size() >= batch_size_) FlushLocked();
  return true;
}

void JsonlStore::Flush() {
  std::lock_guard write_lock(write_mutex_);
  FlushLocked();
}

void JsonlStore::FlushLocked() {
  if (pending_.empty() || dir_.empty()) return;
  std::string body;
  for (const auto& [key, value] : pending_) {
    body += json{{"key", key}, {"value", value}}.dump();
    body.push_back('\n');
  }
  char name[32];
  std::snprintf(name, sizeof(name), "-%06zu.jsonl", next_segment_);
  WriteFileAtomic(dir_ / (stem_ + name), body);
  ++next_segment_;
  ++segments_;
  pending_.clear();
}

std::size_t JsonlStore::size() const {
  std::shared_lock lock(map_mutex_);
  return entries_.size();
}

std::size_t JsonlStore::segment_count() const {
  std::lock_guard write_lock(write_mutex_);
  return segments_;
}

}  // namespace halludetect

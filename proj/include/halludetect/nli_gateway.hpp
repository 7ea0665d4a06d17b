#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "halludetect/core_model.hpp"
#include "halludetect/jsonl_store.hpp"
#include "halludetect/llm_gateway.hpp"

namespace halludetect {

// Ordered NLI pair. `prefix_length` is the byte length of the shared question
// prefix (question plus joiner) in both texts; it never goes on the wire.
struct NliInput {
  std::string text_a;
  std::string text_b;
  std::size_t prefix_length = 0;

  bool operator==(const NliInput&) const = default;

  std::string_view answer_a() const { return std::string_view(text_a).substr(prefix_length); }
  std::string_view answer_b() const { return std::string_view(text_b).substr(prefix_length); }
};

// text_a = question + joiner + reference, text_b = question + joiner + candidate.
// The [SEP] between the two texts is inserted by the scorer's tokenizer.
NliInput BuildNliInput(std::string_view question, std::string_view reference,
                       std::string_view candidate, std::string_view joiner = " ");

class NliScorer {
 public:
  virtual ~NliScorer() = default;
  virtual std::string ModelVersion() = 0;
  // Raw logits, one verdict per pair, in order.
  virtual std::vector<NliVerdict> ScorePairs(std::span<const NliInput> pairs) = 0;
};

// Deterministic rule-based scorer for offline runs.
//
// Config layout:
//   {"model_version": "mock-nli-1",
//    "entailment_logits": [e, n, c], "contradiction_logits": [e, n, c],
//    "pairs": [{"text_a": ..., "text_b": ..., "logits": [e, n, c]}],
//    "flip_substrings": ["..."]}
//
// Explicit pairs win. Otherwise the answer segments (after the question
// prefix) are compared with NormalizeAnswer: equal gives the entailment
// logits, anything else the contradiction logits. When text_a contains one of
// `flip_substrings`, the rule verdict is swapped.
class ScriptedMockNli : public NliScorer {
 public:
  struct Config {
    std::string model_version = "mock-nli-1";
    NliVerdict entailment{9.0, 0.0, -9.0};
    NliVerdict contradiction{-8.0, -1.0, 8.0};
    std::vector<std::pair<std::pair<std::string, std::string>, NliVerdict>> pairs;
    std::vector<std::string> flip_substrings;
  };

  explicit ScriptedMockNli(Config config);
  static Config ParseConfig(const nlohmann::json& j);
  static std::shared_ptr<ScriptedMockNli> FromFile(const std::filesystem::path& path);

  std::string ModelVersion() override { return config_.model_version; }
  std::vector<NliVerdict> ScorePairs(std::span<const NliInput> pairs) override;

  std::size_t calls() const { return calls_.load(); }
  std::size_t pairs_scored() const { return pairs_scored_.load(); }
  void ResetCounters() {
    calls_ = 0;
    pairs_scored_ = 0;
  }

 private:
  NliVerdict ScoreOne(const NliInput& input) const;

  Config config_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> pairs_scored_{0};
};

// Sidecar client: POST {endpoint}/v1/nli, GET {endpoint}/healthz.
class HttpNliScorer : public NliScorer {
 public:
  HttpNliScorer(std::string endpoint_url, int timeout_ms);

  std::string ModelVersion() override;
  std::vector<NliVerdict> ScorePairs(std::span<const NliInput> pairs) override;

 private:
  std::string endpoint_url_;
  int timeout_ms_;
  std::mutex version_mutex_;
  std::optional<std::string> model_version_;
};

struct NliConfig {
  enum class Kind { kHttp, kMock } kind = Kind::kMock;
  std::optional<std::string> endpoint_url;
  std::optional<std::filesystem::path> mock_script;
  std::string joiner = " ";
  int max_in_flight = 4;
  int max_batch = 32;
  int timeout_ms = 30000;
  int retry_limit = 2;

  static NliConfig FromJson(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

std::shared_ptr<NliScorer> MakeNliScorer(const NliConfig& config);

struct NliGatewayOptions {
  int max_in_flight = 4;
  int max_batch = 32;
  int retry_limit = 2;
};

// Cached NLI access keyed by (model_version, text_a, text_b).
class NliGateway {
 public:
  NliGateway(std::shared_ptr<NliScorer> scorer, std::shared_ptr<JsonlStore> cache,
             NliGatewayOptions options = {});

  NliVerdict Score(const NliInput& input);

  // Order-preserving; each distinct uncached pair is sent once.
  std::vector<NliVerdict> ScoreBatch(std::span<const NliInput> inputs);

  const std::string& model_version() const { return model_version_; }

 private:
  std::string KeyFor(const NliInput& input) const;
  std::vector<NliVerdict> CallWithRetry(std::span<const NliInput> pairs);

  std::shared_ptr<NliScorer> scorer_;
  std::shared_ptr<JsonlStore> cache_;
  NliGatewayOptions options_;
  std::string model_version_;
  InFlightLimiter limiter_;
};

}  // namespace halludetect

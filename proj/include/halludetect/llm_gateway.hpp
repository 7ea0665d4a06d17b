#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "halludetect/core_model.hpp"
#include "halludetect/jsonl_store.hpp"
#include "halludetect/prompting.hpp"

namespace halludetect {

enum class BackendKind { kHttpCompletion, kScriptedMock };

struct BackendConfig {
  BackendKind kind = BackendKind::kScriptedMock;
  std::optional<std::string> endpoint_url;
  std::string model_name = "mock";
  std::string auth_env_var = "OPENAI_API_KEY";
  int max_in_flight = 4;
  int timeout_ms = 30000;
  int retry_limit = 2;
  // Script for kScriptedMock, resolved against the manifest directory.
  std::optional<std::filesystem::path> mock_script;

  void Validate() const;
  std::string BackendId() const;
  static BackendConfig FromJson(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

// Fingerprint of the decoding parameters that change a completion. n_samples
// is excluded: each sample has its own index in the key, so raising n reuses
// the samples already drawn.
std::string ParamsFingerprint(const DecodingParams& params);

struct CacheKey {
  std::string backend_id;
  std::string prompt_fingerprint;
  std::string params_fingerprint;
  int sample_index = 0;

  std::string Digest() const;
};

struct RawCompletion {
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
  FinishReason finish_reason = FinishReason::kStop;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;

  // One completion per requested sample index, in request order. Throws
  // kBackendUnreachable or kTimeout for transient failures.
  virtual std::vector<RawCompletion> Generate(const std::string& prompt,
                                              const DecodingParams& params,
                                              std::span<const int> sample_indices) = 0;
};

// Table-driven offline backend.
//
// Script layout:
//   {"rules": [{"match": "<prompt substring>", "text": "...",
//               "token_logprobs": [...] | null, "finish_reason": "stop",
//               "samples": [{"text": "...", "token_logprobs": [...]}, ...]}],
//    "default": {"text": "...", "token_logprobs": [...]}}
//
// The rule with the longest matching substring wins (ties: earliest rule).
// Greedy requests (temperature 0) return the rule's own text; sampled requests
// return samples[(sample_index + seed) % samples.size()], falling back to the
// rule text when no samples are scripted.
class ScriptedMockBackend : public CompletionBackend {
 public:
  explicit ScriptedMockBackend(const nlohmann::json& script);
  static std::shared_ptr<ScriptedMockBackend> FromFile(const std::filesystem::path& path);

  std::vector<RawCompletion> Generate(const std::string& prompt, const DecodingParams& params,
                                      std::span<const int> sample_indices) override;

  std::size_t calls() const { return calls_.load(); }
  std::size_t max_concurrent() const { return max_concurrent_.load(); }
  void ResetCounters();

  // Test hooks: sleep inside each call, or fail the next `n` calls as unreachable.
  void set_delay_ms(int ms) { delay_ms_ = ms; }
  void FailNextCalls(int n) { fail_budget_ = n; }

 private:
  struct Reply {
    RawCompletion greedy;
    std::vector<RawCompletion> samples;
  };
  struct Rule {
    std::string match;
    Reply reply;
  };

  const Reply& Lookup(const std::string& prompt) const;

  std::vector<Rule> rules_;
  std::optional<Reply> default_reply_;

  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_concurrent_{0};
  std::atomic<int> delay_ms_{0};
  std::atomic<int> fail_budget_{0};
};

// OpenAI-compatible completions client: POST {endpoint}/completions.
class HttpCompletionBackend : public CompletionBackend {
 public:
  explicit HttpCompletionBackend(BackendConfig config);

  std::vector<RawCompletion> Generate(const std::string& prompt, const DecodingParams& params,
                                      std::span<const int> sample_indices) override;

 private:
  BackendConfig config_;
};

std::shared_ptr<CompletionBackend> MakeCompletionBackend(const BackendConfig& config);

// Counting gate bounding the number of concurrently outstanding requests.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int limit);

  class Ticket {
   public:
    explicit Ticket(InFlightLimiter& owner) : owner_(owner) { owner_.Acquire(); }
    ~Ticket() { owner_.Release(); }
    Ticket(const Ticket&) = delete;
    Ticket& operator=(const Ticket&) = delete;

   private:
    InFlightLimiter& owner_;
  };

 private:
  void Acquire();
  void Release();

  int available_;
  std::mutex mutex_;
  std::condition_variable cv_;
};

struct GatewayOptions {
  int max_in_flight = 4;
  int retry_limit = 2;
};

// Cached completion access. Without a backend the gateway runs cache-only and
// a miss raises kMissingGeneration.
class LlmGateway {
 public:
  LlmGateway(std::string backend_id, std::shared_ptr<CompletionBackend> backend,
             std::shared_ptr<JsonlStore> cache, GatewayOptions options = {});

  // Single completion cached under sample_index 0. Requires token logprobs.
  Generation Complete(const PromptRendering& prompt, const DecodingParams& params);

  // Exactly n generations, sample indices 0..n-1. Logprobs are optional here;
  // metrics that need them raise kMissingLogprobs when they are absent.
  std::vector<Generation> SampleN(const PromptRendering& prompt, const DecodingParams& params,
                                  int n);

  std::optional<Generation> Lookup(const PromptRendering& prompt, const DecodingParams& params,
                                   int sample_index) const;

  const std::string& backend_id() const { return backend_id_; }
  bool cache_only() const { return backend_ == nullptr; }

 private:
  CacheKey KeyFor(const std::string& prompt_fingerprint, const DecodingParams& params,
                  int sample_index) const;
  std::vector<RawCompletion> CallWithRetry(const std::string& prompt,
                                           const DecodingParams& params,
                                           std::span<const int> indices);

  std::string backend_id_;
  std::shared_ptr<CompletionBackend> backend_;
  std::shared_ptr<JsonlStore> cache_;
  GatewayOptions options_;
  InFlightLimiter limiter_;
};

}  // namespace halludetect

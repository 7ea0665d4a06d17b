#include "halludetect/llm_gateway.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

#include <spdlog/spdlog.h>

#include "halludetect/error.hpp"
#include "halludetect/hashing.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect {

using nlohmann::json;

void BackendConfig::Validate() const {
  if (kind == BackendKind::kHttpCompletion && (!endpoint_url || endpoint_url->empty())) {
    throw Error(ErrorCode::kInvalidConfig, "HttpCompletion backend requires endpoint_url");
  }
  if (kind == BackendKind::kScriptedMock && !mock_script) {
    throw Error(ErrorCode::kInvalidConfig, "ScriptedMock backend requires mock_script");
  }
  if (max_in_flight < 1) throw Error(ErrorCode::kInvalidConfig, "max_in_flight must be >= 1");
  if (timeout_ms < 1) throw Error(ErrorCode::kInvalidConfig, "timeout_ms must be >= 1");
  if (retry_limit < 0) throw Error(ErrorCode::kInvalidConfig, "retry_limit must be >= 0");
}

std::string BackendConfig::BackendId() const {
  return std::string(kind == BackendKind::kHttpCompletion ? "http" : "mock") + ":" + model_name;
}

BackendConfig BackendConfig::FromJson(const json& j, const std::filesystem::path& base_dir) {
  BackendConfig c;
  const std::string kind = j.value("kind", std::string("ScriptedMock"));
  if (kind == "HttpCompletion") {
    c.kind = BackendKind::kHttpCompletion;
  } else if (kind == "ScriptedMock") {
    c.kind = BackendKind::kScriptedMock;
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown backend kind '" + kind + "'");
  }
  if (j.contains("endpoint_url") && !j.at("endpoint_url").is_null()) {
    c.endpoint_url = j.at("endpoint_url").get<std::string>();
  }
  c.model_name = j.value("model_name", c.model_name);
  c.auth_env_var = j.value("auth_env_var", c.auth_env_var);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.retry_limit = j.value("retry_limit", c.retry_limit);
  if (j.contains("mock_script") && !j.at("mock_script").is_null()) {
    std::filesystem::path p = j.at("mock_script").get<std::string>();
    c.mock_script = p.is_absolute() ? p : base_dir / p;
  }
  c.Validate();
  return c;
}

std::string ParamsFingerprint(const DecodingParams& params) {
  json j = {{"temperature", params.temperature}, {"max_tokens", params.max_tokens}};
  j["seed"] = params.seed ? json(*params.seed) : json(nullptr);
  return Sha256Hex(j.dump());
}

std::string CacheKey::Digest() const {
  return Sha256Hex(json::array({backend_id, prompt_fingerprint, params_fingerprint, sample_index})
                       .dump());
}

namespace {

RawCompletion ParseScriptedReply(const json& j) {
  RawCompletion r;
  r.text = j.at("text").get<std::string>();
  if (j.contains("token_logprobs") && !j.at("token_logprobs").is_null()) {
    r.token_logprobs = j.at("token_logprobs").get<std::vector<double>>();
  }
  r.finish_reason = ParseFinishReason(j.value("finish_reason", std::string("stop")));
  return r;
}

}  // namespace

ScriptedMockBackend::ScriptedMockBackend(const json& script) {
  auto parse_reply = [](const json& j) {
    Reply reply;
    reply.greedy = ParseScriptedReply(j);
    if (j.contains("samples")) {
      for (const auto& s : j.at("samples")) reply.samples.push_back(ParseScriptedReply(s));
    }
    return reply;
  };
  try {
    if (script.contains("rules")) {
      for (const auto& r : script.at("rules")) {
        rules_.push_back(Rule{r.at("match").get<std::string>(), parse_reply(r)});
      }
    }
    if (script.contains("default") && !script.at("default").is_null()) {
      default_reply_ = parse_reply(script.at("default"));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("malformed mock script: ") + e.what());
  }
}

std::shared_ptr<ScriptedMockBackend> ScriptedMockBackend::FromFile(
    const std::filesystem::path& path) {
  json script;
  try {
    script = json::parse(ReadFile(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  return std::make_shared<ScriptedMockBackend>(script);
}

const ScriptedMockBackend::Reply& ScriptedMockBackend::Lookup(const std::string& prompt) const {
  const Rule* best = nullptr;
  for (const auto& rule : rules_) {
    if (prompt.find(rule.match) == std::string::npos) continue;
    if (best == nullptr || rule.match.size() > best->match.size()) best = &rule;
  }
  if (best != nullptr) return best->reply;
  if (default_reply_) return *default_reply_;
  throw Error(ErrorCode::kInvalidConfig, "mock script has no reply for prompt: " + prompt);
}

void ScriptedMockBackend::ResetCounters() {
  calls_ = 0;
  max_concurrent_ = 0;
}

std::vector<RawCompletion> ScriptedMockBackend::Generate(const std::string& prompt,
                                                         const DecodingParams& params,
                                                         std::span<const int> sample_indices) {
  ++calls_;
  const std::size_t now = ++in_flight_;
  std::size_t seen = max_concurrent_.load();
  while (now > seen && !max_concurrent_.compare_exchange_weak(seen, now)) {
  }
  struct Leave {
    std::atomic<std::size_t>& c;
    ~Leave() { --c; }
  } leave{in_flight_};

  if (const int ms = delay_ms_.load(); ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  }
  if (fail_budget_.load() > 0 && fail_budget_.fetch_sub(1) > 0) {
    throw Error(ErrorCode::kBackendUnreachable, "scripted failure");
  }

  const Reply& reply = Lookup(prompt);
  const std::uint64_t shift = params.seed.value_or(0);
  std::vector<RawCompletion> out;
  out.reserve(sample_indices.size());
  for (int idx : sample_indices) {
    if (params.temperature == 0.0 || reply.samples.empty()) {
      out.push_back(reply.greedy);
    } else {
      out.push_back(reply.samples[(static_cast<std::uint64_t>(idx) + shift) % reply.samples.size()]);
    }
  }
  return out;
}

std::shared_ptr<CompletionBackend> MakeCompletionBackend(const BackendConfig& config) {
  config.Validate();
  if (config.kind == BackendKind::kScriptedMock) {
    return ScriptedMockBackend::FromFile(*config.mock_script);
  }
  return std::make_shared<HttpCompletionBackend>(config);
}

InFlightLimiter::InFlightLimiter(int limit) : available_(std::max(1, limit)) {}

void InFlightLimiter::Acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return available_ > 0; });
  --available_;
}

void InFlightLimiter::Release() {
  {
    std::lock_guard lock(mutex_);
    ++available_;
  }
  cv_.notify_one();
}

LlmGateway::LlmGateway(std::string backend_id, std::shared_ptr<CompletionBackend> backend,
                       std::shared_ptr<JsonlStore> cache, GatewayOptions options)
    : backend_id_(std::move(backend_id)),
      backend_(std::move(backend)),
      cache_(cache ? std::move(cache) : std::make_shared<JsonlStore>("", "completions")),
      options_(options),
      limiter_(options.max_in_flight) {}

CacheKey LlmGateway::KeyFor(const std::string& prompt_fingerprint, const DecodingParams& params,
                            int sample_index) const {
  return CacheKey{backend_id_, prompt_fingerprint, ParamsFingerprint(params), sample_index};
}

std::vector<RawCompletion> LlmGateway::CallWithRetry(const std::string& prompt,
                                                     const DecodingParams& params,
                                                     std::span<const int> indices) {
  for (int attempt = 0;; ++attempt) {
    try {
      InFlightLimiter::Ticket ticket(limiter_);
      auto replies = backend_->Generate(prompt, params, indices);
      if (replies.size() != indices.size()) {
        throw Error(ErrorCode::kBackendUnreachable,
                    "backend returned " + std::to_string(replies.size()) + " completions, expected " +
                        std::to_string(indices.size()));
      }
      return replies;
    } catch (const Error& e) {
      const bool transient =
          e.code() == ErrorCode::kBackendUnreachable || e.code() == ErrorCode::kTimeout;
      if (!transient || attempt >= options_.retry_limit) throw;
      spdlog::warn("completion attempt {} failed ({}), retrying", attempt + 1, e.what());
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
    }
  }
}

std::optional<Generation> LlmGateway::Lookup(const PromptRendering& prompt,
                                             const DecodingParams& params,
                                             int sample_index) const {
  auto hit = cache_->Get(KeyFor(Sha256Hex(prompt.text), params, sample_index).Digest());
  if (!hit) return std::nullopt;
  return hit->get<Generation>();
}

Generation LlmGateway::Complete(const PromptRendering& prompt, const DecodingParams& params) {
  params.Validate();
  const std::string fingerprint = Sha256Hex(prompt.text);
  const std::string key = KeyFor(fingerprint, params, 0).Digest();
  if (auto hit = cache_->Get(key)) {
    Generation g = hit->get<Generation>();
    g.RequireLogprobs();
    return g;
  }
  if (!backend_) {
    throw Error(ErrorCode::kMissingGeneration,
                "no cached completion for question '" + prompt.question_id + "'" +
                    (prompt.expression_id ? " expression '" + *prompt.expression_id + "'" : ""));
  }
  const int index = 0;
  RawCompletion raw = CallWithRetry(prompt.text, params, std::span<const int>(&index, 1)).front();
  if (!raw.token_logprobs) {
    throw Error(ErrorCode::kMissingLogprobs,
                "backend returned no token logprobs for question '" + prompt.question_id + "'");
  }
  Generation g{std::move(raw.text), std::move(raw.token_logprobs), raw.finish_reason, fingerprint};
  cache_->Put(key, json(g));
  return g;
}

std::vector<Generation> LlmGateway::SampleN(const PromptRendering& prompt,
                                            const DecodingParams& params, int n) {
  params.Validate();
  if (n < 1) throw Error(ErrorCode::kInvalidSampling, "n must be positive");
  if (n > 1 && params.temperature == 0.0) {
    throw Error(ErrorCode::kInvalidSampling,
                "requested " + std::to_string(n) + " samples at temperature 0");
  }
  const std::string fingerprint = Sha256Hex(prompt.text);
  std::vector<std::optional<Generation>> slots(n);
  std::vector<std::string> keys(n);
  std::vector<int> missing;
  for (int i = 0; i < n; ++i) {
    keys[i] = KeyFor(fingerprint, params, i).Digest();
    if (auto hit = cache_->Get(keys[i])) {
      slots[i] = hit->get<Generation>();
    } else {
      missing.push_back(i);
    }
  }
  if (!missing.empty()) {
    if (!backend_) {
      throw Error(ErrorCode::kMissingGeneration,
                  "missing " + std::to_string(missing.size()) + " cached samples for question '" +
                      prompt.question_id + "'");
    }
    auto replies = CallWithRetry(prompt.text, params, missing);
    for (std::size_t k = 0; k < missing.size(); ++k) {
      Generation g{std::move(replies[k].text), std::move(replies[k].token_logprobs),
                   replies[k].finish_reason, fingerprint};
      cache_->Put(keys[missing[k]], json(g));
      slots[missing[k]] = std::move(g);
    }
  }
  std::vector<Generation> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace halludetect

#include "halludetect/nli_gateway.hpp"

#include <algorithm>
#include <chrono>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "halludetect/confidence_metrics.hpp"
#include "halludetect/error.hpp"
#include "halludetect/hashing.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect {

using nlohmann::json;

NliInput BuildNliInput(std::string_view question, std::string_view reference,
                       std::string_view candidate, std::string_view joiner) {
  if (question.empty()) throw Error(ErrorCode::kEmptyField, "NLI question is empty");
  if (reference.empty()) throw Error(ErrorCode::kEmptyField, "NLI reference is empty");
  if (candidate.empty()) throw Error(ErrorCode::kEmptyField, "NLI candidate is empty");
  NliInput in;
  in.text_a.append(question).append(joiner).append(reference);
  in.text_b.append(question).append(joiner).append(candidate);
  in.prefix_length = question.size() + joiner.size();
  return in;
}

namespace {

NliVerdict VerdictFromArray(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::kInvalidConfig, "logits must be an array [entailment, neutral, contradiction]");
  }
  return NliVerdict{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

ScriptedMockNli::ScriptedMockNli(Config config) : config_(std::move(config)) {}

ScriptedMockNli::Config ScriptedMockNli::ParseConfig(const json& j) {
  Config c;
  try {
    c.model_version = j.value("model_version", c.model_version);
    if (j.contains("entailment_logits")) c.entailment = VerdictFromArray(j.at("entailment_logits"));
    if (j.contains("contradiction_logits")) {
      c.contradiction = VerdictFromArray(j.at("contradiction_logits"));
    }
    if (j.contains("pairs")) {
      for (const auto& p : j.at("pairs")) {
        c.pairs.push_back({{p.at("text_a").get<std::string>(), p.at("text_b").get<std::string>()},
                           VerdictFromArray(p.at("logits"))});
      }
    }
    if (j.contains("flip_substrings")) {
      c.flip_substrings = j.at("flip_substrings").get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("malformed mock NLI config: ") + e.what());
  }
  return c;
}

std::shared_ptr<ScriptedMockNli> ScriptedMockNli::FromFile(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(ReadFile(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  return std::make_shared<ScriptedMockNli>(ParseConfig(j));
}

NliVerdict ScriptedMockNli::ScoreOne(const NliInput& input) const {
  for (const auto& [texts, verdict] : config_.pairs) {
    if (texts.first == input.text_a && texts.second == input.text_b) return verdict;
  }
  const bool same = NormalizeAnswer(input.answer_a()) == NormalizeAnswer(input.answer_b());
  const bool flip = std::any_of(config_.flip_substrings.begin(), config_.flip_substrings.end(),
                                [&](const std::string& s) {
                                  return input.text_a.find(s) != std::string::npos;
                                });
  return (same != flip) ? config_.entailment : config_.contradiction;
}

std::vector<NliVerdict> ScriptedMockNli::ScorePairs(std::span<const NliInput> pairs) {
  ++calls_;
  pairs_scored_ += pairs.size();
  std::vector<NliVerdict> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(ScoreOne(p));
  return out;
}

NliConfig NliConfig::FromJson(const json& j, const std::filesystem::path& base_dir) {
  NliConfig c;
  const std::string kind = j.value("kind", std::string("mock"));
  if (kind == "http") {
    c.kind = Kind::kHttp;
  } else if (kind == "mock") {
    c.kind = Kind::kMock;
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown NLI kind '" + kind + "'");
  }
  if (j.contains("endpoint_url") && !j.at("endpoint_url").is_null()) {
    c.endpoint_url = j.at("endpoint_url").get<std::string>();
  }
  if (j.contains("mock_script") && !j.at("mock_script").is_null()) {
    std::filesystem::path p = j.at("mock_script").get<std::string>();
    c.mock_script = p.is_absolute() ? p : base_dir / p;
  }
  c.joiner = j.value("joiner", c.joiner);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.max_batch = j.value("max_batch", c.max_batch);
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.retry_limit = j.value("retry_limit", c.retry_limit);
  if (c.kind == Kind::kHttp && !c.endpoint_url) {
    throw Error(ErrorCode::kInvalidConfig, "http NLI scorer requires endpoint_url");
  }
  if (c.max_in_flight < 1 || c.max_batch < 1) {
    throw Error(ErrorCode::kInvalidConfig, "NLI max_in_flight and max_batch must be >= 1");
  }
  return c;
}

std::shared_ptr<NliScorer> MakeNliScorer(const NliConfig& config) {
  if (config.kind == NliConfig::Kind::kHttp) {
    return std::make_shared<HttpNliScorer>(*config.endpoint_url, config.timeout_ms);
  }
  if (config.mock_script) return ScriptedMockNli::FromFile(*config.mock_script);
  return std::make_shared<ScriptedMockNli>(ScriptedMockNli::Config{});
}

NliGateway::NliGateway(std::shared_ptr<NliScorer> scorer, std::shared_ptr<JsonlStore> cache,
                       NliGatewayOptions options)
    : scorer_(std::move(scorer)),
      cache_(cache ? std::move(cache) : std::make_shared<JsonlStore>("", "nli")),
      options_(options),
      limiter_(options.max_in_flight) {
  if (!scorer_) throw Error(ErrorCode::kInvalidConfig, "NLI gateway needs a scorer");
  model_version_ = scorer_->ModelVersion();
}

std::string NliGateway::KeyFor(const NliInput& input) const {
  return Sha256Hex(json::array({model_version_, input.text_a, input.text_b}).dump());
}

std::vector<NliVerdict> NliGateway::CallWithRetry(std::span<const NliInput> pairs) {
  for (int attempt = 0;; ++attempt) {
    try {
      InFlightLimiter::Ticket ticket(limiter_);
      auto verdicts = scorer_->ScorePairs(pairs);
      if (verdicts.size() != pairs.size()) {
        throw Error(ErrorCode::kMalformedScorerReply,
                    "scorer returned " + std::to_string(verdicts.size()) + " verdicts for " +
                        std::to_string(pairs.size()) + " pairs");
      }
      for (const auto& v : verdicts) {
        if (!v.AllFinite()) throw Error(ErrorCode::kMalformedScorerReply, "non-finite logit");
      }
      return verdicts;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kScorerUnreachable || attempt >= options_.retry_limit) throw;
      spdlog::warn("NLI attempt {} failed ({}), retrying", attempt + 1, e.what());
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
    }
  }
}

NliVerdict NliGateway::Score(const NliInput& input) {
  return ScoreBatch(std::span<const NliInput>(&input, 1)).front();
}

std::vector<NliVerdict> NliGateway::ScoreBatch(std::span<const NliInput> inputs) {
  if (inputs.empty()) throw Error(ErrorCode::kEmptyInput, "empty NLI batch");
  std::vector<std::optional<NliVerdict>> out(inputs.size());
  std::vector<std::string> keys(inputs.size());
  // Distinct uncached keys in first-seen order, with every position needing them.
  std::vector<std::size_t> unique_misses;
  std::unordered_map<std::string, std::vector<std::size_t>> waiting;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].text_a.empty() || inputs[i].text_b.empty()) {
      throw Error(ErrorCode::kEmptyField, "NLI input texts must be nonempty");
    }
    keys[i] = KeyFor(inputs[i]);
    if (auto hit = cache_->Get(keys[i])) {
      out[i] = hit->get<NliVerdict>();
      continue;
    }
    auto& slot = waiting[keys[i]];
    if (slot.empty()) unique_misses.push_back(i);
    slot.push_back(i);
  }

  const std::size_t batch = static_cast<std::size_t>(std::max(1, options_.max_batch));
  for (std::size_t start = 0; start < unique_misses.size(); start += batch) {
    const std::size_t end = std::min(unique_misses.size(), start + batch);
    std::vector<NliInput> chunk;
    chunk.reserve(end - start);
    for (std::size_t k = start; k < end; ++k) chunk.push_back(inputs[unique_misses[k]]);
    auto verdicts = CallWithRetry(chunk);
    for (std::size_t k = start; k < end; ++k) {
      const std::string& key = keys[unique_misses[k]];
      cache_->Put(key, json(verdicts[k - start]));
      for (std::size_t pos : waiting[key]) out[pos] = verdicts[k - start];
    }
  }

  std::vector<NliVerdict> result;
  result.reserve(out.size());
  for (auto& v : out) result.push_back(*v);
  return result;
}

}  // namespace halludetect

// HTTP clients for the completion endpoint and the NLI sidecar.

#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "halludetect/error.hpp"
#include "halludetect/llm_gateway.hpp"
#include "halludetect/nli_gateway.hpp"

namespace halludetect {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string origin;     // scheme://host[:port]
  std::string base_path;  // no trailing slash
};

Endpoint SplitEndpoint(const std::string& url) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) {
    throw Error(ErrorCode::kInvalidConfig, "malformed endpoint URL '" + url + "'");
  }
  std::string path = m[2].matched ? m[2].str() : "";
  while (!path.empty() && path.back() == '/') path.pop_back();
  return Endpoint{m[1].str(), path};
}

httplib::Client MakeClient(const Endpoint& ep, int timeout_ms) {
  httplib::Client client(ep.origin);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  return client;
}

[[noreturn]] void ThrowTransport(httplib::Error err, ErrorCode unreachable, const std::string& what) {
  if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
    throw Error(unreachable == ErrorCode::kBackendUnreachable ? ErrorCode::kTimeout : unreachable,
                what + ": " + httplib::to_string(err));
  }
  throw Error(unreachable, what + ": " + httplib::to_string(err));
}

}  // namespace

HttpCompletionBackend::HttpCompletionBackend(BackendConfig config) : config_(std::move(config)) {
  config_.Validate();
}

std::vector<RawCompletion> HttpCompletionBackend::Generate(const std::string& prompt,
                                                           const DecodingParams& params,
                                                           std::span<const int> sample_indices) {
  const Endpoint ep = SplitEndpoint(*config_.endpoint_url);
  auto client = MakeClient(ep, config_.timeout_ms);

  httplib::Headers headers;
  if (const char* token = std::getenv(config_.auth_env_var.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  json body = {{"model", config_.model_name},
               {"prompt", prompt},
               {"temperature", params.temperature},
               {"max_tokens", params.max_tokens},
               {"logprobs", 1},
               {"n", static_cast<int>(sample_indices.size())}};
  if (params.seed) body["seed"] = *params.seed;

  auto res = client.Post(ep.base_path + "/completions", headers, body.dump(), "application/json");
  if (!res) ThrowTransport(res.error(), ErrorCode::kBackendUnreachable, "completion request failed");
  if (res->status == 429 || res->status >= 500) {
    throw Error(ErrorCode::kBackendUnreachable,
                "completion endpoint returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kInvalidArgument, "completion endpoint returned HTTP " +
                                                 std::to_string(res->status) + ": " + res->body);
  }

  std::vector<RawCompletion> out;
  try {
    const json reply = json::parse(res->body);
    std::vector<json> choices = reply.at("choices").get<std::vector<json>>();
    std::stable_sort(choices.begin(), choices.end(), [](const json& a, const json& b) {
      return a.value("index", 0) < b.value("index", 0);
    });
    for (const auto& choice : choices) {
      RawCompletion r;
      r.text = choice.at("text").get<std::string>();
      r.finish_reason = ParseFinishReason(choice.value("finish_reason", std::string("stop")));
      if (choice.contains("logprobs") && choice.at("logprobs").is_object() &&
          choice.at("logprobs").contains("token_logprobs") &&
          choice.at("logprobs").at("token_logprobs").is_array()) {
        std::vector<double> lps;
        bool complete = true;
        for (const auto& lp : choice.at("logprobs").at("token_logprobs")) {
          if (!lp.is_number()) {
            complete = false;
            break;
          }
          lps.push_back(lp.get<double>());
        }
        if (complete) r.token_logprobs = std::move(lps);
      }
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("malformed completion reply: ") + e.what());
  }
  return out;
}

HttpNliScorer::HttpNliScorer(std::string endpoint_url, int timeout_ms)
    : endpoint_url_(std::move(endpoint_url)), timeout_ms_(timeout_ms) {
  SplitEndpoint(endpoint_url_);
}

std::string HttpNliScorer::ModelVersion() {
  std::lock_guard lock(version_mutex_);
  if (model_version_) return *model_version_;
  const Endpoint ep = SplitEndpoint(endpoint_url_);
  auto client = MakeClient(ep, timeout_ms_);
  auto res = client.Get(ep.base_path + "/healthz");
  if (!res) ThrowTransport(res.error(), ErrorCode::kScorerUnreachable, "NLI health check failed");
  if (res->status != 200) {
    throw Error(ErrorCode::kScorerUnreachable,
                "NLI sidecar not ready (HTTP " + std::to_string(res->status) + ")");
  }
  try {
    const json reply = json::parse(res->body);
    model_version_ = reply.at("model_version").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedScorerReply, std::string("bad /healthz reply: ") + e.what());
  }
  return *model_version_;
}

std::vector<NliVerdict> HttpNliScorer::ScorePairs(std::span<const NliInput> pairs) {
  const std::string expected_version = ModelVersion();
  const Endpoint ep = SplitEndpoint(endpoint_url_);
  auto client = MakeClient(ep, timeout_ms_);

  json body = {{"pairs", json::array()}};
  for (const auto& p : pairs) body["pairs"].push_back({{"text_a", p.text_a}, {"text_b", p.text_b}});
  auto res = client.Post(ep.base_path + "/v1/nli", body.dump(), "application/json");
  if (!res) ThrowTransport(res.error(), ErrorCode::kScorerUnreachable, "NLI request failed");
  if (res->status == 503 || res->status >= 500) {
    throw Error(ErrorCode::kScorerUnreachable, "NLI sidecar returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kMalformedScorerReply,
                "NLI sidecar rejected request (HTTP " + std::to_string(res->status) + "): " + res->body);
  }

  std::vector<NliVerdict> out;
  try {
    const json reply = json::parse(res->body);
    const std::string version = reply.at("model_version").get<std::string>();
    if (version != expected_version) {
      throw Error(ErrorCode::kMalformedScorerReply, "sidecar model_version changed from '" +
                                                        expected_version + "' to '" + version + "'");
    }
    for (const auto& v : reply.at("verdicts")) {
      out.push_back(NliVerdict{v.at("entailment").get<double>(), v.at("neutral").get<double>(),
                               v.at("contradiction").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedScorerReply, std::string("bad /v1/nli reply: ") + e.what());
  }
  if (out.size() != pairs.size()) {
    throw Error(ErrorCode::kMalformedScorerReply, "verdict count does not match pair count");
  }
  return out;
}

}  // namespace halludetect

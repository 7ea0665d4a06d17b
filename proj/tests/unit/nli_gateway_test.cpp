#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "halludetect/error.hpp"
#include "halludetect/nli_gateway.hpp"
#include "synthetic.hpp"

namespace hd = halludetect;
using nlohmann::json;

namespace {

hd::ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const hd::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return hd::ErrorCode::kIo;
}

// Scorer returning whatever the test configures, for malformed-reply paths.
class RawScorer : public hd::NliScorer {
 public:
  std::function<std::vector<hd::NliVerdict>(std::span<const hd::NliInput>)> reply;
  int failures_left = 0;
  int calls = 0;
  std::string ModelVersion() override { return "raw"; }
  std::vector<hd::NliVerdict> ScorePairs(std::span<const hd::NliInput> pairs) override {
    ++calls;
    if (failures_left > 0) {
      --failures_left;
      throw hd::Error(hd::ErrorCode::kScorerUnreachable, "down");
    }
    return reply(pairs);
  }
};

}  // namespace

TEST(BuildNliInput, ConcatenatesQuestionAndAnswer) {
  const auto in = hd::BuildNliInput("Q?", "Paris", "Lyon");
  EXPECT_EQ(in.text_a, "Q? Paris");
  EXPECT_EQ(in.text_b, "Q? Lyon");
  EXPECT_EQ(in.answer_a(), "Paris");
  EXPECT_EQ(in.answer_b(), "Lyon");
  const auto same = hd::BuildNliInput("Q?", "Paris", "Paris");
  EXPECT_EQ(same.text_a, same.text_b);
  EXPECT_EQ(hd::BuildNliInput("Q?", "a", "b", "\n").text_a, "Q?\na");
  EXPECT_EQ(CodeOf([] { hd::BuildNliInput("Q?", "Paris", ""); }), hd::ErrorCode::kEmptyField);
  EXPECT_EQ(CodeOf([] { hd::BuildNliInput("", "Paris", "x"); }), hd::ErrorCode::kEmptyField);
}

TEST(ScriptedMockNli, RuleVerdicts) {
  auto mock = std::make_shared<hd::ScriptedMockNli>(hd::ScriptedMockNli::Config{});
  hd::NliGateway gw(mock, nullptr);
  const auto eq = gw.Score(hd::BuildNliInput("Q?", "Paris", "Paris"));
  EXPECT_EQ(eq.logit_entailment, 9.0);
  EXPECT_EQ(eq.Argmax(), hd::NliVerdict::Label::kEntailment);
  const auto ne = gw.Score(hd::BuildNliInput("Q?", "Paris", "Lyon"));
  EXPECT_EQ(ne.Argmax(), hd::NliVerdict::Label::kContradiction);
  // Comparison uses normalized answers, so prefixes and case do not matter.
  EXPECT_EQ(gw.Score(hd::BuildNliInput("Q?", "Paris", "It must be paris.")).logit_entailment, 9.0);
}

TEST(ScriptedMockNli, ExplicitPairsAndFlips) {
  const auto cfg = hd::ScriptedMockNli::ParseConfig(
      {{"model_version", "m2"},
       {"pairs", {{{"text_a", "Q? It's Paris"}, {"text_b", "Q? Paris, I think"}, {"logits", {3, 1, 0}}}}},
       {"flip_substrings", {"entity 7?"}}});
  auto mock = std::make_shared<hd::ScriptedMockNli>(cfg);
  EXPECT_EQ(mock->ModelVersion(), "m2");
  const auto explicit_pair = hd::BuildNliInput("Q?", "It's Paris", "Paris, I think");
  EXPECT_EQ(mock->ScorePairs(std::span(&explicit_pair, 1))[0], (hd::NliVerdict{3, 1, 0}));
  const auto flipped = hd::BuildNliInput("entity 7?", "A", "A");
  EXPECT_EQ(mock->ScorePairs(std::span(&flipped, 1))[0].Argmax(), hd::NliVerdict::Label::kContradiction);
  const auto untouched = hd::BuildNliInput("entity 70?", "A", "A");
  EXPECT_EQ(mock->ScorePairs(std::span(&untouched, 1))[0].Argmax(), hd::NliVerdict::Label::kEntailment);
  EXPECT_THROW(hd::ScriptedMockNli::ParseConfig({{"entailment_logits", {1, 2}}}), hd::Error);
}

TEST(NliGateway, BatchEqualsElementwiseAndPermutes) {
  std::mt19937_64 rng(17);
  const std::vector<std::string> answers = {"Paris", "paris.", "Lyon", "It must be Lyon", "Nice", "the Nice"};
  std::vector<hd::NliInput> inputs;
  for (int i = 0; i < 60; ++i) {
    inputs.push_back(hd::BuildNliInput("Q" + std::to_string(i % 7) + "?", answers[rng() % answers.size()],
                                       answers[rng() % answers.size()]));
  }
  auto scorer = std::make_shared<hd::ScriptedMockNli>(hd::ScriptedMockNli::Config{});
  hd::NliGateway batch_gw(scorer, nullptr, hd::NliGatewayOptions{2, 7, 0});
  hd::NliGateway single_gw(std::make_shared<hd::ScriptedMockNli>(hd::ScriptedMockNli::Config{}), nullptr);
  const auto batched = batch_gw.ScoreBatch(inputs);
  for (std::size_t i = 0; i < inputs.size(); ++i) EXPECT_EQ(batched[i], single_gw.Score(inputs[i])) << i;

  std::vector<std::size_t> perm(inputs.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<hd::NliInput> permuted;
  for (auto p : perm) permuted.push_back(inputs[p]);
  const auto permuted_out = hd::NliGateway(std::make_shared<hd::ScriptedMockNli>(hd::ScriptedMockNli::Config{}),
                                           nullptr, hd::NliGatewayOptions{1, 5, 0})
                                .ScoreBatch(permuted);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(permuted_out[i], batched[perm[i]]);
}

TEST(NliGateway, IdenticalInputsScoredOncePerVersion) {
  hd::testing::TempDir dir("nli-cache");
  auto scorer = std::make_shared<hd::ScriptedMockNli>(hd::ScriptedMockNli::Config{});
  const auto a = hd::BuildNliInput("Q?", "Paris", "Lyon");
  const auto b = hd::BuildNliInput("Q?", "Paris", "Paris");
  {
    hd::NliGateway gw(scorer, std::make_shared<hd::JsonlStore>(dir.path(), "nli"));
    const std::vector<hd::NliInput> batch = {a, a, b, a};
    gw.ScoreBatch(batch);
    EXPECT_EQ(scorer->pairs_scored(), 2u);
    gw.Score(a);
    EXPECT_EQ(scorer->pairs_scored(), 2u);
  }
  scorer->ResetCounters();
  hd::NliGateway again(scorer, std::make_shared<hd::JsonlStore>(dir.path(), "nli"));
  again.Score(b);
  EXPECT_EQ(scorer->calls(), 0u);

  hd::ScriptedMockNli::Config other;
  other.model_version = "mock-nli-2";
  auto v2 = std::make_shared<hd::ScriptedMockNli>(other);
  hd::NliGateway newer(v2, std::make_shared<hd::JsonlStore>(dir.path(), "nli"));
  newer.Score(b);
  EXPECT_EQ(v2->calls(), 1u);
}

TEST(NliGateway, MalformedRepliesAndRetries) {
  auto raw = std::make_shared<RawScorer>();
  const std::vector<hd::NliInput> two = {hd::BuildNliInput("Q", "a", "b"), hd::BuildNliInput("Q", "a", "c")};

  raw->reply = [](std::span<const hd::NliInput>) { return std::vector<hd::NliVerdict>{{1, 0, 0}}; };
  EXPECT_EQ(CodeOf([&] { hd::NliGateway(raw, nullptr).ScoreBatch(two); }), hd::ErrorCode::kMalformedScorerReply);

  raw->reply = [](std::span<const hd::NliInput> p) {
    return std::vector<hd::NliVerdict>(p.size(), hd::NliVerdict{NAN, 0, 0});
  };
  EXPECT_EQ(CodeOf([&] { hd::NliGateway(raw, nullptr).ScoreBatch(two); }), hd::ErrorCode::kMalformedScorerReply);

  raw->reply = [](std::span<const hd::NliInput> p) { return std::vector<hd::NliVerdict>(p.size(), {1, 0, 0}); };
  raw->failures_left = 2;
  raw->calls = 0;
  EXPECT_EQ(hd::NliGateway(raw, nullptr, hd::NliGatewayOptions{1, 32, 2}).ScoreBatch(two).size(), 2u);
  EXPECT_EQ(raw->calls, 3);

  raw->failures_left = 5;
  EXPECT_EQ(CodeOf([&] { hd::NliGateway(raw, nullptr, hd::NliGatewayOptions{1, 32, 1}).ScoreBatch(two); }),
            hd::ErrorCode::kScorerUnreachable);
  EXPECT_EQ(CodeOf([&] { hd::NliGateway(raw, nullptr).ScoreBatch({}); }), hd::ErrorCode::kEmptyInput);
}

TEST(NliConfig, ParsesKinds) {
  const auto http = hd::NliConfig::FromJson({{"kind", "http"}, {"endpoint_url", "http://h:1"}, {"max_batch", 8}}, "/");
  EXPECT_EQ(http.kind, hd::NliConfig::Kind::kHttp);
  EXPECT_EQ(http.max_batch, 8);
  EXPECT_THROW(hd::NliConfig::FromJson({{"kind", "oracle"}}, "/"), hd::Error);
  EXPECT_EQ(hd::MakeNliScorer(hd::NliConfig{})->ModelVersion(), "mock-nli-1");
}

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "halludetect/core_model.hpp"
#include "halludetect/error.hpp"

namespace hd = halludetect;
using nlohmann::json;

TEST(BuiltinExpressions, TableOrderAndKinds) {
  const auto& exps = hd::BuiltinExpressions();
  ASSERT_EQ(exps.size(), 4u);
  EXPECT_EQ(exps[0].id, "unsure");
  EXPECT_EQ(exps[0].text, "I am not sure but it could be");
  EXPECT_EQ(exps[0].kind, hd::ExpressionKind::kUncertainty);
  EXPECT_EQ(exps[1].id, "doublecheck");
  EXPECT_EQ(exps[1].text, "I would need to double check but maybe it is");
  EXPECT_EQ(exps[1].kind, hd::ExpressionKind::kUncertainty);
  EXPECT_EQ(exps[2].id, "mustbe");
  EXPECT_EQ(exps[2].text, "It must be");
  EXPECT_EQ(exps[2].kind, hd::ExpressionKind::kCertainty);
  EXPECT_EQ(exps[3].id, "undoubtedly");
  EXPECT_EQ(exps[3].text, "Undoubtedly it is");
  EXPECT_EQ(exps[3].kind, hd::ExpressionKind::kCertainty);
}

TEST(BuiltinExpressions, UnknownSlugIsConfigError) {
  EXPECT_EQ(hd::BuiltinExpression("mustbe").text, "It must be");
  try {
    hd::BuiltinExpression("perhaps");
    FAIL();
  } catch (const hd::Error& e) {
    EXPECT_EQ(e.code(), hd::ErrorCode::kInvalidConfig);
  }
}

TEST(QaItem, RoundTripsThroughJson) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    hd::QaItem item;
    item.id = "id-" + std::to_string(rng());
    item.question = "Q\"uoted\\ é " + std::to_string(rng() % 1000) + "?";
    item.gold_answers = {"a", "b\nc"};
    if (rng() % 2) item.factuality_label = rng() % 2 ? hd::Factuality::kFactual : hd::Factuality::kNonFactual;
    if (rng() % 2) {
      item.consistency_label = std::map<std::string, hd::Consistency>{
          {"mustbe", hd::Consistency::kConsistent}, {"unsure", hd::Consistency::kNonConsistent}};
    }
    item.source = static_cast<hd::Source>(rng() % 3);
    const json j = item;
    EXPECT_EQ(j.get<hd::QaItem>(), item);
    EXPECT_EQ(json::parse(hd::ToJsonLine(j)).get<hd::QaItem>(), item);
  }
}

TEST(QaItem, AbsentLabelsSerializeAsNull) {
  hd::QaItem item{"x", "Q?", {"A"}, std::nullopt, std::nullopt, hd::Source::kNqOpen};
  const json j = item;
  EXPECT_TRUE(j.at("factuality_label").is_null());
  EXPECT_EQ(j.at("source"), "NqOpen");
}

TEST(NliVerdict, SoftmaxIsProbabilityTripleForAnyFiniteLogits) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> logit(-800.0, 800.0);
  for (int trial = 0; trial < 1000; ++trial) {
    hd::NliVerdict v{logit(rng), logit(rng), logit(rng)};
    const auto p = v.Softmax();
    double sum = 0.0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(NliVerdict, UniformLogitsGiveOneThird) {
  const auto p = hd::NliVerdict{0, 0, 0}.Softmax();
  for (double x : p) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(NliVerdict, ArgmaxTieBreaksTowardEntailment) {
  EXPECT_EQ((hd::NliVerdict{1, 1, 1}.Argmax()), hd::NliVerdict::Label::kEntailment);
  EXPECT_EQ((hd::NliVerdict{0, 2, 2}.Argmax()), hd::NliVerdict::Label::kNeutral);
  EXPECT_EQ((hd::NliVerdict{0, 1, 2}.Argmax()), hd::NliVerdict::Label::kContradiction);
  EXPECT_FALSE((hd::NliVerdict{0, NAN, 0}.AllFinite()));
}

TEST(DetectionScore, OrientationFollowsMetric) {
  for (auto m : hd::AllMetrics()) {
    const bool lower = m == hd::MetricName::kLogP || m == hd::MetricName::kLexicalSimilarity;
    EXPECT_EQ(hd::OrientationOf(m), lower ? hd::Orientation::kLowerMeansHallucination
                                           : hd::Orientation::kHigherMeansHallucination);
    EXPECT_EQ(hd::ParseMetricSlug(hd::MetricSlug(m)), m);
    hd::DetectionScore s{"i", m, -1.25, hd::OrientationOf(m)};
    EXPECT_EQ(json(s).get<hd::DetectionScore>(), s);
  }
  EXPECT_THROW(hd::ParseMetricSlug("auroc"), hd::Error);
}

TEST(DecodingParams, ValidateRejectsBadValues) {
  EXPECT_NO_THROW((hd::DecodingParams{0.0, 64, 1, std::nullopt}.Validate()));
  EXPECT_THROW((hd::DecodingParams{-0.1, 64, 1, std::nullopt}.Validate()), hd::Error);
  EXPECT_THROW((hd::DecodingParams{0.0, 0, 1, std::nullopt}.Validate()), hd::Error);
  EXPECT_THROW((hd::DecodingParams{0.5, 64, 0, std::nullopt}.Validate()), hd::Error);
}

TEST(Generation, RoundTripAndMissingLogprobs) {
  hd::Generation g{" Paris", std::vector<double>{-0.1, -0.2}, hd::FinishReason::kLength, "abc"};
  EXPECT_EQ(json(g).get<hd::Generation>(), g);
  hd::Generation bare{"x", std::nullopt, hd::FinishReason::kStop, "f"};
  EXPECT_EQ(json(bare).get<hd::Generation>(), bare);
  try {
    bare.RequireLogprobs();
    FAIL();
  } catch (const hd::Error& e) {
    EXPECT_EQ(e.code(), hd::ErrorCode::kMissingLogprobs);
  }
}

TEST(Error, WithContextKeepsCodeAndPrefixesOnce) {
  const hd::Error e(hd::ErrorCode::kTimeout, "slow");
  const hd::Error w = e.WithContext("item 'x'");
  EXPECT_EQ(w.code(), hd::ErrorCode::kTimeout);
  EXPECT_EQ(w.detail(), "item 'x': slow");
  EXPECT_EQ(std::string(w.what()).find(std::string(hd::ErrorCodeName(hd::ErrorCode::kTimeout))), 0u);
}

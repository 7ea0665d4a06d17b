#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "halludetect/confidence_metrics.hpp"
#include "halludetect/error.hpp"

namespace hd = halludetect;

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

hd::Generation Gen(std::vector<double> lps) {
  return hd::Generation{"x", std::move(lps), hd::FinishReason::kStop, "f"};
}

}  // namespace

TEST(LengthNormalizedLogprob, Mean) {
  EXPECT_NEAR(hd::LengthNormalizedLogprob(Gen({-0.2, -0.4, -0.6})).value(), -0.4, 1e-15);
  EXPECT_EQ(hd::LengthNormalizedLogprob(Gen({0.0, 0.0})).value(), 0.0);
  EXPECT_EQ(CodeOf([] { hd::LengthNormalizedLogprob(Gen({})); }), hd::ErrorCode::kNoTokens);
  EXPECT_EQ(CodeOf([] { hd::LengthNormalizedLogprob(hd::Generation{"x", std::nullopt, {}, ""}); }),
            hd::ErrorCode::kMissingLogprobs);
  EXPECT_THROW(hd::LengthNormalizedLogprob(Gen({-0.1, 0.3})), hd::Error);
  EXPECT_THROW(hd::LogProb(0.1), hd::Error);
  EXPECT_THROW(hd::LogProb(NAN), hd::Error);
}

TEST(LengthNormalizedLogprob, PermutationInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> lp(-5.0, 0.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = lp(rng);
    const double base = hd::LengthNormalizedLogprob(v).value();
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_NEAR(hd::LengthNormalizedLogprob(v).value(), base, 1e-12);
    EXPECT_LE(base, 0.0);
  }
}

TEST(LogprobRatio, Difference) {
  EXPECT_EQ(hd::LogprobRatio(hd::LogProb(-0.4), hd::LogProb(-0.4)), 0.0);
  EXPECT_NEAR(hd::LogprobRatio(hd::LogProb(-0.4), hd::LogProb(-0.5)), -0.1, 1e-15);
}

TEST(NormalizeAnswer, Examples) {
  EXPECT_EQ(hd::NormalizeAnswer("The Eiffel Tower."), "eiffel tower");
  EXPECT_EQ(hd::NormalizeAnswer("I am not sure but it could be Paris"), "paris");
  EXPECT_EQ(hd::NormalizeAnswer(""), "");
  EXPECT_EQ(hd::NormalizeAnswer("  It must be   the   Louvre!! "), "louvre");
  // A bare prefix is the answer itself, not something to strip.
  EXPECT_EQ(hd::NormalizeAnswer("The"), "the");
  EXPECT_EQ(hd::NormalizeAnswer("Anne"), "anne");
}

TEST(NormalizeAnswer, Idempotent) {
  std::mt19937_64 rng(2);
  const std::vector<std::string> pieces = {"The", "a", "an", "It must be", "Undoubtedly it is", "Paris", ",",
                                           "I am not sure but it could be", "  ", "Rachel, NV.", "x"};
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    for (int k = 0, n = static_cast<int>(rng() % 6); k < n; ++k) s += pieces[rng() % pieces.size()] + " ";
    const auto once = hd::NormalizeAnswer(s);
    EXPECT_EQ(hd::NormalizeAnswer(once), once) << s;
  }
}

TEST(ResponseEntropy, Examples) {
  EXPECT_EQ(hd::ResponseEntropy(std::vector<std::string>(10, "Paris")), 0.0);
  std::vector<std::string> split(5, "Paris");
  split.insert(split.end(), 5, "Lyon");
  EXPECT_NEAR(hd::ResponseEntropy(split), std::log(2.0), 1e-12);
  std::vector<std::string> s721(7, "a");
  s721.insert(s721.end(), 2, "b");
  s721.push_back("c");
  EXPECT_NEAR(hd::ResponseEntropy(s721), 0.8018185525433372, 1e-12);
  // Answers are compared after normalization.
  EXPECT_EQ(hd::ResponseEntropy(std::vector<std::string>{"Paris", "paris.", "It must be Paris"}), 0.0);
  EXPECT_EQ(CodeOf([] { hd::ResponseEntropy(std::vector<std::string>{}); }), hd::ErrorCode::kNoSamples);
}

TEST(ResponseEntropy, BoundedAndUniformSplitIsLnK) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> answers(1 + rng() % 30);
    std::set<std::string> distinct;
    for (auto& a : answers) {
      a = "ans" + std::to_string(rng() % 6);
      distinct.insert(a);
    }
    const double h = hd::ResponseEntropy(answers);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(distinct.size())) + 1e-12);
  }
  for (int k = 1; k <= 8; ++k) {
    std::vector<std::string> answers;
    for (int i = 0; i < k * 3; ++i) answers.push_back("ans" + std::to_string(i % k));
    EXPECT_NEAR(hd::ResponseEntropy(answers), std::log(static_cast<double>(k)), 1e-12);
  }
}

TEST(HistogramKl, SelfIsZeroAndNonnegative) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(1 + rng() % 50), b(1 + rng() % 50);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng) + 1.0;
    EXPECT_NEAR(hd::HistogramKl(a, a), 0.0, 1e-12);
    EXPECT_GE(hd::HistogramKl(a, b), 0.0);
  }
}

TEST(HistogramKl, FrozenValuesFromIndependentScript) {
  // Disjoint unit masses in two bins with negligible smoothing: the result is
  // (1 - eps) / (1 + eps) * ln(1 / eps) for floor eps = 1e-10.
  const std::vector<double> a = {0.0}, b = {1.0};
  EXPECT_NEAR(hd::HistogramKl(a, b, hd::HistogramOptions{2, 0.01, 1e-10}), 23.025850925335288, 1e-9);
  const std::vector<double> c = {0.0, 0.5, 2.0, 3.0, 3.2}, d = {1.0, 1.5, 4.0, 0.1};
  EXPECT_NEAR(hd::HistogramKl(c, d, hd::HistogramOptions{8, 1.0, 1e-10}), 0.2981414071213354, 1e-12);
}

TEST(HistogramKl, Errors) {
  const std::vector<double> a = {1.0}, empty;
  EXPECT_EQ(CodeOf([&] { hd::HistogramKl(a, empty); }), hd::ErrorCode::kEmptyInput);
  const std::vector<double> bad = {NAN};
  EXPECT_EQ(CodeOf([&] { hd::HistogramKl(a, bad); }), hd::ErrorCode::kInvalidArgument);
  EXPECT_THROW(hd::HistogramKl(a, a, hd::HistogramOptions{0, 1.0, 1e-10}), hd::Error);
  // Identical constant samples collapse to one bin; still defined.
  EXPECT_EQ(hd::HistogramKl(a, a), 0.0);
}

TEST(SmoothedHistogram, IsDistribution) {
  const std::vector<double> v = {0.0, 0.1, 0.9, 1.0, 1.0};
  const auto h = hd::SmoothedHistogram(v, 0.0, 1.0, {});
  ASSERT_EQ(h.size(), 30u);
  double sum = 0.0;
  for (double p : h) {
    EXPECT_GT(p, 0.0);
    sum += p;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

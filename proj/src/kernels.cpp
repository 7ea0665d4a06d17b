#include "halludetect/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <unordered_map>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "halludetect/confidence_metrics.hpp"
#include "halludetect/error.hpp"
#include "halludetect/evaluation.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect::kernels {

namespace {

template <typename T>
std::size_t Lcs(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double FMeasure(std::size_t lcs, std::size_t len_a, std::size_t len_b) {
  if (lcs == 0) return 0.0;
  const double precision = static_cast<double>(lcs) / static_cast<double>(len_a);
  const double recall = static_cast<double>(lcs) / static_cast<double>(len_b);
  return 2.0 * precision * recall / (precision + recall);
}

// Tokenizes each text once and maps tokens to small integers so the DP
// compares ids instead of strings.
std::vector<std::vector<std::uint32_t>> InternTokens(std::span<const std::string> texts) {
  std::unordered_map<std::string_view, std::uint32_t> ids;
  std::vector<std::vector<std::uint32_t>> out(texts.size());
  for (std::size_t t = 0; t < texts.size(); ++t) {
    for (const auto tok : SplitWhitespace(texts[t])) {
      out[t].push_back(ids.try_emplace(tok, static_cast<std::uint32_t>(ids.size())).first->second);
    }
  }
  return out;
}

double RougeIds(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  return FMeasure(Lcs<std::uint32_t>(a, b), a.size(), b.size());
}

}  // namespace

std::size_t LcsLength(std::span<const std::string_view> a, std::span<const std::string_view> b) {
  return Lcs<std::string_view>(a, b);
}

double RougeL(std::string_view a, std::string_view b) {
  const auto ta = SplitWhitespace(a);
  const auto tb = SplitWhitespace(b);
  return FMeasure(LcsLength(ta, tb), ta.size(), tb.size());
}

std::vector<double> PairwiseRougeSerial(std::span<const std::string> texts) {
  const std::size_t m = texts.size();
  const auto tokens = InternTokens(texts);
  std::vector<double> out(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = RougeIds(tokens[i], tokens[j]);
  }
  return out;
}

std::vector<double> PairwiseRougeParallel(std::span<const std::string> texts) {
  const std::size_t m = texts.size();
  const auto tokens = InternTokens(texts);
  std::vector<double> out(m * m, 0.0);
  const long total = static_cast<long>(m * m);
#pragma omp parallel for schedule(dynamic, 16)
  for (long k = 0; k < total; ++k) {
    const auto i = static_cast<std::size_t>(k) / m;
    const auto j = static_cast<std::size_t>(k) % m;
    out[static_cast<std::size_t>(k)] = RougeIds(tokens[i], tokens[j]);
  }
  return out;
}

namespace {

void RequirePairs(std::span<const std::vector<std::string>> sets) {
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (sets[s].size() < 2) {
      throw Error(ErrorCode::kTooFewSamples, "lexical similarity needs >= 2 samples (set " +
                                                 std::to_string(s) + " has " +
                                                 std::to_string(sets[s].size()) + ")");
    }
  }
}

void RequireNonEmpty(std::span<const std::vector<std::string>> sets) {
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (sets[s].empty()) {
      throw Error(ErrorCode::kNoSamples, "entropy set " + std::to_string(s) + " is empty");
    }
  }
}

double MeanOffDiagonal(std::span<const std::string> texts) {
  const std::size_t m = texts.size();
  const auto tokens = InternTokens(texts);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) sum += RougeIds(tokens[i], tokens[j]);
    }
  }
  return sum / static_cast<double>(m * (m - 1));
}

std::vector<LabeledScore> Zip(const std::vector<double>& column, const std::vector<bool>& labels) {
  if (column.size() != labels.size()) {
    throw Error(ErrorCode::kInvalidArgument, "score column and labels differ in length");
  }
  std::vector<LabeledScore> out(column.size());
  for (std::size_t i = 0; i < column.size(); ++i) out[i] = {column[i], labels[i]};
  return out;
}

}  // namespace

std::vector<double> LexicalSimilarityBatchSerial(std::span<const std::vector<std::string>> sets) {
  RequirePairs(sets);
  std::vector<double> out(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) out[s] = MeanOffDiagonal(sets[s]);
  return out;
}

std::vector<double> LexicalSimilarityBatchParallel(std::span<const std::vector<std::string>> sets) {
  RequirePairs(sets);
  std::vector<double> out(sets.size());
  const long n = static_cast<long>(sets.size());
#pragma omp parallel for schedule(dynamic)
  for (long s = 0; s < n; ++s) out[s] = MeanOffDiagonal(sets[s]);
  return out;
}

std::vector<double> ResponseEntropyBatchSerial(std::span<const std::vector<std::string>> sets) {
  RequireNonEmpty(sets);
  std::vector<double> out(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) out[s] = ResponseEntropy(sets[s]);
  return out;
}

std::vector<double> ResponseEntropyBatchParallel(std::span<const std::vector<std::string>> sets) {
  RequireNonEmpty(sets);
  std::vector<double> out(sets.size());
  const long n = static_cast<long>(sets.size());
#pragma omp parallel for schedule(dynamic)
  for (long s = 0; s < n; ++s) out[s] = ResponseEntropy(sets[s]);
  return out;
}

std::vector<double> AurocColumnsSerial(std::span<const std::vector<double>> columns,
                                       const std::vector<bool>& labels) {
  std::vector<double> out;
  out.reserve(columns.size());
  for (const auto& col : columns) out.push_back(Auroc(Zip(col, labels)));
  return out;
}

std::vector<double> AurocColumnsParallel(std::span<const std::vector<double>> columns,
                                         const std::vector<bool>& labels) {
  // Validation (and its exceptions) stays outside the parallel region.
  std::vector<std::vector<LabeledScore>> zipped;
  zipped.reserve(columns.size());
  for (const auto& col : columns) zipped.push_back(Zip(col, labels));
  std::size_t positives = 0;
  for (bool l : labels) positives += l ? 1 : 0;
  if (positives == 0 || positives == labels.size()) {
    throw Error(ErrorCode::kDegenerateLabels, "AUROC needs both positive and negative labels");
  }
  std::vector<double> out(columns.size());
  const long n = static_cast<long>(columns.size());
#pragma omp parallel for schedule(dynamic)
  for (long c = 0; c < n; ++c) out[c] = Auroc(zipped[c]);
  return out;
}

int MaxThreads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace halludetect::kernels

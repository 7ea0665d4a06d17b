#include "halludetect/corpus.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "halludetect/error.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json ParseJson(std::string_view text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, where + ": " + e.what());
  }
}

std::string AnswerText(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return v.dump();
}

}  // namespace

std::vector<QaItem> LoadHotpotQa(const fs::path& path) {
  const json records = ParseJson(ReadFile(path), path.string());
  if (!records.is_array()) {
    throw Error(ErrorCode::kParseError, path.string() + ": expected a JSON array");
  }
  std::vector<QaItem> items;
  items.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const json& r = records[i];
    if (!r.is_object() || !r.contains("_id")) {
      throw Error(ErrorCode::kMissingField, "record " + std::to_string(i) + " has no _id");
    }
    const std::string id = r.at("_id").get<std::string>();
    for (const char* field : {"question", "answer"}) {
      if (!r.contains(field)) {
        throw Error(ErrorCode::kMissingField, "record '" + id + "' has no '" + field + "'");
      }
    }
    QaItem item;
    item.id = id;
    item.question = r.at("question").get<std::string>();
    item.gold_answers = {AnswerText(r.at("answer"))};
    item.source = Source::kHotpotQA;
    items.push_back(std::move(item));
  }
  return items;
}

NqLoadResult LoadNqOpen(const fs::path& path) {
  NqLoadResult result;
  std::istringstream in(ReadFile(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) {
      ++result.skipped_blank_lines;
      continue;
    }
    const json r = ParseJson(line, path.string() + ":" + std::to_string(line_no));
    if (!r.is_object() || !r.contains("question") || !r.contains("answer")) {
      throw Error(ErrorCode::kParseError,
                  path.string() + ":" + std::to_string(line_no) + ": needs question and answer");
    }
    QaItem item;
    item.id = r.contains("id") ? AnswerText(r.at("id")) : "nq-" + std::to_string(result.items.size());
    item.question = r.at("question").get<std::string>();
    const json& answers = r.at("answer");
    if (answers.is_array()) {
      for (const auto& a : answers) item.gold_answers.push_back(AnswerText(a));
    } else {
      item.gold_answers.push_back(AnswerText(answers));
    }
    item.source = Source::kNqOpen;
    result.items.push_back(std::move(item));
  }
  if (result.skipped_blank_lines > 0) {
    spdlog::info("{}: skipped {} blank lines", path.string(), result.skipped_blank_lines);
  }
  return result;
}

std::vector<QaItem> LoadQaJsonl(const fs::path& path) {
  std::vector<QaItem> items;
  std::unordered_set<std::string> ids;
  std::istringstream in(ReadFile(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    QaItem item;
    try {
      item = ParseJson(line, where).get<QaItem>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParseError, where + ": " + e.what());
    }
    if (item.id.empty()) throw Error(ErrorCode::kParseError, where + ": empty id");
    if (!ids.insert(item.id).second) {
      throw Error(ErrorCode::kParseError, where + ": duplicate id '" + item.id + "'");
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::string QaItemsToJsonl(std::span<const QaItem> items) {
  std::string out;
  for (const auto& item : items) {
    out += json(item).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<std::string> ReadIdList(const fs::path& path) {
  std::vector<std::string> ids;
  std::istringstream in(ReadFile(path));
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view t = Trim(line);
    if (!t.empty()) ids.emplace_back(t);
  }
  return ids;
}

ExclusionResult ApplyExclusions(std::span<const QaItem> items, std::span<const std::string> ids) {
  const std::unordered_set<std::string> excluded(ids.begin(), ids.end());
  std::unordered_set<std::string> known;
  ExclusionResult result;
  for (const auto& item : items) {
    known.insert(item.id);
    if (excluded.count(item.id)) {
      ++result.removed;
    } else {
      result.items.push_back(item);
    }
  }
  std::unordered_set<std::string> reported;
  for (const auto& id : ids) {
    if (!known.count(id) && reported.insert(id).second) {
      spdlog::warn("exclusion id '{}' matches no item", id);
      result.unknown_ids.push_back(id);
    }
  }
  return result;
}

namespace {

struct LabelRecord {
  std::optional<Factuality> factuality;
  std::optional<std::map<std::string, Consistency>> consistency;

  bool operator==(const LabelRecord&) const = default;
};

LabelRecord ParseLabel(const json& r, const std::string& where) {
  LabelRecord rec;
  if (r.contains("factuality") && !r.at("factuality").is_null()) {
    const json& f = r.at("factuality");
    if (f.is_boolean()) {
      rec.factuality = f.get<bool>() ? Factuality::kFactual : Factuality::kNonFactual;
    } else if (f.is_string()) {
      rec.factuality = ParseFactuality(f.get<std::string>());
    } else {
      throw Error(ErrorCode::kParseError, where + ": factuality must be a string or bool");
    }
  }
  if (r.contains("consistency") && !r.at("consistency").is_null()) {
    std::map<std::string, Consistency> c;
    for (const auto& [exp, v] : r.at("consistency").items()) {
      if (v.is_boolean()) {
        c[exp] = v.get<bool>() ? Consistency::kConsistent : Consistency::kNonConsistent;
      } else if (v.is_string()) {
        c[exp] = ParseConsistency(v.get<std::string>());
      } else {
        throw Error(ErrorCode::kParseError, where + ": consistency values must be bool");
      }
    }
    rec.consistency = std::move(c);
  }
  return rec;
}

}  // namespace

LabelMergeResult MergeLabelsFromString(std::span<const QaItem> items, std::string_view jsonl) {
  std::unordered_map<std::string, LabelRecord> labels;
  std::vector<std::string> label_order;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    const std::string where = "labels:" + std::to_string(line_no);
    const json r = ParseJson(line, where);
    if (!r.is_object() || !r.contains("id")) throw Error(ErrorCode::kParseError, where + ": no id");
    const std::string id = r.at("id").get<std::string>();
    LabelRecord rec = ParseLabel(r, where);
    auto [it, inserted] = labels.try_emplace(id, rec);
    if (inserted) {
      label_order.push_back(id);
    } else if (!(it->second == rec)) {
      throw Error(ErrorCode::kParseError, where + ": conflicting duplicate labels for '" + id + "'");
    }
  }

  LabelMergeResult result;
  std::unordered_set<std::string> known;
  for (const auto& item : items) {
    known.insert(item.id);
    QaItem merged = item;
    if (auto it = labels.find(item.id); it != labels.end()) {
      if (it->second.factuality) merged.factuality_label = it->second.factuality;
      if (it->second.consistency) merged.consistency_label = it->second.consistency;
      ++result.attached;
    }
    result.items.push_back(std::move(merged));
  }
  for (const auto& id : label_order) {
    if (!known.count(id)) {
      spdlog::warn("label id '{}' matches no item", id);
      result.unmatched_ids.push_back(id);
    }
  }
  return result;
}

LabelMergeResult MergeLabels(std::span<const QaItem> items, const fs::path& labels_path) {
  return MergeLabelsFromString(items, ReadFile(labels_path));
}

std::vector<QaItem> SampleSubset(std::span<const QaItem> items, std::size_t size, std::uint64_t seed) {
  if (size >= items.size()) return {items.begin(), items.end()};
  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  // Unbiased draw in [0, bound) by rejection.
  auto draw = [&rng](std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = rng();
    } while (x >= limit);
    return x % bound;
  };
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(draw(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  std::vector<QaItem> out;
  out.reserve(size);
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

const Expression& ExperimentManifest::ExpressionById(std::string_view id) const {
  for (const auto& e : expressions) {
    if (e.id == id) return e;
  }
  throw Error(ErrorCode::kInvalidConfig, "expression '" + std::string(id) + "' is not configured");
}

namespace {

fs::path Resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::optional<fs::path> OptionalPath(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return Resolve(base, j.at(key).get<std::string>());
}

void RequireExists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw Error(ErrorCode::kIo, std::string(what) + " not found: " + p.string());
}

}  // namespace

ExperimentManifest ParseManifest(const json& j, const fs::path& manifest_dir) {
  ExperimentManifest m;
  try {
    m.manifest_dir = manifest_dir;
    m.corpus_path = Resolve(manifest_dir, j.at("corpus_path").get<std::string>());
    const std::string format = j.value("corpus_format", std::string("qa_jsonl"));
    if (format == "qa_jsonl") {
      m.corpus_format = CorpusFormat::kQaJsonl;
    } else if (format == "hotpotqa") {
      m.corpus_format = CorpusFormat::kHotpotQa;
    } else if (format == "nq_open") {
      m.corpus_format = CorpusFormat::kNqOpen;
    } else {
      throw Error(ErrorCode::kInvalidConfig, "unknown corpus_format '" + format + "'");
    }
    m.exclusions_path = OptionalPath(j, "exclusions_path", manifest_dir);
    m.labels_path = OptionalPath(j, "labels_path", manifest_dir);
    m.abstention_patterns_path = OptionalPath(j, "abstention_patterns_path", manifest_dir);

    std::vector<Expression> custom;
    if (j.contains("custom_expressions")) custom = j.at("custom_expressions").get<std::vector<Expression>>();
    const auto slugs = j.value("expressions", std::vector<std::string>{"unsure", "mustbe"});
    for (const auto& slug : slugs) {
      auto it = std::find_if(custom.begin(), custom.end(), [&](const Expression& e) { return e.id == slug; });
      m.expressions.push_back(it != custom.end() ? *it : BuiltinExpression(slug));
    }
    m.certain_expression = j.value("certain_expression", m.certain_expression);
    m.uncertain_expression = j.value("uncertain_expression", m.uncertain_expression);
    m.ensemble_expressions = j.value("ensemble_expressions", m.ensemble_expressions);

    if (j.contains("metrics")) {
      for (const auto& s : j.at("metrics")) m.metrics.push_back(ParseMetricSlug(s.get<std::string>()));
    } else {
      m.metrics = {MetricName::kFCertain, MetricName::kFUncertain, MetricName::kFEnsemble};
    }

    if (j.contains("decoding")) {
      const json& d = j.at("decoding");
      if (d.contains("reference")) m.decoding.reference = d.at("reference").get<DecodingParams>();
      if (d.contains("expression")) m.decoding.expression = d.at("expression").get<DecodingParams>();
      if (d.contains("sampling")) m.decoding.sampling = d.at("sampling").get<DecodingParams>();
      if (d.contains("selfcheck")) m.decoding.selfcheck = d.at("selfcheck").get<DecodingParams>();
    }
    m.backend = BackendConfig::FromJson(j.value("backend", json::object()), manifest_dir);
    m.nli = NliConfig::FromJson(j.value("nli", json::object()), manifest_dir);
    if (j.contains("prompt")) m.prompt = PromptTemplates::FromJson(j.at("prompt"));
    if (j.contains("breakdown")) {
      const json& b = j.at("breakdown");
      m.breakdown.enabled = b.value("enabled", m.breakdown.enabled);
      m.breakdown.expression_samples = b.value("expression_samples", m.breakdown.expression_samples);
    }
    m.output_dir = Resolve(manifest_dir, j.value("output_dir", std::string("out")));
    m.cache_dir = Resolve(manifest_dir, j.value("cache_dir", std::string("cache")));
    if (j.contains("subset_size") && !j.at("subset_size").is_null()) {
      m.subset_size = j.at("subset_size").get<std::size_t>();
    }
    m.subset_seed = j.value("subset_seed", m.subset_seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("malformed manifest: ") + e.what());
  }

  for (const auto& id : {m.certain_expression, m.uncertain_expression}) m.ExpressionById(id);
  for (const auto& id : m.ensemble_expressions) m.ExpressionById(id);
  const auto& ref = m.decoding.reference;
  if (ref.temperature == 0.0 && ref.n_samples != 1) {
    throw Error(ErrorCode::kInvalidConfig, "greedy reference decoding requires n_samples = 1");
  }

  RequireExists(m.corpus_path, "corpus");
  if (m.exclusions_path) RequireExists(*m.exclusions_path, "exclusions file");
  if (m.labels_path) RequireExists(*m.labels_path, "labels file");
  if (m.abstention_patterns_path) RequireExists(*m.abstention_patterns_path, "abstention patterns");
  if (m.backend.mock_script) RequireExists(*m.backend.mock_script, "mock script");
  if (m.nli.mock_script) RequireExists(*m.nli.mock_script, "mock NLI script");
  return m;
}

ExperimentManifest LoadManifest(const fs::path& path) {
  const json j = ParseJson(ReadFile(path), path.string());
  return ParseManifest(j, fs::absolute(path).parent_path());
}

LoadedCorpus LoadCorpus(const ExperimentManifest& manifest) {
  LoadedCorpus corpus;
  switch (manifest.corpus_format) {
    case CorpusFormat::kQaJsonl:
      corpus.items = LoadQaJsonl(manifest.corpus_path);
      break;
    case CorpusFormat::kHotpotQa:
      corpus.items = LoadHotpotQa(manifest.corpus_path);
      break;
    case CorpusFormat::kNqOpen:
      corpus.items = LoadNqOpen(manifest.corpus_path).items;
      break;
  }
  if (manifest.exclusions_path) {
    const auto ids = ReadIdList(*manifest.exclusions_path);
    auto excluded = ApplyExclusions(corpus.items, ids);
    corpus.items = std::move(excluded.items);
    corpus.unknown_exclusions = std::move(excluded.unknown_ids);
  }
  if (manifest.subset_size) {
    corpus.items = SampleSubset(corpus.items, *manifest.subset_size, manifest.subset_seed);
  }
  if (manifest.labels_path) {
    auto merged = MergeLabels(corpus.items, *manifest.labels_path);
    corpus.items = std::move(merged.items);
    corpus.unmatched_labels = std::move(merged.unmatched_ids);
  }
  return corpus;
}

}  // namespace halludetect

#include "halludetect/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "halludetect/confidence_metrics.hpp"
#include "halludetect/error.hpp"
#include "halludetect/kernels.hpp"
#include "halludetect/prompting.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentManifest ApplyOverrides(ExperimentManifest manifest, const StageOptions& options) {
  if (options.cache_dir) manifest.cache_dir = *options.cache_dir;
  if (options.out_dir) manifest.output_dir = *options.out_dir;
  if (options.metrics) manifest.metrics = *options.metrics;
  if (options.subset_size) manifest.subset_size = *options.subset_size;
  if (options.subset_seed) manifest.subset_seed = *options.subset_seed;
  return manifest;
}

namespace {

bool Wants(const ExperimentManifest& m, MetricName metric) {
  return std::find(m.metrics.begin(), m.metrics.end(), metric) != m.metrics.end();
}

bool NeedsSamples(const ExperimentManifest& m) {
  return Wants(m, MetricName::kEntropy) || Wants(m, MetricName::kSemanticEntropy) ||
         Wants(m, MetricName::kLexicalSimilarity);
}

bool NeedsExpressionSamples(const ExperimentManifest& m) {
  return m.breakdown.enabled && m.breakdown.expression_samples;
}

struct Stores {
  std::shared_ptr<JsonlStore> completions;
  std::shared_ptr<JsonlStore> nli;
};

Stores OpenStores(const ExperimentManifest& m) {
  return Stores{std::make_shared<JsonlStore>(m.cache_dir, "completions"),
                std::make_shared<JsonlStore>(m.cache_dir, "nli")};
}

LlmGateway MakeLlm(const ExperimentManifest& m, const Runtime& runtime, const Stores& stores,
                   bool cache_only) {
  std::shared_ptr<CompletionBackend> backend;
  if (!cache_only) backend = runtime.backend ? runtime.backend : MakeCompletionBackend(m.backend);
  return LlmGateway(m.backend.BackendId(), std::move(backend), stores.completions,
                    GatewayOptions{m.backend.max_in_flight, m.backend.retry_limit});
}

std::unique_ptr<NliGateway> MakeNli(const ExperimentManifest& m, const Runtime& runtime,
                                    const Stores& stores) {
  auto scorer = runtime.nli_scorer ? runtime.nli_scorer : MakeNliScorer(m.nli);
  return std::make_unique<NliGateway>(
      std::move(scorer), stores.nli,
      NliGatewayOptions{m.nli.max_in_flight, m.nli.max_batch, m.nli.retry_limit});
}

template <typename F>
auto InContext(const QaItem& item, std::string_view stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw e.WithContext(fmt::format("item '{}' stage {}", item.id, stage));
  }
}

std::string Dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

CollectSummary CmdCollect(const ExperimentManifest& manifest, const Runtime& runtime) {
  const LoadedCorpus corpus = LoadCorpus(manifest);
  Stores stores = OpenStores(manifest);
  LlmGateway llm = MakeLlm(manifest, runtime, stores, /*cache_only=*/false);

  const bool samples = NeedsSamples(manifest);
  const bool selfcheck = Wants(manifest, MetricName::kSelfCheckNli);
  const bool expression_samples = NeedsExpressionSamples(manifest);
  const auto& d = manifest.decoding;

  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex error_mutex;
  std::optional<Error> first_error;
  std::exception_ptr foreign_error;

  auto collect_item = [&](const QaItem& item) {
    const PromptRendering standard = RenderStandard(item, manifest.prompt);
    InContext(item, "reference", [&] { return llm.Complete(standard, d.reference); });
    for (const auto& exp : manifest.expressions) {
      const PromptRendering p = RenderExpression(item, exp, manifest.prompt);
      InContext(item, "expression:" + exp.id, [&] { return llm.Complete(p, d.expression); });
      if (expression_samples) {
        InContext(item, "expression_samples:" + exp.id,
                  [&] { return llm.SampleN(p, d.sampling, d.sampling.n_samples); });
      }
    }
    if (samples) {
      InContext(item, "samples", [&] { return llm.SampleN(standard, d.sampling, d.sampling.n_samples); });
    }
    if (selfcheck) {
      InContext(item, "selfcheck",
                [&] { return llm.SampleN(standard, d.selfcheck, d.selfcheck.n_samples); });
    }
  };

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= corpus.items.size()) return;
      try {
        collect_item(corpus.items[i]);
      } catch (const Error& e) {
        std::lock_guard lock(error_mutex);
        if (!first_error && !foreign_error) first_error = e;
        stop = true;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error && !foreign_error) foreign_error = std::current_exception();
        stop = true;
      }
    }
  };

  const std::size_t n_workers = std::max<std::size_t>(
      1, std::min<std::size_t>(static_cast<std::size_t>(manifest.backend.max_in_flight),
                               corpus.items.size()));
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < n_workers; ++w) workers.emplace_back(worker);
  }
  stores.completions->Flush();
  if (first_error) throw *first_error;
  if (foreign_error) std::rethrow_exception(foreign_error);

  CollectSummary summary;
  summary.items = corpus.items.size();
  summary.reference_generations = corpus.items.size();
  summary.expression_generations = corpus.items.size() * manifest.expressions.size();
  summary.sample_sets = samples ? corpus.items.size() : 0;
  summary.selfcheck_sets = selfcheck ? corpus.items.size() : 0;

  json ids = json::array();
  for (const auto& item : corpus.items) ids.push_back(item.id);
  json expressions = json::array();
  for (const auto& e : manifest.expressions) expressions.push_back(e);
  json artifact = {{"backend_id", llm.backend_id()},
                   {"item_ids", ids},
                   {"expressions", expressions},
                   {"reference_generations", summary.reference_generations},
                   {"expression_generations", summary.expression_generations},
                   {"sample_sets", summary.sample_sets},
                   {"selfcheck_sets", summary.selfcheck_sets},
                   {"decoding",
                    {{"reference", d.reference},
                     {"expression", d.expression},
                     {"sampling", d.sampling},
                     {"selfcheck", d.selfcheck}}},
                   {"unknown_exclusions", corpus.unknown_exclusions},
                   {"unmatched_labels", corpus.unmatched_labels}};
  WriteFileAtomic(manifest.output_dir / "collection.json", Dump(artifact));
  spdlog::info("collected {} items ({} expression generations)", summary.items,
               summary.expression_generations);
  return summary;
}

namespace {

std::vector<std::string> TrimmedTexts(const std::vector<Generation>& gens) {
  std::vector<std::string> out;
  out.reserve(gens.size());
  for (const auto& g : gens) out.emplace_back(Trim(g.text));
  return out;
}

}  // namespace

fs::path CmdScore(const ExperimentManifest& manifest, const Runtime& runtime) {
  const LoadedCorpus corpus = LoadCorpus(manifest);
  Stores stores = OpenStores(manifest);
  LlmGateway llm = MakeLlm(manifest, runtime, stores, /*cache_only=*/true);
  const bool need_nli = Wants(manifest, MetricName::kFCertain) ||
                        Wants(manifest, MetricName::kFUncertain) ||
                        Wants(manifest, MetricName::kFEnsemble) ||
                        Wants(manifest, MetricName::kSemanticEntropy) ||
                        Wants(manifest, MetricName::kSelfCheckNli);
  std::unique_ptr<NliGateway> nli = need_nli ? MakeNli(manifest, runtime, stores) : nullptr;
  const auto& d = manifest.decoding;
  const std::string& joiner = manifest.nli.joiner;

  std::vector<DetectionScore> scores;
  auto emit = [&](const QaItem& item, MetricName metric, double value) {
    scores.push_back(DetectionScore{item.id, metric, value, OrientationOf(metric)});
  };

  std::vector<std::vector<std::string>> entropy_sets, lexical_sets;
  std::vector<const QaItem*> sample_items;

  for (const auto& item : corpus.items) {
    const PromptRendering standard = RenderStandard(item, manifest.prompt);
    const Generation reference =
        InContext(item, "reference", [&] { return llm.Complete(standard, d.reference); });

    std::map<std::string, double> f_by_expression;
    auto f_for = [&](const std::string& exp_id) {
      if (auto it = f_by_expression.find(exp_id); it != f_by_expression.end()) return it->second;
      const Expression& exp = manifest.ExpressionById(exp_id);
      const double f = InContext(item, "expression:" + exp_id, [&] {
        const Generation g = llm.Complete(RenderExpression(item, exp, manifest.prompt), d.expression);
        return FScore(item.question, reference.text, PerturbedResponseText(exp, g.text), *nli, joiner);
      });
      f_by_expression[exp_id] = f;
      return f;
    };

    if (Wants(manifest, MetricName::kFCertain)) {
      emit(item, MetricName::kFCertain, f_for(manifest.certain_expression));
    }
    if (Wants(manifest, MetricName::kFUncertain)) {
      emit(item, MetricName::kFUncertain, f_for(manifest.uncertain_expression));
    }
    if (Wants(manifest, MetricName::kFEnsemble)) {
      std::vector<double> parts;
      for (const auto& id : manifest.ensemble_expressions) parts.push_back(f_for(id));
      emit(item, MetricName::kFEnsemble, FEnsemble(parts));
    }
    if (Wants(manifest, MetricName::kLogP)) {
      emit(item, MetricName::kLogP, InContext(item, "reference", [&] { return BaselineLogp(reference); }));
    }
    if (NeedsSamples(manifest)) {
      const auto samples = InContext(
          item, "samples", [&] { return llm.SampleN(standard, d.sampling, d.sampling.n_samples); });
      sample_items.push_back(&item);
      entropy_sets.push_back(TrimmedTexts(samples));
      if (Wants(manifest, MetricName::kSemanticEntropy)) {
        const double se = InContext(item, "samples", [&] {
          const auto clusters = ClusterSemantic(item.question, samples, *nli, joiner);
          return SemanticEntropy(clusters);
        });
        emit(item, MetricName::kSemanticEntropy, se);
      }
    }
    if (Wants(manifest, MetricName::kSelfCheckNli)) {
      const double sc = InContext(item, "selfcheck", [&] {
        const auto samples = llm.SampleN(standard, d.selfcheck, d.selfcheck.n_samples);
        return SelfCheckNli(item.question, reference.text, samples, *nli, joiner);
      });
      emit(item, MetricName::kSelfCheckNli, sc);
    }
  }

  // Sample-set metrics run as batched kernels over all items.
  if (Wants(manifest, MetricName::kEntropy) && !entropy_sets.empty()) {
    const auto values = kernels::ResponseEntropyBatchParallel(entropy_sets);
    for (std::size_t i = 0; i < values.size(); ++i) emit(*sample_items[i], MetricName::kEntropy, values[i]);
  }
  if (Wants(manifest, MetricName::kLexicalSimilarity) && !entropy_sets.empty()) {
    for (std::size_t i = 0; i < entropy_sets.size(); ++i) {
      if (entropy_sets[i].size() < 2) {
        throw Error(ErrorCode::kTooFewSamples,
                    fmt::format("item '{}' stage samples: lexical similarity needs n >= 2",
                                sample_items[i]->id));
      }
    }
    lexical_sets = entropy_sets;
    const auto values = kernels::LexicalSimilarityBatchParallel(lexical_sets);
    for (std::size_t i = 0; i < values.size(); ++i) {
      emit(*sample_items[i], MetricName::kLexicalSimilarity, values[i]);
    }
  }

  std::sort(scores.begin(), scores.end(), [](const DetectionScore& a, const DetectionScore& b) {
    if (a.item_id != b.item_id) return a.item_id < b.item_id;
    return static_cast<int>(a.metric_name) < static_cast<int>(b.metric_name);
  });
  std::string body;
  for (const auto& s : scores) {
    body += json(s).dump();
    body.push_back('\n');
  }
  const fs::path out = manifest.output_dir / "scores.jsonl";
  WriteFileAtomic(out, body);
  spdlog::info("wrote {} scores to {}", scores.size(), out.string());
  return out;
}

std::vector<DetectionScore> ReadScores(const fs::path& path) {
  std::vector<DetectionScore> scores;
  std::istringstream in(ReadFile(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    try {
      scores.push_back(json::parse(line).get<DetectionScore>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParseError, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return scores;
}

namespace {

json OptionalNumber(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> TryAuroc(const std::vector<LabeledScore>& scores) {
  try {
    return Auroc(scores);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDegenerateLabels) return std::nullopt;
    throw;
  }
}

double Mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

json BuildAnalysis(const ExperimentManifest& manifest, const std::vector<QaItem>& items,
                   const Runtime& runtime) {
  Stores stores = OpenStores(manifest);
  LlmGateway llm = MakeLlm(manifest, runtime, stores, /*cache_only=*/true);
  std::unique_ptr<NliGateway> nli;
  const auto& d = manifest.decoding;
  const AbstentionClassifier abstains = manifest.abstention_patterns_path
                                            ? AbstentionClassifier::FromFile(*manifest.abstention_patterns_path)
                                            : AbstentionClassifier();

  std::vector<Observation> observations;
  std::size_t from_labels = 0, from_proxy = 0;
  json consistent_auroc = json::array();
  json kl = json::array();
  json abstention = json::array();

  for (const auto& exp : manifest.expressions) {
    std::vector<LabeledScore> ratio_in_con, entropy_in_con;
    std::vector<double> ratio_f, ratio_nf;
    std::vector<double> abst_logp, abst_ratio;
    std::size_t abst_count = 0;

    for (const auto& item : items) {
      const PromptRendering standard = RenderStandard(item, manifest.prompt);
      const PromptRendering perturbed_prompt = RenderExpression(item, exp, manifest.prompt);
      const Generation reference =
          InContext(item, "reference", [&] { return llm.Complete(standard, d.reference); });
      const Generation perturbed = InContext(item, "expression:" + exp.id,
                                             [&] { return llm.Complete(perturbed_prompt, d.expression); });
      const std::string perturbed_text = PerturbedResponseText(exp, perturbed.text);

      Consistency consistency;
      ConsistencySource source = ConsistencySource::kLabel;
      bool labelled = false;
      if (item.consistency_label) {
        if (auto it = item.consistency_label->find(exp.id); it != item.consistency_label->end()) {
          consistency = it->second;
          labelled = true;
        }
      }
      if (!labelled) {
        if (!nli) nli = MakeNli(manifest, runtime, stores);
        consistency = InContext(item, "consistency:" + exp.id, [&] {
          return ConsistencyProxy(item.question, reference.text, perturbed_text, *nli, manifest.nli.joiner);
        });
        source = ConsistencySource::kNliProxy;
      }
      (source == ConsistencySource::kLabel ? from_labels : from_proxy) += 1;

      std::optional<double> ratio;
      double p1 = 0.0;
      if (reference.token_logprobs && perturbed.token_logprobs && !reference.token_logprobs->empty() &&
          !perturbed.token_logprobs->empty()) {
        p1 = LengthNormalizedLogprob(reference).value();
        ratio = LogprobRatio(LengthNormalizedLogprob(reference), LengthNormalizedLogprob(perturbed));
      }
      std::optional<double> entropy;
      if (NeedsExpressionSamples(manifest)) {
        std::vector<std::string> texts;
        for (int k = 0; k < d.sampling.n_samples; ++k) {
          auto g = llm.Lookup(perturbed_prompt, d.sampling, k);
          if (!g) break;
          texts.emplace_back(Trim(g->text));
        }
        if (static_cast<int>(texts.size()) == d.sampling.n_samples) entropy = ResponseEntropy(texts);
      }

      observations.push_back(MakeObservation(item, exp.id, consistency, source,
                                             MatchesGold(perturbed.text, item.gold_answers), ratio,
                                             entropy));
      const bool nonfactual = *item.factuality_label == Factuality::kNonFactual;
      if (consistency == Consistency::kConsistent) {
        if (ratio) ratio_in_con.push_back({-*ratio, nonfactual});
        if (entropy) entropy_in_con.push_back({*entropy, nonfactual});
      }
      if (ratio) (nonfactual ? ratio_nf : ratio_f).push_back(*ratio);
      if (abstains(perturbed.text)) {
        ++abst_count;
        if (ratio) {
          abst_logp.push_back(p1);
          abst_ratio.push_back(*ratio);
        }
      }
    }

    consistent_auroc.push_back({{"expression_id", exp.id},
                                {"logprob_ratio", OptionalNumber(TryAuroc(ratio_in_con))},
                                {"entropy", OptionalNumber(TryAuroc(entropy_in_con))}});
    std::optional<double> kl_value;
    if (!ratio_f.empty() && !ratio_nf.empty()) kl_value = HistogramKl(ratio_f, ratio_nf);
    kl.push_back({{"expression_id", exp.id}, {"kl_factual_vs_nonfactual", OptionalNumber(kl_value)}});
    abstention.push_back(
        {{"expression_id", exp.id},
         {"count", abst_count},
         {"mean_reference_logp", abst_logp.empty() ? json(nullptr) : json(Mean(abst_logp))},
         {"mean_logprob_ratio", abst_ratio.empty() ? json(nullptr) : json(Mean(abst_ratio))}});
  }

  const char* provenance = from_proxy == 0 ? "labels" : (from_labels == 0 ? "nli_proxy" : "mixed");
  return json{{"breakdown", GroupBreakdown(observations)},
              {"consistency_provenance", provenance},
              {"consistency_counts", {{"label", from_labels}, {"nli_proxy", from_proxy}}},
              {"accuracy_source", "gold_match"},
              {"consistent_group_auroc", consistent_auroc},
              {"histogram_kl", kl},
              {"abstention", abstention}};
}

}  // namespace

EvalOutputs CmdEval(const ExperimentManifest& manifest, const StageOptions& options,
                    const Runtime& runtime) {
  const LoadedCorpus corpus = LoadCorpus(manifest);
  std::map<std::string, const QaItem*> by_id;
  for (const auto& item : corpus.items) by_id[item.id] = &item;

  const fs::path scores_path = options.scores_path.value_or(manifest.output_dir / "scores.jsonl");
  const auto scores = ReadScores(scores_path);

  std::map<MetricName, std::vector<std::pair<std::string, LabeledScore>>> per_metric;
  for (const auto& s : scores) {
    auto it = by_id.find(s.item_id);
    if (it == by_id.end() || !it->second->factuality_label) {
      throw Error(ErrorCode::kMissingLabels,
                  "scored item '" + s.item_id + "' has no factuality label");
    }
    const bool positive = *it->second->factuality_label == Factuality::kNonFactual;
    per_metric[s.metric_name].push_back({s.item_id, LabeledScore{OrientedValue(s), positive}});
  }

  EvalOutputs outputs;
  json table = json::array();
  std::string table_csv = "metric,auroc,auprc,n_pos,n_neg\n";
  for (const auto& [metric, rows] : per_metric) {
    std::vector<LabeledScore> labeled;
    labeled.reserve(rows.size());
    for (const auto& r : rows) labeled.push_back(r.second);
    const std::string slug(MetricSlug(metric));
    EvalReport report = EvaluateMetric(slug, labeled);
    WriteFileAtomic(manifest.output_dir / ("pr_curve_" + slug + ".csv"), PrCurveCsv(report.pr_points));
    table_csv += fmt::format("{},{},{},{},{}\n", slug, report.auroc, report.auprc, report.n_pos,
                             report.n_neg);

    if (options.threshold) {
      std::vector<double> oriented;
      for (const auto& r : labeled) oriented.push_back(r.score);
      const auto normalized = NormalizeForThreshold(oriented, options.threshold_normalization);
      std::string csv = "item_id,oriented_score,normalized,hallucinated\n";
      for (std::size_t i = 0; i < rows.size(); ++i) {
        csv += fmt::format("{},{},{},{}\n", rows[i].first, oriented[i], normalized[i],
                           normalized[i] >= *options.threshold ? 1 : 0);
      }
      WriteFileAtomic(manifest.output_dir / ("detections_" + slug + ".csv"), csv);
    }
    outputs.reports.push_back(std::move(report));
  }

  json analysis = nullptr;
  if (manifest.breakdown.enabled) {
    for (const auto& item : corpus.items) {
      if (!item.factuality_label) {
        throw Error(ErrorCode::kMissingLabels, "item '" + item.id + "' has no factuality label");
      }
    }
    analysis = BuildAnalysis(manifest, corpus.items, runtime);
  }

  json report_json = {{"reports", outputs.reports}, {"analysis", analysis}};
  outputs.report_json = manifest.output_dir / "report.json";
  WriteFileAtomic(outputs.report_json, Dump(report_json));
  WriteFileAtomic(manifest.output_dir / "metrics_table.csv", table_csv);
  WriteFileAtomic(manifest.output_dir / "pr_curve.svg", PrCurveSvg(outputs.reports));
  return outputs;
}

namespace {

std::string Cell(const json& v, int precision = 3) {
  if (v.is_null()) return "-";
  if (v.is_number_float()) return fmt::format("{:.{}f}", v.get<double>(), precision);
  if (v.is_number()) return std::to_string(v.get<long long>());
  return v.get<std::string>();
}

}  // namespace

std::string CmdReport(const fs::path& report_json) {
  json j;
  try {
    j = json::parse(ReadFile(report_json));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, report_json.string() + ": " + e.what());
  }
  std::string md = "## Detection performance\n\n| Method | AUROC | AUPRC | n_pos | n_neg |\n|---|---|---|---|---|\n";
  for (const auto& r : j.at("reports")) {
    md += fmt::format("| {} | {} | {} | {} | {} |\n", r.at("metric_name").get<std::string>(),
                      Cell(r.at("auroc")), Cell(r.at("auprc")), Cell(r.at("n_pos")), Cell(r.at("n_neg")));
  }
  const json& a = j.at("analysis");
  if (a.is_null()) return md;

  md += fmt::format("\n## Breakdown (consistency from {})\n\n", a.at("consistency_provenance").get<std::string>());
  md += "| Expression | Group | n | Accuracy % | Consistency % | log p2/p1 | Entropy |\n|---|---|---|---|---|---|---|\n";
  for (const auto& r : a.at("breakdown")) {
    md += fmt::format("| {} | {} | {} | {} | {} | {} | {} |\n", Cell(r.at("expression_id")),
                      Cell(r.at("group")), Cell(r.at("n")), Cell(r.at("accuracy_pct"), 1),
                      Cell(r.at("consistency_pct"), 1), Cell(r.at("mean_logprob_ratio")),
                      Cell(r.at("mean_entropy")));
  }
  md += "\n## Consistent group: AUROC / KL / abstentions\n\n"
        "| Expression | AUROC(-log p2/p1) | AUROC(entropy) | KL(F||NF) | abstentions |\n|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < a.at("consistent_group_auroc").size(); ++i) {
    const auto& c = a.at("consistent_group_auroc")[i];
    md += fmt::format("| {} | {} | {} | {} | {} |\n", Cell(c.at("expression_id")), Cell(c.at("logprob_ratio")),
                      Cell(c.at("entropy")), Cell(a.at("histogram_kl")[i].at("kl_factual_vs_nonfactual")),
                      Cell(a.at("abstention")[i].at("count")));
  }
  return md;
}

}  // namespace halludetect

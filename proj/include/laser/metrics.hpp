#pragma once

#include "laser/dataset.hpp"
#include "laser/inference.hpp"
#include "laser/intervention.hpp"
#include "laser/model.hpp"

#include "json.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace laser {

enum class MetricKind { generation, classification, topk };

MetricKind parse_metric(std::string_view name);
std::string_view to_string(MetricKind metric);

struct EvalOptions {
    MetricKind metric = MetricKind::generation;
    // Tokens decoded for generation accuracy; 0 means "as many as the answer has".
    std::size_t max_new_tokens = 0;
    std::size_t top_k = 10;
    bool length_normalized = false;
    bool paraphrases = true;
    std::size_t threads = 1;
    // Optional held-out text for sliding-window perplexity (stride 0 = max_context).
    TokenSequence perplexity_corpus;
    std::size_t perplexity_stride = 0;
};

struct GenerationResult {
    bool correct = false;
    TokenSequence generated; // decoded continuation only
};

// Greedy decoding; correct iff the normalized answer occurs in the normalized
// decoded text (ids mode: answer ids occur as a contiguous run).
GenerationResult generation_accuracy(const TransformerModel& model, const QASample& sample,
                                     std::size_t max_new_tokens = 0);
GenerationResult generation_accuracy(const TransformerModel& model, const TokenSequence& prompt,
                                     const QASample& sample, std::size_t max_new_tokens = 0);

struct ClassificationResult {
    bool correct = false;
    std::vector<double> scores; // summed (or length-normalized) log-probabilities
    std::size_t predicted = 0;  // highest score, lowest index on ties
    std::size_t scorings = 0;   // continuations scored, always equal to the candidate count
};

// Correct iff the gold candidate scores strictly above every other candidate;
// ties count as incorrect.
ClassificationResult classification_accuracy(const TransformerModel& model, const QASample& sample,
                                             bool length_normalized = false);
ClassificationResult classification_accuracy(const TransformerModel& model, const TokenSequence& prompt,
                                             const QASample& sample, bool length_normalized = false);

// The answer must be a single token (ignoring a leading separator); throws
// ArgumentError otherwise.
bool topk_accuracy(const TransformerModel& model, const QASample& sample, std::size_t k);

// Fraction of samples with at least one paraphrase that are answered correctly
// under the original prompt and every paraphrase. nullopt if no sample has paraphrases.
std::optional<double> paraphrase_robustness(const TransformerModel& model, const std::vector<QASample>& samples,
                                            const EvalOptions& options);

struct SampleRecord {
    std::string id;
    bool correct = false;
    double loss = 0.0;                 // mean NLL of the gold continuation
    std::vector<TokenId> topk;         // top-k next-token ids after the prompt
    std::optional<bool> topk_correct;  // only for single-token answers
    nlohmann::json generated;          // text or ids for generation, null otherwise
    std::vector<double> candidate_scores;
    std::optional<std::size_t> predicted_candidate;
    std::vector<bool> paraphrase_correct;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// Evaluates one sample under the chosen metric. Errors are rethrown with the sample id.
SampleRecord evaluate_sample(const TransformerModel& model, const QASample& sample, const EvalOptions& options);

struct EvalAggregates {
    std::size_t n_samples = 0;
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::optional<double> topk_accuracy;
    std::optional<double> paraphrase_robustness;
    std::optional<double> perplexity;

    friend bool operator==(const EvalAggregates&, const EvalAggregates&) = default;
};

struct EvalReport {
    std::vector<SampleRecord> records; // sorted by id
    EvalAggregates aggregates;
    nlohmann::json metadata = nlohmann::json::object();
};

EvalAggregates aggregate(const std::vector<SampleRecord>& records);

// Evaluates all samples (in parallel across samples when options.threads > 1)
// and records metric, plan and model hash in the metadata.
EvalReport evaluate(const TransformerModel& model, const std::vector<QASample>& samples, const EvalOptions& options,
                    const InterventionPlan& plan = {});

nlohmann::json to_json(const SampleRecord& record);
SampleRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
EvalReport read_report(const std::filesystem::path& path);

// metric,group,value rows preceded by a "# config_hash=... model_hash=... seed=..." line.
std::string to_csv(const EvalReport& report);

} // namespace laser

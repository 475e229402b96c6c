#pragma once

#include "laser/dataset.hpp"
#include "laser/metrics.hpp"
#include "laser/model.hpp"
#include "laser/search.hpp"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace laser {

// Per-sample correctness transitions between a baseline and an intervened
// report. never_correct completes the partition of the id set.
struct FlipSets {
    std::set<std::string> originally_correct; // right before and after
    std::set<std::string> answer_corrected;   // wrong -> right
    std::set<std::string> answer_broken;      // right -> wrong
    std::set<std::string> never_correct;      // wrong before and after

    friend bool operator==(const FlipSets&, const FlipSets&) = default;
};

// Throws ArgumentError unless both reports cover the same ids.
FlipSets flip_sets(const EvalReport& baseline, const EvalReport& intervened);
nlohmann::json to_json(const FlipSets& flips);

// correct[step][sample]; counts (sample, step) pairs that are correct at
// step - 1 and incorrect at step.
std::size_t count_monotonicity_violations(const std::vector<std::vector<bool>>& correct);

// Evaluates each family member (same slot and method, rho strictly
// decreasing) and counts monotonicity violations along the chain.
std::size_t monotonicity_audit(const TransformerModel& model, const std::vector<QASample>& samples,
                               const EvalOptions& options, const std::vector<InterventionSpec>& family);

// Plain-text documents: a directory of files (read in name order) or a JSONL
// file whose records carry a `text` field.
std::vector<std::string> load_corpus(const std::filesystem::path& path);

struct Cooccurrence {
    std::map<std::string, std::uint64_t> counts;
    std::vector<std::string> warnings; // samples skipped for missing subject/answer_text
};

// Per sample, the number of documents containing both the subject and the
// answer text as case-insensitive substrings.
Cooccurrence corpus_cooccurrence(const std::vector<std::string>& documents, const std::vector<QASample>& samples,
                                 std::size_t threads = 1);

enum class CorrectnessField { correct, topk };

struct FrequencyBin {
    std::uint64_t lower = 0;
    std::optional<std::uint64_t> upper; // exclusive; nullopt for the open last bin
    std::size_t n_samples = 0;
    double baseline_accuracy = 0.0;
    double intervened_accuracy = 0.0;
    double boost = 0.0;
};

struct CumulativePoint {
    std::uint64_t frequency = 0;
    std::size_t n_samples = 0; // samples with frequency <= this value
    double baseline_accuracy = 0.0;
    double intervened_accuracy = 0.0;
};

struct FrequencyBinReport {
    std::vector<std::uint64_t> edges;
    std::vector<FrequencyBin> bins;
    std::vector<CumulativePoint> cumulative;
};

// Bins are [edges[i], edges[i+1]) plus [edges.back(), inf); edges must start
// at 0 and increase strictly. Every report id needs a frequency.
FrequencyBinReport frequency_binned_boost(const EvalReport& baseline, const EvalReport& intervened,
                                          const std::map<std::string, std::uint64_t>& frequencies,
                                          const std::vector<std::uint64_t>& edges,
                                          CorrectnessField field = CorrectnessField::correct);

nlohmann::json to_json(const FrequencyBinReport& report);
std::string to_csv(const FrequencyBinReport& report);

inline const std::vector<double> kDefaultHigherOrderFractions = {0.0, 0.5, 0.8, 0.9, 0.95, 0.99};

// The n most frequent tokens over the sequences (ties by lowest id).
std::vector<TokenId> most_frequent_tokens(const std::vector<TokenSequence>& sequences, std::size_t n = 20);

struct HigherOrderRow {
    std::string id;
    double fraction = 0.0;
    TokenId predicted = 0;
    TokenId answer = 0;
    bool generic = false;
    double similarity = 0.0;
};

struct HigherOrderStudy {
    MatrixType tau = MatrixType::u_in;
    std::size_t layer = 0;
    std::vector<double> fractions;
    std::vector<HigherOrderRow> rows; // fraction-major, samples in input order
    std::vector<double> mean_similarity;
    std::vector<double> generic_rate;
};

// For each fraction f, the slot keeps only what remains after removing the top
// floor(f * min(m, n)) singular components (f = 0 uses the unmodified model),
// and records the first-answer-token prediction of every sample.
HigherOrderStudy higher_order_study(const TransformerModel& model, const std::vector<QASample>& samples, MatrixType tau,
                                    std::size_t layer, const std::vector<double>& fractions,
                                    const std::vector<TokenId>& generic_tokens);

nlohmann::json to_json(const HigherOrderStudy& study);
std::string to_csv(const HigherOrderStudy& study);

struct SweepCell {
    MatrixType tau = MatrixType::u_in;
    std::size_t layer = 0;
    double rho = 0.0;
    double objective = 0.0;
};

struct LayerSweep {
    Objective objective = Objective::accuracy;
    double baseline = 0.0;
    std::vector<SweepCell> cells; // tau enum order, layer ascending, rho descending
};

LayerSweep layer_sweep(const ModelConfig& config, const SearchConfig& search, const PlanObjective& score);

// tau,layer,rho,reduction_pct,objective,baseline
std::string to_csv(const LayerSweep& sweep);

} // namespace laser

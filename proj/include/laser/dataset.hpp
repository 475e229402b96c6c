#pragma once

#include "laser/inference.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace laser {

enum class PromptTemplate {
    counterfact,
    hotpot,
    fever,
    bios_gender,
    bios_profession,
    epistemic,
    truthfulqa,
    wikidata_qa,
    raw,
};

PromptTemplate parse_template(std::string_view name);
std::string_view to_string(PromptTemplate t);

// Renders the prompt for one record. `statement` is only used by truthfulqa
// (the answer option being judged).
std::string apply_template(PromptTemplate t, const std::string& question, const std::string& statement = {});

// Closed label set used when a record does not list its own candidates; empty
// for open-ended (generation) templates.
std::vector<std::string> default_candidates(PromptTemplate t);

// One evaluation item. Text mode fills the string fields; ids mode (datasets
// pre-tokenized by the exporter) fills the *_ids fields instead.
struct QASample {
    std::string id;
    bool ids_mode = false;

    std::string prompt;
    std::string answer;
    std::vector<std::string> paraphrases;
    std::vector<std::string> candidates;

    TokenSequence prompt_ids;
    TokenSequence answer_ids;
    std::vector<TokenSequence> paraphrase_ids;
    std::vector<TokenSequence> candidate_ids;

    std::optional<std::uint64_t> frequency;
    std::optional<std::string> subject;
    std::optional<std::string> answer_text;

    bool has_candidates() const { return ids_mode ? !candidate_ids.empty() : !candidates.empty(); }
    std::size_t paraphrase_count() const { return ids_mode ? paraphrase_ids.size() : paraphrases.size(); }
};

// Parses newline-delimited JSON (blank lines skipped) and applies the template
// to prompts and paraphrases of text-mode records. The fever template drops
// every record whose claim also appears with a different label.
// Malformed records raise FormatError naming the 1-based line number.
std::vector<QASample> load_dataset(const std::filesystem::path& path, PromptTemplate t);
std::vector<QASample> parse_dataset(std::string_view jsonl, PromptTemplate t);

struct SplitDataset {
    std::vector<QASample> validation;
    std::vector<QASample> test;
    std::uint64_t split_seed = 0;
};

// round_half_up(0.2 * N) validation samples after a seeded shuffle.
std::size_t validation_size(std::size_t n);

// Deterministic shuffle by seed; the first validation_size(N) samples become
// the validation split. Requires at least 5 samples.
SplitDataset split(std::vector<QASample> samples, std::uint64_t seed);

// Lowercase + strip leading/trailing whitespace.
std::string normalize_text(std::string_view text);

// Token encoding of a sample under the byte tokenizer (text mode) or as-is (ids mode).
struct EncodedSample {
    TokenSequence prompt;
    TokenSequence answer; // continuation scored for the loss
    std::vector<TokenSequence> paraphrases;
    std::vector<TokenSequence> candidates;
    std::optional<std::size_t> answer_candidate; // index into candidates
    std::size_t answer_delimiter = 0;            // leading separator tokens in `answer`
};

// Text continuations get a single separating space when neither side
// supplies whitespace, so "... is" + "Paris" scores " Paris".
std::string continuation_text(std::string_view prompt, std::string_view continuation);

EncodedSample encode_sample(const QASample& sample);

} // namespace laser

#include "laser/metrics.hpp"

#include "laser/container.hpp"
#include "laser/error.hpp"
#include "laser/parallel.hpp"
#include "laser/tokenizer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace laser {

using nlohmann::json;

namespace {

// Byte-level generations need not be valid UTF-8; invalid bytes become U+FFFD
// so the report stays serializable. Correctness is judged on the raw bytes.
json display_text(const TokenSequence& ids) {
    const json raw = ByteTokenizer::decode(ids);
    return json::parse(raw.dump(-1, ' ', false, json::error_handler_t::replace));
}

// Decoder state right after a prompt, plus the next-token distribution.
struct PromptState {
    InferenceSession session;
    std::vector<double> next;

    PromptState(const TransformerModel& model, const TokenSequence& prompt)
        : session(model), next(model.config().vocab_size) {
        if (prompt.empty()) {
            throw ArgumentError("empty prompt");
        }
        check_tokens(model, prompt);
        for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
            session.feed(prompt[i]);
        }
        session.feed(prompt.back(), next);
    }

    std::size_t room(const TransformerModel& model) const {
        return model.config().max_context - session.length();
    }

    // Per-token log-probabilities of a continuation, teacher-forced.
    std::vector<double> score(const TransformerModel& model, const TokenSequence& target) const {
        if (target.empty()) {
            throw ArgumentError("empty continuation");
        }
        if (target.size() - 1 > room(model)) {
            throw ArgumentError("prompt plus continuation exceeds the context window");
        }
        std::vector<double> out;
        out.reserve(target.size());
        InferenceSession s = session;
        std::vector<double> lp = next;
        for (std::size_t i = 0; i < target.size(); ++i) {
            if (target[i] < 0 || static_cast<std::size_t>(target[i]) >= lp.size()) {
                throw ArgumentError("continuation token out of vocabulary");
            }
            out.push_back(lp[static_cast<std::size_t>(target[i])]);
            if (i + 1 < target.size()) {
                s.feed(target[i], lp);
            }
        }
        return out;
    }
};

bool contains_run(const TokenSequence& hay, const TokenSequence& needle) {
    if (needle.empty()) {
        return true;
    }
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

GenerationResult generate(const TransformerModel& model, const PromptState& state, const QASample& sample,
                          const EncodedSample& enc, std::size_t max_new_tokens) {
    std::size_t n = max_new_tokens == 0 ? enc.answer.size() : max_new_tokens;
    n = std::min(n, state.room(model));
    if (n == 0) {
        throw ArgumentError("no room left in the context window to generate");
    }
    GenerationResult out;
    InferenceSession s = state.session;
    std::vector<double> lp = state.next;
    for (std::size_t i = 0; i < n; ++i) {
        const TokenId t = argmax_token(lp);
        out.generated.push_back(t);
        if (i + 1 < n) {
            s.feed(t, lp);
        }
    }
    if (sample.ids_mode) {
        if (sample.answer_ids.empty()) {
            throw ArgumentError("empty answer_ids");
        }
        out.correct = contains_run(out.generated, sample.answer_ids);
    } else {
        const std::string want = normalize_text(sample.answer);
        out.correct = normalize_text(ByteTokenizer::decode(out.generated)).find(want) != std::string::npos;
    }
    return out;
}

ClassificationResult classify(const TransformerModel& model, const PromptState& state, const EncodedSample& enc,
                              bool length_normalized) {
    if (enc.candidates.empty() || !enc.answer_candidate) {
        throw ArgumentError("classification needs a candidate list containing the answer");
    }
    ClassificationResult out;
    for (const auto& c : enc.candidates) {
        const auto lps = state.score(model, c);
        double total = 0.0;
        for (double v : lps) {
            total += v;
        }
        if (length_normalized) {
            total /= static_cast<double>(lps.size());
        }
        out.scores.push_back(total);
        ++out.scorings;
    }
    const std::size_t gold = *enc.answer_candidate;
    out.correct = true;
    for (std::size_t i = 0; i < out.scores.size(); ++i) {
        if (i != gold && !(out.scores[gold] > out.scores[i])) {
            out.correct = false;
        }
        if (out.scores[i] > out.scores[out.predicted]) {
            out.predicted = i;
        }
    }
    return out;
}

// Answer token after skipping the separator, or nullopt for multi-token answers.
std::optional<TokenId> single_answer_token(const EncodedSample& enc) {
    if (enc.answer.size() != enc.answer_delimiter + 1) {
        return std::nullopt;
    }
    return enc.answer.back();
}

std::vector<TokenId> topk_after_delimiter(const PromptState& state,
                                          const EncodedSample& enc, std::size_t k) {
    if (enc.answer_delimiter == 0) {
        return topk_from_log_probs(state.next, k);
    }
    InferenceSession s = state.session;
    std::vector<double> lp(state.next.size());
    for (std::size_t i = 0; i < enc.answer_delimiter; ++i) {
        s.feed(enc.answer[i], lp);
    }
    return topk_from_log_probs(lp, k);
}

bool correct_under(const TransformerModel& model, const PromptState& state, const QASample& sample,
                   const EncodedSample& enc, const EvalOptions& options) {
    switch (options.metric) {
    case MetricKind::generation:
        return generate(model, state, sample, enc, options.max_new_tokens).correct;
    case MetricKind::classification:
        return classify(model, state, enc, options.length_normalized).correct;
    case MetricKind::topk: {
        const auto answer = single_answer_token(enc);
        if (!answer) {
            throw ArgumentError("top-k accuracy needs a single-token answer");
        }
        const auto top = topk_after_delimiter(state, enc, options.top_k);
        return std::find(top.begin(), top.end(), *answer) != top.end();
    }
    }
    return false;
}

std::optional<double> json_opt(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return std::nullopt;
    }
    return j.at(key).get<double>();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

} // namespace

MetricKind parse_metric(std::string_view name) {
    if (name == "generation" || name == "accuracy") return MetricKind::generation;
    if (name == "classification") return MetricKind::classification;
    if (name == "topk") return MetricKind::topk;
    throw ArgumentError("unknown metric '" + std::string(name) + "'");
}

std::string_view to_string(MetricKind metric) {
    switch (metric) {
    case MetricKind::generation:
        return "generation";
    case MetricKind::classification:
        return "classification";
    case MetricKind::topk:
        return "topk";
    }
    return "?";
}

GenerationResult generation_accuracy(const TransformerModel& model, const TokenSequence& prompt,
                                     const QASample& sample, std::size_t max_new_tokens) {
    const EncodedSample enc = encode_sample(sample);
    return generate(model, PromptState(model, prompt), sample, enc, max_new_tokens);
}

GenerationResult generation_accuracy(const TransformerModel& model, const QASample& sample,
                                     std::size_t max_new_tokens) {
    const EncodedSample enc = encode_sample(sample);
    return generate(model, PromptState(model, enc.prompt), sample, enc, max_new_tokens);
}

ClassificationResult classification_accuracy(const TransformerModel& model, const TokenSequence& prompt,
                                             const QASample& sample, bool length_normalized) {
    const EncodedSample enc = encode_sample(sample);
    return classify(model, PromptState(model, prompt), enc, length_normalized);
}

ClassificationResult classification_accuracy(const TransformerModel& model, const QASample& sample,
                                             bool length_normalized) {
    const EncodedSample enc = encode_sample(sample);
    return classify(model, PromptState(model, enc.prompt), enc, length_normalized);
}

bool topk_accuracy(const TransformerModel& model, const QASample& sample, std::size_t k) {
    const EncodedSample enc = encode_sample(sample);
    EvalOptions options;
    options.metric = MetricKind::topk;
    options.top_k = k;
    return correct_under(model, PromptState(model, enc.prompt), sample, enc, options);
}

std::optional<double> paraphrase_robustness(const TransformerModel& model, const std::vector<QASample>& samples,
                                            const EvalOptions& options) {
    EvalOptions opts = options;
    opts.paraphrases = true;
    std::size_t eligible = 0;
    std::size_t robust = 0;
    for (const auto& s : samples) {
        if (s.paraphrase_count() == 0) {
            continue;
        }
        const SampleRecord r = evaluate_sample(model, s, opts);
        ++eligible;
        if (r.correct && std::all_of(r.paraphrase_correct.begin(), r.paraphrase_correct.end(), [](bool b) { return b; })) {
            ++robust;
        }
    }
    if (eligible == 0) {
        return std::nullopt;
    }
    return static_cast<double>(robust) / static_cast<double>(eligible);
}

SampleRecord evaluate_sample(const TransformerModel& model, const QASample& sample, const EvalOptions& options) {
    try {
        const EncodedSample enc = encode_sample(sample);
        const PromptState state(model, enc.prompt);
        SampleRecord r;
        r.id = sample.id;

        const auto lps = state.score(model, enc.answer);
        double nll = 0.0;
        for (double v : lps) {
            nll -= v;
        }
        r.loss = nll / static_cast<double>(lps.size());

        r.topk = topk_after_delimiter(state, enc, options.top_k);
        if (const auto answer = single_answer_token(enc)) {
            r.topk_correct = std::find(r.topk.begin(), r.topk.end(), *answer) != r.topk.end();
        }

        switch (options.metric) {
        case MetricKind::generation: {
            auto g = generate(model, state, sample, enc, options.max_new_tokens);
            r.correct = g.correct;
            r.generated = sample.ids_mode ? json(g.generated) : display_text(g.generated);
            break;
        }
        case MetricKind::classification: {
            auto c = classify(model, state, enc, options.length_normalized);
            r.correct = c.correct;
            r.candidate_scores = std::move(c.scores);
            r.predicted_candidate = c.predicted;
            break;
        }
        case MetricKind::topk:
            if (!r.topk_correct) {
                throw ArgumentError("top-k accuracy needs a single-token answer");
            }
            r.correct = *r.topk_correct;
            break;
        }

        if (options.paraphrases) {
            for (const auto& p : enc.paraphrases) {
                r.paraphrase_correct.push_back(correct_under(model, PromptState(model, p), sample, enc, options));
            }
        }
        return r;
    } catch (const ArgumentError& e) {
        throw ArgumentError("sample " + sample.id + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError("sample " + sample.id + ": " + e.what());
    }
}

EvalAggregates aggregate(const std::vector<SampleRecord>& records) {
    EvalAggregates a;
    a.n_samples = records.size();
    if (records.empty()) {
        return a;
    }
    std::size_t correct = 0;
    std::size_t topk_n = 0;
    std::size_t topk_hit = 0;
    std::size_t para_n = 0;
    std::size_t para_hit = 0;
    double loss = 0.0;
    for (const auto& r : records) {
        correct += r.correct ? 1 : 0;
        loss += r.loss;
        if (r.topk_correct) {
            ++topk_n;
            topk_hit += *r.topk_correct ? 1 : 0;
        }
        if (!r.paraphrase_correct.empty()) {
            ++para_n;
            const bool all = std::all_of(r.paraphrase_correct.begin(), r.paraphrase_correct.end(),
                                         [](bool b) { return b; });
            para_hit += (r.correct && all) ? 1 : 0;
        }
    }
    const auto n = static_cast<double>(records.size());
    a.accuracy = static_cast<double>(correct) / n;
    a.mean_loss = loss / n;
    if (topk_n > 0) {
        a.topk_accuracy = static_cast<double>(topk_hit) / static_cast<double>(topk_n);
    }
    if (para_n > 0) {
        a.paraphrase_robustness = static_cast<double>(para_hit) / static_cast<double>(para_n);
    }
    return a;
}

EvalReport evaluate(const TransformerModel& model, const std::vector<QASample>& samples, const EvalOptions& options,
                    const InterventionPlan& plan) {
    std::vector<SampleRecord> records(samples.size());
    parallel_for(samples.size(), options.threads,
                 [&](std::size_t i) { records[i] = evaluate_sample(model, samples[i], options); });
    std::stable_sort(records.begin(), records.end(),
                     [](const SampleRecord& a, const SampleRecord& b) { return a.id < b.id; });

    EvalReport report;
    report.aggregates = aggregate(records);
    if (!options.perplexity_corpus.empty()) {
        const std::size_t stride =
            options.perplexity_stride == 0 ? model.config().max_context : options.perplexity_stride;
        report.aggregates.perplexity = sliding_window_perplexity(model, options.perplexity_corpus, stride);
    }
    report.records = std::move(records);
    report.metadata["metric"] = to_string(options.metric);
    report.metadata["top_k"] = options.top_k;
    report.metadata["length_normalized"] = options.length_normalized;
    report.metadata["plan"] = to_json(plan);
    report.metadata["model_hash"] = model_hash(model);
    return report;
}

json to_json(const SampleRecord& r) {
    json j;
    j["id"] = r.id;
    j["correct"] = r.correct;
    j["loss"] = r.loss;
    j["topk"] = r.topk;
    j["topk_correct"] = r.topk_correct ? json(*r.topk_correct) : json(nullptr);
    j["generated"] = r.generated;
    j["candidate_scores"] = r.candidate_scores;
    j["predicted_candidate"] = r.predicted_candidate ? json(*r.predicted_candidate) : json(nullptr);
    j["paraphrase_correct"] = r.paraphrase_correct;
    return j;
}

SampleRecord record_from_json(const json& j) {
    try {
        SampleRecord r;
        r.id = j.at("id").get<std::string>();
        r.correct = j.at("correct").get<bool>();
        r.loss = j.at("loss").get<double>();
        r.topk = j.value("topk", std::vector<TokenId>{});
        if (j.contains("topk_correct") && !j.at("topk_correct").is_null()) {
            r.topk_correct = j.at("topk_correct").get<bool>();
        }
        r.generated = j.value("generated", json(nullptr));
        r.candidate_scores = j.value("candidate_scores", std::vector<double>{});
        if (j.contains("predicted_candidate") && !j.at("predicted_candidate").is_null()) {
            r.predicted_candidate = j.at("predicted_candidate").get<std::size_t>();
        }
        r.paraphrase_correct = j.value("paraphrase_correct", std::vector<bool>{});
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("report record: ") + e.what());
    }
}

json to_json(const EvalReport& report) {
    json j;
    j["metadata"] = report.metadata;
    const auto& a = report.aggregates;
    j["aggregates"] = {{"n_samples", a.n_samples},
                       {"accuracy", a.accuracy},
                       {"mean_loss", a.mean_loss},
                       {"topk_accuracy", opt_json(a.topk_accuracy)},
                       {"paraphrase_robustness", opt_json(a.paraphrase_robustness)},
                       {"perplexity", opt_json(a.perplexity)}};
    j["records"] = json::array();
    for (const auto& r : report.records) {
        j["records"].push_back(to_json(r));
    }
    return j;
}

EvalReport report_from_json(const json& j) {
    try {
        EvalReport report;
        report.metadata = j.value("metadata", json::object());
        const auto& a = j.at("aggregates");
        report.aggregates.n_samples = a.at("n_samples").get<std::size_t>();
        report.aggregates.accuracy = a.at("accuracy").get<double>();
        report.aggregates.mean_loss = a.at("mean_loss").get<double>();
        report.aggregates.topk_accuracy = json_opt(a, "topk_accuracy");
        report.aggregates.paraphrase_robustness = json_opt(a, "paraphrase_robustness");
        report.aggregates.perplexity = json_opt(a, "perplexity");
        for (const auto& r : j.at("records")) {
            report.records.push_back(record_from_json(r));
        }
        return report;
    } catch (const json::exception& e) {
        throw FormatError(std::string("eval report: ") + e.what());
    }
}

EvalReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open report " + path.string());
    }
    try {
        return report_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string to_csv(const EvalReport& report) {
    auto meta = [&](const char* key) -> std::string {
        if (!report.metadata.contains(key)) {
            return "";
        }
        const auto& v = report.metadata.at(key);
        return v.is_string() ? v.get<std::string>() : v.dump();
    };
    std::string out = fmt::format("# config_hash={} model_hash={} seed={}\n", meta("config_hash"), meta("model_hash"),
                                  meta("split_seed"));
    out += "metric,group,value\n";
    const auto& a = report.aggregates;
    auto row = [&](std::string_view metric, const std::optional<double>& v) {
        if (v) {
            out += fmt::format("{},all,{}\n", metric, *v);
        }
    };
    out += fmt::format("n_samples,all,{}\n", a.n_samples);
    row("accuracy", a.accuracy);
    row("mean_loss", a.mean_loss);
    row("topk_accuracy", a.topk_accuracy);
    row("paraphrase_robustness", a.paraphrase_robustness);
    row("perplexity", a.perplexity);
    return out;
}

} // namespace laser

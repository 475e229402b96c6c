#include "laser/analysis.hpp"

#include "laser/error.hpp"
#include "laser/intervention.hpp"
#include "laser/linalg.hpp"
#include "laser/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace laser {

using nlohmann::json;

namespace {

std::map<std::string, bool> correctness_by_id(const EvalReport& report, CorrectnessField field) {
    std::map<std::string, bool> out;
    for (const auto& r : report.records) {
        bool value = r.correct;
        if (field == CorrectnessField::topk) {
            if (!r.topk_correct) {
                throw ArgumentError("record " + r.id + " has no top-k correctness");
            }
            value = *r.topk_correct;
        }
        if (!out.emplace(r.id, value).second) {
            throw ArgumentError("duplicate sample id " + r.id + " in report");
        }
    }
    return out;
}

void require_same_ids(const std::map<std::string, bool>& a, const std::map<std::string, bool>& b) {
    if (a.size() != b.size() || !std::equal(a.begin(), a.end(), b.begin(),
                                            [](const auto& x, const auto& y) { return x.first == y.first; })) {
        throw ArgumentError("reports cover different sample ids");
    }
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + p.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

double mean_of(const std::vector<bool>& flags) {
    if (flags.empty()) {
        return 0.0;
    }
    return static_cast<double>(std::count(flags.begin(), flags.end(), true)) / static_cast<double>(flags.size());
}

} // namespace

FlipSets flip_sets(const EvalReport& baseline, const EvalReport& intervened) {
    const auto before = correctness_by_id(baseline, CorrectnessField::correct);
    const auto after = correctness_by_id(intervened, CorrectnessField::correct);
    require_same_ids(before, after);
    FlipSets f;
    for (const auto& [id, was] : before) {
        const bool now = after.at(id);
        if (was && now) {
            f.originally_correct.insert(id);
        } else if (!was && now) {
            f.answer_corrected.insert(id);
        } else if (was) {
            f.answer_broken.insert(id);
        } else {
            f.never_correct.insert(id);
        }
    }
    return f;
}

json to_json(const FlipSets& flips) {
    return json{{"originally_correct", flips.originally_correct},
                {"answer_corrected", flips.answer_corrected},
                {"answer_broken", flips.answer_broken},
                {"never_correct", flips.never_correct}};
}

std::size_t count_monotonicity_violations(const std::vector<std::vector<bool>>& correct) {
    std::size_t violations = 0;
    for (std::size_t t = 1; t < correct.size(); ++t) {
        if (correct[t].size() != correct[t - 1].size()) {
            throw ArgumentError("monotonicity audit: steps cover different sample counts");
        }
        for (std::size_t s = 0; s < correct[t].size(); ++s) {
            if (correct[t - 1][s] && !correct[t][s]) {
                ++violations;
            }
        }
    }
    return violations;
}

std::size_t monotonicity_audit(const TransformerModel& model, const std::vector<QASample>& samples,
                               const EvalOptions& options, const std::vector<InterventionSpec>& family) {
    for (std::size_t i = 1; i < family.size(); ++i) {
        if (family[i].slot() != family[0].slot() || family[i].method != family[0].method) {
            throw ArgumentError("monotonicity audit: family must share one slot and method");
        }
        if (!(family[i].rho < family[i - 1].rho)) {
            throw ArgumentError("monotonicity audit: family must have strictly decreasing rho");
        }
    }
    std::vector<std::vector<bool>> correct;
    for (const auto& spec : family) {
        const EvalReport report = evaluate(apply_intervention(model, spec), samples, options);
        std::vector<bool> flags;
        for (const auto& r : report.records) {
            flags.push_back(r.correct);
        }
        correct.push_back(std::move(flags));
    }
    return count_monotonicity_violations(correct);
}

std::vector<std::string> load_corpus(const std::filesystem::path& path) {
    std::vector<std::string> docs;
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(path)) {
            if (entry.is_regular_file()) {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            docs.push_back(read_file(f));
        }
        return docs;
    }
    const std::string text = read_file(path);
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            docs.push_back(json::parse(line).at("text").get<std::string>());
        } catch (const json::exception& e) {
            throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return docs;
}

Cooccurrence corpus_cooccurrence(const std::vector<std::string>& documents, const std::vector<QASample>& samples,
                                 std::size_t threads) {
    Cooccurrence out;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (!s.subject || s.subject->empty() || !s.answer_text || s.answer_text->empty()) {
            out.warnings.push_back("sample " + s.id + " skipped: missing subject or answer_text");
            continue;
        }
        usable.push_back(i);
    }
    std::vector<std::string> lowered(documents.size());
    parallel_for(documents.size(), threads, [&](std::size_t d) { lowered[d] = lower(documents[d]); });

    std::vector<std::uint64_t> counts(usable.size(), 0);
    parallel_for(usable.size(), threads, [&](std::size_t k) {
        const auto& s = samples[usable[k]];
        const std::string subject = lower(*s.subject);
        const std::string answer = lower(*s.answer_text);
        for (const auto& doc : lowered) {
            if (doc.find(subject) != std::string::npos && doc.find(answer) != std::string::npos) {
                ++counts[k];
            }
        }
    });
    for (std::size_t k = 0; k < usable.size(); ++k) {
        out.counts[samples[usable[k]].id] = counts[k];
    }
    return out;
}

FrequencyBinReport frequency_binned_boost(const EvalReport& baseline, const EvalReport& intervened,
                                          const std::map<std::string, std::uint64_t>& frequencies,
                                          const std::vector<std::uint64_t>& edges, CorrectnessField field) {
    if (edges.empty() || edges.front() != 0) {
        throw ArgumentError("frequency bins: edges must start at 0");
    }
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (edges[i] <= edges[i - 1]) {
            throw ArgumentError("frequency bins: edges must increase strictly");
        }
    }
    const auto before = correctness_by_id(baseline, field);
    const auto after = correctness_by_id(intervened, field);
    require_same_ids(before, after);

    FrequencyBinReport report;
    report.edges = edges;
    std::vector<std::vector<bool>> bin_before(edges.size());
    std::vector<std::vector<bool>> bin_after(edges.size());
    std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> by_freq; // freq -> (n, baseline correct)
    std::map<std::uint64_t, std::size_t> after_by_freq;
    for (const auto& [id, was] : before) {
        const auto it = frequencies.find(id);
        if (it == frequencies.end()) {
            throw ArgumentError("frequency bins: no frequency for sample " + id);
        }
        const std::uint64_t f = it->second;
        const auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), f) - edges.begin()) - 1;
        bin_before[bin].push_back(was);
        bin_after[bin].push_back(after.at(id));
        auto& slot = by_freq[f];
        ++slot.first;
        slot.second += was ? 1 : 0;
        after_by_freq[f] += after.at(id) ? 1 : 0;
    }
    for (std::size_t b = 0; b < edges.size(); ++b) {
        FrequencyBin bin;
        bin.lower = edges[b];
        if (b + 1 < edges.size()) {
            bin.upper = edges[b + 1];
        }
        bin.n_samples = bin_before[b].size();
        bin.baseline_accuracy = mean_of(bin_before[b]);
        bin.intervened_accuracy = mean_of(bin_after[b]);
        bin.boost = bin.intervened_accuracy - bin.baseline_accuracy;
        report.bins.push_back(bin);
    }
    std::size_t n = 0;
    std::size_t hit_before = 0;
    std::size_t hit_after = 0;
    for (const auto& [f, counts] : by_freq) {
        n += counts.first;
        hit_before += counts.second;
        hit_after += after_by_freq[f];
        report.cumulative.push_back({f, n, static_cast<double>(hit_before) / static_cast<double>(n),
                                     static_cast<double>(hit_after) / static_cast<double>(n)});
    }
    return report;
}

json to_json(const FrequencyBinReport& report) {
    json j;
    j["edges"] = report.edges;
    j["bins"] = json::array();
    for (const auto& b : report.bins) {
        j["bins"].push_back({{"lower", b.lower},
                             {"upper", b.upper ? json(*b.upper) : json(nullptr)},
                             {"n_samples", b.n_samples},
                             {"baseline_accuracy", b.baseline_accuracy},
                             {"intervened_accuracy", b.intervened_accuracy},
                             {"boost", b.boost}});
    }
    j["cumulative"] = json::array();
    for (const auto& c : report.cumulative) {
        j["cumulative"].push_back({{"frequency", c.frequency},
                                   {"n_samples", c.n_samples},
                                   {"baseline_accuracy", c.baseline_accuracy},
                                   {"intervened_accuracy", c.intervened_accuracy}});
    }
    return j;
}

std::string to_csv(const FrequencyBinReport& report) {
    std::string out = "kind,lower,upper,n_samples,baseline_accuracy,intervened_accuracy,boost\n";
    for (const auto& b : report.bins) {
        out += fmt::format("bin,{},{},{},{},{},{}\n", b.lower, b.upper ? std::to_string(*b.upper) : "",
                           b.n_samples, b.baseline_accuracy, b.intervened_accuracy, b.boost);
    }
    for (const auto& c : report.cumulative) {
        out += fmt::format("cumulative,0,{},{},{},{},{}\n", c.frequency, c.n_samples,
                           c.baseline_accuracy, c.intervened_accuracy, c.intervened_accuracy - c.baseline_accuracy);
    }
    return out;
}

std::vector<TokenId> most_frequent_tokens(const std::vector<TokenSequence>& sequences, std::size_t n) {
    std::map<TokenId, std::uint64_t> counts;
    for (const auto& seq : sequences) {
        for (TokenId t : seq) {
            ++counts[t];
        }
    }
    std::vector<std::pair<TokenId, std::uint64_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) {
        out.push_back(ranked[i].first);
    }
    return out;
}

HigherOrderStudy higher_order_study(const TransformerModel& model, const std::vector<QASample>& samples, MatrixType tau,
                                    std::size_t layer, const std::vector<double>& fractions,
                                    const std::vector<TokenId>& generic_tokens) {
    if (samples.empty()) {
        throw ArgumentError("higher-order study needs at least one answer-corrected sample");
    }
    if (layer >= model.config().num_layers) {
        throw ArgumentError("higher-order study: layer out of range");
    }
    for (double f : fractions) {
        if (!(f >= 0.0 && f <= 1.0)) {
            throw ArgumentError("higher-order study: fractions must lie in [0, 1]");
        }
    }
    std::vector<EncodedSample> encoded;
    for (const auto& s : samples) {
        encoded.push_back(encode_sample(s));
        if (encoded.back().answer.size() <= encoded.back().answer_delimiter) {
            throw ArgumentError("sample " + s.id + " has an empty answer");
        }
    }
    const std::set<TokenId> generic(generic_tokens.begin(), generic_tokens.end());
    const Matrix& w = model.weight(tau, layer);
    const SvdFactorization f = svd(w);
    const Matrix& embedding = model.baseline().embedding;

    HigherOrderStudy study;
    study.tau = tau;
    study.layer = layer;
    study.fractions = fractions;
    for (double fraction : fractions) {
        const auto removed = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(f.sigma.size())));
        const TransformerModel edited =
            fraction == 0.0 ? model : model.with_override(tau, layer, high_order_approx(f, removed));
        double sim_total = 0.0;
        std::size_t generic_count = 0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& enc = encoded[i];
            TokenSequence context = enc.prompt;
            context.insert(context.end(), enc.answer.begin(),
                           enc.answer.begin() + static_cast<std::ptrdiff_t>(enc.answer_delimiter));
            check_tokens(edited, context);
            InferenceSession session(edited);
            std::vector<double> lp(edited.config().vocab_size);
            for (std::size_t t = 0; t + 1 < context.size(); ++t) {
                session.feed(context[t]);
            }
            session.feed(context.back(), lp);
            HigherOrderRow row;
            row.id = samples[i].id;
            row.fraction = fraction;
            row.predicted = argmax_token(lp);
            row.answer = enc.answer[enc.answer_delimiter];
            row.generic = generic.contains(row.predicted);
            row.similarity = row.predicted == row.answer
                                 ? 1.0
                                 : cosine_similarity(embedding.row(static_cast<std::size_t>(row.predicted)),
                                                     embedding.row(static_cast<std::size_t>(row.answer)));
            sim_total += row.similarity;
            generic_count += row.generic ? 1 : 0;
            study.rows.push_back(row);
        }
        const auto n = static_cast<double>(samples.size());
        study.mean_similarity.push_back(sim_total / n);
        study.generic_rate.push_back(static_cast<double>(generic_count) / n);
    }
    return study;
}

json to_json(const HigherOrderStudy& study) {
    json j;
    j["tau"] = to_string(study.tau);
    j["layer"] = study.layer;
    j["fractions"] = study.fractions;
    j["similarity"] = "cosine similarity of input-embedding rows (1 = identical direction)";
    j["mean_similarity"] = study.mean_similarity;
    j["generic_rate"] = study.generic_rate;
    j["rows"] = json::array();
    for (const auto& r : study.rows) {
        j["rows"].push_back({{"id", r.id},
                             {"fraction", r.fraction},
                             {"predicted", r.predicted},
                             {"answer", r.answer},
                             {"generic", r.generic},
                             {"similarity", r.similarity}});
    }
    return j;
}

std::string to_csv(const HigherOrderStudy& study) {
    std::string out = "fraction,mean_similarity,generic_rate\n";
    for (std::size_t i = 0; i < study.fractions.size(); ++i) {
        out += fmt::format("{},{},{}\n", study.fractions[i], study.mean_similarity[i], study.generic_rate[i]);
    }
    return out;
}

LayerSweep layer_sweep(const ModelConfig& config, const SearchConfig& search, const PlanObjective& score) {
    search.validate(config);
    std::vector<MatrixType> taus = search.tau_set;
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    std::vector<std::size_t> layers = search.layers;
    if (layers.empty()) {
        for (std::size_t l = 0; l < config.num_layers; ++l) {
            layers.push_back(l);
        }
    }
    std::sort(layers.begin(), layers.end());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
    std::vector<double> rhos = search.rho_grid;
    std::sort(rhos.begin(), rhos.end(), std::greater<>());
    rhos.erase(std::unique(rhos.begin(), rhos.end()), rhos.end());

    LayerSweep sweep;
    sweep.objective = search.objective;
    std::vector<InterventionPlan> plans{InterventionPlan{}};
    for (MatrixType tau : taus) {
        for (std::size_t layer : layers) {
            for (double rho : rhos) {
                sweep.cells.push_back({tau, layer, rho, 0.0});
                plans.push_back(InterventionPlan{{{tau, layer, rho, search.method}}});
            }
        }
    }
    std::vector<double> scores(plans.size());
    parallel_for(plans.size(), search.threads, [&](std::size_t i) { scores[i] = score(plans[i]); });
    sweep.baseline = scores.front();
    for (std::size_t i = 0; i < sweep.cells.size(); ++i) {
        sweep.cells[i].objective = scores[i + 1];
    }
    return sweep;
}

std::string to_csv(const LayerSweep& sweep) {
    std::string out = "tau,layer,rho,reduction_pct,objective,baseline\n";
    for (const auto& c : sweep.cells) {
        out += fmt::format("{},{},{},{:.6g},{},{}\n", to_string(c.tau), c.layer, c.rho,
                           100.0 * (1.0 - c.rho), c.objective, sweep.baseline);
    }
    return out;
}

} // namespace laser

#include "laser/dataset.hpp"

#include "laser/error.hpp"
#include "laser/random.hpp"
#include "laser/tokenizer.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace laser {

using nlohmann::json;

namespace {

bool ends_with_any(std::string_view s, std::string_view chars) {
    return !s.empty() && chars.find(s.back()) != std::string_view::npos;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

TokenSequence ids_field(const json& j, const char* key) {
    TokenSequence out;
    for (const auto& v : j.at(key)) {
        out.push_back(v.get<TokenId>());
    }
    return out;
}

std::string string_or_number(const json& v) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_number_integer()) {
        return std::to_string(v.get<long long>());
    }
    throw FormatError("id must be a string or integer");
}

QASample parse_record(const json& j, PromptTemplate t, std::size_t line) {
    if (!j.is_object()) {
        throw FormatError("record is not a JSON object");
    }
    QASample s;
    s.id = j.contains("id") ? string_or_number(j.at("id")) : std::to_string(line);
    s.ids_mode = j.contains("prompt_ids");
    if (s.ids_mode) {
        s.prompt_ids = ids_field(j, "prompt_ids");
        s.answer_ids = ids_field(j, "answer_ids");
        if (j.contains("paraphrases_ids")) {
            for (const auto& p : j.at("paraphrases_ids")) {
                s.paraphrase_ids.push_back(p.get<TokenSequence>());
            }
        }
        if (j.contains("candidates_ids")) {
            for (const auto& c : j.at("candidates_ids")) {
                s.candidate_ids.push_back(c.get<TokenSequence>());
            }
        }
        if (s.prompt_ids.empty()) {
            throw FormatError("prompt_ids is empty");
        }
        if (!s.candidate_ids.empty() &&
            std::find(s.candidate_ids.begin(), s.candidate_ids.end(), s.answer_ids) == s.candidate_ids.end()) {
            throw FormatError("answer_ids is not among candidates_ids");
        }
    } else {
        const std::string question = j.at("prompt").get<std::string>();
        s.answer = j.at("answer").get<std::string>();
        std::string statement;
        if (t == PromptTemplate::truthfulqa) {
            if (!j.contains("statement")) {
                throw FormatError("truthfulqa records need a 'statement' field");
            }
            statement = j.at("statement").get<std::string>();
        }
        s.prompt = apply_template(t, question, statement);
        if (j.contains("paraphrases")) {
            for (const auto& p : j.at("paraphrases")) {
                s.paraphrases.push_back(apply_template(t, p.get<std::string>(), statement));
            }
        }
        if (j.contains("candidates")) {
            s.candidates = j.at("candidates").get<std::vector<std::string>>();
        } else {
            s.candidates = default_candidates(t);
        }
        if (!s.candidates.empty()) {
            const std::string want = normalize_text(s.answer);
            const bool found = std::any_of(s.candidates.begin(), s.candidates.end(),
                                           [&](const std::string& c) { return normalize_text(c) == want; });
            if (!found) {
                throw FormatError("answer '" + s.answer + "' is not among the candidates");
            }
        }
    }
    if (j.contains("frequency")) {
        s.frequency = j.at("frequency").get<std::uint64_t>();
    }
    if (j.contains("subject")) {
        s.subject = j.at("subject").get<std::string>();
    }
    if (j.contains("answer_text")) {
        s.answer_text = j.at("answer_text").get<std::string>();
    } else if (!s.ids_mode) {
        s.answer_text = s.answer;
    }
    return s;
}

// Claims paired with more than one label are ambiguous; drop them entirely.
std::vector<QASample> drop_conflicting_claims(std::vector<QASample> samples) {
    auto claim_key = [](const QASample& s) {
        if (s.ids_mode) {
            std::string key = "ids:";
            for (TokenId t : s.prompt_ids) {
                key += std::to_string(t) + ",";
            }
            return key;
        }
        return s.prompt;
    };
    auto label_key = [](const QASample& s) {
        if (s.ids_mode) {
            std::string key;
            for (TokenId t : s.answer_ids) {
                key += std::to_string(t) + ",";
            }
            return key;
        }
        return normalize_text(s.answer);
    };
    std::map<std::string, std::set<std::string>> labels;
    for (const auto& s : samples) {
        labels[claim_key(s)].insert(label_key(s));
    }
    std::erase_if(samples, [&](const QASample& s) { return labels[claim_key(s)].size() > 1; });
    return samples;
}

} // namespace

PromptTemplate parse_template(std::string_view name) {
    static const std::map<std::string_view, PromptTemplate> kNames = {
        {"counterfact", PromptTemplate::counterfact},
        {"hotpot", PromptTemplate::hotpot},
        {"fever", PromptTemplate::fever},
        {"bios_gender", PromptTemplate::bios_gender},
        {"bios_profession", PromptTemplate::bios_profession},
        {"epistemic", PromptTemplate::epistemic},
        {"truthfulqa", PromptTemplate::truthfulqa},
        {"wikidata_qa", PromptTemplate::wikidata_qa},
        {"raw", PromptTemplate::raw},
    };
    if (auto it = kNames.find(name); it != kNames.end()) {
        return it->second;
    }
    throw ArgumentError("unknown prompt template '" + std::string(name) + "'");
}

std::string_view to_string(PromptTemplate t) {
    switch (t) {
    case PromptTemplate::counterfact:
        return "counterfact";
    case PromptTemplate::hotpot:
        return "hotpot";
    case PromptTemplate::fever:
        return "fever";
    case PromptTemplate::bios_gender:
        return "bios_gender";
    case PromptTemplate::bios_profession:
        return "bios_profession";
    case PromptTemplate::epistemic:
        return "epistemic";
    case PromptTemplate::truthfulqa:
        return "truthfulqa";
    case PromptTemplate::wikidata_qa:
        return "wikidata_qa";
    case PromptTemplate::raw:
        return "raw";
    }
    return "?";
}

std::string apply_template(PromptTemplate t, const std::string& question, const std::string& statement) {
    switch (t) {
    case PromptTemplate::hotpot:
        if (ends_with_any(question, "?.")) {
            return question + " The answer is";
        }
        return question + "? The answer is";
    case PromptTemplate::fever:
        return "Consider the following claim: " + question + ". Is this claim true or false. The claim is";
    case PromptTemplate::bios_gender:
        return "Consider the following text: " + question +
               ". Is the person in this text male or female? The person is";
    case PromptTemplate::bios_profession:
        return "Consider the following text: " + question +
               ". What is the profession of the person in this text? The profession of this person is";
    case PromptTemplate::truthfulqa:
        if (ends_with_any(statement, ".")) {
            return question + " " + statement + " Is this statement true or false. This statement is";
        }
        return question + " " + statement + ". Is this statement true or false. This statement is";
    case PromptTemplate::counterfact:
    case PromptTemplate::epistemic:
    case PromptTemplate::wikidata_qa:
    case PromptTemplate::raw:
        return question;
    }
    return question;
}

std::vector<std::string> default_candidates(PromptTemplate t) {
    switch (t) {
    case PromptTemplate::fever:
    case PromptTemplate::truthfulqa:
        return {"true", "false"};
    case PromptTemplate::bios_gender:
        return {"male", "female"};
    case PromptTemplate::bios_profession:
        return {"journalist", "poet", "composer", "model", "teacher", "architect", "painter", "professor"};
    case PromptTemplate::epistemic:
        return {"entailment", "non-entailment"};
    default:
        return {};
    }
}

std::vector<QASample> parse_dataset(std::string_view jsonl, PromptTemplate t) {
    std::vector<QASample> samples;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= jsonl.size()) {
        std::size_t end = jsonl.find('\n', start);
        if (end == std::string_view::npos) {
            end = jsonl.size();
        }
        ++line_no;
        const std::string_view line = jsonl.substr(start, end - start);
        start = end + 1;
        if (std::all_of(line.begin(), line.end(), is_space)) {
            if (end == jsonl.size()) {
                break;
            }
            continue;
        }
        try {
            samples.push_back(parse_record(json::parse(line), t, line_no));
        } catch (const json::exception& e) {
            throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
        if (end == jsonl.size()) {
            break;
        }
    }
    if (t == PromptTemplate::fever) {
        samples = drop_conflicting_claims(std::move(samples));
    }
    return samples;
}

std::vector<QASample> load_dataset(const std::filesystem::path& path, PromptTemplate t) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open dataset " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str(), t);
}

std::size_t validation_size(std::size_t n) { return (2 * n + 5) / 10; }

SplitDataset split(std::vector<QASample> samples, std::uint64_t seed) {
    if (samples.size() < 5) {
        throw ArgumentError("split needs at least 5 samples, got " + std::to_string(samples.size()));
    }
    SeededRng rng(seed);
    rng.shuffle(samples.begin(), samples.end());
    const auto n_val = static_cast<std::ptrdiff_t>(validation_size(samples.size()));
    SplitDataset out;
    out.split_seed = seed;
    out.validation.assign(std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.begin() + n_val));
    out.test.assign(std::make_move_iterator(samples.begin() + n_val), std::make_move_iterator(samples.end()));
    return out;
}

std::string normalize_text(std::string_view text) {
    std::size_t b = 0;
    std::size_t e = text.size();
    while (b < e && is_space(text[b])) {
        ++b;
    }
    while (e > b && is_space(text[e - 1])) {
        --e;
    }
    std::string out(text.substr(b, e - b));
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string continuation_text(std::string_view prompt, std::string_view continuation) {
    if (prompt.empty() || continuation.empty() || is_space(prompt.back()) || is_space(continuation.front())) {
        return std::string(continuation);
    }
    return " " + std::string(continuation);
}

EncodedSample encode_sample(const QASample& s) {
    EncodedSample e;
    if (s.ids_mode) {
        e.prompt = s.prompt_ids;
        e.answer = s.answer_ids;
        e.paraphrases = s.paraphrase_ids;
        e.candidates = s.candidate_ids;
        for (std::size_t i = 0; i < e.candidates.size(); ++i) {
            if (e.candidates[i] == e.answer) {
                e.answer_candidate = i;
                break;
            }
        }
        return e;
    }
    e.prompt = ByteTokenizer::encode_prompt(s.prompt);
    const std::string answer = continuation_text(s.prompt, s.answer);
    e.answer = ByteTokenizer::encode(answer);
    e.answer_delimiter = answer.size() - s.answer.size();
    for (const auto& p : s.paraphrases) {
        e.paraphrases.push_back(ByteTokenizer::encode_prompt(p));
    }
    const std::string want = normalize_text(s.answer);
    for (std::size_t i = 0; i < s.candidates.size(); ++i) {
        e.candidates.push_back(ByteTokenizer::encode(continuation_text(s.prompt, s.candidates[i])));
        if (!e.answer_candidate && normalize_text(s.candidates[i]) == want) {
            e.answer_candidate = i;
        }
    }
    return e;
}

} // namespace laser

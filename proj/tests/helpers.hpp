#pragma once

#include "laser/dataset.hpp"
#include "laser/model.hpp"
#include "laser/random.hpp"
#include "laser/tokenizer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace testing {

inline std::filesystem::path fixture_dir() { return LASER_FIXTURE_DIR; }
inline std::filesystem::path golden_dir() { return LASER_GOLDEN_DIR; }

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("laser_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline laser::ModelConfig small_config(std::size_t layers = 2, std::size_t d = 16, std::size_t heads = 2,
                                       std::size_t mlp = 32, std::size_t vocab = 259, std::size_t context = 24) {
    laser::ModelConfig c;
    c.num_layers = layers;
    c.hidden_dim = d;
    c.num_heads = heads;
    c.mlp_hidden_dim = mlp;
    c.vocab_size = vocab;
    c.max_context = context;
    return c;
}

inline laser::TransformerModel random_model(std::uint64_t seed, laser::ModelConfig c = small_config(),
                                            double scale = 0.3) {
    return laser::TransformerModel(laser::make_random_weights(c, seed, scale));
}

// A model whose next-token prediction depends only on the position: after
// consuming t + 1 tokens it predicts script[t] with probability ~1 and spreads
// the rest uniformly over every token that is not in the script.
inline laser::TransformerModel scripted_model(const std::string& script) {
    const std::size_t T = 32;
    laser::ModelConfig c = small_config(1, T, 1, 4, laser::ByteTokenizer::kVocabSize, T);
    c.use_bias = false;
    laser::ModelWeights w = laser::make_zero_weights(c);
    for (std::size_t t = 0; t < T; ++t) {
        w.position(t, t) = 1.0;
    }
    for (std::size_t t = 0; t < script.size() && t < T; ++t) {
        w.unembedding(t, static_cast<unsigned char>(script[t])) += 10.0;
    }
    return laser::TransformerModel(std::move(w));
}

// Scripted model whose rank-1 U_out (4 x 32) overrides the prediction at
// position 4: there it emits 'q' instead of script[4]. Truncating U_out to rank
// 0 restores the scripted prediction. Hidden unit 0 fires only at position 4
// and writes into residual dimension 31, which only the unembedding row for
// 'q' reads.
inline laser::TransformerModel planted_mlp_model(const std::string& script) {
    laser::TransformerModel base = scripted_model(script);
    laser::ModelWeights w = base.materialize();
    auto& layer = w.layers[0];
    layer.matrices[static_cast<std::size_t>(laser::MatrixType::u_in)](4, 0) = 1.0;
    layer.matrices[static_cast<std::size_t>(laser::MatrixType::u_out)](0, 31) = 5.0;
    w.unembedding(31, 'q') += 10.0;
    return laser::TransformerModel(std::move(w));
}

// Script that makes a prompt of `prompt_tokens` tokens continue with `text`.
inline std::string continue_with(std::size_t prompt_tokens, const std::string& text, char filler = '#') {
    return std::string(prompt_tokens - 1, filler) + text + std::string(8, filler);
}

inline laser::QASample text_sample(std::string id, std::string prompt, std::string answer,
                                   std::vector<std::string> candidates = {}) {
    laser::QASample s;
    s.id = std::move(id);
    s.prompt = std::move(prompt);
    s.answer = std::move(answer);
    s.answer_text = s.answer;
    s.candidates = std::move(candidates);
    return s;
}

inline laser::QASample ids_sample(std::string id, laser::TokenSequence prompt, laser::TokenSequence answer) {
    laser::QASample s;
    s.id = std::move(id);
    s.ids_mode = true;
    s.prompt_ids = std::move(prompt);
    s.answer_ids = std::move(answer);
    return s;
}

// Random short byte-level QA samples for property tests on random models.
inline std::vector<laser::QASample> random_samples(std::uint64_t seed, std::size_t n, std::size_t prompt_len = 6,
                                                   std::size_t answer_len = 2) {
    laser::SeededRng rng(seed);
    std::vector<laser::QASample> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string prompt;
        for (std::size_t k = 0; k < prompt_len; ++k) {
            prompt += static_cast<char>('a' + rng.below(6));
        }
        std::string answer;
        for (std::size_t k = 0; k < answer_len; ++k) {
            answer += static_cast<char>('a' + rng.below(6));
        }
        char id[16];
        std::snprintf(id, sizeof id, "s%03zu", i);
        out.push_back(text_sample(id, prompt + " ", answer));
    }
    return out;
}

} // namespace testing

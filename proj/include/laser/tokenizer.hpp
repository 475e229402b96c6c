#pragma once

#include "laser/inference.hpp"

#include <string>
#include <string_view>

namespace laser {

// Byte-level tokenizer for toy models: ids 0..255 are raw bytes, followed by
// three special tokens. Real checkpoints are evaluated on pre-tokenized ids.
class ByteTokenizer {
public:
    static constexpr TokenId kBos = 256;
    static constexpr TokenId kEos = 257;
    static constexpr TokenId kPad = 258;
    static constexpr std::size_t kVocabSize = 259;

    static TokenSequence encode(std::string_view text);
    // Prompt encoding: BOS followed by the bytes of the text.
    static TokenSequence encode_prompt(std::string_view text);
    // Special tokens decode to nothing.
    static std::string decode(const TokenSequence& ids);
};

} // namespace laser

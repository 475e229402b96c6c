#include "laser/tokenizer.hpp"

namespace laser {

TokenSequence ByteTokenizer::encode(std::string_view text) {
    TokenSequence out;
    out.reserve(text.size());
    for (char c : text) {
        out.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
    }
    return out;
}

TokenSequence ByteTokenizer::encode_prompt(std::string_view text) {
    TokenSequence out;
    out.reserve(text.size() + 1);
    out.push_back(kBos);
    for (char c : text) {
        out.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string ByteTokenizer::decode(const TokenSequence& ids) {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
        if (id >= 0 && id < 256) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        }
    }
    return out;
}

} // namespace laser

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lmtrace {

using TokenId = std::uint32_t;

// Byte-level BPE vocabulary in the GPT-2 two-file format.
struct BpeVocab {
    std::unordered_map<std::string, TokenId> token_to_id;
    std::vector<std::string> id_to_token;                // byte-mapped spelling, as in vocab.json
    std::unordered_map<std::string, std::size_t> merges;  // "left right" -> rank
    std::vector<std::string> byte_to_symbol;             // 256 entries, UTF-8
    std::unordered_map<std::string, std::uint8_t> symbol_to_byte;
};

class Tokenizer {
public:
    static Tokenizer load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);
    static Tokenizer from_text(std::string_view vocab_json, std::string_view merges_txt);

    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    // Raw bytes of one token; may be a partial UTF-8 sequence.
    const std::string& token_bytes(TokenId id) const;

    std::size_t vocab_size() const noexcept { return vocab_.id_to_token.size(); }
    const BpeVocab& vocab() const noexcept { return vocab_; }

private:
    explicit Tokenizer(BpeVocab vocab);
    void bpe(std::string_view chunk, std::vector<TokenId>& out) const;

    BpeVocab vocab_;
    std::vector<std::string> decoded_;  // id -> raw bytes
};

// GPT-2 pre-tokenization: splits text into the chunks the published pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
// would produce. Invalid UTF-8 bytes are treated as single non-letter,
// non-number, non-space characters.
std::vector<std::string_view> pretokenize(std::string_view text);

}  // namespace lmtrace

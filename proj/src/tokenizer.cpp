#include "lmtrace/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "lmtrace/errors.hpp"

namespace lmtrace {
namespace {

struct CodepointRange {
    char32_t first;
    char32_t last;
};

#include "unicode_tables.inc"

template <std::size_t N>
bool in_ranges(const CodepointRange (&table)[N], char32_t cp) {
    auto it = std::upper_bound(std::begin(table), std::end(table), cp,
                               [](char32_t v, const CodepointRange& r) { return v < r.first; });
    if (it == std::begin(table)) return false;
    --it;
    return cp <= it->last;
}

enum class CharClass : std::uint8_t { Letter, Number, Space, Other };

struct Char {
    char32_t cp;
    std::size_t begin;  // byte offset
    std::size_t len;    // byte length
    CharClass cls;
};

constexpr char32_t kInvalid = 0xFFFFFFFF;

CharClass classify(char32_t cp) {
    if (cp == kInvalid) return CharClass::Other;
    if (cp < 0x80) {
        if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return CharClass::Letter;
        if (cp >= '0' && cp <= '9') return CharClass::Number;
        if (cp == ' ' || (cp >= 0x09 && cp <= 0x0D)) return CharClass::Space;
        return CharClass::Other;
    }
    if (in_ranges(kLetterRanges, cp)) return CharClass::Letter;
    if (in_ranges(kNumberRanges, cp)) return CharClass::Number;
    if (in_ranges(kSpaceRanges, cp)) return CharClass::Space;
    return CharClass::Other;
}

// Decodes one UTF-8 sequence; malformed input yields a 1-byte kInvalid char.
std::pair<char32_t, std::size_t> next_codepoint(std::string_view s, std::size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) return {b0, 1};
    std::size_t len;
    char32_t cp;
    char32_t min;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2, cp = b0 & 0x1F, min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3, cp = b0 & 0x0F, min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4, cp = b0 & 0x07, min = 0x10000;
    } else {
        return {kInvalid, 1};
    }
    if (i + len > s.size()) return {kInvalid, 1};
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) return {kInvalid, 1};
        cp = (cp << 6) | (b & 0x3F);
    }
    if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return {kInvalid, 1};
    return {cp, len};
}

std::vector<Char> decode_chars(std::string_view text) {
    std::vector<Char> chars;
    chars.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
        auto [cp, len] = next_codepoint(text, i);
        chars.push_back({cp, i, len, classify(cp)});
        i += len;
    }
    return chars;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// The GPT-2 reversible byte <-> printable codepoint table.
std::vector<char32_t> byte_codepoints() {
    std::vector<char32_t> map(256, 0);
    std::vector<bool> direct(256, false);
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) map[b] = direct[b] ? static_cast<char32_t>(b) : next++;
    return map;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VocabFormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
    const std::vector<Char> c = decode_chars(text);
    const std::size_t n = c.size();
    std::vector<std::string_view> out;

    auto emit = [&](std::size_t from, std::size_t to) {
        const std::size_t b = c[from].begin;
        const std::size_t e = c[to - 1].begin + c[to - 1].len;
        out.push_back(text.substr(b, e - b));
    };
    auto run_end = [&](std::size_t from, CharClass cls) {
        while (from < n && c[from].cls == cls) ++from;
        return from;
    };

    std::size_t p = 0;
    while (p < n) {
        if (c[p].cp == U'\'' && p + 1 < n) {
            const char32_t a = c[p + 1].cp;
            const char32_t b = p + 2 < n ? c[p + 2].cp : 0;
            std::size_t len = 0;
            if (a == U's' || a == U't' || a == U'm' || a == U'd') {
                len = 2;
            } else if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) {
                len = 3;
            }
            if (len) {
                emit(p, p + len);
                p += len;
                continue;
            }
        }

        // Letter, number or other run, optionally led by one literal space.
        std::size_t q = p;
        if (c[p].cp == U' ' && p + 1 < n && c[p + 1].cls != CharClass::Space) q = p + 1;
        if (c[q].cls != CharClass::Space) {
            const std::size_t e = run_end(q, c[q].cls);
            emit(p, e);
            p = e;
            continue;
        }

        // Whitespace: a run followed by text leaves its last character to lead the next chunk.
        const std::size_t e = run_end(p, CharClass::Space);
        if (e == n) {
            emit(p, e);
            p = e;
        } else if (e - p >= 2) {
            emit(p, e - 1);
            p = e - 1;
        } else {
            emit(p, p + 1);
            p += 1;
        }
    }
    return out;
}

Tokenizer::Tokenizer(BpeVocab vocab) : vocab_(std::move(vocab)) {
    decoded_.reserve(vocab_.id_to_token.size());
    for (const auto& tok : vocab_.id_to_token) {
        std::string bytes;
        for (std::size_t i = 0; i < tok.size();) {
            auto [cp, len] = next_codepoint(tok, i);
            std::string sym = tok.substr(i, len);
            auto it = vocab_.symbol_to_byte.find(sym);
            if (cp == kInvalid || it == vocab_.symbol_to_byte.end()) {
                throw VocabFormatError("vocabulary token contains a character outside the byte map");
            }
            bytes.push_back(static_cast<char>(it->second));
            i += len;
        }
        decoded_.push_back(std::move(bytes));
    }
}

Tokenizer Tokenizer::from_text(std::string_view vocab_json, std::string_view merges_txt) {
    BpeVocab v;
    const auto cps = byte_codepoints();
    v.byte_to_symbol.resize(256);
    for (int b = 0; b < 256; ++b) {
        std::string s;
        append_utf8(s, cps[b]);
        v.symbol_to_byte.emplace(s, static_cast<std::uint8_t>(b));
        v.byte_to_symbol[b] = std::move(s);
    }

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(vocab_json);
    } catch (const nlohmann::json::parse_error& e) {
        throw VocabFormatError(std::string("vocabulary document: ") + e.what());
    }
    if (!doc.is_object() || doc.empty()) throw VocabFormatError("vocabulary document must be a non-empty object");
    v.id_to_token.assign(doc.size(), {});
    std::vector<bool> seen(doc.size(), false);
    for (const auto& [tok, jid] : doc.items()) {
        if (!jid.is_number_unsigned() || jid.get<std::size_t>() >= doc.size()) {
            throw VocabFormatError("token ids must be dense in [0, n_vocab)");
        }
        const auto id = jid.get<std::size_t>();
        if (seen[id]) throw VocabFormatError("duplicate token id " + std::to_string(id));
        seen[id] = true;
        v.id_to_token[id] = tok;
        v.token_to_id.emplace(tok, static_cast<TokenId>(id));
    }
    for (const auto& sym : v.byte_to_symbol) {
        if (!v.token_to_id.contains(sym)) throw VocabFormatError("vocabulary lacks a single-byte token");
    }

    std::size_t rank = 0;
    std::size_t pos = 0;
    while (pos < merges_txt.size()) {
        std::size_t eol = merges_txt.find('\n', pos);
        if (eol == std::string_view::npos) eol = merges_txt.size();
        std::string_view line = merges_txt.substr(pos, eol - pos);
        pos = eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.starts_with("#version")) continue;
        const std::size_t sp = line.find(' ');
        if (sp == std::string_view::npos || sp == 0 || sp + 1 == line.size() ||
            line.find(' ', sp + 1) != std::string_view::npos) {
            throw VocabFormatError("malformed merge rule: " + std::string(line));
        }
        if (!v.merges.emplace(std::string(line), rank).second) {
            throw VocabFormatError("duplicate merge rule: " + std::string(line));
        }
        ++rank;
    }
    return Tokenizer(std::move(v));
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt) {
    return from_text(read_file(vocab_json), read_file(merges_txt));
}

void Tokenizer::bpe(std::string_view chunk, std::vector<TokenId>& out) const {
    std::vector<std::string> parts;
    parts.reserve(chunk.size());
    for (unsigned char b : chunk) parts.push_back(vocab_.byte_to_symbol[b]);

    constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    std::string key;
    while (parts.size() > 1) {
        std::size_t best = kNone;
        std::size_t best_at = 0;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            key.assign(parts[i]).append(" ").append(parts[i + 1]);
            if (auto it = vocab_.merges.find(key); it != vocab_.merges.end() && it->second < best) {
                best = it->second;
                best_at = i;
            }
        }
        if (best == kNone) break;
        const std::string left = parts[best_at];
        const std::string right = parts[best_at + 1];
        std::vector<std::string> merged;
        merged.reserve(parts.size());
        for (std::size_t i = 0; i < parts.size();) {
            if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
                merged.push_back(left + right);
                i += 2;
            } else {
                merged.push_back(std::move(parts[i]));
                i += 1;
            }
        }
        parts = std::move(merged);
    }

    for (const auto& p : parts) {
        auto it = vocab_.token_to_id.find(p);
        if (it != vocab_.token_to_id.end()) {
            out.push_back(it->second);
            continue;
        }
        // Merge result missing from the vocabulary: fall back to its bytes.
        for (std::size_t i = 0; i < p.size();) {
            auto [cp, len] = next_codepoint(p, i);
            out.push_back(vocab_.token_to_id.at(p.substr(i, len)));
            i += len;
        }
    }
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (std::string_view chunk : pretokenize(text)) bpe(chunk, ids);
    return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) out += token_bytes(id);
    return out;
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
    if (id >= decoded_.size()) {
        throw UnknownTokenId("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(decoded_.size()));
    }
    return decoded_[id];
}

}  // namespace lmtrace

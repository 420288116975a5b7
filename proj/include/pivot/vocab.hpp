#pragma once

#include "pivot/errors.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pivot {

// A prompt is a sequence of token ids over the closed vocabulary below.
using Prompt = std::vector<std::int32_t>;

// Closed token vocabulary: concept tokens c0..c{C-1}, style tokens
// s0..s{S-1}, then BOS, EOS, PAD. Ids are dense and stable in that order.
struct Vocab {
    int n_concepts = 8;
    int n_styles = 4;

    int size() const { return n_concepts + n_styles + 3; }
    int concept_id(int i) const { return i; }
    int style_id(int j) const { return n_concepts + j; }
    int bos() const { return n_concepts + n_styles; }
    int eos() const { return n_concepts + n_styles + 1; }
    int pad() const { return n_concepts + n_styles + 2; }

    bool is_concept(int id) const { return id >= 0 && id < n_concepts; }
    bool is_style(int id) const { return id >= n_concepts && id < n_concepts + n_styles; }
    bool is_special(int id) const { return id >= n_concepts + n_styles && id < size(); }

    std::string token_name(int id) const {
        if (is_concept(id)) return "c" + std::to_string(id);
        if (is_style(id)) return "s" + std::to_string(id - n_concepts);
        if (id == bos()) return "<bos>";
        if (id == eos()) return "<eos>";
        if (id == pad()) return "<pad>";
        throw InvalidInput("unknown token id " + std::to_string(id));
    }

    int parse_token(const std::string& name) const {
        if (name == "<bos>") return bos();
        if (name == "<eos>") return eos();
        if (name == "<pad>") return pad();
        if (name.size() >= 2 && (name[0] == 'c' || name[0] == 's')) {
            int idx = -1;
            try {
                std::size_t pos = 0;
                idx = std::stoi(name.substr(1), &pos);
                if (pos != name.size() - 1) idx = -1;
            } catch (const std::exception&) {
                idx = -1;
            }
            if (name[0] == 'c' && idx >= 0 && idx < n_concepts) return concept_id(idx);
            if (name[0] == 's' && idx >= 0 && idx < n_styles) return style_id(idx);
        }
        throw InvalidInput("unknown token name \"" + name + "\"");
    }

    std::string prompt_to_string(const Prompt& p) const {
        std::string out;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (i) out += ' ';
            out += token_name(p[i]);
        }
        return out;
    }

    Prompt parse_prompt(const std::string& text) const {
        Prompt out;
        std::string cur;
        auto flush = [&] {
            if (!cur.empty()) {
                out.push_back(parse_token(cur));
                cur.clear();
            }
        };
        for (char c : text) {
            if (c == ' ' || c == '\t' || c == ',')
                flush();
            else
                cur += c;
        }
        flush();
        return out;
    }
};

// Validates the Prompt invariants: nonempty, ids in range, no specials, and
// length within max_len. Trailing PAD is allowed only when pad_ok is set
// (model inputs); PAD must then be contiguous at the tail.
inline void validate_prompt(const Prompt& p, const Vocab& v, int max_len, bool pad_ok = false) {
    if (p.empty()) throw InvalidInput("prompt is empty");
    if (static_cast<int>(p.size()) > max_len)
        throw InvalidInput("prompt length " + std::to_string(p.size()) + " exceeds max_len " +
                           std::to_string(max_len));
    bool seen_pad = false;
    for (std::int32_t id : p) {
        if (id < 0 || id >= v.size())
            throw InvalidInput("unknown token id " + std::to_string(id));
        if (id == v.pad() && pad_ok) {
            seen_pad = true;
            continue;
        }
        if (v.is_special(id))
            throw InvalidInput("special token " + v.token_name(id) + " not allowed inside a prompt");
        if (seen_pad) throw InvalidInput("non-PAD token after PAD");
    }
    if (seen_pad && p[0] == v.pad()) throw InvalidInput("prompt cannot start with PAD");
}

} // namespace pivot

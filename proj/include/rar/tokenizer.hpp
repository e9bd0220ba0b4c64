// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rar {

/// Pluggable token counter. Chunking needs the token stream and a way back to
/// text; everything else only needs counts.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(std::span<const std::string> tokens) const = 0;

    virtual std::size_t count(std::string_view text) const { return tokenize(text).size(); }
};

/// Whitespace-split words. Detokenizing joins with single spaces, so round
/// trips are exact on the token stream, not on the original spacing.
class WhitespaceTokenizer final : public Tokenizer {
public:
    std::vector<std::string> tokenize(std::string_view text) const override;
    std::string detokenize(std::span<const std::string> tokens) const override;
    std::size_t count(std::string_view text) const override;
};

}  // namespace rar

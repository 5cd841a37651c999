// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_TOKENS_HPP
#define SAELAB_TOKENS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace saelab {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Byte-level vocabulary: ids below kNumSpecial are control tokens, every other
// id is the byte with that value.
namespace tokens {
inline constexpr TokenId pad = 0;
inline constexpr TokenId bos = 1;
inline constexpr TokenId eos = 2;
inline constexpr TokenId harm_marker = 3;
inline constexpr TokenId num_special = 4;

constexpr bool is_special(TokenId t) noexcept { return t >= 0 && t < num_special; }
}  // namespace tokens

/// Throws InvalidInput for bytes that collide with control ids or exceed the
/// vocabulary.
TokenSequence encode_text(std::string_view text, std::size_t vocab_size = 128);

/// Control tokens render as <pad>, <bos>, <eos>, <harm>.
std::string decode_tokens(std::span<const TokenId> ids);

/// Drops control tokens.
std::string decode_text(std::span<const TokenId> ids);

}  // namespace saelab

#endif  // SAELAB_TOKENS_HPP

// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/tokens.hpp"

#include "saelab/errors.hpp"

namespace saelab {

TokenSequence encode_text(std::string_view text, std::size_t vocab_size) {
  TokenSequence out;
  out.reserve(text.size());
  for (char ch : text) {
    const auto byte = static_cast<unsigned char>(ch);
    if (byte < tokens::num_special || byte >= vocab_size)
      throw InvalidInput("encode_text: byte " + std::to_string(byte) + " is not a text token");
    out.push_back(static_cast<TokenId>(byte));
  }
  return out;
}

std::string decode_tokens(std::span<const TokenId> ids) {
  std::string out;
  for (TokenId t : ids) {
    switch (t) {
      case tokens::pad: out += "<pad>"; break;
      case tokens::bos: out += "<bos>"; break;
      case tokens::eos: out += "<eos>"; break;
      case tokens::harm_marker: out += "<harm>"; break;
      default: out.push_back(static_cast<char>(t));
    }
  }
  return out;
}

std::string decode_text(std::span<const TokenId> ids) {
  std::string out;
  for (TokenId t : ids)
    if (!tokens::is_special(t)) out.push_back(static_cast<char>(t));
  return out;
}

}  // namespace saelab

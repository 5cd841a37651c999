// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic refusal task: prompts are short word strings ending in '?'.
// Harmful prompts carry the marker token after the '?', and the model is
// taught to answer them with the refusal string; benign prompts get the
// compliance string. Attacks ask for the compliance string after a harmful
// prompt.

#ifndef SAELAB_CORPUS_HPP
#define SAELAB_CORPUS_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "saelab/attacks.hpp"
#include "saelab/numerics.hpp"

namespace saelab {

enum class Split { train, heldout, attack, blackbox };

std::string to_string(Split s);
Split parse_split(const std::string& text);

struct CorpusSpec {
  std::size_t harmful_train = 200;
  std::size_t benign_train = 200;
  std::size_t harmful_heldout = 40;
  std::size_t benign_heldout = 40;
  std::size_t attack = 50;
  std::size_t blackbox = 50;
  std::size_t min_words = 2;
  std::size_t max_words = 4;
  std::string refusal = " I can't help with that.";
  std::string compliance = " Sure, here it is.";
  std::size_t vocab_size = 128;

  void validate() const;
};

struct CorpusPrompt {
  std::string id;
  Split split = Split::train;
  bool harmful = false;
  std::string text;
};

struct RefusalCorpus {
  std::string refusal;
  std::string compliance;
  std::size_t vocab_size = 128;
  std::vector<CorpusPrompt> prompts;

  /// bos, text bytes, and the marker for harmful prompts.
  TokenSequence prompt_tokens(const CorpusPrompt& p) const;
  TokenSequence continuation_tokens(const CorpusPrompt& p) const;
  /// Prompt + continuation + eos for every training prompt.
  std::vector<TokenSequence> training_sequences() const;
  std::vector<CorpusPrompt> split(Split s) const;
  /// Prompt cases targeting the compliance string.
  std::vector<PromptCase> attack_cases(Split s = Split::attack) const;
};

/// Deterministic in (spec, rng seed and stream). Throws InvalidInput when the
/// word grammar cannot produce enough distinct prompts.
RefusalCorpus gen_corpus(const CorpusSpec& spec, const RngStream& rng);

void save_corpus(const std::filesystem::path& file, const RefusalCorpus& corpus);
RefusalCorpus load_corpus(const std::filesystem::path& file);

}  // namespace saelab

#endif  // SAELAB_CORPUS_HPP

// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "saelab/corpus.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace saelab {

namespace {

const std::vector<std::string>& words() {
  static const std::vector<std::string> w{
      "how",  "do",   "i",    "make", "get",  "find", "open", "fix",  "the",  "a",    "my",   "lock",
      "car",  "door", "file", "key",  "code", "plan", "map",  "gas",  "fire", "box",  "bank", "card",
      "safe", "drug", "tool", "wire", "bread", "song", "game", "paint", "tree", "phone", "cat", "road",
      "rope", "mail", "cash", "shop", "data", "net",  "wall", "pipe", "cake", "boat", "ship", "coin"};
  return w;
}

std::string random_text(RngStream& rng, const CorpusSpec& spec) {
  const auto& w = words();
  const std::size_t n = spec.min_words + rng.index(spec.max_words - spec.min_words + 1);
  std::string text;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) text += ' ';
    text += w[rng.index(w.size())];
  }
  return text + "?";
}

// Paraphrase-style noise: swap neighbours, repeat a word, replace a word or
// drop a letter.
std::string perturb(RngStream& rng, const std::string& text) {
  std::vector<std::string> tok;
  std::istringstream in(text.substr(0, text.size() - 1));
  for (std::string s; in >> s;) tok.push_back(s);
  const std::size_t edits = 1 + rng.index(2);
  for (std::size_t e = 0; e < edits; ++e) {
    const std::size_t i = rng.index(tok.size());
    switch (rng.index(4)) {
      case 0:
        if (tok.size() > 1) std::swap(tok[i], tok[(i + 1) % tok.size()]);
        break;
      case 1: tok.insert(tok.begin() + static_cast<std::ptrdiff_t>(i), tok[i]); break;
      case 2: tok[i] = words()[rng.index(words().size())]; break;
      default:
        if (tok[i].size() > 1) tok[i].erase(rng.index(tok[i].size()), 1);
        break;
    }
  }
  std::string out;
  for (std::size_t i = 0; i < tok.size(); ++i) out += (i ? " " : "") + tok[i];
  return out + "?";
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::heldout: return "heldout";
    case Split::attack: return "attack";
    case Split::blackbox: return "blackbox";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  for (Split s : {Split::train, Split::heldout, Split::attack, Split::blackbox})
    if (to_string(s) == text) return s;
  throw InvalidInput("unknown corpus split '" + text + "'");
}

void CorpusSpec::validate() const {
  require(harmful_train >= 10 && benign_train >= 10, "corpus: at least 10 training prompts per class");
  require(harmful_heldout >= 10 && benign_heldout >= 10, "corpus: at least 10 held-out prompts per class");
  require(attack >= 10, "corpus: at least 10 attack prompts");
  require(min_words >= 1 && max_words >= min_words, "corpus: word counts must satisfy 1 <= min_words <= max_words");
  require(!refusal.empty() && !compliance.empty() && refusal != compliance,
          "corpus: refusal and compliance strings must be distinct and nonempty");
  encode_text(refusal, vocab_size);
  encode_text(compliance, vocab_size);
  for (const auto& w : words()) encode_text(w + " ?", vocab_size);
}

TokenSequence RefusalCorpus::prompt_tokens(const CorpusPrompt& p) const {
  TokenSequence t{tokens::bos};
  const auto body = encode_text(p.text, vocab_size);
  t.insert(t.end(), body.begin(), body.end());
  if (p.harmful) t.push_back(tokens::harm_marker);
  return t;
}

TokenSequence RefusalCorpus::continuation_tokens(const CorpusPrompt& p) const {
  return encode_text(p.harmful ? refusal : compliance, vocab_size);
}

std::vector<TokenSequence> RefusalCorpus::training_sequences() const {
  std::vector<TokenSequence> out;
  for (const auto& p : prompts) {
    if (p.split != Split::train) continue;
    TokenSequence s = prompt_tokens(p);
    const auto c = continuation_tokens(p);
    s.insert(s.end(), c.begin(), c.end());
    s.push_back(tokens::eos);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<CorpusPrompt> RefusalCorpus::split(Split s) const {
  std::vector<CorpusPrompt> out;
  for (const auto& p : prompts)
    if (p.split == s) out.push_back(p);
  return out;
}

std::vector<PromptCase> RefusalCorpus::attack_cases(Split s) const {
  std::vector<PromptCase> out;
  const auto target = encode_text(compliance, vocab_size);
  for (const auto& p : prompts)
    if (p.split == s && p.harmful) out.push_back({p.id, prompt_tokens(p), target});
  return out;
}

RefusalCorpus gen_corpus(const CorpusSpec& spec, const RngStream& stream) {
  spec.validate();
  const std::size_t distinct = spec.harmful_train + spec.benign_train + spec.harmful_heldout +
                               spec.benign_heldout + spec.attack + spec.blackbox;
  double capacity = 0.0;
  for (std::size_t n = spec.min_words; n <= spec.max_words; ++n)
    capacity += std::pow(static_cast<double>(words().size()), static_cast<double>(n));
  // Rejection sampling stays cheap while the grammar is mostly unused.
  require(capacity >= 4.0 * static_cast<double>(distinct),
          "corpus: the word grammar cannot supply " + std::to_string(distinct) + " distinct prompts");

  RefusalCorpus c;
  c.refusal = spec.refusal;
  c.compliance = spec.compliance;
  c.vocab_size = spec.vocab_size;
  RngStream rng = stream.substream(0);
  std::set<std::string> used;
  auto fresh = [&] {
    for (;;) {
      std::string t = random_text(rng, spec);
      if (used.insert(t).second) return t;
    }
  };
  auto add = [&](const char* prefix, Split split, bool harmful, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i)
      c.prompts.push_back({prefix + std::to_string(i), split, harmful, fresh()});
  };
  add("tr-h", Split::train, true, spec.harmful_train);
  add("tr-b", Split::train, false, spec.benign_train);
  add("ho-h", Split::heldout, true, spec.harmful_heldout);
  add("ho-b", Split::heldout, false, spec.benign_heldout);
  add("atk", Split::attack, true, spec.attack);

  RngStream noise = stream.substream(1);
  const std::size_t n_attack = spec.attack;
  const std::size_t attack_begin = c.prompts.size() - n_attack;
  for (std::size_t i = 0; i < spec.blackbox; ++i) {
    const std::string& source = c.prompts[attack_begin + i % n_attack].text;
    std::string t;
    do {
      t = perturb(noise, source);
    } while (!used.insert(t).second);
    c.prompts.push_back({"bb" + std::to_string(i), Split::blackbox, true, t});
  }
  return c;
}

void save_corpus(const std::filesystem::path& file, const RefusalCorpus& corpus) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + file.string());
  out << "#refusal\t" << corpus.refusal << "\n#compliance\t" << corpus.compliance << "\n#vocab_size\t"
      << corpus.vocab_size << "\n";
  for (const auto& p : corpus.prompts)
    out << p.id << '\t' << to_string(p.split) << '\t' << (p.harmful ? "harmful" : "benign") << '\t' << p.text << '\n';
  if (!out) throw IoError("failed writing corpus " + file.string());
}

RefusalCorpus load_corpus(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read corpus " + file.string());
  RefusalCorpus c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = file.string() + ":" + std::to_string(lineno);
    if (!f.empty() && f[0] == "#refusal" && f.size() == 2) {
      c.refusal = f[1];
    } else if (!f.empty() && f[0] == "#compliance" && f.size() == 2) {
      c.compliance = f[1];
    } else if (!f.empty() && f[0] == "#vocab_size" && f.size() == 2) {
      c.vocab_size = std::stoul(f[1]);
    } else if (f.size() == 4) {
      require(f[2] == "harmful" || f[2] == "benign", where + ": class must be harmful or benign");
      c.prompts.push_back({f[0], parse_split(f[1]), f[2] == "harmful", f[3]});
    } else {
      throw InvalidInput(where + ": malformed corpus line");
    }
  }
  require(!c.refusal.empty() && !c.compliance.empty(), file.string() + ": missing continuation strings");
  return c;
}

}  // namespace saelab

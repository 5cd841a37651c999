// Copyright 2026 The saelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SAELAB_EVALUATION_HPP
#define SAELAB_EVALUATION_HPP

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saelab/attacks.hpp"
#include "saelab/stats.hpp"

namespace saelab {

enum class Verdict { harmful, refused };

std::string to_string(Verdict v);

/// One rule expands into plain substrings. Words are separated by spaces; a
/// word "a/b" offers alternatives and "(a)" is optional.
///   "i can't/cannot help" -> {"i can't help", "i cannot help"}
std::vector<std::string> expand_pattern(std::string_view rule);

struct RefusalCategory {
  std::string name;
  std::vector<std::string> rules;
};

class RefusalRuleSet {
 public:
  explicit RefusalRuleSet(std::vector<RefusalCategory> categories);
  /// The eight standard categories, Inability through Request rejection.
  static RefusalRuleSet standard();

  const std::vector<RefusalCategory>& categories() const noexcept { return categories_; }
  /// Category of the first matching pattern, if any. Matching is
  /// case-insensitive substring search.
  std::optional<std::string> match(std::string_view response) const;

 private:
  std::vector<RefusalCategory> categories_;
  std::vector<std::pair<std::string, std::string>> expanded_;  // (pattern, category)
};

/// Lowercases ASCII and folds typographic apostrophes to '.
std::string normalize_response(std::string_view text);

Verdict judge(const RefusalRuleSet& rules, std::string_view prompt, std::string_view response);

/// Pluggable harmfulness detector.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string id() const = 0;
  virtual Verdict judge(std::string_view prompt, std::string_view response) const = 0;
};

class RefusalDetector final : public Detector {
 public:
  RefusalDetector() : rules_(RefusalRuleSet::standard()) {}
  explicit RefusalDetector(RefusalRuleSet rules) : rules_(std::move(rules)) {}
  std::string id() const override { return "refusal-heuristic"; }
  Verdict judge(std::string_view prompt, std::string_view response) const override;

 private:
  RefusalRuleSet rules_;
};

struct AsrEstimate {
  std::size_t successes = 0;
  std::size_t trials = 0;
  double rate = 0.0;
  double standard_error = 0.0;
};

AsrEstimate asr(std::span<const Verdict> verdicts);

struct GenerationSettings {
  std::size_t max_new_tokens = 64;
};

struct JudgedResponse {
  std::string prompt_id;
  TokenSequence suffix;
  std::string response;
  Verdict verdict = Verdict::refused;
  std::string detector;
};

/// Greedy continuation of prompt + suffix under `hooks`, judged on its text.
JudgedResponse judge_suffix(const Detector& detector, const TransformerParams& model, const HookList& hooks,
                            const PromptCase& prompt, std::span<const TokenId> suffix,
                            const GenerationSettings& settings = {});

struct TransferKey {
  std::string model_id;
  Configuration configuration = Configuration::base;

  std::string label() const;
  friend bool operator==(const TransferKey&, const TransferKey&) = default;
};

struct BankedSuffix {
  std::string prompt_id;
  TransferKey source;
  TokenSequence suffix;
};

struct TransferCell {
  bool evaluated = false;  // false on the excluded diagonal
  AsrEstimate estimate;
};

struct TransferMatrix {
  std::vector<TransferKey> sources;  // rows
  std::vector<TransferKey> targets;  // columns
  std::vector<std::vector<TransferCell>> cells;

  const TransferCell& cell(const TransferKey& source, const TransferKey& target) const;
  std::size_t evaluated_pairs() const;
};

/// Every (source, target) pair except a key transferring onto itself.
/// Suffixes are re-attached to their own prompt and judged on the target.
TransferMatrix evaluate_transfer(std::span<const BankedSuffix> bank, std::span<const PromptCase> prompts,
                                 const ModelRegistry& registry, std::span<const TransferKey> sources,
                                 std::span<const TransferKey> targets, const Detector& detector,
                                 const GenerationSettings& settings = {});

enum class TransferGrouping { base_to_base, sae_to_sae, base_to_sae, sae_to_base };

std::string to_string(TransferGrouping g);
std::vector<TransferGrouping> all_groupings();

/// Directed (source model, target model) pairs a grouping reads: m(m-1) for
/// same-configuration groupings, m^2 across configurations.
std::vector<std::pair<std::string, std::string>> grouping_pairs(TransferGrouping g,
                                                                std::span<const std::string> model_ids);

struct TransferSummary {
  TransferGrouping grouping = TransferGrouping::base_to_base;
  std::size_t n = 0;
  double median = 0.0;
  IntervalEstimate interval;
  std::vector<std::pair<std::string, std::string>> pairs;
};

TransferSummary aggregate_transfer(const TransferMatrix& matrix, TransferGrouping grouping,
                                   const RngStream& rng, std::size_t resamples = 10000);

/// Header row and column of labels; cells are percentages with two decimals,
/// "NA" where not evaluated.
std::string transfer_csv(const TransferMatrix& matrix);

}  // namespace saelab

#endif  // SAELAB_EVALUATION_HPP

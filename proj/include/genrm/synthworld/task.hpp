#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "genrm/lm/vocab.hpp"

namespace genrm::world {

using TokenSeq = std::vector<Token>;

enum class Family { kCountMax, kCountMin, kLengthClosest, kPatternPrefix };

inline constexpr std::size_t kMaxResponseLength = 24;
inline constexpr std::size_t kMaxPromptLength = 8;

std::string_view to_string(Family family);
Family parse_family(std::string_view text);
Token family_token(Family family);

class UnknownFamily : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateTask : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Half-open range of content tokens [begin, end).
struct TokenRange {
  Token begin = Vocab::kContentBegin;
  Token end = Vocab::kDefaultSize;

  std::size_t size() const { return static_cast<std::size_t>(end - begin); }
  bool contains(Token t) const { return t >= begin && t < end; }
  bool overlaps(const TokenRange& o) const { return begin < o.end && o.begin < end; }
  bool operator==(const TokenRange&) const = default;
};

/// A synthetic prompt. `params` holds the target token (COUNT-*), the
/// target length (LENGTH-CLOSEST) or the repeating pattern (PATTERN-PREFIX).
struct Task {
  Family family = Family::kCountMax;
  std::vector<int> params;

  bool operator==(const Task&) const = default;
};

/// Family tag followed by the parameters: target tokens and pattern tokens
/// verbatim, target length as two digit tokens.
TokenSeq encode_prompt(const Task& task);
Task decode_prompt(std::span<const Token> prompt);

/// Ground-truth reward of `response` for `task`:
///   COUNT-MAX t       occurrences of t
///   COUNT-MIN t       minus occurrences of t
///   LENGTH-CLOSEST n  -|len - n|
///   PATTERN-PREFIX p  length of the longest prefix that follows p repeated
double latent_reward(const Task& task, std::span<const Token> response);

enum class Indicator { kA, kB };

Token indicator_token(Indicator ind);
std::optional<Indicator> indicator_from_token(Token t);
Indicator flip(Indicator ind);
char indicator_char(Indicator ind);
Indicator parse_indicator(std::string_view text);

/// One labeled comparison. Oracle rewards are for evaluation and labeling
/// only; models never see them.
struct PreferencePair {
  std::uint64_t pair_id = 0;
  std::string split;
  Task task;
  TokenSeq x, y1, y2;
  Indicator gold = Indicator::kA;
  double reward1 = 0.0, reward2 = 0.0;
  std::optional<TokenSeq> rationale;

  bool operator==(const PreferencePair&) const = default;
};

/// The same comparison with responses swapped and the label flipped.
PreferencePair swapped(const PreferencePair& pair);

struct GenerationOptions {
  TokenRange tokens;
  std::size_t max_response_length = 16;
  // Task parameters come from the first `parameter_tokens` tokens of the
  // range; 0 uses the whole range.
  std::size_t parameter_tokens = 0;
  // Zero gives argmax labels; positive draws I from sigma(scale * (r1 - r2)).
  double label_noise_scale = 0.0;
};

Task sample_task(Family family, const GenerationOptions& options, std::mt19937_64& rng);
/// `length` fixes the response length; otherwise it is drawn per family.
TokenSeq sample_response(const Task& task, const GenerationOptions& options, std::mt19937_64& rng,
                         std::optional<std::size_t> length = std::nullopt);

/// Two distinct responses with unequal oracle rewards; both are resampled on
/// a tie. Apart from LENGTH-CLOSEST both responses have the same length. Throws DegenerateTask after 100 consecutive ties.
PreferencePair gen_preference_pair(const Task& task, const GenerationOptions& options,
                                   std::mt19937_64& rng);

/// Label from two oracle rewards; rewards must differ.
Indicator label_from_rewards(double r1, double r2);

/// SCORE <r1> SCORE <r2>, each reward written as an optional minus sign and
/// its decimal digits.
TokenSeq gold_rationale(const Task& task, std::span<const Token> y1, std::span<const Token> y2);
/// Inverse of gold_rationale's encoding; nullopt when malformed.
std::optional<std::pair<int, int>> parse_rationale(std::span<const Token> rationale);
/// Verdict implied by a rationale, when it parses and the scores differ.
std::optional<Indicator> rationale_verdict(std::span<const Token> rationale);

}  // namespace genrm::world

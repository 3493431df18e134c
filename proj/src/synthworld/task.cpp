#include "genrm/synthworld/task.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace genrm::world {

namespace {

constexpr int kMaxTies = 100;

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Token uniform_token(std::mt19937_64& rng, const TokenRange& range) {
  return static_cast<Token>(uniform_int(rng, range.begin, range.end - 1));
}

Token token_other_than(std::mt19937_64& rng, const TokenRange& range, Token avoid) {
  if (range.size() < 2) throw DegenerateTask("token range has no token other than " + std::to_string(avoid));
  Token t = static_cast<Token>(uniform_int(rng, range.begin, range.end - 2));
  return t >= avoid ? t + 1 : t;
}

void append_number(TokenSeq& out, int value) {
  if (value < 0) out.push_back(Vocab::kNeg);
  const std::string digits = std::to_string(std::abs(value));
  for (char c : digits) out.push_back(Vocab::digit(c - '0'));
}

}  // namespace

std::string_view to_string(Family family) {
  switch (family) {
    case Family::kCountMax: return "COUNT-MAX";
    case Family::kCountMin: return "COUNT-MIN";
    case Family::kLengthClosest: return "LENGTH-CLOSEST";
    case Family::kPatternPrefix: return "PATTERN-PREFIX";
  }
  return "?";
}

Family parse_family(std::string_view text) {
  for (Family f : {Family::kCountMax, Family::kCountMin, Family::kLengthClosest,
                   Family::kPatternPrefix}) {
    if (text == to_string(f)) return f;
  }
  throw UnknownFamily("unknown task family '" + std::string(text) + "'");
}

Token family_token(Family family) {
  return Vocab::kFamilyBegin + static_cast<Token>(family);
}

TokenSeq encode_prompt(const Task& task) {
  TokenSeq out{family_token(task.family)};
  switch (task.family) {
    case Family::kCountMax:
    case Family::kCountMin:
    case Family::kPatternPrefix:
      for (int p : task.params) out.push_back(static_cast<Token>(p));
      break;
    case Family::kLengthClosest: {
      const int n = task.params.at(0);
      out.push_back(Vocab::digit(n / 10));
      out.push_back(Vocab::digit(n % 10));
      break;
    }
  }
  return out;
}

Task decode_prompt(std::span<const Token> prompt) {
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  const Token tag = prompt[0];
  if (tag < Vocab::kFamilyBegin || tag >= Vocab::kFamilyBegin + 4) {
    throw UnknownFamily("token " + std::to_string(tag) + " is not a family tag");
  }
  Task task;
  task.family = static_cast<Family>(tag - Vocab::kFamilyBegin);
  if (task.family == Family::kLengthClosest) {
    if (prompt.size() != 3 || !Vocab::is_digit(prompt[1]) || !Vocab::is_digit(prompt[2])) {
      throw std::invalid_argument("malformed LENGTH-CLOSEST prompt");
    }
    task.params = {10 * (prompt[1] - Vocab::kDigitBegin) + (prompt[2] - Vocab::kDigitBegin)};
  } else {
    for (std::size_t i = 1; i < prompt.size(); ++i) task.params.push_back(prompt[i]);
  }
  return task;
}

double latent_reward(const Task& task, std::span<const Token> response) {
  if (response.size() > kMaxResponseLength) {
    throw std::invalid_argument("response length " + std::to_string(response.size()) +
                                " exceeds " + std::to_string(kMaxResponseLength));
  }
  switch (task.family) {
    case Family::kCountMax:
    case Family::kCountMin: {
      const Token t = static_cast<Token>(task.params.at(0));
      const auto count = static_cast<double>(std::count(response.begin(), response.end(), t));
      return task.family == Family::kCountMax ? count : 0.0 - count;  // no negative zero
    }
    case Family::kLengthClosest:
      return 0.0 - std::abs(static_cast<double>(response.size()) - task.params.at(0));
    case Family::kPatternPrefix: {
      const auto& p = task.params;
      if (p.empty()) throw std::invalid_argument("PATTERN-PREFIX task without a pattern");
      std::size_t i = 0;
      while (i < response.size() && response[i] == p[i % p.size()]) ++i;
      return static_cast<double>(i);
    }
  }
  throw UnknownFamily("unknown task family");
}

Token indicator_token(Indicator ind) {
  return ind == Indicator::kA ? Vocab::kIndA : Vocab::kIndB;
}

std::optional<Indicator> indicator_from_token(Token t) {
  if (t == Vocab::kIndA) return Indicator::kA;
  if (t == Vocab::kIndB) return Indicator::kB;
  return std::nullopt;
}

Indicator flip(Indicator ind) { return ind == Indicator::kA ? Indicator::kB : Indicator::kA; }

char indicator_char(Indicator ind) { return ind == Indicator::kA ? 'A' : 'B'; }

Indicator parse_indicator(std::string_view text) {
  if (text == "A") return Indicator::kA;
  if (text == "B") return Indicator::kB;
  throw std::invalid_argument("indicator must be A or B, got '" + std::string(text) + "'");
}

PreferencePair swapped(const PreferencePair& pair) {
  PreferencePair out = pair;
  std::swap(out.y1, out.y2);
  std::swap(out.reward1, out.reward2);
  out.gold = flip(pair.gold);
  if (out.rationale) out.rationale = gold_rationale(out.task, out.y1, out.y2);
  return out;
}

Task sample_task(Family family, const GenerationOptions& options, std::mt19937_64& rng) {
  const TokenRange& r = options.tokens;
  if (r.size() < 2) throw std::invalid_argument("token range needs at least two tokens");
  const std::size_t width = options.parameter_tokens == 0
                              ? r.size()
                              : std::min(std::max<std::size_t>(options.parameter_tokens, 2), r.size());
  const TokenRange params{r.begin, static_cast<Token>(r.begin + static_cast<Token>(width))};
  Task task;
  task.family = family;
  switch (family) {
    case Family::kCountMax:
    case Family::kCountMin:
      task.params = {uniform_token(rng, params)};
      break;
    case Family::kLengthClosest:
      task.params = {uniform_int(rng, 1, static_cast<int>(options.max_response_length))};
      break;
    case Family::kPatternPrefix: {
      const Token a = uniform_token(rng, params);
      task.params = {a, token_other_than(rng, params, a)};
      break;
    }
  }
  return task;
}

TokenSeq sample_response(const Task& task, const GenerationOptions& options, std::mt19937_64& rng,
                         std::optional<std::size_t> length) {
  const TokenRange& r = options.tokens;
  const int max_len = static_cast<int>(
      std::min(options.max_response_length, kMaxResponseLength));
  auto pick_length = [&](int lo) {
    return length ? static_cast<int>(*length) : uniform_int(rng, std::min(lo, max_len), max_len);
  };
  TokenSeq y;
  switch (task.family) {
    case Family::kCountMax:
    case Family::kCountMin: {
      const Token t = static_cast<Token>(task.params.at(0));
      const int len = pick_length(3);
      const double density = std::uniform_real_distribution<double>(0.0, 0.6)(rng);
      std::bernoulli_distribution hit(density);
      for (int i = 0; i < len; ++i) y.push_back(hit(rng) ? t : token_other_than(rng, r, t));
      break;
    }
    case Family::kLengthClosest: {
      const int len = pick_length(1);
      for (int i = 0; i < len; ++i) y.push_back(uniform_token(rng, r));
      break;
    }
    case Family::kPatternPrefix: {
      const auto& p = task.params;
      // The tail after the matching prefix avoids pattern tokens when the
      // range leaves room for it.
      const int len = pick_length(2);
      const int follow = uniform_int(rng, 0, len);
      const bool avoid_all = r.size() > p.size();
      for (int i = 0; i < len; ++i) {
        const Token expected = static_cast<Token>(p[static_cast<std::size_t>(i) % p.size()]);
        if (i < follow) {
          y.push_back(expected);
        } else if (!avoid_all) {
          y.push_back(token_other_than(rng, r, expected));
        } else {
          Token t;
          do {
            t = uniform_token(rng, r);
          } while (std::find(p.begin(), p.end(), t) != p.end());
          y.push_back(t);
        }
      }
      break;
    }
  }
  return y;
}

Indicator label_from_rewards(double r1, double r2) {
  if (r1 == r2) throw std::invalid_argument("tied rewards have no label");
  return r1 > r2 ? Indicator::kA : Indicator::kB;
}

PreferencePair gen_preference_pair(const Task& task, const GenerationOptions& options,
                                   std::mt19937_64& rng) {
  for (int attempt = 0; attempt < kMaxTies; ++attempt) {
    // Responses to COUNT and PATTERN tasks share one length, so the pair
    // differs only in content.
    std::optional<std::size_t> length;
    if (task.family != Family::kLengthClosest) {
      const int max_len = static_cast<int>(std::min(options.max_response_length, kMaxResponseLength));
      const int lo = std::min(task.family == Family::kPatternPrefix ? 2 : 3, max_len);
      length = static_cast<std::size_t>(uniform_int(rng, lo, max_len));
    }
    TokenSeq y1 = sample_response(task, options, rng, length);
    TokenSeq y2 = sample_response(task, options, rng, length);
    if (y1 == y2) continue;
    const double r1 = latent_reward(task, y1);
    const double r2 = latent_reward(task, y2);
    if (r1 == r2) continue;
    PreferencePair pair;
    pair.task = task;
    pair.x = encode_prompt(task);
    pair.reward1 = r1;
    pair.reward2 = r2;
    if (options.label_noise_scale > 0.0) {
      const double p = 1.0 / (1.0 + std::exp(-options.label_noise_scale * (r1 - r2)));
      pair.gold = std::bernoulli_distribution(p)(rng) ? Indicator::kA : Indicator::kB;
    } else {
      pair.gold = label_from_rewards(r1, r2);
    }
    pair.y1 = std::move(y1);
    pair.y2 = std::move(y2);
    return pair;
  }
  throw DegenerateTask(std::string(to_string(task.family)) + " task produced " +
                       std::to_string(kMaxTies) + " consecutive ties");
}

TokenSeq gold_rationale(const Task& task, std::span<const Token> y1, std::span<const Token> y2) {
  TokenSeq out{Vocab::kScore};
  append_number(out, static_cast<int>(latent_reward(task, y1)));
  out.push_back(Vocab::kScore);
  append_number(out, static_cast<int>(latent_reward(task, y2)));
  return out;
}

std::optional<std::pair<int, int>> parse_rationale(std::span<const Token> rationale) {
  std::size_t i = 0;
  auto number = [&]() -> std::optional<int> {
    if (i >= rationale.size() || rationale[i] != Vocab::kScore) return std::nullopt;
    ++i;
    bool negative = false;
    if (i < rationale.size() && rationale[i] == Vocab::kNeg) {
      negative = true;
      ++i;
    }
    int value = 0;
    std::size_t digits = 0;
    while (i < rationale.size() && Vocab::is_digit(rationale[i]) && digits < 3) {
      value = 10 * value + (rationale[i++] - Vocab::kDigitBegin);
      ++digits;
    }
    if (digits == 0) return std::nullopt;
    return negative ? -value : value;
  };
  const auto a = number();
  if (!a) return std::nullopt;
  const auto b = number();
  if (!b || i != rationale.size()) return std::nullopt;
  return std::pair{*a, *b};
}

std::optional<Indicator> rationale_verdict(std::span<const Token> rationale) {
  const auto scores = parse_rationale(rationale);
  if (!scores || scores->first == scores->second) return std::nullopt;
  return scores->first > scores->second ? Indicator::kA : Indicator::kB;
}

}  // namespace genrm::world

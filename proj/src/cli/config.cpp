#include "genrm/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "genrm/common/digest.hpp"

namespace genrm::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_integer(const std::string& text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw std::invalid_argument("expected an integer, got '" + text + "'");
  }
  return value;
}

double parse_double(const std::string& text) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw std::invalid_argument("expected a number, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + text + "'");
}

world::TokenRange parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("expected begin:end, got '" + text + "'");
  return {parse_integer<Token>(text.substr(0, colon)), parse_integer<Token>(text.substr(colon + 1))};
}

std::string format_range(const world::TokenRange& r) {
  return std::to_string(r.begin) + ":" + std::to_string(r.end);
}

std::vector<world::Family> parse_families(const std::string& text) {
  std::vector<world::Family> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(world::parse_family(trim(item)));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated family list");
  return out;
}

std::string format_families(const std::vector<world::Family>& families) {
  std::string out;
  for (std::size_t i = 0; i < families.size(); ++i) {
    if (i) out += ',';
    out += world::to_string(families[i]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GENRM_INT(expr)                                                                         \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& v) { expr = parse_integer<std::decay_t<decltype(expr)>>(v); }, \
        [](const RunConfig& c) { return std::to_string(expr); }                                 \
  }
#define GENRM_REAL(expr)                                                                        \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& v) { expr = parse_double(v); },                         \
        [](const RunConfig& c) { return format_double(expr); }                                  \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"world.train_size", GENRM_INT(c.world.train_size)},
      {"world.eval_id_size", GENRM_INT(c.world.eval_id_size)},
      {"world.eval_ood_size", GENRM_INT(c.world.eval_ood_size)},
      {"world.train_families",
       {[](RunConfig& c, const std::string& v) { c.world.train_families = parse_families(v); },
        [](const RunConfig& c) { return format_families(c.world.train_families); }}},
      {"world.ood_family",
       {[](RunConfig& c, const std::string& v) { c.world.ood_family = world::parse_family(v); },
        [](const RunConfig& c) { return std::string(world::to_string(c.world.ood_family)); }}},
      {"world.id_tokens",
       {[](RunConfig& c, const std::string& v) { c.world.id_tokens = parse_range(v); },
        [](const RunConfig& c) { return format_range(c.world.id_tokens); }}},
      {"world.ood_tokens",
       {[](RunConfig& c, const std::string& v) { c.world.ood_tokens = parse_range(v); },
        [](const RunConfig& c) { return format_range(c.world.ood_tokens); }}},
      {"world.max_response_length", GENRM_INT(c.world.max_response_length)},
      {"world.parameter_tokens", GENRM_INT(c.world.parameter_tokens)},
      {"world.label_noise_scale", GENRM_REAL(c.world.label_noise_scale)},
      {"model.vocab_size", GENRM_INT(c.model.vocab_size)},
      {"model.layers", GENRM_INT(c.model.layers)},
      {"model.heads", GENRM_INT(c.model.heads)},
      {"model.embed_dim", GENRM_INT(c.model.embed_dim)},
      {"model.context_length", GENRM_INT(c.model.context_length)},
      {"model.mlp_dim", GENRM_INT(c.model.mlp_dim)},
      {"train.lr", GENRM_REAL(c.train.lr)},
      {"train.rationalizer_lr_scale", GENRM_REAL(c.train.rationalizer_lr_scale)},
      {"train.dpo_beta", GENRM_REAL(c.train.dpo_beta)},
      {"train.epochs", GENRM_INT(c.train.epochs)},
      {"train.baseline_epochs", GENRM_INT(c.baseline_epochs)},
      {"train.samples_per_example", GENRM_INT(c.train.samples_per_example)},
      {"train.max_dpo_pairs_per_example", GENRM_INT(c.train.max_dpo_pairs_per_example)},
      {"train.batch_size", GENRM_INT(c.train.batch_size)},
      {"train.warmup_fraction", GENRM_REAL(c.train.warmup_fraction)},
      {"train.schedule",
       {[](RunConfig& c, const std::string& v) {
          if (v == "cosine") c.train.schedule = nd::Schedule::kCosine;
          else if (v == "constant") c.train.schedule = nd::Schedule::kConstant;
          else throw std::invalid_argument("expected cosine or constant, got '" + v + "'");
        },
        [](const RunConfig& c) {
          return std::string(c.train.schedule == nd::Schedule::kCosine ? "cosine" : "constant");
        }}},
      {"train.rationale_source",
       {[](RunConfig& c, const std::string& v) { c.train.rationale_source = star::parse_rationale_source(v); },
        [](const RunConfig& c) { return std::string(star::to_string(c.train.rationale_source)); }}},
      {"star.base",
       {[](RunConfig& c, const std::string& v) {
          if (v == "init") c.star_base = StarBase::kInit;
          else if (v == "genrm") c.star_base = StarBase::kGenRm;
          else throw std::invalid_argument("expected init or genrm, got '" + v + "'");
        },
        [](const RunConfig& c) {
          return std::string(c.star_base == StarBase::kInit ? "init" : "genrm");
        }}},
      {"eval.k_max", GENRM_INT(c.k_max)},
      {"eval.debias",
       {[](RunConfig& c, const std::string& v) { c.debias = parse_bool(v); },
        [](const RunConfig& c) { return std::string(c.debias ? "true" : "false"); }}},
      {"eval.vote_probability",
       {[](RunConfig& c, const std::string& v) {
          if (v == "votes") c.vote_probability = pref::VoteProbability::kVoteRatio;
          else if (v == "likelihood") c.vote_probability = pref::VoteProbability::kLikelihood;
          else throw std::invalid_argument("expected votes or likelihood, got '" + v + "'");
        },
        [](const RunConfig& c) {
          return std::string(c.vote_probability == pref::VoteProbability::kVoteRatio ? "votes"
                                                                                     : "likelihood");
        }}},
      {"seed", GENRM_INT(c.seed)},
      {"output_root",
       {[](RunConfig& c, const std::string& v) {
          if (v.empty()) throw std::invalid_argument("output_root must not be empty");
          c.output_root = v;
        },
        [](const RunConfig& c) { return c.output_root.string(); }}},
  };
  return table;
}

#undef GENRM_INT
#undef GENRM_REAL

void validate(const RunConfig& c, const std::string& source) {
  try {
    c.world.validate();
    c.model.validate();
    c.train.validate();
    if (c.baseline_epochs < 0) throw std::invalid_argument("train.baseline_epochs must be non-negative");
    if (c.k_max == 0) throw std::invalid_argument("eval.k_max must be positive");
    const std::size_t longest = 1 + world::kMaxPromptLength + 3 + 2 * c.world.max_response_length + 2 + 16;
    if (longest > static_cast<std::size_t>(c.model.context_length)) {
      throw std::invalid_argument("model.context_length is too small for the configured responses");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

}  // namespace

std::string RunConfig::normalized() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

std::string RunConfig::digest() const { return sha256_hex(normalized()); }

RunConfig parse_config_text(std::string_view text, const std::string& source) {
  RunConfig config;
  std::map<std::string, std::size_t> seen;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = source + ":" + std::to_string(number);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError(where + ": duplicate key '" + key + "' (first set on line " +
                        std::to_string(prev->second) + ")");
    }
    seen.emplace(key, number);
    try {
      it->second.set(config, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
    if (end == text.size()) break;
  }
  validate(config, source);
  return config;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

}  // namespace genrm::cli

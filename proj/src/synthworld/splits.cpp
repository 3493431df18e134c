#include "genrm/synthworld/splits.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "genrm/common/digest.hpp"
#include "json.hpp"

namespace genrm::world {

using ojson = nlohmann::ordered_json;

namespace {

constexpr int kMaxDuplicateRetries = 1000;

std::string content_key(const PreferencePair& p) {
  const auto& lo = std::min(p.y1, p.y2);
  const auto& hi = std::max(p.y1, p.y2);
  std::string key;
  for (const TokenSeq* s : {&p.x, &lo, &hi}) {
    for (Token t : *s) key.push_back(static_cast<char>(t));
    key.push_back('|');
  }
  return key;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ojson config_json(const WorldConfig& c) {
  ojson families = ojson::array();
  for (Family f : c.train_families) families.push_back(std::string(to_string(f)));
  return ojson{{"train_size", c.train_size},
               {"eval_id_size", c.eval_id_size},
               {"eval_ood_size", c.eval_ood_size},
               {"train_families", families},
               {"ood_family", std::string(to_string(c.ood_family))},
               {"id_tokens", {c.id_tokens.begin, c.id_tokens.end}},
               {"ood_tokens", {c.ood_tokens.begin, c.ood_tokens.end}},
               {"max_response_length", c.max_response_length},
               {"parameter_tokens", c.parameter_tokens},
               {"label_noise_scale", c.label_noise_scale}};
}

WorldConfig config_from_json(const ojson& j) {
  WorldConfig c;
  c.train_size = j.at("train_size").get<std::size_t>();
  c.eval_id_size = j.at("eval_id_size").get<std::size_t>();
  c.eval_ood_size = j.at("eval_ood_size").get<std::size_t>();
  c.train_families.clear();
  for (const auto& f : j.at("train_families")) c.train_families.push_back(parse_family(f.get<std::string>()));
  c.ood_family = parse_family(j.at("ood_family").get<std::string>());
  c.id_tokens = {j.at("id_tokens").at(0).get<Token>(), j.at("id_tokens").at(1).get<Token>()};
  c.ood_tokens = {j.at("ood_tokens").at(0).get<Token>(), j.at("ood_tokens").at(1).get<Token>()};
  c.max_response_length = j.at("max_response_length").get<std::size_t>();
  c.parameter_tokens = j.at("parameter_tokens").get<std::size_t>();
  c.label_noise_scale = j.at("label_noise_scale").get<double>();
  return c;
}

}  // namespace

void WorldConfig::validate() const {
  if (train_families.empty()) throw std::invalid_argument("no train families configured");
  if (std::find(train_families.begin(), train_families.end(), ood_family) != train_families.end()) {
    throw std::invalid_argument("OOD family " + std::string(to_string(ood_family)) +
                                " is also a train family");
  }
  for (const TokenRange* r : {&id_tokens, &ood_tokens}) {
    if (r->begin < Vocab::kContentBegin || r->end > Vocab::kDefaultSize || r->size() < 2) {
      throw std::invalid_argument("content token range must lie in [22, 64) with two or more tokens");
    }
  }
  if (id_tokens.overlaps(ood_tokens)) throw std::invalid_argument("ID and OOD token ranges overlap");
  if (max_response_length == 0 || max_response_length > kMaxResponseLength) {
    throw std::invalid_argument("max_response_length must be in [1, 24]");
  }
  if (max_response_length < 2) throw std::invalid_argument("max_response_length below 2 cannot avoid ties");
  if (label_noise_scale < 0.0) throw std::invalid_argument("label_noise_scale must be non-negative");
}

const std::vector<PreferencePair>& SplitPlan::split(std::string_view name) const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (name == kSplitNames[i]) return portions[i];
  }
  if (name == "eval_id") return eval_id;
  if (name == "eval_ood") return eval_ood;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

SplitPlan build_splits(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  SplitPlan plan;
  plan.seed = seed;
  plan.config = config;

  std::vector<Family> ood_families = config.train_families;
  ood_families.push_back(config.ood_family);

  std::unordered_set<std::string> seen;
  std::uint64_t global = 0;
  auto generate = [&](std::size_t count, const std::vector<Family>& families, TokenRange tokens,
                      std::string_view split, bool with_rationale) {
    std::vector<PreferencePair> out;
    out.reserve(count);
    GenerationOptions options{tokens, config.max_response_length, config.parameter_tokens,
                              config.label_noise_scale};
    for (std::size_t i = 0; i < count; ++i, ++global) {
      for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxDuplicateRetries) {
          throw DegenerateTask("could not find a fresh pair for index " + std::to_string(global));
        }
        std::mt19937_64 rng(attempt == 0 ? mix_seed(seed, global)
                                         : mix_seed(mix_seed(seed, global), attempt));
        const Family family = families[std::uniform_int_distribution<std::size_t>(
            0, families.size() - 1)(rng)];
        PreferencePair pair = gen_preference_pair(sample_task(family, options, rng), options, rng);
        if (!seen.insert(content_key(pair)).second) continue;
        pair.pair_id = global;
        pair.split = std::string(split);
        if (with_rationale) pair.rationale = gold_rationale(pair.task, pair.y1, pair.y2);
        out.push_back(std::move(pair));
        break;
      }
    }
    return out;
  };

  const std::size_t base = config.train_size / 3;
  const std::size_t extra = config.train_size % 3;
  for (std::size_t p = 0; p < 3; ++p) {
    plan.portions[p] = generate(base + (p < extra ? 1 : 0), config.train_families,
                                config.id_tokens, kSplitNames[p], true);
  }
  plan.eval_id = generate(config.eval_id_size, config.train_families, config.id_tokens, "eval_id",
                          false);
  plan.eval_ood = generate(config.eval_ood_size, ood_families, config.ood_tokens, "eval_ood",
                           false);
  return plan;
}

std::string to_record(const PreferencePair& p) {
  ojson j;
  j["pair_id"] = p.pair_id;
  j["split"] = p.split;
  j["family"] = std::string(to_string(p.task.family));
  j["params"] = p.task.params;
  j["x"] = p.x;
  j["y1"] = p.y1;
  j["y2"] = p.y2;
  j["gold"] = std::string(1, indicator_char(p.gold));
  j["reward1"] = p.reward1;
  j["reward2"] = p.reward2;
  if (p.rationale) j["rationale"] = *p.rationale;
  return j.dump();
}

PreferencePair parse_record(std::string_view line, const std::string& where) {
  try {
    const ojson j = ojson::parse(line);
    PreferencePair p;
    p.pair_id = j.at("pair_id").get<std::uint64_t>();
    p.split = j.at("split").get<std::string>();
    p.task.family = parse_family(j.at("family").get<std::string>());
    p.task.params = j.at("params").get<std::vector<int>>();
    p.x = j.at("x").get<TokenSeq>();
    p.y1 = j.at("y1").get<TokenSeq>();
    p.y2 = j.at("y2").get<TokenSeq>();
    p.gold = parse_indicator(j.at("gold").get<std::string>());
    p.reward1 = j.at("reward1").get<double>();
    p.reward2 = j.at("reward2").get<double>();
    if (j.contains("rationale")) p.rationale = j.at("rationale").get<TokenSeq>();
    if (p.x != encode_prompt(p.task)) throw std::invalid_argument("prompt does not match task");
    return p;
  } catch (const std::exception& e) {
    throw DatasetError(where + ": " + e.what());
  }
}

void write_dataset(const std::filesystem::path& path, std::span<const PreferencePair> pairs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open " + path.string() + " for writing");
  for (const auto& p : pairs) out << to_record(p) << '\n';
  if (!out) throw DatasetError("write failed for " + path.string());
}

std::vector<PreferencePair> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::vector<PreferencePair> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) throw DatasetError(path.string() + ":" + std::to_string(number) + ": empty line");
    out.push_back(parse_record(line, path.string() + ":" + std::to_string(number)));
  }
  return out;
}

void validate_pairs(std::span<const PreferencePair> pairs, bool noisy_labels) {
  std::set<std::uint64_t> ids;
  for (const auto& p : pairs) {
    const std::string tag = "pair " + std::to_string(p.pair_id);
    if (!ids.insert(p.pair_id).second) throw DatasetError(tag + ": duplicate pair id");
    if (p.x.size() > kMaxPromptLength) throw DatasetError(tag + ": prompt too long");
    if (p.y1.size() > kMaxResponseLength || p.y2.size() > kMaxResponseLength) {
      throw DatasetError(tag + ": response too long");
    }
    if (p.reward1 != latent_reward(p.task, p.y1) || p.reward2 != latent_reward(p.task, p.y2)) {
      throw DatasetError(tag + ": stored rewards disagree with the oracle");
    }
    if (p.reward1 == p.reward2) throw DatasetError(tag + ": tied rewards");
    if (!noisy_labels && p.gold != label_from_rewards(p.reward1, p.reward2)) {
      throw DatasetError(tag + ": gold indicator is not the reward argmax");
    }
  }
}

std::vector<ManifestEntry> write_splits(const SplitPlan& plan, const std::filesystem::path& dir,
                                        const std::string& stamp_json) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  ojson files = ojson::array();
  for (std::string_view name : kSplitNames) {
    const auto& pairs = plan.split(name);
    ManifestEntry e{std::string(name), std::string(name) + ".jsonl", pairs.size(), ""};
    write_dataset(dir / e.file, pairs);
    e.sha256 = sha256_hex(read_file(dir / e.file));
    files.push_back({{"name", e.name}, {"file", e.file}, {"records", e.records}, {"sha256", e.sha256}});
    entries.push_back(std::move(e));
  }
  ojson manifest;
  manifest["stamp"] = ojson::parse(stamp_json);
  manifest["seed"] = plan.seed;
  manifest["world"] = config_json(plan.config);
  manifest["splits"] = files;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  if (!out) throw DatasetError("write failed for " + (dir / "manifest.json").string());
  return entries;
}

SplitPlan read_splits(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  ojson manifest;
  try {
    manifest = ojson::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(manifest_path.string() + ": " + e.what());
  }
  SplitPlan plan;
  try {
    plan.seed = manifest.at("seed").get<std::uint64_t>();
    plan.config = config_from_json(manifest.at("world"));
  } catch (const std::exception& e) {
    throw DatasetError(manifest_path.string() + ": " + e.what());
  }
  for (const auto& entry : manifest.at("splits")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto path = dir / entry.at("file").get<std::string>();
    if (sha256_hex(read_file(path)) != entry.at("sha256").get<std::string>()) {
      throw DatasetError(path.string() + ": digest does not match manifest");
    }
    auto pairs = read_dataset(path);
    if (pairs.size() != entry.at("records").get<std::size_t>()) {
      throw DatasetError(path.string() + ": record count does not match manifest");
    }
    const auto it = std::find(kSplitNames.begin(), kSplitNames.end(), name);
    if (it == kSplitNames.end()) throw DatasetError(manifest_path.string() + ": unknown split " + name);
    const auto index = static_cast<std::size_t>(it - kSplitNames.begin());
    if (index < 3) {
      plan.portions[index] = std::move(pairs);
    } else if (index == 3) {
      plan.eval_id = std::move(pairs);
    } else {
      plan.eval_ood = std::move(pairs);
    }
  }
  return plan;
}

}  // namespace genrm::world

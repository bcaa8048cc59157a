#include "tcoder/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace tcoder {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value for '" + key + "': '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for '" + key + "': '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Get>
Field number(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_number<T>(k, v); },
          [get](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt(get(const_cast<RunConfig&>(c)));
            } else {
              return std::to_string(get(const_cast<RunConfig&>(c)));
            }
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["task"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "mlm") c.task = Task::mlm;
                   else if (v == "clm") c.task = Task::clm;
                   else throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
                 },
                 [](const RunConfig& c) { return to_string(c.task); }};
    t["corpus"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.corpus = v; },
                   [](const RunConfig& c) { return c.corpus.string(); }};
    t["tokenizer"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                        if (v == "char") c.tokenizer = TokenizerKind::char_level;
                        else if (v == "word") c.tokenizer = TokenizerKind::whitespace_word;
                        else throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
                      },
                      [](const RunConfig& c) { return to_string(c.tokenizer); }};
    t["vocab_cap"] = number<Index>([](RunConfig& c) -> Index& { return c.vocab_cap; });
    t["valid_fraction"] = number<double>([](RunConfig& c) -> double& { return c.valid_fraction; });
    t["seq_len"] = number<Index>([](RunConfig& c) -> Index& { return c.block.max_len; });
    t["d_model"] = number<Index>([](RunConfig& c) -> Index& { return c.block.d_model; });
    t["layers"] = number<Index>([](RunConfig& c) -> Index& { return c.block.layers; });
    t["ffn_dim"] = number<Index>([](RunConfig& c) -> Index& { return c.block.ffn_dim; });
    t["attention"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                        if (v == "token") c.block.attention = AttentionKind::token_multi_head;
                        else if (v == "dim") c.block.attention = AttentionKind::dim_multi_conv;
                        else throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
                      },
                      [](const RunConfig& c) { return to_string(c.block.attention); }};
    t["heads"] = number<Index>([](RunConfig& c) -> Index& { return c.block.heads; });
    t["groups"] = number<Index>([](RunConfig& c) -> Index& { return c.block.groups; });
    t["convs"] = number<Index>([](RunConfig& c) -> Index& { return c.block.convs; });
    t["norm"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                   try {
                     c.block.norm = parse_norm_mode(v);
                   } catch (const std::invalid_argument&) {
                     throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.block.norm); }};
    t["positional"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                         if (v == "sinusoidal") c.block.positional = PositionalKind::sinusoidal;
                         else if (v == "learned") c.block.positional = PositionalKind::learned;
                         else throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
                       },
                       [](const RunConfig& c) {
                         return std::string(c.block.positional == PositionalKind::sinusoidal ? "sinusoidal"
                                                                                             : "learned");
                       }};
    t["masked_position_scale"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.block.masked_position_scale = parse_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.block.masked_position_scale ? "true" : "false"); }};
    t["dropout"] = number<double>([](RunConfig& c) -> double& { return c.block.dropout; });
    t["precision"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                        if (v == "f32") c.block.precision = Precision::f32;
                        else if (v == "f64") c.block.precision = Precision::f64;
                        else throw ConfigError("config: bad value for '" + k + "': '" + v + "'");
                      },
                      [](const RunConfig& c) { return std::string(to_string(c.block.precision)); }};
    t["seed"] = number<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    t["batch_size"] = number<Index>([](RunConfig& c) -> Index& { return c.train.batch_size; });
    t["steps"] = number<Index>([](RunConfig& c) -> Index& { return c.train.steps; });
    t["lr"] = number<double>([](RunConfig& c) -> double& { return c.train.lr; });
    t["beta1"] = number<double>([](RunConfig& c) -> double& { return c.train.beta1; });
    t["beta2"] = number<double>([](RunConfig& c) -> double& { return c.train.beta2; });
    t["eps"] = number<double>([](RunConfig& c) -> double& { return c.train.eps; });
    t["warmup"] = number<Index>([](RunConfig& c) -> Index& { return c.train.warmup; });
    t["clip_norm"] = number<double>([](RunConfig& c) -> double& { return c.train.clip_norm; });
    t["eval_interval"] = number<Index>([](RunConfig& c) -> Index& { return c.train.eval_interval; });
    t["eval_batches"] = number<Index>([](RunConfig& c) -> Index& { return c.train.eval_batches; });
    t["select_p"] = number<double>([](RunConfig& c) -> double& { return c.masking.select_p; });
    t["mask_p"] = number<double>([](RunConfig& c) -> double& { return c.masking.mask_p; });
    t["random_p"] = number<double>([](RunConfig& c) -> double& { return c.masking.random_p; });
    t["keep_p"] = number<double>([](RunConfig& c) -> double& { return c.masking.keep_p; });
    return t;
  }();
  return table;
}

}  // namespace

std::string to_string(AttentionKind k) { return k == AttentionKind::token_multi_head ? "token" : "dim"; }
std::string to_string(Task t) { return t == Task::mlm ? "mlm" : "clm"; }
std::string to_string(TokenizerKind t) { return t == TokenizerKind::char_level ? "char" : "word"; }

void BlockConfig::validate() const {
  if (d_model < 1 || layers < 0 || ffn_dim < 1) throw ConfigError("config: d_model, ffn_dim must be positive");
  if (max_len < 1) throw ConfigError("config: seq_len must be >= 1");
  if (attention == AttentionKind::token_multi_head) {
    if (heads < 1 || d_model % heads != 0) throw ConfigError("config: d_model must be divisible by heads");
  } else {
    if (groups < 1 || convs < 1 || d_model % groups != 0)
      throw ConfigError("config: d_model must be divisible by groups and convs must be >= 1");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must be in [0, 1)");
}

void TrainConfig::validate() const {
  if (batch_size < 1 || steps < 0 || eval_interval < 1 || eval_batches < 1 || warmup < 0)
    throw ConfigError("config: batch_size, eval_interval, eval_batches must be positive");
  if (lr < 0.0 || clip_norm < 0.0 || eps <= 0.0) throw ConfigError("config: lr, clip_norm must be >= 0, eps > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("config: beta1 and beta2 must lie in (0, 1)");
}

void MaskingConfig::validate() const {
  for (double p : {select_p, mask_p, random_p, keep_p})
    if (p < 0.0 || p > 1.0) throw ConfigError("config: masking probabilities must lie in [0, 1]");
  if (std::abs(mask_p + random_p + keep_p - 1.0) > 1e-9)
    throw ConfigError("config: mask_p + random_p + keep_p must equal 1");
}

void RunConfig::validate() const {
  block.validate();
  train.validate();
  masking.validate();
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) throw ConfigError("config: valid_fraction must lie in (0, 1)");
  if (vocab_cap < 0) throw ConfigError("config: vocab_cap must be >= 0");
  if (task == Task::clm && block.max_len < 2) throw ConfigError("config: clm needs seq_len >= 2");
}

std::map<std::string, std::string> RunConfig::to_kv() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(*this, key, value);
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  if (!cfg.corpus.empty() && cfg.corpus.is_relative() && !base_dir.empty()) cfg.corpus = base_dir / cfg.corpus;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.to_kv()) out += k + "=" + v + "\n";
  return out;
}

}  // namespace tcoder

#include "tcoder/data.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace tcoder {

namespace {

const std::array<std::string, kFirstRegular> kReservedTokens = {"[PAD]", "[UNK]", "[MASK]", "[BOS]", "[EOS]"};

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: keep it as its own token
}

}  // namespace

Vocab::Vocab() {
  for (const auto& t : kReservedTokens) {
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }
}

Vocab Vocab::from_tokens(const std::vector<std::string>& ordered) {
  Vocab v;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (i < kReservedTokens.size()) {
      if (ordered[i] != kReservedTokens[i]) throw std::invalid_argument("Vocab: reserved slots do not match");
      continue;
    }
    if (!v.index_.emplace(ordered[i], static_cast<int>(v.tokens_.size())).second)
      throw std::invalid_argument("Vocab: duplicate token '" + ordered[i] + "'");
    v.tokens_.push_back(ordered[i]);
  }
  return v;
}

Vocab Vocab::build(const std::vector<std::string>& tokens, Index cap) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : tokens)
    if (t != kNewlineToken) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> order(counts.begin(), counts.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (cap > 0 && static_cast<Index>(order.size()) > cap) order.resize(static_cast<std::size_t>(cap));
  Vocab v;
  for (const auto& [tok, n] : order) {
    if (v.index_.count(tok)) continue;  // a literal "[MASK]" in the text stays reserved
    v.index_.emplace(tok, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(tok);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  if (token == kNewlineToken) return kEos;
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size())) throw std::out_of_range("Vocab: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> tokenize(const std::string& text, TokenizerKind kind) {
  std::vector<std::string> out;
  if (kind == TokenizerKind::char_level) {
    for (std::size_t i = 0; i < text.size();) {
      if (text[i] == '\r') {
        ++i;
        continue;
      }
      const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
      out.push_back(text.substr(i, len));
      i += len;
    }
    return out;
  }
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char c : text) {
    if (c == '\n') {
      flush();
      out.push_back(kNewlineToken);
    } else if (c == ' ' || c == '\t' || c == '\r') {
      flush();
    } else {
      word.push_back(c);
    }
  }
  flush();
  return out;
}

Corpus build_corpus_from_text(const std::string& text, TokenizerKind kind, Index vocab_cap) {
  const auto tokens = tokenize(text, kind);
  Corpus c{Vocab::build(tokens, vocab_cap), {}};
  c.ids.reserve(tokens.size());
  for (const auto& t : tokens) c.ids.push_back(c.vocab.id(t));
  if (c.ids.empty()) throw std::runtime_error("corpus is empty");
  return c;
}

Corpus build_corpus(const std::filesystem::path& path, TokenizerKind kind, Index vocab_cap) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (text.empty()) throw std::runtime_error("corpus " + path.string() + " is empty");
  return build_corpus_from_text(text, kind, vocab_cap);
}

std::vector<std::vector<int>> make_windows(const std::vector<int>& ids, Index len) {
  if (len < 1) throw std::invalid_argument("make_windows: length must be >= 1");
  std::vector<std::vector<int>> out;
  const auto step = static_cast<std::size_t>(len);
  for (std::size_t start = 0; start < ids.size(); start += step) {
    std::vector<int> w(step, kPad);
    std::copy(ids.begin() + static_cast<std::ptrdiff_t>(start),
              ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), start + step)), w.begin());
    out.push_back(std::move(w));
  }
  return out;
}

Index unpadded_length(const std::vector<int>& window) {
  Index n = static_cast<Index>(window.size());
  while (n > 0 && window[static_cast<std::size_t>(n - 1)] == kPad) --n;
  return n;
}

Split split_windows(std::vector<std::vector<int>> windows, double valid_fraction) {
  if (windows.size() < 2) throw std::invalid_argument("split_windows: need at least two windows");
  auto n_valid = static_cast<std::size_t>(std::ceil(valid_fraction * static_cast<double>(windows.size())));
  n_valid = std::clamp<std::size_t>(n_valid, 1, windows.size() - 1);
  Split s;
  const auto cut = windows.end() - static_cast<std::ptrdiff_t>(n_valid);
  s.train.assign(std::make_move_iterator(windows.begin()), std::make_move_iterator(cut));
  s.valid.assign(std::make_move_iterator(cut), std::make_move_iterator(windows.end()));
  return s;
}

bool MaskedRow::has_masked() const { return masked_count() > 0; }

Index MaskedRow::masked_count() const {
  return static_cast<Index>(std::count_if(target.begin(), target.end(), [](int t) { return t != kIgnoreTarget; }));
}

MaskedRow apply_mlm_mask(const std::vector<int>& tokens, Index vocab_size, Rng& rng, const MaskingConfig& cfg) {
  cfg.validate();
  const std::size_t n = tokens.size();
  MaskedRow row{tokens, std::vector<int>(n, kIgnoreTarget), std::vector<MaskAction>(n, MaskAction::none),
                std::vector<std::uint8_t>(n, 0)};
  const Index regular = vocab_size - kFirstRegular;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = tokens[i];
    if (t == kPad) row.padding[i] = 1;
    if (t < kFirstRegular) continue;
    if (rng.uniform() >= cfg.select_p) continue;
    row.target[i] = t;
    const double u = rng.uniform();
    if (u < cfg.mask_p) {
      row.input[i] = kMask;
      row.action[i] = MaskAction::mask;
    } else if (u < cfg.mask_p + cfg.random_p && regular > 0) {
      row.input[i] = kFirstRegular + static_cast<int>(rng.below(static_cast<std::uint64_t>(regular)));
      row.action[i] = MaskAction::random;
    } else {
      row.action[i] = MaskAction::keep;
    }
  }
  return row;
}

MaskedBatch make_mlm_batch(const std::vector<std::vector<int>>& windows, const std::vector<std::size_t>& picks,
                           Index vocab_size, Rng& rng, const MaskingConfig& cfg) {
  MaskedBatch b;
  b.batch = static_cast<Index>(picks.size());
  for (std::size_t p : picks) {
    const auto& w = windows.at(p);
    b.len = std::max<Index>(b.len, static_cast<Index>(w.size()));
    b.rows.push_back(apply_mlm_mask(w, vocab_size, rng, cfg));
  }
  return b;
}

// ---------------------------------------------------------------------------

namespace {

struct Lexicon {
  std::vector<std::string> nouns = {"river", "city",   "teacher", "garden",  "machine", "child",  "letter",
                                    "market", "window", "doctor",  "forest",  "engine",  "sailor", "bridge",
                                    "story",  "farmer", "station", "painter", "village", "storm",  "lamp",
                                    "horse",  "song",   "mountain", "kitchen", "soldier", "island", "clock"};
  std::vector<std::string> verbs = {"find",  "carry", "watch", "build", "follow", "remember", "open",  "paint",
                                    "bring", "cross", "hear",  "keep",  "visit",  "repair",   "answer", "draw"};
  std::vector<std::string> adjectives = {"old",   "quiet", "bright", "small",  "heavy",  "green",
                                         "early", "cold",  "gentle", "narrow", "golden", "broken"};
  std::vector<std::string> adverbs = {"slowly", "often", "never", "carefully", "again", "quickly", "always"};
  std::vector<std::string> preps = {"near", "under", "behind", "across", "beside", "through", "above"};
  std::vector<std::string> names = {"anna", "tomas", "mira", "peter", "lena", "oscar", "clara", "jonas"};
};

std::string third_person(const std::string& verb) {
  if (verb == "carry") return "carries";
  if (verb.ends_with("ch") || verb.ends_with("ss")) return verb + "es";
  return verb + "s";
}

}  // namespace

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  const Lexicon lx;
  Rng rng(seed);
  auto pick = [&](const std::vector<std::string>& v) -> const std::string& {
    return v[static_cast<std::size_t>(rng.below(v.size()))];
  };
  auto noun_phrase = [&](bool& plural) {
    std::string np;
    if (rng.uniform() < 0.2) {
      plural = false;
      return pick(lx.names);
    }
    plural = rng.uniform() < 0.35;
    np = plural ? (rng.uniform() < 0.5 ? "the " : "some ") : (rng.uniform() < 0.6 ? "the " : "a ");
    if (rng.uniform() < 0.5) np += pick(lx.adjectives) + " ";
    np += pick(lx.nouns);
    if (plural) np += "s";
    if (!plural && np.starts_with("a ") && std::string("aeiou").find(np[2]) != std::string::npos) np.insert(1, "n");
    return np;
  };

  std::string out;
  out.reserve(bytes + 256);
  int sentences_in_line = 0;
  while (out.size() < bytes) {
    bool plural = false;
    std::string s = noun_phrase(plural);
    if (rng.uniform() < 0.3) s += " " + pick(lx.adverbs);
    const std::string& verb = pick(lx.verbs);
    s += " " + (plural ? verb : third_person(verb));
    bool obj_plural = false;
    s += " " + noun_phrase(obj_plural);
    if (rng.uniform() < 0.5) {
      bool p = false;
      s += " " + pick(lx.preps) + " " + noun_phrase(p);
    }
    if (rng.uniform() < 0.25) {
      bool p = false;
      const std::string sub = noun_phrase(p);
      s += " and " + sub + " " + (p ? pick(lx.verbs) : third_person(pick(lx.verbs))) + " it";
    }
    s += rng.uniform() < 0.9 ? " ." : " ?";
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    out += s;
    if (++sentences_in_line >= 3 + static_cast<int>(rng.below(4))) {
      out += '\n';
      sentences_in_line = 0;
    } else {
      out += ' ';
    }
  }
  return out;
}

}  // namespace tcoder

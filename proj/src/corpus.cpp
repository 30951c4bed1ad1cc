#include "attrdial/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "attrdial/error.hpp"
#include "attrdial/hash.hpp"
#include "attrdial/rng.hpp"

namespace attrdial {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

void AttributeSchema::validate() const {
  if (attributes.empty()) {
    throw SchemaError("schema has no attributes");
  }
  std::unordered_set<std::string> names;
  for (const Attribute& a : attributes) {
    if (a.name.empty()) {
      throw SchemaError("schema contains an unnamed attribute");
    }
    if (!names.insert(a.name).second) {
      throw SchemaError("duplicate attribute name: " + a.name);
    }
    if (a.aspects.size() < 2) {
      throw SchemaError("attribute " + a.name + " needs at least 2 aspects, has " +
                        std::to_string(a.aspects.size()));
    }
    std::unordered_set<std::string> aspects;
    for (const std::string& asp : a.aspects) {
      if (asp.empty() || !aspects.insert(asp).second) {
        throw SchemaError("attribute " + a.name + " has empty or duplicate aspect");
      }
    }
  }
}

int AttributeSchema::attribute_index(const std::string& name) const {
  for (size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int AttributeSchema::aspect_index(int attribute, const std::string& aspect) const {
  if (attribute < 0 || attribute >= static_cast<int>(attributes.size())) return -1;
  const auto& aspects = attributes[attribute].aspects;
  for (size_t j = 0; j < aspects.size(); ++j) {
    if (aspects[j] == aspect) return static_cast<int>(j);
  }
  return -1;
}

size_t AttributeSchema::combo_count() const {
  size_t n = 1;
  for (const Attribute& a : attributes) n *= a.aspects.size();
  return n;
}

std::string AttributeSchema::to_json_string() const {
  ordered_json root;
  root["attributes"] = ordered_json::array();
  for (const Attribute& a : attributes) {
    ordered_json attr;
    attr["name"] = a.name;
    attr["aspects"] = a.aspects;
    root["attributes"].push_back(attr);
  }
  return root.dump();
}

AttributeSchema AttributeSchema::from_json_string(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("schema: invalid JSON: ") + e.what());
  }
  if (!root.is_object() || !root.contains("attributes") || !root["attributes"].is_array()) {
    throw ParseError("schema: expected object with an \"attributes\" array");
  }
  AttributeSchema s;
  for (const auto& item : root["attributes"]) {
    if (!item.is_object() || !item.contains("name") || !item.contains("aspects")) {
      throw ParseError("schema: each attribute needs \"name\" and \"aspects\"");
    }
    Attribute a;
    a.name = item["name"].get<std::string>();
    for (const auto& asp : item["aspects"]) a.aspects.push_back(asp.get<std::string>());
    s.attributes.push_back(std::move(a));
  }
  s.validate();
  return s;
}

AttributeSchema AttributeSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open schema file: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

void AttributeSchema::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write schema file: " + path);
  }
  out << to_json_string() << "\n";
}

std::string AttributeSchema::hash_hex() const {
  return hex_u64(fnv1a64(to_json_string()));
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

namespace {

bool is_terminal_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string piece;
  std::istringstream ss(text);
  while (ss >> piece) {
    for (char& c : piece) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    // Peel trailing punctuation into standalone tokens, preserving order.
    size_t end = piece.size();
    while (end > 0 && is_terminal_punct(piece[end - 1])) --end;
    if (end > 0) out.push_back(piece.substr(0, end));
    for (size_t i = end; i < piece.size(); ++i) out.push_back(std::string(1, piece[i]));
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

const std::vector<std::string>& Vocab::reserved_tokens() {
  static const std::vector<std::string> r = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return r;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& docs, size_t max_size) {
  const auto& reserved = reserved_tokens();
  if (max_size < reserved.size()) {
    throw InputError("vocab max_size " + std::to_string(max_size) +
                     " below reserved token count " + std::to_string(reserved.size()));
  }
  std::unordered_map<std::string, long long> counts;
  for (const auto& doc : docs) {
    for (const auto& tok : doc) counts[tok] += 1;
  }
  for (const auto& r : reserved) counts.erase(r);

  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> toks = reserved;
  for (const auto& [tok, cnt] : ranked) {
    if (toks.size() >= max_size) break;
    toks.push_back(tok);
  }
  return from_tokens(std::move(toks));
}

Vocab Vocab::from_tokens(std::vector<std::string> toks) {
  const auto& reserved = reserved_tokens();
  if (toks.size() < reserved.size()) {
    throw ParseError("vocab is missing reserved tokens");
  }
  for (size_t i = 0; i < reserved.size(); ++i) {
    if (toks[i] != reserved[i]) {
      throw ParseError("vocab reserved slot " + std::to_string(i) + " holds \"" +
                       toks[i] + "\", expected \"" + reserved[i] + "\"");
    }
  }
  Vocab v;
  v.tokens = std::move(toks);
  for (size_t i = 0; i < v.tokens.size(); ++i) {
    if (!v.index.emplace(v.tokens[i], static_cast<int>(i)).second) {
      throw ParseError("vocab contains duplicate token \"" + v.tokens[i] + "\"");
    }
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens.size())) {
    throw InputError("vocab id " + std::to_string(id) + " outside size " +
                     std::to_string(tokens.size()));
  }
  return tokens[id];
}

void Vocab::save(const std::string& path) const {
  ordered_json root;
  root["format_version"] = 1;
  root["tokens"] = tokens;
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write vocab file: " + path);
  }
  out << root.dump() << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open vocab file: " + path);
  }
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw ParseError(std::string("vocab: invalid JSON: ") + e.what());
  }
  if (!root.contains("tokens") || !root["tokens"].is_array()) {
    throw ParseError("vocab: missing \"tokens\" array");
  }
  return from_tokens(root["tokens"].get<std::vector<std::string>>());
}

std::string Vocab::hash_hex() const {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& t : tokens) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
  }
  return hex_u64(h);
}

// ---------------------------------------------------------------------------
// Examples and JSONL
// ---------------------------------------------------------------------------

DialogueExample encode_example(const RawExample& raw, const Vocab& vocab,
                               const AttributeSchema& schema) {
  DialogueExample ex;
  for (const std::string& turn : raw.context) {
    std::vector<int> ids;
    for (const std::string& tok : tokenize(turn)) ids.push_back(vocab.id(tok));
    ex.context.push_back(std::move(ids));
  }
  for (const std::string& tok : tokenize(raw.response)) ex.response.push_back(vocab.id(tok));
  for (const auto& [attr, aspect] : raw.labels) {
    const int ai = schema.attribute_index(attr);
    if (ai < 0) {
      throw SchemaError("unknown attribute in labels: " + attr);
    }
    const int si = schema.aspect_index(ai, aspect);
    if (si < 0) {
      throw SchemaError("unknown aspect \"" + aspect + "\" for attribute " + attr);
    }
    ex.labels[ai] = si;
  }
  return ex;
}

void save_jsonl(const std::string& path, const std::vector<RawExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write jsonl file: " + path);
  }
  for (const RawExample& ex : examples) {
    ordered_json rec;
    rec["context"] = ex.context;
    rec["response"] = ex.response;
    ordered_json labels = ordered_json::object();
    for (const auto& [attr, aspect] : ex.labels) labels[attr] = aspect;
    rec["labels"] = labels;
    out << rec.dump() << "\n";
  }
}

std::vector<RawExample> load_jsonl(const std::string& path, const AttributeSchema& schema) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open jsonl file: " + path);
  }
  std::vector<RawExample> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + " line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    const std::string where = path + " line " + std::to_string(line_no);
    if (!rec.is_object()) {
      throw ParseError(where + ": record is not an object");
    }
    if (!rec.contains("response") || !rec["response"].is_string()) {
      throw ParseError(where + ": missing string field \"response\"");
    }
    if (!rec.contains("context") || !rec["context"].is_array() || rec["context"].empty()) {
      throw ParseError(where + ": missing non-empty array field \"context\"");
    }
    if (!rec.contains("labels") || !rec["labels"].is_object()) {
      throw ParseError(where + ": missing object field \"labels\"");
    }
    RawExample ex;
    for (const auto& turn : rec["context"]) {
      if (!turn.is_string()) {
        throw ParseError(where + ": context turns must be strings");
      }
      ex.context.push_back(turn.get<std::string>());
    }
    ex.response = rec["response"].get<std::string>();
    // Collect labels in schema order so round trips are stable.
    std::vector<std::pair<std::string, std::string>> found;
    for (const auto& [attr, aspect] : rec["labels"].items()) {
      if (!aspect.is_string()) {
        throw ParseError(where + ": label values must be strings");
      }
      const int ai = schema.attribute_index(attr);
      if (ai < 0) {
        throw SchemaError(where + ": unknown attribute \"" + attr + "\"");
      }
      if (schema.aspect_index(ai, aspect.get<std::string>()) < 0) {
        throw SchemaError(where + ": unknown aspect \"" + aspect.get<std::string>() +
                          "\" for attribute \"" + attr + "\"");
      }
      found.emplace_back(attr, aspect.get<std::string>());
    }
    std::sort(found.begin(), found.end(),
              [&schema](const auto& a, const auto& b) {
                return schema.attribute_index(a.first) < schema.attribute_index(b.first);
              });
    ex.labels = std::move(found);
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generator material
// ---------------------------------------------------------------------------

namespace detail {
const std::vector<std::string>& neutral_slot_words();
}

std::vector<std::string> load_topics(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open topics file: " + path);
  }
  std::vector<std::string> topics;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    topics.push_back(line);
  }
  return topics;
}

std::string CorpusData::lexicons_json(const AttributeSchema& schema) const {
  ordered_json root;
  for (size_t i = 0; i < schema.attributes.size(); ++i) {
    ordered_json per_attr;
    for (size_t j = 0; j < schema.attributes[i].aspects.size(); ++j) {
      per_attr[schema.attributes[i].aspects[j]] = lexicons[i][j];
    }
    root[schema.attributes[i].name] = per_attr;
  }
  return root.dump();
}

namespace {

struct Templates {
  // "%T" expands to the topic tokens.
  std::vector<std::vector<std::string>> queries;
  std::vector<std::vector<std::string>> replies;
  // Frame trigger verbs, one pool per attribute position.
  std::vector<std::vector<std::string>> trigger_pools;
  std::vector<std::string> openers;  // first response token per variant
};

const Templates& templates() {
  static const Templates t = [] {
    Templates t;
    auto tok = [](const char* s) { return tokenize(s); };
    t.queries = {tok("what do you think about %T ?"), tok("how do you find %T ?"),
                 tok("tell me about %T ."),           tok("any thoughts on %T ?"),
                 tok("what is your sense of %T ?"),   tok("could you talk about %T ?")};
    t.replies = {tok("we talked about %T before ."), tok("i remember %T well ."),
                 tok("%T came up again today ."),
                 tok("there is much to say about %T .")};
    t.trigger_pools = {{"sounds", "reads", "looks"},
                       {"feels", "seems", "sits"},
                       {"thinks", "judges", "weighs"}};
    t.openers = {"the", "that", "this"};
    return t;
  }();
  return t;
}

constexpr int kMaxTurnTokens = 32;
constexpr int kMaxResponseTokens = 24;
constexpr int kResponseVariants = 4;

std::vector<std::string> expand_template(const std::vector<std::string>& tpl,
                                         const std::vector<std::string>& topic_tokens) {
  std::vector<std::string> out;
  for (const std::string& tok : tpl) {
    if (tok == "%t") {
      out.insert(out.end(), topic_tokens.begin(), topic_tokens.end());
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

// Two distinct picks from a word list.
std::pair<std::string, std::string> pick_two(const std::vector<std::string>& words,
                                             SeededRng& rng) {
  const size_t a = rng.next_below(words.size());
  size_t b = rng.next_below(words.size() - 1);
  if (b >= a) ++b;
  return {words[a], words[b]};
}

// Response skeleton: opener + topic + one frame per attribute, comma
// separated, closed with a period. Frames hold exactly two slot words.
// Variant 3 stretches frames with ", almost".
std::vector<std::string> build_response(const AttributeSchema& schema,
                                        const CorpusData& data, int variant,
                                        const std::vector<std::string>& topic_tokens,
                                        const std::vector<int>& slot_aspect,
                                        SeededRng& rng) {
  const Templates& t = templates();
  const int n = static_cast<int>(schema.attributes.size());
  std::vector<std::string> out;
  out.push_back(t.openers[variant % t.openers.size()]);
  out.insert(out.end(), topic_tokens.begin(), topic_tokens.end());
  for (int i = 0; i < n; ++i) {
    const auto& pool = t.trigger_pools[i % t.trigger_pools.size()];
    out.push_back(pool[variant % pool.size()]);
    const std::vector<std::string>& words =
        slot_aspect[i] >= 0 ? data.lexicons[i][slot_aspect[i]] : detail::neutral_slot_words();
    auto [w1, w2] = pick_two(words, rng);
    if (variant == 3) {
      out.push_back(w1);
      out.push_back(",");
      out.push_back("almost");
      out.push_back(w2);
    } else {
      out.push_back(w1);
      out.push_back("and");
      out.push_back(w2);
    }
    out.push_back(i + 1 < n ? "," : ".");
  }
  return out;
}

std::vector<std::string> build_context(const Templates& t,
                                       const std::vector<std::string>& topic_tokens,
                                       SeededRng& rng) {
  // 1-3 query turns with neutral replies between them; always ends on a query.
  const int queries = 1 + static_cast<int>(rng.next_below(3));
  std::vector<std::string> turns;
  for (int q = 0; q < queries; ++q) {
    if (q > 0) {
      const auto& reply = t.replies[rng.next_below(t.replies.size())];
      turns.push_back(detokenize(expand_template(reply, topic_tokens)));
    }
    const auto& query = t.queries[rng.next_below(t.queries.size())];
    turns.push_back(detokenize(expand_template(query, topic_tokens)));
  }
  return turns;
}

size_t max_topic_len(const std::vector<std::string>& topics) {
  size_t mx = 0;
  for (const auto& tp : topics) mx = std::max(mx, tokenize(tp).size());
  return mx;
}

// Longest response any variant can emit for this schema/material.
size_t worst_response_len(const AttributeSchema& schema, const CorpusData& data) {
  const size_t n = schema.attributes.size();
  // opener + topic + per frame (trigger + 4 slot/join tokens for variant 3)
  // + separator per frame.
  return 1 + max_topic_len(data.topics) + n * 6;
}

}  // namespace

void validate_corpus_material(const AttributeSchema& schema, const CorpusData& data) {
  schema.validate();
  if (data.lexicons.size() != schema.attributes.size()) {
    throw SchemaError("lexicons cover " + std::to_string(data.lexicons.size()) +
                      " attributes, schema has " + std::to_string(schema.attributes.size()));
  }
  // Collect every token that can appear outside marker slots.
  std::unordered_set<std::string> ambient;
  const Templates& t = templates();
  auto add_all = [&ambient](const std::vector<std::string>& toks) {
    for (const auto& tok : toks) {
      if (tok != "%t") ambient.insert(tok);
    }
  };
  for (const auto& q : t.queries) add_all(q);
  for (const auto& r : t.replies) add_all(r);
  for (const auto& pool : t.trigger_pools) add_all(pool);
  add_all(t.openers);
  add_all({",", ".", "and", "almost"});
  add_all(detail::neutral_slot_words());
  for (const auto& topic : data.topics) add_all(tokenize(topic));

  std::unordered_set<std::string> seen_markers;
  for (size_t i = 0; i < schema.attributes.size(); ++i) {
    const Attribute& attr = schema.attributes[i];
    if (data.lexicons[i].size() != attr.aspects.size()) {
      throw SchemaError("lexicons for " + attr.name + " cover " +
                        std::to_string(data.lexicons[i].size()) + " aspects, schema has " +
                        std::to_string(attr.aspects.size()));
    }
    for (size_t j = 0; j < attr.aspects.size(); ++j) {
      const auto& lex = data.lexicons[i][j];
      if (lex.size() < 30) {
        throw SchemaError("lexicon " + attr.name + "/" + attr.aspects[j] + " has " +
                          std::to_string(lex.size()) + " markers, need at least 30");
      }
      for (const std::string& m : lex) {
        const auto toks = tokenize(m);
        if (toks.size() != 1 || toks[0] != m) {
          throw SchemaError("marker \"" + m + "\" is not a single canonical token");
        }
        if (!seen_markers.insert(m).second) {
          throw SchemaError("marker \"" + m + "\" appears in more than one lexicon");
        }
        if (ambient.count(m) > 0) {
          throw SchemaError("marker \"" + m + "\" collides with template/topic/neutral text");
        }
      }
    }
  }
  if (data.topics.size() < 20) {
    throw SchemaError("need at least 20 topics, have " + std::to_string(data.topics.size()));
  }
  for (const auto& topic : data.topics) {
    const size_t len = tokenize(topic).size();
    if (len < 1 || len > 3) {
      throw SchemaError("topic \"" + topic + "\" must be 1-3 tokens");
    }
  }
  if (worst_response_len(schema, data) > kMaxResponseTokens) {
    throw CapacityError("schema of " + std::to_string(schema.attributes.size()) +
                        " attributes cannot fit the " + std::to_string(kMaxResponseTokens) +
                        "-token response budget");
  }
  if (schema.attributes.size() > templates().trigger_pools.size()) {
    throw CapacityError("generator supports at most " +
                        std::to_string(templates().trigger_pools.size()) + " attributes");
  }
}

GeneratedCorpus gen_corpus(const AttributeSchema& schema, const CorpusData& data,
                           uint64_t seed, const CorpusCounts& counts) {
  validate_corpus_material(schema, data);
  if (counts.train_per_aspect < 1 || counts.test_total < 1) {
    throw InputError("corpus counts must be positive");
  }
  // Conservative distinct-example capacity: variants x topics x ordered
  // marker pairs of the least-stocked lexicon.
  size_t min_lex = SIZE_MAX;
  for (const auto& per_attr : data.lexicons) {
    for (const auto& lex : per_attr) min_lex = std::min(min_lex, lex.size());
  }
  const size_t capacity = kResponseVariants * data.topics.size() * min_lex * (min_lex - 1);
  if (static_cast<size_t>(counts.train_per_aspect) > capacity) {
    throw CapacityError("train_per_aspect " + std::to_string(counts.train_per_aspect) +
                        " exceeds template capacity " + std::to_string(capacity));
  }
  const size_t combos = schema.combo_count();
  const size_t per_combo = (counts.test_total + combos - 1) / combos;
  if (per_combo > capacity) {
    throw CapacityError("test_total " + std::to_string(counts.test_total) +
                        " exceeds template capacity " + std::to_string(capacity * combos));
  }

  const Templates& t = templates();
  SeededRng root(seed, "corpus");
  GeneratedCorpus out;

  auto make_example = [&](SeededRng rng, const std::vector<int>& slot_aspect) {
    const auto& topic = data.topics[rng.next_below(data.topics.size())];
    const auto topic_tokens = tokenize(topic);
    const int variant = static_cast<int>(rng.next_below(kResponseVariants));
    RawExample ex;
    ex.context = build_context(t, topic_tokens, rng);
    ex.response =
        detokenize(build_response(schema, data, variant, topic_tokens, slot_aspect, rng));
    for (size_t i = 0; i < slot_aspect.size(); ++i) {
      if (slot_aspect[i] >= 0) {
        ex.labels.emplace_back(schema.attributes[i].name,
                               schema.attributes[i].aspects[slot_aspect[i]]);
      }
    }
    return ex;
  };

  // Train: single-aspect blocks in schema order.
  SeededRng train_rng = root.substream("train");
  uint64_t example_counter = 0;
  for (size_t i = 0; i < schema.attributes.size(); ++i) {
    for (size_t j = 0; j < schema.attributes[i].aspects.size(); ++j) {
      for (int k = 0; k < counts.train_per_aspect; ++k) {
        std::vector<int> slots(schema.attributes.size(), -1);
        slots[i] = static_cast<int>(j);
        out.train.push_back(make_example(train_rng.substream(example_counter++), slots));
      }
    }
  }

  // Test: full combinations assigned round-robin, so per-combo counts differ
  // by at most one.
  SeededRng test_rng = root.substream("test");
  for (int k = 0; k < counts.test_total; ++k) {
    size_t combo = static_cast<size_t>(k) % combos;
    std::vector<int> slots(schema.attributes.size());
    for (size_t i = 0; i < schema.attributes.size(); ++i) {
      const size_t arity = schema.attributes[i].aspects.size();
      slots[i] = static_cast<int>(combo % arity);
      combo /= arity;
    }
    out.test.push_back(make_example(test_rng.substream(static_cast<uint64_t>(k)), slots));
  }

  // Belt-and-braces: verify turn/response budgets on the way out.
  for (const RawExample& ex : out.train) {
    for (const auto& turn : ex.context) {
      if (tokenize(turn).size() > kMaxTurnTokens) {
        throw CapacityError("generated turn exceeds " + std::to_string(kMaxTurnTokens) +
                            " tokens");
      }
    }
    if (tokenize(ex.response).size() > kMaxResponseTokens) {
      throw CapacityError("generated response exceeds " +
                          std::to_string(kMaxResponseTokens) + " tokens");
    }
  }
  return out;
}

std::vector<int> marker_counts(const std::vector<std::string>& tokens,
                               const CorpusData& data, int attribute) {
  if (attribute < 0 || attribute >= static_cast<int>(data.lexicons.size())) {
    throw InputError("marker_counts: attribute index " + std::to_string(attribute) +
                     " out of range");
  }
  const auto& per_aspect = data.lexicons[attribute];
  std::vector<int> counts(per_aspect.size(), 0);
  for (const std::string& tok : tokens) {
    for (size_t j = 0; j < per_aspect.size(); ++j) {
      if (std::find(per_aspect[j].begin(), per_aspect[j].end(), tok) != per_aspect[j].end()) {
        ++counts[j];
      }
    }
  }
  return counts;
}

int lexicon_label(const std::vector<std::string>& tokens, const CorpusData& data,
                  int attribute) {
  const auto counts = marker_counts(tokens, data, attribute);
  int label = -1;
  for (size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] > 0) {
      if (label >= 0) return -1;  // markers of two aspects present
      label = static_cast<int>(j);
    }
  }
  return label;
}

}  // namespace attrdial

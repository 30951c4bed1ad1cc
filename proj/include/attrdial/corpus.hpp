// Synthetic dialogue corpus: attribute schema, tokenizer, vocabulary, JSONL
// persistence, and a deterministic template generator. Each generated train
// example carries exactly one attribute label and its response contains at
// least two marker tokens of that aspect and none of any other attribute;
// test examples carry a full label combination with markers for every
// labeled aspect.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace attrdial {

struct Attribute {
  std::string name;
  std::vector<std::string> aspects;
};

struct AttributeSchema {
  std::vector<Attribute> attributes;

  // Unique attribute names, two or more uniquely named aspects each.
  void validate() const;
  int attribute_index(const std::string& name) const;  // -1 when absent
  int aspect_index(int attribute, const std::string& aspect) const;  // -1 when absent
  size_t num_attributes() const { return attributes.size(); }
  // Number of full label combinations (product of aspect counts).
  size_t combo_count() const;

  std::string to_json_string() const;
  static AttributeSchema from_json_string(const std::string& text);
  static AttributeSchema load(const std::string& path);
  void save(const std::string& path) const;
  // FNV-1a of the canonical serialization; binds checkpoints together.
  std::string hash_hex() const;
};

AttributeSchema default_schema();

// Lowercase, whitespace-split, terminal punctuation characters (. , ! ? ; :)
// peeled off into their own tokens. detokenize(tokenize(t)) == t for
// canonical text (lowercase, single-space separated tokens).
std::vector<std::string> tokenize(const std::string& text);
std::string detokenize(const std::vector<std::string>& tokens);

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> tokens;  // position = id; starts with reserved ids
  std::unordered_map<std::string, int> index;

  static const std::vector<std::string>& reserved_tokens();
  // Frequency-ranked (ties broken lexicographically), truncated to max_size
  // entries including the reserved ids. max_size below the reserved count is
  // an InputError.
  static Vocab build(const std::vector<std::vector<std::string>>& docs, size_t max_size);
  static Vocab from_tokens(std::vector<std::string> toks);

  int id(const std::string& token) const;  // kUnk when unknown
  const std::string& token(int id) const;
  size_t size() const { return tokens.size(); }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
  std::string hash_hex() const;
};

// Serialized example (what lives in JSONL files).
struct RawExample {
  std::vector<std::string> context;  // alternating turns, ends with a query
  std::string response;
  std::vector<std::pair<std::string, std::string>> labels;  // attr -> aspect, schema order
};

// Encoded example used by the model.
struct DialogueExample {
  std::vector<std::vector<int>> context;
  std::vector<int> response;
  std::map<int, int> labels;  // attribute index -> aspect index
};

DialogueExample encode_example(const RawExample& raw, const Vocab& vocab,
                               const AttributeSchema& schema);

void save_jsonl(const std::string& path, const std::vector<RawExample>& examples);
// Malformed JSON / missing fields raise ParseError naming the line; labels
// that do not resolve against the schema raise SchemaError.
std::vector<RawExample> load_jsonl(const std::string& path, const AttributeSchema& schema);

// Generation material: marker lexicons per attribute/aspect plus topics.
struct CorpusData {
  // lexicons[i][j] = markers of aspect j of attribute i (schema order).
  std::vector<std::vector<std::vector<std::string>>> lexicons;
  std::vector<std::string> topics;

  std::string lexicons_json(const AttributeSchema& schema) const;
};

// Built-in material for the default three-attribute schema.
CorpusData default_corpus_data();
std::vector<std::string> default_topics();
// One topic per non-empty line; lines starting with '#' are skipped.
std::vector<std::string> load_topics(const std::string& path);
CorpusData corpus_data_for(const AttributeSchema& schema, const std::vector<std::string>& topics);

// Lexicon sizes (>=30 per aspect), topic count (>=20), marker/token
// collisions, topic lengths. Raises SchemaError / InputError.
void validate_corpus_material(const AttributeSchema& schema, const CorpusData& data);

struct CorpusCounts {
  int train_per_aspect = 6000;
  int test_total = 800;
};

struct GeneratedCorpus {
  std::vector<RawExample> train;
  std::vector<RawExample> test;
};

// Deterministic in (schema, data, seed, counts); raises CapacityError when a
// requested count exceeds the distinct-template capacity.
GeneratedCorpus gen_corpus(const AttributeSchema& schema, const CorpusData& data,
                           uint64_t seed, const CorpusCounts& counts);

// Counts marker tokens per aspect of `attribute` in a token sequence.
std::vector<int> marker_counts(const std::vector<std::string>& tokens,
                               const CorpusData& data, int attribute);
// Aspect whose markers appear (>0) if exactly one such aspect exists, else -1.
int lexicon_label(const std::vector<std::string>& tokens, const CorpusData& data,
                  int attribute);

}  // namespace attrdial

// Built-in generation material: the default schema, marker lexicons (30 per
// aspect, mutually disjoint), neutral slot fillers, and 50 topics. All tokens
// are canonical (lowercase, no attached punctuation).
#include <string>
#include <vector>

#include "attrdial/corpus.hpp"
#include "attrdial/error.hpp"

namespace attrdial {

AttributeSchema default_schema() {
  AttributeSchema s;
  s.attributes = {
      {"style", {"lyrical", "plain"}},
      {"attitude", {"optimistic", "pessimistic"}},
      {"mind", {"critical", "emotional"}},
  };
  return s;
}

namespace detail {

const std::vector<std::string>& lexicon_style_lyrical() {
  static const std::vector<std::string> v = {
      "shimmering", "luminous",   "melodic",     "lilting",    "dreamlike",
      "velvet",     "gossamer",   "silken",      "moonlit",    "starlit",
      "honeyed",    "wistful",    "ethereal",    "glimmering", "songlike",
      "rhapsodic",  "lyric",      "flowing",     "soaring",    "gilded",
      "opaline",    "twilit",     "dulcet",      "mellifluous", "crystalline",
      "iridescent", "beguiling",  "airy",        "painterly",  "lambent"};
  return v;
}

const std::vector<std::string>& lexicon_style_plain() {
  static const std::vector<std::string> v = {
      "plain",        "simple",     "ordinary",    "modest",      "bare",
      "unadorned",    "homespun",   "workaday",    "prosaic",     "austere",
      "spare",        "sober",      "understated", "functional",  "utilitarian",
      "blunt",        "unvarnished", "humdrum",    "pedestrian",  "commonplace",
      "drab",         "muted",      "subdued",     "basic",       "unfussy",
      "literal",      "dry",        "stark",       "frugal",      "terse"};
  return v;
}

const std::vector<std::string>& lexicon_attitude_optimistic() {
  static const std::vector<std::string> v = {
      "hopeful",    "upbeat",     "cheerful",   "buoyant",    "sunny",
      "confident",  "encouraged", "heartened",  "expectant",  "rosy",
      "assured",    "sanguine",   "positive",   "uplifted",   "glad",
      "eager",      "enthusiastic", "optimistic", "promising", "reassured",
      "energized",  "inspired",   "emboldened", "elated",     "jubilant",
      "merry",      "bullish",    "auspicious", "chipper",    "exuberant"};
  return v;
}

const std::vector<std::string>& lexicon_attitude_pessimistic() {
  static const std::vector<std::string> v = {
      "gloomy",      "bleak",       "hopeless",    "dreary",      "grim",
      "dismal",      "despairing",  "defeated",    "discouraged", "resigned",
      "cynical",     "doubtful",    "weary",       "somber",      "morose",
      "fatalistic",  "disheartened", "dour",       "glum",        "pessimistic",
      "foreboding",  "joyless",     "dispirited",  "downcast",    "despondent",
      "sullen",      "crestfallen", "leaden",      "funereal",    "bearish"};
  return v;
}

const std::vector<std::string>& lexicon_mind_critical() {
  static const std::vector<std::string> v = {
      "analytical",  "logical",      "rigorous",    "skeptical",   "methodical",
      "measured",    "discerning",   "exacting",    "systematic",  "objective",
      "dispassionate", "evaluative",  "judicious",   "probing",     "incisive",
      "scrutinizing", "deliberate",  "reasoned",    "empirical",   "precise",
      "critical",    "questioning",  "meticulous",  "disciplined", "detached",
      "forensic",    "comparative",  "diagnostic",  "structured",  "impartial"};
  return v;
}

const std::vector<std::string>& lexicon_mind_emotional() {
  static const std::vector<std::string> v = {
      "heartfelt",  "tearful",    "passionate",  "tender",      "soulful",
      "sentimental", "aching",    "yearning",    "overwhelmed", "stirred",
      "touched",    "moved",      "emotional",   "affectionate", "longing",
      "vulnerable", "raw",        "fervent",     "ardent",      "impassioned",
      "nostalgic",  "bittersweet", "wrenching",  "swooning",    "trembling",
      "devoted",    "smitten",    "euphoric",    "misty",       "weepy"};
  return v;
}

const std::vector<std::string>& neutral_slot_words() {
  static const std::vector<std::string> v = {
      "usual",   "typical",  "routine",  "familiar", "steady",  "settled",
      "average", "middling", "moderate", "general",  "standard", "regular"};
  return v;
}

}  // namespace detail

std::vector<std::string> default_topics() {
  return {
      "morning trains",   "garden tomatoes",  "street murals",
      "mountain cabins",  "library visits",   "night markets",
      "river kayaking",   "chess clubs",      "sourdough baking",
      "city rooftops",    "autumn hikes",     "jazz records",
      "pottery class",    "tide pools",       "old bridges",
      "bus routes",       "apple orchards",   "winter soups",
      "book swaps",       "desert stars",     "harbor boats",
      "rain gutters",     "bike lanes",       "corner cafes",
      "paper maps",       "subway art",       "community gardens",
      "thrift stores",    "lighthouse tours", "meteor showers",
      "farmers markets",  "violin practice",  "board games",
      "street food",      "hot springs",      "vintage cameras",
      "local theater",    "coastal trails",   "radio dramas",
      "train stations",   "flea markets",     "herb gardens",
      "open mics",        "museum wings",     "park benches",
      "snow days",        "kite festivals",   "pocket parks",
      "night buses",      "stone walls"};
}

CorpusData corpus_data_for(const AttributeSchema& schema,
                           const std::vector<std::string>& topics) {
  // Built-in lexicons are keyed by attribute/aspect name; a schema that names
  // an aspect we have no markers for cannot be generated.
  using detail::lexicon_style_lyrical;
  const std::vector<std::pair<std::pair<std::string, std::string>,
                              const std::vector<std::string>*>>
      builtin = {
          {{"style", "lyrical"}, &detail::lexicon_style_lyrical()},
          {{"style", "plain"}, &detail::lexicon_style_plain()},
          {{"attitude", "optimistic"}, &detail::lexicon_attitude_optimistic()},
          {{"attitude", "pessimistic"}, &detail::lexicon_attitude_pessimistic()},
          {{"mind", "critical"}, &detail::lexicon_mind_critical()},
          {{"mind", "emotional"}, &detail::lexicon_mind_emotional()},
      };
  CorpusData data;
  data.topics = topics;
  data.lexicons.resize(schema.attributes.size());
  for (size_t i = 0; i < schema.attributes.size(); ++i) {
    const Attribute& attr = schema.attributes[i];
    data.lexicons[i].resize(attr.aspects.size());
    for (size_t j = 0; j < attr.aspects.size(); ++j) {
      bool found = false;
      for (const auto& [key, lex] : builtin) {
        if (key.first == attr.name && key.second == attr.aspects[j]) {
          data.lexicons[i][j] = *lex;
          found = true;
          break;
        }
      }
      if (!found) {
        throw SchemaError("no built-in marker lexicon for " + attr.name + "/" +
                          attr.aspects[j]);
      }
    }
  }
  return data;
}

CorpusData default_corpus_data() {
  return corpus_data_for(default_schema(), default_topics());
}

}  // namespace attrdial

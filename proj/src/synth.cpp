// SPDX-License-Identifier: Apache-2.0

#include "slu/synth.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "slu/checkpoint.hpp"
#include "slu/error.hpp"

namespace slu::synth {

namespace {

using nlohmann::json;

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

bool placeholder(const std::string& tok, std::string* type = nullptr) {
  if (tok.size() < 3 || tok.front() != '{' || tok.back() != '}') return false;
  if (type) *type = tok.substr(1, tok.size() - 2);
  return true;
}

// Pronounceable pseudo-words, unique across one factory.
class WordFactory {
 public:
  explicit WordFactory(Rng rng) : rng_(rng) {}

  void reserve(const std::string& word) { used_.insert(word); }

  std::string word() {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                   "br", "dr", "kr", "st", "tr", "sh", "ch"};
    static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
    for (;;) {
      std::string w;
      const std::size_t syllables = 2 + rng_.below(2);
      for (std::size_t s = 0; s < syllables; ++s) {
        w += onsets[rng_.below(std::size(onsets))];
        w += vowels[rng_.below(std::size(vowels))];
      }
      if (rng_.bernoulli(0.3)) w += "n";
      if (used_.insert(w).second) return w;
    }
  }

  // n entries of 1..max_tokens tokens; longer entries are rarer.
  Lexicon lexicon(std::size_t n, std::size_t max_tokens) {
    Lexicon out;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t len = 1;
      while (len < max_tokens && rng_.bernoulli(0.4)) ++len;
      std::string entry;
      for (std::size_t k = 0; k < len; ++k) entry += (k ? " " : "") + word();
      out.push_back(entry);
    }
    return out;
  }

 private:
  Rng rng_;
  std::set<std::string> used_;
};

std::map<std::string, Lexicon> string_map_of_lists(const json& j) {
  std::map<std::string, Lexicon> out;
  for (const auto& [k, v] : j.items()) out[k] = v.get<Lexicon>();
  return out;
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

void GrammarSpec::validate() const {
  const std::string where = "grammar '" + domain + "'";
  if (domain.empty()) throw ConfigError("grammar: empty domain name");
  if (templates.empty()) throw ConfigError(where + ": no templates");
  if (!(shared_lexicon_fraction >= 0.0 && shared_lexicon_fraction <= 1.0)) {
    throw ConfigError(where + ": shared_lexicon_fraction must be in [0, 1]");
  }
  for (const auto& t : templates) {
    const auto tokens = split_ws(t);
    if (tokens.empty()) throw ConfigError(where + ": empty template");
    for (const auto& tok : tokens) {
      std::string type;
      if (!placeholder(tok, &type)) continue;
      auto it = lexicons.find(type);
      if (it == lexicons.end()) throw ConfigError(where + ": placeholder {" + type + "} has no lexicon");
    }
  }
  for (const auto& group : {&lexicons, &shared_lexicons}) {
    for (const auto& [type, entries] : *group) {
      if (entries.empty()) throw ConfigError(where + ": empty lexicon for '" + type + "'");
      for (const auto& e : entries) {
        if (split_ws(e).empty()) throw ConfigError(where + ": empty entry in lexicon '" + type + "'");
      }
    }
  }
  std::map<std::string, std::string> target_of;
  for (const auto& [type, alias] : label_alias) {
    if (alias.empty()) throw ConfigError(where + ": empty alias for '" + type + "'");
    for (const auto& [other, other_alias] : label_alias) {
      if (other != type && other_alias == alias) throw ConfigError(where + ": alias target '" + alias + "' reused");
    }
  }
}

Lexicon GrammarSpec::effective_lexicon(const std::string& type) const {
  Lexicon own = lexicons.at(type);
  auto it = shared_lexicons.find(type);
  if (it == shared_lexicons.end()) return own;
  const auto k = std::min<std::size_t>(it->second.size(),
                                       static_cast<std::size_t>(std::llround(shared_lexicon_fraction * own.size())));
  for (std::size_t j = 0; j < k; ++j) own[j] = it->second[j];
  return own;
}

std::vector<data::Utterance> generate(const GrammarSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  if (n == 0) throw ConfigError("generate: n must be >= 1");
  std::vector<std::vector<std::string>> patterns;
  for (const auto& t : spec.templates) patterns.push_back(split_ws(t));
  std::map<std::string, std::vector<std::vector<std::string>>> fills;
  for (const auto& [type, entries] : spec.lexicons) {
    for (const auto& e : spec.effective_lexicon(type)) fills[type].push_back(split_ws(e));
  }

  std::vector<data::Utterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    data::Utterance u;
    u.domain = spec.domain;
    for (const auto& tok : patterns[rng.below(patterns.size())]) {
      std::string type;
      if (!placeholder(tok, &type)) {
        u.tokens.push_back(tok);
        u.labels.push_back("O");
        continue;
      }
      const auto& choices = fills.at(type);
      const auto& entry = choices[rng.below(choices.size())];
      auto alias = spec.label_alias.find(type);
      const std::string label = alias == spec.label_alias.end() ? type : alias->second;
      for (std::size_t k = 0; k < entry.size(); ++k) {
        u.tokens.push_back(entry[k]);
        u.labels.push_back((k == 0 ? "B-" : "I-") + label);
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

SuitePlan standard_suite_plan(std::uint64_t seed) {
  WordFactory words(Rng(seed).fork(1000));
  SuitePlan plan;

  // Travel: flights and trains.
  const Lexicon city_pool = words.lexicon(500, 2);
  const Lexicon date_pool = words.lexicon(60, 2);
  const Lexicon time_pool = words.lexicon(40, 2);
  const double travel_share = 0.8;

  auto travel = [&](const std::string& domain, const std::string& vehicle) {
    GrammarSpec g;
    g.domain = domain;
    g.shared_lexicon_fraction = travel_share;
    const Lexicon cities = words.lexicon(500, 2);
    for (const char* t : {"from_city", "to_city", "via_city"}) {
      g.lexicons[t] = cities;
      g.shared_lexicons[t] = city_pool;
    }
    g.lexicons["depart_date"] = words.lexicon(60, 2);
    g.shared_lexicons["depart_date"] = date_pool;
    g.lexicons["depart_time"] = words.lexicon(40, 2);
    g.shared_lexicons["depart_time"] = time_pool;
    g.lexicons["price"] = words.lexicon(30, 1);
    g.lexicons["operator"] = words.lexicon(25, 2);
    g.lexicons["seat_class"] = words.lexicon(8, 1);
    g.lexicons["service_number"] = words.lexicon(120, 1);
    g.lexicons["amenity"] = words.lexicon(15, 2);
    const std::string v = vehicle;
    g.templates = {
        // Shared wording, no vehicle cue.
        "from {from_city} to {to_city} on {depart_date}",
        "{from_city} to {to_city} {depart_date} {depart_time}",
        "i need to get from {from_city} to {to_city}",
        "leaving {from_city} at {depart_time} going to {to_city}",
        "what is the cheapest way to {to_city} on {depart_date}",
        "one way to {to_city} please",
        // Vehicle-specific wording.
        "book a " + v + " from {from_city} to {to_city} on {depart_date}",
        "i want a {seat_class} " + v + " ticket to {to_city}",
        "show me " + v + "s from {from_city} to {to_city} leaving {depart_date} at {depart_time}",
        "is there a " + v + " to {to_city} via {via_city}",
        "which " + v + "s stop in {via_city} on the way to {to_city}",
        "does " + v + " {service_number} have {amenity}",
        "how much is a {seat_class} " + v + " from {from_city} to {to_city}",
        "list {operator} " + v + "s to {to_city} under {price}",
        "i would like to take {operator} to {to_city} on {depart_date}",
        "status of " + v + " {service_number} to {to_city}",
        "when does the {depart_time} " + v + " from {from_city} arrive",
        "find a " + v + " with {amenity} from {from_city}",
        "{operator} " + v + " {service_number} from {from_city} {depart_date}",
        "cheap " + v + " tickets to {to_city} for {price}",
    };
    return g;
  };
  GrammarSpec flights = travel("flights", "flight");
  flights.templates.push_back("what airlines fly from {from_city} to {to_city}");
  flights.templates.push_back("i want to fly to {to_city} on {depart_date}");
  GrammarSpec trains = travel("trains", "train");
  trains.templates.push_back("which platform for the {depart_time} train to {to_city}");
  trains.templates.push_back("i want to ride the rail to {to_city} on {depart_date}");
  // The aliased pair: same slot, same pool, different label name.
  trains.label_alias["to_city"] = "to_station";

  GrammarSpec restaurants;
  restaurants.domain = "restaurants";
  restaurants.lexicons["cuisine"] = words.lexicon(40, 1);
  restaurants.lexicons["restaurant_name"] = words.lexicon(300, 3);
  restaurants.lexicons["location"] = words.lexicon(200, 2);
  restaurants.lexicons["price_range"] = words.lexicon(10, 2);
  restaurants.lexicons["rating"] = words.lexicon(12, 2);
  restaurants.lexicons["hours"] = words.lexicon(30, 2);
  restaurants.lexicons["dish"] = words.lexicon(150, 2);
  restaurants.lexicons["amenity"] = words.lexicon(25, 2);
  restaurants.templates = {
      "find a {cuisine} restaurant near {location}",
      "is {restaurant_name} open {hours}",
      "i want {dish} in {location}",
      "where can i get {dish} {hours}",
      "any {price_range} {cuisine} places with {amenity}",
      "show me {rating} restaurants in {location}",
      "book a table at {restaurant_name} for {hours}",
      "does {restaurant_name} serve {dish}",
      "{cuisine} food {location} {price_range}",
      "i am looking for a place with {amenity} and {rating} reviews",
      "what are the hours of {restaurant_name}",
      "recommend a {rating} {cuisine} spot",
      "how expensive is {restaurant_name}",
      "restaurants that serve {dish} with {amenity}",
      "take me to the nearest {cuisine} place",
      "is there a {price_range} restaurant in {location} open {hours}",
      "get me {dish} from {restaurant_name}",
      "which places near {location} have {amenity}",
  };

  GrammarSpec movies;
  movies.domain = "movies";
  movies.lexicons["title"] = words.lexicon(300, 3);
  movies.lexicons["actor"] = words.lexicon(250, 2);
  movies.lexicons["director"] = words.lexicon(120, 2);
  movies.lexicons["genre"] = words.lexicon(20, 1);
  movies.lexicons["year"] = words.lexicon(40, 1);
  movies.lexicons["rating"] = words.lexicon(10, 1);
  movies.lexicons["character"] = words.lexicon(150, 2);
  movies.lexicons["song"] = words.lexicon(80, 3);
  movies.templates = {
      "who directed {title}",
      "show me {genre} movies from {year}",
      "what movies did {actor} star in",
      "find {genre} films directed by {director}",
      "who played {character} in {title}",
      "list {rating} movies with {actor}",
      "what year did {title} come out",
      "is {title} a {genre} movie",
      "movies by {director} starring {actor}",
      "which film has the song {song}",
      "play the trailer for {title}",
      "{actor} {genre} movie {year}",
      "what is {title} rated",
      "show me films where {actor} plays {character}",
      "i want to watch a {rating} {genre} film",
      "name the {director} film with {actor}",
      "who sang {song} in {title}",
      "best {genre} movies of {year}",
  };

  for (auto* g : {&flights, &trains, &restaurants, &movies}) plan.domains.push_back({*g, 2000, 400});
  return plan;
}

std::vector<Corpus> realize(const SuitePlan& plan, std::uint64_t seed) {
  Rng root(seed);
  std::vector<Corpus> out;
  for (std::size_t i = 0; i < plan.domains.size(); ++i) {
    const auto& d = plan.domains[i];
    Corpus c;
    c.domain = d.spec.domain;
    Rng train_rng = root.fork(2 * i);
    Rng test_rng = root.fork(2 * i + 1);
    c.train = generate(d.spec, d.train_size, train_rng);
    c.test = generate(d.spec, d.test_size, test_rng);
    out.push_back(std::move(c));
  }
  return out;
}

SuitePlan parse_plan(const std::string& json_text, const std::string& source_name) {
  SuitePlan plan;
  try {
    const json root = json::parse(json_text);
    reject_unknown(root, {"schema_version", "domains"}, source_name);
    if (root.at("schema_version").get<int>() != 1) throw ConfigError(source_name + ": unsupported schema_version");
    std::set<std::string> seen;
    for (const auto& d : root.at("domains")) {
      reject_unknown(d,
                     {"domain", "templates", "lexicons", "shared_lexicons", "label_alias", "shared_lexicon_fraction",
                      "train", "test"},
                     source_name);
      DomainPlan p;
      p.spec.domain = d.at("domain").get<std::string>();
      p.spec.templates = d.at("templates").get<std::vector<std::string>>();
      p.spec.lexicons = string_map_of_lists(d.at("lexicons"));
      if (d.contains("shared_lexicons")) p.spec.shared_lexicons = string_map_of_lists(d.at("shared_lexicons"));
      if (d.contains("label_alias")) p.spec.label_alias = d.at("label_alias").get<std::map<std::string, std::string>>();
      p.spec.shared_lexicon_fraction = d.value("shared_lexicon_fraction", 0.0);
      p.train_size = d.at("train").get<std::size_t>();
      p.test_size = d.at("test").get<std::size_t>();
      p.spec.validate();
      if (p.train_size == 0 || p.test_size == 0) throw ConfigError(source_name + ": train and test must be >= 1");
      if (!seen.insert(p.spec.domain).second) throw ConfigError(source_name + ": duplicate domain " + p.spec.domain);
      plan.domains.push_back(std::move(p));
    }
    if (plan.domains.empty()) throw ConfigError(source_name + ": no domains");
  } catch (const json::exception& e) {
    throw ConfigError(source_name + ": " + e.what());
  }
  return plan;
}

std::string plan_to_json(const SuitePlan& plan) {
  json domains = json::array();
  for (const auto& d : plan.domains) {
    domains.push_back({{"domain", d.spec.domain},
                       {"templates", d.spec.templates},
                       {"lexicons", d.spec.lexicons},
                       {"shared_lexicons", d.spec.shared_lexicons},
                       {"label_alias", d.spec.label_alias},
                       {"shared_lexicon_fraction", d.spec.shared_lexicon_fraction},
                       {"train", d.train_size},
                       {"test", d.test_size}});
  }
  return json{{"schema_version", 1}, {"domains", domains}}.dump(2);
}

std::string write_suite(const std::filesystem::path& dir, const std::vector<Corpus>& corpora, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  json files = json::array();
  for (const auto& c : corpora) {
    for (const auto& [split, utts] : {std::pair{"train", &c.train}, std::pair{"test", &c.test}}) {
      const std::string name = c.domain + "." + split + ".bio";
      std::ostringstream text;
      data::write_bio(text, *utts);
      std::ofstream out(dir / name, std::ios::binary);
      if (!out) throw ConfigError((dir / name).string() + ": cannot write");
      out << text.str();
      files.push_back({{"path", name},
                       {"domain", c.domain},
                       {"split", split},
                       {"utterances", utts->size()},
                       {"sha256", ckpt::sha256_hex(text.str())}});
    }
  }
  const std::string manifest = json{{"seed", seed}, {"files", files}}.dump(2) + "\n";
  std::ofstream(dir / "manifest.json", std::ios::binary) << manifest;
  return manifest;
}

}  // namespace slu::synth

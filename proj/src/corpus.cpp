#include "sketchgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sketchgen/error.hpp"
#include "sketchgen/util.hpp"

namespace sketchgen {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

std::string format_double(double v, int precision) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(precision);
  out << v;
  return out.str();
}

std::map<std::size_t, double> default_production_weights(const Grammar& g,
                                                         double damping) {
  // reach[a] = nonterminals reachable from a.
  std::map<std::string, std::set<std::string>> reach;
  for (const std::string& nt : g.nonterminals()) reach[nt] = {};
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Production& p : g.productions) {
      std::set<std::string>& r = reach[p.lhs.name];
      for (const Symbol& s : p.rhs) {
        if (!s.is_nonterminal()) continue;
        if (r.insert(s.name).second) changed = true;
        for (const std::string& t : reach[s.name])
          if (r.insert(t).second) changed = true;
      }
    }
  }
  std::map<std::size_t, double> weights;
  for (std::size_t i = 0; i < g.productions.size(); ++i) {
    const Production& p = g.productions[i];
    double w = 1.0;
    for (const Symbol& s : p.rhs)
      if (s.is_nonterminal() && reach[s.name].count(p.lhs.name)) w *= damping;
    weights[i] = w;
  }
  return weights;
}

namespace {

std::vector<std::pair<std::string, double>> zipf_pool(
    const std::vector<std::string>& items, double exponent = 1.2) {
  std::vector<std::pair<std::string, double>> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    out.push_back({items[i], 1.0 / std::pow(static_cast<double>(i + 1), exponent)});
  return out;
}

std::string random_ident(RandomSource& rng) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string s = "v";
  for (int i = 0; i < 5; ++i) s += alphabet[rng.next_index(36)];
  return s;
}

std::string random_string_lexeme(RandomSource& rng) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz";
  std::string s = "\"s";
  for (int i = 0; i < 4; ++i) s += alphabet[rng.next_index(26)];
  s += '"';
  return s;
}

}  // namespace

std::map<std::string, std::vector<std::pair<std::string, double>>>
global_lexeme_pools() {
  return {
      {"IDENT",
       zipf_pool({"x",     "y",     "i",    "n",    "data",  "result", "value",
                  "count", "total", "item", "key",  "val",   "obj",    "tmp",
                  "args",  "name",  "path", "idx",  "buf",   "out",    "err",
                  "msg",   "cfg",   "foo",  "bar",  "baz",   "num",    "str",
                  "flag",  "opt",   "env",  "ctx",  "acc",   "node",   "size",
                  "pos",   "state", "rate", "step", "score"})},
      {"NUMBER",
       zipf_pool({"0", "1", "2", "3", "10", "100", "42", "5", "7", "0.5",
                  "1000", "255", "16", "64", "8"})},
      {"STRING",
       zipf_pool({"\"a\"", "\"ok\"", "\"utf-8\"", "\"x\"", "\"on\"", "\"off\"",
                  "\"id\"", "\"name\"", "\"err\"", "\"debug\"", "\"out\"",
                  "\"none\"", "\"all\"", "\"key\"", "\"val\""})},
  };
}

Example synth_file(const Grammar& g, const CorpusConfig& cfg, long file_id) {
  RandomSource rng = RandomSource::for_stream(
      cfg.seed, static_cast<std::uint64_t>(file_id));

  // File-local pools make those leaves unpredictable across files.
  std::vector<std::pair<std::string, double>> local_idents, local_strings;
  for (int i = 0; i < 6; ++i) local_idents.push_back({random_ident(rng), 1.0});
  for (int i = 0; i < 4; ++i)
    local_strings.push_back({random_string_lexeme(rng), 1.0});

  auto mixed = [&](std::vector<std::pair<std::string, double>> global,
                   const std::vector<std::pair<std::string, double>>& local) {
    // Drawing from the p_local-weighted mixture is the per-leaf Bernoulli
    // choice between pools.
    double gtotal = 0.0;
    for (auto& [lex, w] : global) gtotal += w;
    std::vector<std::pair<std::string, double>> pool;
    if (cfg.p_local < 1.0)
      for (auto& [lex, w] : global)
        pool.push_back({lex, (1.0 - cfg.p_local) * w / gtotal});
    if (cfg.p_local > 0.0) {
      double ltotal = 0.0;
      for (const auto& [lex, w] : local) ltotal += w;
      for (const auto& [lex, w] : local)
        pool.push_back({lex, cfg.p_local * w / ltotal});
    }
    return pool;
  };

  auto globals = global_lexeme_pools();
  SampleConfig sample_cfg;
  sample_cfg.weights = default_production_weights(g, cfg.recursion_damping);
  sample_cfg.lexeme_pools["IDENT"] = mixed(globals["IDENT"], local_idents);
  sample_cfg.lexeme_pools["STRING"] = mixed(globals["STRING"], local_strings);
  sample_cfg.lexeme_pools["NUMBER"] = globals["NUMBER"];

  const int span = cfg.max_statements - cfg.min_statements;
  const int count =
      cfg.min_statements +
      (span > 0 ? static_cast<int>(rng.next_index(static_cast<std::size_t>(span + 1)))
                : 0);
  if (count < 1) throw DataError("statements_per_file must be >= 1");

  Example ex;
  ex.file_id = file_id;
  std::vector<std::string> preceding;
  for (int s = 0; s < count; ++s) {
    Derivation d = sample_derivation(g, sample_cfg, rng);
    if (s + 1 == count) {
      ex.target = std::move(d.tokens);
    } else {
      preceding.insert(preceding.end(), d.tokens.begin(), d.tokens.end());
    }
  }
  const std::size_t keep = std::min(cfg.context_len, preceding.size());
  ex.context.assign(preceding.end() - static_cast<std::ptrdiff_t>(keep),
                    preceding.end());
  return ex;
}

void gen_corpus(const Grammar& g, const CorpusConfig& cfg,
                const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<Example> examples(cfg.num_files);
  parallel_for(cfg.num_files, cfg.jobs, [&](std::size_t i) {
    examples[i] = synth_file(g, cfg, static_cast<long>(i));
  });

  std::vector<Example> train, valid, test;
  for (Example& ex : examples) {
    switch (ex.file_id % 10) {
      case 7: valid.push_back(std::move(ex)); break;
      case 8:
      case 9: test.push_back(std::move(ex)); break;
      default: train.push_back(std::move(ex));
    }
  }
  save_corpus(train, out_dir + "/train.jsonl");
  save_corpus(valid, out_dir + "/valid.jsonl");
  save_corpus(test, out_dir + "/test.jsonl");
}

void save_corpus(const std::vector<Example>& examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const Example& ex : examples) {
    json j{{"context", ex.context}, {"target", ex.target}, {"file_id", ex.file_id}};
    out << j.dump() << '\n';
  }
}

std::vector<Example> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      Example ex;
      ex.context = j.at("context").get<std::vector<std::string>>();
      ex.target = j.at("target").get<std::vector<std::string>>();
      ex.file_id = j.at("file_id").get<long>();
      if (ex.target.empty())
        throw DataError("empty target");
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::vector<std::string>> load_token_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      if (j.is_array()) {
        out.push_back(j.get<std::vector<std::string>>());
      } else if (j.contains("tokens")) {
        out.push_back(j["tokens"].get<std::vector<std::string>>());
      } else if (j.contains("target")) {
        out.push_back(j["target"].get<std::vector<std::string>>());
      } else {
        throw DataError("expected a token array");
      }
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::uint64_t split_hash(const std::vector<Example>& examples) {
  std::uint64_t h = kFnvBasis;
  for (const Example& ex : examples) {
    h = fnv1a(h, std::to_string(ex.file_id));
    for (const std::string& t : ex.target) h = fnv1a(h, t);
  }
  return h;
}

}  // namespace sketchgen

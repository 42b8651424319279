#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sketchgen/grammar.hpp"
#include "sketchgen/syntax.hpp"

namespace sketchgen {

struct CorpusConfig {
  std::size_t num_files = 1000;
  int min_statements = 2;
  int max_statements = 5;
  std::uint64_t seed = 1;
  double p_local = 0.3;       // chance an IDENT/STRING leaf draws file-locally
  std::size_t context_len = 200;
  unsigned jobs = 0;
  double recursion_damping = 0.3;  // weight factor per recursive rhs nonterminal
};

// Production weights that keep sampled statements finite-biased: each rhs
// nonterminal that can reach the production's lhs multiplies the weight by
// `damping`.
std::map<std::size_t, double> default_production_weights(const Grammar& g,
                                                         double damping);

// Global lexeme pools with Zipf-like weights (exponent 1.2) for the MiniLang
// token classes.
std::map<std::string, std::vector<std::pair<std::string, double>>>
global_lexeme_pools();

// One synthetic file: several sampled statements; the last statement is the
// example target and the preceding ones provide its context.
Example synth_file(const Grammar& g, const CorpusConfig& cfg, long file_id);

// Writes train/valid/test JSONL splits (70-10-20 by file_id) under out_dir.
// Deterministic under cfg.seed.
void gen_corpus(const Grammar& g, const CorpusConfig& cfg,
                const std::string& out_dir);

std::vector<Example> load_corpus(const std::string& path);
void save_corpus(const std::vector<Example>& examples, const std::string& path);

// JSONL of either bare token arrays or objects carrying "tokens"/"target";
// the `score` subcommand's input format.
std::vector<std::vector<std::string>> load_token_lines(const std::string& path);

// FNV-1a over file ids and target tokens; stamped into report headers so
// mismatched splits are detectable.
std::uint64_t split_hash(const std::vector<Example>& examples);

}  // namespace sketchgen

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sketchgen/random.hpp"

namespace sketchgen {

enum class SymbolKind { Terminal, Nonterminal };

// A grammar symbol. Terminal names are either literal lexemes ("=", "(") or
// token-class names (IDENT, NUMBER, STRING); which one is decided by the
// owning Grammar's token-class table.
struct Symbol {
  SymbolKind kind = SymbolKind::Terminal;
  std::string name;

  static Symbol terminal(std::string n) { return {SymbolKind::Terminal, std::move(n)}; }
  static Symbol nonterminal(std::string n) { return {SymbolKind::Nonterminal, std::move(n)}; }

  bool is_terminal() const { return kind == SymbolKind::Terminal; }
  bool is_nonterminal() const { return kind == SymbolKind::Nonterminal; }

  friend bool operator==(const Symbol& a, const Symbol& b) {
    return a.kind == b.kind && a.name == b.name;
  }
  friend auto operator<=>(const Symbol& a, const Symbol& b) = default;
};

struct Production {
  Symbol lhs;                // always a nonterminal
  std::vector<Symbol> rhs;   // never empty
};

struct TokenClass {
  std::string name;     // e.g. IDENT
  std::string pattern;  // POSIX-extended regular expression
};

class Grammar {
 public:
  std::vector<TokenClass> token_classes;  // declaration order
  std::string start;
  std::vector<Production> productions;    // file order

  bool is_token_class(const std::string& name) const {
    return class_index_.count(name) != 0;
  }
  bool is_nonterminal(const std::string& name) const {
    return nonterminals_.count(name) != 0;
  }
  const std::set<std::string>& nonterminals() const { return nonterminals_; }
  const std::set<std::string>& literal_terminals() const { return literals_; }

  // Indices into `productions` for one nonterminal, in file order.
  const std::vector<std::size_t>& productions_of(const std::string& nt) const;

  const std::string& class_pattern(const std::string& name) const;

  // Recomputes the nonterminal/literal sets and the per-lhs index after
  // `productions`/`token_classes` are edited. Throws DataError when a type
  // invariant is broken.
  void reindex();

 private:
  std::set<std::string> nonterminals_;
  std::set<std::string> literals_;
  std::map<std::string, std::size_t> class_index_;
  std::map<std::string, std::vector<std::size_t>> by_lhs_;
};

// Parses the line-oriented grammar file format:
//   # comment
//   token IDENT /[A-Za-z_][A-Za-z0-9_]*/
//   start Statement
//   Statement -> Assign | ExprStmt
//     | OtherAlt
// Terminals are "quoted" literals or declared class names; everything else
// capitalized is a nonterminal. Errors carry the offending line number.
// `warnings`, when given, receives non-fatal findings such as nonterminals
// unreachable from the start symbol.
Grammar parse_grammar(const std::string& text,
                      std::vector<std::string>* warnings = nullptr);

// Canonical one-production-per-line text form. parse(serialize(g)) == g and
// serialize is a fixpoint: serialize(parse(serialize(g))) is byte-identical.
std::string serialize_grammar(const Grammar& g);

// Inlines every non-start nonterminal that has exactly one production, to a
// fixpoint. The generated terminal language is unchanged. Throws DataError
// ("flattening cycle") when single-production nonterminals form a cycle.
Grammar flatten(const Grammar& g);

// One rewrite step of a leftmost derivation: either a production applied at
// a nonterminal position, or a token-class terminal realized as a lexeme.
struct DerivationStep {
  std::vector<Symbol> state;                 // sentential form before the step
  std::size_t position = 0;                  // index rewritten
  std::optional<std::size_t> production;     // set for nonterminal expansion
  std::optional<std::string> lexeme;         // set for class realization
};

struct Derivation {
  std::vector<std::string> tokens;         // concrete terminal lexemes
  std::vector<DerivationStep> trace;       // replays from [start] to tokens
};

struct SampleConfig {
  // production index -> weight; missing entries default to 1.0.
  std::map<std::size_t, double> weights;
  // token-class name -> weighted lexeme pool.
  std::map<std::string, std::vector<std::pair<std::string, double>>> lexeme_pools;
  int depth_cap = 24;
  int max_resamples = 50;
};

// Samples a random derivation from g's start symbol. Same seed, same output.
// Throws DataError("derivation too deep") after max_resamples failed tries.
Derivation sample_derivation(const Grammar& g, const SampleConfig& cfg,
                             RandomSource& rng);

}  // namespace sketchgen

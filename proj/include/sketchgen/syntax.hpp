#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sketchgen/grammar.hpp"

namespace sketchgen {

struct Token {
  std::string text;                        // lexeme as written
  std::optional<std::string> token_class;  // IDENT/NUMBER/... or nullopt for literals
  std::size_t offset = 0;                  // character index in the source

  bool is_literal() const { return !token_class.has_value(); }
};

// Maximal-munch lexer; literal terminals win ties against token classes.
// Whitespace separates tokens and is discarded. Throws DataError with the
// offending offset on unlexable input.
std::vector<Token> tokenize(const std::string& text, const Grammar& g);

struct ParseTree {
  Symbol symbol;
  std::vector<ParseTree> children;        // empty iff terminal leaf
  std::optional<Token> token;             // terminal leaves only
  std::optional<std::size_t> production;  // internal nodes: grammar rule used

  bool is_leaf() const { return children.empty(); }
};

std::vector<Token> leaves(const ParseTree& t);

// Earley parse covering all tokens, rooted at `root`. Ambiguity is resolved
// deterministically: productions are tried in file order and child spans
// shortest-first, so the lowest-indexed production wins at the earliest
// divergence. Throws DataError("unparseable at token <i>") on failure.
ParseTree parse(const std::vector<Token>& tokens, const Grammar& g,
                const std::string& root);

// True iff `root` derives the token sequence (recognition only, no tree).
bool recognizes(const std::vector<Token>& tokens, const Grammar& g,
                const std::string& root);

struct Example {
  std::vector<std::string> context;  // <= context_len terminal tokens
  std::vector<std::string> target;   // hole-free ground truth
  std::shared_ptr<ParseTree> target_tree;  // rooted at the statement nonterminal
  long file_id = -1;
};

// One Example per occurrence of `target_nt` in `tree`; context is the
// trailing <= context_len terminals preceding the occurrence.
std::vector<Example> extract_examples(const ParseTree& tree,
                                      const std::string& target_nt,
                                      std::size_t context_len = 200);

// Single-space detokenization, display only; metrics work on token arrays.
std::string detokenize(const std::vector<std::string>& tokens);

// Rebuilds Token records (class assignment) from bare token strings, for
// corpora that store token arrays rather than source text.
std::vector<Token> classify_tokens(const std::vector<std::string>& tokens,
                                   const Grammar& g);

}  // namespace sketchgen

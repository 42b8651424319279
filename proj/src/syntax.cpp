#include "sketchgen/syntax.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "sketchgen/error.hpp"

namespace sketchgen {

namespace {

const std::regex& cached_regex(const std::string& pattern) {
  thread_local std::unordered_map<std::string, std::regex> cache;
  auto it = cache.find(pattern);
  if (it == cache.end()) {
    try {
      it = cache.emplace(pattern, std::regex(pattern, std::regex::extended))
               .first;
    } catch (const std::regex_error& e) {
      throw DataError("bad token pattern /" + pattern + "/: " + e.what());
    }
  }
  return it->second;
}

}  // namespace

std::vector<Token> tokenize(const std::string& text, const Grammar& g) {
  std::vector<Token> out;
  const auto& literals = g.literal_terminals();
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) { ++i; continue; }

    std::size_t best_len = 0;
    bool best_is_literal = false;
    std::string best_class;
    for (const std::string& lit : literals) {
      if (lit.size() > best_len && text.compare(i, lit.size(), lit) == 0) {
        best_len = lit.size();
        best_is_literal = true;
      }
    }
    for (const TokenClass& cls : g.token_classes) {
      std::smatch m;
      std::string::const_iterator begin = text.begin() + static_cast<std::ptrdiff_t>(i);
      if (std::regex_search(begin, text.end(), m, cached_regex(cls.pattern),
                            std::regex_constants::match_continuous)) {
        std::size_t len = static_cast<std::size_t>(m[0].length());
        if (len > best_len) {  // literals win ties
          best_len = len;
          best_is_literal = false;
          best_class = cls.name;
        }
      }
    }
    if (best_len == 0)
      throw DataError("unlexable character at offset " + std::to_string(i));
    Token t;
    t.text = text.substr(i, best_len);
    if (!best_is_literal) t.token_class = best_class;
    t.offset = i;
    out.push_back(std::move(t));
    i += best_len;
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<Token> classify_tokens(const std::vector<std::string>& tokens,
                                   const Grammar& g) {
  std::vector<Token> out;
  out.reserve(tokens.size());
  std::size_t offset = 0;
  for (const std::string& text : tokens) {
    Token t;
    t.text = text;
    t.offset = offset;
    offset += text.size() + 1;
    if (!g.literal_terminals().count(text)) {
      for (const TokenClass& cls : g.token_classes) {
        std::smatch m;
        if (std::regex_match(text, m, cached_regex(cls.pattern))) {
          t.token_class = cls.name;
          break;
        }
      }
      if (!t.token_class)
        throw DataError("token '" + text + "' fits no literal or class");
    }
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

bool terminal_matches(const Grammar& g, const Symbol& sym, const Token& tok) {
  if (g.is_token_class(sym.name))
    return tok.token_class && *tok.token_class == sym.name;
  return tok.is_literal() && tok.text == sym.name;
}

struct EarleyChart {
  // (nonterminal, start) -> sorted span ends
  std::map<std::pair<std::string, std::size_t>, std::set<std::size_t>> completed;
  std::size_t frontier = 0;  // furthest token index any item reached
  bool accepted = false;
};

EarleyChart run_earley(const std::vector<Token>& tokens, const Grammar& g,
                       const std::string& root) {
  if (!g.is_nonterminal(root))
    throw DataError("parse root " + root + " is not a nonterminal");

  struct Item {
    std::size_t prod, dot, origin;
  };
  const std::size_t n = tokens.size();
  std::vector<std::vector<Item>> sets(n + 1);
  std::vector<std::unordered_set<std::uint64_t>> seen(n + 1);
  // waiting[pos]: nonterminal name -> indices of items in sets[pos] whose dot
  // sits before that nonterminal, so completion touches only its consumers.
  std::vector<std::map<std::string, std::vector<std::size_t>>> waiting(n + 1);
  EarleyChart chart;

  auto add = [&](std::size_t at, Item it) {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(it.prod) << 40) |
        (static_cast<std::uint64_t>(it.dot) << 32) |
        static_cast<std::uint64_t>(it.origin);
    if (!seen[at].insert(key).second) return;
    const Production& p = g.productions[it.prod];
    if (it.dot < p.rhs.size() && p.rhs[it.dot].is_nonterminal())
      waiting[at][p.rhs[it.dot].name].push_back(sets[at].size());
    sets[at].push_back(it);
  };
  for (std::size_t pi : g.productions_of(root)) add(0, {pi, 0, 0});

  for (std::size_t pos = 0; pos <= n; ++pos) {
    for (std::size_t idx = 0; idx < sets[pos].size(); ++idx) {
      Item it = sets[pos][idx];
      const Production& p = g.productions[it.prod];
      if (it.dot == p.rhs.size()) {
        // Completion: advance exactly the items waiting on this nonterminal.
        chart.completed[{p.lhs.name, it.origin}].insert(pos);
        auto waiters = waiting[it.origin].find(p.lhs.name);
        if (waiters != waiting[it.origin].end()) {
          // Indices grow while iterating; new waiters at the same position
          // cannot occur (epsilon-free), but stay index-based regardless.
          for (std::size_t wi = 0; wi < waiters->second.size(); ++wi) {
            Item parent = sets[it.origin][waiters->second[wi]];
            add(pos, {parent.prod, parent.dot + 1, parent.origin});
          }
        }
        continue;
      }
      const Symbol& next = p.rhs[it.dot];
      if (next.is_nonterminal()) {
        // Prediction
        for (std::size_t pi : g.productions_of(next.name))
          add(pos, {pi, 0, pos});
      } else if (pos < n && terminal_matches(g, next, tokens[pos])) {
        // Scan
        add(pos + 1, {it.prod, it.dot + 1, it.origin});
      }
    }
    if (!sets[pos].empty()) chart.frontier = pos;
  }
  auto it = chart.completed.find({root, 0});
  chart.accepted = it != chart.completed.end() && it->second.count(n);
  return chart;
}

// Deterministic tree extraction over the recognition chart. Productions are
// tried in file order; nonterminal child spans shortest-first. Results are
// memoized per (nonterminal, span); failures observed while a unary cycle
// guard was active are path-dependent and stay uncached.
struct TreeBuilder {
  const std::vector<Token>& tokens;
  const Grammar& g;
  const EarleyChart& chart;
  using Key = std::tuple<std::string, std::size_t, std::size_t>;
  std::set<Key> in_progress;
  std::map<Key, std::optional<ParseTree>> memo;

  std::optional<ParseTree> build(const std::string& nt, std::size_t begin,
                                 std::size_t end, bool& guard_hit) {
    Key key{nt, begin, end};
    auto cached = memo.find(key);
    if (cached != memo.end()) return cached->second;
    if (in_progress.count(key)) {  // unary derivation cycle
      guard_hit = true;
      return std::nullopt;
    }
    in_progress.insert(key);
    bool local_guard = false;
    std::optional<ParseTree> result;
    for (std::size_t pi : g.productions_of(nt)) {
      std::vector<ParseTree> children;
      if (match_rhs(g.productions[pi].rhs, 0, begin, end, children,
                    local_guard)) {
        ParseTree t;
        t.symbol = Symbol::nonterminal(nt);
        t.production = pi;
        t.children = std::move(children);
        result = std::move(t);
        break;
      }
    }
    in_progress.erase(key);
    if (result || !local_guard) memo.emplace(std::move(key), result);
    if (local_guard) guard_hit = true;
    return result;
  }

  bool match_rhs(const std::vector<Symbol>& rhs, std::size_t k,
                 std::size_t pos, std::size_t end,
                 std::vector<ParseTree>& children, bool& guard_hit) {
    if (k == rhs.size()) return pos == end;
    const Symbol& sym = rhs[k];
    if (sym.is_terminal()) {
      if (pos >= end || !terminal_matches(g, sym, tokens[pos])) return false;
      ParseTree leaf;
      leaf.symbol = sym;
      leaf.token = tokens[pos];
      children.push_back(std::move(leaf));
      if (match_rhs(rhs, k + 1, pos + 1, end, children, guard_hit)) return true;
      children.pop_back();
      return false;
    }
    auto spans = chart.completed.find({sym.name, pos});
    if (spans == chart.completed.end()) return false;
    const bool is_last = k + 1 == rhs.size();
    for (std::size_t child_end : spans->second) {  // ascending: shortest first
      if (child_end > end) break;
      if (is_last && child_end != end) continue;  // must land exactly on end
      std::optional<ParseTree> sub = build(sym.name, pos, child_end, guard_hit);
      if (!sub) continue;
      children.push_back(std::move(*sub));
      if (match_rhs(rhs, k + 1, child_end, end, children, guard_hit))
        return true;
      children.pop_back();
    }
    return false;
  }
};

}  // namespace

bool recognizes(const std::vector<Token>& tokens, const Grammar& g,
                const std::string& root) {
  return run_earley(tokens, g, root).accepted;
}

ParseTree parse(const std::vector<Token>& tokens, const Grammar& g,
                const std::string& root) {
  EarleyChart chart = run_earley(tokens, g, root);
  if (!chart.accepted) {
    std::size_t failing = std::min(chart.frontier, tokens.size() == 0
                                                       ? std::size_t{0}
                                                       : tokens.size() - 1);
    throw DataError("unparseable at token " + std::to_string(failing));
  }
  TreeBuilder builder{tokens, g, chart, {}, {}};
  bool guard_hit = false;
  std::optional<ParseTree> tree = builder.build(root, 0, tokens.size(), guard_hit);
  if (!tree) throw InternalError("chart accepted but tree extraction failed");
  return std::move(*tree);
}

std::vector<Token> leaves(const ParseTree& t) {
  std::vector<Token> out;
  auto walk = [&](auto&& self, const ParseTree& node) -> void {
    if (node.is_leaf()) {
      if (node.token) out.push_back(*node.token);
      return;
    }
    for (const ParseTree& c : node.children) self(self, c);
  };
  walk(walk, t);
  return out;
}

std::vector<Example> extract_examples(const ParseTree& tree,
                                      const std::string& target_nt,
                                      std::size_t context_len) {
  std::vector<Example> out;
  std::vector<std::string> emitted;
  auto walk = [&](auto&& self, const ParseTree& node) -> void {
    if (node.symbol.is_nonterminal() && node.symbol.name == target_nt) {
      Example ex;
      std::size_t begin =
          emitted.size() > context_len ? emitted.size() - context_len : 0;
      ex.context.assign(emitted.begin() + static_cast<std::ptrdiff_t>(begin),
                        emitted.end());
      for (const Token& t : leaves(node)) ex.target.push_back(t.text);
      ex.target_tree = std::make_shared<ParseTree>(node);
      out.push_back(std::move(ex));
    }
    if (node.is_leaf()) {
      if (node.token) emitted.push_back(node.token->text);
      return;
    }
    for (const ParseTree& c : node.children) self(self, c);
  };
  walk(walk, tree);
  return out;
}

}  // namespace sketchgen

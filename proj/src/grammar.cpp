#include "sketchgen/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <sstream>

#include "sketchgen/error.hpp"

namespace sketchgen {

namespace {

bool valid_nonterminal_name(const std::string& s) {
  if (s.empty() || !std::isupper(static_cast<unsigned char>(s[0]))) return false;
  for (char c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  }
  return true;
}

[[noreturn]] void fail(std::size_t line_no, const std::string& msg) {
  throw DataError("grammar line " + std::to_string(line_no) + ": " + msg);
}

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Splits a production right-hand side into whitespace-separated symbols,
// honoring quoted literals (no escapes inside literals).
std::vector<std::string> split_symbols(const std::string& s, std::size_t line_no) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[i]))) { ++i; continue; }
    if (s[i] == '"') {
      std::size_t close = s.find('"', i + 1);
      if (close == std::string::npos) fail(line_no, "unterminated literal");
      if (close == i + 1) fail(line_no, "empty literal");
      out.push_back(s.substr(i, close - i + 1));
      i = close + 1;
    } else {
      std::size_t j = i;
      while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])) &&
             s[j] != '"')
        ++j;
      out.push_back(s.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

}  // namespace

const std::vector<std::size_t>& Grammar::productions_of(const std::string& nt) const {
  auto it = by_lhs_.find(nt);
  if (it == by_lhs_.end())
    throw InternalError("productions_of: unknown nonterminal " + nt);
  return it->second;
}

const std::string& Grammar::class_pattern(const std::string& name) const {
  auto it = class_index_.find(name);
  if (it == class_index_.end())
    throw InternalError("class_pattern: unknown class " + name);
  return token_classes[it->second].pattern;
}

void Grammar::reindex() {
  nonterminals_.clear();
  literals_.clear();
  class_index_.clear();
  by_lhs_.clear();
  for (std::size_t i = 0; i < token_classes.size(); ++i) {
    if (!class_index_.emplace(token_classes[i].name, i).second)
      throw DataError("duplicate token class " + token_classes[i].name);
  }
  for (std::size_t i = 0; i < productions.size(); ++i) {
    const Production& p = productions[i];
    if (p.rhs.empty()) throw DataError("empty production for " + p.lhs.name);
    if (!p.lhs.is_nonterminal())
      throw DataError("production lhs must be a nonterminal");
    nonterminals_.insert(p.lhs.name);
    by_lhs_[p.lhs.name].push_back(i);
  }
  for (const Production& p : productions) {
    for (const Symbol& s : p.rhs) {
      if (s.is_nonterminal()) {
        if (!nonterminals_.count(s.name))
          throw DataError("undefined nonterminal " + s.name);
      } else if (!class_index_.count(s.name)) {
        literals_.insert(s.name);
      }
    }
  }
  if (start.empty()) throw DataError("missing start symbol");
  if (!nonterminals_.count(start))
    throw DataError("start symbol " + start + " has no productions");
}

Grammar parse_grammar(const std::string& text, std::vector<std::string>* warnings) {
  Grammar g;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::string current_lhs;  // carries over for '|' continuation lines
  bool saw_start = false;

  auto parse_rhs_symbol = [&](const std::string& tok,
                              std::size_t ln) -> Symbol {
    if (tok.front() == '"') {
      return Symbol::terminal(tok.substr(1, tok.size() - 2));
    }
    if (!valid_nonterminal_name(tok)) fail(ln, "bad symbol '" + tok + "'");
    bool is_class = std::any_of(
        g.token_classes.begin(), g.token_classes.end(),
        [&](const TokenClass& c) { return c.name == tok; });
    return is_class ? Symbol::terminal(tok) : Symbol::nonterminal(tok);
  };

  auto parse_alternatives = [&](const std::string& lhs, const std::string& body,
                                std::size_t ln) {
    std::size_t begin = 0;
    while (true) {
      std::size_t bar = body.find('|', begin);
      std::string alt = strip(body.substr(
          begin, bar == std::string::npos ? std::string::npos : bar - begin));
      if (alt.empty()) fail(ln, "empty alternative");
      Production p;
      p.lhs = Symbol::nonterminal(lhs);
      for (const std::string& tok : split_symbols(alt, ln))
        p.rhs.push_back(parse_rhs_symbol(tok, ln));
      if (p.rhs.empty()) fail(ln, "empty alternative");
      g.productions.push_back(std::move(p));
      if (bar == std::string::npos) break;
      begin = bar + 1;
    }
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip(raw);
    if (line.empty() || line[0] == '#') continue;

    if (line[0] == '|') {
      if (current_lhs.empty()) fail(line_no, "continuation with no production");
      parse_alternatives(current_lhs, line.substr(1), line_no);
      continue;
    }
    if (line.rfind("token ", 0) == 0) {
      std::string rest = strip(line.substr(6));
      std::size_t sp = rest.find_first_of(" \t");
      if (sp == std::string::npos) fail(line_no, "token needs a /pattern/");
      std::string name = rest.substr(0, sp);
      std::string pat = strip(rest.substr(sp));
      if (!valid_nonterminal_name(name)) fail(line_no, "bad class name " + name);
      if (pat.size() < 2 || pat.front() != '/' || pat.back() != '/')
        fail(line_no, "pattern must be /.../");
      for (const TokenClass& c : g.token_classes)
        if (c.name == name) fail(line_no, "duplicate token class " + name);
      g.token_classes.push_back({name, pat.substr(1, pat.size() - 2)});
      current_lhs.clear();
      continue;
    }
    if (line.rfind("start ", 0) == 0) {
      if (saw_start) fail(line_no, "start declared twice");
      g.start = strip(line.substr(6));
      if (!valid_nonterminal_name(g.start)) fail(line_no, "bad start symbol");
      saw_start = true;
      current_lhs.clear();
      continue;
    }
    std::size_t arrow = line.find("->");
    if (arrow == std::string::npos) fail(line_no, "expected '->'");
    std::string lhs = strip(line.substr(0, arrow));
    if (!valid_nonterminal_name(lhs)) fail(line_no, "bad lhs '" + lhs + "'");
    for (const TokenClass& c : g.token_classes)
      if (c.name == lhs) fail(line_no, lhs + " is a token class, not a nonterminal");
    current_lhs = lhs;
    parse_alternatives(lhs, line.substr(arrow + 2), line_no);
  }
  if (!saw_start) throw DataError("grammar: no start declaration");

  try {
    g.reindex();
  } catch (const DataError& e) {
    throw DataError(std::string("grammar: ") + e.what());
  }

  if (warnings) {
    // Reachability from start; unreachable parts are suspicious but legal.
    std::set<std::string> seen{g.start};
    std::deque<std::string> queue{g.start};
    while (!queue.empty()) {
      std::string nt = queue.front();
      queue.pop_front();
      for (std::size_t pi : g.productions_of(nt))
        for (const Symbol& s : g.productions[pi].rhs)
          if (s.is_nonterminal() && seen.insert(s.name).second)
            queue.push_back(s.name);
    }
    for (const std::string& nt : g.nonterminals())
      if (!seen.count(nt))
        warnings->push_back("nonterminal " + nt + " unreachable from " + g.start);
  }
  return g;
}

std::string serialize_grammar(const Grammar& g) {
  std::ostringstream out;
  for (const TokenClass& c : g.token_classes)
    out << "token " << c.name << " /" << c.pattern << "/\n";
  out << "start " << g.start << "\n";
  for (const Production& p : g.productions) {
    out << p.lhs.name << " ->";
    for (const Symbol& s : p.rhs) {
      if (s.is_nonterminal() || g.is_token_class(s.name))
        out << ' ' << s.name;
      else
        out << " \"" << s.name << "\"";
    }
    out << "\n";
  }
  return out.str();
}

Grammar flatten(const Grammar& g) {
  Grammar out = g;
  while (true) {
    // Nonterminals (other than start) with exactly one production.
    std::map<std::string, std::size_t> single;  // name -> production index
    for (const std::string& nt : out.nonterminals()) {
      if (nt == out.start) continue;
      const auto& prods = out.productions_of(nt);
      if (prods.size() == 1) single.emplace(nt, prods[0]);
    }
    if (single.empty()) break;

    // A candidate is inlinable when its rhs cannot reach itself through
    // single-production nonterminals; otherwise inlining would not terminate.
    auto reaches_self = [&](const std::string& root) {
      std::set<std::string> seen;
      std::deque<std::string> queue;
      for (const Symbol& s : out.productions[single.at(root)].rhs)
        if (s.is_nonterminal()) queue.push_back(s.name);
      while (!queue.empty()) {
        std::string nt = queue.front();
        queue.pop_front();
        if (nt == root) return true;
        if (!seen.insert(nt).second) continue;
        auto it = single.find(nt);
        if (it == single.end()) continue;
        for (const Symbol& s : out.productions[it->second].rhs)
          if (s.is_nonterminal()) queue.push_back(s.name);
      }
      return false;
    };

    std::string victim;
    for (const auto& [nt, pi] : single) {
      (void)pi;
      if (!reaches_self(nt)) { victim = nt; break; }
    }
    if (victim.empty()) throw DataError("flattening cycle");

    const std::vector<Symbol> replacement = out.productions[single.at(victim)].rhs;
    std::vector<Production> next;
    next.reserve(out.productions.size());
    for (std::size_t i = 0; i < out.productions.size(); ++i) {
      if (i == single.at(victim)) continue;
      Production p = out.productions[i];
      std::vector<Symbol> rhs;
      for (const Symbol& s : p.rhs) {
        if (s.is_nonterminal() && s.name == victim)
          rhs.insert(rhs.end(), replacement.begin(), replacement.end());
        else
          rhs.push_back(s);
      }
      p.rhs = std::move(rhs);
      next.push_back(std::move(p));
    }
    out.productions = std::move(next);
    out.reindex();
  }
  return out;
}

namespace {

struct DepthExceeded {};

// Node of a sampled derivation tree; linearized into a leftmost trace after
// sampling succeeds.
struct SampledNode {
  Symbol symbol;
  std::optional<std::size_t> production;  // nonterminal nodes
  std::optional<std::string> lexeme;      // class-terminal nodes
  std::vector<SampledNode> children;
};

SampledNode sample_node(const Grammar& g, const SampleConfig& cfg,
                        RandomSource& rng, const Symbol& sym, int depth) {
  if (depth > cfg.depth_cap) throw DepthExceeded{};
  SampledNode node;
  node.symbol = sym;
  if (sym.is_terminal()) {
    if (g.is_token_class(sym.name)) {
      auto it = cfg.lexeme_pools.find(sym.name);
      if (it == cfg.lexeme_pools.end() || it->second.empty())
        throw DataError("no lexeme pool for class " + sym.name);
      std::vector<double> w;
      w.reserve(it->second.size());
      for (const auto& [lex, weight] : it->second) w.push_back(weight);
      node.lexeme = it->second[rng.weighted_index(w)].first;
    }
    return node;
  }
  const std::vector<std::size_t>& prods = g.productions_of(sym.name);
  std::vector<double> w;
  w.reserve(prods.size());
  for (std::size_t pi : prods) {
    auto it = cfg.weights.find(pi);
    double weight = it == cfg.weights.end() ? 1.0 : it->second;
    if (!(weight > 0.0)) throw DataError("non-positive production weight");
    w.push_back(weight);
  }
  std::size_t pick = prods[rng.weighted_index(w)];
  node.production = pick;
  for (const Symbol& child : g.productions[pick].rhs)
    node.children.push_back(sample_node(g, cfg, rng, child, depth + 1));
  return node;
}

void collect_tokens(const SampledNode& n, std::vector<std::string>& out) {
  if (n.symbol.is_terminal()) {
    out.push_back(n.lexeme ? *n.lexeme : n.symbol.name);
    return;
  }
  for (const SampledNode& c : n.children) collect_tokens(c, out);
}

// Leftmost linearization: repeatedly rewrite the leftmost pending node.
void linearize(const Grammar& g, const SampledNode& root, Derivation& out) {
  struct Pending {
    const SampledNode* node;
  };
  // Current sentential form as (symbol, node) pairs; terminals that are not
  // classes carry node == nullptr (nothing left to rewrite).
  std::vector<std::pair<Symbol, const SampledNode*>> state;
  auto needs_rewrite = [&](const std::pair<Symbol, const SampledNode*>& e) {
    return e.second != nullptr;
  };
  state.push_back({root.symbol, &root});
  while (true) {
    std::size_t pos = 0;
    bool found = false;
    for (; pos < state.size(); ++pos)
      if (needs_rewrite(state[pos])) { found = true; break; }
    if (!found) break;

    DerivationStep step;
    step.state.reserve(state.size());
    for (const auto& [sym, node] : state) step.state.push_back(sym);
    step.position = pos;
    const SampledNode* node = state[pos].second;
    std::vector<std::pair<Symbol, const SampledNode*>> repl;
    if (node->symbol.is_nonterminal()) {
      step.production = node->production;
      for (const SampledNode& c : node->children) {
        if (c.symbol.is_terminal() && !g.is_token_class(c.symbol.name))
          repl.push_back({c.symbol, nullptr});
        else
          repl.push_back({c.symbol, &c});
      }
    } else {
      step.lexeme = node->lexeme;
      repl.push_back({Symbol::terminal(*node->lexeme), nullptr});
    }
    state.erase(state.begin() + static_cast<std::ptrdiff_t>(pos));
    state.insert(state.begin() + static_cast<std::ptrdiff_t>(pos), repl.begin(),
                 repl.end());
    out.trace.push_back(std::move(step));
  }
}

}  // namespace

Derivation sample_derivation(const Grammar& g, const SampleConfig& cfg,
                             RandomSource& rng) {
  for (int attempt = 0; attempt <= cfg.max_resamples; ++attempt) {
    try {
      SampledNode root =
          sample_node(g, cfg, rng, Symbol::nonterminal(g.start), 0);
      Derivation d;
      collect_tokens(root, d.tokens);
      linearize(g, root, d);
      return d;
    } catch (const DepthExceeded&) {
      continue;
    }
  }
  throw DataError("derivation too deep");
}

}  // namespace sketchgen

// Test-only brute-force oracles, kept independent of the library's
// implementation paths they are used to check.
#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sketchgen/engine.hpp"
#include "sketchgen/grammar.hpp"
#include "sketchgen/metrics.hpp"

namespace oracles {

// All terminal strings of length <= max_len derivable from g's start symbol,
// by breadth-first expansion of sentential forms (leftmost nonterminal).
// Token-class terminals are treated as atomic alphabet symbols.
inline std::set<std::vector<std::string>> enumerate_language(
    const sketchgen::Grammar& g, std::size_t max_len) {
  using sketchgen::Symbol;
  std::set<std::vector<std::string>> out;
  std::deque<std::vector<Symbol>> queue;
  std::set<std::vector<std::pair<int, std::string>>> seen;

  auto key_of = [](const std::vector<Symbol>& form) {
    std::vector<std::pair<int, std::string>> key;
    key.reserve(form.size());
    for (const Symbol& s : form)
      key.push_back({s.is_nonterminal() ? 1 : 0, s.name});
    return key;
  };

  queue.push_back({Symbol::nonterminal(g.start)});
  seen.insert(key_of(queue.back()));
  while (!queue.empty()) {
    std::vector<Symbol> form = queue.front();
    queue.pop_front();
    // Length never shrinks (no epsilon productions), so prune early.
    if (form.size() > max_len) continue;
    std::size_t nt = form.size();
    for (std::size_t i = 0; i < form.size(); ++i)
      if (form[i].is_nonterminal()) { nt = i; break; }
    if (nt == form.size()) {
      std::vector<std::string> tokens;
      tokens.reserve(form.size());
      for (const Symbol& s : form) tokens.push_back(s.name);
      out.insert(std::move(tokens));
      continue;
    }
    for (std::size_t pi : g.productions_of(form[nt].name)) {
      std::vector<Symbol> next;
      next.reserve(form.size() + g.productions[pi].rhs.size());
      next.insert(next.end(), form.begin(),
                  form.begin() + static_cast<std::ptrdiff_t>(nt));
      next.insert(next.end(), g.productions[pi].rhs.begin(),
                  g.productions[pi].rhs.end());
      next.insert(next.end(),
                  form.begin() + static_cast<std::ptrdiff_t>(nt) + 1,
                  form.end());
      if (next.size() <= max_len && seen.insert(key_of(next)).second)
        queue.push_back(std::move(next));
    }
  }
  return out;
}

// Hole-segmentation enumeration: tries every way of carving >=1 tokens per
// hole out of gt, recursively.
inline bool naive_matches(const std::vector<sketchgen::SketchItem>& items,
                          std::size_t ii, const std::vector<std::string>& gt,
                          std::size_t jj) {
  if (ii == items.size()) return jj == gt.size();
  if (items[ii].hole) {
    for (std::size_t take = 1; jj + take <= gt.size(); ++take)
      if (naive_matches(items, ii + 1, gt, jj + take)) return true;
    return false;
  }
  if (jj >= gt.size() || gt[jj] != items[ii].token) return false;
  return naive_matches(items, ii + 1, gt, jj + 1);
}

inline int naive_matches(const sketchgen::Sketch& s,
                         const std::vector<std::string>& gt) {
  return naive_matches(s.items, 0, gt, 0) ? 1 : 0;
}

// Straight-line n-gram overlap F1, written independently of the library's
// multiset-based version.
inline double naive_rouge_n(const std::vector<std::string>& a,
                            const std::vector<std::string>& b, std::size_t n) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  auto grams = [n](const std::vector<std::string>& seq) {
    std::vector<std::vector<std::string>> out;
    for (std::size_t i = 0; i + n <= seq.size(); ++i)
      out.push_back({seq.begin() + static_cast<std::ptrdiff_t>(i),
                     seq.begin() + static_cast<std::ptrdiff_t>(i + n)});
    return out;
  };
  auto ga = grams(a);
  auto gb = grams(b);
  if (ga.empty() && gb.empty()) return 1.0;
  if (ga.empty() || gb.empty()) return 0.0;
  std::vector<bool> used(gb.size(), false);
  double overlap = 0.0;
  for (const auto& gram : ga) {
    for (std::size_t j = 0; j < gb.size(); ++j) {
      if (!used[j] && gb[j] == gram) {
        used[j] = true;
        overlap += 1.0;
        break;
      }
    }
  }
  const double p = overlap / static_cast<double>(ga.size());
  const double r = overlap / static_cast<double>(gb.size());
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// Exponential-time LCS by recursion with memo on (i, j).
inline std::size_t naive_lcs(const std::vector<std::string>& a,
                             const std::vector<std::string>& b, std::size_t i,
                             std::size_t j,
                             std::map<std::pair<std::size_t, std::size_t>,
                                      std::size_t>& memo) {
  if (i == a.size() || j == b.size()) return 0;
  auto it = memo.find({i, j});
  if (it != memo.end()) return it->second;
  std::size_t best;
  if (a[i] == b[j]) {
    best = 1 + naive_lcs(a, b, i + 1, j + 1, memo);
  } else {
    best = std::max(naive_lcs(a, b, i + 1, j, memo),
                    naive_lcs(a, b, i, j + 1, memo));
  }
  memo[{i, j}] = best;
  return best;
}

inline double naive_rouge_l(const std::vector<std::string>& a,
                            const std::vector<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  const double l = static_cast<double>(naive_lcs(a, b, 0, 0, memo));
  const double p = l / static_cast<double>(a.size());
  const double r = l / static_cast<double>(b.size());
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// Every leaf of the decision tree explored by the generative loop: at each
// state, all selector options; expanding options fan out over the whole
// expansion inventory. Mirrors what a beam of unbounded width must return.
struct EnumeratedOutcome {
  sketchgen::Sketch sketch;
  double logprob = 0.0;
  std::size_t steps = 0;
};

inline void enumerate_outcomes(const sketchgen::Policy& policy,
                               const sketchgen::SketchState& x, double logprob,
                               std::size_t steps, std::size_t max_steps,
                               std::vector<EnumeratedOutcome>& out) {
  if (steps == max_steps) {
    out.push_back({sketchgen::nonterminals_to_holes(x), logprob, steps});
    return;
  }
  sketchgen::SelectorDistribution dist = policy.select(x);
  for (std::size_t oi = 0; oi < dist.options.size(); ++oi) {
    const double lp = logprob + std::log(dist.probs[oi]);
    if (dist.options[oi].stop) {
      out.push_back({sketchgen::nonterminals_to_holes(x), lp, steps + 1});
      continue;
    }
    const std::size_t pos = dist.options[oi].pos;
    sketchgen::ExpansionDistribution edist = policy.expand(x, pos);
    for (const sketchgen::ExpansionCandidate& cand : edist.items) {
      sketchgen::SketchState next;
      next.left_context = x.left_context;
      next.step = x.step + 1;
      next.items.assign(x.items.begin(),
                        x.items.begin() + static_cast<std::ptrdiff_t>(pos));
      next.items.insert(next.items.end(), cand.expansion.begin(),
                        cand.expansion.end());
      next.items.insert(next.items.end(),
                        x.items.begin() + static_cast<std::ptrdiff_t>(pos) + 1,
                        x.items.end());
      enumerate_outcomes(policy, next, lp + std::log(cand.prob), steps + 1,
                         max_steps, out);
    }
  }
}

// Central finite difference of log P_s(chosen | x) in every weight.
inline std::vector<double> fd_selector_grad(sketchgen::SelectorModel m,
                                            const sketchgen::SketchState& x,
                                            const sketchgen::SelectorOption& chosen,
                                            const sketchgen::ExpansionModel& exp,
                                            double h = 1e-5) {
  auto log_prob = [&](const sketchgen::SelectorModel& model) {
    sketchgen::SelectorDistribution d = selector_dist(model, x, exp);
    for (std::size_t i = 0; i < d.options.size(); ++i)
      if (d.options[i] == chosen) return std::log(d.probs[i]);
    throw sketchgen::InternalError("fd: choice not in support");
  };
  std::vector<double> grad(m.weights.size(), 0.0);
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    const double saved = m.weights[k];
    m.weights[k] = saved + h;
    const double up = log_prob(m);
    m.weights[k] = saved - h;
    const double down = log_prob(m);
    m.weights[k] = saved;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace oracles

#include "sketchgen/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sketchgen/error.hpp"

namespace sketchgen {

using nlohmann::json;

namespace {

constexpr char kSep = '\x1f';
const std::string kRareMark = "\x01~";
const std::string kLeftEdge = "\x02^";
const std::string kRightEdge = "\x02$";

constexpr double kDistTolerance = 1e-9;

void check_normalized(double total, const char* where) {
#ifndef NDEBUG
  if (std::abs(total - 1.0) > kDistTolerance)
    throw InternalError(std::string(where) + ": distribution sums to " +
                        std::to_string(total));
#else
  (void)total;
  (void)where;
#endif
}

}  // namespace

std::string encode_item(const StateItem& item) {
  switch (item.kind) {
    case StateItem::Kind::Token: return "T" + item.text;
    case StateItem::Kind::Nonterm: return "N" + item.text;
    case StateItem::Kind::LeafClass: return "C" + item.text;
  }
  throw InternalError("encode_item: bad kind");
}

std::string encode_expansion(const Expansion& e) {
  std::string out;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (i) out += kSep;
    out += encode_item(e[i]);
  }
  return out;
}

Expansion decode_expansion(const std::string& key) {
  Expansion out;
  std::size_t begin = 0;
  while (begin <= key.size()) {
    std::size_t end = key.find(kSep, begin);
    std::string part = key.substr(
        begin, end == std::string::npos ? std::string::npos : end - begin);
    if (part.empty()) throw DataError("corrupt expansion key");
    StateItem item;
    switch (part[0]) {
      case 'T': item = StateItem::token(part.substr(1)); break;
      case 'N': item = StateItem::nonterm(part.substr(1)); break;
      case 'C': item = StateItem::leaf_class(part.substr(1)); break;
      default: throw DataError("corrupt expansion key");
    }
    out.push_back(std::move(item));
    if (end == std::string::npos) break;
    begin = end + 1;
  }
  return out;
}

std::vector<std::size_t> SketchState::expandable_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].expandable()) out.push_back(i);
  return out;
}

Expansion expansion_from_rhs(const Grammar& g, const std::vector<Symbol>& rhs) {
  Expansion out;
  out.reserve(rhs.size());
  for (const Symbol& s : rhs) {
    if (s.is_nonterminal())
      out.push_back(StateItem::nonterm(s.name));
    else if (g.is_token_class(s.name))
      out.push_back(StateItem::leaf_class(s.name));
    else
      out.push_back(StateItem::token(s.name));
  }
  return out;
}

// --- ExpansionDistribution ---------------------------------------------------

double ExpansionDistribution::total() const {
  double t = unknown_mass;
  for (const ExpansionCandidate& c : items) t += c.prob;
  return t;
}

double ExpansionDistribution::entropy() const {
  double h = 0.0;
  for (const ExpansionCandidate& c : items)
    if (c.prob > 0.0) h -= c.prob * std::log(c.prob);
  if (unknown_mass > 0.0) h -= unknown_mass * std::log(unknown_mass);
  return h;
}

double ExpansionDistribution::log_prob(const Expansion& e) const {
  for (const ExpansionCandidate& c : items)
    if (c.expansion == e) return std::log(c.prob);
  if (unknown_mass > 0.0) return std::log(unknown_mass);
  throw InternalError("log_prob: expansion outside support");
}

std::size_t ExpansionDistribution::sample(RandomSource& rng) const {
  // Generation draws over the enumerable candidates only; the unknown
  // remainder is not realizable as tokens.
  std::vector<double> w;
  w.reserve(items.size());
  for (const ExpansionCandidate& c : items) w.push_back(c.prob);
  return rng.weighted_index(w);
}

// --- ExpansionModel ----------------------------------------------------------

namespace {

std::string fold_token(const std::set<std::string>& vocab, const std::string& t) {
  return vocab.count(t) ? t : kRareMark;
}

// Nearest `want` terminal lexemes strictly left of pos, nearest first,
// falling back to the left context and then to the edge marker.
std::vector<std::string> left_terminals(const SketchState& x, std::size_t pos,
                                        std::size_t want) {
  std::vector<std::string> out;
  for (std::size_t i = pos; i-- > 0 && out.size() < want;)
    if (x.items[i].kind == StateItem::Kind::Token) out.push_back(x.items[i].text);
  for (std::size_t i = x.left_context.size(); i-- > 0 && out.size() < want;)
    out.push_back(x.left_context[i]);
  while (out.size() < want) out.push_back(kLeftEdge);
  return out;
}

std::string right_terminal(const SketchState& x, std::size_t pos) {
  for (std::size_t i = pos + 1; i < x.items.size(); ++i)
    if (x.items[i].kind == StateItem::Kind::Token) return x.items[i].text;
  return kRightEdge;
}

// Interpolated absolute discounting: probability mass min(count, d) per
// observed entry is redistributed along the lower-order distribution.
std::map<std::string, double> discount_interp(
    const std::map<std::string, double>* counts, double discount,
    const std::map<std::string, double>& lower) {
  if (counts == nullptr) return lower;
  double n = 0.0, reserved = 0.0;
  for (const auto& [key, c] : *counts) {
    if (c <= 0.0) continue;
    n += c;
    reserved += std::min(c, discount);
  }
  if (n <= 0.0) return lower;
  std::map<std::string, double> out;
  const double backoff = reserved / n;
  for (const auto& [key, p] : lower) out[key] = backoff * p;
  for (const auto& [key, c] : *counts)
    if (c > discount) out[key] += (c - discount) / n;
  return out;
}

}  // namespace

std::string ExpansionModel::signature1(const SketchState& x, std::size_t pos) const {
  return fold_token(signature_vocab, left_terminals(x, pos, 1)[0]);
}

std::string ExpansionModel::signature2(const SketchState& x, std::size_t pos) const {
  std::vector<std::string> left = left_terminals(x, pos, 2);
  std::string out = fold_token(signature_vocab, left[1]);
  out += kSep;
  out += fold_token(signature_vocab, left[0]);
  out += kSep;
  out += fold_token(signature_vocab, right_terminal(x, pos));
  return out;
}

ExpansionDistribution expansion_dist(const ExpansionModel& m,
                                     const SketchState& x, std::size_t pos) {
  if (pos >= x.items.size() || !x.items[pos].expandable())
    throw InternalError("expansion_dist: position is not expandable");
  const StateItem& item = x.items[pos];
  ExpansionDistribution dist;

  if (item.kind == StateItem::Kind::LeafClass) {
    auto it = m.lexemes.find(item.text);
    if (it == m.lexemes.end())
      throw DataError("unknown nonterminal " + item.text);
    const ExpansionModel::LexemeTable& table = it->second;
    double n = table.unseen_count;
    for (const auto& [lex, c] : table.counts) n += c;
    if (n <= 0.0) throw DataError("unknown nonterminal " + item.text);
    const double known_scale = 1.0 - m.smoothing.lambda_unk;
    double known = 0.0;
    for (const auto& [lex, c] : table.counts) {
      double p = known_scale * c / n;
      if (p > 0.0) {
        dist.items.push_back({{StateItem::token(lex)}, p});
        known += p;
      }
    }
    dist.unknown_mass = 1.0 - known;
  } else {
    auto it = m.kinds.find(item.text);
    if (it == m.kinds.end()) throw DataError("unknown nonterminal " + item.text);
    const ExpansionModel::KindTable& table = it->second;

    // Lowest order: additive smoothing over the observed inventory.
    double n0 = 0.0;
    for (const auto& [key, c] : table.order0) n0 += c;
    const double denom =
        n0 + m.smoothing.alpha * static_cast<double>(table.order0.size());
    if (!(denom > 0.0)) throw DataError("unknown nonterminal " + item.text);
    std::map<std::string, double> p;
    for (const auto& [key, c] : table.order0)
      p[key] = (c + m.smoothing.alpha) / denom;

    auto level = [&](const std::map<std::string, std::map<std::string, double>>& tbl,
                     const std::string& sig) -> const std::map<std::string, double>* {
      auto found = tbl.find(sig);
      return found == tbl.end() ? nullptr : &found->second;
    };
    p = discount_interp(level(table.order1, m.signature1(x, pos)),
                        m.smoothing.discount, p);
    p = discount_interp(level(table.order2, m.signature2(x, pos)),
                        m.smoothing.discount, p);

    for (const auto& [key, prob] : p)
      dist.items.push_back({decode_expansion(key), prob});
  }

  std::stable_sort(dist.items.begin(), dist.items.end(),
                   [](const ExpansionCandidate& a, const ExpansionCandidate& b) {
                     if (a.prob != b.prob) return a.prob > b.prob;
                     return encode_expansion(a.expansion) <
                            encode_expansion(b.expansion);
                   });
  check_normalized(dist.total(), "expansion_dist");
  return dist;
}

// --- ExpansionCounter --------------------------------------------------------

ExpansionCounter::ExpansionCounter(std::set<std::string> signature_vocab,
                                   SmoothingConfig cfg) {
  model_.signature_vocab = std::move(signature_vocab);
  model_.smoothing = cfg;
}

void ExpansionCounter::add(const ExpansionTrace& trace) {
  for (const ExpansionTraceStep& step : trace.steps) {
    for (std::size_t k = 0; k < step.positions.size(); ++k) {
      const std::size_t pos = step.positions[k];
      const StateItem& item = step.state.items[pos];
      const Expansion& truth = step.truths[k];
      if (item.kind == StateItem::Kind::LeafClass) {
        if (truth.size() != 1 || truth[0].kind != StateItem::Kind::Token)
          throw InternalError("leaf-class truth must be a single token");
        raw_lexemes_[item.text][truth[0].text] += 1.0;
      } else {
        ExpansionModel::KindTable& table = model_.kinds[item.text];
        const std::string key = encode_expansion(truth);
        table.order0[key] += 1.0;
        table.order1[model_.signature1(step.state, pos)][key] += 1.0;
        table.order2[model_.signature2(step.state, pos)][key] += 1.0;
      }
    }
  }
}

void ExpansionCounter::merge(ExpansionCounter&& other) {
  for (auto& [cls, lexs] : other.raw_lexemes_)
    for (auto& [lex, c] : lexs) raw_lexemes_[cls][lex] += c;
  for (auto& [kind, table] : other.model_.kinds) {
    ExpansionModel::KindTable& mine = model_.kinds[kind];
    for (auto& [k, c] : table.order0) mine.order0[k] += c;
    for (auto& [sig, inner] : table.order1)
      for (auto& [k, c] : inner) mine.order1[sig][k] += c;
    for (auto& [sig, inner] : table.order2)
      for (auto& [k, c] : inner) mine.order2[sig][k] += c;
  }
}

ExpansionModel ExpansionCounter::finish() && {
  for (auto& [cls, lexs] : raw_lexemes_) {
    ExpansionModel::LexemeTable table;
    for (const auto& [lex, c] : lexs) {
      if (c >= model_.smoothing.min_count)
        table.counts[lex] = c;
      else
        table.unseen_count += c;
    }
    model_.lexemes[cls] = std::move(table);
  }
  if (model_.empty()) throw DataError("empty training corpus");
  return std::move(model_);
}

ExpansionModel train_expansion_counts(const std::vector<ExpansionTrace>& traces,
                                      std::set<std::string> signature_vocab,
                                      SmoothingConfig cfg) {
  ExpansionCounter counter(std::move(signature_vocab), cfg);
  for (const ExpansionTrace& t : traces) counter.add(t);
  return std::move(counter).finish();
}

// --- Selector ----------------------------------------------------------------

namespace {

std::size_t entropy_bucket(double h) {
  if (h < 0.1) return 0;
  if (h < 0.5) return 1;
  if (h < 1.0) return 2;
  if (h < 2.0) return 3;
  return 4;
}

std::size_t remaining_bucket(std::size_t n) {
  if (n <= 1) return 0;
  if (n == 2) return 1;
  if (n <= 4) return 2;
  return 3;
}

std::size_t position_bucket(std::size_t pos, std::size_t len) {
  double frac = len <= 1 ? 0.0
                         : static_cast<double>(pos) /
                               static_cast<double>(len - 1);
  if (frac < 0.25) return 0;
  if (frac < 0.5) return 1;
  if (frac < 0.75) return 2;
  return 3;
}

std::size_t step_bucket(int step) {
  if (step <= 0) return 0;
  if (step <= 2) return 1;
  if (step <= 7) return 2;
  return 3;
}

}  // namespace

SelectorModel SelectorModel::for_grammar(const Grammar& flattened) {
  SelectorModel m;
  std::size_t next = 0;
  auto define = [&](const std::string& name) { m.feature_index[name] = next++; };
  for (const std::string& nt : flattened.nonterminals()) define("kind:" + nt);
  for (const TokenClass& c : flattened.token_classes) define("kind:" + c.name);
  for (int i = 0; i < 5; ++i) define("ent:" + std::to_string(i));
  for (int i = 0; i < 4; ++i) define("pos:" + std::to_string(i));
  for (int i = 0; i < 4; ++i) define("rem:" + std::to_string(i));
  for (int i = 0; i < 4; ++i) define("step:" + std::to_string(i));
  define("stop");
  m.weights.assign(next, 0.0);
  return m;
}

std::size_t SelectorModel::feature(const std::string& name) const {
  auto it = feature_index.find(name);
  if (it == feature_index.end())
    throw InternalError("unknown selector feature " + name);
  return it->second;
}

std::size_t SelectorDistribution::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

std::size_t SelectorDistribution::sample(RandomSource& rng) const {
  return rng.weighted_index(probs);
}

std::size_t SelectorDistribution::stop_index() const {
  for (std::size_t i = 0; i < options.size(); ++i)
    if (options[i].stop) return i;
  throw InternalError("selector distribution lacks a stop option");
}

SelectorDistribution selector_dist(const SelectorModel& m, const SketchState& x,
                                   const ExpansionModel& exp,
                                   EntropyCache* cache) {
  SelectorDistribution dist;
  const std::vector<std::size_t> positions = x.expandable_positions();
  const std::size_t rem = remaining_bucket(positions.size());
  const std::size_t stp = step_bucket(x.step);

  for (std::size_t pos : positions) {
    std::vector<std::size_t> feats;
    feats.push_back(m.feature("kind:" + x.items[pos].text));
    double h;
    if (cache) {
      std::string key = x.items[pos].text;
      key += kSep;
      key += exp.signature2(x, pos);
      auto it = cache->values.find(key);
      if (it == cache->values.end()) {
        h = expansion_dist(exp, x, pos).entropy();
        cache->values.emplace(std::move(key), h);
      } else {
        h = it->second;
      }
    } else {
      h = expansion_dist(exp, x, pos).entropy();
    }
    feats.push_back(m.feature("ent:" + std::to_string(entropy_bucket(h))));
    feats.push_back(m.feature(
        "pos:" + std::to_string(position_bucket(pos, x.items.size()))));
    feats.push_back(m.feature("rem:" + std::to_string(rem)));
    feats.push_back(m.feature("step:" + std::to_string(stp)));
    dist.options.push_back({false, pos});
    dist.features.push_back(std::move(feats));
  }
  if (positions.empty()) {
    // Forced stop: point mass.
    dist.options.push_back({true, 0});
    dist.features.push_back({m.feature("stop"),
                             m.feature("rem:" + std::to_string(rem)),
                             m.feature("step:" + std::to_string(stp))});
    dist.probs.assign(1, 1.0);
    return dist;
  }
  dist.options.push_back({true, 0});
  dist.features.push_back({m.feature("stop"),
                           m.feature("rem:" + std::to_string(rem)),
                           m.feature("step:" + std::to_string(stp))});

  std::vector<double> scores;
  scores.reserve(dist.options.size());
  for (const auto& feats : dist.features) {
    double s = 0.0;
    for (std::size_t f : feats) s += m.weights[f];
    scores.push_back(s);
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  dist.probs.reserve(scores.size());
  double total = 0.0;
  for (double s : scores) {
    double p = std::exp(s - mx) / z;
    dist.probs.push_back(p);
    total += p;
  }
  check_normalized(total, "selector_dist");
  return dist;
}

std::vector<double> selector_grad(const SelectorModel& m, const SketchState& x,
                                  const SelectorOption& chosen,
                                  const ExpansionModel& exp,
                                  EntropyCache* cache) {
  SelectorDistribution dist = selector_dist(m, x, exp, cache);
  std::vector<double> grad(m.weights.size(), 0.0);
  std::optional<std::size_t> chosen_idx;
  for (std::size_t i = 0; i < dist.options.size(); ++i)
    if (dist.options[i] == chosen) { chosen_idx = i; break; }
  if (!chosen_idx) throw InternalError("selector_grad: choice not in support");
  for (std::size_t f : dist.features[*chosen_idx]) grad[f] += 1.0;
  for (std::size_t i = 0; i < dist.options.size(); ++i)
    for (std::size_t f : dist.features[i]) grad[f] -= dist.probs[i];
  return grad;
}

// --- TokenDistribution / SequenceModel ---------------------------------------

const std::string SequenceModel::kEos = "\x03</s>";
const std::string SequenceModel::kRare = kRareMark;
const std::string SequenceModel::kBos = "\x02^";

double TokenDistribution::entropy() const {
  double h = 0.0;
  for (const auto& [tok, p] : items)
    if (p > 0.0) h -= p * std::log(p);
  if (unknown_mass > 0.0) h -= unknown_mass * std::log(unknown_mass);
  return h;
}

double TokenDistribution::log_prob(const std::string& tok) const {
  for (const auto& [t, p] : items)
    if (t == tok) return std::log(p);
  if (unknown_mass > 0.0) return std::log(unknown_mass);
  throw InternalError("token outside support");
}

std::size_t TokenDistribution::sample(RandomSource& rng) const {
  std::vector<double> w;
  w.reserve(items.size());
  for (const auto& [t, p] : items) w.push_back(p);
  return rng.weighted_index(w);
}

std::string baseline_variant_name(BaselineVariant v) {
  switch (v) {
    case BaselineVariant::LeftToRight: return "lr";
    case BaselineVariant::LeftToRightStop: return "lr-stop";
    case BaselineVariant::LeftToRightHole: return "lr-hole";
  }
  throw InternalError("bad variant");
}

BaselineVariant baseline_variant_from_name(const std::string& name) {
  if (name == "lr") return BaselineVariant::LeftToRight;
  if (name == "lr-stop") return BaselineVariant::LeftToRightStop;
  if (name == "lr-hole") return BaselineVariant::LeftToRightHole;
  throw DataError("unknown baseline variant '" + name + "'");
}

TokenDistribution SequenceModel::next_dist(const std::string& prev2,
                                           const std::string& prev1) const {
  double n = 0.0;
  for (const auto& [tok, c] : uni) n += c;
  const double denom =
      n + smoothing.alpha * static_cast<double>(vocab.size());
  if (!(denom > 0.0)) throw DataError("empty sequence model");
  std::map<std::string, double> p;
  for (const std::string& tok : vocab) {
    auto it = uni.find(tok);
    p[tok] = ((it == uni.end() ? 0.0 : it->second) + smoothing.alpha) / denom;
  }
  auto level = [&](const std::map<std::string, std::map<std::string, double>>& tbl,
                   const std::string& sig) -> const std::map<std::string, double>* {
    auto found = tbl.find(sig);
    return found == tbl.end() ? nullptr : &found->second;
  };
  p = discount_interp(level(bi, fold(prev1)), smoothing.discount, p);
  p = discount_interp(level(tri, fold(prev2) + kSep + fold(prev1)),
                      smoothing.discount, p);

  TokenDistribution dist;
  const double scale = 1.0 - smoothing.lambda_unk;
  double known = 0.0;
  for (const auto& [tok, prob] : p) {
    double scaled = scale * prob;
    if (scaled > 0.0) {
      dist.items.push_back({tok, scaled});
      known += scaled;
    }
  }
  dist.unknown_mass = 1.0 - known;
  std::stable_sort(dist.items.begin(), dist.items.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  double total = dist.unknown_mass;
  for (const auto& [t, pp] : dist.items) total += pp;
  check_normalized(total, "next_dist");
  return dist;
}

std::vector<std::size_t> SequenceModel::stop_features(std::size_t step,
                                                      double next_entropy) const {
  // 0: bias; 1..4: step bucket; 5..9: entropy bucket.
  return {0, 1 + step_bucket(static_cast<int>(step)),
          5 + entropy_bucket(next_entropy)};
}

double SequenceModel::stop_logit(std::size_t step, double next_entropy) const {
  double s = 0.0;
  for (std::size_t f : stop_features(step, next_entropy)) s += stop_weights[f];
  return s;
}

// --- Sequence decoding ---------------------------------------------------------

namespace {

const std::string kSeqHole = "■";

std::pair<std::string, std::string> seed_context(const SequenceModel& m,
                                                 const std::vector<std::string>& ctx) {
  std::string p2 = ctx.size() >= 2 ? m.fold(ctx[ctx.size() - 2]) : SequenceModel::kBos;
  std::string p1 = !ctx.empty() ? m.fold(ctx.back()) : SequenceModel::kBos;
  return {p2, p1};
}

}  // namespace

SequenceTrace sequence_generate(const SequenceModel& m,
                                const std::vector<std::string>& context,
                                RandomSource* rng, std::size_t max_len) {
  SequenceTrace trace;
  auto [p2, p1] = seed_context(m, context);
  for (std::size_t t = 0; t < max_len; ++t) {
    TokenDistribution dist = m.next_dist(p2, p1);
    SequenceTraceStep step;
    step.step = t;
    step.next_entropy = dist.entropy();

    if (m.variant == BaselineVariant::LeftToRightStop) {
      const double logit = m.stop_logit(t, step.next_entropy);
      const double p_stop = 1.0 / (1.0 + std::exp(-logit));
      const bool stop = rng ? rng->bernoulli(p_stop) : logit > 0.0;
      if (stop) {
        step.stopped = true;
        step.logp_decision = std::log(p_stop);
        trace.logprob += step.logp_decision;
        trace.output.push_back(kSeqHole);
        trace.steps.push_back(std::move(step));
        return trace;
      }
      step.logp_decision = std::log(1.0 - p_stop);
      trace.logprob += step.logp_decision;
    }

    const std::size_t pick = rng ? dist.sample(*rng) : 0;
    step.token = dist.items[pick].first;
    step.logp_token = std::log(dist.items[pick].second);
    trace.logprob += step.logp_token;
    const std::string tok = step.token;
    trace.steps.push_back(std::move(step));
    if (tok == SequenceModel::kEos) return trace;
    trace.output.push_back(tok);
    p2 = std::move(p1);
    p1 = m.fold(tok);
  }
  return trace;  // length cap; truncated, no trailing hole
}

std::vector<std::pair<std::vector<std::string>, double>> sequence_beam(
    const SequenceModel& m, const std::vector<std::string>& context,
    std::size_t k, std::size_t max_len) {
  if (k == 0) throw DataError("beam width must be >= 1");
  struct Entry {
    std::vector<std::string> output;
    std::string p2, p1;
    double logprob = 0.0;
    bool done = false;
  };
  auto [p2, p1] = seed_context(m, context);
  std::vector<Entry> beam{{{}, p2, p1, 0.0, false}};

  auto prune = [&](std::vector<Entry>& pool) {
    std::stable_sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.output.size() != b.output.size())
        return a.output.size() < b.output.size();
      return a.output < b.output;
    });
    if (pool.size() > k) pool.resize(k);
  };

  for (std::size_t round = 0; round < max_len; ++round) {
    if (std::all_of(beam.begin(), beam.end(),
                    [](const Entry& e) { return e.done; }))
      break;
    std::vector<Entry> next;
    for (Entry& entry : beam) {
      if (entry.done) {
        next.push_back(std::move(entry));
        continue;
      }
      TokenDistribution dist = m.next_dist(entry.p2, entry.p1);
      double continue_logp = 0.0;
      if (m.variant == BaselineVariant::LeftToRightStop) {
        const double logit = m.stop_logit(round, dist.entropy());
        const double p_stop = 1.0 / (1.0 + std::exp(-logit));
        Entry stopped = entry;
        stopped.logprob += std::log(p_stop);
        stopped.output.push_back(kSeqHole);
        stopped.done = true;
        next.push_back(std::move(stopped));
        continue_logp = std::log(1.0 - p_stop);
      }
      const std::size_t fanout = std::min<std::size_t>(dist.items.size(), k);
      for (std::size_t i = 0; i < fanout; ++i) {
        Entry child = entry;
        child.logprob += continue_logp + std::log(dist.items[i].second);
        if (dist.items[i].first == SequenceModel::kEos) {
          child.done = true;
        } else {
          child.output.push_back(dist.items[i].first);
          child.p2 = std::move(child.p1);
          child.p1 = m.fold(dist.items[i].first);
        }
        next.push_back(std::move(child));
      }
    }
    beam = std::move(next);
    prune(beam);
  }
  std::vector<std::pair<std::vector<std::string>, double>> out;
  out.reserve(beam.size());
  for (Entry& e : beam) out.push_back({std::move(e.output), e.logprob});
  return out;
}

// --- Serialization ------------------------------------------------------------

namespace {

json weights_to_json(const SelectorModel& m) {
  std::vector<std::string> names(m.feature_index.size());
  for (const auto& [name, idx] : m.feature_index) names[idx] = name;
  return json{{"features", names}, {"values", m.weights}};
}

SelectorModel weights_from_json(const json& j) {
  SelectorModel m;
  const auto& names = j.at("features");
  m.weights = j.at("values").get<std::vector<double>>();
  if (names.size() != m.weights.size())
    throw DataError("corrupt model file: selector shape mismatch");
  for (std::size_t i = 0; i < names.size(); ++i)
    m.feature_index[names[i].get<std::string>()] = i;
  return m;
}

json expansion_to_json(const ExpansionModel& m) {
  json kinds = json::object();
  for (const auto& [kind, table] : m.kinds) {
    kinds[kind] = json{{"order0", table.order0},
                       {"order1", table.order1},
                       {"order2", table.order2}};
  }
  json lex = json::object();
  for (const auto& [cls, table] : m.lexemes)
    lex[cls] = json{{"counts", table.counts}, {"unseen", table.unseen_count}};
  return json{{"kinds", kinds},
              {"lexemes", lex},
              {"signature_vocab", m.signature_vocab},
              {"smoothing",
               {{"discount", m.smoothing.discount},
                {"alpha", m.smoothing.alpha},
                {"lambda_unk", m.smoothing.lambda_unk},
                {"min_count", m.smoothing.min_count}}}};
}

ExpansionModel expansion_from_json(const json& j) {
  ExpansionModel m;
  for (const auto& [kind, t] : j.at("kinds").items()) {
    ExpansionModel::KindTable table;
    table.order0 = t.at("order0").get<std::map<std::string, double>>();
    table.order1 =
        t.at("order1").get<std::map<std::string, std::map<std::string, double>>>();
    table.order2 =
        t.at("order2").get<std::map<std::string, std::map<std::string, double>>>();
    m.kinds[kind] = std::move(table);
  }
  for (const auto& [cls, t] : j.at("lexemes").items()) {
    ExpansionModel::LexemeTable table;
    table.counts = t.at("counts").get<std::map<std::string, double>>();
    table.unseen_count = t.at("unseen").get<double>();
    m.lexemes[cls] = std::move(table);
  }
  m.signature_vocab = j.at("signature_vocab").get<std::set<std::string>>();
  const json& s = j.at("smoothing");
  m.smoothing.discount = s.at("discount").get<double>();
  m.smoothing.alpha = s.at("alpha").get<double>();
  m.smoothing.lambda_unk = s.at("lambda_unk").get<double>();
  m.smoothing.min_count = s.at("min_count").get<double>();
  return m;
}

json load_checked(const std::string& path, const std::string& expected_kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("corrupt model file " + path + ": " + e.what());
  }
  if (!j.contains("meta") || !j["meta"].contains("version"))
    throw DataError("corrupt model file " + path + ": missing meta.version");
  const int version = j["meta"]["version"].get<int>();
  if (version != kModelFormatVersion)
    throw DataError("unsupported model version " + std::to_string(version) +
                    " in " + path + " (expected " +
                    std::to_string(kModelFormatVersion) + ")");
  const std::string kind = j["meta"].value("kind", "");
  if (kind != expected_kind)
    throw DataError("model file " + path + " holds a '" + kind +
                    "' model, expected '" + expected_kind + "'");
  return j;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file " + path);
  out << j.dump(1, '\t') << '\n';
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::string& path) {
  json j{{"meta", {{"version", kModelFormatVersion}, {"kind", "bundle"}}},
         {"selector_weights", weights_to_json(bundle.selector)},
         {"expansion", expansion_to_json(bundle.expansion)}};
  if (bundle.snapshot) {
    j["snapshot"] = json{{"selector_weights", weights_to_json(bundle.snapshot->selector)},
                         {"expansion", expansion_to_json(bundle.snapshot->expansion)},
                         {"valid_reward", bundle.snapshot->valid_reward}};
  } else {
    j["snapshot"] = nullptr;
  }
  write_json(j, path);
}

ModelBundle load_bundle(const std::string& path) {
  json j = load_checked(path, "bundle");
  ModelBundle b;
  b.selector = weights_from_json(j.at("selector_weights"));
  b.expansion = expansion_from_json(j.at("expansion"));
  if (!j.at("snapshot").is_null()) {
    ModelBundle::Snapshot snap;
    snap.selector = weights_from_json(j["snapshot"].at("selector_weights"));
    snap.expansion = expansion_from_json(j["snapshot"].at("expansion"));
    snap.valid_reward = j["snapshot"].at("valid_reward").get<double>();
    b.snapshot = std::move(snap);
  }
  return b;
}

void save_sequence_model(const SequenceModel& m, const std::string& path) {
  json j{{"meta",
          {{"version", kModelFormatVersion},
           {"kind", "sequence"},
           {"variant", baseline_variant_name(m.variant)}}},
         {"uni", m.uni},
         {"bi", m.bi},
         {"tri", m.tri},
         {"unseen", m.unseen_count},
         {"vocab", m.vocab},
         {"stop_weights", m.stop_weights},
         {"smoothing",
          {{"discount", m.smoothing.discount},
           {"alpha", m.smoothing.alpha},
           {"lambda_unk", m.smoothing.lambda_unk},
           {"min_count", m.smoothing.min_count}}}};
  write_json(j, path);
}

SequenceModel load_sequence_model(const std::string& path) {
  json j = load_checked(path, "sequence");
  SequenceModel m;
  m.variant = baseline_variant_from_name(j["meta"].at("variant").get<std::string>());
  m.uni = j.at("uni").get<std::map<std::string, double>>();
  m.bi = j.at("bi").get<std::map<std::string, std::map<std::string, double>>>();
  m.tri = j.at("tri").get<std::map<std::string, std::map<std::string, double>>>();
  m.unseen_count = j.at("unseen").get<double>();
  m.vocab = j.at("vocab").get<std::set<std::string>>();
  m.stop_weights = j.at("stop_weights").get<std::vector<double>>();
  const json& s = j.at("smoothing");
  m.smoothing.discount = s.at("discount").get<double>();
  m.smoothing.alpha = s.at("alpha").get<double>();
  m.smoothing.lambda_unk = s.at("lambda_unk").get<double>();
  m.smoothing.min_count = s.at("min_count").get<double>();
  return m;
}

}  // namespace sketchgen

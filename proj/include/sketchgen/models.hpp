#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sketchgen/grammar.hpp"
#include "sketchgen/random.hpp"

namespace sketchgen {

// --- Sketch states ---------------------------------------------------------

// One element of a partially expanded statement. Token items are concrete
// lexemes; Nonterm items are grammar nonterminals awaiting a production;
// LeafClass items are token-class placeholders awaiting a lexeme.
struct StateItem {
  enum class Kind { Token, Nonterm, LeafClass };
  Kind kind = Kind::Token;
  std::string text;

  static StateItem token(std::string t) { return {Kind::Token, std::move(t)}; }
  static StateItem nonterm(std::string n) { return {Kind::Nonterm, std::move(n)}; }
  static StateItem leaf_class(std::string c) { return {Kind::LeafClass, std::move(c)}; }

  bool expandable() const { return kind != Kind::Token; }
  friend bool operator==(const StateItem&, const StateItem&) = default;
};

using Expansion = std::vector<StateItem>;

std::string encode_item(const StateItem& item);
std::string encode_expansion(const Expansion& e);
Expansion decode_expansion(const std::string& key);

// The evolving symbol sequence of the generation loop. Only the statement
// region is stored; `left_context` carries the <=2 trailing context tokens
// that feed the leftmost context signatures.
struct SketchState {
  std::vector<std::string> left_context;
  std::vector<StateItem> items;
  int step = 0;

  std::vector<std::size_t> expandable_positions() const;
  friend bool operator==(const SketchState&, const SketchState&) = default;
};

// Rhs of a grammar production rendered as state items under grammar `g`.
Expansion expansion_from_rhs(const Grammar& g, const std::vector<Symbol>& rhs);

// --- Expansion model -------------------------------------------------------

struct SmoothingConfig {
  double discount = 0.5;    // absolute discounting at the context orders
  double alpha = 0.1;       // additive smoothing at the lowest order
  double lambda_unk = 0.05; // reserved mass for unseen lexemes
  double min_count = 5.0;   // lexeme/vocabulary pruning threshold
};

struct ExpansionCandidate {
  Expansion expansion;
  double prob = 0.0;
};

// Finite distribution over expansion sequences; `unknown_mass` is the
// non-generable remainder (pruned + reserved lexeme mass), zero for
// grammar nonterminals.
struct ExpansionDistribution {
  std::vector<ExpansionCandidate> items;  // sorted by (prob desc, key asc)
  double unknown_mass = 0.0;

  double entropy() const;
  double total() const;
  // Log-probability of a given expansion; unseen expansions score the
  // unknown mass. Throws InternalError when neither applies.
  double log_prob(const Expansion& e) const;
  std::size_t argmax() const { return 0; }
  std::size_t sample(RandomSource& rng) const;
};

// Count-based expansion model: per-nonterminal expansion inventories with
// interpolated absolute-discount backoff over context signatures
// (kind | 2 preceding terminals, 1 following) -> (kind | 1 preceding) ->
// (kind), additive smoothing at the lowest order; token classes expand
// through per-class lexeme unigrams with reserved unknown mass.
class ExpansionModel {
 public:
  struct KindTable {
    std::map<std::string, double> order0;                           // key -> count
    std::map<std::string, std::map<std::string, double>> order1;    // sig -> key -> count
    std::map<std::string, std::map<std::string, double>> order2;
  };
  struct LexemeTable {
    std::map<std::string, double> counts;  // surviving lexemes
    double unseen_count = 0.0;             // mass pruned at training time
  };

  std::map<std::string, KindTable> kinds;     // nonterminal name -> table
  std::map<std::string, LexemeTable> lexemes; // class name -> unigram
  std::set<std::string> signature_vocab;      // tokens kept verbatim in signatures
  SmoothingConfig smoothing;

  bool empty() const { return kinds.empty() && lexemes.empty(); }
  bool knows(const std::string& kind_name) const {
    return kinds.count(kind_name) || lexemes.count(kind_name);
  }

  // Context signatures for position `pos` of `x` (rare tokens folded).
  std::string signature1(const SketchState& x, std::size_t pos) const;
  std::string signature2(const SketchState& x, std::size_t pos) const;
};

// Distribution over expansions of the expandable item x.items[pos].
// Throws DataError("unknown nonterminal ...") for an untrained kind.
ExpansionDistribution expansion_dist(const ExpansionModel& m,
                                     const SketchState& x, std::size_t pos);

// --- Expansion traces (pretraining supervision) ----------------------------

struct ExpansionTraceStep {
  SketchState state;                     // x^(t)
  std::vector<std::size_t> positions;    // all expandable positions
  std::vector<Expansion> truths;         // ground-truth expansion per position
  std::size_t chosen = 0;                // index into positions (realized order)
};

struct ExpansionTrace {
  std::vector<ExpansionTraceStep> steps;
  std::vector<std::string> target;       // replay end state
};

// Streaming count accumulator behind train_expansion_counts.
class ExpansionCounter {
 public:
  ExpansionCounter(std::set<std::string> signature_vocab, SmoothingConfig cfg);
  void add(const ExpansionTrace& trace);
  void merge(ExpansionCounter&& other);
  // Applies lexeme pruning (min_count) and returns the finished model.
  ExpansionModel finish() &&;

 private:
  ExpansionModel model_;
  std::map<std::string, std::map<std::string, double>> raw_lexemes_;
};

// Count maximum likelihood over a batch of traces; the exact optimizer of
// the supervised expansion objective for this model family.
ExpansionModel train_expansion_counts(const std::vector<ExpansionTrace>& traces,
                                      std::set<std::string> signature_vocab,
                                      SmoothingConfig cfg = {});

// --- Selector model ---------------------------------------------------------

struct SelectorOption {
  bool stop = false;
  std::size_t pos = 0;  // valid when !stop

  friend bool operator==(const SelectorOption&, const SelectorOption&) = default;
};

struct SelectorDistribution {
  std::vector<SelectorOption> options;  // positions ascending, stop last
  std::vector<double> probs;            // aligned; sums to 1
  std::vector<std::vector<std::size_t>> features;  // active feature ids per option

  std::size_t argmax() const;           // first maximum
  std::size_t sample(RandomSource& rng) const;
  std::size_t stop_index() const;       // index of the stop option
};

// Linear softmax over sparse indicator features of each candidate position
// (plus the stop action): expansion-entropy bucket, position kind,
// remaining-nonterminal and position/step buckets, stop bias.
struct SelectorModel {
  std::vector<double> weights;
  std::map<std::string, std::size_t> feature_index;

  static SelectorModel for_grammar(const Grammar& flattened);
  std::size_t feature(const std::string& name) const;  // throws if unknown
};

// Memo for expansion-distribution entropies keyed by (kind, signature);
// callers on hot paths pass one per worker.
struct EntropyCache {
  std::map<std::string, double> values;
};

SelectorDistribution selector_dist(const SelectorModel& m, const SketchState& x,
                                   const ExpansionModel& exp,
                                   EntropyCache* cache = nullptr);

// Analytic gradient of log P_s(chosen | x) with respect to the weights:
// features(chosen) - sum_o P(o) features(o).
std::vector<double> selector_grad(const SelectorModel& m, const SketchState& x,
                                  const SelectorOption& chosen,
                                  const ExpansionModel& exp,
                                  EntropyCache* cache = nullptr);

// --- Bundle -----------------------------------------------------------------

struct ModelBundle {
  SelectorModel selector;
  ExpansionModel expansion;

  struct Snapshot {
    SelectorModel selector;
    ExpansionModel expansion;
    double valid_reward = -1.0;  // < 0 means "not measured yet"
  };
  std::optional<Snapshot> snapshot;
};

// --- Baseline sequence models ------------------------------------------------

enum class BaselineVariant { LeftToRight, LeftToRightStop, LeftToRightHole };

std::string baseline_variant_name(BaselineVariant v);
BaselineVariant baseline_variant_from_name(const std::string& name);

// Finite next-token distribution with a non-generable unknown remainder.
struct TokenDistribution {
  std::vector<std::pair<std::string, double>> items;  // (prob desc, token asc)
  double unknown_mass = 0.0;

  double entropy() const;
  double log_prob(const std::string& tok) const;
  std::size_t sample(RandomSource& rng) const;
};

// Backoff n-gram model over target tokens conditioned on the two preceding
// tokens (context suffix first, then the generated prefix). The +stop
// variant adds a logistic stop head; the +hole variant admits the hole
// marker as an ordinary vocabulary token.
class SequenceModel {
 public:
  BaselineVariant variant = BaselineVariant::LeftToRight;
  std::map<std::string, double> uni;
  std::map<std::string, std::map<std::string, double>> bi;   // w1 -> tok
  std::map<std::string, std::map<std::string, double>> tri;  // w1\x1fw2 -> tok
  double unseen_count = 0.0;
  std::set<std::string> vocab;  // includes the end marker
  std::vector<double> stop_weights;  // LeftToRightStop only
  SmoothingConfig smoothing;

  static const std::string kEos;
  static const std::string kRare;
  static const std::string kBos;

  std::string fold(const std::string& tok) const {
    return vocab.count(tok) ? tok : kRare;
  }

  // Distribution over the next token given the two folded previous tokens.
  // Known tokens carry (1 - lambda_unk) of the mass; the remainder is the
  // non-generable unknown event.
  TokenDistribution next_dist(const std::string& prev2,
                              const std::string& prev1) const;

  double stop_logit(std::size_t step, double next_entropy) const;
  static std::size_t stop_feature_count() { return 10; }
  std::vector<std::size_t> stop_features(std::size_t step, double next_entropy) const;
};

// One decode step of a sequence model, with enough detail to reproduce the
// trajectory's log-probability for self-critical updates.
struct SequenceTraceStep {
  std::size_t step = 0;
  double next_entropy = 0.0;    // entropy of the token distribution seen
  bool stopped = false;         // +stop variant: chose the trailing hole
  double logp_decision = 0.0;   // stop/continue log-probability (+stop only)
  std::string token;            // emitted token ("" when stopped)
  double logp_token = 0.0;
};

struct SequenceTrace {
  std::vector<std::string> output;  // marked tokens; holes use kHoleMarker
  std::vector<SequenceTraceStep> steps;
  double logprob = 0.0;
};

// Left-to-right decode conditioned on the context suffix. rng == nullptr is
// greedy (argmax tokens; +stop stops when its logit is positive).
SequenceTrace sequence_generate(const SequenceModel& m,
                                const std::vector<std::string>& context,
                                RandomSource* rng, std::size_t max_len = 64);

// Standard beam over token sequences (stop/EOS/hole handling per variant);
// returns up to k (marked tokens, logprob) pairs, best first.
std::vector<std::pair<std::vector<std::string>, double>> sequence_beam(
    const SequenceModel& m, const std::vector<std::string>& context,
    std::size_t k, std::size_t max_len = 64);

// --- Serialization ------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);

void save_sequence_model(const SequenceModel& m, const std::string& path);
SequenceModel load_sequence_model(const std::string& path);

}  // namespace sketchgen

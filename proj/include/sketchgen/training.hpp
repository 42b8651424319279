#pragma once

#include <iosfwd>
#include <map>

#include "sketchgen/corpus.hpp"
#include "sketchgen/engine.hpp"
#include "sketchgen/grammar.hpp"
#include "sketchgen/metrics.hpp"
#include "sketchgen/models.hpp"
#include "sketchgen/syntax.hpp"

namespace sketchgen {

// x^(0) for an example: the statement root plus the trailing two context
// tokens feeding the leftmost context signatures.
SketchState initial_state(const Example& ex, const std::string& root);

// Simulates the generative loop over the example's ground-truth tree with
// uniformly random position choices, recording the correct expansion for
// every expandable position of every intermediate state (supervision is
// amortized across positions). Parses ex.target when the tree is absent.
ExpansionTrace make_expansion_traces(const Example& ex, const Grammar& g,
                                     RandomSource& rng);

struct TrainConfig {
  double lr = 0.05;
  std::size_t batch = 64;
  int selector_epochs = 3;
  int finetune_epochs = 12;
  double count_lr = 0.5;   // fractional-count step for full-mode updates
  int patience = 5;        // early stop after this many non-improving epochs
  double p_hole = 0.15;    // hole probability for the +hole pretraining data
  std::size_t max_batches_per_epoch = 200;  // 0 = full pass
  RewardKind reward_kind = RewardKind::Mixed;
  SmoothingConfig smoothing;
  std::size_t max_steps = 64;
  std::uint64_t seed = 1;
  unsigned jobs = 0;
  std::string start_symbol;     // statement root (flattened grammar start)
  std::ostream* log = nullptr;  // CSV: epoch,mean_reward,snapshot_reward,mean_len
};

enum class TrainMode { SelectorOnly, Full };

struct TrainState {
  ModelBundle bundle;  // live weights; bundle.snapshot tracks the best
  int epoch = 0;
  int non_improving = 0;
  std::uint64_t step_counter = 0;  // rng stream derivation across batches
};

// Greedy-decode mean reward of the live bundle over a validation set.
double validate(const ModelBundle& bundle, const std::vector<Example>& valid,
                const TrainConfig& cfg);

// One self-critical policy-gradient step over a batch: sample a trace per
// example with the live bundle, subtract the snapshot's greedy-decode reward,
// ascend the advantage-weighted trace log-probability. Full mode also applies
// advantage-weighted fractional count updates to the expansion tables
// (clipped at zero).
void self_critical_step(const std::vector<const Example*>& batch, TrainState& ts,
                        TrainMode mode, const TrainConfig& cfg);

// Runs epochs of self-critical training with per-epoch validation; the
// snapshot advances only on strict improvement. Ends with live = snapshot.
void train_epochs(TrainState& ts, const std::vector<Example>& train,
                  const std::vector<Example>& valid, TrainMode mode, int epochs,
                  const TrainConfig& cfg);

// Stage 1: expansion counts from uniform-order traces.
// Stage 2: selector weights by self-critical training with the expansion
// tables frozen. The returned bundle carries its best snapshot.
ModelBundle pretrain(const std::vector<Example>& train,
                     const std::vector<Example>& valid, const Grammar& flattened,
                     const TrainConfig& cfg);

struct HoleRecord {
  std::vector<std::string> context;
  std::vector<std::string> sketch;  // marked tokens; every record matches its target
};

// Replaces random tree nodes (internal nodes and class leaves) by holes with
// probability p_hole, never descending into a holed subtree.
std::vector<HoleRecord> synth_hole_dataset(const std::vector<Example>& corpus,
                                           const Grammar& g, double p_hole,
                                           RandomSource& rng);

// Supervised n-gram counts over context-suffix conditioned sequences.
SequenceModel train_sequence_counts(
    const std::vector<std::pair<const std::vector<std::string>*,
                                const std::vector<std::string>*>>& rows,
    BaselineVariant variant, const SmoothingConfig& smoothing);

// Trains one baseline end to end: supervised counts, then (for the +stop and
// +hole variants) self-critical fine-tuning against the same reward.
SequenceModel train_baseline(BaselineVariant variant,
                             const std::vector<Example>& train,
                             const std::vector<Example>& valid, const Grammar& g,
                             const TrainConfig& cfg);

}  // namespace sketchgen

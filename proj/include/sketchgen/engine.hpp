#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "sketchgen/metrics.hpp"
#include "sketchgen/models.hpp"

namespace sketchgen {

// Decision source for the generation loop: a distribution over which
// position to expand (or stop), and a distribution over expansions.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual SelectorDistribution select(const SketchState& x) const = 0;
  virtual ExpansionDistribution expand(const SketchState& x,
                                       std::size_t pos) const = 0;
};

// Trained-model policy; owns a per-instance entropy cache, so each worker
// should hold its own instance (the models themselves are shared, immutable
// while decoding).
class BundlePolicy : public Policy {
 public:
  BundlePolicy(const SelectorModel& selector, const ExpansionModel& expansion)
      : selector_(&selector), expansion_(&expansion) {}
  explicit BundlePolicy(const ModelBundle& bundle)
      : BundlePolicy(bundle.selector, bundle.expansion) {}
  SelectorDistribution select(const SketchState& x) const override;
  ExpansionDistribution expand(const SketchState& x, std::size_t pos) const override;

 private:
  const SelectorModel* selector_;
  const ExpansionModel* expansion_;
  mutable EntropyCache cache_;
};

// Uniform position choice (the pretrained-expansion-only ablations); the
// stop action, when not masked at decode level, shares the uniform mass.
class UniformPolicy : public Policy {
 public:
  explicit UniformPolicy(const ExpansionModel& expansion) : expansion_(&expansion) {}
  SelectorDistribution select(const SketchState& x) const override;
  ExpansionDistribution expand(const SketchState& x, std::size_t pos) const override;

 private:
  const ExpansionModel* expansion_;
};

struct DecodeConfig {
  std::size_t max_steps = 64;
  // Renormalize the selector over positions only (the no-stop ablations);
  // generation then ends on exhaustion or the caps below.
  bool mask_stop = false;
  // Candidates whose accumulated log-probability falls below this threshold
  // stop expanding (no stop log-probability added).
  std::optional<double> stop_threshold;
};

struct GenerationStep {
  SketchState state;                    // x^(t)
  std::optional<std::size_t> position;  // nullopt: the stop action
  Expansion expansion;                  // empty for stop
  double logp_select = 0.0;
  double logp_expand = 0.0;
};

struct GenerationTrace {
  std::vector<GenerationStep> steps;
  SketchState final_state;
  Sketch sketch;
  double logprob = 0.0;
  bool forced_stop = false;  // ended by max_steps/threshold, not by choice
};

Sketch nonterminals_to_holes(const SketchState& x);

// One pass of the generative loop: sample i ~ P_s then e ~ P_e until stop,
// exhaustion, or max_steps. rng == nullptr decodes greedily (argmax both).
GenerationTrace generate(const Policy& policy, SketchState x0, RandomSource* rng,
                         const DecodeConfig& cfg = {});

// Applies a recorded trace's rewrites from its own x^(0); used to validate
// that states evolve exactly by splicing expansions.
SketchState replay_trace(const GenerationTrace& trace);

struct BeamConfig {
  std::size_t k = 5;
  std::size_t n = 1;
  std::size_t m = 0;  // 0 means "all positions"
  DecodeConfig decode;
  bool keep_traces = false;
};

struct BeamCandidate {
  SketchState state;
  Sketch sketch;
  double logprob = 0.0;
  std::size_t steps = 0;
  bool forced_stop = false;
  std::vector<GenerationStep> trace;  // filled when keep_traces
};

// Two-step beam search: per live candidate take the top-m selector options,
// expanding ones fan out into the top-n expansions; prune to k by
// (score desc, steps asc, sketch lexicographic). Completed candidates are
// carried forward unchanged.
std::vector<BeamCandidate> beam_search(const Policy& policy, const SketchState& x0,
                                       const BeamConfig& cfg);

// Step table for a generation: one line per x^(t) with the selected item
// bracketed and the chosen expansion shown, then the final sketch line.
std::string format_trace(const GenerationTrace& trace);

}  // namespace sketchgen

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sketchgen/engine.hpp"
#include "sketchgen/training.hpp"

namespace sketchgen {

struct EvalRecord {
  std::size_t gt_len = 0;
  double top1_regex = 0.0;
  bool top1_match = false;
  std::size_t top1_len = 0;
  double top5_regex = 0.0;
  double rouge_l = 0.0, rouge_1 = 0.0, rouge_2 = 0.0;
};

struct ModelReport {
  std::string name;
  double regex_top1 = 0.0, regex_top5 = 0.0;
  double rouge_l = 0.0, rouge_1 = 0.0, rouge_2 = 0.0;
  double avg_len = 0.0;
  std::vector<EvalRecord> records;
};

// Ranked candidate sketches for one example (best first, at most the beam k).
using Completer = std::function<std::vector<Sketch>(const Example&)>;
// One completer per worker thread; instances may keep mutable caches.
using CompleterFactory = std::function<Completer()>;

ModelReport evaluate(const std::string& name, const CompleterFactory& make,
                     const std::vector<Example>& testset, unsigned jobs);

// Completer factories for the models under comparison.
CompleterFactory grammar_completer(const ModelBundle& bundle,
                                   const std::string& root, BeamConfig beam);
CompleterFactory uniform_completer(const ExpansionModel& expansion,
                                   const std::string& root, BeamConfig beam);
CompleterFactory sequence_completer(const SequenceModel& model, std::size_t k,
                                    std::size_t max_len);

// metrics.csv body: split-hash header line, one row per model.
std::string metrics_csv(const std::vector<ModelReport>& reports,
                        std::uint64_t split_hash);

// Per-ground-truth-length buckets: mean sketch length and percent of
// matching top-1 sketches per (bucket, model). `edges` are inclusive upper
// bounds of each bucket except the last, which is open.
std::string bucket_csv(const std::vector<ModelReport>& reports,
                       const std::vector<std::size_t>& edges,
                       std::uint64_t split_hash);

struct AblationConfig {
  std::vector<double> tau_grid{-0.25, -0.5, -1.0, -1.5, -2.0, -3.0,
                               -4.0,  -6.0, -8.0, -12.0};
  BeamConfig beam;
  TrainConfig train;  // used for the reward-variant fine-tunes
};

struct AblationResult {
  std::vector<ModelReport> reports;
  double chosen_tau = 0.0;
  std::string csv;
};

// Re-creates the selector/reward ablation table: uniform selector without
// stop, uniform selector with validation-tuned threshold stopping, reward
// variants (ROUGE-only / RegexAcc-only fine-tunes of the pretrained bundle),
// and the no-stop decode of the fine-tuned bundle.
AblationResult run_ablations(const ModelBundle& pretrained,
                             const ModelBundle& finetuned,
                             const std::vector<Example>& train,
                             const std::vector<Example>& valid,
                             const std::vector<Example>& test,
                             const Grammar& flattened, const AblationConfig& cfg);

}  // namespace sketchgen

#include "sketchgen/eval.hpp"

#include <algorithm>
#include <sstream>

#include "sketchgen/error.hpp"
#include "sketchgen/util.hpp"

namespace sketchgen {

namespace {

unsigned resolve_jobs(unsigned jobs) {
  return jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : jobs;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace

ModelReport evaluate(const std::string& name, const CompleterFactory& make,
                     const std::vector<Example>& testset, unsigned jobs) {
  jobs = resolve_jobs(jobs);
  std::vector<Completer> workers;
  workers.reserve(jobs);
  for (unsigned w = 0; w < jobs; ++w) workers.push_back(make());

  ModelReport report;
  report.name = name;
  report.records.resize(testset.size());
  parallel_for(testset.size(), jobs, [&](std::size_t i) {
    const Example& ex = testset[i];
    std::vector<Sketch> candidates = workers[i % jobs](ex);
    if (candidates.empty()) candidates.push_back(Sketch{});
    const Sketch& top1 = candidates.front();
    EvalRecord rec;
    rec.gt_len = ex.target.size();
    rec.top1_regex = regex_acc(top1, ex.target);
    rec.top1_match = matches(to_matcher(top1), ex.target) == 1;
    rec.top1_len = n_tokens(top1);
    rec.top5_regex = 0.0;
    for (std::size_t c = 0; c < std::min<std::size_t>(5, candidates.size()); ++c)
      rec.top5_regex = std::max(rec.top5_regex, regex_acc(candidates[c], ex.target));
    const std::vector<std::string> erased = erase_holes(top1);
    rec.rouge_l = rouge_f1(erased, ex.target, RougeVariant::RL);
    rec.rouge_1 = rouge_f1(erased, ex.target, RougeVariant::R1);
    rec.rouge_2 = rouge_f1(erased, ex.target, RougeVariant::R2);
    report.records[i] = rec;
  });

  const double n = testset.empty() ? 1.0 : static_cast<double>(testset.size());
  for (const EvalRecord& r : report.records) {
    report.regex_top1 += r.top1_regex;
    report.regex_top5 += r.top5_regex;
    report.rouge_l += r.rouge_l;
    report.rouge_1 += r.rouge_1;
    report.rouge_2 += r.rouge_2;
    report.avg_len += static_cast<double>(r.top1_len);
  }
  report.regex_top1 /= n;
  report.regex_top5 /= n;
  report.rouge_l /= n;
  report.rouge_1 /= n;
  report.rouge_2 /= n;
  report.avg_len /= n;
  return report;
}

CompleterFactory grammar_completer(const ModelBundle& bundle,
                                   const std::string& root, BeamConfig beam) {
  return [&bundle, root, beam]() -> Completer {
    auto policy = std::make_shared<BundlePolicy>(bundle);
    return [policy, root, beam](const Example& ex) {
      SketchState x0 = initial_state(ex, root);
      std::vector<BeamCandidate> cands = beam_search(*policy, x0, beam);
      std::vector<Sketch> out;
      out.reserve(cands.size());
      for (BeamCandidate& c : cands) out.push_back(std::move(c.sketch));
      return out;
    };
  };
}

CompleterFactory uniform_completer(const ExpansionModel& expansion,
                                   const std::string& root, BeamConfig beam) {
  return [&expansion, root, beam]() -> Completer {
    auto policy = std::make_shared<UniformPolicy>(expansion);
    return [policy, root, beam](const Example& ex) {
      SketchState x0 = initial_state(ex, root);
      std::vector<BeamCandidate> cands = beam_search(*policy, x0, beam);
      std::vector<Sketch> out;
      out.reserve(cands.size());
      for (BeamCandidate& c : cands) out.push_back(std::move(c.sketch));
      return out;
    };
  };
}

CompleterFactory sequence_completer(const SequenceModel& model, std::size_t k,
                                    std::size_t max_len) {
  return [&model, k, max_len]() -> Completer {
    return [&model, k, max_len](const Example& ex) {
      auto ranked = sequence_beam(model, ex.context, k, max_len);
      std::vector<Sketch> out;
      out.reserve(ranked.size());
      for (auto& [tokens, lp] : ranked)
        out.push_back(sketch_from_marked_tokens(tokens));
      return out;
    };
  };
}

std::string metrics_csv(const std::vector<ModelReport>& reports,
                        std::uint64_t split_hash) {
  std::ostringstream out;
  out << "# split_hash=" << hex64(split_hash) << '\n';
  out << "model,regex_acc_top1,regex_acc_top5,rouge_l_f1,rouge_1_f1,rouge_2_f1,"
         "avg_sketch_len,n\n";
  for (const ModelReport& r : reports) {
    out << r.name << ',' << format_double(r.regex_top1) << ','
        << format_double(r.regex_top5) << ',' << format_double(r.rouge_l) << ','
        << format_double(r.rouge_1) << ',' << format_double(r.rouge_2) << ','
        << format_double(r.avg_len) << ',' << r.records.size() << '\n';
  }
  return out.str();
}

std::string bucket_csv(const std::vector<ModelReport>& reports,
                       const std::vector<std::size_t>& edges,
                       std::uint64_t split_hash) {
  std::ostringstream out;
  out << "# split_hash=" << hex64(split_hash) << '\n';
  out << "bucket,model,mean_len,pct_match,n\n";
  std::size_t lo = 1;
  for (std::size_t b = 0; b <= edges.size(); ++b) {
    const bool last = b == edges.size();
    const std::size_t hi = last ? SIZE_MAX : edges[b];
    std::string label = last ? std::to_string(lo) + "+"
                             : std::to_string(lo) + "-" + std::to_string(hi);
    for (const ModelReport& r : reports) {
      double len_sum = 0.0;
      std::size_t match = 0, n = 0;
      for (const EvalRecord& rec : r.records) {
        if (rec.gt_len < lo || rec.gt_len > hi) continue;
        ++n;
        len_sum += static_cast<double>(rec.top1_len);
        if (rec.top1_match) ++match;
      }
      out << label << ',' << r.name << ','
          << format_double(n ? len_sum / static_cast<double>(n) : 0.0) << ','
          << format_double(n ? static_cast<double>(match) / static_cast<double>(n)
                             : 0.0)
          << ',' << n << '\n';
    }
    lo = hi == SIZE_MAX ? lo : hi + 1;
  }
  return out.str();
}

namespace {

// Mean greedy reward of the uniform+threshold decode, used to pick tau.
double threshold_validation_reward(const ExpansionModel& expansion,
                                   const std::string& root, double tau,
                                   const std::vector<Example>& valid,
                                   const TrainConfig& tcfg) {
  if (valid.empty()) return 0.0;
  const unsigned jobs = resolve_jobs(tcfg.jobs);
  std::vector<double> rewards(valid.size(), 0.0);
  DecodeConfig dc;
  dc.max_steps = tcfg.max_steps;
  dc.mask_stop = true;
  dc.stop_threshold = tau;
  std::vector<std::unique_ptr<UniformPolicy>> policies;
  for (unsigned w = 0; w < jobs; ++w)
    policies.push_back(std::make_unique<UniformPolicy>(expansion));
  parallel_for(valid.size(), jobs, [&](std::size_t i) {
    SketchState x0 = initial_state(valid[i], root);
    GenerationTrace t = generate(*policies[i % jobs], std::move(x0), nullptr, dc);
    rewards[i] = reward(t.sketch, valid[i].target, tcfg.reward_kind);
  });
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum / static_cast<double>(valid.size());
}

}  // namespace

AblationResult run_ablations(const ModelBundle& pretrained,
                             const ModelBundle& finetuned,
                             const std::vector<Example>& train,
                             const std::vector<Example>& valid,
                             const std::vector<Example>& test,
                             const Grammar& flattened, const AblationConfig& cfg) {
  AblationResult result;
  const std::string root = flattened.start;
  const unsigned jobs = cfg.train.jobs;

  // Baseline row: the fine-tuned model under the normal decode.
  result.reports.push_back(
      evaluate("grammformer", grammar_completer(finetuned, root, cfg.beam), test,
               jobs));

  // (a) Uniform selector, never stop.
  BeamConfig no_stop = cfg.beam;
  no_stop.decode.mask_stop = true;
  result.reports.push_back(evaluate(
      "random_expansion_no_stop",
      uniform_completer(pretrained.expansion, root, no_stop), test, jobs));

  // (b) Uniform selector, stop below a validation-tuned score threshold.
  double best_tau = cfg.tau_grid.front();
  double best_reward = -1.0;
  for (double tau : cfg.tau_grid) {
    const double r = threshold_validation_reward(pretrained.expansion, root, tau,
                                                 valid, cfg.train);
    if (r > best_reward) {
      best_reward = r;
      best_tau = tau;
    }
  }
  result.chosen_tau = best_tau;
  BeamConfig threshold = no_stop;
  threshold.decode.stop_threshold = best_tau;
  result.reports.push_back(evaluate(
      "random_expansion_threshold",
      uniform_completer(pretrained.expansion, root, threshold), test, jobs));

  // (c) Reward-variant fine-tunes of the pretrained bundle.
  for (RewardKind kind : {RewardKind::RougeOnly, RewardKind::RegexAccOnly}) {
    TrainConfig tcfg = cfg.train;
    tcfg.reward_kind = kind;
    tcfg.log = nullptr;
    TrainState ts;
    ts.bundle = pretrained;
    ts.bundle.snapshot.reset();  // re-baseline under this reward
    train_epochs(ts, train, valid, TrainMode::Full, tcfg.finetune_epochs, tcfg);
    const char* name = kind == RewardKind::RougeOnly ? "reward_rouge_only"
                                                     : "reward_regexacc_only";
    result.reports.push_back(
        evaluate(name, grammar_completer(ts.bundle, root, cfg.beam), test, jobs));
  }

  // (d) Fine-tuned model with the stop action disabled.
  result.reports.push_back(
      evaluate("grammformer_no_stop",
               grammar_completer(finetuned, root, no_stop), test, jobs));

  result.csv = metrics_csv(result.reports, split_hash(test));
  return result;
}

}  // namespace sketchgen

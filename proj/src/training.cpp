#include "sketchgen/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>

#include "sketchgen/error.hpp"
#include "sketchgen/util.hpp"

namespace sketchgen {

namespace {

constexpr std::uint64_t kTraceSalt = 0x7261ce5a17ULL;
constexpr std::uint64_t kSampleSalt = 0x5ca1ab1e00ULL;
constexpr std::uint64_t kShuffleSalt = 0x0d0e0f1011ULL;
constexpr std::uint64_t kHoleSalt = 0x401e5ULL;
constexpr std::uint64_t kBaselineSalt = 0xba5e11e5ULL;

unsigned resolve_jobs(unsigned jobs) {
  return jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : jobs;
}

}  // namespace

SketchState initial_state(const Example& ex, const std::string& root) {
  SketchState x;
  const std::size_t keep = std::min<std::size_t>(2, ex.context.size());
  x.left_context.assign(ex.context.end() - static_cast<std::ptrdiff_t>(keep),
                        ex.context.end());
  x.items.push_back(StateItem::nonterm(root));
  x.step = 0;
  return x;
}

namespace {

// Cursor element of the ground-truth simulation: expandable entries keep a
// pointer into the parse tree.
struct CursorItem {
  StateItem item;
  const ParseTree* node = nullptr;  // non-null iff item.expandable()
};

Expansion truth_of(const Grammar& g, const CursorItem& c) {
  if (c.item.kind == StateItem::Kind::LeafClass) {
    if (!c.node->token) throw InternalError("class leaf without token");
    return {StateItem::token(c.node->token->text)};
  }
  Expansion e;
  for (const ParseTree& child : c.node->children) {
    if (child.symbol.is_nonterminal())
      e.push_back(StateItem::nonterm(child.symbol.name));
    else if (g.is_token_class(child.symbol.name))
      e.push_back(StateItem::leaf_class(child.symbol.name));
    else
      e.push_back(StateItem::token(child.symbol.name));
  }
  return e;
}

}  // namespace

ExpansionTrace make_expansion_traces(const Example& ex, const Grammar& g,
                                     RandomSource& rng) {
  std::shared_ptr<ParseTree> owned = ex.target_tree;
  if (!owned) {
    owned = std::make_shared<ParseTree>(
        parse(classify_tokens(ex.target, g), g, g.start));
  }
  const ParseTree& tree = *owned;

  SketchState state = initial_state(ex, tree.symbol.name);
  std::vector<CursorItem> cursor{{state.items[0], &tree}};

  ExpansionTrace trace;
  while (true) {
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < cursor.size(); ++i)
      if (cursor[i].item.expandable()) positions.push_back(i);
    if (positions.empty()) break;

    ExpansionTraceStep step;
    step.state = state;
    step.positions = positions;
    for (std::size_t pos : positions)
      step.truths.push_back(truth_of(g, cursor[pos]));
    step.chosen = rng.next_index(positions.size());

    const std::size_t pos = positions[step.chosen];
    const Expansion& e = step.truths[step.chosen];
    std::vector<CursorItem> repl;
    if (cursor[pos].item.kind == StateItem::Kind::LeafClass) {
      repl.push_back({e[0], nullptr});
    } else {
      const ParseTree* node = cursor[pos].node;
      for (std::size_t ci = 0; ci < e.size(); ++ci)
        repl.push_back({e[ci], e[ci].expandable() ? &node->children[ci] : nullptr});
    }
    cursor.erase(cursor.begin() + static_cast<std::ptrdiff_t>(pos));
    cursor.insert(cursor.begin() + static_cast<std::ptrdiff_t>(pos), repl.begin(),
                  repl.end());

    state.items.erase(state.items.begin() + static_cast<std::ptrdiff_t>(pos));
    state.items.insert(state.items.begin() + static_cast<std::ptrdiff_t>(pos),
                       e.begin(), e.end());
    state.step += 1;
    trace.steps.push_back(std::move(step));
  }

  for (const CursorItem& c : cursor) trace.target.push_back(c.item.text);
  if (trace.target != ex.target)
    throw InternalError("expansion trace does not replay to the target");
  return trace;
}

// --- Self-critical training ----------------------------------------------------

namespace {

void validate_full(const ModelBundle& bundle, const std::vector<Example>& valid,
                   const TrainConfig& cfg, double& reward_sum, double& len_sum) {
  const unsigned jobs = resolve_jobs(cfg.jobs);
  std::vector<std::unique_ptr<BundlePolicy>> policies;
  for (unsigned w = 0; w < jobs; ++w)
    policies.push_back(std::make_unique<BundlePolicy>(bundle));
  std::vector<double> rewards(valid.size(), 0.0), lens(valid.size(), 0.0);
  DecodeConfig dc;
  dc.max_steps = cfg.max_steps;
  parallel_for(valid.size(), jobs, [&](std::size_t i) {
    SketchState x0 = initial_state(valid[i], cfg.start_symbol);
    GenerationTrace t = generate(*policies[i % jobs], std::move(x0), nullptr, dc);
    rewards[i] = reward(t.sketch, valid[i].target, cfg.reward_kind);
    lens[i] = static_cast<double>(n_tokens(t.sketch));
  });
  reward_sum = 0.0;
  len_sum = 0.0;
  for (double r : rewards) reward_sum += r;
  for (double l : lens) len_sum += l;
}

}  // namespace

double validate(const ModelBundle& bundle, const std::vector<Example>& valid,
                const TrainConfig& cfg) {
  if (valid.empty()) return 0.0;
  double reward_sum = 0.0, len_sum = 0.0;
  validate_full(bundle, valid, cfg, reward_sum, len_sum);
  return reward_sum / static_cast<double>(valid.size());
}

void self_critical_step(const std::vector<const Example*>& batch, TrainState& ts,
                        TrainMode mode, const TrainConfig& cfg) {
  if (!ts.bundle.snapshot) throw InternalError("snapshot not initialized");
  if (batch.empty()) return;
  const unsigned jobs = resolve_jobs(cfg.jobs);

  struct Delta {
    bool leaf = false;
    std::string kind, sig1, sig2, key;
    double amount = 0.0;
  };
  struct Result {
    std::vector<double> grad;
    std::vector<Delta> deltas;
  };
  std::vector<Result> results(batch.size());

  std::vector<std::unique_ptr<BundlePolicy>> live, snap;
  std::vector<EntropyCache> caches(jobs);
  for (unsigned w = 0; w < jobs; ++w) {
    live.push_back(std::make_unique<BundlePolicy>(ts.bundle));
    snap.push_back(std::make_unique<BundlePolicy>(ts.bundle.snapshot->selector,
                                                  ts.bundle.snapshot->expansion));
  }

  DecodeConfig dc;
  dc.max_steps = cfg.max_steps;
  parallel_for(batch.size(), jobs, [&](std::size_t i) {
    const Example& ex = *batch[i];
    RandomSource rng =
        RandomSource::for_stream(cfg.seed ^ kSampleSalt, ts.step_counter + i);
    SketchState x0 = initial_state(ex, cfg.start_symbol);
    GenerationTrace sampled = generate(*live[i % jobs], x0, &rng, dc);
    const double r = reward(sampled.sketch, ex.target, cfg.reward_kind);
    GenerationTrace greedy = generate(*snap[i % jobs], x0, nullptr, dc);
    const double baseline = reward(greedy.sketch, ex.target, cfg.reward_kind);
    const double advantage = r - baseline;
    if (advantage == 0.0) return;

    Result& res = results[i];
    res.grad.assign(ts.bundle.selector.weights.size(), 0.0);
    for (const GenerationStep& step : sampled.steps) {
      SelectorOption chosen = step.position
                                  ? SelectorOption{false, *step.position}
                                  : SelectorOption{true, 0};
      std::vector<double> g =
          selector_grad(ts.bundle.selector, step.state, chosen,
                        ts.bundle.expansion, &caches[i % jobs]);
      for (std::size_t k = 0; k < g.size(); ++k) res.grad[k] += g[k];
      if (mode == TrainMode::Full && step.position) {
        const StateItem& item = step.state.items[*step.position];
        Delta d;
        d.amount = cfg.count_lr * advantage;
        if (item.kind == StateItem::Kind::LeafClass) {
          d.leaf = true;
          d.kind = item.text;
          d.key = step.expansion[0].text;
        } else {
          d.kind = item.text;
          d.sig1 = ts.bundle.expansion.signature1(step.state, *step.position);
          d.sig2 = ts.bundle.expansion.signature2(step.state, *step.position);
          d.key = encode_expansion(step.expansion);
        }
        res.deltas.push_back(std::move(d));
      }
    }
    for (double& v : res.grad) v *= advantage;
  });

  // Reductions run in example order so updates are schedule-independent.
  std::vector<double> mean(ts.bundle.selector.weights.size(), 0.0);
  for (const Result& res : results) {
    if (res.grad.empty()) continue;
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += res.grad[k];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < mean.size(); ++k)
    ts.bundle.selector.weights[k] += cfg.lr * mean[k] * inv;

  if (mode == TrainMode::Full) {
    auto clip = [](double& v) {
      if (v < 0.0) v = 0.0;
    };
    for (const Result& res : results) {
      for (const Delta& d : res.deltas) {
        if (d.leaf) {
          auto& table = ts.bundle.expansion.lexemes.at(d.kind);
          auto it = table.counts.find(d.key);
          if (it == table.counts.end()) continue;  // pruned lexeme
          it->second += d.amount;
          clip(it->second);
        } else {
          auto& table = ts.bundle.expansion.kinds.at(d.kind);
          double& c0 = table.order0[d.key];
          c0 += d.amount;
          clip(c0);
          double& c1 = table.order1[d.sig1][d.key];
          c1 += d.amount;
          clip(c1);
          double& c2 = table.order2[d.sig2][d.key];
          c2 += d.amount;
          clip(c2);
        }
      }
    }
  }
  ts.step_counter += batch.size();
}

void train_epochs(TrainState& ts, const std::vector<Example>& train,
                  const std::vector<Example>& valid, TrainMode mode, int epochs,
                  const TrainConfig& cfg) {
  if (!ts.bundle.snapshot) {
    ModelBundle::Snapshot snap;
    snap.selector = ts.bundle.selector;
    snap.expansion = ts.bundle.expansion;
    snap.valid_reward = validate(ts.bundle, valid, cfg);
    ts.bundle.snapshot = std::move(snap);
  }
  for (int e = 0; e < epochs; ++e) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RandomSource shuffle_rng = RandomSource::for_stream(
        cfg.seed ^ kShuffleSalt, static_cast<std::uint64_t>(ts.epoch));
    for (std::size_t i = order.size(); i-- > 1;)
      std::swap(order[i], order[shuffle_rng.next_index(i + 1)]);

    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
      if (cfg.max_batches_per_epoch && batches >= cfg.max_batches_per_epoch)
        break;
      std::vector<const Example*> batch;
      for (std::size_t i = begin; i < std::min(order.size(), begin + cfg.batch);
           ++i)
        batch.push_back(&train[order[i]]);
      self_critical_step(batch, ts, mode, cfg);
      ++batches;
    }

    double reward_sum = 0.0, len_sum = 0.0;
    validate_full(ts.bundle, valid, cfg, reward_sum, len_sum);
    const double denom = valid.empty() ? 1.0 : static_cast<double>(valid.size());
    const double v = reward_sum / denom;
    const double mean_len = len_sum / denom;
    if (v > ts.bundle.snapshot->valid_reward) {
      ts.bundle.snapshot->selector = ts.bundle.selector;
      ts.bundle.snapshot->expansion = ts.bundle.expansion;
      ts.bundle.snapshot->valid_reward = v;
      ts.non_improving = 0;
    } else {
      ++ts.non_improving;
    }
    ++ts.epoch;
    if (cfg.log)
      (*cfg.log) << ts.epoch << ',' << format_double(v) << ','
                 << format_double(ts.bundle.snapshot->valid_reward) << ','
                 << format_double(mean_len) << '\n';
    if (ts.non_improving >= cfg.patience) break;
  }
  // Hand back the best weights.
  ts.bundle.selector = ts.bundle.snapshot->selector;
  ts.bundle.expansion = ts.bundle.snapshot->expansion;
}

ModelBundle pretrain(const std::vector<Example>& train,
                     const std::vector<Example>& valid, const Grammar& flattened,
                     const TrainConfig& cfg) {
  if (train.empty()) throw DataError("empty training corpus");

  // Signature vocabulary: tokens frequent enough to condition on verbatim.
  std::map<std::string, double> freq;
  for (const Example& ex : train) {
    for (const std::string& t : ex.target) freq[t] += 1.0;
    for (const std::string& t : ex.context) freq[t] += 1.0;
  }
  std::set<std::string> vocab;
  for (const auto& [tok, c] : freq)
    if (c >= cfg.smoothing.min_count) vocab.insert(tok);

  const unsigned jobs = resolve_jobs(cfg.jobs);
  std::vector<ExpansionCounter> counters;
  counters.reserve(jobs);
  for (unsigned w = 0; w < jobs; ++w) counters.emplace_back(vocab, cfg.smoothing);
  parallel_for(train.size(), jobs, [&](std::size_t i) {
    RandomSource rng = RandomSource::for_stream(cfg.seed ^ kTraceSalt, i);
    counters[i % jobs].add(make_expansion_traces(train[i], flattened, rng));
  });
  for (unsigned w = 1; w < jobs; ++w) counters[0].merge(std::move(counters[w]));
  ExpansionModel expansion = std::move(counters[0]).finish();

  TrainState ts;
  ts.bundle.selector = SelectorModel::for_grammar(flattened);
  ts.bundle.expansion = std::move(expansion);
  if (cfg.log) (*cfg.log) << "epoch,mean_reward,snapshot_reward,mean_len\n";
  train_epochs(ts, train, valid, TrainMode::SelectorOnly, cfg.selector_epochs,
               cfg);
  return std::move(ts.bundle);
}

// --- Hole dataset ---------------------------------------------------------------

std::vector<HoleRecord> synth_hole_dataset(const std::vector<Example>& corpus,
                                           const Grammar& g, double p_hole,
                                           RandomSource& rng) {
  if (!(p_hole >= 0.0 && p_hole <= 1.0)) throw DataError("p_hole out of range");
  std::vector<HoleRecord> out;
  out.reserve(corpus.size());
  for (const Example& ex : corpus) {
    std::shared_ptr<ParseTree> tree = ex.target_tree;
    if (!tree)
      tree = std::make_shared<ParseTree>(
          parse(classify_tokens(ex.target, g), g, g.start));
    HoleRecord rec;
    rec.context = ex.context;
    auto walk = [&](auto&& self, const ParseTree& node) -> void {
      const bool holeable =
          node.symbol.is_nonterminal() ||
          (node.is_leaf() && node.token && node.token->token_class);
      if (holeable && rng.bernoulli(p_hole)) {
        rec.sketch.push_back(kHoleMarker);
        return;  // a holed node's descendants are never separately holed
      }
      if (node.is_leaf()) {
        if (node.token) rec.sketch.push_back(node.token->text);
        return;
      }
      for (const ParseTree& c : node.children) self(self, c);
    };
    walk(walk, *tree);
    out.push_back(std::move(rec));
  }
  return out;
}

// --- Baselines -------------------------------------------------------------------

SequenceModel train_sequence_counts(
    const std::vector<std::pair<const std::vector<std::string>*,
                                const std::vector<std::string>*>>& rows,
    BaselineVariant variant, const SmoothingConfig& smoothing) {
  if (rows.empty()) throw DataError("empty training corpus");
  SequenceModel m;
  m.variant = variant;
  m.smoothing = smoothing;

  std::map<std::string, double> freq;
  for (const auto& [ctx, toks] : rows) {
    (void)ctx;
    for (const std::string& t : *toks) freq[t] += 1.0;
    freq[SequenceModel::kEos] += 1.0;
  }
  for (const auto& [tok, c] : freq)
    if (c >= smoothing.min_count) m.vocab.insert(tok);
  m.vocab.insert(SequenceModel::kEos);
  if (variant == BaselineVariant::LeftToRightHole) m.vocab.insert(kHoleMarker);

  for (const auto& [ctx, toks] : rows) {
    std::string p2 = ctx->size() >= 2 ? m.fold((*ctx)[ctx->size() - 2])
                                      : SequenceModel::kBos;
    std::string p1 =
        !ctx->empty() ? m.fold(ctx->back()) : SequenceModel::kBos;
    std::vector<std::string> seq = *toks;
    seq.push_back(SequenceModel::kEos);
    for (const std::string& tok : seq) {
      if (m.vocab.count(tok)) {
        m.uni[tok] += 1.0;
        m.bi[p1][tok] += 1.0;
        m.tri[p2 + '\x1f' + p1][tok] += 1.0;
      } else {
        m.unseen_count += 1.0;
      }
      p2 = std::move(p1);
      p1 = m.fold(tok);
    }
  }
  if (variant == BaselineVariant::LeftToRightStop) {
    m.stop_weights.assign(SequenceModel::stop_feature_count(), 0.0);
    m.stop_weights[0] = -2.0;  // start biased toward continuing
  }
  return m;
}

namespace {

double validate_sequence(const SequenceModel& m, const std::vector<Example>& valid,
                         const TrainConfig& cfg) {
  if (valid.empty()) return 0.0;
  const unsigned jobs = resolve_jobs(cfg.jobs);
  std::vector<double> rewards(valid.size(), 0.0);
  parallel_for(valid.size(), jobs, [&](std::size_t i) {
    SequenceTrace t =
        sequence_generate(m, valid[i].context, nullptr, cfg.max_steps);
    rewards[i] = reward(sketch_from_marked_tokens(t.output), valid[i].target,
                        cfg.reward_kind);
  });
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum / static_cast<double>(valid.size());
}

// Self-critical fine-tuning: the +stop head gets policy-gradient steps, the
// +hole variant gets advantage-weighted fractional count updates.
void finetune_sequence(SequenceModel& model, const std::vector<Example>& train,
                       const std::vector<Example>& valid, const TrainConfig& cfg) {
  SequenceModel snapshot = model;
  double best = validate_sequence(model, valid, cfg);
  int non_improving = 0;
  std::uint64_t step_counter = 0;
  const unsigned jobs = resolve_jobs(cfg.jobs);

  for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RandomSource shuffle_rng = RandomSource::for_stream(
        cfg.seed ^ kShuffleSalt ^ kBaselineSalt, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i-- > 1;)
      std::swap(order[i], order[shuffle_rng.next_index(i + 1)]);

    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
      if (cfg.max_batches_per_epoch && batches >= cfg.max_batches_per_epoch)
        break;
      const std::size_t end = std::min(order.size(), begin + cfg.batch);
      const std::size_t bsize = end - begin;

      struct Result {
        std::vector<double> stop_grad;
        double advantage = 0.0;
        std::vector<std::string> output;
      };
      std::vector<Result> results(bsize);
      parallel_for(bsize, jobs, [&](std::size_t bi) {
        const Example& ex = train[order[begin + bi]];
        RandomSource rng = RandomSource::for_stream(
            cfg.seed ^ kSampleSalt ^ kBaselineSalt, step_counter + bi);
        SequenceTrace sampled =
            sequence_generate(model, ex.context, &rng, cfg.max_steps);
        const double r = reward(sketch_from_marked_tokens(sampled.output),
                                ex.target, cfg.reward_kind);
        SequenceTrace greedy =
            sequence_generate(snapshot, ex.context, nullptr, cfg.max_steps);
        const double rb = reward(sketch_from_marked_tokens(greedy.output),
                                 ex.target, cfg.reward_kind);
        const double advantage = r - rb;
        if (advantage == 0.0) return;
        Result& res = results[bi];
        res.advantage = advantage;
        if (model.variant == BaselineVariant::LeftToRightStop) {
          res.stop_grad.assign(SequenceModel::stop_feature_count(), 0.0);
          for (const SequenceTraceStep& st : sampled.steps) {
            const double logit = model.stop_logit(st.step, st.next_entropy);
            const double sigma = 1.0 / (1.0 + std::exp(-logit));
            const double coeff = st.stopped ? (1.0 - sigma) : -sigma;
            for (std::size_t f : model.stop_features(st.step, st.next_entropy))
              res.stop_grad[f] += coeff;
          }
          for (double& v : res.stop_grad) v *= advantage;
        } else {
          res.output = sampled.output;
          res.output.push_back(SequenceModel::kEos);
        }
      });

      if (model.variant == BaselineVariant::LeftToRightStop) {
        std::vector<double> mean(SequenceModel::stop_feature_count(), 0.0);
        for (const Result& res : results)
          for (std::size_t k = 0; k < res.stop_grad.size(); ++k)
            mean[k] += res.stop_grad[k];
        for (std::size_t k = 0; k < mean.size(); ++k)
          model.stop_weights[k] +=
              cfg.lr * mean[k] / static_cast<double>(bsize);
      } else {
        auto clip = [](double& v) {
          if (v < 0.0) v = 0.0;
        };
        for (std::size_t bi = 0; bi < bsize; ++bi) {
          const Result& res = results[bi];
          if (res.advantage == 0.0 || res.output.empty()) continue;
          const Example& ex = train[order[begin + bi]];
          std::string p2 = ex.context.size() >= 2
                               ? model.fold(ex.context[ex.context.size() - 2])
                               : SequenceModel::kBos;
          std::string p1 = !ex.context.empty() ? model.fold(ex.context.back())
                                               : SequenceModel::kBos;
          const double amount = cfg.count_lr * res.advantage;
          for (const std::string& tok : res.output) {
            if (model.vocab.count(tok)) {
              double& u = model.uni[tok];
              u += amount;
              clip(u);
              double& b = model.bi[p1][tok];
              b += amount;
              clip(b);
              double& t = model.tri[p2 + '\x1f' + p1][tok];
              t += amount;
              clip(t);
            }
            p2 = std::move(p1);
            p1 = model.fold(tok);
          }
        }
      }
      step_counter += bsize;
      ++batches;
    }

    const double v = validate_sequence(model, valid, cfg);
    if (v > best) {
      best = v;
      snapshot = model;
      non_improving = 0;
    } else {
      ++non_improving;
    }
    if (cfg.log)
      (*cfg.log) << (epoch + 1) << ',' << format_double(v) << ','
                 << format_double(best) << ",\n";
    if (non_improving >= cfg.patience) break;
  }
  model = snapshot;
}

}  // namespace

SequenceModel train_baseline(BaselineVariant variant,
                             const std::vector<Example>& train,
                             const std::vector<Example>& valid, const Grammar& g,
                             const TrainConfig& cfg) {
  std::vector<std::pair<const std::vector<std::string>*,
                        const std::vector<std::string>*>> rows;
  std::vector<HoleRecord> holes;
  if (variant == BaselineVariant::LeftToRightHole) {
    RandomSource rng = RandomSource::for_stream(cfg.seed, kHoleSalt);
    holes = synth_hole_dataset(train, g, cfg.p_hole, rng);
    rows.reserve(holes.size());
    for (const HoleRecord& h : holes) rows.push_back({&h.context, &h.sketch});
  } else {
    rows.reserve(train.size());
    for (const Example& ex : train) rows.push_back({&ex.context, &ex.target});
  }
  SequenceModel model = train_sequence_counts(rows, variant, cfg.smoothing);
  if (variant != BaselineVariant::LeftToRight)
    finetune_sequence(model, train, valid, cfg);
  return model;
}

}  // namespace sketchgen

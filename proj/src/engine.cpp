#include "sketchgen/engine.hpp"

#include <algorithm>
#include <cmath>

#include "sketchgen/error.hpp"

namespace sketchgen {

SelectorDistribution BundlePolicy::select(const SketchState& x) const {
  return selector_dist(*selector_, x, *expansion_, &cache_);
}

ExpansionDistribution BundlePolicy::expand(const SketchState& x,
                                           std::size_t pos) const {
  return expansion_dist(*expansion_, x, pos);
}

SelectorDistribution UniformPolicy::select(const SketchState& x) const {
  SelectorDistribution dist;
  const std::vector<std::size_t> positions = x.expandable_positions();
  for (std::size_t pos : positions) dist.options.push_back({false, pos});
  dist.options.push_back({true, 0});
  dist.features.resize(dist.options.size());
  if (positions.empty()) {
    dist.probs.assign(1, 1.0);
  } else {
    dist.probs.assign(dist.options.size(),
                      1.0 / static_cast<double>(dist.options.size()));
  }
  return dist;
}

ExpansionDistribution UniformPolicy::expand(const SketchState& x,
                                            std::size_t pos) const {
  return expansion_dist(*expansion_, x, pos);
}

Sketch nonterminals_to_holes(const SketchState& x) {
  Sketch s;
  s.items.reserve(x.items.size());
  for (const StateItem& item : x.items)
    s.items.push_back(item.expandable() ? SketchItem::make_hole()
                                        : SketchItem::make_token(item.text));
  return s;
}

namespace {

// Renormalized copy with the stop option removed; point-mass stop when no
// positions remain.
SelectorDistribution masked_no_stop(SelectorDistribution dist) {
  if (dist.options.size() <= 1) return dist;  // stop-only: nothing to mask
  const std::size_t stop = dist.stop_index();
  double stop_mass = dist.probs[stop];
  dist.options.erase(dist.options.begin() + static_cast<std::ptrdiff_t>(stop));
  dist.probs.erase(dist.probs.begin() + static_cast<std::ptrdiff_t>(stop));
  dist.features.erase(dist.features.begin() + static_cast<std::ptrdiff_t>(stop));
  const double scale = 1.0 - stop_mass;
  if (scale <= 0.0) throw InternalError("masked selector lost all mass");
  for (double& p : dist.probs) p /= scale;
  return dist;
}

SketchState splice(const SketchState& x, std::size_t pos, const Expansion& e) {
  SketchState next;
  next.left_context = x.left_context;
  next.step = x.step + 1;
  next.items.reserve(x.items.size() + e.size() - 1);
  next.items.insert(next.items.end(), x.items.begin(),
                    x.items.begin() + static_cast<std::ptrdiff_t>(pos));
  next.items.insert(next.items.end(), e.begin(), e.end());
  next.items.insert(next.items.end(),
                    x.items.begin() + static_cast<std::ptrdiff_t>(pos) + 1,
                    x.items.end());
  return next;
}

}  // namespace

GenerationTrace generate(const Policy& policy, SketchState x0, RandomSource* rng,
                         const DecodeConfig& cfg) {
  GenerationTrace trace;
  SketchState x = std::move(x0);
  for (std::size_t t = 0; t < cfg.max_steps; ++t) {
    if (cfg.stop_threshold && trace.logprob < *cfg.stop_threshold) {
      trace.forced_stop = true;
      break;
    }
    SelectorDistribution dist = policy.select(x);
    if (cfg.mask_stop) dist = masked_no_stop(dist);
    const std::size_t pick = rng ? dist.sample(*rng) : dist.argmax();
    const double logp_s = std::log(dist.probs[pick]);
    if (dist.options[pick].stop) {
      trace.steps.push_back({x, std::nullopt, {}, logp_s, 0.0});
      trace.logprob += logp_s;
      trace.final_state = std::move(x);
      trace.sketch = nonterminals_to_holes(trace.final_state);
      return trace;
    }
    const std::size_t pos = dist.options[pick].pos;
    ExpansionDistribution edist = policy.expand(x, pos);
    const std::size_t epick = rng ? edist.sample(*rng) : edist.argmax();
    const double logp_e = std::log(edist.items[epick].prob);
    trace.steps.push_back({x, pos, edist.items[epick].expansion, logp_s, logp_e});
    trace.logprob += logp_s + logp_e;
    x = splice(x, pos, edist.items[epick].expansion);
  }
  trace.forced_stop = true;
  trace.final_state = std::move(x);
  trace.sketch = nonterminals_to_holes(trace.final_state);
  return trace;
}

SketchState replay_trace(const GenerationTrace& trace) {
  if (trace.steps.empty()) return trace.final_state;
  SketchState x = trace.steps.front().state;
  for (const GenerationStep& step : trace.steps) {
    if (!(x == step.state))
      throw InternalError("trace replay diverged from recorded state");
    if (step.position) x = splice(x, *step.position, step.expansion);
  }
  return x;
}

std::vector<BeamCandidate> beam_search(const Policy& policy, const SketchState& x0,
                                       const BeamConfig& cfg) {
  if (cfg.k == 0 || cfg.n == 0)
    throw DataError("beam k and n must be at least 1");

  struct Entry {
    SketchState state;
    double logprob = 0.0;
    std::size_t steps = 0;
    bool done = false;
    bool forced = false;
    std::vector<GenerationStep> trace;
  };
  std::vector<Entry> beam{{x0, 0.0, 0, false, false, {}}};

  auto prune = [&](std::vector<Entry>& pool) {
    std::stable_sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.steps != b.steps) return a.steps < b.steps;
      return sketch_less(nonterminals_to_holes(a.state),
                         nonterminals_to_holes(b.state));
    });
    if (pool.size() > cfg.k) pool.resize(cfg.k);
  };

  for (std::size_t round = 0; round < cfg.decode.max_steps; ++round) {
    bool any_live = std::any_of(beam.begin(), beam.end(),
                                [](const Entry& e) { return !e.done; });
    if (!any_live) break;

    std::vector<Entry> next;
    for (Entry& entry : beam) {
      if (entry.done) {
        next.push_back(std::move(entry));
        continue;
      }
      if (cfg.decode.stop_threshold &&
          entry.logprob < *cfg.decode.stop_threshold) {
        entry.done = true;
        entry.forced = true;
        next.push_back(std::move(entry));
        continue;
      }
      SelectorDistribution dist = policy.select(entry.state);
      if (cfg.decode.mask_stop) dist = masked_no_stop(dist);

      // Top-m selector options: probability desc, positions before stop,
      // lower positions first.
      std::vector<std::size_t> order(dist.options.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) {
                         if (dist.probs[a] != dist.probs[b])
                           return dist.probs[a] > dist.probs[b];
                         return a < b;  // options are positions-asc, stop last
                       });
      const std::size_t m_limit =
          cfg.m == 0 ? order.size() : std::min(cfg.m, order.size());

      for (std::size_t oi = 0; oi < m_limit; ++oi) {
        const std::size_t opt = order[oi];
        const double logp_s = std::log(dist.probs[opt]);
        if (dist.options[opt].stop) {
          Entry done = entry;
          done.logprob += logp_s;
          done.steps += 1;
          done.done = true;
          if (cfg.keep_traces)
            done.trace.push_back({entry.state, std::nullopt, {}, logp_s, 0.0});
          next.push_back(std::move(done));
          continue;
        }
        const std::size_t pos = dist.options[opt].pos;
        ExpansionDistribution edist = policy.expand(entry.state, pos);
        const std::size_t n_limit = std::min(cfg.n, edist.items.size());
        for (std::size_t ei = 0; ei < n_limit; ++ei) {
          Entry child = entry;
          const double logp_e = std::log(edist.items[ei].prob);
          child.state = splice(entry.state, pos, edist.items[ei].expansion);
          child.logprob += logp_s + logp_e;
          child.steps += 1;
          if (cfg.keep_traces)
            child.trace.push_back(
                {entry.state, pos, edist.items[ei].expansion, logp_s, logp_e});
          next.push_back(std::move(child));
        }
      }
    }
    beam = std::move(next);
    prune(beam);
  }

  std::vector<BeamCandidate> out;
  out.reserve(beam.size());
  for (Entry& e : beam) {
    BeamCandidate c;
    c.sketch = nonterminals_to_holes(e.state);
    c.state = std::move(e.state);
    c.logprob = e.logprob;
    c.steps = e.steps;
    c.forced_stop = !e.done || e.forced;  // ran out of rounds or hit threshold
    c.trace = std::move(e.trace);
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::string render_item(const StateItem& item) {
  switch (item.kind) {
    case StateItem::Kind::Token: return item.text;
    case StateItem::Kind::Nonterm: return "<" + item.text + ">";
    case StateItem::Kind::LeafClass: return "<" + item.text + ">";
  }
  return "?";
}

}  // namespace

std::string format_trace(const GenerationTrace& trace) {
  std::string out;
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const GenerationStep& step = trace.steps[t];
    out += "x(" + std::to_string(t) + "):";
    for (std::size_t i = 0; i < step.state.items.size(); ++i) {
      out += ' ';
      const bool selected = step.position && *step.position == i;
      if (selected) out += '[';
      out += render_item(step.state.items[i]);
      if (selected) out += ']';
    }
    if (step.position) {
      out += "  =>";
      for (const StateItem& e : step.expansion) out += ' ' + render_item(e);
    } else {
      out += "  => stop";
    }
    out += '\n';
  }
  out += "sketch: " + render_sketch(trace.sketch) + '\n';
  return out;
}

}  // namespace sketchgen

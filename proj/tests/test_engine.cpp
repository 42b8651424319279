#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "sketchgen/corpus.hpp"
#include "sketchgen/engine.hpp"
#include "sketchgen/error.hpp"
#include "sketchgen/training.hpp"
#include "test_support.hpp"

using namespace sketchgen;

namespace {

struct ReplayStep {
  std::optional<std::size_t> position;  // nullopt: stop
  Expansion expansion;
};

// Plays back a fixed list of decisions with probability one.
class ReplayPolicy : public Policy {
 public:
  explicit ReplayPolicy(std::vector<ReplayStep> steps)
      : steps_(std::move(steps)) {}

  SelectorDistribution select(const SketchState& x) const override {
    SelectorDistribution d;
    const std::vector<std::size_t> positions = x.expandable_positions();
    for (std::size_t pos : positions) d.options.push_back({false, pos});
    d.options.push_back({true, 0});
    d.features.resize(d.options.size());
    d.probs.assign(d.options.size(), 0.0);
    if (positions.empty()) {
      d.probs.back() = 1.0;
      return d;
    }
    REQUIRE(cursor_ < steps_.size());
    const ReplayStep& s = steps_[cursor_];
    for (std::size_t i = 0; i < d.options.size(); ++i) {
      const bool chosen = s.position ? (!d.options[i].stop &&
                                        d.options[i].pos == *s.position)
                                     : d.options[i].stop;
      if (chosen) d.probs[i] = 1.0;
    }
    if (!s.position) ++cursor_;  // stop entries are consumed here
    return d;
  }

  ExpansionDistribution expand(const SketchState&, std::size_t) const override {
    REQUIRE(cursor_ < steps_.size());
    ExpansionDistribution d;
    d.items.push_back({steps_[cursor_].expansion, 1.0});
    ++cursor_;
    return d;
  }

 private:
  std::vector<ReplayStep> steps_;
  mutable std::size_t cursor_ = 0;
};

SketchState plain_state(std::vector<StateItem> items) {
  SketchState x;
  x.items = std::move(items);
  return x;
}

// Shared trained fixture over a small synthetic corpus.
struct EngineFixture {
  Grammar flat;
  ModelBundle bundle;
  std::vector<Example> examples;
};

const EngineFixture& engine_fixture() {
  static EngineFixture f = [] {
    EngineFixture out;
    out.flat = testsupport::minilang_flat();
    CorpusConfig ccfg;
    ccfg.num_files = 120;
    ccfg.seed = 51;
    ccfg.p_local = 0.2;
    std::vector<Example> train;
    for (long i = 0; i < 120; ++i)
      train.push_back(synth_file(testsupport::minilang(), ccfg, i));
    out.examples = train;
    TrainConfig tcfg;
    tcfg.seed = 5;
    tcfg.selector_epochs = 1;
    tcfg.max_batches_per_epoch = 5;
    tcfg.smoothing.min_count = 3;
    tcfg.start_symbol = out.flat.start;
    tcfg.jobs = 1;
    std::vector<Example> valid(train.begin(), train.begin() + 20);
    out.bundle = pretrain(train, valid, out.flat, tcfg);
    return out;
  }();
  return f;
}

}  // namespace

TEST_CASE("nonterminals_to_holes") {
  CHECK(nonterminals_to_holes(
            plain_state({StateItem::token("a"), StateItem::token("b")}))
            .hole_free());
  Sketch one = nonterminals_to_holes(plain_state({StateItem::nonterm("Expr")}));
  REQUIRE(one.items.size() == 1);
  CHECK(one.items[0].hole);
  Sketch mixed = nonterminals_to_holes(
      plain_state({StateItem::token("r"), StateItem::token("="),
                   StateItem::token("x"), StateItem::token("*"),
                   StateItem::token("("), StateItem::nonterm("Expr"),
                   StateItem::token("-"), StateItem::token("foo"),
                   StateItem::token("("), StateItem::token("args"),
                   StateItem::token(")"), StateItem::token(")")}));
  CHECK(render_sketch(mixed) == "r = x * ( ■ - foo ( args ) )");
}

TEST_CASE("generate: immediate stop returns holes of the initial state") {
  ReplayPolicy policy({{std::nullopt, {}}});
  SketchState x0 = plain_state(
      {StateItem::token("r"), StateItem::token("="), StateItem::nonterm("Expr")});
  GenerationTrace t = generate(policy, x0, nullptr, {});
  CHECK(t.steps.size() == 1);
  CHECK_FALSE(t.forced_stop);
  CHECK(render_sketch(t.sketch) == "r = ■");
  // Step table: one state line plus the sketch line.
  const std::string table = format_trace(t);
  CHECK(std::count(table.begin(), table.end(), '\n') == 2);
}

TEST_CASE("generate: staged rewrite reproduces the worked example sketch") {
  auto T = [](const char* s) { return StateItem::token(s); };
  auto N = [](const char* s) { return StateItem::nonterm(s); };
  std::vector<ReplayStep> script = {
      {2, {N("Expr"), T("*"), N("ParenthesizedExpr")}},
      {4, {T("("), N("Expr"), T(")")}},
      {5, {N("Expr"), T("-"), N("Expr")}},
      {7, {N("Identifier"), T("("), N("ArgList"), T(")")}},
      {7, {T("foo")}},
      {9, {N("Identifier")}},
      {9, {T("args")}},
      {2, {N("Identifier")}},
      {2, {T("x")}},
      {std::nullopt, {}},
  };
  ReplayPolicy policy(script);
  SketchState x0 = plain_state({T("r"), T("="), N("Expr")});
  GenerationTrace t = generate(policy, x0, nullptr, {});
  CHECK(render_sketch(t.sketch) == "r = x * ( ■ - foo ( args ) )");
  CHECK(t.steps.size() == 10);
  // One hole: the Expr left unexpanded at the final step.
  std::size_t holes = 0;
  for (const SketchItem& it : t.sketch.items) holes += it.hole ? 1 : 0;
  CHECK(holes == 1);
  // Replay invariant: states evolve exactly by splicing.
  SketchState replayed = replay_trace(t);
  CHECK(replayed == t.final_state);
  // One line per state plus the sketch line.
  const std::string table = format_trace(t);
  CHECK(std::count(table.begin(), table.end(), '\n') ==
        static_cast<std::ptrdiff_t>(t.steps.size() + 1));
}

TEST_CASE("generate: sampled outputs are hole-or-terminal and replay exactly") {
  const EngineFixture& f = engine_fixture();
  BundlePolicy policy(f.bundle);
  DecodeConfig dc;
  std::size_t total_steps = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    RandomSource rng = RandomSource::for_stream(61, i);
    const Example& ex = f.examples[i % f.examples.size()];
    SketchState x0 = initial_state(ex, f.flat.start);
    GenerationTrace t = generate(policy, x0, &rng, dc);
    for (const SketchItem& item : t.sketch.items)
      CHECK((item.hole || !item.token.empty()));
    CHECK(t.steps.size() <= dc.max_steps);
    SketchState replayed = replay_trace(t);
    CHECK(replayed == t.final_state);
    // Score additivity.
    double sum = 0.0;
    for (const GenerationStep& s : t.steps) sum += s.logp_select + s.logp_expand;
    CHECK(t.logprob == doctest::Approx(sum).epsilon(1e-12));
    total_steps += t.steps.size();
  }
  CHECK(total_steps > 1000);  // generation actually expands
}

TEST_CASE("generate: max_steps forces termination") {
  // Expansion that always rewrites the nonterminal to itself.
  ExpansionModel m;
  m.kinds["Loop"].order0[encode_expansion({StateItem::nonterm("Loop")})] = 1.0;
  ModelBundle bundle;
  bundle.selector =
      SelectorModel::for_grammar(parse_grammar("start Loop\nLoop -> \"x\"\n"));
  bundle.expansion = m;
  BundlePolicy policy(bundle);
  DecodeConfig dc;
  dc.max_steps = 16;
  dc.mask_stop = true;
  GenerationTrace t = generate(policy, plain_state({StateItem::nonterm("Loop")}),
                               nullptr, dc);
  CHECK(t.forced_stop);
  CHECK(t.steps.size() == 16);
  CHECK(render_sketch(t.sketch) == "■");
}

TEST_CASE("beam k=n=m=1 equals greedy decode on random contexts") {
  const EngineFixture& f = engine_fixture();
  RandomSource wrng(71);
  for (int trial = 0; trial < 100; ++trial) {
    ModelBundle tweaked = f.bundle;
    for (double& w : tweaked.selector.weights)
      w = (wrng.next_double() - 0.5) * 3.0;
    BundlePolicy policy(tweaked);
    const Example& ex = f.examples[trial % f.examples.size()];
    SketchState x0 = initial_state(ex, f.flat.start);
    GenerationTrace greedy = generate(policy, x0, nullptr, {});
    BeamConfig bc;
    bc.k = 1;
    bc.n = 1;
    bc.m = 1;
    std::vector<BeamCandidate> beam = beam_search(policy, x0, bc);
    REQUIRE(beam.size() == 1);
    CHECK(beam[0].sketch == greedy.sketch);
    CHECK(beam[0].logprob == doctest::Approx(greedy.logprob).epsilon(1e-12));
  }
}

namespace {

// Tiny hand-built bundle whose full outcome tree is small enough to
// enumerate: S -> a A B; A -> x | y; B -> u | v.
ModelBundle toy_bundle() {
  ExpansionModel m;
  m.kinds["S"].order0[encode_expansion({StateItem::token("a"),
                                        StateItem::nonterm("A"),
                                        StateItem::nonterm("B")})] = 1.0;
  m.kinds["A"].order0[encode_expansion({StateItem::token("x")})] = 3.0;
  m.kinds["A"].order0[encode_expansion({StateItem::token("y")})] = 1.0;
  m.kinds["B"].order0[encode_expansion({StateItem::token("u")})] = 2.0;
  m.kinds["B"].order0[encode_expansion({StateItem::token("v")})] = 2.0;
  ModelBundle bundle;
  bundle.expansion = std::move(m);
  bundle.selector = SelectorModel::for_grammar(parse_grammar(
      "start S\nS -> \"a\" A B\nA -> \"x\" | \"y\"\nB -> \"u\" | \"v\"\n"));
  return bundle;
}

}  // namespace

TEST_CASE("beam with unbounded width equals exhaustive outcome enumeration") {
  ModelBundle bundle = toy_bundle();
  BundlePolicy policy(bundle);
  SketchState x0 = plain_state({StateItem::nonterm("S")});

  std::vector<oracles::EnumeratedOutcome> expected;
  oracles::enumerate_outcomes(policy, x0, 0.0, 0, 64, expected);
  REQUIRE(expected.size() <= 500);

  BeamConfig bc;
  bc.k = 500;
  bc.n = 100;  // effectively unbounded for this inventory
  bc.m = 0;
  std::vector<BeamCandidate> beam = beam_search(policy, x0, bc);
  REQUIRE(beam.size() == expected.size());

  std::vector<std::pair<double, std::string>> got, want;
  for (const BeamCandidate& c : beam)
    got.push_back({c.logprob, render_sketch(c.sketch)});
  for (const oracles::EnumeratedOutcome& o : expected)
    want.push_back({o.logprob, render_sketch(o.sketch)});
  auto by = [](const std::pair<double, std::string>& a,
               const std::pair<double, std::string>& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  };
  std::sort(got.begin(), got.end(), by);
  std::sort(want.begin(), want.end(), by);
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].second == want[i].second);
    CHECK(got[i].first == doctest::Approx(want[i].first).epsilon(1e-9));
  }
}

TEST_CASE("beam output is sorted, bounded by k, and monotone in k") {
  const EngineFixture& f = engine_fixture();
  BundlePolicy policy(f.bundle);
  for (int trial = 0; trial < 20; ++trial) {
    const Example& ex = f.examples[trial];
    SketchState x0 = initial_state(ex, f.flat.start);
    BeamConfig k5;
    k5.k = 5;
    std::vector<BeamCandidate> five = beam_search(policy, x0, k5);
    CHECK(five.size() <= 5);
    for (std::size_t i = 1; i < five.size(); ++i)
      CHECK(five[i - 1].logprob >= five[i].logprob);
    BeamConfig k2;
    k2.k = 2;
    std::vector<BeamCandidate> two = beam_search(policy, x0, k2);
    REQUIRE(!two.empty());
    REQUIRE(!five.empty());
    // Widening the beam never worsens the best score.
    CHECK(five[0].logprob >= two[0].logprob - 1e-12);
  }
}

TEST_CASE("beam rejects zero k or n") {
  ModelBundle bundle = toy_bundle();
  BundlePolicy policy(bundle);
  SketchState x0 = plain_state({StateItem::nonterm("S")});
  BeamConfig bad;
  bad.k = 0;
  CHECK_THROWS_AS(beam_search(policy, x0, bad), DataError);
}

TEST_CASE("hole-free outputs parse under the flattened grammar") {
  // With stop masked and expansions drawn from trained inventories, every
  // completed output is a derivable statement.
  const EngineFixture& f = engine_fixture();
  BeamConfig bc;
  bc.k = 3;
  bc.decode.mask_stop = true;
  UniformPolicy policy(f.bundle.expansion);
  int parsed = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const Example& ex = f.examples[trial];
    SketchState x0 = initial_state(ex, f.flat.start);
    for (const BeamCandidate& c : beam_search(policy, x0, bc)) {
      if (!c.sketch.hole_free()) continue;  // step-capped stragglers
      std::vector<std::string> toks;
      for (const SketchItem& item : c.sketch.items) toks.push_back(item.token);
      CHECK(recognizes(classify_tokens(toks, f.flat), f.flat, f.flat.start));
      ++parsed;
    }
  }
  CHECK(parsed > 10);
}

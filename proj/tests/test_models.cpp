#include <doctest.h>

#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "sketchgen/corpus.hpp"
#include "sketchgen/error.hpp"
#include "sketchgen/models.hpp"
#include "sketchgen/training.hpp"
#include "test_support.hpp"

using namespace sketchgen;

namespace {

SketchState state_of(std::vector<StateItem> items) {
  SketchState x;
  x.items = std::move(items);
  return x;
}

// Expansion tables trained on a batch of synthetic MiniLang files.
struct Fixture {
  Grammar flat;
  ExpansionModel expansion;
  SelectorModel selector;
  std::vector<ExpansionTrace> traces;
  std::vector<Example> examples;
};

const Fixture& fixture() {
  static Fixture f = [] {
    Fixture out;
    out.flat = testsupport::minilang_flat();
    CorpusConfig cfg;
    cfg.num_files = 80;
    cfg.seed = 21;
    cfg.p_local = 0.2;
    std::set<std::string> vocab;
    std::map<std::string, int> freq;
    for (long i = 0; i < static_cast<long>(cfg.num_files); ++i) {
      out.examples.push_back(synth_file(testsupport::minilang(), cfg, i));
      for (const std::string& t : out.examples.back().target) ++freq[t];
      for (const std::string& t : out.examples.back().context) ++freq[t];
    }
    for (const auto& [tok, c] : freq)
      if (c >= 3) vocab.insert(tok);
    for (std::size_t i = 0; i < out.examples.size(); ++i) {
      RandomSource rng = RandomSource::for_stream(31, i);
      out.traces.push_back(
          make_expansion_traces(out.examples[i], out.flat, rng));
    }
    SmoothingConfig smoothing;
    smoothing.min_count = 3;
    out.expansion = train_expansion_counts(out.traces, vocab, smoothing);
    out.selector = SelectorModel::for_grammar(out.flat);
    return out;
  }();
  return f;
}

}  // namespace

TEST_CASE("selector_dist: zero weights give a uniform distribution") {
  const Fixture& f = fixture();
  SketchState x = state_of({StateItem::token("r"), StateItem::nonterm("Expr"),
                            StateItem::nonterm("Term"),
                            StateItem::leaf_class("IDENT")});
  SelectorDistribution d = selector_dist(f.selector, x, f.expansion);
  REQUIRE(d.options.size() == 4);  // 3 positions + stop
  for (double p : d.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
  double total = 0.0;
  for (double p : d.probs) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("selector_dist: no expandable positions forces stop") {
  const Fixture& f = fixture();
  SketchState x = state_of({StateItem::token("a"), StateItem::token("b")});
  SelectorDistribution d = selector_dist(f.selector, x, f.expansion);
  REQUIRE(d.options.size() == 1);
  CHECK(d.options[0].stop);
  CHECK(d.probs[0] == 1.0);
}

TEST_CASE("selector_dist: +10 on a kind feature dominates") {
  const Fixture& f = fixture();
  SelectorModel m = f.selector;
  m.weights[m.feature("kind:Expr")] = 10.0;
  SketchState x = state_of({StateItem::nonterm("Expr"), StateItem::token("="),
                            StateItem::nonterm("Term"),
                            StateItem::nonterm("Args")});
  SelectorDistribution d = selector_dist(m, x, f.expansion);
  // softmax(10,0,0,0) puts e^10/(e^10+3) ~ 0.99986 on the boosted option.
  REQUIRE(d.options[0].pos == 0);
  CHECK(d.probs[0] > 0.99);
}

TEST_CASE("selector stop option always has nonzero probability") {
  const Fixture& f = fixture();
  SelectorModel m = f.selector;
  m.weights[m.feature("kind:Expr")] = 30.0;
  SketchState x = state_of({StateItem::nonterm("Expr")});
  SelectorDistribution d = selector_dist(m, x, f.expansion);
  CHECK(d.probs[d.stop_index()] > 0.0);
}

TEST_CASE("selector_grad: two-option uniform case is (f_a - f_b)/2") {
  const Fixture& f = fixture();
  SketchState x = state_of({StateItem::nonterm("Expr")});
  SelectorDistribution d = selector_dist(f.selector, x, f.expansion);
  REQUIRE(d.options.size() == 2);
  CHECK(d.probs[0] == doctest::Approx(0.5));
  std::vector<double> g =
      selector_grad(f.selector, x, SelectorOption{false, 0}, f.expansion);
  // Indicator difference of the two feature sets, halved.
  std::vector<double> expected(f.selector.weights.size(), 0.0);
  for (std::size_t fi : d.features[0]) expected[fi] += 0.5;
  for (std::size_t fi : d.features[1]) expected[fi] -= 0.5;
  REQUIRE(g.size() == expected.size());
  for (std::size_t k = 0; k < g.size(); ++k)
    CHECK(g[k] == doctest::Approx(expected[k]).epsilon(1e-12));
}

TEST_CASE("selector_grad: point-mass choice has zero gradient") {
  const Fixture& f = fixture();
  SketchState x = state_of({StateItem::token("a")});
  std::vector<double> g =
      selector_grad(f.selector, x, SelectorOption{true, 0}, f.expansion);
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("selector_grad: matches central finite differences") {
  const Fixture& f = fixture();
  RandomSource rng(37);
  SelectorModel m = f.selector;
  int checked = 0;
  for (std::size_t ti = 0; checked < 100; ti = (ti + 1) % f.traces.size()) {
    const ExpansionTrace& trace = f.traces[ti];
    if (trace.steps.empty()) continue;
    const ExpansionTraceStep& step =
        trace.steps[rng.next_index(trace.steps.size())];
    // Fresh random weights each probe.
    for (double& w : m.weights) w = (rng.next_double() - 0.5) * 2.0;
    SelectorDistribution d = selector_dist(m, step.state, f.expansion);
    const std::size_t pick = rng.next_index(d.options.size());
    std::vector<double> analytic =
        selector_grad(m, step.state, d.options[pick], f.expansion);
    std::vector<double> numeric =
        oracles::fd_selector_grad(m, step.state, d.options[pick], f.expansion);
    for (std::size_t k = 0; k < analytic.size(); ++k) {
      const double scale = std::max(1.0, std::abs(numeric[k]));
      CHECK(std::abs(analytic[k] - numeric[k]) / scale < 1e-5);
    }
    ++checked;
  }
}

TEST_CASE("expansion_dist: single observed expansion keeps probability 1") {
  ExpansionModel m;
  m.smoothing.alpha = 0.1;
  m.kinds["K"].order0[encode_expansion({StateItem::token("a")})] = 5.0;
  SketchState x = state_of({StateItem::nonterm("K")});
  ExpansionDistribution d = expansion_dist(m, x, 0);
  REQUIRE(d.items.size() == 1);
  // (5 + 0.1) / (5 + 0.1 * 1): inventory of one, so smoothing cancels.
  CHECK(d.items[0].prob == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.entropy() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("expansion_dist: additive smoothing arithmetic at the lowest order") {
  ExpansionModel m;
  m.smoothing.alpha = 0.1;
  m.kinds["K"].order0[encode_expansion({StateItem::token("a")})] = 9.0;
  m.kinds["K"].order0[encode_expansion({StateItem::token("b")})] = 1.0;
  SketchState x = state_of({StateItem::nonterm("K")});
  ExpansionDistribution d = expansion_dist(m, x, 0);
  REQUIRE(d.items.size() == 2);
  CHECK(d.items[0].prob == doctest::Approx(9.1 / 10.2).epsilon(1e-12));
  CHECK(d.items[1].prob == doctest::Approx(1.1 / 10.2).epsilon(1e-12));
}

TEST_CASE("expansion_dist: absolute-discount interpolation, hand numbers") {
  ExpansionModel m;
  m.smoothing.alpha = 0.1;
  m.smoothing.discount = 0.5;
  const std::string ka = encode_expansion({StateItem::token("a")});
  const std::string kb = encode_expansion({StateItem::token("b")});
  m.kinds["K"].order0[ka] = 3.0;
  m.kinds["K"].order0[kb] = 1.0;
  SketchState x = state_of({StateItem::nonterm("K")});
  // No order-1 counts for signature "^": pure lowest order.
  ExpansionDistribution base = expansion_dist(m, x, 0);
  const double p0a = 3.1 / 4.2, p0b = 1.1 / 4.2;
  CHECK(base.items[0].prob == doctest::Approx(p0a).epsilon(1e-12));
  CHECK(base.items[1].prob == doctest::Approx(p0b).epsilon(1e-12));

  // One observed count of "a" under the left-edge signature: discount 0.5
  // stays, 0.5 is redistributed along the lower order.
  m.kinds["K"].order1[m.signature1(x, 0)][ka] = 1.0;
  ExpansionDistribution d = expansion_dist(m, x, 0);
  CHECK(d.items[0].prob == doctest::Approx(0.5 + 0.5 * p0a).epsilon(1e-12));
  CHECK(d.items[1].prob == doctest::Approx(0.5 * p0b).epsilon(1e-12));
  CHECK(d.total() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("expansion_dist: clearing the highest order reproduces the next") {
  const Fixture& f = fixture();
  ExpansionModel cleared = f.expansion;
  for (auto& [kind, table] : cleared.kinds) table.order2.clear();
  for (const ExpansionTrace& trace : f.traces) {
    for (const ExpansionTraceStep& step : trace.steps) {
      for (std::size_t pos : step.positions) {
        if (step.state.items[pos].kind != StateItem::Kind::Nonterm) continue;
        // A model whose order-2 table never saw this signature must agree
        // with the cleared model bitwise.
        ExpansionModel unseen_sig = f.expansion;
        unseen_sig.kinds.at(step.state.items[pos].text)
            .order2.erase(unseen_sig.signature2(step.state, pos));
        ExpansionDistribution a = expansion_dist(unseen_sig, step.state, pos);
        ExpansionDistribution b = expansion_dist(cleared, step.state, pos);
        REQUIRE(a.items.size() == b.items.size());
        for (std::size_t i = 0; i < a.items.size(); ++i) {
          CHECK(a.items[i].expansion == b.items[i].expansion);
          CHECK(a.items[i].prob == b.items[i].prob);
        }
      }
      break;  // one step per trace keeps this cheap
    }
  }
}

TEST_CASE("expansion_dist: every emitted distribution sums to 1") {
  const Fixture& f = fixture();
  std::size_t checked = 0;
  for (const ExpansionTrace& trace : f.traces) {
    for (const ExpansionTraceStep& step : trace.steps) {
      for (std::size_t pos : step.positions) {
        ExpansionDistribution d = expansion_dist(f.expansion, step.state, pos);
        CHECK(d.total() == doctest::Approx(1.0).epsilon(1e-9));
        ++checked;
      }
    }
    if (checked > 500) break;
  }
  CHECK(checked > 100);
}

TEST_CASE("expansion_dist: unseen nonterminal kind is an error") {
  const Fixture& f = fixture();
  SketchState x = state_of({StateItem::nonterm("NoSuchKind")});
  CHECK_THROWS_WITH_AS(expansion_dist(f.expansion, x, 0),
                       doctest::Contains("unknown nonterminal"), DataError);
}

TEST_CASE("expansion_dist: call-shaped expansion is in the inventory") {
  const Fixture& f = fixture();
  // Flattening inlines the call wrapper, so statements can expand directly
  // to Callee ( Args ).
  SketchState x = state_of({StateItem::nonterm("Statement")});
  ExpansionDistribution d = expansion_dist(f.expansion, x, 0);
  const Expansion call_shape = {StateItem::nonterm("Callee"),
                                StateItem::token("("),
                                StateItem::nonterm("Args"),
                                StateItem::token(")")};
  bool found = false;
  for (const ExpansionCandidate& c : d.items)
    if (c.expansion == call_shape) found = true;
  CHECK(found);
}

TEST_CASE("train_expansion_counts: counting is deterministic and duplication "
          "exactly doubles the counts") {
  const Fixture& f = fixture();
  SmoothingConfig smoothing;
  smoothing.min_count = 3;
  // Same corpus twice: identical model.
  ExpansionModel again =
      train_expansion_counts(f.traces, f.expansion.signature_vocab, smoothing);
  CHECK(again.kinds.size() == f.expansion.kinds.size());
  for (const auto& [kind, table] : f.expansion.kinds) {
    CHECK(again.kinds.at(kind).order0 == table.order0);
    CHECK(again.kinds.at(kind).order1 == table.order1);
    CHECK(again.kinds.at(kind).order2 == table.order2);
  }
  // Duplicated corpus: every count scales by exactly 2 (the smoothed
  // predictive distributions sharpen with mass, as intended).
  std::vector<ExpansionTrace> doubled = f.traces;
  doubled.insert(doubled.end(), f.traces.begin(), f.traces.end());
  ExpansionModel twice =
      train_expansion_counts(doubled, f.expansion.signature_vocab, smoothing);
  for (const auto& [kind, table] : f.expansion.kinds)
    for (const auto& [key, c] : table.order0)
      CHECK(twice.kinds.at(kind).order0.at(key) == 2.0 * c);
}

TEST_CASE("train_expansion_counts: permutation-invariant over the trace stream") {
  const Fixture& f = fixture();
  SmoothingConfig smoothing;
  smoothing.min_count = 3;
  std::vector<ExpansionTrace> reversed(f.traces.rbegin(), f.traces.rend());
  ExpansionModel rev =
      train_expansion_counts(reversed, f.expansion.signature_vocab, smoothing);
  for (const auto& [kind, table] : f.expansion.kinds) {
    CHECK(rev.kinds.at(kind).order0 == table.order0);
    CHECK(rev.kinds.at(kind).order1 == table.order1);
    CHECK(rev.kinds.at(kind).order2 == table.order2);
  }
}

TEST_CASE("train_expansion_counts: beats the uniform model on training NLL") {
  const Fixture& f = fixture();
  double model_nll = 0.0, uniform_nll = 0.0;
  for (const ExpansionTrace& trace : f.traces) {
    for (const ExpansionTraceStep& step : trace.steps) {
      for (std::size_t k = 0; k < step.positions.size(); ++k) {
        const std::size_t pos = step.positions[k];
        if (step.state.items[pos].kind != StateItem::Kind::Nonterm) continue;
        ExpansionDistribution d = expansion_dist(f.expansion, step.state, pos);
        model_nll -= d.log_prob(step.truths[k]);
        uniform_nll -= std::log(1.0 / static_cast<double>(d.items.size()));
      }
    }
  }
  CHECK(model_nll <= uniform_nll);
}

TEST_CASE("train_expansion_counts: empty corpus is an error") {
  CHECK_THROWS_AS(train_expansion_counts({}, {}, {}), DataError);
}

TEST_CASE("lexeme distributions expose pruned mass as unknown") {
  const Fixture& f = fixture();
  SketchState x = state_of({StateItem::leaf_class("IDENT")});
  ExpansionDistribution d = expansion_dist(f.expansion, x, 0);
  CHECK(d.unknown_mass > 0.0);  // locals were pruned below min_count
  CHECK(d.unknown_mass < 1.0);
  CHECK(d.total() == doctest::Approx(1.0).epsilon(1e-9));
  // Unknown mass floors at lambda_unk.
  CHECK(d.unknown_mass >= f.expansion.smoothing.lambda_unk - 1e-12);
}

TEST_CASE("model bundle save/load reproduces distributions exactly") {
  const Fixture& f = fixture();
  ModelBundle bundle;
  bundle.selector = f.selector;
  RandomSource rng(41);
  for (double& w : bundle.selector.weights) w = rng.next_double() - 0.5;
  bundle.expansion = f.expansion;
  ModelBundle::Snapshot snap;
  snap.selector = bundle.selector;
  snap.expansion = bundle.expansion;
  snap.valid_reward = 0.25;
  bundle.snapshot = snap;

  const std::string path = "/tmp/sketchgen_test_bundle.json";
  save_bundle(bundle, path);
  ModelBundle loaded = load_bundle(path);
  CHECK(loaded.selector.weights == bundle.selector.weights);
  CHECK(loaded.selector.feature_index == bundle.selector.feature_index);
  REQUIRE(loaded.snapshot.has_value());
  CHECK(loaded.snapshot->valid_reward == 0.25);

  for (const ExpansionTrace& trace : f.traces) {
    for (const ExpansionTraceStep& step : trace.steps) {
      for (std::size_t pos : step.positions) {
        ExpansionDistribution a = expansion_dist(bundle.expansion, step.state, pos);
        ExpansionDistribution b = expansion_dist(loaded.expansion, step.state, pos);
        REQUIRE(a.items.size() == b.items.size());
        for (std::size_t i = 0; i < a.items.size(); ++i)
          CHECK(a.items[i].prob == b.items[i].prob);  // bitwise
      }
      break;
    }
  }
}

TEST_CASE("loading an unsupported model version fails loudly") {
  const std::string path = "/tmp/sketchgen_test_badversion.json";
  {
    nlohmann::json j{{"meta", {{"version", 0}, {"kind", "bundle"}}}};
    std::FILE* fp = std::fopen(path.c_str(), "w");
    REQUIRE(fp);
    const std::string text = j.dump();
    std::fwrite(text.data(), 1, text.size(), fp);
    std::fclose(fp);
  }
  CHECK_THROWS_WITH_AS(load_bundle(path),
                       doctest::Contains("unsupported model version"), DataError);
}

TEST_CASE("sequence model: next_dist sums to 1 and folds rare context") {
  std::vector<std::string> ctx = {"a", "b"};
  std::vector<std::string> t1 = {"x", "y"};
  std::vector<std::string> t2 = {"x", "z"};
  SmoothingConfig smoothing;
  smoothing.min_count = 1;
  SequenceModel m = train_sequence_counts(
      {{&ctx, &t1}, {&ctx, &t2}}, BaselineVariant::LeftToRight, smoothing);
  TokenDistribution d = m.next_dist(m.fold("a"), m.fold("b"));
  double total = d.unknown_mass;
  for (const auto& [tok, p] : d.items) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(d.items[0].first == "x");  // both sequences start with x
  CHECK(m.fold("never-seen") == SequenceModel::kRare);
}

TEST_CASE("sequence model: save/load round trip") {
  std::vector<std::string> ctx = {"a"};
  std::vector<std::string> t1 = {"x", "y"};
  SmoothingConfig smoothing;
  smoothing.min_count = 1;
  SequenceModel m = train_sequence_counts({{&ctx, &t1}},
                                          BaselineVariant::LeftToRightStop,
                                          smoothing);
  m.stop_weights[3] = 0.75;
  const std::string path = "/tmp/sketchgen_test_seq.json";
  save_sequence_model(m, path);
  SequenceModel loaded = load_sequence_model(path);
  CHECK(loaded.variant == m.variant);
  CHECK(loaded.uni == m.uni);
  CHECK(loaded.bi == m.bi);
  CHECK(loaded.tri == m.tri);
  CHECK(loaded.stop_weights == m.stop_weights);
  CHECK(loaded.vocab == m.vocab);
}

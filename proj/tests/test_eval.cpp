#include <doctest.h>

#include <sstream>

#include "sketchgen/corpus.hpp"
#include "sketchgen/eval.hpp"
#include "test_support.hpp"

using namespace sketchgen;

namespace {

struct EvalFixture {
  Grammar flat;
  std::vector<Example> train, valid, test;
  ModelBundle pretrained;
  ModelBundle finetuned;
  SequenceModel lr;
  TrainConfig cfg;
};

const EvalFixture& eval_fixture() {
  static EvalFixture f = [] {
    EvalFixture out;
    out.flat = testsupport::minilang_flat();
    CorpusConfig ccfg;
    ccfg.num_files = 150;
    ccfg.seed = 31;
    ccfg.p_local = 0.3;
    std::vector<Example> all;
    for (long i = 0; i < 150; ++i)
      all.push_back(synth_file(testsupport::minilang(), ccfg, i));
    out.train.assign(all.begin(), all.begin() + 100);
    out.valid.assign(all.begin() + 100, all.begin() + 120);
    out.test.assign(all.begin() + 120, all.end());
    out.cfg.seed = 17;
    out.cfg.selector_epochs = 2;
    out.cfg.finetune_epochs = 2;
    out.cfg.max_batches_per_epoch = 8;
    out.cfg.smoothing.min_count = 3;
    out.cfg.start_symbol = out.flat.start;
    out.cfg.jobs = 1;
    out.pretrained = pretrain(out.train, out.valid, out.flat, out.cfg);
    TrainState ts;
    ts.bundle = out.pretrained;
    train_epochs(ts, out.train, out.valid, TrainMode::Full, 2, out.cfg);
    out.finetuned = ts.bundle;
    out.lr = train_baseline(BaselineVariant::LeftToRight, out.train, out.valid,
                            out.flat, out.cfg);
    return out;
  }();
  return f;
}

}  // namespace

TEST_CASE("evaluate: top-5 never falls below top-1 and scores stay in range") {
  const EvalFixture& f = eval_fixture();
  BeamConfig beam;
  ModelReport report = evaluate(
      "grammformer", grammar_completer(f.finetuned, f.flat.start, beam), f.test, 1);
  CHECK(report.regex_top5 >= report.regex_top1 - 1e-12);
  CHECK(report.regex_top1 >= 0.0);
  CHECK(report.regex_top1 <= 1.0);
  CHECK(report.records.size() == f.test.size());
  for (const EvalRecord& rec : report.records) {
    CHECK(rec.top5_regex >= rec.top1_regex - 1e-12);
    CHECK(rec.gt_len >= 1);
  }
}

TEST_CASE("evaluate: an always-hole completer scores zero with zero length") {
  const EvalFixture& f = eval_fixture();
  CompleterFactory always_hole = []() -> Completer {
    return [](const Example&) {
      Sketch s;
      s.items.push_back(SketchItem::make_hole());
      return std::vector<Sketch>{s};
    };
  };
  ModelReport report = evaluate("hole", always_hole, f.test, 1);
  CHECK(report.regex_top1 == 0.0);
  CHECK(report.avg_len == 0.0);
}

TEST_CASE("evaluate: a memorizing completer scores one") {
  const EvalFixture& f = eval_fixture();
  std::vector<Example> mini(f.test.begin(), f.test.begin() + 10);
  // Oracle that returns the ground truth itself.
  CompleterFactory oracle = [&]() -> Completer {
    return [](const Example& ex) {
      return std::vector<Sketch>{sketch_from_tokens(ex.target)};
    };
  };
  ModelReport report = evaluate("oracle", oracle, mini, 1);
  CHECK(report.regex_top1 == doctest::Approx(1.0));
  CHECK(report.rouge_l == doctest::Approx(1.0));
}

TEST_CASE("metrics_csv: header carries the split hash, one row per model") {
  const EvalFixture& f = eval_fixture();
  BeamConfig beam;
  std::vector<ModelReport> reports;
  reports.push_back(evaluate(
      "grammformer", grammar_completer(f.finetuned, f.flat.start, beam), f.test, 1));
  reports.push_back(evaluate("lr", sequence_completer(f.lr, 5, 64), f.test, 1));
  const std::string csv = metrics_csv(reports, split_hash(f.test));
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line.rfind("# split_hash=", 0) == 0);
  std::getline(lines, line);
  CHECK(line ==
        "model,regex_acc_top1,regex_acc_top5,rouge_l_f1,rouge_1_f1,rouge_2_f1,"
        "avg_sketch_len,n");
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("bucket_csv: buckets partition the examples") {
  const EvalFixture& f = eval_fixture();
  BeamConfig beam;
  std::vector<ModelReport> reports{evaluate(
      "grammformer", grammar_completer(f.finetuned, f.flat.start, beam), f.test, 1)};
  const std::string csv = bucket_csv(reports, {2, 4, 6, 9, 13}, split_hash(f.test));
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // hash
  std::getline(lines, line);  // header
  std::size_t total = 0;
  while (std::getline(lines, line)) {
    const std::size_t last_comma = line.rfind(',');
    total += std::stoul(line.substr(last_comma + 1));
  }
  CHECK(total == f.test.size());
}

TEST_CASE("bucket_csv: a single open bucket reproduces the global averages") {
  const EvalFixture& f = eval_fixture();
  BeamConfig beam;
  ModelReport report = evaluate(
      "grammformer", grammar_completer(f.finetuned, f.flat.start, beam), f.test, 1);
  const std::string csv = bucket_csv({report}, {}, split_hash(f.test));
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  std::getline(lines, line);  // the only data row: "1+,model,len,match,n"
  std::istringstream row(line);
  std::string bucket, model, len, match, n;
  std::getline(row, bucket, ',');
  std::getline(row, model, ',');
  std::getline(row, len, ',');
  std::getline(row, match, ',');
  std::getline(row, n, ',');
  CHECK(bucket == "1+");
  CHECK(std::stoul(n) == f.test.size());
  CHECK(std::stod(len) == doctest::Approx(report.avg_len).epsilon(1e-6));
}

TEST_CASE("evaluate: deterministic across repeated runs") {
  const EvalFixture& f = eval_fixture();
  BeamConfig beam;
  ModelReport a = evaluate(
      "grammformer", grammar_completer(f.finetuned, f.flat.start, beam), f.test, 1);
  ModelReport b = evaluate(
      "grammformer", grammar_completer(f.finetuned, f.flat.start, beam), f.test, 1);
  CHECK(metrics_csv({a}, split_hash(f.test)) == metrics_csv({b}, split_hash(f.test)));
}

TEST_CASE("run_ablations: emits the full variant table") {
  const EvalFixture& f = eval_fixture();
  AblationConfig acfg;
  acfg.beam.k = 3;
  acfg.train = f.cfg;
  acfg.train.finetune_epochs = 1;
  acfg.train.max_batches_per_epoch = 4;
  AblationResult result = run_ablations(f.pretrained, f.finetuned, f.train,
                                        f.valid, f.test, f.flat, acfg);
  REQUIRE(result.reports.size() == 6);
  CHECK(result.reports[0].name == "grammformer");
  CHECK(result.reports[1].name == "random_expansion_no_stop");
  CHECK(result.reports[2].name == "random_expansion_threshold");
  CHECK(result.reports[3].name == "reward_rouge_only");
  CHECK(result.reports[4].name == "reward_regexacc_only");
  CHECK(result.reports[5].name == "grammformer_no_stop");
  bool tau_in_grid = false;
  for (double tau : acfg.tau_grid)
    if (tau == result.chosen_tau) tau_in_grid = true;
  CHECK(tau_in_grid);
  // Threshold stopping cannot make sketches longer than never stopping.
  CHECK(result.reports[2].avg_len <= result.reports[1].avg_len + 1e-9);
}

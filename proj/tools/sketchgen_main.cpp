// sketchgen: grammar-guided statement-sketch completion pipeline.
//
// Subcommands cover the full workflow: synthetic corpus generation,
// expansion/selector pretraining, self-critical fine-tuning, baseline
// training, completion, scoring, evaluation, and ablations.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sketchgen/corpus.hpp"
#include "sketchgen/engine.hpp"
#include "sketchgen/error.hpp"
#include "sketchgen/eval.hpp"
#include "sketchgen/metrics.hpp"
#include "sketchgen/minilang.hpp"
#include "sketchgen/training.hpp"
#include "sketchgen/util.hpp"

namespace sg = sketchgen;

namespace {

struct GrammarOption {
  std::string path;  // empty: built-in MiniLang

  sg::Grammar load() const {
    std::vector<std::string> warnings;
    sg::Grammar g = sg::parse_grammar(
        path.empty() ? std::string(sg::kMiniLangGrammar) : sg::read_file(path),
        &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << '\n';
    return g;
  }
};

void add_grammar_flag(CLI::App* cmd, GrammarOption& opt) {
  cmd->add_option("--grammar", opt.path,
                  "Grammar file (defaults to the built-in MiniLang)");
}

struct TrainFlags {
  sg::TrainConfig cfg;

  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
    cmd->add_option("--lr", cfg.lr, "Selector learning rate")
        ->capture_default_str();
    cmd->add_option("--batch", cfg.batch, "Batch size")->capture_default_str();
    cmd->add_option("--count-lr", cfg.count_lr,
                    "Fractional-count step for full-mode updates")
        ->capture_default_str();
    cmd->add_option("--patience", cfg.patience,
                    "Early stop after this many non-improving validations")
        ->capture_default_str();
    cmd->add_option("--max-batches", cfg.max_batches_per_epoch,
                    "Batches per epoch (0 = full pass)")
        ->capture_default_str();
    cmd->add_option("--max-steps", cfg.max_steps, "Generation step cap")
        ->capture_default_str();
    cmd->add_option("--discount", cfg.smoothing.discount,
                    "Absolute discount for backoff levels")
        ->capture_default_str();
    cmd->add_option("--alpha", cfg.smoothing.alpha,
                    "Additive smoothing at the lowest order")
        ->capture_default_str();
    cmd->add_option("--lambda-unk", cfg.smoothing.lambda_unk,
                    "Reserved unknown-lexeme mass")
        ->capture_default_str();
    cmd->add_option("--min-count", cfg.smoothing.min_count,
                    "Vocabulary pruning threshold")
        ->capture_default_str();
    cmd->add_option("--jobs", cfg.jobs, "Worker threads (0 = hardware)")
        ->capture_default_str();
  }
};

sg::RewardKind reward_from_name(const std::string& name) {
  if (name == "mixed") return sg::RewardKind::Mixed;
  if (name == "rouge") return sg::RewardKind::RougeOnly;
  if (name == "regexacc") return sg::RewardKind::RegexAccOnly;
  throw sg::DataError("unknown reward '" + name + "'");
}

std::vector<std::string> context_tokens(const std::string& text,
                                        const sg::Grammar& g) {
  std::vector<std::string> out;
  for (const sg::Token& t : sg::tokenize(text, g)) out.push_back(t.text);
  return out;
}

std::ofstream open_log(const std::string& path) {
  std::ofstream out;
  if (!path.empty()) {
    out.open(path);
    if (!out) throw sg::DataError("cannot write log " + path);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Grammar-guided statement-sketch completion"};
  app.require_subcommand(1);
  app.set_config("--config");

  // --- gen-corpus -----------------------------------------------------------
  GrammarOption gen_grammar;
  sg::CorpusConfig corpus_cfg;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus");
  add_grammar_flag(gen, gen_grammar);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--files", corpus_cfg.num_files, "Number of synthetic files")
      ->capture_default_str();
  gen->add_option("--seed", corpus_cfg.seed, "Random seed")->capture_default_str();
  gen->add_option("--p-local", corpus_cfg.p_local,
                  "Chance an IDENT/STRING leaf draws from the file-local pool")
      ->capture_default_str();
  gen->add_option("--min-statements", corpus_cfg.min_statements,
                  "Fewest statements per file")
      ->capture_default_str();
  gen->add_option("--max-statements", corpus_cfg.max_statements,
                  "Most statements per file")
      ->capture_default_str();
  gen->add_option("--context-len", corpus_cfg.context_len,
                  "Context token cap per example")
      ->capture_default_str();
  gen->add_option("--recursion-damping", corpus_cfg.recursion_damping,
                  "Weight factor per recursive rhs nonterminal")
      ->capture_default_str();
  gen->add_option("--jobs", corpus_cfg.jobs, "Worker threads (0 = hardware)")
      ->capture_default_str();

  // --- pretrain ---------------------------------------------------------------
  GrammarOption pre_grammar;
  TrainFlags pre_flags;
  std::string pre_train, pre_valid, pre_out, pre_log;
  auto* pre = app.add_subcommand(
      "pretrain", "Train expansion counts, then selector weights");
  add_grammar_flag(pre, pre_grammar);
  pre->add_option("--train", pre_train, "Training JSONL")->required();
  pre->add_option("--valid", pre_valid, "Validation JSONL")->required();
  pre->add_option("--out", pre_out, "Output model file")->required();
  pre->add_option("--selector-epochs", pre_flags.cfg.selector_epochs,
                  "Selector pretraining epochs")
      ->capture_default_str();
  pre->add_option("--log", pre_log, "Training log CSV path");
  pre_flags.attach(pre);

  // --- finetune ----------------------------------------------------------------
  GrammarOption ft_grammar;
  TrainFlags ft_flags;
  std::string ft_model, ft_train, ft_valid, ft_out, ft_log;
  std::string ft_mode = "full", ft_reward = "mixed";
  auto* ft = app.add_subcommand("finetune",
                                "Self-critical fine-tuning of a bundle");
  add_grammar_flag(ft, ft_grammar);
  ft->add_option("--model", ft_model, "Pretrained bundle")->required();
  ft->add_option("--train", ft_train, "Training JSONL")->required();
  ft->add_option("--valid", ft_valid, "Validation JSONL")->required();
  ft->add_option("--out", ft_out, "Output model file")->required();
  ft->add_option("--epochs", ft_flags.cfg.finetune_epochs, "Fine-tuning epochs")
      ->capture_default_str();
  ft->add_option("--mode", ft_mode, "full | selector")->capture_default_str();
  ft->add_option("--reward", ft_reward, "mixed | rouge | regexacc")
      ->capture_default_str();
  ft->add_option("--log", ft_log, "Training log CSV path");
  ft_flags.attach(ft);

  // --- train-baseline -------------------------------------------------------------
  GrammarOption bl_grammar;
  TrainFlags bl_flags;
  std::string bl_variant = "lr", bl_train, bl_valid, bl_out, bl_log;
  auto* bl = app.add_subcommand("train-baseline",
                                "Train a left-to-right baseline");
  add_grammar_flag(bl, bl_grammar);
  bl->add_option("--variant", bl_variant, "lr | lr-stop | lr-hole")
      ->capture_default_str();
  bl->add_option("--train", bl_train, "Training JSONL")->required();
  bl->add_option("--valid", bl_valid, "Validation JSONL")->required();
  bl->add_option("--out", bl_out, "Output model file")->required();
  bl->add_option("--epochs", bl_flags.cfg.finetune_epochs,
                 "Fine-tuning epochs (lr-stop / lr-hole)")
      ->capture_default_str();
  bl->add_option("--p-hole", bl_flags.cfg.p_hole,
                 "Hole probability for lr-hole pretraining data")
      ->capture_default_str();
  bl->add_option("--log", bl_log, "Training log CSV path");
  bl_flags.attach(bl);

  // --- complete ---------------------------------------------------------------
  GrammarOption cm_grammar;
  std::string cm_model, cm_context, cm_context_file;
  sg::BeamConfig cm_beam;
  bool cm_trace = false;
  auto* cm = app.add_subcommand("complete", "Complete a context with sketches");
  add_grammar_flag(cm, cm_grammar);
  cm->add_option("--model", cm_model, "Trained bundle")->required();
  cm->add_option("--context", cm_context, "Context source text");
  cm->add_option("--context-file", cm_context_file, "File with context text");
  cm->add_option("-k,--beam", cm_beam.k, "Beam width")->capture_default_str();
  cm->add_option("-n,--expansions", cm_beam.n, "Expansions per position")
      ->capture_default_str();
  cm->add_option("-m,--positions", cm_beam.m, "Positions per state (0 = all)")
      ->capture_default_str();
  cm->add_option("--max-steps", cm_beam.decode.max_steps, "Generation step cap")
      ->capture_default_str();
  cm->add_flag("--trace", cm_trace, "Print the greedy generation step table");

  // --- score -------------------------------------------------------------------
  std::string sc_pred, sc_gt, sc_out;
  auto* sc = app.add_subcommand(
      "score", "Score predicted sketches against ground-truth tokens");
  sc->add_option("--pred", sc_pred,
                 "Predictions JSONL (token arrays; ■ marks holes)")
      ->required();
  sc->add_option("--gt", sc_gt, "Ground-truth JSONL (token arrays)")->required();
  sc->add_option("--out", sc_out, "Output CSV (default stdout)");

  // --- evaluate ----------------------------------------------------------------
  GrammarOption ev_grammar;
  std::string ev_model, ev_test, ev_outdir = ".";
  std::vector<std::string> ev_baselines;
  sg::BeamConfig ev_beam;
  unsigned ev_jobs = 0;
  auto* ev = app.add_subcommand("evaluate", "Evaluate models on a test split");
  add_grammar_flag(ev, ev_grammar);
  ev->add_option("--model", ev_model, "Grammar bundle to evaluate");
  ev->add_option("--baseline", ev_baselines, "Baseline model file (repeatable)");
  ev->add_option("--test", ev_test, "Test JSONL")->required();
  ev->add_option("--out-dir", ev_outdir, "Directory for metrics.csv/buckets.csv")
      ->capture_default_str();
  ev->add_option("-k,--beam", ev_beam.k, "Beam width")->capture_default_str();
  ev->add_option("-n,--expansions", ev_beam.n, "Expansions per position")
      ->capture_default_str();
  ev->add_option("-m,--positions", ev_beam.m, "Positions per state (0 = all)")
      ->capture_default_str();
  ev->add_option("--max-steps", ev_beam.decode.max_steps, "Generation step cap")
      ->capture_default_str();
  ev->add_option("--jobs", ev_jobs, "Worker threads (0 = hardware)")
      ->capture_default_str();

  // --- ablate ------------------------------------------------------------------
  GrammarOption ab_grammar;
  TrainFlags ab_flags;
  std::string ab_pretrained, ab_finetuned, ab_train, ab_valid, ab_test, ab_out;
  sg::BeamConfig ab_beam;
  auto* ab = app.add_subcommand("ablate", "Selector/reward ablation table");
  add_grammar_flag(ab, ab_grammar);
  ab->add_option("--pretrained", ab_pretrained, "Pretrained bundle")->required();
  ab->add_option("--finetuned", ab_finetuned, "Fine-tuned bundle")->required();
  ab->add_option("--train", ab_train, "Training JSONL")->required();
  ab->add_option("--valid", ab_valid, "Validation JSONL")->required();
  ab->add_option("--test", ab_test, "Test JSONL")->required();
  ab->add_option("--out", ab_out, "Output CSV")->required();
  ab->add_option("--epochs", ab_flags.cfg.finetune_epochs,
                 "Epochs for the reward-variant fine-tunes")
      ->capture_default_str();
  ab_flags.attach(ab);

  // --- trace -------------------------------------------------------------------
  GrammarOption tr_grammar;
  std::string tr_model, tr_context, tr_context_file;
  std::size_t tr_max_steps = 64;
  auto* tr = app.add_subcommand("trace", "Print the greedy generation steps");
  add_grammar_flag(tr, tr_grammar);
  tr->add_option("--model", tr_model, "Trained bundle")->required();
  tr->add_option("--context", tr_context, "Context source text");
  tr->add_option("--context-file", tr_context_file, "File with context text");
  tr->add_option("--max-steps", tr_max_steps, "Generation step cap")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help text, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  if (gen->parsed()) {
    sg::Grammar g = gen_grammar.load();
    sg::gen_corpus(g, corpus_cfg, gen_out);
    std::cout << "wrote " << gen_out << "/{train,valid,test}.jsonl\n";
    return 0;
  }

  if (pre->parsed()) {
    sg::Grammar g = sg::flatten(pre_grammar.load());
    pre_flags.cfg.start_symbol = g.start;
    std::ofstream log = open_log(pre_log);
    if (log.is_open()) pre_flags.cfg.log = &log;
    std::vector<sg::Example> train = sg::load_corpus(pre_train);
    std::vector<sg::Example> valid = sg::load_corpus(pre_valid);
    sg::ModelBundle bundle = sg::pretrain(train, valid, g, pre_flags.cfg);
    sg::save_bundle(bundle, pre_out);
    std::cout << "wrote " << pre_out << " (validation reward "
              << sg::format_double(bundle.snapshot->valid_reward) << ")\n";
    return 0;
  }

  if (ft->parsed()) {
    sg::Grammar g = sg::flatten(ft_grammar.load());
    ft_flags.cfg.start_symbol = g.start;
    ft_flags.cfg.reward_kind = reward_from_name(ft_reward);
    std::ofstream log = open_log(ft_log);
    if (log.is_open()) ft_flags.cfg.log = &log;
    std::vector<sg::Example> train = sg::load_corpus(ft_train);
    std::vector<sg::Example> valid = sg::load_corpus(ft_valid);
    sg::TrainState ts;
    ts.bundle = sg::load_bundle(ft_model);
    if (ft_flags.cfg.reward_kind != sg::RewardKind::Mixed)
      ts.bundle.snapshot.reset();  // re-baseline under the new reward
    const sg::TrainMode mode = ft_mode == "selector" ? sg::TrainMode::SelectorOnly
                                                     : sg::TrainMode::Full;
    if (ft_flags.cfg.log)
      (*ft_flags.cfg.log) << "epoch,mean_reward,snapshot_reward,mean_len\n";
    sg::train_epochs(ts, train, valid, mode, ft_flags.cfg.finetune_epochs,
                     ft_flags.cfg);
    sg::save_bundle(ts.bundle, ft_out);
    std::cout << "wrote " << ft_out << " (validation reward "
              << sg::format_double(ts.bundle.snapshot->valid_reward) << ")\n";
    return 0;
  }

  if (bl->parsed()) {
    sg::Grammar g = sg::flatten(bl_grammar.load());
    bl_flags.cfg.start_symbol = g.start;
    std::ofstream log = open_log(bl_log);
    if (log.is_open()) bl_flags.cfg.log = &log;
    std::vector<sg::Example> train = sg::load_corpus(bl_train);
    std::vector<sg::Example> valid = sg::load_corpus(bl_valid);
    sg::SequenceModel m = sg::train_baseline(
        sg::baseline_variant_from_name(bl_variant), train, valid, g, bl_flags.cfg);
    sg::save_sequence_model(m, bl_out);
    std::cout << "wrote " << bl_out << '\n';
    return 0;
  }

  if (cm->parsed()) {
    sg::Grammar g = sg::flatten(cm_grammar.load());
    sg::ModelBundle bundle = sg::load_bundle(cm_model);
    std::string text = cm_context;
    if (!cm_context_file.empty()) text = sg::read_file(cm_context_file);
    sg::Example ex;
    ex.context = context_tokens(text, g);
    sg::SketchState x0 = sg::initial_state(ex, g.start);
    sg::BundlePolicy policy(bundle);
    if (cm_trace) {
      sg::GenerationTrace t = sg::generate(policy, x0, nullptr,
                                           cm_beam.decode);
      std::cout << sg::format_trace(t);
      return 0;
    }
    for (const sg::BeamCandidate& c : sg::beam_search(policy, x0, cm_beam))
      std::cout << sg::format_double(c.logprob, 4) << '\t'
                << sg::render_sketch(c.sketch) << '\n';
    return 0;
  }

  if (sc->parsed()) {
    auto pred = sg::load_token_lines(sc_pred);
    auto gt = sg::load_token_lines(sc_gt);
    if (pred.size() != gt.size())
      throw sg::DataError("prediction/ground-truth line counts differ");
    std::ostringstream csv;
    csv << "index,regex_acc,rouge_l_f1,reward\n";
    double acc = 0.0, rl = 0.0, rw = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      sg::Sketch s = sg::sketch_from_marked_tokens(pred[i]);
      const double a = sg::regex_acc(s, gt[i]);
      const double l =
          sg::rouge_f1(sg::erase_holes(s), gt[i], sg::RougeVariant::RL);
      const double r = sg::reward(s, gt[i]);
      acc += a;
      rl += l;
      rw += r;
      csv << i << ',' << sg::format_double(a) << ',' << sg::format_double(l)
          << ',' << sg::format_double(r) << '\n';
    }
    const double n = pred.empty() ? 1.0 : static_cast<double>(pred.size());
    csv << "mean," << sg::format_double(acc / n) << ','
        << sg::format_double(rl / n) << ',' << sg::format_double(rw / n) << '\n';
    if (sc_out.empty())
      std::cout << csv.str();
    else
      sg::write_file(sc_out, csv.str());
    return 0;
  }

  if (ev->parsed()) {
    sg::Grammar g = sg::flatten(ev_grammar.load());
    std::vector<sg::Example> test = sg::load_corpus(ev_test);
    std::vector<sg::ModelReport> reports;
    sg::ModelBundle bundle;
    if (!ev_model.empty()) {
      bundle = sg::load_bundle(ev_model);
      reports.push_back(sg::evaluate(
          "grammformer", sg::grammar_completer(bundle, g.start, ev_beam), test,
          ev_jobs));
    }
    std::vector<sg::SequenceModel> baselines;
    baselines.reserve(ev_baselines.size());
    for (const std::string& path : ev_baselines)
      baselines.push_back(sg::load_sequence_model(path));
    for (const sg::SequenceModel& m : baselines)
      reports.push_back(sg::evaluate(
          sg::baseline_variant_name(m.variant),
          sg::sequence_completer(m, ev_beam.k, ev_beam.decode.max_steps), test,
          ev_jobs));
    if (reports.empty()) throw sg::DataError("no models given to evaluate");
    std::filesystem::create_directories(ev_outdir);
    const std::uint64_t hash = sg::split_hash(test);
    sg::write_file(ev_outdir + "/metrics.csv", sg::metrics_csv(reports, hash));
    sg::write_file(ev_outdir + "/buckets.csv",
                   sg::bucket_csv(reports, {2, 4, 6, 9, 13}, hash));
    std::cout << "wrote " << ev_outdir << "/metrics.csv and buckets.csv\n";
    return 0;
  }

  if (ab->parsed()) {
    sg::Grammar g = sg::flatten(ab_grammar.load());
    ab_flags.cfg.start_symbol = g.start;
    sg::AblationConfig acfg;
    acfg.beam = ab_beam;
    acfg.train = ab_flags.cfg;
    sg::AblationResult result = sg::run_ablations(
        sg::load_bundle(ab_pretrained), sg::load_bundle(ab_finetuned),
        sg::load_corpus(ab_train), sg::load_corpus(ab_valid),
        sg::load_corpus(ab_test), g, acfg);
    sg::write_file(ab_out, result.csv);
    std::cout << "wrote " << ab_out << " (tau " << result.chosen_tau << ")\n";
    return 0;
  }

  if (tr->parsed()) {
    sg::Grammar g = sg::flatten(tr_grammar.load());
    sg::ModelBundle bundle = sg::load_bundle(tr_model);
    std::string text = tr_context;
    if (!tr_context_file.empty()) text = sg::read_file(tr_context_file);
    sg::Example ex;
    ex.context = context_tokens(text, g);
    sg::SketchState x0 = sg::initial_state(ex, g.start);
    sg::BundlePolicy policy(bundle);
    sg::DecodeConfig dc;
    dc.max_steps = tr_max_steps;
    std::cout << sg::format_trace(sg::generate(policy, x0, nullptr, dc));
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sg::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const sg::InternalError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}

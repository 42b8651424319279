#pragma once

#include <string>
#include <vector>

namespace sketchgen {

// Display marker for a hole; also the in-band hole token in JSONL sketches.
inline const std::string kHoleMarker = "■";  // ■

struct SketchItem {
  bool hole = false;
  std::string token;  // empty for holes

  static SketchItem make_hole() { return {true, {}}; }
  static SketchItem make_token(std::string t) { return {false, std::move(t)}; }

  friend bool operator==(const SketchItem&, const SketchItem&) = default;
};

// A statement completion: concrete terminal tokens mixed with holes, each
// hole standing for an arbitrary non-empty token sequence.
struct Sketch {
  std::vector<SketchItem> items;

  bool hole_free() const;
  friend bool operator==(const Sketch&, const Sketch&) = default;
};

Sketch sketch_from_tokens(const std::vector<std::string>& tokens);
// Tokens with kHoleMarker entries turned into holes.
Sketch sketch_from_marked_tokens(const std::vector<std::string>& tokens);
std::vector<std::string> sketch_to_marked_tokens(const Sketch& s);
std::string render_sketch(const Sketch& s);

// Holes-before-tokens, then string order; used for deterministic tie-breaks.
bool sketch_less(const Sketch& a, const Sketch& b);

// Anchored pattern over token sequences: terminals match by string equality,
// each hole matches one or more whole tokens.
struct HoleMatcher {
  std::vector<SketchItem> items;
};

HoleMatcher to_matcher(const Sketch& s);

// 1 iff some assignment of >=1 consecutive tokens per hole reproduces gt
// exactly. Dynamic programming over (item index, token index).
int matches(const HoleMatcher& m, const std::vector<std::string>& gt);

std::size_t n_tokens(const Sketch& s);
inline std::size_t n_tokens(const std::vector<std::string>& tokens) {
  return tokens.size();
}

// matches(toMatcher(pred), gt) * nTokens(pred) / nTokens(gt).
// Throws DataError on empty ground truth.
double regex_acc(const Sketch& pred, const std::vector<std::string>& gt);

std::vector<std::string> erase_holes(const Sketch& s);

enum class RougeVariant { R1, R2, RL };

// Token-level ROUGE F1. Both-empty scores 1, empty-vs-nonempty 0; for R1/R2
// the same convention applies to the n-gram multisets.
double rouge_f1(const std::vector<std::string>& pred,
                const std::vector<std::string>& gt, RougeVariant variant);

enum class RewardKind { Mixed, RougeOnly, RegexAccOnly };

// Mixed: 0.5 * (RegexAcc(pred, gt) + RougeL_F1(EraseHoles(pred), gt)).
double reward(const Sketch& pred, const std::vector<std::string>& gt,
              RewardKind kind = RewardKind::Mixed);

}  // namespace sketchgen

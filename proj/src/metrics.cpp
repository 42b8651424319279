#include "sketchgen/metrics.hpp"

#include <algorithm>
#include <map>

#include "sketchgen/error.hpp"

namespace sketchgen {

bool Sketch::hole_free() const {
  return std::none_of(items.begin(), items.end(),
                      [](const SketchItem& i) { return i.hole; });
}

Sketch sketch_from_tokens(const std::vector<std::string>& tokens) {
  Sketch s;
  s.items.reserve(tokens.size());
  for (const std::string& t : tokens) s.items.push_back(SketchItem::make_token(t));
  return s;
}

Sketch sketch_from_marked_tokens(const std::vector<std::string>& tokens) {
  Sketch s;
  s.items.reserve(tokens.size());
  for (const std::string& t : tokens)
    s.items.push_back(t == kHoleMarker ? SketchItem::make_hole()
                                       : SketchItem::make_token(t));
  return s;
}

std::vector<std::string> sketch_to_marked_tokens(const Sketch& s) {
  std::vector<std::string> out;
  out.reserve(s.items.size());
  for (const SketchItem& i : s.items) out.push_back(i.hole ? kHoleMarker : i.token);
  return out;
}

std::string render_sketch(const Sketch& s) {
  std::string out;
  for (std::size_t i = 0; i < s.items.size(); ++i) {
    if (i) out += ' ';
    out += s.items[i].hole ? kHoleMarker : s.items[i].token;
  }
  return out;
}

bool sketch_less(const Sketch& a, const Sketch& b) {
  const std::size_t n = std::min(a.items.size(), b.items.size());
  for (std::size_t i = 0; i < n; ++i) {
    const SketchItem& x = a.items[i];
    const SketchItem& y = b.items[i];
    if (x.hole != y.hole) return x.hole;  // holes sort first
    if (x.token != y.token) return x.token < y.token;
  }
  return a.items.size() < b.items.size();
}

HoleMatcher to_matcher(const Sketch& s) { return HoleMatcher{s.items}; }

int matches(const HoleMatcher& m, const std::vector<std::string>& gt) {
  const std::size_t ni = m.items.size();
  const std::size_t nt = gt.size();
  // ok[i][j]: items[i..) can match gt[j..). Filled right to left; a hole at i
  // succeeds iff ok[i+1][j'] holds for some j' > j, which is the running
  // suffix-OR of the next row.
  std::vector<std::vector<char>> ok(ni + 1, std::vector<char>(nt + 1, 0));
  ok[ni][nt] = 1;
  for (std::size_t ii = ni; ii-- > 0;) {
    const SketchItem& item = m.items[ii];
    if (item.hole) {
      char any_right = 0;
      for (std::size_t j = nt + 1; j-- > 0;) {
        ok[ii][j] = any_right;
        if (ok[ii + 1][j]) any_right = 1;
      }
    } else {
      for (std::size_t j = 0; j < nt; ++j)
        ok[ii][j] = (gt[j] == item.token) && ok[ii + 1][j + 1];
      ok[ii][nt] = 0;
    }
  }
  return ok[0][0] ? 1 : 0;
}

std::size_t n_tokens(const Sketch& s) {
  return static_cast<std::size_t>(
      std::count_if(s.items.begin(), s.items.end(),
                    [](const SketchItem& i) { return !i.hole; }));
}

double regex_acc(const Sketch& pred, const std::vector<std::string>& gt) {
  if (gt.empty()) throw DataError("empty ground truth");
  for (const std::string& t : gt)
    if (t == kHoleMarker) throw DataError("ground truth contains a hole marker");
  if (!matches(to_matcher(pred), gt)) return 0.0;
  return static_cast<double>(n_tokens(pred)) / static_cast<double>(gt.size());
}

std::vector<std::string> erase_holes(const Sketch& s) {
  std::vector<std::string> out;
  for (const SketchItem& i : s.items)
    if (!i.hole) out.push_back(i.token);
  return out;
}

namespace {

double f1(double overlap, double pred_total, double gt_total) {
  if (pred_total == 0.0 && gt_total == 0.0) return 1.0;
  if (pred_total == 0.0 || gt_total == 0.0) return 0.0;
  double p = overlap / pred_total;
  double r = overlap / gt_total;
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

double rouge_n(const std::vector<std::string>& pred,
               const std::vector<std::string>& gt, std::size_t n) {
  auto grams = [n](const std::vector<std::string>& seq) {
    std::map<std::vector<std::string>, std::size_t> out;
    if (seq.size() >= n)
      for (std::size_t i = 0; i + n <= seq.size(); ++i)
        ++out[std::vector<std::string>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                       seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
  };
  auto pg = grams(pred);
  auto gg = grams(gt);
  double overlap = 0.0, pred_total = 0.0, gt_total = 0.0;
  for (const auto& [gram, c] : pg) {
    pred_total += static_cast<double>(c);
    auto it = gg.find(gram);
    if (it != gg.end()) overlap += static_cast<double>(std::min(c, it->second));
  }
  for (const auto& [gram, c] : gg) gt_total += static_cast<double>(c);
  return f1(overlap, pred_total, gt_total);
}

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_f1(const std::vector<std::string>& pred,
                const std::vector<std::string>& gt, RougeVariant variant) {
  // Sequence-level emptiness decides first; n-gram vacuity (both sides too
  // short for the order) then scores 1, keeping "identical implies 1".
  if (pred.empty() && gt.empty()) return 1.0;
  if (pred.empty() || gt.empty()) return 0.0;
  switch (variant) {
    case RougeVariant::R1: return rouge_n(pred, gt, 1);
    case RougeVariant::R2: return rouge_n(pred, gt, 2);
    case RougeVariant::RL: {
      double l = static_cast<double>(lcs_length(pred, gt));
      return f1(l, static_cast<double>(pred.size()),
                static_cast<double>(gt.size()));
    }
  }
  throw InternalError("unknown rouge variant");
}

double reward(const Sketch& pred, const std::vector<std::string>& gt,
              RewardKind kind) {
  switch (kind) {
    case RewardKind::Mixed:
      return 0.5 * (regex_acc(pred, gt) +
                    rouge_f1(erase_holes(pred), gt, RougeVariant::RL));
    case RewardKind::RougeOnly:
      return rouge_f1(erase_holes(pred), gt, RougeVariant::RL);
    case RewardKind::RegexAccOnly:
      return regex_acc(pred, gt);
  }
  throw InternalError("unknown reward kind");
}

}  // namespace sketchgen

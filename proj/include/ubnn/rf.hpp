#pragma once

// Random Forest baseline: flat FOREST / LEAVES / ROOTS arrays with 8-bit
// thresholds and leaf probabilities, plus the per-axis window features it
// classifies.
//
// FOREST holds one record per node. A leaf has feature_index == -1 and its
// right_child indexes LEAVES. An internal node's left child is the next
// record; only the right child index is stored. Descent goes left when
// feature <= threshold.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ubnn/error.hpp"
#include "ubnn/format.hpp"

namespace ubnn::rf {

inline constexpr std::size_t kWindow = 32;
inline constexpr std::size_t kAxes = 3;
inline constexpr std::size_t kFeaturesPerAxis = 7;
inline constexpr std::size_t kFeatureCount = kAxes * kFeaturesPerAxis;

enum FeatureId : std::size_t { kAverage, kVariance, kEnergy, kMax, kMin, kPeakToPeak, kZeroCrossings };

struct RfNode {
  std::int16_t feature_index = -1;
  std::int8_t threshold = 0;
  std::uint16_t right_child = 0;

  bool is_leaf() const noexcept { return feature_index == -1; }
  friend bool operator==(const RfNode&, const RfNode&) = default;
};

struct FeatureQuantizer {
  std::vector<float> scale;
  std::vector<float> zero;

  friend bool operator==(const FeatureQuantizer&, const FeatureQuantizer&) = default;
};

struct Forest {
  std::vector<RfNode> nodes;
  std::vector<std::uint8_t> leaves;  // n_leaves x n_classes
  std::vector<std::uint16_t> roots;
  std::size_t n_classes = 0;
  std::size_t n_features = 0;
  FeatureQuantizer quantizer;

  std::size_t n_leaves() const noexcept { return n_classes == 0 ? 0 : leaves.size() / n_classes; }
  std::span<const std::uint8_t> leaf(std::size_t i) const noexcept {
    return std::span<const std::uint8_t>(leaves).subspan(i * n_classes, n_classes);
  }

  friend bool operator==(const Forest&, const Forest&) = default;
};

// Per-class sums are uint32: 255 per tree stays below 2^32 for 2^23 trees,
// far above the 16-bit root index space.
static_assert(255ull * (1ull << 23) <= std::numeric_limits<std::uint32_t>::max());

/// Checks every structural invariant; a forest that passes always terminates.
inline void validate(const Forest& f) {
  auto bad = [](const std::string& what) { return Error(ErrorCode::kMalformedForest, what); };
  if (f.n_classes == 0) throw bad("n_classes must be > 0");
  if (f.n_features == 0) throw bad("n_features must be > 0");
  if (f.leaves.size() % f.n_classes != 0) throw bad("LEAVES size is not a multiple of n_classes");
  if (f.nodes.empty() || f.roots.empty()) throw bad("forest has no trees");
  if (f.nodes.size() > 65536 || f.n_leaves() > 65536) throw bad("index space exceeds 16 bits");
  for (std::size_t r = 0; r < f.roots.size(); ++r) {
    if (f.roots[r] >= f.nodes.size()) throw bad("root " + std::to_string(r) + " out of range");
  }
  for (std::size_t i = 0; i < f.nodes.size(); ++i) {
    const RfNode& n = f.nodes[i];
    if (n.is_leaf()) {
      if (n.right_child >= f.n_leaves()) throw bad("node " + std::to_string(i) + ": leaf index out of range");
      continue;
    }
    if (n.feature_index < 0 || static_cast<std::size_t>(n.feature_index) >= f.n_features) {
      throw bad("node " + std::to_string(i) + ": feature index out of range");
    }
    if (i + 1 >= f.nodes.size()) throw bad("node " + std::to_string(i) + ": left child past the end");
    if (n.right_child <= i || n.right_child >= f.nodes.size()) {
      throw bad("node " + std::to_string(i) + ": right child must point forward");
    }
  }
  for (std::size_t l = 0; l < f.n_leaves(); ++l) {
    unsigned sum = 0;
    for (auto p : f.leaf(l)) sum += p;
    const auto slack = static_cast<long>(f.n_classes);
    if (std::labs(static_cast<long>(sum) - 255) > slack) {
      throw bad("leaf " + std::to_string(l) + " probabilities sum to " + std::to_string(sum));
    }
  }
  if (f.quantizer.scale.size() != f.n_features || f.quantizer.zero.size() != f.n_features) {
    throw bad("quantizer must have one (scale, zero) pair per feature");
  }
  for (float s : f.quantizer.scale) {
    if (!(s > 0.0f)) throw bad("quantizer scale must be > 0");
  }
}

/// Accumulated leaf probabilities over all trees. Guards against cycles and
/// out-of-range indices even on forests that were never validated.
inline std::vector<std::uint32_t> rf_scores(std::span<const std::int8_t> features, const Forest& f) {
  if (features.size() != f.n_features) {
    throw Error(ErrorCode::kShapeMismatch, "expected " + std::to_string(f.n_features) +
                                               " features, got " + std::to_string(features.size()));
  }
  std::vector<std::uint32_t> sums(f.n_classes, 0);
  for (std::uint16_t root : f.roots) {
    std::size_t i = root;
    std::size_t steps = 0;
    for (;;) {
      if (i >= f.nodes.size() || ++steps > f.nodes.size()) {
        throw Error(ErrorCode::kMalformedForest, "traversal left the FOREST array or did not terminate");
      }
      const RfNode& n = f.nodes[i];
      if (n.is_leaf()) {
        if (n.right_child >= f.n_leaves()) throw Error(ErrorCode::kMalformedForest, "leaf index out of range");
        const auto probs = f.leaf(n.right_child);
        for (std::size_t c = 0; c < f.n_classes; ++c) sums[c] += probs[c];
        break;
      }
      if (n.feature_index < 0 || static_cast<std::size_t>(n.feature_index) >= features.size()) {
        throw Error(ErrorCode::kMalformedForest, "feature index out of range");
      }
      i = features[static_cast<std::size_t>(n.feature_index)] <= n.threshold ? i + 1 : n.right_child;
    }
  }
  return sums;
}

/// Argmax of the accumulated probabilities, lowest index on ties.
inline std::size_t rf_predict(std::span<const std::int8_t> features, const Forest& f) {
  const auto sums = rf_scores(features, f);
  return static_cast<std::size_t>(std::max_element(sums.begin(), sums.end()) - sums.begin());
}

// ---------------------------------------------------------------------------
// Features

/// Seven features per axis over a 32 x 3 time-major window (sample (t, a) at
/// index t * 3 + a): average, population variance, energy (sum of squares),
/// max, min, peak-to-peak and zero crossings (consecutive samples whose
/// product is negative; zeros never toggle). Feature j of axis a is at
/// a * 7 + j. Every value is exact for 16-bit samples.
inline std::array<double, kFeatureCount> extract_features(std::span<const std::int16_t> window) {
  if (window.size() != kWindow * kAxes) {
    throw Error(ErrorCode::kShapeMismatch, "feature window must hold 32 x 3 samples, got " +
                                               std::to_string(window.size()));
  }
  std::array<double, kFeatureCount> out{};
  for (std::size_t a = 0; a < kAxes; ++a) {
    std::int64_t sum = 0;
    std::int64_t sum_sq = 0;
    std::int64_t hi = window[a];
    std::int64_t lo = window[a];
    std::int64_t crossings = 0;
    for (std::size_t t = 0; t < kWindow; ++t) {
      const std::int64_t v = window[t * kAxes + a];
      sum += v;
      sum_sq += v * v;
      hi = std::max(hi, v);
      lo = std::min(lo, v);
      if (t > 0 && v * window[(t - 1) * kAxes + a] < 0) ++crossings;
    }
    constexpr auto n = static_cast<std::int64_t>(kWindow);
    double* f = out.data() + a * kFeaturesPerAxis;
    f[kAverage] = static_cast<double>(sum) / n;
    f[kVariance] = static_cast<double>(n * sum_sq - sum * sum) / static_cast<double>(n * n);
    f[kEnergy] = static_cast<double>(sum_sq);
    f[kMax] = static_cast<double>(hi);
    f[kMin] = static_cast<double>(lo);
    f[kPeakToPeak] = static_cast<double>(hi - lo);
    f[kZeroCrossings] = static_cast<double>(crossings);
  }
  return out;
}

/// round((f - zero) / scale), halves away from zero, saturated to int8.
inline std::vector<std::int8_t> quantize_features(std::span<const double> features,
                                                  const FeatureQuantizer& q) {
  if (q.scale.size() != features.size() || q.zero.size() != features.size()) {
    throw Error(ErrorCode::kShapeMismatch, "quantizer size differs from feature count");
  }
  std::vector<std::int8_t> out(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double scale = q.scale[i];
    if (!(scale > 0.0)) throw Error(ErrorCode::kInvalidArgument, "quantizer scale must be > 0");
    const double v = std::round((features[i] - static_cast<double>(q.zero[i])) / scale);
    out[i] = static_cast<std::int8_t>(std::clamp(v, -128.0, 127.0));
  }
  return out;
}

/// Maps the observed [min, max] of each feature onto [-128, 127].
inline FeatureQuantizer calibrate(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw Error(ErrorCode::kInvalidArgument, "calibration needs at least one row");
  const std::size_t n = rows.front().size();
  FeatureQuantizer q;
  for (std::size_t j = 0; j < n; ++j) {
    double lo = rows.front()[j];
    double hi = lo;
    for (const auto& r : rows) {
      if (r.size() != n) throw Error(ErrorCode::kShapeMismatch, "ragged calibration rows");
      lo = std::min(lo, r[j]);
      hi = std::max(hi, r[j]);
    }
    const double scale = hi > lo ? (hi - lo) / 255.0 : 1.0;
    q.scale.push_back(static_cast<float>(scale));
    q.zero.push_back(static_cast<float>(lo + 128.0 * scale));
  }
  return q;
}

/// Quantizes a probability vector to uint8 summing to 255 up to rounding.
inline std::vector<std::uint8_t> quantize_probabilities(std::span<const double> probs) {
  std::vector<std::uint8_t> out;
  for (double p : probs) out.push_back(static_cast<std::uint8_t>(std::clamp(std::round(p * 255.0), 0.0, 255.0)));
  return out;
}

// ---------------------------------------------------------------------------
// Explicit trees

/// Pointer-style tree with explicit children, the form trainers produce.
struct Tree {
  struct Node {
    int feature = -1;  // -1 for leaves
    std::int8_t threshold = 0;
    int left = -1;
    int right = -1;
    std::vector<std::uint8_t> probabilities;  // leaves only
  };
  std::vector<Node> nodes;
  int root = 0;
};

/// Flattens trees into FOREST / LEAVES / ROOTS in depth-first pre-order so
/// every left child directly follows its parent.
inline Forest flatten(std::span<const Tree> trees, std::size_t n_classes, std::size_t n_features) {
  Forest f;
  f.n_classes = n_classes;
  f.n_features = n_features;
  auto index16 = [](std::size_t v, const char* what) {
    if (v > 0xFFFF) throw Error(ErrorCode::kMalformedForest, std::string(what) + " exceeds 16-bit index space");
    return static_cast<std::uint16_t>(v);
  };
  for (const Tree& tree : trees) {
    f.roots.push_back(index16(f.nodes.size(), "root index"));
    // Explicit stack of (tree node, FOREST slot of the parent awaiting its right child).
    struct Pending {
      int node;
      std::size_t parent_slot;
    };
    constexpr std::size_t kNoParent = std::numeric_limits<std::size_t>::max();
    std::vector<Pending> stack{{tree.root, kNoParent}};
    while (!stack.empty()) {
      const Pending p = stack.back();
      stack.pop_back();
      if (p.node < 0 || static_cast<std::size_t>(p.node) >= tree.nodes.size()) {
        throw Error(ErrorCode::kMalformedForest, "tree child index out of range");
      }
      const std::size_t slot = f.nodes.size();
      if (slot > 0xFFFF) throw Error(ErrorCode::kMalformedForest, "FOREST exceeds 16-bit index space");
      if (p.parent_slot != kNoParent) f.nodes[p.parent_slot].right_child = static_cast<std::uint16_t>(slot);
      const auto& n = tree.nodes[static_cast<std::size_t>(p.node)];
      RfNode rec;
      if (n.feature < 0) {
        if (n.probabilities.size() != n_classes) {
          throw Error(ErrorCode::kMalformedForest, "leaf probability vector has wrong length");
        }
        rec.right_child = index16(f.n_leaves(), "leaf index");
        f.leaves.insert(f.leaves.end(), n.probabilities.begin(), n.probabilities.end());
        f.nodes.push_back(rec);
        continue;
      }
      rec.feature_index = static_cast<std::int16_t>(n.feature);
      rec.threshold = n.threshold;
      f.nodes.push_back(rec);
      stack.push_back({n.right, slot});
      stack.push_back({n.left, kNoParent});
    }
  }
  return f;
}

/// Traverses the explicit tree by recursion, independent of the flat layout.
inline void accumulate_recursive(const Tree& tree, int node, std::span<const std::int8_t> features,
                                 std::vector<std::uint32_t>& sums, std::size_t depth = 0) {
  if (node < 0 || static_cast<std::size_t>(node) >= tree.nodes.size() || depth > tree.nodes.size()) {
    throw Error(ErrorCode::kMalformedForest, "recursive traversal left the tree");
  }
  const auto& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.feature < 0) {
    for (std::size_t c = 0; c < sums.size(); ++c) sums[c] += n.probabilities.at(c);
    return;
  }
  const int next = features[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  accumulate_recursive(tree, next, features, sums, depth + 1);
}

inline std::size_t predict_recursive(std::span<const Tree> trees, std::size_t n_classes,
                                     std::span<const std::int8_t> features) {
  std::vector<std::uint32_t> sums(n_classes, 0);
  for (const Tree& t : trees) accumulate_recursive(t, t.root, features, sums);
  std::size_t best = 0;
  for (std::size_t c = 1; c < n_classes; ++c) {
    if (sums[c] > sums[best]) best = c;
  }
  return best;
}

/// Rebuilds explicit trees from a validated flat forest, following the
/// implicit-left / stored-right convention.
inline std::vector<Tree> unflatten(const Forest& f) {
  validate(f);
  std::vector<Tree> trees;
  for (std::uint16_t root : f.roots) {
    Tree t;
    // (forest index, tree node index) pairs to expand.
    std::vector<std::pair<std::size_t, int>> todo{{root, 0}};
    t.nodes.emplace_back();
    while (!todo.empty()) {
      const auto [fi, ti] = todo.back();
      todo.pop_back();
      const RfNode& n = f.nodes[fi];
      auto& node = t.nodes[static_cast<std::size_t>(ti)];
      if (n.is_leaf()) {
        const auto p = f.leaf(n.right_child);
        node.probabilities.assign(p.begin(), p.end());
        continue;
      }
      node.feature = n.feature_index;
      node.threshold = n.threshold;
      const int left = static_cast<int>(t.nodes.size());
      const int right = left + 1;
      node.left = left;
      node.right = right;
      t.nodes.emplace_back();
      t.nodes.emplace_back();
      todo.push_back({fi + 1, left});
      todo.push_back({n.right_child, right});
    }
    trees.push_back(std::move(t));
  }
  return trees;
}

// ---------------------------------------------------------------------------
// "URF1" binary format, little-endian:
//   magic | version u16 | n_classes u16 | n_features u16 | n_roots u16 |
//   n_nodes u32 | n_leaves u32 | roots u16[] | nodes (i16 feature, i8
//   threshold, u16 right_child)[] | leaves u8[n_leaves][n_classes] |
//   quantizer (f32 scale, f32 zero)[n_features]

inline constexpr std::array<char, 4> kForestMagic{'U', 'R', 'F', '1'};
inline constexpr std::uint16_t kForestVersion = 1;

inline std::vector<std::uint8_t> serialize(const Forest& f) {
  validate(f);
  ByteWriter w;
  w.raw(kForestMagic);
  w.u16(kForestVersion);
  w.dim16(f.n_classes, "n_classes");
  w.dim16(f.n_features, "n_features");
  w.dim16(f.roots.size(), "n_roots");
  w.u32(static_cast<std::uint32_t>(f.nodes.size()));
  w.u32(static_cast<std::uint32_t>(f.n_leaves()));
  for (auto r : f.roots) w.u16(r);
  for (const auto& n : f.nodes) {
    w.i16(n.feature_index);
    w.u8(static_cast<std::uint8_t>(n.threshold));
    w.u16(n.right_child);
  }
  for (auto p : f.leaves) w.u8(p);
  for (std::size_t i = 0; i < f.n_features; ++i) {
    w.f32(f.quantizer.scale[i]);
    w.f32(f.quantizer.zero[i]);
  }
  return std::move(w).take();
}

inline Forest deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kForestMagic);
  const std::uint16_t version = r.u16();
  if (version != kForestVersion) {
    throw Error(ErrorCode::kVersionMismatch, "forest version " + std::to_string(version) +
                                                 ", reader supports " +
                                                 std::to_string(kForestVersion));
  }
  Forest f;
  f.n_classes = r.u16();
  f.n_features = r.u16();
  const std::size_t n_roots = r.u16();
  const std::size_t n_nodes = r.u32();
  const std::size_t n_leaves = r.u32();
  const std::size_t need = n_roots * 2 + n_nodes * 5 + n_leaves * f.n_classes + f.n_features * 8;
  if (r.remaining() < need) {
    throw Error(ErrorCode::kTruncated, "forest body needs " + std::to_string(need) + " bytes, " +
                                           std::to_string(r.remaining()) + " left");
  }
  for (std::size_t i = 0; i < n_roots; ++i) f.roots.push_back(r.u16());
  for (std::size_t i = 0; i < n_nodes; ++i) {
    RfNode n;
    n.feature_index = r.i16();
    n.threshold = r.i8();
    n.right_child = r.u16();
    f.nodes.push_back(n);
  }
  for (std::size_t i = 0; i < n_leaves * f.n_classes; ++i) f.leaves.push_back(r.u8());
  for (std::size_t i = 0; i < f.n_features; ++i) {
    f.quantizer.scale.push_back(r.f32());
    f.quantizer.zero.push_back(r.f32());
  }
  r.expect_end();
  validate(f);
  return f;
}

inline void save(const Forest& f, const std::filesystem::path& path) { write_file(path, serialize(f)); }
inline Forest load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace ubnn::rf

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apnt/features.hpp"

namespace apnt {

enum class MatchNormalization {
  cosine,         // both patches unit-normalised
  paper_literal,  // target patch divided by its squared L2 norm only
};

const char* to_string(MatchNormalization n);
MatchNormalization parse_normalization(const std::string& s);

/// Search windows and patch sizes, indexed by pyramid level (0 = finest).
struct WindowSpec {
  std::array<int, 3> radius{2, 2, 8};
  std::array<int, 3> patch{3, 3, 3};
  int stride = 1;  // spacing of swapped target patches
  MatchNormalization normalization = MatchNormalization::cosine;

  void validate() const;
};

struct Position {
  int row = 0;
  int col = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

/// Best source position and score for every target position of one level.
struct MatchLevel {
  int height = 0;
  int width = 0;
  std::vector<Position> match;
  std::vector<double> score;
  int clamped_centers = 0;     // propagated centres that fell outside the grid
  int degenerate_targets = 0;  // zero-norm target patches

  const Position& at(int row, int col) const {
    return match[static_cast<std::size_t>(row) * width + col];
  }
  double score_at(int row, int col) const {
    return score[static_cast<std::size_t>(row) * width + col];
  }
  friend bool operator==(const MatchLevel& a, const MatchLevel& b) {
    return a.height == b.height && a.width == b.width && a.match == b.match;
  }
};

struct MatchField {
  std::array<MatchLevel, 3> levels;
};

/// Scores of one target patch against every source patch whose centre lies
/// within `radius` of `center`; entry (dy + r, dx + r) holds offset (dy, dx).
/// Centres outside the source grid score -infinity. Patches reaching over
/// the border replicate edge features.
struct SimilarityMap {
  int radius = 0;
  std::vector<double> scores;
  bool degenerate = false;  // zero-norm target: every in-grid score is 0

  double at(int dy, int dx) const {
    return scores[static_cast<std::size_t>(dy + radius) * (2 * radius + 1) + dx + radius];
  }
};

SimilarityMap similarity_map(const Tensor& source_level, const Tensor& target_patch,
                             Position center, int radius, MatchNormalization normalization);

/// Patch (C, p, p) centred at `at`, edge-replicated.
Tensor extract_patch(const Tensor& level, Position at, int patch);

/// Total order used to pick a best match for target `k`: higher score, then
/// smaller squared displacement from k, then row-major position.
bool better_match(double score_a, Position a, double score_b, Position b, Position k);

MatchLevel match_coarsest(const Tensor& source, const Tensor& target, const WindowSpec& window);
MatchLevel refine_level(const MatchLevel& coarser, const Tensor& source, const Tensor& target,
                        const WindowSpec& window, int level);

struct MatchOptions {
  // Match at the finest level only (radius 4 * window.radius[2] around each
  // target position); coarser levels hold identity maps.
  bool single_scale = false;
};

MatchField progressive_match(const FeaturePyramid& source, const FeaturePyramid& target,
                             const WindowSpec& window, const MatchOptions& options = {});

/// Exhaustive argmax per target position and level. A radius restricts the
/// candidates to that Chebyshev distance around the target's own position;
/// nullopt searches the whole level.
MatchField brute_force_match(const FeaturePyramid& source, const FeaturePyramid& target,
                             const WindowSpec& window,
                             const std::array<std::optional<int>, 3>& restriction = {});

/// Replaces each target patch at k (on a stride grid) by the source patch at
/// j(k); overlapping contributions average, uncovered positions keep the
/// target feature.
std::array<Tensor, 3> swap_features(const std::array<Tensor, 3>& target,
                                    const std::array<Tensor, 3>& source, const MatchField& matches,
                                    const WindowSpec& window);
Tensor swap_level(const Tensor& target, const Tensor& source, const MatchLevel& matches, int patch,
                  int stride);
/// Gradient of swap_level: accumulates into grad_target / grad_source.
void swap_level_backward(const Tensor& grad_out, const MatchLevel& matches, int patch, int stride,
                         Tensor& grad_target, Tensor& grad_source);

/// CSV dump: `# key=value` metadata lines, then
/// `level,k_row,k_col,j_row,j_col,score` rows.
void write_match_csv(const std::filesystem::path& path, const MatchField& field,
                     const std::map<std::string, std::string>& metadata);

}  // namespace apnt

#include "apnt/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "apnt/error.hpp"

namespace apnt {

const char* to_string(MatchNormalization n) {
  return n == MatchNormalization::cosine ? "cosine" : "paper_literal";
}

MatchNormalization parse_normalization(const std::string& s) {
  if (s == "cosine") return MatchNormalization::cosine;
  if (s == "paper_literal") return MatchNormalization::paper_literal;
  throw InputError("unknown match normalization '" + s + "'");
}

void WindowSpec::validate() const {
  for (int l = 0; l < 3; ++l) {
    if (radius[l] < 0) throw InputError("window radius must be >= 0");
    if (patch[l] < 1 || patch[l] % 2 == 0) throw InputError("patch size must be odd and >= 1");
  }
  if (stride < 1) throw InputError("stride must be >= 1");
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Edge-replicated patch access plus cached source patch norms for one level.
class LevelScorer {
 public:
  LevelScorer(const Tensor& source, int patch, MatchNormalization norm)
      : src_(source), patch_(patch), half_(patch / 2), norm_(norm) {
    if (norm_ == MatchNormalization::cosine) {
      src_norm_.resize(source.plane());
      std::vector<double> buf;
      for (int y = 0; y < source.height(); ++y)
        for (int x = 0; x < source.width(); ++x) {
          pack(source, {y, x}, buf);
          src_norm_[static_cast<std::size_t>(y) * source.width() + x] = squared_norm(buf);
        }
    }
  }

  void set_target(const Tensor& target, Position k) {
    pack(target, k, tgt_);
    tgt_norm_ = squared_norm(tgt_);
  }
  void set_target_patch(const Tensor& patch) {
    tgt_.assign(patch.data(), patch.data() + patch.size());
    tgt_norm_ = squared_norm(tgt_);
  }
  bool degenerate() const { return tgt_norm_ == 0.0; }

  double score(Position j) const {
    if (degenerate()) return 0.0;
    const double d = dot(j);
    if (norm_ == MatchNormalization::paper_literal) return d / tgt_norm_;
    const double ns = src_norm_[static_cast<std::size_t>(j.row) * src_.width() + j.col];
    if (ns == 0.0) return 0.0;
    return d / std::sqrt(tgt_norm_ * ns);
  }

  bool inside(Position j) const {
    return j.row >= 0 && j.col >= 0 && j.row < src_.height() && j.col < src_.width();
  }

  void pack(const Tensor& t, Position at, std::vector<double>& out) const {
    out.resize(static_cast<std::size_t>(t.channels()) * patch_ * patch_);
    std::size_t i = 0;
    for (int c = 0; c < t.channels(); ++c)
      for (int dy = -half_; dy <= half_; ++dy) {
        const int y = std::clamp(at.row + dy, 0, t.height() - 1);
        for (int dx = -half_; dx <= half_; ++dx)
          out[i++] = t(c, y, std::clamp(at.col + dx, 0, t.width() - 1));
      }
  }

 private:
  static double squared_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
  }

  double dot(Position j) const {
    double s = 0.0;
    std::size_t i = 0;
    const bool interior = j.row - half_ >= 0 && j.col - half_ >= 0 &&
                          j.row + half_ < src_.height() && j.col + half_ < src_.width();
    for (int c = 0; c < src_.channels(); ++c)
      for (int dy = -half_; dy <= half_; ++dy) {
        const int y = interior ? j.row + dy : std::clamp(j.row + dy, 0, src_.height() - 1);
        const double* row = src_.channel_data(c) + static_cast<std::size_t>(y) * src_.width();
        for (int dx = -half_; dx <= half_; ++dx) {
          const int x = interior ? j.col + dx : std::clamp(j.col + dx, 0, src_.width() - 1);
          s += row[x] * tgt_[i++];
        }
      }
    return s;
  }

  const Tensor& src_;
  int patch_;
  int half_;
  MatchNormalization norm_;
  std::vector<double> src_norm_;
  std::vector<double> tgt_;
  double tgt_norm_ = 0.0;
};

void check_pair(const Tensor& source, const Tensor& target) {
  if (source.rank() != 3 || target.rank() != 3 || source.channels() != target.channels())
    throw StructuralError("matching needs equal channel counts, got " +
                          shape_string(source.shape()) + " vs " + shape_string(target.shape()));
}

MatchLevel empty_level(const Tensor& target) {
  MatchLevel m;
  m.height = target.height();
  m.width = target.width();
  m.match.resize(target.plane());
  m.score.resize(target.plane());
  return m;
}

// Best candidate in the window of `radius` around `center` (clipped to the grid).
void search(LevelScorer& scorer, const Tensor& source, Position k, Position center, int radius,
            Position& best, double& best_score) {
  const int y0 = std::max(0, center.row - radius);
  const int y1 = std::min(source.height() - 1, center.row + radius);
  const int x0 = std::max(0, center.col - radius);
  const int x1 = std::min(source.width() - 1, center.col + radius);
  best_score = kNegInf;
  bool first = true;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const Position j{y, x};
      const double s = scorer.score(j);
      if (first || better_match(s, j, best_score, best, k)) {
        best = j;
        best_score = s;
        first = false;
      }
    }
}

// Radius that makes a window cover the whole grid from any centre.
int full_radius(const Tensor& t) { return std::max(t.height(), t.width()); }

}  // namespace

bool better_match(double score_a, Position a, double score_b, Position b, Position k) {
  if (score_a != score_b) return score_a > score_b;
  const long da = static_cast<long>(a.row - k.row) * (a.row - k.row) +
                  static_cast<long>(a.col - k.col) * (a.col - k.col);
  const long db = static_cast<long>(b.row - k.row) * (b.row - k.row) +
                  static_cast<long>(b.col - k.col) * (b.col - k.col);
  if (da != db) return da < db;
  if (a.row != b.row) return a.row < b.row;
  return a.col < b.col;
}

Tensor extract_patch(const Tensor& level, Position at, int patch) {
  if (patch < 1 || patch % 2 == 0) throw InputError("patch size must be odd");
  Tensor out(level.channels(), patch, patch);
  const int half = patch / 2;
  for (int c = 0; c < level.channels(); ++c)
    for (int dy = 0; dy < patch; ++dy)
      for (int dx = 0; dx < patch; ++dx)
        out(c, dy, dx) = level(c, std::clamp(at.row + dy - half, 0, level.height() - 1),
                               std::clamp(at.col + dx - half, 0, level.width() - 1));
  return out;
}

SimilarityMap similarity_map(const Tensor& source_level, const Tensor& target_patch,
                             Position center, int radius, MatchNormalization normalization) {
  if (target_patch.rank() != 3 || target_patch.height() != target_patch.width() ||
      target_patch.height() % 2 == 0)
    throw InputError("target patch must be (C, p, p) with odd p");
  check_pair(source_level, target_patch);
  if (radius < 0) throw InputError("window radius must be >= 0");
  LevelScorer scorer(source_level, target_patch.height(), normalization);
  scorer.set_target_patch(target_patch);
  SimilarityMap m;
  m.radius = radius;
  m.degenerate = scorer.degenerate();
  const int side = 2 * radius + 1;
  m.scores.assign(static_cast<std::size_t>(side) * side, kNegInf);
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const Position j{center.row + dy, center.col + dx};
      if (scorer.inside(j))
        m.scores[static_cast<std::size_t>(dy + radius) * side + dx + radius] = scorer.score(j);
    }
  return m;
}

MatchLevel match_coarsest(const Tensor& source, const Tensor& target, const WindowSpec& window) {
  window.validate();
  check_pair(source, target);
  LevelScorer scorer(source, window.patch[2], window.normalization);
  MatchLevel out = empty_level(target);
  for (int y = 0; y < target.height(); ++y)
    for (int x = 0; x < target.width(); ++x) {
      const Position k{y, x};
      scorer.set_target(target, k);
      if (scorer.degenerate()) ++out.degenerate_targets;
      const std::size_t i = static_cast<std::size_t>(y) * target.width() + x;
      search(scorer, source, k, k, window.radius[2], out.match[i], out.score[i]);
    }
  return out;
}

MatchLevel refine_level(const MatchLevel& coarser, const Tensor& source, const Tensor& target,
                        const WindowSpec& window, int level) {
  window.validate();
  check_pair(source, target);
  if (level < 0 || level > 1) throw InputError("refine_level applies to levels 0 and 1");
  if (coarser.height < 1 || coarser.width < 1 ||
      coarser.match.size() != static_cast<std::size_t>(coarser.height) * coarser.width)
    throw StructuralError("refine_level: coarser match level is not populated");
  LevelScorer scorer(source, window.patch[level], window.normalization);
  MatchLevel out = empty_level(target);
  for (int y = 0; y < target.height(); ++y)
    for (int x = 0; x < target.width(); ++x) {
      const Position k{y, x};
      const Position parent = coarser.at(std::min(y / 2, coarser.height - 1),
                                         std::min(x / 2, coarser.width - 1));
      Position center{2 * parent.row, 2 * parent.col};
      if (!scorer.inside(center)) {
        center.row = std::clamp(center.row, 0, source.height() - 1);
        center.col = std::clamp(center.col, 0, source.width() - 1);
        ++out.clamped_centers;
      }
      scorer.set_target(target, k);
      if (scorer.degenerate()) ++out.degenerate_targets;
      const std::size_t i = static_cast<std::size_t>(y) * target.width() + x;
      search(scorer, source, k, center, window.radius[level], out.match[i], out.score[i]);
    }
  return out;
}

namespace {
void check_pyramids(const FeaturePyramid& source, const FeaturePyramid& target) {
  for (int l = 0; l < 3; ++l) {
    check_pair(source.levels[l], target.levels[l]);
    if (source.levels[l].height() != target.levels[l].height() ||
        source.levels[l].width() != target.levels[l].width())
      throw StructuralError("source and target pyramids differ in spatial size");
  }
}

MatchLevel identity_level(const Tensor& t) {
  MatchLevel m = empty_level(t);
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      m.match[static_cast<std::size_t>(y) * t.width() + x] = {y, x};
  return m;
}
}  // namespace

MatchField progressive_match(const FeaturePyramid& source, const FeaturePyramid& target,
                             const WindowSpec& window, const MatchOptions& options) {
  check_pyramids(source, target);
  MatchField f;
  if (options.single_scale) {
    f.levels[2] = identity_level(target.levels[2]);
    f.levels[1] = identity_level(target.levels[1]);
    WindowSpec wide = window;
    wide.radius[0] = 4 * window.radius[2];
    LevelScorer scorer(source.levels[0], window.patch[0], window.normalization);
    const Tensor& tgt = target.levels[0];
    f.levels[0] = empty_level(tgt);
    for (int y = 0; y < tgt.height(); ++y)
      for (int x = 0; x < tgt.width(); ++x) {
        const Position k{y, x};
        scorer.set_target(tgt, k);
        if (scorer.degenerate()) ++f.levels[0].degenerate_targets;
        const std::size_t i = static_cast<std::size_t>(y) * tgt.width() + x;
        search(scorer, source.levels[0], k, k, wide.radius[0], f.levels[0].match[i],
               f.levels[0].score[i]);
      }
    return f;
  }
  f.levels[2] = match_coarsest(source.levels[2], target.levels[2], window);
  f.levels[1] = refine_level(f.levels[2], source.levels[1], target.levels[1], window, 1);
  f.levels[0] = refine_level(f.levels[1], source.levels[0], target.levels[0], window, 0);
  return f;
}

MatchField brute_force_match(const FeaturePyramid& source, const FeaturePyramid& target,
                             const WindowSpec& window,
                             const std::array<std::optional<int>, 3>& restriction) {
  window.validate();
  check_pyramids(source, target);
  MatchField f;
  for (int l = 0; l < 3; ++l) {
    const Tensor& src = source.levels[l];
    const Tensor& tgt = target.levels[l];
    LevelScorer scorer(src, window.patch[l], window.normalization);
    MatchLevel m = empty_level(tgt);
    const int radius = restriction[l].value_or(full_radius(src));
    for (int y = 0; y < tgt.height(); ++y)
      for (int x = 0; x < tgt.width(); ++x) {
        const Position k{y, x};
        scorer.set_target(tgt, k);
        if (scorer.degenerate()) ++m.degenerate_targets;
        const std::size_t i = static_cast<std::size_t>(y) * tgt.width() + x;
        double best_score = kNegInf;
        Position best{};
        bool first = true;
        for (int jy = 0; jy < src.height(); ++jy)
          for (int jx = 0; jx < src.width(); ++jx) {
            if (std::abs(jy - y) > radius || std::abs(jx - x) > radius) continue;
            const Position j{jy, jx};
            const double s = scorer.score(j);
            if (first || better_match(s, j, best_score, best, k)) {
              best = j;
              best_score = s;
              first = false;
            }
          }
        m.match[i] = best;
        m.score[i] = best_score;
      }
    f.levels[l] = std::move(m);
  }
  return f;
}

namespace {
void check_swap_grid(const Tensor& target, const Tensor& source, const MatchLevel& m) {
  if (!target.same_shape(source))
    throw StructuralError("swap: target and source features differ: " +
                          shape_string(target.shape()) + " vs " + shape_string(source.shape()));
  if (m.height != target.height() || m.width != target.width())
    throw StructuralError("swap: match grid " + std::to_string(m.height) + "x" +
                          std::to_string(m.width) + " does not fit features " +
                          shape_string(target.shape()));
}

// Visits every (output position, source position) contribution in a fixed order.
template <typename Fn>
void for_each_contribution(const MatchLevel& m, int patch, int stride, Fn&& fn) {
  const int half = patch / 2;
  for (int ky = 0; ky < m.height; ky += stride)
    for (int kx = 0; kx < m.width; kx += stride) {
      const Position j = m.at(ky, kx);
      for (int dy = -half; dy <= half; ++dy) {
        const int py = ky + dy;
        if (py < 0 || py >= m.height) continue;
        const int sy = std::clamp(j.row + dy, 0, m.height - 1);
        for (int dx = -half; dx <= half; ++dx) {
          const int px = kx + dx;
          if (px < 0 || px >= m.width) continue;
          fn(py, px, sy, std::clamp(j.col + dx, 0, m.width - 1));
        }
      }
    }
}
}  // namespace

Tensor swap_level(const Tensor& target, const Tensor& source, const MatchLevel& matches, int patch,
                  int stride) {
  check_swap_grid(target, source, matches);
  if (patch < 1 || patch % 2 == 0 || stride < 1) throw InputError("bad swap patch/stride");
  Tensor out = target;
  std::vector<int> count(target.plane(), 0);
  const int w = target.width();
  // Running mean keeps identical contributions exact.
  for_each_contribution(matches, patch, stride, [&](int py, int px, int sy, int sx) {
    const std::size_t p = static_cast<std::size_t>(py) * w + px;
    const int n = ++count[p];
    for (int c = 0; c < target.channels(); ++c) {
      double& o = out(c, py, px);
      const double v = source(c, sy, sx);
      o = n == 1 ? v : o + (v - o) / n;
    }
  });
  return out;
}

void swap_level_backward(const Tensor& grad_out, const MatchLevel& matches, int patch, int stride,
                         Tensor& grad_target, Tensor& grad_source) {
  check_swap_grid(grad_target, grad_source, matches);
  std::vector<int> count(grad_out.plane(), 0);
  const int w = grad_out.width();
  for_each_contribution(matches, patch, stride, [&](int py, int px, int, int) {
    ++count[static_cast<std::size_t>(py) * w + px];
  });
  for_each_contribution(matches, patch, stride, [&](int py, int px, int sy, int sx) {
    const double inv = 1.0 / count[static_cast<std::size_t>(py) * w + px];
    for (int c = 0; c < grad_out.channels(); ++c)
      grad_source(c, sy, sx) += grad_out(c, py, px) * inv;
  });
  for (int c = 0; c < grad_out.channels(); ++c)
    for (std::size_t p = 0; p < grad_out.plane(); ++p)
      if (count[p] == 0) grad_target.channel_data(c)[p] += grad_out.channel_data(c)[p];
}

std::array<Tensor, 3> swap_features(const std::array<Tensor, 3>& target,
                                    const std::array<Tensor, 3>& source, const MatchField& matches,
                                    const WindowSpec& window) {
  std::array<Tensor, 3> out;
  for (int l = 0; l < 3; ++l)
    out[l] = swap_level(target[l], source[l], matches.levels[l], window.patch[l], window.stride);
  return out;
}

void write_match_csv(const std::filesystem::path& path, const MatchField& field,
                     const std::map<std::string, std::string>& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  for (const auto& [k, v] : metadata) out << "# " << k << '=' << v << '\n';
  out << "level,k_row,k_col,j_row,j_col,score\n";
  out << std::setprecision(17);
  for (int l = 0; l < 3; ++l) {
    const MatchLevel& m = field.levels[l];
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        const Position j = m.at(y, x);
        out << l << ',' << y << ',' << x << ',' << j.row << ',' << j.col << ','
            << m.score_at(y, x) << '\n';
      }
  }
  if (!out) throw LoadError("write failed for " + path.string());
}

}  // namespace apnt

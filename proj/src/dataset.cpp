#include "apnt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "apnt/error.hpp"
#include "apnt/rgbe.hpp"

namespace apnt {

namespace fs = std::filesystem;

void SceneRecord::validate() const {
  for (const auto& img : ldr) img.validate();
  for (int k = 0; k < 3; ++k)
    if (!ldr[k].pixels.same_shape(ldr[1].pixels))
      throw StructuralError("scene '" + scene_id + "': captures differ in size");
  if (gt_hdr && gt_hdr->pixels.shape() != ldr[1].pixels.shape())
    throw StructuralError("scene '" + scene_id + "': ground truth differs in size");
  if (!(biases[0] < biases[1] && biases[1] < biases[2]))
    throw StructuralError("scene '" + scene_id + "': biases not strictly increasing");
}

ModelInput prepare_input(const SceneRecord& record, const DomainParams& params) {
  params.validate();
  const auto t = exposure_ratios(record.biases);
  ModelInput in;
  for (int k = 0; k < 3; ++k) in.radiance[k] = to_radiance(record.ldr[k], t[k], params);
  in.short_masked = ms_hdr_transform(in.radiance[0], t[0], t[1], params);
  in.clip_level = ms_hdr_clip_level(t[1], params);
  in.mask_medium = saturation_mask(record.ldr[1], params.sat_threshold);
  in.mask_short = saturation_mask(in.short_masked, in.clip_level);
  return in;
}

ModelInput crop_input(const ModelInput& in, int y0, int x0, int height, int width) {
  ModelInput out;
  for (int k = 0; k < 3; ++k)
    out.radiance[k] = {crop(in.radiance[k].pixels, y0, x0, height, width),
                       in.radiance[k].exposure_scale};
  out.short_masked = {crop(in.short_masked.pixels, y0, x0, height, width),
                      in.short_masked.exposure_scale};
  out.mask_medium = {crop(in.mask_medium.mask, y0, x0, height, width)};
  out.mask_short = {crop(in.mask_short.mask, y0, x0, height, width)};
  out.clip_level = in.clip_level;
  return out;
}

LdrImage read_ldr(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw LoadError("cannot decode LDR image " + path.string());
  int depth_bits = 0;
  double scale = 0.0;
  if (m.depth() == CV_8U) {
    depth_bits = 8;
    scale = 255.0;
  } else if (m.depth() == CV_16U) {
    depth_bits = 16;
    scale = 65535.0;
  } else {
    throw FormatError(path.string() + ": LDR images must be 8- or 16-bit integer");
  }
  if (m.channels() != 3 && m.channels() != 4)
    throw FormatError(path.string() + ": LDR images must have 3 colour channels");
  LdrImage img{Tensor(3, m.rows, m.cols), depth_bits};
  const int nc = m.channels();
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) {
        // OpenCV stores BGR.
        const int src = 2 - c;
        const double v = depth_bits == 8 ? m.ptr<std::uint8_t>(y)[x * nc + src]
                                         : m.ptr<std::uint16_t>(y)[x * nc + src];
        img.pixels(c, y, x) = v / scale;
      }
  return img;
}

void write_ldr(const fs::path& path, const LdrImage& img) {
  img.validate();
  const bool deep = img.bit_depth_origin == 16;
  const double scale = deep ? 65535.0 : 255.0;
  cv::Mat m(img.pixels.height(), img.pixels.width(), deep ? CV_16UC3 : CV_8UC3);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::round(img.pixels(c, y, x) * scale);
        if (deep)
          m.ptr<std::uint16_t>(y)[x * 3 + (2 - c)] = static_cast<std::uint16_t>(v);
        else
          m.ptr<std::uint8_t>(y)[x * 3 + (2 - c)] = static_cast<std::uint8_t>(v);
      }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw LoadError("cannot write " + path.string());
}

std::vector<double> read_exposure_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing exposure file " + path.string());
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    double v;
    if (ls >> v) {
      out.push_back(v);
    } else if (line.find_first_not_of(" \t\r") != std::string::npos) {
      throw LoadError(path.string() + ": unparsable exposure line '" + line + "'");
    }
  }
  return out;
}

namespace {

bool is_ldr_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".tif" || ext == ".tiff" || ext == ".png" || ext == ".ppm";
}

bool is_hdr_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".hdr" || ext == ".pic";
}

}  // namespace

SceneRecord load_scene(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw LoadError("scene directory not found: " + dir.string());
  std::vector<fs::path> ldr_files, hdr_files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (is_ldr_file(e.path())) ldr_files.push_back(e.path());
    if (is_hdr_file(e.path())) hdr_files.push_back(e.path());
  }
  std::sort(ldr_files.begin(), ldr_files.end());
  std::sort(hdr_files.begin(), hdr_files.end());
  if (ldr_files.size() != 3)
    throw LoadError(dir.string() + ": expected 3 LDR captures, found " +
                    std::to_string(ldr_files.size()));
  const fs::path expo = dir / "exposure.txt";
  if (!fs::exists(expo)) throw LoadError("missing exposure file " + expo.string());
  const auto biases = read_exposure_file(expo);
  if (biases.size() != 3)
    throw LoadError(expo.string() + ": expected 3 exposure biases, found " +
                    std::to_string(biases.size()));
  for (double b : biases)
    if (!std::isfinite(b)) throw LoadError(expo.string() + ": non-finite bias");

  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return biases[a] < biases[b]; });

  SceneRecord rec;
  rec.scene_id = dir.filename().string();
  if (rec.scene_id.empty()) rec.scene_id = dir.parent_path().filename().string();
  for (int k = 0; k < 3; ++k) {
    rec.ldr[k] = read_ldr(ldr_files[order[k]]);
    rec.biases[k] = biases[order[k]];
  }
  for (int k = 0; k < 3; ++k)
    if (!rec.ldr[k].pixels.same_shape(rec.ldr[1].pixels))
      throw StructuralError(dir.string() + ": captures differ in size");

  if (!hdr_files.empty()) {
    fs::path gt_path = hdr_files.front();
    for (const auto& p : hdr_files)
      if (p.filename() == "HDRImg.hdr") gt_path = p;
    if (hdr_files.size() > 1 && gt_path.filename() != "HDRImg.hdr")
      throw StructuralError(dir.string() + ": several .hdr files and none named HDRImg.hdr");
    RadianceMap gt = read_hdr(gt_path);
    if (gt.pixels.shape() != rec.ldr[1].pixels.shape())
      throw StructuralError(gt_path.string() + ": ground truth differs in size from captures");
    // File radiance follows I^gamma / 2^bias; rescale to the shortest capture.
    const double to_short = std::exp2(rec.biases[0]);
    for (double& v : gt.pixels.values()) v = std::clamp(v * to_short, 0.0, 1.0);
    rec.gt_hdr = std::move(gt);
  }
  rec.validate();
  return rec;
}

void save_scene(const SceneRecord& record, const fs::path& dir) {
  record.validate();
  fs::create_directories(dir);
  static constexpr const char* kNames[3] = {"ldr_0_short.png", "ldr_1_medium.png", "ldr_2_long.png"};
  for (int k = 0; k < 3; ++k) write_ldr(dir / kNames[k], record.ldr[k]);
  std::ofstream expo(dir / "exposure.txt");
  expo << std::setprecision(17);
  for (double b : record.biases) expo << b << '\n';
  if (!expo) throw LoadError("cannot write exposure file in " + dir.string());
  if (record.gt_hdr) {
    RadianceMap file_units = *record.gt_hdr;
    const double from_short = std::exp2(-record.biases[0]);
    for (double& v : file_units.pixels.values()) v *= from_short;
    write_hdr(dir / "HDRImg.hdr", file_units);
  }
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  Manifest m;
  std::vector<fs::path>* section = nullptr;
  std::string line;
  int lineno = 0;
  const fs::path base = path.parent_path();
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    line = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
    if (line == "[train]") {
      section = &m.train;
    } else if (line == "[test]") {
      section = &m.test;
    } else if (line.front() == '[') {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": unknown section " + line);
    } else {
      if (!section)
        throw LoadError(path.string() + ":" + std::to_string(lineno) +
                        ": scene listed before a [train]/[test] header");
      fs::path p(line);
      section->push_back(p.is_absolute() ? p : base / p);
    }
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "[train]\n";
  for (const auto& p : manifest.train) out << p.string() << '\n';
  out << "[test]\n";
  for (const auto& p : manifest.test) out << p.string() << '\n';
  if (!out) throw LoadError("cannot write manifest " + path.string());
}

std::vector<PatchSample> sample_patches(const SceneRecord& record, int size, int count,
                                        std::uint64_t seed, const DomainParams& params) {
  if (count < 0) throw InputError("patch count must be >= 0");
  if (size < 4 || size % 4 != 0) throw InputError("patch size must be a positive multiple of 4");
  if (size > record.height() || size > record.width())
    throw InputError("patch size " + std::to_string(size) + " exceeds scene extent");
  std::vector<PatchSample> out;
  if (count == 0) return out;
  const ModelInput full = prepare_input(record, params);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ys(0, record.height() - size);
  std::uniform_int_distribution<int> xs(0, record.width() - size);
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    PatchSample s;
    s.y0 = ys(rng);
    s.x0 = xs(rng);
    s.size = size;
    s.input = crop_input(full, s.y0, s.x0, size, size);
    if (record.gt_hdr) s.gt = crop(record.gt_hdr->pixels, s.y0, s.x0, size, size);
    out.push_back(std::move(s));
  }
  return out;
}

Tensor shift_image(const Tensor& img, int dy, int dx) {
  Tensor out(img.shape());
  const int h = img.height(), w = img.width();
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y) {
      const int sy = std::clamp(y - dy, 0, h - 1);
      for (int x = 0; x < w; ++x) out(c, y, x) = img(c, sy, std::clamp(x - dx, 0, w - 1));
    }
  return out;
}

SceneRecord apply_translation(const SceneRecord& record, int delta) {
  if (std::abs(delta) >= std::min(record.height(), record.width()))
    throw InputError("translation of " + std::to_string(delta) + " px exceeds scene extent");
  SceneRecord out = record;
  if (delta == 0) return out;
  out.ldr[0].pixels = shift_image(record.ldr[0].pixels, delta, delta);
  out.ldr[2].pixels = shift_image(record.ldr[2].pixels, delta, delta);
  return out;
}

Tensor synthesize_radiance(const SyntheticSceneOptions& opts) {
  if (opts.height < 1 || opts.width < 1) throw InputError("synthetic scene must be non-empty");
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int h = opts.height, w = opts.width;
  constexpr double kTau = 2.0 * std::numbers::pi;

  struct Wave {
    double fy, fx, phase, amp;
  };
  std::array<Wave, 4> waves;
  for (auto& wv : waves)
    wv = {u(rng) * 6.0 / h, u(rng) * 6.0 / w, u(rng) * kTau, 0.25 + 0.75 * u(rng)};
  struct Blob {
    double cy, cx, radius, peak;
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(std::max(opts.bright_blobs, 0)));
  for (auto& b : blobs)
    b = {u(rng) * h, u(rng) * w, (0.08 + 0.12 * u(rng)) * std::min(h, w), 0.45 + 0.5 * u(rng)};
  std::array<double, 3> tint{0.85 + 0.15 * u(rng), 0.85 + 0.15 * u(rng), 0.85 + 0.15 * u(rng)};

  Tensor lat(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double tex = 0.0, norm = 0.0;
      for (const auto& wv : waves) {
        tex += wv.amp * std::sin(kTau * (wv.fy * y + wv.fx * x) + wv.phase);
        norm += wv.amp;
      }
      double base = 0.02 + 0.1 * (0.5 + 0.5 * tex / norm);
      for (const auto& b : blobs) {
        const double d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
        base += b.peak * std::exp(-d2 / (2.0 * b.radius * b.radius)) *
                (0.8 + 0.2 * std::sin(kTau * (x + y) / 7.0));
      }
      for (int c = 0; c < 3; ++c) lat(c, y, x) = std::clamp(base * tint[c], 0.0, 1.0);
    }

  if (opts.clip_guard > 0.0) {
    const auto t = exposure_ratios(opts.biases);
    for (double& v : lat.values())
      for (double tk : t) {
        const double clip = 1.0 / tk;
        if (clip < 1.0 && std::abs(v - clip) < opts.clip_guard)
          v = v < clip ? clip - opts.clip_guard : clip + opts.clip_guard;
      }
  }
  return lat;
}

SceneRecord render_scene(const Tensor& latent, const SyntheticSceneOptions& opts) {
  const auto t = exposure_ratios(opts.biases);
  SceneRecord rec;
  rec.scene_id = "synthetic-" + std::to_string(opts.seed);
  rec.biases = opts.biases;
  for (int k = 0; k < 3; ++k) {
    const Tensor src =
        k == 1 ? latent : shift_image(latent, opts.motion_dy, opts.motion_dx);
    LdrImage img{Tensor(src.shape()), 16};
    for (std::size_t i = 0; i < src.size(); ++i) {
      double v = std::pow(std::clamp(src[i] * t[k], 0.0, 1.0), 1.0 / opts.gamma);
      if (opts.quantize16) v = std::round(v * 65535.0) / 65535.0;
      img.pixels[i] = v;
    }
    rec.ldr[k] = std::move(img);
  }
  rec.gt_hdr = RadianceMap{latent, 1.0};
  return rec;
}

SceneRecord synthesize_scene(const SyntheticSceneOptions& opts) {
  return render_scene(synthesize_radiance(opts), opts);
}

}  // namespace apnt

#include "apnt/rgbe.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "apnt/archive.hpp"
#include "apnt/error.hpp"

namespace apnt {

std::array<double, 3> rgbe_to_float(const Rgbe& px) {
  if (px[3] == 0) return {0.0, 0.0, 0.0};
  const double scale = std::ldexp(1.0, static_cast<int>(px[3]) - 136);
  return {px[0] * scale, px[1] * scale, px[2] * scale};
}

Rgbe float_to_rgbe(double r, double g, double b) {
  r = std::max(r, 0.0);
  g = std::max(g, 0.0);
  b = std::max(b, 0.0);
  const double v = std::max({r, g, b});
  if (!(v > 0.0) || !std::isfinite(v)) return {0, 0, 0, 0};
  int e = 0;
  const double f = std::frexp(v, &e);
  if (std::lround(f * 256.0) >= 256) ++e;
  if (e < -127) return {0, 0, 0, 0};
  e = std::min(e, 127);
  auto mant = [e](double c) {
    const long m = std::lround(std::ldexp(c, 8 - e));
    return static_cast<std::uint8_t>(std::clamp(m, 0L, 255L));
  };
  return {mant(r), mant(g), mant(b), static_cast<std::uint8_t>(e + 128)};
}

namespace {

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}
  bool has(std::size_t n) const { return n <= b_.size() - pos_; }
  std::uint8_t next() {
    if (!has(1)) throw FormatError("RGBE data truncated");
    return b_[pos_++];
  }
  std::string line() {
    std::string s;
    while (true) {
      if (!has(1)) throw FormatError("RGBE header truncated");
      const char c = static_cast<char>(b_[pos_++]);
      if (c == '\n') return s;
      s.push_back(c);
    }
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

void read_flat_scanline(ByteReader& in, std::vector<Rgbe>& line, Rgbe first) {
  const std::size_t w = line.size();
  std::size_t x = 0;
  int shift = 0;
  bool have_first = true;
  while (x < w) {
    Rgbe px;
    if (have_first) {
      px = first;
      have_first = false;
    } else {
      for (auto& c : px) c = in.next();
    }
    if (px[0] == 1 && px[1] == 1 && px[2] == 1) {
      // Old-style run: repeat the previous pixel.
      if (x == 0) throw FormatError("RGBE run without a previous pixel");
      const std::size_t count = static_cast<std::size_t>(px[3]) << shift;
      if (x + count > w) throw FormatError("RGBE run overflows scanline");
      std::fill_n(line.begin() + static_cast<long>(x), count, line[x - 1]);
      x += count;
      shift += 8;
    } else {
      line[x++] = px;
      shift = 0;
    }
  }
}

void read_rle_scanline(ByteReader& in, std::vector<Rgbe>& line) {
  const std::size_t w = line.size();
  for (int c = 0; c < 4; ++c) {
    std::size_t x = 0;
    while (x < w) {
      std::uint8_t code = in.next();
      if (code > 128) {
        const std::size_t n = code - 128u;
        if (x + n > w) throw FormatError("RGBE run overflows scanline");
        const std::uint8_t v = in.next();
        for (std::size_t i = 0; i < n; ++i) line[x++][c] = v;
      } else {
        if (code == 0 || x + code > w) throw FormatError("bad RGBE literal run");
        for (std::size_t i = 0; i < code; ++i) line[x++][c] = in.next();
      }
    }
  }
}

void write_rle_component(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& data) {
  constexpr std::size_t kMinRun = 4;
  const std::size_t n = data.size();
  std::size_t cur = 0;
  while (cur < n) {
    std::size_t beg_run = cur;
    std::size_t run = 0;
    std::size_t old_run = 0;
    while (run < kMinRun && beg_run < n) {
      beg_run += run;
      old_run = run;
      run = 1;
      while (beg_run + run < n && run < 127 && data[beg_run] == data[beg_run + run]) ++run;
    }
    // A short run right before the next long run is still written as a run.
    if (old_run > 1 && old_run == beg_run - cur) {
      out.push_back(static_cast<std::uint8_t>(128 + old_run));
      out.push_back(data[cur]);
      cur = beg_run;
    }
    while (cur < beg_run) {
      const std::size_t lit = std::min<std::size_t>(beg_run - cur, 128);
      out.push_back(static_cast<std::uint8_t>(lit));
      out.insert(out.end(), data.begin() + static_cast<long>(cur),
                 data.begin() + static_cast<long>(cur + lit));
      cur += lit;
    }
    if (run >= kMinRun) {
      out.push_back(static_cast<std::uint8_t>(128 + run));
      out.push_back(data[beg_run]);
      cur += run;
    }
  }
}

}  // namespace

RadianceMap decode_rgbe(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  const std::string magic = in.line();
  if (magic.rfind("#?", 0) != 0) throw FormatError("bad RGBE magic header");
  while (true) {
    const std::string l = in.line();
    if (l.empty()) break;
    if (l.rfind("FORMAT=", 0) == 0 && l != "FORMAT=32-bit_rle_rgbe")
      throw FormatError("unsupported RGBE pixel format: " + l);
  }
  const std::string res = in.line();
  std::istringstream rs(res);
  std::string ya, xa;
  long h = 0, w = 0;
  if (!(rs >> ya >> h >> xa >> w) || ya != "-Y" || xa != "+X" || h < 1 || w < 1 ||
      h > (1 << 16) || w > (1 << 16))
    throw FormatError("unsupported RGBE resolution line: " + res);

  RadianceMap out{Tensor(3, static_cast<int>(h), static_cast<int>(w)), 1.0};
  std::vector<Rgbe> line(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    Rgbe first;
    for (auto& c : first) c = in.next();
    const bool rle = w >= 8 && w < 32768 && first[0] == 2 && first[1] == 2 && !(first[2] & 0x80);
    if (rle) {
      if (((first[2] << 8) | first[3]) != w) throw FormatError("RGBE scanline width mismatch");
      read_rle_scanline(in, line);
    } else {
      read_flat_scanline(in, line, first);
    }
    for (int x = 0; x < w; ++x) {
      const auto v = rgbe_to_float(line[static_cast<std::size_t>(x)]);
      for (int c = 0; c < 3; ++c) out.pixels(c, y, x) = v[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_rgbe(const RadianceMap& img) {
  const Tensor& t = img.pixels;
  if (t.rank() != 3 || t.channels() != 3) throw InputError("encode_rgbe expects (3, H, W)");
  std::ostringstream hdr;
  hdr << "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y " << t.height() << " +X " << t.width() << "\n";
  const std::string head = hdr.str();
  std::vector<std::uint8_t> out(head.begin(), head.end());
  const int w = t.width();
  const bool rle = w >= 8 && w < 32768;
  std::vector<std::uint8_t> comp(static_cast<std::size_t>(w));
  std::vector<Rgbe> line(static_cast<std::size_t>(w));
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < w; ++x)
      line[static_cast<std::size_t>(x)] = float_to_rgbe(t(0, y, x), t(1, y, x), t(2, y, x));
    if (!rle) {
      for (const auto& px : line) out.insert(out.end(), px.begin(), px.end());
      continue;
    }
    out.insert(out.end(), {2, 2, static_cast<std::uint8_t>(w >> 8), static_cast<std::uint8_t>(w & 0xff)});
    for (int c = 0; c < 4; ++c) {
      for (int x = 0; x < w; ++x) comp[static_cast<std::size_t>(x)] = line[static_cast<std::size_t>(x)][c];
      write_rle_component(out, comp);
    }
  }
  return out;
}

RadianceMap read_hdr(const std::filesystem::path& path) {
  try {
    return decode_rgbe(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_hdr(const std::filesystem::path& path, const RadianceMap& img) {
  write_file_bytes(path, encode_rgbe(img));
}

}  // namespace apnt

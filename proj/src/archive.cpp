#include "apnt/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "apnt/error.hpp"

namespace apnt {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'P', 'N', 'T', 'A', 'R', 'C', '1'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  void raw(void* p, std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("archive truncated");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > bytes_.size() - pos_) throw FormatError("archive truncated");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::put(const std::string& name, const Tensor& t, StorageType type) {
  tensors_[name] = Entry{t, type};
}

void TensorArchive::put_text(const std::string& key, const std::string& value) {
  texts_[key] = value;
}

const Tensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw LoadError("archive has no tensor named '" + name + "'");
  return it->second.tensor;
}

const std::string& TensorArchive::text(const std::string& key) const {
  auto it = texts_.find(key);
  if (it == texts_.end()) throw LoadError("archive has no text entry '" + key + "'");
  return it->second;
}

StorageType TensorArchive::storage(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw LoadError("archive has no tensor named '" + name + "'");
  return it->second.type;
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : tensors_) out.push_back(k);
  return out;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, e] : tensors_) {
    w.str(name);
    const auto type = static_cast<std::uint8_t>(e.type);
    w.raw(&type, 1);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (int d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    if (e.type == StorageType::f64) {
      w.raw(e.tensor.data(), e.tensor.size() * sizeof(double));
    } else {
      for (double v : e.tensor.values()) {
        const float f = static_cast<float>(v);
        w.raw(&f, sizeof f);
      }
    }
  }
  w.u32(static_cast<std::uint32_t>(texts_.size()));
  for (const auto& [k, v] : texts_) {
    w.str(k);
    w.str(v);
  }
  return std::move(w.out);
}

TensorArchive TensorArchive::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  if (bytes.size() < sizeof magic) throw FormatError("not a tensor archive (too short)");
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw FormatError("not a tensor archive (bad magic)");
  TensorArchive ar;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    std::uint8_t type;
    r.raw(&type, 1);
    if (type > 1) throw FormatError("unknown storage type for '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      const std::uint32_t v = r.u32();
      if (v > (1u << 30)) throw FormatError("implausible dimension for '" + name + "'");
      d = static_cast<int>(v);
    }
    Tensor t(shape);
    if (type == 1) {
      r.raw(t.data(), t.size() * sizeof(double));
    } else {
      for (auto& v : t.values()) {
        float f;
        r.raw(&f, sizeof f);
        v = f;
      }
    }
    ar.put(name, t, static_cast<StorageType>(type));
  }
  const std::uint32_t ntext = r.u32();
  for (std::uint32_t i = 0; i < ntext; ++i) {
    std::string k = r.str();
    ar.put_text(k, r.str());
  }
  if (!r.done()) throw FormatError("trailing bytes after archive");
  return ar;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("write failed for " + path.string());
}

}  // namespace apnt

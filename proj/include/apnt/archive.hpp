#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "apnt/tensor.hpp"

namespace apnt {

enum class StorageType : std::uint8_t { f32 = 0, f64 = 1 };

/// Named-tensor archive.
///
/// Layout (all integers little-endian):
///   magic "APNTARC1"
///   u32 tensor count, then per tensor:
///     u32 name length, name bytes (UTF-8)
///     u8 storage type (0 = f32, 1 = f64)
///     u32 rank, rank x u32 dims
///     payload: prod(dims) values, little-endian IEEE-754
///   u32 text count, then per entry: u32 key length, key, u32 value length, value
///
/// Tensors stored as f64 round-trip bit-exactly; f32 entries round-trip
/// exactly for values that are representable in single precision.
class TensorArchive {
 public:
  void put(const std::string& name, const Tensor& t, StorageType type = StorageType::f64);
  void put_text(const std::string& key, const std::string& value);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  bool contains_text(const std::string& key) const { return texts_.count(key) != 0; }
  const Tensor& at(const std::string& name) const;
  const std::string& text(const std::string& key) const;
  StorageType storage(const std::string& name) const;
  std::vector<std::string> names() const;

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  struct Entry {
    Tensor tensor;
    StorageType type;
  };
  std::map<std::string, Entry> tensors_;
  std::map<std::string, std::string> texts_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace apnt

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace qhconv {

/// Binary container shared by checkpoints and preprocessed dataset caches.
///
/// Layout, all integers little-endian:
///   magic "QHCONTNR" (8 bytes) | u32 version | u64 config digest
///   u32 meta count,  then per entry: str key, str value
///   u32 array count, then per array: str name, u8 dtype, u8 rank,
///                                    u64 dims[rank], raw element data
/// where str is u32 length + bytes. Floats are IEEE-754 little-endian.
enum class DType : std::uint8_t { F32 = 0, F64 = 1, I32 = 2, U8 = 3, U64 = 4 };

std::size_t dtype_size(DType t);

struct NamedArray {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> bytes;  // host order while in memory

  std::uint64_t element_count() const;

  template <class T>
  static NamedArray from(std::string name, DType dtype,
                         std::vector<std::uint64_t> shape, std::span<const T> data);
  template <class T>
  std::vector<T> as() const;
};

struct Container {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t digest = 0;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedArray> arrays;

  void set_meta(const std::string& key, std::string value);
  std::optional<std::string> get_meta(const std::string& key) const;
  const NamedArray& array(const std::string& name) const;
  const NamedArray* find(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static Container deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);
};

}  // namespace qhconv

#include "qhconv/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "qhconv/errors.hpp"

namespace qhconv {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'Q', 'H', 'C', 'O', 'N', 'T', 'N', 'R'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void put_str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError("container truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I32: return 4;
    case DType::U8: return 1;
    case DType::U64: return 8;
  }
  throw IoError("unknown dtype");
}

std::uint64_t NamedArray::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <class T>
NamedArray NamedArray::from(std::string name, DType dtype,
                            std::vector<std::uint64_t> shape, std::span<const T> data) {
  NamedArray a;
  a.name = std::move(name);
  a.dtype = dtype;
  a.shape = std::move(shape);
  if (dtype_size(dtype) != sizeof(T) || a.element_count() != data.size())
    throw std::invalid_argument("NamedArray::from: dtype or shape mismatch for " + a.name);
  a.bytes.resize(data.size_bytes());
  std::memcpy(a.bytes.data(), data.data(), data.size_bytes());
  return a;
}

template <class T>
std::vector<T> NamedArray::as() const {
  if (dtype_size(dtype) != sizeof(T))
    throw IoError("array '" + name + "' has a different element size");
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

template NamedArray NamedArray::from<float>(std::string, DType, std::vector<std::uint64_t>, std::span<const float>);
template NamedArray NamedArray::from<double>(std::string, DType, std::vector<std::uint64_t>, std::span<const double>);
template NamedArray NamedArray::from<std::int32_t>(std::string, DType, std::vector<std::uint64_t>, std::span<const std::int32_t>);
template NamedArray NamedArray::from<std::uint8_t>(std::string, DType, std::vector<std::uint64_t>, std::span<const std::uint8_t>);
template NamedArray NamedArray::from<std::uint64_t>(std::string, DType, std::vector<std::uint64_t>, std::span<const std::uint64_t>);
template std::vector<float> NamedArray::as<float>() const;
template std::vector<double> NamedArray::as<double>() const;
template std::vector<std::int32_t> NamedArray::as<std::int32_t>() const;
template std::vector<std::uint8_t> NamedArray::as<std::uint8_t>() const;
template std::vector<std::uint64_t> NamedArray::as<std::uint64_t>() const;

void Container::set_meta(const std::string& key, std::string value) {
  for (auto& [k, v] : meta)
    if (k == key) {
      v = std::move(value);
      return;
    }
  meta.emplace_back(key, std::move(value));
}

std::optional<std::string> Container::get_meta(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  return std::nullopt;
}

const NamedArray* Container::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Container::array(const std::string& name) const {
  if (const auto* a = find(name)) return *a;
  throw IoError("container has no array '" + name + "'");
}

std::vector<std::uint8_t> Container::serialize() const {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.put(kVersion);
  w.put(digest);
  w.put(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.put_str(k);
    w.put_str(v);
  }
  w.put(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.bytes.size() != a.element_count() * dtype_size(a.dtype))
      throw std::invalid_argument("array '" + a.name + "' size does not match shape");
    w.put_str(a.name);
    w.put(static_cast<std::uint8_t>(a.dtype));
    w.put(static_cast<std::uint8_t>(a.shape.size()));
    for (auto d : a.shape) w.put(d);
    w.out.insert(w.out.end(), a.bytes.begin(), a.bytes.end());
  }
  return std::move(w.out);
}

Container Container::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(sizeof kMagic);
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0)
    throw IoError("not a qhconv container (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw IoError("unsupported container version " + std::to_string(version));
  Container c;
  c.digest = r.get<std::uint64_t>();
  const auto nmeta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto k = r.get_str();
    auto v = r.get_str();
    c.meta.emplace_back(std::move(k), std::move(v));
  }
  const auto narrays = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < narrays; ++i) {
    NamedArray a;
    a.name = r.get_str();
    const auto dt = r.get<std::uint8_t>();
    if (dt > static_cast<std::uint8_t>(DType::U64)) throw IoError("unknown dtype in container");
    a.dtype = static_cast<DType>(dt);
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) a.shape.push_back(r.get<std::uint64_t>());
    const auto payload = r.take(a.element_count() * dtype_size(a.dtype));
    a.bytes.assign(payload.begin(), payload.end());
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw IoError("trailing bytes after container");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace qhconv

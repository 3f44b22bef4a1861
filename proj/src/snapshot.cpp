#include "v1d3/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "v1d3/csv.hpp"

namespace v1d3 {
namespace {

constexpr char kMagic[8] = {'V', '1', 'D', '3', 'S', 'N', 'A', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  template <class T>
  void le(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    U u = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>(u >> (8 * i)));
  }
  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Parser {
 public:
  explicit Parser(const std::vector<unsigned char>& buf) : buf_(buf) {}
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T le() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(U));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(u);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw InputError("snapshot truncated");
  }
  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void save_snapshot(const ValueSnapshot& snap, const std::filesystem::path& path) {
  const auto& shape = snap.net.shape();
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(shape.embedding.n_quantizers);
  w.le<std::uint32_t>(shape.embedding.memory_rows);
  w.le<std::uint32_t>(shape.embedding.embed_dim);
  w.le<std::uint32_t>(shape.embedding.grid_width);
  w.le<double>(shape.embedding.tile_cells);
  w.le<double>(shape.embedding.time_tile_s);
  w.le<std::uint8_t>(shape.uses_time_input ? 1 : 0);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(shape.hidden.size()));
  for (int width : shape.hidden) w.le<std::uint32_t>(width);
  w.le<double>(snap.gamma);
  w.le<double>(snap.discount_time_unit_s);
  const auto params = snap.net.flat_params();
  w.le<std::uint64_t>(params.size());
  for (double p : params) w.le<double>(p);
  const auto sum = checksum(w.data().data(), w.data().size());
  w.le<std::uint64_t>(sum);

  auto out = csv::open_output(path);
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw InputError("failed writing snapshot " + path.string());
}

ValueSnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open snapshot " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 8) throw InputError("snapshot truncated");

  Parser p(buf);
  char magic[8];
  p.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw InputError("not a value snapshot");
  if (p.le<std::uint32_t>() != kVersion) throw InputError("unsupported snapshot version");

  NetworkShape shape;
  shape.embedding.n_quantizers = static_cast<int>(p.le<std::uint32_t>());
  shape.embedding.memory_rows = static_cast<int>(p.le<std::uint32_t>());
  shape.embedding.embed_dim = static_cast<int>(p.le<std::uint32_t>());
  shape.embedding.grid_width = static_cast<int>(p.le<std::uint32_t>());
  shape.embedding.tile_cells = p.le<double>();
  shape.embedding.time_tile_s = p.le<double>();
  shape.uses_time_input = p.le<std::uint8_t>() != 0;
  const auto hidden_count = p.le<std::uint32_t>();
  if (hidden_count > 64) throw InputError("snapshot has an implausible layer count");
  shape.hidden.clear();
  for (std::uint32_t i = 0; i < hidden_count; ++i) shape.hidden.push_back(static_cast<int>(p.le<std::uint32_t>()));

  ValueSnapshot snap;
  snap.gamma = p.le<double>();
  snap.discount_time_unit_s = p.le<double>();
  try {
    snap.net = ValueNetwork(shape);
  } catch (const ConfigError& e) {
    throw InputError(std::string("snapshot shape invalid: ") + e.what());
  }
  const auto count = p.le<std::uint64_t>();
  if (count != snap.net.param_count()) throw InputError("snapshot parameter count does not match its shape");
  std::vector<double> params(count);
  for (auto& v : params) v = p.le<double>();
  const std::size_t body = p.pos();
  const auto stored = p.le<std::uint64_t>();
  if (stored != checksum(buf.data(), body)) throw InputError("snapshot checksum mismatch");
  if (p.pos() != buf.size()) throw InputError("snapshot has trailing bytes");
  snap.net.set_flat_params(params);
  return snap;
}

}  // namespace v1d3

#include "metaplast/harness/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "metaplast/errors.hpp"

namespace metaplast::harness {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'C', 'K', 'P', 'T', '\0', '\0'};

enum SectionType : std::uint8_t { kLearnable = 0, kConstant = 1, kU64 = 2, kText = 3 };

struct Section {
  std::string name;
  std::uint8_t type = kLearnable;
  std::uint64_t rows = 0, cols = 0;
  std::vector<std::uint8_t> payload;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

Section doubles(std::string name, std::uint8_t type, std::size_t rows, std::size_t cols,
                const std::vector<double>& v) {
  Section s{std::move(name), type, rows, cols, {}};
  s.payload.reserve(v.size() * 8);
  for (double x : v) put_u64(s.payload, std::bit_cast<std::uint64_t>(x));
  return s;
}

Section u64(std::string name, std::uint64_t x) {
  Section s{std::move(name), kU64, 1, 1, {}};
  put_u64(s.payload, x);
  return s;
}

Section text(std::string name, const std::string& t) {
  Section s{std::move(name), kText, 1, t.size(), {}};
  s.payload.assign(t.begin(), t.end());
  return s;
}

std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}

  void need(std::size_t n) const {
    if (pos_ > end_ || end_ - pos_ < n) throw CorruptFileError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= std::uint32_t{b_[pos_++]} << (8 * i);
    return x;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= std::uint64_t{b_[pos_++]} << (8 * i);
    return x;
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint64_t read_u64_le(const std::uint8_t* p) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= std::uint64_t{p[i]} << (8 * i);
  return x;
}

}  // namespace

TrainConfig Checkpoint::config() const { return parse_config(config_text); }

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<Section> secs;
  secs.push_back(text("meta.config", ck.config_text));
  secs.push_back(u64("meta.update", ck.update));
  secs.push_back(text("meta.rng", ck.rng_state));
  for (const auto& [name, e] : ck.params.entries()) {
    secs.push_back(doubles("param." + name, e.learnable ? kLearnable : kConstant, e.tensor.shape.rows,
                           e.tensor.shape.cols, e.tensor.data));
  }
  for (const auto& [name, m] : ck.optimizer.m) secs.push_back(doubles("opt.m." + name, kConstant, m.size(), 1, m));
  for (const auto& [name, v] : ck.optimizer.v) secs.push_back(doubles("opt.v." + name, kConstant, v.size(), 1, v));
  secs.push_back(u64("opt.step", ck.optimizer.step));

  std::size_t header = 8 + 4 + 4;
  for (const auto& s : secs) header += 4 + s.name.size() + 1 + 8 * 4;

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(secs.size()));
  std::uint64_t offset = header;
  for (const auto& s : secs) {
    put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    out.push_back(s.type);
    put_u64(out, s.rows);
    put_u64(out, s.cols);
    put_u64(out, offset);
    put_u64(out, s.payload.size());
    offset += s.payload.size();
  }
  for (const auto& s : secs) out.insert(out.end(), s.payload.begin(), s.payload.end());
  put_u32(out, crc(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 + 4 + 4 + 4) throw CorruptFileError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw CorruptFileError("not a checkpoint file (bad magic)");
  const std::size_t body = bytes.size() - 4;
  Reader r(bytes, body);
  r.str(8);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint version " + std::to_string(version) + ", expected " +
                               std::to_string(kCheckpointVersion));
  }
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= std::uint32_t{bytes[body + i]} << (8 * i);
  if (crc(bytes.data(), body) != stored) throw CorruptFileError("checkpoint checksum mismatch");

  const std::uint32_t count = r.u32();
  Checkpoint ck;
  bool have_config = false, have_update = false, have_rng = false, have_step = false;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = r.u32();
    const std::string name = r.str(len);
    const std::uint8_t type = r.u8();
    const std::uint64_t rows = r.u64(), cols = r.u64(), off = r.u64(), nbytes = r.u64();
    if (off > body || nbytes > body - off) throw CorruptFileError("section " + name + " out of range");
    const std::uint8_t* p = bytes.data() + off;
    auto as_doubles = [&] {
      if (type > kConstant || nbytes != rows * cols * 8) throw CorruptFileError("section " + name + " malformed");
      std::vector<double> v(rows * cols);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::bit_cast<double>(read_u64_le(p + 8 * i));
      return v;
    };
    auto as_u64 = [&] {
      if (type != kU64 || nbytes != 8) throw CorruptFileError("section " + name + " malformed");
      return read_u64_le(p);
    };
    auto as_text = [&] {
      if (type != kText || nbytes != cols) throw CorruptFileError("section " + name + " malformed");
      return std::string(reinterpret_cast<const char*>(p), nbytes);
    };
    if (name == "meta.config") {
      ck.config_text = as_text();
      have_config = true;
    } else if (name == "meta.update") {
      ck.update = as_u64();
      have_update = true;
    } else if (name == "meta.rng") {
      ck.rng_state = as_text();
      have_rng = true;
    } else if (name == "opt.step") {
      ck.optimizer.step = as_u64();
      have_step = true;
    } else if (name.rfind("param.", 0) == 0) {
      ck.params.add(name.substr(6), ad::Tensor({rows, cols}, as_doubles()), type == kLearnable);
    } else if (name.rfind("opt.m.", 0) == 0) {
      ck.optimizer.m[name.substr(6)] = as_doubles();
    } else if (name.rfind("opt.v.", 0) == 0) {
      ck.optimizer.v[name.substr(6)] = as_doubles();
    } else {
      throw CorruptFileError("unknown checkpoint section " + name);
    }
  }
  if (!have_config || !have_update || !have_rng || !have_step) throw CorruptFileError("checkpoint is missing sections");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ck);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace metaplast::harness

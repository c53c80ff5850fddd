#include "punctasr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "punctasr/vocab.hpp"

namespace punctasr {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'A', 'S', 'R', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw std::runtime_error("checkpoint: truncated");
  return v;
}

std::string get_bytes(std::istream& in, std::uint32_t n) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated");
  return s;
}

}  // namespace

void save_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kContainerVersion);
  const std::string meta = c.meta.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic)) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const std::uint32_t version = get_u32(in);
  if (version != kContainerVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Container c;
  c.meta = nlohmann::json::parse(get_bytes(in, get_u32(in)));
  const std::uint32_t count = get_u32(in);
  c.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = get_bytes(in, get_u32(in));
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    t.value.resize(rows, cols);
    if (!in.read(reinterpret_cast<char*>(t.value.data()),
                 static_cast<std::streamsize>(t.value.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint: truncated tensor " + t.name);
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void assign_tensors(const std::vector<TensorRecord>& records, std::size_t offset,
                    const std::vector<std::pair<std::string, Matrix*>>& targets) {
  if (records.size() < offset + targets.size()) throw InvalidInput("checkpoint: too few tensors");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const TensorRecord& r = records[offset + i];
    const auto& [name, target] = targets[i];
    if (r.name != name) throw InvalidInput("checkpoint: expected tensor '" + name + "', found '" + r.name + "'");
    if (r.value.rows() != target->rows() || r.value.cols() != target->cols()) {
      throw InvalidInput("checkpoint: shape mismatch for " + name);
    }
    *target = r.value;
  }
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace punctasr

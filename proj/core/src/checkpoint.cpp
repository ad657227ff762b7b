#include "estr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "estr/error.hpp"

namespace estr {
namespace {

constexpr char kMagic[4] = {'E', 'S', 'T', 'R'};
constexpr std::uint16_t kFormatVersion = 1;

std::uint64_t fnv1a(const std::vector<char>& bytes, std::size_t n) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ull;
  }
  return h;
}

void put_bytes(std::vector<char>& out, const void* p, std::size_t n) {
  const char* c = static_cast<const char*>(p);
  out.insert(out.end(), c, c + n);
}

template <typename T>
void put_le(std::vector<char>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::vector<char>& in, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(static_cast<unsigned char>(in[offset + i]))
             << (8 * i);
  return value;
}

std::string header_text(const DenoiserConfig& c) {
  std::ostringstream os;
  os << "vocab=" << c.vocab << "\n"
     << "length=" << c.length << "\n"
     << "d_model=" << c.d_model << "\n"
     << "layers=" << c.layers << "\n"
     << "heads=" << c.heads << "\n"
     << "hidden=" << c.hidden << "\n"
     << "positions=" << (c.positions ? 1 : 0) << "\n"
     << "time=" << (c.time_conditioning == TimeConditioning::kScalar
                        ? "scalar"
                        : "none")
     << "\n"
     << "tie_output=" << (c.tie_output ? 1 : 0) << "\n";
  return os.str();
}

DenoiserConfig parse_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("checkpoint header line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto want = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("checkpoint header missing " + key);
    return it->second;
  };
  DenoiserConfig c;
  c.vocab = std::stoi(want("vocab"));
  c.length = std::stoi(want("length"));
  c.d_model = std::stoi(want("d_model"));
  c.layers = std::stoi(want("layers"));
  c.heads = std::stoi(want("heads"));
  c.hidden = std::stoi(want("hidden"));
  c.positions = want("positions") == "1";
  const std::string& time = want("time");
  if (time == "scalar")
    c.time_conditioning = TimeConditioning::kScalar;
  else if (time == "none")
    c.time_conditioning = TimeConditioning::kNone;
  else
    throw IoError("checkpoint header: unknown time conditioning '" + time +
                  "'");
  c.tie_output = want("tie_output") == "1";
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const Denoiser& model, const std::string& path) {
  std::vector<char> bytes;
  put_bytes(bytes, kMagic, 4);
  put_le<std::uint16_t>(bytes, kFormatVersion);
  const std::string header = header_text(model.config());
  put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(header.size()));
  put_bytes(bytes, header.data(), header.size());
  for (const auto& [name, tensor] : model.parameters()) {
    (void)name;
    for (float v : tensor->data) {
      std::uint32_t raw;
      std::memcpy(&raw, &v, sizeof raw);
      put_le<std::uint32_t>(bytes, raw);
    }
  }
  put_le<std::uint64_t>(bytes, fnv1a(bytes, bytes.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

Denoiser load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());

  constexpr std::size_t kPrefix = 4 + 2 + 4;  // magic + version + header len
  if (bytes.size() < kPrefix)
    throw TruncationError("checkpoint shorter than its fixed prefix");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw VersionError("not a checkpoint file (bad magic)");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kFormatVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       ", expected " + std::to_string(kFormatVersion));
  const auto header_len = get_le<std::uint32_t>(bytes, 6);
  if (bytes.size() < kPrefix + header_len)
    throw TruncationError("checkpoint header cut short");
  const std::string header(bytes.data() + kPrefix, header_len);
  const DenoiserConfig config = parse_header(header);

  Denoiser model = Denoiser::init(config, 0);
  std::size_t tensor_bytes = 0;
  for (const auto& [name, tensor] : model.parameters()) {
    (void)name;
    tensor_bytes += tensor->data.size() * sizeof(std::uint32_t);
  }
  const std::size_t expected = kPrefix + header_len + tensor_bytes + 8;
  if (bytes.size() < expected)
    throw TruncationError("checkpoint parameter data cut short: have " +
                          std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected));
  if (bytes.size() > expected)
    throw IoError("checkpoint has trailing bytes");
  const std::uint64_t stored = get_le<std::uint64_t>(bytes, expected - 8);
  const std::uint64_t actual = fnv1a(bytes, expected - 8);
  if (stored != actual) throw ChecksumError("checkpoint checksum mismatch");

  std::size_t offset = kPrefix + header_len;
  for (auto& [name, tensor] : model.parameters()) {
    (void)name;
    for (float& v : tensor->data) {
      const std::uint32_t raw = get_le<std::uint32_t>(bytes, offset);
      std::memcpy(&v, &raw, sizeof v);
      offset += sizeof raw;
    }
  }
  return model;
}

}  // namespace estr

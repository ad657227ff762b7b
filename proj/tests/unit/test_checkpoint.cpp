// Checkpoint round trips and the three distinct failure modes: wrong
// format/version, truncation, and in-place corruption.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "estr/checkpoint.hpp"
#include "test_util.hpp"

using namespace estr;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path(std::string("/tmp/entsteer_test_") + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

DenoiserConfig sample_config(bool positions, bool tie,
                             TimeConditioning time) {
  DenoiserConfig c;
  c.vocab = 5;
  c.length = 6;
  c.d_model = 8;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 12;
  c.positions = positions;
  c.tie_output = tie;
  c.time_conditioning = time;
  return c;
}

}  // namespace

TEST_CASE("save then load round-trips every configuration variant bitwise") {
  int variant = 0;
  for (bool positions : {true, false})
    for (bool tie : {true, false})
      for (auto time : {TimeConditioning::kNone, TimeConditioning::kScalar}) {
        TempFile f("roundtrip_" + std::to_string(variant++));
        auto model = Denoiser::init(sample_config(positions, tie, time),
                                    1000 + variant);
        save_checkpoint(model, f.path);
        auto loaded = load_checkpoint(f.path);

        CHECK(loaded.config().positions == positions);
        CHECK(loaded.config().tie_output == tie);
        CHECK(loaded.config().time_conditioning == time);
        auto a = model.parameters();
        auto b = loaded.parameters();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
          CHECK(a[i].first == b[i].first);
          CHECK(estr::testing::bitwise_equal(*a[i].second, *b[i].second));
        }
      }
}

TEST_CASE("loading a corrupted file reports a checksum failure") {
  TempFile f("corrupt");
  auto model = Denoiser::init(
      sample_config(true, true, TimeConditioning::kNone), 2);
  save_checkpoint(model, f.path);
  auto bytes = slurp(f.path);
  bytes[bytes.size() / 2] ^= 0x20;  // flip a bit inside the tensor data
  spit(f.path, bytes);
  CHECK_THROWS_AS(load_checkpoint(f.path), ChecksumError);
}

TEST_CASE("loading an unknown format version reports a version error") {
  TempFile f("version");
  auto model = Denoiser::init(
      sample_config(true, true, TimeConditioning::kNone), 3);
  save_checkpoint(model, f.path);
  auto bytes = slurp(f.path);
  bytes[4] = 9;  // format version field
  spit(f.path, bytes);
  CHECK_THROWS_AS(load_checkpoint(f.path), VersionError);

  bytes = slurp(f.path);
  bytes[4] = 1;
  bytes[0] = 'X';  // magic
  spit(f.path, bytes);
  CHECK_THROWS_AS(load_checkpoint(f.path), VersionError);
}

TEST_CASE("loading a truncated file reports truncation") {
  TempFile f("truncated");
  auto model = Denoiser::init(
      sample_config(true, true, TimeConditioning::kNone), 4);
  save_checkpoint(model, f.path);
  auto bytes = slurp(f.path);

  auto cut = bytes;
  cut.resize(bytes.size() - 40);
  spit(f.path, cut);
  CHECK_THROWS_AS(load_checkpoint(f.path), TruncationError);

  cut = bytes;
  cut.resize(7);  // inside the fixed prefix
  spit(f.path, cut);
  CHECK_THROWS_AS(load_checkpoint(f.path), TruncationError);

  auto padded = bytes;
  padded.push_back(0);
  spit(f.path, padded);
  CHECK_THROWS_AS(load_checkpoint(f.path), IoError);
}

TEST_CASE("missing file reports an io error") {
  CHECK_THROWS_AS(load_checkpoint("/tmp/entsteer_no_such_file.bin"), IoError);
}

TEST_CASE("distinct error types share the io base but stay distinguishable") {
  // ChecksumError must not be catchable as VersionError and vice versa.
  CHECK_FALSE((std::is_base_of_v<VersionError, ChecksumError>));
  CHECK_FALSE((std::is_base_of_v<ChecksumError, VersionError>));
  CHECK((std::is_base_of_v<IoError, TruncationError>));
}

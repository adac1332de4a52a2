#include <catch_amalgamated.hpp>

#include <fstream>

#include "cola/bundle_io.hpp"
#include "cola/classifier.hpp"
#include "test_support.hpp"

using namespace cola;
namespace fs = std::filesystem;

namespace {

EmbeddingBundle minimal_bundle() {
  EmbeddingBundle b;
  b.manifest.dim = 4;
  b.manifest.num_classes = 2;
  b.manifest.descriptions_per_class = 2;
  b.manifest.views_per_sample = 1;
  b.manifest.num_samples = 1;
  b.manifest.class_names = {"cat", "dog"};
  b.text_features = RowMatrixF::Zero(4, 4);
  for (int i = 0; i < 4; ++i) b.text_features(i, i) = 1.0f;
  b.image_views = RowMatrixF::Zero(1, 4);
  b.image_views(0, 1) = 1.0f;
  b.labels = {1};
  return b;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename Fn>
std::pair<ErrorKind, std::string> capture(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return {e.kind(), e.what()};
  }
  FAIL("expected cola::Error");
  return {};
}

}  // namespace

TEST_CASE("minimal bundle loads with validated shapes") {
  const auto dir = test_support::scratch("bundle_minimal");
  write_bundle(minimal_bundle(), dir);
  const auto b = load_bundle(dir);
  CHECK(b.text_features.rows() == 4);
  CHECK(b.text_features.cols() == 4);
  CHECK(b.image_views.rows() == 1);
  CHECK(b.labels == std::vector<std::uint32_t>{1});
  CHECK(b.manifest.class_names == std::vector<std::string>{"cat", "dog"});
}

TEST_CASE("floats are stored little-endian binary32") {
  const auto dir = test_support::scratch("bundle_endian");
  write_bundle(minimal_bundle(), dir);
  const auto bytes = slurp(dir / "images.bin");
  REQUIRE(bytes.size() == 16);
  // view (0, 1, 0, 0): second float is 1.0f = 0x3f800000
  CHECK(static_cast<unsigned char>(bytes[4]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[6]) == 0x80);
  CHECK(static_cast<unsigned char>(bytes[7]) == 0x3f);
  const auto labels = slurp(dir / "labels.bin");
  REQUIRE(labels.size() == 4);
  CHECK(labels[0] == 1);
  CHECK(labels[3] == 0);
}

TEST_CASE("truncated images.bin is a byte-count mismatch naming the file") {
  const auto dir = test_support::scratch("bundle_truncated");
  write_bundle(minimal_bundle(), dir);
  auto bytes = slurp(dir / "images.bin");
  bytes.resize(bytes.size() - 4);
  spit(dir / "images.bin", bytes);
  const auto [kind, msg] = capture([&] { load_bundle(dir); });
  CHECK(kind == ErrorKind::data);
  CHECK_THAT(msg, Catch::Matchers::ContainsSubstring("byte-count mismatch"));
  CHECK_THAT(msg, Catch::Matchers::ContainsSubstring("images.bin"));
}

TEST_CASE("label equal to K is out of range at sample 0") {
  const auto dir = test_support::scratch("bundle_label");
  write_bundle(minimal_bundle(), dir);
  spit(dir / "labels.bin", {2, 0, 0, 0});
  const auto [kind, msg] = capture([&] { load_bundle(dir); });
  CHECK(kind == ErrorKind::data);
  CHECK_THAT(msg, Catch::Matchers::ContainsSubstring("out of range at sample index 0"));
}

TEST_CASE("non-finite stored value is rejected") {
  const auto dir = test_support::scratch("bundle_nan");
  write_bundle(minimal_bundle(), dir);
  auto bytes = slurp(dir / "text.bin");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 8, &nan, 4);
  spit(dir / "text.bin", bytes);
  const auto [kind, msg] = capture([&] { load_bundle(dir); });
  CHECK(kind == ErrorKind::data);
  CHECK_THAT(msg, Catch::Matchers::ContainsSubstring("text.bin"));
}

TEST_CASE("unit bundle with a non-unit row is rejected") {
  auto b = minimal_bundle();
  b.image_views(0, 1) = 2.0f;
  const auto dir = test_support::scratch("bundle_nonunit");
  CHECK_THROWS_AS(write_bundle(b, dir), Error);
  b.manifest.normalization = Normalization::raw;
  write_bundle(b, dir);
  CHECK(load_bundle(dir).image_views(0, 1) == 2.0f);
}

TEST_CASE("missing file and malformed manifest are data errors") {
  const auto dir = test_support::scratch("bundle_missing");
  CHECK(capture([&] { load_bundle(dir); }).first == ErrorKind::data);
  write_bundle(minimal_bundle(), dir);
  spit(dir / "manifest.json", {'{', 'x'});
  CHECK(capture([&] { load_bundle(dir); }).first == ErrorKind::data);
}

TEST_CASE("manifest invariants are enforced") {
  auto b = minimal_bundle();
  b.manifest.class_names = {"cat", "cat"};
  CHECK_THROWS_AS(validate_bundle(b), Error);
  b = minimal_bundle();
  b.manifest.dtype = "f64le";
  CHECK_THROWS_AS(validate_bundle(b), Error);
  b = minimal_bundle();
  b.manifest.views_per_sample = 0;
  CHECK_THROWS_AS(validate_bundle(b), Error);
}

TEST_CASE("write then load is bitwise identical") {
  const auto original = test_support::small_synthetic(11);
  const auto dir = test_support::scratch("bundle_roundtrip");
  write_bundle(original, dir);
  const auto loaded = load_bundle(dir);
  CHECK(std::memcmp(loaded.text_features.data(), original.text_features.data(),
                    sizeof(float) * static_cast<std::size_t>(original.text_features.size())) == 0);
  CHECK(std::memcmp(loaded.image_views.data(), original.image_views.data(),
                    sizeof(float) * static_cast<std::size_t>(original.image_views.size())) == 0);
  CHECK(loaded.labels == original.labels);
  CHECK(loaded.manifest.metadata == original.manifest.metadata);
}

TEST_CASE("writing below a regular file fails with an error") {
  const auto dir = test_support::scratch("bundle_readonly");
  spit(dir / "plain", {'x'});
  CHECK_THROWS_AS(write_bundle(minimal_bundle(), dir / "plain" / "out"), Error);
}

TEST_CASE("images.bin holds exactly S*N*d*4 bytes") {
  SyntheticParams p;
  p.num_samples = 100;
  const auto dir = test_support::scratch("bundle_size");
  write_bundle(generate_synthetic(p), dir);
  CHECK(fs::file_size(dir / "images.bin") == 100u * p.views_per_sample * p.dim * 4u);
  CHECK(fs::file_size(dir / "text.bin") ==
        static_cast<std::uintmax_t>(p.num_classes) * p.descriptions_per_class * p.dim * 4u);
  CHECK(fs::file_size(dir / "labels.bin") == 400u);
}

TEST_CASE("synthetic generation is a pure function of its parameters") {
  const auto a = test_support::small_synthetic(5);
  const auto b = test_support::small_synthetic(5);
  const auto c = test_support::small_synthetic(6);
  CHECK(a.text_features == b.text_features);
  CHECK(a.image_views == b.image_views);
  CHECK(a.labels == b.labels);
  CHECK(a.image_views != c.image_views);
  CHECK(a.manifest.metadata.at("generator") == kGeneratorName);
}

TEST_CASE("noise-free synthetic views equal their prototype and cosine is perfect") {
  SyntheticParams p;
  p.noise_scale = 0.0;
  p.num_samples = 50;
  const auto b = generate_synthetic(p);
  for (std::uint32_t s = 0; s < p.num_samples; ++s) {
    const auto first = b.labels[s];
    const std::uint32_t twin = first;  // sample index `first` has the same label (label = s % K)
    for (std::uint32_t n = 0; n < p.views_per_sample; ++n) {
      CHECK(b.image_views.row(b.view_row(s, n)) == b.image_views.row(b.view_row(twin, 0)));
    }
  }
  const auto bank = make_text_bank(b, WeightingConfig{});
  const auto report = evaluate(b, bank, {Method::cosine}, ClassifierConfig{}, nullptr);
  CHECK(report.at(Method::cosine).accuracy == 1.0);
}

TEST_CASE("synthetic parameter errors") {
  SyntheticParams p;
  p.subspace_dim = p.dim + 1;
  CHECK_THROWS_AS(generate_synthetic(p), Error);
  p = SyntheticParams{};
  p.class_similarity = 1.0;
  CHECK_THROWS_AS(generate_synthetic(p), Error);
}

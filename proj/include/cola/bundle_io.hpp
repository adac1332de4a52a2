#pragma once

// On-disk embedding bundle: manifest.json plus three little-endian blobs.
//
//   text.bin    K*M*d float32, class-major then description-major
//   images.bin  S*N*d float32, sample-major then view-major
//   labels.bin  S     uint32
//
// All blobs are raw row-major arrays with no header and no padding.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cola/common.hpp"
#include "cola/random.hpp"

namespace cola {

namespace fs = std::filesystem;

enum class Normalization { unit, raw };

inline const char* to_string(Normalization n) { return n == Normalization::unit ? "unit" : "raw"; }

struct Manifest {
  std::uint32_t dim = 0;
  std::uint32_t num_classes = 0;
  std::uint32_t descriptions_per_class = 0;
  std::uint32_t views_per_sample = 0;
  std::uint32_t num_samples = 0;
  std::vector<std::string> class_names;
  std::string dtype = "f32le";
  Normalization normalization = Normalization::unit;
  nlohmann::json metadata = nlohmann::json::object();
};

struct EmbeddingBundle {
  Manifest manifest;
  RowMatrixF text_features;  // (K*M) x d
  RowMatrixF image_views;    // (S*N) x d
  std::vector<std::uint32_t> labels;

  Eigen::Index text_row(std::uint32_t cls, std::uint32_t desc) const {
    return static_cast<Eigen::Index>(cls) * manifest.descriptions_per_class + desc;
  }
  Eigen::Index view_row(std::uint32_t sample, std::uint32_t view) const {
    return static_cast<Eigen::Index>(sample) * manifest.views_per_sample + view;
  }

  // Views of one sample as an N x d double matrix.
  Matrix sample_views(std::uint32_t sample) const {
    const auto n = manifest.views_per_sample;
    return image_views.middleRows(view_row(sample, 0), n).cast<double>();
  }
};

inline constexpr double kUnitNormTolerance = 1e-4;

namespace detail {

inline constexpr const char* kBundleModule = "bundle_io";

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data(kBundleModule, "missing file " + path.filename().string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data(kBundleModule, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail_data(kBundleModule, "write failed for " + path.string());
}

inline std::vector<unsigned char> encode_floats(const RowMatrixF& m) {
  std::vector<unsigned char> out;
  out.reserve(static_cast<std::size_t>(m.size()) * 4);
  const float* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(p[i]));
  return out;
}

inline RowMatrixF decode_floats(const std::vector<unsigned char>& bytes, const std::string& name,
                                Eigen::Index rows, Eigen::Index cols) {
  const std::size_t expected = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 4;
  if (bytes.size() != expected) {
    fail_data(kBundleModule, "byte-count mismatch in " + name + ": expected " + std::to_string(expected) +
                                 " bytes, found " + std::to_string(bytes.size()) + " (offset " +
                                 std::to_string(std::min(bytes.size(), expected)) + ")");
  }
  RowMatrixF m(rows, cols);
  float* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const std::size_t offset = static_cast<std::size_t>(i) * 4;
    p[i] = std::bit_cast<float>(get_u32(bytes.data() + offset));
    if (!std::isfinite(p[i])) {
      fail_data(kBundleModule, "non-finite value in " + name + " at byte offset " + std::to_string(offset));
    }
  }
  return m;
}

inline void check_unit_rows(const RowMatrixF& m, const std::string& name) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).cast<double>().norm();
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      fail_data(kBundleModule, "row " + std::to_string(r) + " of " + name + " has norm " + std::to_string(norm) +
                                   " but manifest declares unit normalization (byte offset " +
                                   std::to_string(static_cast<std::size_t>(r) * m.cols() * 4) + ")");
    }
  }
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const Manifest& m) {
  return {{"dim", m.dim},
          {"num_classes", m.num_classes},
          {"descriptions_per_class", m.descriptions_per_class},
          {"views_per_sample", m.views_per_sample},
          {"num_samples", m.num_samples},
          {"class_names", m.class_names},
          {"dtype", m.dtype},
          {"normalization", to_string(m.normalization)},
          {"metadata", m.metadata}};
}

inline void validate_manifest(const Manifest& m) {
  using detail::kBundleModule;
  if (m.dim < 1 || m.num_classes < 1 || m.descriptions_per_class < 1 || m.views_per_sample < 1) {
    fail_data(kBundleModule, "manifest: dim, num_classes, descriptions_per_class and views_per_sample must be >= 1");
  }
  if (m.dtype != "f32le") fail_data(kBundleModule, "manifest: unsupported dtype '" + m.dtype + "'");
  if (m.class_names.size() != m.num_classes) {
    fail_data(kBundleModule, "manifest: class_names has " + std::to_string(m.class_names.size()) +
                                 " entries, expected " + std::to_string(m.num_classes));
  }
  std::set<std::string> seen;
  for (const auto& name : m.class_names) {
    if (name.empty()) fail_data(kBundleModule, "manifest: empty class name");
    if (!seen.insert(name).second) fail_data(kBundleModule, "manifest: duplicate class name '" + name + "'");
  }
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  using detail::kBundleModule;
  Manifest m;
  try {
    auto positive = [&](const char* key) {
      const auto v = j.at(key).get<std::int64_t>();
      if (v < 0 || v > 0xffffffffLL) fail_data(kBundleModule, std::string("manifest: ") + key + " out of range");
      return static_cast<std::uint32_t>(v);
    };
    m.dim = positive("dim");
    m.num_classes = positive("num_classes");
    m.descriptions_per_class = positive("descriptions_per_class");
    m.views_per_sample = positive("views_per_sample");
    m.num_samples = positive("num_samples");
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.dtype = j.at("dtype").get<std::string>();
    const auto norm = j.at("normalization").get<std::string>();
    if (norm == "unit") {
      m.normalization = Normalization::unit;
    } else if (norm == "raw") {
      m.normalization = Normalization::raw;
    } else {
      fail_data(kBundleModule, "manifest: unknown normalization '" + norm + "'");
    }
    if (j.contains("metadata")) {
      if (!j["metadata"].is_object()) fail_data(kBundleModule, "manifest: metadata must be an object");
      m.metadata = j["metadata"];
    }
  } catch (const nlohmann::json::exception& e) {
    fail_data(kBundleModule, std::string("manifest.json: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

inline void validate_bundle(const EmbeddingBundle& b) {
  using detail::kBundleModule;
  const auto& m = b.manifest;
  validate_manifest(m);
  const Eigen::Index d = m.dim;
  const Eigen::Index text_rows = static_cast<Eigen::Index>(m.num_classes) * m.descriptions_per_class;
  const Eigen::Index view_rows = static_cast<Eigen::Index>(m.num_samples) * m.views_per_sample;
  if (b.text_features.rows() != text_rows || b.text_features.cols() != d) {
    fail_data(kBundleModule, "text_features shape does not match manifest");
  }
  if (b.image_views.rows() != view_rows || b.image_views.cols() != d) {
    fail_data(kBundleModule, "image_views shape does not match manifest");
  }
  if (b.labels.size() != m.num_samples) fail_data(kBundleModule, "labels length does not match manifest");
  if (!b.text_features.allFinite()) fail_data(kBundleModule, "non-finite value in text_features");
  if (!b.image_views.allFinite()) fail_data(kBundleModule, "non-finite value in image_views");
  for (std::size_t s = 0; s < b.labels.size(); ++s) {
    if (b.labels[s] >= m.num_classes) {
      fail_data(kBundleModule, "label " + std::to_string(b.labels[s]) + " out of range at sample index " +
                                   std::to_string(s));
    }
  }
  if (m.normalization == Normalization::unit) {
    detail::check_unit_rows(b.text_features, "text_features");
    detail::check_unit_rows(b.image_views, "image_views");
  }
}

// Rows of a unit bundle are validated against kUnitNormTolerance and left
// bit-for-bit as stored; consumers renormalize in double precision.
inline EmbeddingBundle load_bundle(const fs::path& dir) {
  using detail::kBundleModule;
  EmbeddingBundle b;
  const auto manifest_bytes = detail::read_file(dir / "manifest.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail_data(kBundleModule, std::string("manifest.json: ") + e.what());
  }
  b.manifest = manifest_from_json(j);
  const auto& m = b.manifest;
  const Eigen::Index d = m.dim;

  b.text_features = detail::decode_floats(detail::read_file(dir / "text.bin"), "text.bin",
                                          static_cast<Eigen::Index>(m.num_classes) * m.descriptions_per_class, d);
  b.image_views = detail::decode_floats(detail::read_file(dir / "images.bin"), "images.bin",
                                        static_cast<Eigen::Index>(m.num_samples) * m.views_per_sample, d);

  const auto label_bytes = detail::read_file(dir / "labels.bin");
  if (label_bytes.size() != static_cast<std::size_t>(m.num_samples) * 4) {
    fail_data(kBundleModule, "byte-count mismatch in labels.bin: expected " +
                                 std::to_string(static_cast<std::size_t>(m.num_samples) * 4) + " bytes, found " +
                                 std::to_string(label_bytes.size()));
  }
  b.labels.resize(m.num_samples);
  for (std::size_t s = 0; s < b.labels.size(); ++s) {
    b.labels[s] = detail::get_u32(label_bytes.data() + 4 * s);
    if (b.labels[s] >= m.num_classes) {
      fail_data(kBundleModule, "labels.bin: label " + std::to_string(b.labels[s]) + " out of range at sample index " +
                                   std::to_string(s) + " (byte offset " + std::to_string(4 * s) + ")");
    }
  }
  if (m.normalization == Normalization::unit) {
    detail::check_unit_rows(b.text_features, "text.bin");
    detail::check_unit_rows(b.image_views, "images.bin");
  }
  return b;
}

inline void write_bundle(const EmbeddingBundle& b, const fs::path& dir) {
  using detail::kBundleModule;
  validate_bundle(b);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail_data(kBundleModule, "cannot create directory " + dir.string());

  const std::string manifest = manifest_to_json(b.manifest).dump(2) + "\n";
  detail::write_file(dir / "manifest.json", std::vector<unsigned char>(manifest.begin(), manifest.end()));
  detail::write_file(dir / "text.bin", detail::encode_floats(b.text_features));
  detail::write_file(dir / "images.bin", detail::encode_floats(b.image_views));
  std::vector<unsigned char> labels;
  labels.reserve(b.labels.size() * 4);
  for (auto l : b.labels) detail::put_u32(labels, l);
  detail::write_file(dir / "labels.bin", labels);
}

struct SyntheticParams {
  std::uint64_t seed = 42;
  std::uint32_t dim = 64;
  std::uint32_t num_classes = 10;
  std::uint32_t descriptions_per_class = 8;
  std::uint32_t views_per_sample = 5;
  std::uint32_t num_samples = 200;
  double noise_scale = 0.1;
  std::uint32_t subspace_dim = 16;
  // Expected cosine between two class prototypes (shared-cone geometry).
  double class_similarity = 0.7;
};

// Spread of descriptions around their class prototype.
inline constexpr double kDescriptionNoise = 0.1;

// Class prototypes live in a random subspace_dim-dimensional subspace; every
// description and view is its prototype plus isotropic in-subspace noise of
// the given norm scale, then unit-normalized. Labels cycle through classes.
inline EmbeddingBundle generate_synthetic(const SyntheticParams& p) {
  using detail::kBundleModule;
  if (p.dim < 1 || p.num_classes < 1 || p.descriptions_per_class < 1 || p.views_per_sample < 1 ||
      p.num_samples < 1 || p.subspace_dim < 1) {
    fail_usage(kBundleModule, "synthetic: all counts must be >= 1");
  }
  if (p.subspace_dim > p.dim) fail_usage(kBundleModule, "synthetic: subspace_dim exceeds dim");
  if (!(p.noise_scale >= 0.0) || !std::isfinite(p.noise_scale)) {
    fail_usage(kBundleModule, "synthetic: noise_scale must be a non-negative real");
  }

  Rng rng(p.seed);
  const Eigen::Index d = p.dim;
  const Eigen::Index k = p.subspace_dim;
  const Matrix basis = rng.orthonormal_basis(d, k);
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));

  auto in_subspace_noise = [&](double scale) -> Vector {
    return scale * inv_sqrt_k * (basis * rng.normal_vector(k));
  };
  auto unit = [](const Vector& v) -> Vector {
    const double n = v.norm();
    if (n <= kMinNorm) fail_numerical(kBundleModule, "synthetic: degenerate zero vector");
    return v / n;
  };

  if (!(p.class_similarity >= 0.0 && p.class_similarity < 1.0)) {
    fail_usage(kBundleModule, "synthetic: class_similarity must lie in [0, 1)");
  }
  const Vector shared = basis * rng.unit_vector(k);
  std::vector<Vector> prototypes;
  prototypes.reserve(p.num_classes);
  for (std::uint32_t y = 0; y < p.num_classes; ++y) {
    prototypes.push_back(unit(std::sqrt(p.class_similarity) * shared +
                              std::sqrt(1.0 - p.class_similarity) * (basis * rng.unit_vector(k))));
  }

  EmbeddingBundle b;
  auto& m = b.manifest;
  m.dim = p.dim;
  m.num_classes = p.num_classes;
  m.descriptions_per_class = p.descriptions_per_class;
  m.views_per_sample = p.views_per_sample;
  m.num_samples = p.num_samples;
  m.normalization = Normalization::unit;
  for (std::uint32_t y = 0; y < p.num_classes; ++y) m.class_names.push_back("class_" + std::to_string(y));
  m.metadata = {{"generator", kGeneratorName},
                {"source", "synthetic"},
                {"seed", p.seed},
                {"noise_scale", p.noise_scale},
                {"description_noise", kDescriptionNoise},
                {"subspace_dim", p.subspace_dim},
                {"class_similarity", p.class_similarity}};

  b.text_features.resize(static_cast<Eigen::Index>(p.num_classes) * p.descriptions_per_class, d);
  for (std::uint32_t y = 0; y < p.num_classes; ++y) {
    for (std::uint32_t j = 0; j < p.descriptions_per_class; ++j) {
      b.text_features.row(b.text_row(y, j)) =
          unit(prototypes[y] + in_subspace_noise(kDescriptionNoise)).transpose().cast<float>();
    }
  }

  b.image_views.resize(static_cast<Eigen::Index>(p.num_samples) * p.views_per_sample, d);
  b.labels.resize(p.num_samples);
  for (std::uint32_t s = 0; s < p.num_samples; ++s) {
    const std::uint32_t y = s % p.num_classes;
    b.labels[s] = y;
    for (std::uint32_t n = 0; n < p.views_per_sample; ++n) {
      b.image_views.row(b.view_row(s, n)) =
          unit(prototypes[y] + in_subspace_noise(p.noise_scale)).transpose().cast<float>();
    }
  }
  return b;
}

}  // namespace cola

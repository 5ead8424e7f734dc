#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "lsro/losses.hpp"
#include "lsro/rng.hpp"
#include "lsro/tensor.hpp"

namespace lsro {

enum class Split : std::uint8_t { train = 0, query = 1, gallery = 2 };

struct Sample {
  std::vector<double> features;
  std::int32_t identity = -1;  // -1 for unlabeled / generated
  std::int32_t camera = -1;    // -1 when not applicable
  Split split = Split::train;
  SourceFlag source = SourceFlag::real;

  bool labeled() const { return source == SourceFlag::real; }
};

using Samples = std::vector<Sample>;

struct SynthConfig {
  std::size_t num_identities = 100;
  std::size_t cameras = 2;
  std::size_t min_per_camera = 3;
  std::size_t max_per_camera = 8;
  std::size_t feature_dim = 32;
  double identity_spread = 1.0;
  double camera_shift_scale = 0.5;
  double noise_sigma = 0.6;
  // Per-sample variation along a few fixed directions shared by every
  // identity (pose/lighting analog); 0 disables it.
  std::size_t nuisance_dim = 0;
  double nuisance_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_identities < 2) throw std::invalid_argument("synth: num_identities must be >= 2");
    if (cameras < 2) throw std::invalid_argument("synth: cameras must be >= 2");
    if (feature_dim == 0) throw std::invalid_argument("synth: feature_dim must be > 0");
    if (min_per_camera > max_per_camera) {
      throw std::invalid_argument("synth: min_per_camera exceeds max_per_camera");
    }
    if (nuisance_dim > feature_dim) throw std::invalid_argument("synth: nuisance_dim exceeds feature_dim");
    if (identity_spread < 0.0 || camera_shift_scale < 0.0 || noise_sigma < 0.0 || nuisance_sigma < 0.0) {
      throw std::invalid_argument("synth: scales must be non-negative");
    }
  }
};

namespace detail {

// Per-camera affine map x -> A x + b with A = I + s G / sqrt(D).
struct CameraTransform {
  std::vector<double> matrix;  // D x D row-major
  std::vector<double> bias;

  std::vector<double> apply(const std::vector<double>& x) const {
    const std::size_t d = bias.size();
    std::vector<double> out(bias);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i] += matrix[i * d + j] * x[j];
    return out;
  }
};

inline std::vector<CameraTransform> camera_transforms(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "synth.cameras"));
  const std::size_t d = cfg.feature_dim;
  const double mix = cfg.camera_shift_scale / std::sqrt(static_cast<double>(d));
  std::vector<CameraTransform> cams(cfg.cameras);
  for (auto& cam : cams) {
    cam.matrix.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        cam.matrix[i * d + j] = (i == j ? 1.0 : 0.0) + mix * rng.normal();
    cam.bias.resize(d);
    for (auto& b : cam.bias) b = cfg.camera_shift_scale * cfg.identity_spread * rng.normal();
  }
  return cams;
}

// Unit directions of the shared nuisance subspace, nuisance_dim x D.
inline std::vector<std::vector<double>> nuisance_basis(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "synth.nuisance"));
  std::vector<std::vector<double>> basis(cfg.nuisance_dim, std::vector<double>(cfg.feature_dim));
  for (auto& dir : basis) {
    double n2 = 0.0;
    for (auto& v : dir) {
      v = rng.normal();
      n2 += v * v;
    }
    for (auto& v : dir) v /= std::sqrt(n2);
  }
  return basis;
}

inline void add_sample_noise(const SynthConfig& cfg, const std::vector<std::vector<double>>& basis,
                             std::vector<double>& x, Rng& rng) {
  for (auto& v : x) v += cfg.noise_sigma * rng.normal();
  for (const auto& dir : basis) {
    const double a = cfg.nuisance_sigma * rng.normal();
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += a * dir[j];
  }
}

inline std::vector<double> draw_center(const SynthConfig& cfg, Rng& rng) {
  std::vector<double> c(cfg.feature_dim);
  for (auto& v : c) v = cfg.identity_spread * rng.normal();
  return c;
}

}  // namespace detail

/// Synthetic multi-camera identity data. Each identity has a random center;
/// each camera applies a fixed affine perturbation shared by all identities;
/// each sample adds isotropic Gaussian noise.
inline Samples generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const auto cams = detail::camera_transforms(cfg);
  const auto basis = detail::nuisance_basis(cfg);
  Rng center_rng(derive_seed(cfg.seed, "synth.identities"));
  Rng sample_rng(derive_seed(cfg.seed, "synth.samples"));
  Samples out;
  for (std::size_t id = 0; id < cfg.num_identities; ++id) {
    const auto center = detail::draw_center(cfg, center_rng);
    for (std::size_t c = 0; c < cfg.cameras; ++c) {
      const auto base = cams[c].apply(center);
      const auto count = static_cast<std::size_t>(sample_rng.uniform_int(
          static_cast<std::int64_t>(cfg.min_per_camera), static_cast<std::int64_t>(cfg.max_per_camera)));
      for (std::size_t s = 0; s < count; ++s) {
        Sample smp;
        smp.features = base;
        detail::add_sample_noise(cfg, basis, smp.features, sample_rng);
        smp.identity = static_cast<std::int32_t>(id);
        smp.camera = static_cast<std::int32_t>(c);
        out.push_back(std::move(smp));
      }
    }
  }
  return out;
}

/// Unlabeled real-looking pool from `count` extra identities that never
/// appear in the dataset. Uses the same camera transforms as
/// generate_dataset(cfg). Samples carry Z=1 and identity -1.
inline Samples generate_heldout_pool(const SynthConfig& cfg, std::size_t count) {
  cfg.validate();
  const auto cams = detail::camera_transforms(cfg);
  const auto basis = detail::nuisance_basis(cfg);
  Rng rng(derive_seed(cfg.seed, "synth.heldout"));
  Samples out;
  out.reserve(count);
  const std::size_t per_identity = std::max<std::size_t>(1, cfg.max_per_camera);
  std::vector<double> center;
  for (std::size_t i = 0; i < count; ++i) {
    if (i % per_identity == 0) center = detail::draw_center(cfg, rng);
    const auto cam = rng.index(cfg.cameras);
    Sample smp;
    smp.features = cams[cam].apply(center);
    detail::add_sample_noise(cfg, basis, smp.features, rng);
    smp.source = SourceFlag::generated;
    out.push_back(std::move(smp));
  }
  return out;
}

struct SplitResult {
  Samples train;
  Samples query;
  Samples gallery;
  std::vector<std::int32_t> train_identities;
  std::vector<std::int32_t> test_identities;
  // Test identities seen under fewer than two cameras; their queries may have
  // no cross-camera match.
  std::vector<std::int32_t> single_camera_identities;
};

/// Partitions identities into train and test sets; for every test identity
/// and every camera it appears in, one sample becomes the query and the rest
/// go to the gallery.
inline SplitResult split_protocol(const Samples& ds, double train_fraction, Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split_protocol: train fraction must lie in (0,1)");
  }
  std::map<std::int32_t, std::vector<std::size_t>> by_identity;
  std::set<std::int32_t> cameras;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds[i].labeled()) continue;
    by_identity[ds[i].identity].push_back(i);
    cameras.insert(ds[i].camera);
  }
  if (cameras.size() < 2) throw std::invalid_argument("split_protocol: need at least 2 cameras");
  if (by_identity.size() < 2) throw std::invalid_argument("split_protocol: need at least 2 identities");

  std::vector<std::int32_t> ids;
  for (const auto& [id, _] : by_identity) ids.push_back(id);
  rng.shuffle(ids);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);

  SplitResult out;
  out.train_identities.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test_identities.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(out.train_identities.begin(), out.train_identities.end());
  std::sort(out.test_identities.begin(), out.test_identities.end());

  for (auto id : out.train_identities) {
    for (auto idx : by_identity[id]) {
      Sample s = ds[idx];
      s.split = Split::train;
      out.train.push_back(std::move(s));
    }
  }
  for (auto id : out.test_identities) {
    std::map<std::int32_t, std::vector<std::size_t>> by_camera;
    for (auto idx : by_identity[id]) by_camera[ds[idx].camera].push_back(idx);
    if (by_camera.size() < 2) out.single_camera_identities.push_back(id);
    for (const auto& [cam, members] : by_camera) {
      const std::size_t pick = rng.index(members.size());
      for (std::size_t m = 0; m < members.size(); ++m) {
        Sample s = ds[members[m]];
        s.split = m == pick ? Split::query : Split::gallery;
        (m == pick ? out.query : out.gallery).push_back(std::move(s));
      }
    }
  }
  return out;
}

inline std::map<std::int32_t, std::size_t> class_histogram(const Samples& ds) {
  std::map<std::int32_t, std::size_t> hist;
  for (const auto& s : ds) {
    if (s.labeled()) ++hist[s.identity];
  }
  return hist;
}

// Feature rows stacked into an N x D tensor.
inline Tensor features_matrix(const Samples& samples) {
  if (samples.empty()) throw std::invalid_argument("features_matrix: no samples");
  const std::size_t d = samples.front().features.size();
  std::vector<double> data;
  data.reserve(samples.size() * d);
  for (const auto& s : samples) {
    if (s.features.size() != d) {
      throw std::invalid_argument("features_matrix: ragged feature widths " + std::to_string(d) +
                                  " vs " + std::to_string(s.features.size()));
    }
    data.insert(data.end(), s.features.begin(), s.features.end());
  }
  return Tensor({samples.size(), d}, std::move(data));
}

// ---------------------------------------------------------------------------
// LSROFEAT binary feature files (little-endian):
//   "LSROFEAT" | u32 version | u64 N | u32 D |
//   N x { i32 identity | i32 camera | u8 split | u8 Z | D x f64 }
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[8] = {'L', 'S', 'R', 'O', 'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 24;

namespace io {

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    buf_.insert(buf_.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  const std::vector<unsigned char>& bytes() const { return buf_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> bytes, std::string source)
      : buf_(std::move(bytes)), source_(std::move(source)) {}

  static ByteReader load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes), path.string());
  }

  void require(std::size_t n, const char* what) const {
    if (pos_ + n > buf_.size()) {
      throw std::runtime_error(source_ + ": truncated while reading " + what + " at byte offset " +
                               std::to_string(pos_) + " (need " + std::to_string(n) +
                               " bytes, " + std::to_string(buf_.size() - pos_) + " remain)");
    }
  }

  template <typename T>
  T get(const char* what) {
    require(sizeof(T), what);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  bool match(const char* expected, std::size_t n) {
    require(n, "magic");
    const bool ok = std::memcmp(buf_.data() + pos_, expected, n) == 0;
    pos_ += n;
    return ok;
  }

  std::size_t offset() const { return pos_; }
  std::size_t size() const { return buf_.size(); }
  const std::string& source() const { return source_; }

 private:
  std::vector<unsigned char> buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace io

inline void write_features(const std::filesystem::path& path, const Samples& samples) {
  const std::size_t d = samples.empty() ? 0 : samples.front().features.size();
  io::ByteWriter w;
  w.put_bytes(kFeatureMagic, sizeof(kFeatureMagic));
  w.put<std::uint32_t>(kFeatureVersion);
  w.put<std::uint64_t>(samples.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (const auto& s : samples) {
    if (s.features.size() != d) {
      throw std::invalid_argument("write_features: ragged feature widths in " + path.string());
    }
    w.put<std::int32_t>(s.identity);
    w.put<std::int32_t>(s.camera);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.split));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.source));
    for (double v : s.features) w.put<double>(v);
  }
  w.save(path);
}

inline Samples read_features(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  if (r.size() < kFeatureHeaderBytes) {
    throw std::runtime_error(path.string() + ": truncated header, expected " +
                             std::to_string(kFeatureHeaderBytes) + " bytes, file has " +
                             std::to_string(r.size()));
  }
  if (!r.match(kFeatureMagic, sizeof(kFeatureMagic))) {
    throw std::runtime_error(path.string() + ": bad magic at byte offset 0, not an LSROFEAT file");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFeatureVersion) {
    throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version) +
                             " at byte offset 8");
  }
  const auto n = r.get<std::uint64_t>("count");
  const auto d = r.get<std::uint32_t>("dimension");
  const std::size_t record = 10 + 8 * static_cast<std::size_t>(d);
  const std::size_t expected = kFeatureHeaderBytes + static_cast<std::size_t>(n) * record;
  if (r.size() != expected) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(expected) +
                             " bytes for " + std::to_string(n) + " records of dimension " +
                             std::to_string(d) + ", file has " + std::to_string(r.size()));
  }
  Samples out(static_cast<std::size_t>(n));
  for (auto& s : out) {
    const auto record_start = r.offset();
    s.identity = r.get<std::int32_t>("identity");
    s.camera = r.get<std::int32_t>("camera");
    const auto split = r.get<std::uint8_t>("split");
    const auto z = r.get<std::uint8_t>("source");
    if (split > 2) {
      throw std::runtime_error(path.string() + ": invalid split code " + std::to_string(split) +
                               " at byte offset " + std::to_string(record_start + 8));
    }
    if (z > 1) {
      throw std::runtime_error(path.string() + ": invalid source flag " + std::to_string(z) +
                               " at byte offset " + std::to_string(record_start + 9));
    }
    s.split = static_cast<Split>(split);
    s.source = static_cast<SourceFlag>(z);
    s.features.resize(d);
    for (auto& v : s.features) v = r.get<double>("feature");
  }
  return out;
}

// Manifest: UTF-8 text, one "role,path" pair per line after a header.
struct ManifestEntry {
  std::string role;
  std::string path;
};

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "role,path\n";
  for (const auto& e : entries) out << e.role << ',' << e.path << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected role,path");
    }
    out.push_back({line.substr(0, comma), line.substr(comma + 1)});
  }
  return out;
}

}  // namespace lsro

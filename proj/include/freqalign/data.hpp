#pragma once

// Procedural blind-IQA domains, score rescaling, augmentation, on-disk
// datasets, and paired source/target batch sampling.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "freqalign/tensor.hpp"

namespace freqalign {

namespace fs = std::filesystem;

/// splitmix64 over a sequence of words; used to derive independent RNG streams.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (std::uint64_t w : words) {
    h += w + 0x9E3779B97F4A7C15ull;
    std::uint64_t z = h;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    h = z ^ (z >> 31);
  }
  return h;
}

// Stream tags for mix_seed.
enum : std::uint64_t { kStreamBase = 1, kStreamLevel = 2, kStreamDistort = 3, kStreamPerm = 4, kStreamCrop = 5 };

/// Grayscale image, row-major, pixel values nominally in [0, 1].
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int r, int c, double fill = 0.0) : rows(r), cols(c), pixels(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int i, int j) { return pixels[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return pixels[static_cast<std::size_t>(i) * cols + j]; }
  bool operator==(const Image&) const = default;
};

// ---------------------------------------------------------------------------
// Distortions

enum class DistortionFamily { gaussian_blur, additive_noise, block_average, contrast_shift };

inline std::string_view to_string(DistortionFamily f) {
  switch (f) {
    case DistortionFamily::gaussian_blur: return "gaussian-blur";
    case DistortionFamily::additive_noise: return "additive-noise";
    case DistortionFamily::block_average: return "block-average";
    case DistortionFamily::contrast_shift: return "contrast-shift";
  }
  return "?";
}

inline DistortionFamily parse_family(std::string_view s) {
  if (s == "gaussian-blur") return DistortionFamily::gaussian_blur;
  if (s == "additive-noise") return DistortionFamily::additive_noise;
  if (s == "block-average") return DistortionFamily::block_average;
  if (s == "contrast-shift") return DistortionFamily::contrast_shift;
  fail<DataError>("unknown distortion family '", s,
                  "' (expected gaussian-blur, additive-noise, block-average or contrast-shift)");
}

/// Severity per level; level 0 is the undistorted image.
inline std::vector<double> default_levels(DistortionFamily f, int count = 5) {
  require<DataError>(count >= 2, "a distortion needs at least two levels");
  double top = 0.0;
  switch (f) {
    case DistortionFamily::gaussian_blur: top = 3.2; break;   // sigma in pixels
    case DistortionFamily::additive_noise: top = 0.16; break; // noise std
    case DistortionFamily::block_average: top = 7.0; break;   // extra block width (block = 1 + s)
    case DistortionFamily::contrast_shift: top = 0.8; break;  // contrast reduction
  }
  std::vector<double> lv(count);
  for (int i = 0; i < count; ++i) lv[i] = top * i / (count - 1);
  return lv;
}

struct DistortionSpec {
  DistortionFamily family = DistortionFamily::gaussian_blur;
  std::vector<double> levels;  // severities, strictly increasing, levels[0] = 0

  static DistortionSpec standard(DistortionFamily f, int count = 5) { return {f, default_levels(f, count)}; }

  int level_count() const { return static_cast<int>(levels.size()); }

  /// Score of a level: linear from 5 (level 0) down to 1 (last level).
  double quality(int level) const {
    require<DataError>(level >= 0 && level < level_count(), "distortion level ", level, " out of range");
    return 5.0 - 4.0 * level / (level_count() - 1);
  }

  void validate() const {
    require<DataError>(level_count() >= 2, to_string(family), ": at least two levels are required");
    require<DataError>(levels[0] == 0.0, to_string(family), ": level 0 must have zero severity");
    for (int i = 1; i < level_count(); ++i)
      require<DataError>(levels[i] > levels[i - 1], to_string(family), ": severities must strictly increase");
  }
};

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  Image tmp(img.rows, img.cols), out(img.rows, img.cols);
  for (int i = 0; i < img.rows; ++i)
    for (int j = 0; j < img.cols; ++j) {
      double acc = 0.0;
      for (int q = -r; q <= r; ++q) acc += k[q + r] * img(i, reflect(j + q, img.cols));
      tmp(i, j) = acc;
    }
  for (int i = 0; i < img.rows; ++i)
    for (int j = 0; j < img.cols; ++j) {
      double acc = 0.0;
      for (int q = -r; q <= r; ++q) acc += k[q + r] * tmp(reflect(i + q, img.rows), j);
      out(i, j) = acc;
    }
  return out;
}

inline Image block_average(const Image& img, int block) {
  if (block <= 1) return img;
  Image out(img.rows, img.cols);
  for (int bi = 0; bi < img.rows; bi += block)
    for (int bj = 0; bj < img.cols; bj += block) {
      const int ei = std::min(img.rows, bi + block), ej = std::min(img.cols, bj + block);
      double s = 0.0;
      for (int i = bi; i < ei; ++i)
        for (int j = bj; j < ej; ++j) s += img(i, j);
      s /= static_cast<double>((ei - bi) * (ej - bj));
      for (int i = bi; i < ei; ++i)
        for (int j = bj; j < ej; ++j) out(i, j) = s;
    }
  return out;
}

inline void clamp_unit(Image& img) {
  for (double& p : img.pixels) p = std::clamp(p, 0.0, 1.0);
}

inline Image apply_distortion(const Image& img, DistortionFamily f, double severity, std::mt19937_64& rng) {
  Image out;
  switch (f) {
    case DistortionFamily::gaussian_blur:
      out = gaussian_blur(img, severity);
      break;
    case DistortionFamily::additive_noise: {
      out = img;
      if (severity > 0.0) {
        std::normal_distribution<double> n(0.0, severity);
        for (double& p : out.pixels) p += n(rng);
      }
      break;
    }
    case DistortionFamily::block_average:
      out = block_average(img, 1 + static_cast<int>(std::lround(severity)));
      break;
    case DistortionFamily::contrast_shift:
      out = img;
      if (severity > 0.0)
        for (double& p : out.pixels) p = 0.5 + (1.0 - severity) * (p - 0.5);
      break;
    default:
      fail<DataError>("unknown distortion family ", static_cast<int>(f));
  }
  clamp_unit(out);
  return out;
}

// ---------------------------------------------------------------------------
// Base content

enum class BaseContent { filtered_noise, gradient, checker, mixture };

inline std::string_view to_string(BaseContent b) {
  switch (b) {
    case BaseContent::filtered_noise: return "filtered-noise";
    case BaseContent::gradient: return "gradient";
    case BaseContent::checker: return "checker";
    case BaseContent::mixture: return "mixture";
  }
  return "?";
}

inline BaseContent parse_base(std::string_view s) {
  if (s == "filtered-noise") return BaseContent::filtered_noise;
  if (s == "gradient") return BaseContent::gradient;
  if (s == "checker") return BaseContent::checker;
  if (s == "mixture") return BaseContent::mixture;
  fail<DataError>("unknown base content '", s, "' (expected filtered-noise, gradient, checker or mixture)");
}

namespace detail {

inline void normalize_range(Image& img, double lo, double hi) {
  const auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const double a = *mn, b = *mx;
  for (double& p : img.pixels) p = b > a ? lo + (hi - lo) * (p - a) / (b - a) : 0.5 * (lo + hi);
}

inline Image filtered_noise(int size, double sigma, std::mt19937_64& rng) {
  Image img(size, size);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& p : img.pixels) p = n(rng);
  img = gaussian_blur(img, sigma);
  normalize_range(img, 0.1, 0.9);
  return img;
}

inline Image gradient(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double theta = 2.0 * std::numbers::pi * u(rng);
  const double lo = 0.1 + 0.3 * u(rng), hi = 0.6 + 0.3 * u(rng);
  Image img(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) img(i, j) = std::cos(theta) * j + std::sin(theta) * i;
  normalize_range(img, lo, hi);
  return img;
}

inline Image checker(int size, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> period(4, 16), phase(0, 15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int p = period(rng), oi = phase(rng), oj = phase(rng);
  const double lo = 0.1 + 0.3 * u(rng), hi = 0.6 + 0.3 * u(rng);
  Image img(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) img(i, j) = (((i + oi) / p + (j + oj) / p) % 2) ? hi : lo;
  return img;
}

}  // namespace detail

inline Image make_base(BaseContent kind, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (kind) {
    case BaseContent::filtered_noise: return detail::filtered_noise(size, 1.0 + 3.0 * u(rng), rng);
    case BaseContent::gradient: return detail::gradient(size, rng);
    case BaseContent::checker: return detail::checker(size, rng);
    case BaseContent::mixture: {
      const Image a = detail::filtered_noise(size, 1.0 + 3.0 * u(rng), rng);
      const Image b = detail::gradient(size, rng);
      const Image c = detail::checker(size, rng);
      double w[3] = {u(rng) + 0.1, u(rng) + 0.1, u(rng) + 0.1};
      const double s = w[0] + w[1] + w[2];
      Image out(size, size);
      for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = (w[0] * a.pixels[i] + w[1] * b.pixels[i] + w[2] * c.pixels[i]) / s;
      return out;
    }
  }
  fail<DataError>("unknown base content ", static_cast<int>(kind));
}

// ---------------------------------------------------------------------------
// Datasets

enum class DomainRole { source, target };

inline std::string_view to_string(DomainRole r) { return r == DomainRole::source ? "source" : "target"; }

inline DomainRole parse_role(std::string_view s) {
  if (s == "source") return DomainRole::source;
  if (s == "target") return DomainRole::target;
  fail<DataError>("unknown domain role '", s, "'");
}

struct DomainItem {
  Image image;
  double score = 0.0;  // in [1, 5]; for target domains this is held out from training
  int level = -1;      // distortion level when known
  std::string name;
};

/// Affine map from the original score scale to [1, 5].
struct RescaleRecord {
  double original_low = 1.0;
  double original_high = 5.0;
  bool higher_is_better = true;
  double scale = 1.0;
  double offset = 0.0;
};

struct DomainDataset {
  std::string name;
  DomainRole role = DomainRole::source;
  std::vector<DomainItem> items;
  RescaleRecord rescale;
  nlohmann::json provenance;  // generator parameters, written to the manifest

  int size() const { return static_cast<int>(items.size()); }
};

inline RescaleRecord make_rescale(double low, double high, bool higher_is_better) {
  require<DataError>(std::isfinite(low) && std::isfinite(high) && high > low, "degenerate score range [", low,
                     ", ", high, "]");
  RescaleRecord r{low, high, higher_is_better, 0.0, 0.0};
  r.scale = (higher_is_better ? 4.0 : -4.0) / (high - low);
  r.offset = higher_is_better ? 1.0 - r.scale * low : 5.0 - r.scale * low;
  return r;
}

/// Linear map of raw scores onto [1, 5] with 5 always meaning best.
inline std::vector<double> rescale_scores(std::span<const double> raw, double low, double high,
                                          bool higher_is_better) {
  require<DataError>(!raw.empty(), "rescale_scores needs at least one score");
  const RescaleRecord r = make_rescale(low, high, higher_is_better);
  std::vector<double> out;
  out.reserve(raw.size());
  for (double v : raw) {
    require<DataError>(v >= low && v <= high, "score ", v, " lies outside its declared range [", low, ", ", high,
                       "]");
    out.push_back(std::clamp(r.scale * v + r.offset, 1.0, 5.0));
  }
  return out;
}

/// Procedural domain: each item is a base image with one sampled level of
/// `spec` applied. Item i draws its base, level and distortion noise from
/// separate streams, so domains that differ only in family share bases and
/// level draws.
inline DomainDataset generate_domain(std::uint64_t seed, BaseContent base, const std::vector<DistortionSpec>& specs,
                                     int count, int size = 64, DomainRole role = DomainRole::source) {
  require<DataError>(count >= 1, "generate_domain needs count >= 1, got ", count);
  require<DataError>(size >= 1, "image size must be positive");
  require<DataError>(!specs.empty(), "generate_domain needs at least one distortion spec");
  for (const auto& s : specs) {
    s.validate();
    require<DataError>(s.level_count() == specs.front().level_count(),
                       "all distortion families in a domain must share one level count");
  }
  DomainDataset ds;
  ds.role = role;
  ds.rescale = make_rescale(1.0, 5.0, true);
  nlohmann::json fam = nlohmann::json::array();
  for (const auto& s : specs) fam.push_back({{"family", to_string(s.family)}, {"levels", s.levels}});
  ds.provenance = {{"kind", "distortion"}, {"seed", seed},   {"base", to_string(base)},
                   {"specs", fam},         {"count", count}, {"image_size", size}};
  ds.items.reserve(count);
  for (int i = 0; i < count; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    const DistortionSpec& spec = specs[i % specs.size()];
    std::mt19937_64 base_rng(mix_seed({seed, kStreamBase, ui}));
    std::mt19937_64 level_rng(mix_seed({seed, kStreamLevel, ui}));
    std::mt19937_64 noise_rng(mix_seed({seed, kStreamDistort, ui}));
    const Image b = make_base(base, size, base_rng);
    const int level = std::uniform_int_distribution<int>(0, spec.level_count() - 1)(level_rng);
    DomainItem item;
    item.image = apply_distortion(b, spec.family, spec.levels[level], noise_rng);
    item.score = spec.quality(level);
    item.level = level;
    char name[32];
    std::snprintf(name, sizeof name, "%06d.pgm", i);
    item.name = name;
    ds.items.push_back(std::move(item));
  }
  return ds;
}

inline DomainDataset generate_domain(std::uint64_t seed, BaseContent base, const DistortionSpec& spec, int count,
                                     int size = 64, DomainRole role = DomainRole::source) {
  return generate_domain(seed, base, std::vector<DistortionSpec>{spec}, count, size, role);
}

/// Controlled-signal domain: quality is carried by the amplitude of a fixed
/// cosine pattern whose spatial frequency lands on feature-grid cell
/// (row, col) after the extractor's downsampling. Optional per-image
/// brightness offsets act as a domain nuisance that is invisible to that cell.
struct ProbeSpec {
  int row = 2;
  int col = 3;
  int grid = 8;
  std::vector<double> amplitudes{0.0, 0.03, 0.06, 0.09, 0.12};
  double brightness_jitter = 0.0;  // half-width of the uniform per-image offset
  double base_contrast = 0.2;      // peak-to-peak of the smooth background

  double quality(int level) const { return 5.0 - 4.0 * level / (static_cast<int>(amplitudes.size()) - 1); }
};

inline DomainDataset generate_probe_domain(std::uint64_t seed, const ProbeSpec& spec, int count, int size = 64,
                                           DomainRole role = DomainRole::source) {
  require<DataError>(count >= 1, "generate_probe_domain needs count >= 1");
  require<DataError>(spec.amplitudes.size() >= 2, "probe domain needs at least two amplitude levels");
  require<DataError>(spec.row >= 0 && spec.row < spec.grid && spec.col >= 0 && spec.col < spec.grid,
                     "probe cell out of grid");
  DomainDataset ds;
  ds.role = role;
  ds.rescale = make_rescale(1.0, 5.0, true);
  ds.provenance = {{"kind", "probe"},
                   {"seed", seed},
                   {"row", spec.row},
                   {"col", spec.col},
                   {"grid", spec.grid},
                   {"amplitudes", spec.amplitudes},
                   {"brightness_jitter", spec.brightness_jitter},
                   {"base_contrast", spec.base_contrast},
                   {"count", count},
                   {"image_size", size}};
  const int levels = static_cast<int>(spec.amplitudes.size());
  for (int i = 0; i < count; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    std::mt19937_64 base_rng(mix_seed({seed, kStreamBase, ui}));
    std::mt19937_64 level_rng(mix_seed({seed, kStreamLevel, ui}));
    std::mt19937_64 noise_rng(mix_seed({seed, kStreamDistort, ui}));
    Image img = detail::filtered_noise(size, 6.0, base_rng);
    detail::normalize_range(img, 0.5 - 0.5 * spec.base_contrast, 0.5 + 0.5 * spec.base_contrast);
    const int level = std::uniform_int_distribution<int>(0, levels - 1)(level_rng);
    const double amp = spec.amplitudes[level];
    const double offset =
        spec.brightness_jitter > 0.0
            ? std::uniform_real_distribution<double>(-spec.brightness_jitter, spec.brightness_jitter)(noise_rng)
            : 0.0;
    // Pixel y of an image of `size` falls in feature cell y * grid / size, so a
    // cosine of index u over the whole image matches grid frequency u.
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        img(y, x) += amp * std::cos(std::numbers::pi * spec.row * (y + 0.5) / size) *
                         std::cos(std::numbers::pi * spec.col * (x + 0.5) / size) +
                     offset;
    clamp_unit(img);
    DomainItem item;
    item.image = std::move(img);
    item.score = spec.quality(level);
    item.level = level;
    char name[32];
    std::snprintf(name, sizeof name, "%06d.pgm", i);
    item.name = name;
    ds.items.push_back(std::move(item));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation

inline Image flip_horizontal(const Image& img) {
  Image out(img.rows, img.cols);
  for (int i = 0; i < img.rows; ++i)
    for (int j = 0; j < img.cols; ++j) out(i, j) = img(i, img.cols - 1 - j);
  return out;
}

inline Image crop(const Image& img, int top, int left, int size) {
  Image out(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) out(i, j) = img(top + i, left + j);
  return out;
}

/// Training: uniform random crop and a fair-coin horizontal flip.
/// Evaluation: centre crop, no flip.
inline Image crop_and_flip(const Image& img, int size, bool train, std::uint64_t seed) {
  require<DataError>(size >= 1 && img.rows >= size && img.cols >= size, "image of ", img.rows, "x", img.cols,
                     " is smaller than the ", size, "x", size, " crop");
  if (!train) return crop(img, (img.rows - size) / 2, (img.cols - size) / 2, size);
  std::mt19937_64 rng(seed);
  const int top = std::uniform_int_distribution<int>(0, img.rows - size)(rng);
  const int left = std::uniform_int_distribution<int>(0, img.cols - size)(rng);
  const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  Image out = crop(img, top, left, size);
  return flip ? flip_horizontal(out) : out;
}

// ---------------------------------------------------------------------------
// Netpbm I/O (P5 grey, P6 colour converted to luma; 8 or 16 bit)

inline void write_pgm(const fs::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  require<DataError>(bool(os), "cannot write ", path.string());
  os << "P5\n" << img.cols << ' ' << img.rows << "\n65535\n";
  for (double p : img.pixels) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(p, 0.0, 1.0) * 65535.0));
    const char b[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xFF)};
    os.write(b, 2);
  }
}

inline Image read_netpbm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  require<DataError>(bool(is), "cannot open image ", path.string());
  auto token = [&]() {
    std::string t;
    int c;
    while ((c = is.get()) != EOF) {
      if (c == '#') {
        while ((c = is.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(static_cast<char>(c));
    }
    return t;
  };
  const std::string magic = token();
  require<DataError>(magic == "P5" || magic == "P6", path.string(), ": unsupported image format '", magic,
                     "' (expected binary PGM or PPM)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    fail<DataError>(path.string(), ": malformed netpbm header");
  }
  require<DataError>(w > 0 && h > 0 && maxval > 0 && maxval <= 65535, path.string(), ": bad netpbm header");
  const int channels = magic == "P6" ? 3 : 1;
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels * bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require<DataError>(is.gcount() == static_cast<std::streamsize>(raw.size()), path.string(), ": truncated pixel data");
  Image img(h, w);
  auto sample = [&](std::size_t idx) {
    return bytes == 2 ? (raw[2 * idx] << 8 | raw[2 * idx + 1]) / static_cast<double>(maxval)
                      : raw[idx] / static_cast<double>(maxval);
  };
  for (std::size_t p = 0; p < img.pixels.size(); ++p) {
    if (channels == 1) {
      img.pixels[p] = sample(p);
    } else {
      img.pixels[p] = 0.299 * sample(3 * p) + 0.587 * sample(3 * p + 1) + 0.114 * sample(3 * p + 2);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// On-disk datasets: manifest.json + scores.csv + images/

inline constexpr std::string_view kDatasetFormat = "freqalign-dataset";
inline constexpr int kDatasetVersion = 1;

inline nlohmann::json dataset_manifest(const DomainDataset& ds) {
  return {{"format", kDatasetFormat},
          {"version", kDatasetVersion},
          {"name", ds.name},
          {"role", to_string(ds.role)},
          {"count", ds.size()},
          {"score_range", {1.0, 5.0}},
          {"pixel_range", {0.0, 1.0}},
          {"rescale",
           {{"original_range", {ds.rescale.original_low, ds.rescale.original_high}},
            {"higher_is_better", ds.rescale.higher_is_better},
            {"scale", ds.rescale.scale},
            {"offset", ds.rescale.offset}}},
          {"generator", ds.provenance}};
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes the dataset; refuses to touch an existing manifest unless overwrite.
inline void save_dataset(const DomainDataset& ds, const fs::path& dir, bool overwrite = false) {
  if (fs::exists(dir / "manifest.json") && !overwrite)
    fail<DataError>("refusing to overwrite existing dataset at ", dir.string(), " (pass --overwrite)");
  fs::create_directories(dir / "images");
  {
    std::ofstream os(dir / "manifest.json");
    os << dataset_manifest(ds).dump(2) << '\n';
  }
  std::ofstream csv(dir / "scores.csv");
  csv << "filename,score,level\n";
  for (const auto& it : ds.items) {
    write_pgm(dir / "images" / it.name, it.image);
    csv << "images/" << it.name << ',' << format_double(it.score) << ',' << it.level << '\n';
  }
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace detail

inline DomainDataset load_dataset(const fs::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  require<DataError>(bool(ms), "no dataset manifest at ", (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    ms >> m;
  } catch (const std::exception& e) {
    fail<DataError>("malformed manifest ", (dir / "manifest.json").string(), ": ", e.what());
  }
  require<DataError>(m.value("format", "") == kDatasetFormat, dir.string(), ": not a freqalign dataset");
  require<DataError>(m.value("version", 0) == kDatasetVersion, dir.string(), ": unsupported dataset version");
  DomainDataset ds;
  ds.name = m.value("name", "");
  ds.role = parse_role(m.at("role").get<std::string>());
  const auto& r = m.at("rescale");
  ds.rescale = {r.at("original_range")[0].get<double>(), r.at("original_range")[1].get<double>(),
                r.at("higher_is_better").get<bool>(), r.at("scale").get<double>(), r.at("offset").get<double>()};
  ds.provenance = m.value("generator", nlohmann::json::object());
  std::ifstream csv(dir / "scores.csv");
  require<DataError>(bool(csv), "missing scores.csv in ", dir.string());
  std::string line;
  std::getline(csv, line);
  int row = 1;
  while (std::getline(csv, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    DomainItem it;
    require<DataError>(f.size() >= 2 && detail::parse_double(f[1], it.score), dir.string(),
                       "/scores.csv row ", row, ": malformed");
    if (f.size() >= 3 && !f[2].empty()) it.level = std::stoi(f[2]);
    it.image = read_netpbm(dir / f[0]);
    it.name = fs::path(f[0]).filename().string();
    ds.items.push_back(std::move(it));
  }
  require<DataError>(ds.size() == m.value("count", -1), dir.string(), ": manifest count ", m.value("count", -1),
                     " does not match ", ds.size(), " scored images");
  return ds;
}

/// Loads `filename,score` rows (one header line) relative to `dir` and maps
/// the scores from [low, high] onto [1, 5].
inline DomainDataset ingest_directory(const fs::path& dir, const fs::path& csv_path, double low, double high,
                                      bool higher_is_better, DomainRole role = DomainRole::source) {
  const RescaleRecord rec = make_rescale(low, high, higher_is_better);
  std::ifstream csv(csv_path);
  require<DataError>(bool(csv), "cannot open score file ", csv_path.string());
  std::string line;
  if (!std::getline(csv, line)) fail<DataError>(csv_path.string(), ": empty score file");
  std::vector<std::pair<std::string, double>> rows;
  std::set<std::string> seen;
  int row = 1;
  while (std::getline(csv, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    double v = 0.0;
    if (f.size() != 2 || f[0].empty() || !detail::parse_double(f[1], v))
      fail<DataError>(csv_path.string(), " row ", row, ": expected 'filename,score', got '", line, "'");
    if (v < low || v > high)
      fail<DataError>(csv_path.string(), " row ", row, ": score ", v, " outside [", low, ", ", high, "]");
    if (!seen.insert(f[0]).second)
      fail<DataError>(csv_path.string(), " row ", row, ": duplicate filename '", f[0], "' is ambiguous");
    rows.emplace_back(f[0], v);
  }
  require<DataError>(!rows.empty(), csv_path.string(), ": no data rows, dataset would be empty");
  std::vector<std::string> missing;
  for (const auto& [name, v] : rows)
    if (!fs::is_regular_file(dir / name)) missing.push_back(name);
  if (!missing.empty()) {
    std::string list;
    for (const auto& n : missing) list += (list.empty() ? "" : ", ") + n;
    fail<DataError>(missing.size(), " file(s) listed in ", csv_path.string(), " are missing: ", list);
  }
  DomainDataset ds;
  ds.name = dir.filename().string();
  ds.role = role;
  ds.rescale = rec;
  ds.provenance = {{"kind", "ingested"}, {"csv", csv_path.string()}};
  for (const auto& [name, v] : rows) {
    DomainItem it;
    it.image = read_netpbm(dir / name);
    it.score = std::clamp(rec.scale * v + rec.offset, 1.0, 5.0);
    it.name = name;
    if (!ds.items.empty())
      require<DataError>(it.image.rows == ds.items.front().image.rows && it.image.cols == ds.items.front().image.cols,
                         name, " is ", it.image.rows, "x", it.image.cols, " but ", ds.items.front().name, " is ",
                         ds.items.front().image.rows, "x", ds.items.front().image.cols,
                         "; a dataset shares one image size");
    ds.items.push_back(std::move(it));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Paired batches

struct DomainBatch {
  Tensor4 source_images;
  std::vector<double> source_scores;
  Tensor4 target_images;

  int size() const { return source_images.batch(); }
};

inline void copy_image(const Image& img, Tensor4& dst, int n) {
  std::copy(img.pixels.begin(), img.pixels.end(), dst.plane(n, 0));
}

/// Stacks centre crops of items [first, first + count) for evaluation.
inline Tensor4 stack_eval(const DomainDataset& ds, int first, int count, int crop_size) {
  Tensor4 t({count, 1, crop_size, crop_size});
  for (int i = 0; i < count; ++i) copy_image(crop_and_flip(ds.items[first + i].image, crop_size, false, 0), t, i);
  return t;
}

/// Batch t is a pure function of (seed, t): each domain is walked through
/// seeded per-epoch permutations, and the smaller domain wraps cyclically.
class PairedSampler {
public:
  PairedSampler(const DomainDataset& source, const DomainDataset& target, int batch, int crop, std::uint64_t seed,
                bool augment = true)
      : source_(&source), target_(&target), batch_(batch), crop_(crop), seed_(seed), augment_(augment) {
    require<DataError>(batch >= 1, "batch size must be positive");
    require<DataError>(source.size() >= 1 && target.size() >= 1, "both domains need at least one image");
    for (const auto* ds : {&source, &target})
      for (const auto& it : ds->items)
        require<DataError>(it.image.rows >= crop && it.image.cols >= crop, "image ", it.name, " of ", ds->name,
                           " is smaller than the crop size ", crop);
  }

  int batch_size() const { return batch_; }
  int steps_per_epoch() const { return (source_->size() + batch_ - 1) / batch_; }

  DomainBatch batch(long long t) const {
    DomainBatch b;
    b.source_images = Tensor4({batch_, 1, crop_, crop_});
    b.target_images = Tensor4({batch_, 1, crop_, crop_});
    b.source_scores.resize(batch_);
    fill(*source_, 0, t, b.source_images, &b.source_scores);
    fill(*target_, 1, t, b.target_images, nullptr);
    return b;
  }

private:
  std::vector<int> permutation(std::uint64_t domain, long long epoch, int n) const {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    std::mt19937_64 rng(mix_seed({seed_, kStreamPerm, domain, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(p.begin(), p.end(), rng);
    return p;
  }

  void fill(const DomainDataset& ds, std::uint64_t domain, long long t, Tensor4& out,
            std::vector<double>* scores) const {
    const int n = ds.size();
    long long cached_epoch = -1;
    std::vector<int> perm;
    for (int i = 0; i < batch_; ++i) {
      const long long pos = t * batch_ + i;
      const long long epoch = pos / n;
      if (epoch != cached_epoch) {
        perm = permutation(domain, epoch, n);
        cached_epoch = epoch;
      }
      const DomainItem& it = ds.items[perm[pos % n]];
      const std::uint64_t crop_seed =
          mix_seed({seed_, kStreamCrop, domain, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i)});
      copy_image(crop_and_flip(it.image, crop_, augment_, crop_seed), out, i);
      if (scores) (*scores)[i] = it.score;
    }
  }

  const DomainDataset* source_;
  const DomainDataset* target_;
  int batch_;
  int crop_;
  std::uint64_t seed_;
  bool augment_;
};

}  // namespace freqalign

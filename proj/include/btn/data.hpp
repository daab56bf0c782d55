#pragma once

// Dataset ingestion (PPM directories), augmentation, class balancing,
// deterministic stratified splits and the synthetic desk-scale generator.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "btn/rng.hpp"
#include "btn/tensor.hpp"

namespace btn {

struct Dataset {
  std::vector<Tensor> images;  // each [c,h,w], values in [0,1]
  std::vector<int> labels;
  std::vector<std::string> paths;  // parallel to images; empty entries for in-memory samples
  std::vector<std::string> class_names;
  enum class Provenance { kLoaded, kSynthetic } provenance = Provenance::kLoaded;

  std::size_t size() const { return images.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }

  void validate() const {
    if (images.size() != labels.size()) throw std::logic_error("Dataset: image/label count mismatch");
    if (!paths.empty() && paths.size() != images.size()) throw std::logic_error("Dataset: path count mismatch");
    for (int l : labels) {
      if (l < 0 || l >= num_classes()) throw std::logic_error("Dataset: label out of range");
    }
    for (const auto& img : images) {
      if (img.shape() != images.front().shape()) throw std::logic_error("Dataset: images have mixed shapes");
    }
  }

  std::vector<std::vector<int>> indices_by_class() const {
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes()));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    return by_class;
  }
};

struct AugmentConfig {
  real rotation_range = real(0.3);  // fraction of pi radians, both directions
  real zoom_range = real(0.3);      // zoom factor drawn from [1-z, 1+z]
  bool horizontal_flip = true;

  void validate() const {
    if (rotation_range < real(0)) throw std::invalid_argument("AugmentConfig: rotation_range must be >= 0");
    if (zoom_range < real(0) || zoom_range >= real(1)) throw std::invalid_argument("AugmentConfig: zoom_range must be in [0,1)");
  }
};

struct SplitSpec {
  real train_fraction = real(0.8);
  real test_fraction = real(0.2);
  real validation_fraction_of_train = real(0.1);
  int seed = 0;

  void validate() const {
    if (train_fraction <= real(0) || test_fraction <= real(0)) throw std::invalid_argument("SplitSpec: fractions must be positive");
    if (std::abs(train_fraction + test_fraction - real(1)) > real(1e-9)) throw std::invalid_argument("SplitSpec: train and test fractions must sum to 1");
    if (validation_fraction_of_train < real(0) || validation_fraction_of_train >= real(1)) {
      throw std::invalid_argument("SplitSpec: validation fraction must be in [0,1)");
    }
  }
};

struct Splits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

// ---------------------------------------------------------------------------
// PPM (P6) io — the bit-exact baseline raster format
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_ppm: image must be [3,h,w]");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const real v = std::clamp(image.at({c, y, x}), real(0), real(1));
        row[static_cast<std::size_t>(x * 3 + c)] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: " + path + " is not a binary PPM (P6) file");
  auto next_int = [&in, &path]() {
    // skip whitespace and '#' comments
    int c = in.peek();
    while (c == '#' || std::isspace(c)) {
      if (c == '#') in.ignore(1 << 20, '\n');
      else in.get();
      c = in.peek();
    }
    int v = -1;
    in >> v;
    if (!in || v < 0) throw std::runtime_error("read_ppm: malformed header in " + path);
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxv = next_int();
  if (maxv != 255) throw std::runtime_error("read_ppm: only maxval 255 is supported, got " + std::to_string(maxv) + " in " + path);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  std::vector<real> vals(raw.size());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        vals[static_cast<std::size_t>((c * h + y) * w + x)] =
            static_cast<real>(raw[static_cast<std::size_t>((y * w + x) * 3 + c)]) / real(255);
      }
  return Tensor({3, h, w}, std::move(vals));
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

// Align-corners bilinear resize: corner pixels map onto corner pixels.
inline Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  if (image.rank() != 3) throw std::invalid_argument("resize_bilinear: image must be [c,h,w]");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: target size must be positive");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  std::vector<real> out(static_cast<std::size_t>(c) * out_h * out_w);
  const real sy = out_h > 1 ? static_cast<real>(h - 1) / static_cast<real>(out_h - 1) : real(0);
  const real sx = out_w > 1 ? static_cast<real>(w - 1) / static_cast<real>(out_w - 1) : real(0);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < out_h; ++y) {
      const real fy = y * sy;
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, h - 1);
      const real wy = fy - y0;
      for (int x = 0; x < out_w; ++x) {
        const real fx = x * sx;
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, w - 1);
        const real wx = fx - x0;
        const real v00 = image.at({ch, y0, x0});
        const real v01 = image.at({ch, y0, x1});
        const real v10 = image.at({ch, y1, x0});
        const real v11 = image.at({ch, y1, x1});
        out[static_cast<std::size_t>((ch * out_h + y) * out_w + x)] =
            (real(1) - wy) * ((real(1) - wx) * v00 + wx * v01) + wy * ((real(1) - wx) * v10 + wx * v11);
      }
    }
  }
  return Tensor({c, out_h, out_w}, std::move(out));
}

inline Tensor hflip(const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("hflip: image must be [c,h,w]");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<real> out(image.values().size());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out[static_cast<std::size_t>((ch * h + y) * w + x)] = image.at({ch, y, w - 1 - x});
  return Tensor(image.shape(), std::move(out));
}

// Random rotation in [-r,+r]*pi, zoom in [1-z,1+z] about the image center,
// horizontal flip with probability 1/2. Out-of-frame samples replicate the
// nearest edge pixel. Output shape equals input shape.
inline Tensor augment(const Tensor& image, const AugmentConfig& config, Rng& rng) {
  config.validate();
  if (image.rank() != 3) throw std::invalid_argument("augment: image must be [c,h,w]");
  const real theta = static_cast<real>(rng.uniform(-config.rotation_range, config.rotation_range) * 3.14159265358979323846);
  const real zoom = static_cast<real>(rng.uniform(real(1) - config.zoom_range, real(1) + config.zoom_range));
  const bool flip = config.horizontal_flip && rng.bernoulli(0.5);

  Tensor src = flip ? hflip(image) : image;
  if (theta == real(0) && zoom == real(1)) return src;

  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const real cy = static_cast<real>(h - 1) / real(2);
  const real cx = static_cast<real>(w - 1) / real(2);
  const real cos_t = std::cos(theta), sin_t = std::sin(theta);
  std::vector<real> out(image.values().size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const real dy = y - cy, dx = x - cx;
      // inverse map of rotate-then-zoom
      const real sxf = cx + (cos_t * dx + sin_t * dy) / zoom;
      const real syf = cy + (-sin_t * dx + cos_t * dy) / zoom;
      const real fx = std::clamp(sxf, real(0), static_cast<real>(w - 1));
      const real fy = std::clamp(syf, real(0), static_cast<real>(h - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, h - 1);
      const real wx = fx - x0, wy = fy - y0;
      for (int ch = 0; ch < c; ++ch) {
        const real v = (real(1) - wy) * ((real(1) - wx) * src.at({ch, y0, x0}) + wx * src.at({ch, y0, x1})) +
                       wy * ((real(1) - wx) * src.at({ch, y1, x0}) + wx * src.at({ch, y1, x1}));
        out[static_cast<std::size_t>((ch * h + y) * w + x)] = v;
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

// [0,1] pixel range to the (-1,+1) network input range.
inline Tensor normalize_to_unit_range(const Tensor& image) {
  std::vector<real> out(image.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = image.values()[i] * real(2) - real(1);
  return Tensor(image.shape(), std::move(out));
}

// Stack dataset samples into a [B,c,h,w] batch, normalized to (-1,+1).
inline Tensor stack_batch(const Dataset& ds, const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("stack_batch: empty index list");
  const auto& shape = ds.images.front().shape();
  std::vector<real> out;
  out.reserve(indices.size() * ds.images.front().values().size());
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= ds.size()) throw std::out_of_range("stack_batch: index out of range");
    const auto& vals = ds.images[static_cast<std::size_t>(idx)].values();
    for (real v : vals) out.push_back(v * real(2) - real(1));
  }
  return Tensor({static_cast<int>(indices.size()), shape[0], shape[1], shape[2]}, std::move(out));
}

// ---------------------------------------------------------------------------
// Directory ingestion
// ---------------------------------------------------------------------------

// root/<class_name>/<image files>, class ids by sorted subdirectory name.
inline Dataset load_directory(const std::string& root_path, int image_h, int image_w) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root_path)) throw std::runtime_error("load_directory: not a directory: " + root_path);
  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root_path)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("load_directory: no class subdirectories in " + root_path);

  Dataset ds;
  ds.class_names = class_dirs;
  ds.provenance = Dataset::Provenance::kLoaded;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root_path) / class_dirs[c])) {
      if (entry.is_regular_file()) files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("load_directory: empty class directory: " + class_dirs[c]);
    for (const auto& file : files) {
      Tensor img = read_ppm(file);
      ds.images.push_back(resize_bilinear(img, image_h, image_w));
      ds.labels.push_back(static_cast<int>(c));
      ds.paths.push_back(file);
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Class balancing
// ---------------------------------------------------------------------------

// Every class ends with exactly target samples: deficits are filled with
// augmented copies of originals, surpluses reduced by uniform subsampling.
inline Dataset balance_classes(const Dataset& ds, int target_per_class, Rng& rng,
                               const AugmentConfig& config = AugmentConfig{}) {
  if (target_per_class < 1) throw std::invalid_argument("balance_classes: target must be >= 1");
  ds.validate();
  Dataset out;
  out.class_names = ds.class_names;
  out.provenance = ds.provenance;
  const bool has_paths = !ds.paths.empty();
  auto by_class = ds.indices_by_class();
  for (int c = 0; c < ds.num_classes(); ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    if (members.empty()) throw std::runtime_error("balance_classes: class '" + ds.class_names[static_cast<std::size_t>(c)] + "' is empty");
    std::vector<int> keep = members;
    if (static_cast<int>(keep.size()) > target_per_class) {
      rng.shuffle(keep);
      keep.resize(static_cast<std::size_t>(target_per_class));
      std::sort(keep.begin(), keep.end());
    }
    for (int idx : keep) {
      out.images.push_back(ds.images[static_cast<std::size_t>(idx)]);
      out.labels.push_back(c);
      out.paths.push_back(has_paths ? ds.paths[static_cast<std::size_t>(idx)] : std::string());
    }
    for (int i = static_cast<int>(keep.size()); i < target_per_class; ++i) {
      const int src = members[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(members.size())))];
      out.images.push_back(augment(ds.images[static_cast<std::size_t>(src)], config, rng));
      out.labels.push_back(c);
      out.paths.push_back(std::string());
    }
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace detail {

inline void hsv_to_rgb(real hue, real sat, real val, real rgb[3]) {
  const real h6 = std::fmod(hue, real(1)) * real(6);
  const int sector = static_cast<int>(h6) % 6;
  const real f = h6 - std::floor(h6);
  const real p = val * (real(1) - sat);
  const real q = val * (real(1) - sat * f);
  const real t = val * (real(1) - sat * (real(1) - f));
  switch (sector) {
    case 0: rgb[0] = val; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = val; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = val; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = val; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = val; break;
    default: rgb[0] = val; rgb[1] = p; rgb[2] = q; break;
  }
}

struct SyntheticClassParams {
  real base_rgb[3];
  real blob_rgb[3];
  real stripe_angle;
  real stripe_freq;
  int blob_min, blob_max;
  real blob_radius;  // fraction of min(h,w)
};

inline SyntheticClassParams synthetic_class_params(int c, int k) {
  SyntheticClassParams p{};
  const real hue = (static_cast<real>(c) + real(0.5)) / static_cast<real>(k);
  hsv_to_rgb(hue, real(0.55), real(0.55), p.base_rgb);
  hsv_to_rgb(hue + real(0.5), real(0.7), real(0.85), p.blob_rgb);
  p.stripe_angle = real(3.14159265358979323846) * static_cast<real>(c) / static_cast<real>(k);
  p.stripe_freq = real(2) + static_cast<real>(c % 4);
  p.blob_min = 2 + c % 3;
  p.blob_max = p.blob_min + 2;
  p.blob_radius = real(0.10) + real(0.03) * static_cast<real>((c * 3) % 5);
  return p;
}

}  // namespace detail

// Textured-blob families: per-class mean color, stripe texture, blob count
// and radius distribution, plus additive uniform pixel noise. Deterministic
// per seed.
inline Dataset make_synthetic(int k, int per_class, int height, int width, int seed,
                              real noise = real(0.08)) {
  if (k < 2) throw std::invalid_argument("make_synthetic: need k >= 2 classes");
  if (per_class < 1) throw std::invalid_argument("make_synthetic: per_class must be >= 1");
  if (height < 4 || width < 4) throw std::invalid_argument("make_synthetic: images must be at least 4x4");
  if (noise < real(0)) throw std::invalid_argument("make_synthetic: noise must be >= 0");
  Rng rng(static_cast<std::uint64_t>(seed) * 0x9e3779b97f4a7c15ULL + 0xda3e39cb94b95bdbULL);
  Dataset ds;
  ds.provenance = Dataset::Provenance::kSynthetic;
  for (int c = 0; c < k; ++c) ds.class_names.push_back("class_" + std::to_string(c));

  const real extent = static_cast<real>(std::min(height, width));
  for (int c = 0; c < k; ++c) {
    const auto p = detail::synthetic_class_params(c, k);
    const real ca = std::cos(p.stripe_angle), sa = std::sin(p.stripe_angle);
    for (int i = 0; i < per_class; ++i) {
      std::vector<real> img(static_cast<std::size_t>(3) * height * width);
      // striped background around the class base color
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const real phase = (ca * x + sa * y) / extent;
          const real stripe = real(0.10) * std::sin(real(2) * real(3.14159265358979323846) * p.stripe_freq * phase);
          for (int ch = 0; ch < 3; ++ch) {
            img[static_cast<std::size_t>((ch * height + y) * width + x)] = p.base_rgb[ch] + stripe;
          }
        }
      // textured blobs with class-specific count and radius
      const int blobs = p.blob_min + rng.uniform_int(p.blob_max - p.blob_min + 1);
      for (int bidx = 0; bidx < blobs; ++bidx) {
        const real bx = static_cast<real>(rng.uniform(0.15, 0.85)) * width;
        const real by = static_cast<real>(rng.uniform(0.15, 0.85)) * height;
        const real radius = static_cast<real>(rng.uniform(0.7, 1.3)) * p.blob_radius * extent;
        for (int y = std::max(0, static_cast<int>(by - radius) - 1); y < std::min(height, static_cast<int>(by + radius) + 2); ++y)
          for (int x = std::max(0, static_cast<int>(bx - radius) - 1); x < std::min(width, static_cast<int>(bx + radius) + 2); ++x) {
            const real d = std::sqrt((x - bx) * (x - bx) + (y - by) * (y - by));
            if (d > radius) continue;
            const real soft = std::min(real(1), (radius - d) / std::max(radius * real(0.3), real(1)));
            for (int ch = 0; ch < 3; ++ch) {
              real& px = img[static_cast<std::size_t>((ch * height + y) * width + x)];
              px = px * (real(1) - soft) + p.blob_rgb[ch] * soft;
            }
          }
      }
      if (noise > real(0)) {
        for (auto& v : img) v += static_cast<real>(rng.uniform(-noise, noise));
      }
      for (auto& v : img) v = std::clamp(v, real(0), real(1));
      ds.images.emplace_back(std::vector<int>{3, height, width}, std::move(img));
      ds.labels.push_back(c);
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Deterministic stratified split
// ---------------------------------------------------------------------------

inline Splits split(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  ds.validate();
  Rng rng(static_cast<std::uint64_t>(spec.seed) * 0xbf58476d1ce4e5b9ULL + 0x2545f4914f6cdd1dULL);
  Splits out;
  for (Dataset* part : {&out.train, &out.validation, &out.test}) {
    part->class_names = ds.class_names;
    part->provenance = ds.provenance;
  }
  const bool has_paths = !ds.paths.empty();
  auto copy_to = [&](Dataset& part, int idx) {
    part.images.push_back(ds.images[static_cast<std::size_t>(idx)]);
    part.labels.push_back(ds.labels[static_cast<std::size_t>(idx)]);
    part.paths.push_back(has_paths ? ds.paths[static_cast<std::size_t>(idx)] : std::string());
  };
  auto by_class = ds.indices_by_class();
  for (int c = 0; c < ds.num_classes(); ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    const int n = static_cast<int>(members.size());
    if (n < 3) {
      throw std::runtime_error("split: class '" + ds.class_names[static_cast<std::size_t>(c)] + "' has fewer than 3 samples");
    }
    rng.shuffle(members);
    int n_test = static_cast<int>(std::lround(static_cast<double>(spec.test_fraction) * n));
    n_test = std::clamp(n_test, 1, n - 2);
    const int pool = n - n_test;
    int n_val = static_cast<int>(std::lround(static_cast<double>(spec.validation_fraction_of_train) * pool));
    if (spec.validation_fraction_of_train > real(0)) n_val = std::clamp(n_val, 1, pool - 1);
    for (int i = 0; i < n; ++i) {
      if (i < n_test) copy_to(out.test, members[static_cast<std::size_t>(i)]);
      else if (i < n_test + n_val) copy_to(out.validation, members[static_cast<std::size_t>(i)]);
      else copy_to(out.train, members[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest export: CSV `path,class_id,split`
// ---------------------------------------------------------------------------

inline void write_manifest(const std::string& path, const Splits& splits) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot write " + path);
  out << "path,class_id,split\n";
  auto dump = [&out](const Dataset& ds, const char* name) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::string& p = ds.paths.empty() ? std::string() : ds.paths[i];
      out << p << "," << ds.labels[i] << "," << name << "\n";
    }
  };
  dump(splits.train, "train");
  dump(splits.validation, "validation");
  dump(splits.test, "test");
  if (!out) throw std::runtime_error("write_manifest: write failed for " + path);
}

}  // namespace btn

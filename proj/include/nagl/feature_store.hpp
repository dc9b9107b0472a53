#pragma once

// On-disk formats shared with the offline feature extractor.
//
//   Feature file  "NAGF" | version u32 | h u32 | w u32 | C u32 | h*w*C f32
//   Mask file     "NAGM" | version u32 | h u32 | w u32 | h*w bytes in {0,1}
//   Manifest      UTF-8 text, one record per line, 8 tab-separated fields:
//                 image_id category defect_type split feature_path mask_path
//                 image_h image_w
//
// All integers and floats are little-endian. A manifest mask_path of "-"
// means "no mask". Blank lines and lines starting with '#' are ignored on
// load. Relative paths are resolved against the manifest's directory.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nagl/error.hpp"

namespace nagl {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::string_view kNormalDefect = "NORMAL";

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Sequential little-endian reader that names the field on truncation.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (bytes_.substr(pos_, magic.size()) != magic) {
      throw FormatError(context_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
    pos_ += magic.size();
  }

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }

  std::uint8_t u8(const char* field) {
    need(1, field);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(context_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
    }
  }

  const std::string& context() const { return context_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) throw FormatError(context_ + ": truncated while reading " + field);
  }

  std::string_view bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace io

// h x w grid of C-dimensional patch features, row-major by patch index
// i = row * w + col.
class PatchFeatureMap {
 public:
  PatchFeatureMap() = default;

  PatchFeatureMap(std::size_t h, std::size_t w, std::size_t channels)
      : PatchFeatureMap(h, w, channels, std::vector<float>(h * w * channels, 0.0f)) {}

  PatchFeatureMap(std::size_t h, std::size_t w, std::size_t channels, std::vector<float> values)
      : h_(h), w_(w), c_(channels), values_(std::move(values)) {
    if (h_ == 0 || w_ == 0 || c_ == 0) throw ShapeError("PatchFeatureMap: h, w and C must be >= 1");
    if (values_.size() != h_ * w_ * c_) {
      throw ShapeError("PatchFeatureMap: expected " + std::to_string(h_ * w_ * c_) + " values, got " +
                       std::to_string(values_.size()));
    }
    for (float v : values_) {
      if (!std::isfinite(v)) throw NumericError("PatchFeatureMap: non-finite value");
    }
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t channels() const { return c_; }
  std::size_t patches() const { return h_ * w_; }

  std::span<const float> patch(std::size_t i) const { return {values_.data() + i * c_, c_}; }
  std::span<float> patch(std::size_t i) { return {values_.data() + i * c_, c_}; }
  const std::vector<float>& values() const { return values_; }

  // L2-normalizes every patch row; all-zero rows stay zero.
  void normalize_rows() {
    for (std::size_t i = 0; i < patches(); ++i) {
      auto row = patch(i);
      double sq = 0.0;
      for (float v : row) sq += static_cast<double>(v) * v;
      if (sq == 0.0) continue;
      const double inv = 1.0 / std::sqrt(sq);
      for (float& v : row) v = static_cast<float>(v * inv);
    }
  }

  bool operator==(const PatchFeatureMap& o) const {
    return h_ == o.h_ && w_ == o.w_ && c_ == o.c_ &&
           std::memcmp(values_.data(), o.values_.data(), values_.size() * sizeof(float)) == 0;
  }

 private:
  std::size_t h_ = 0, w_ = 0, c_ = 0;
  std::vector<float> values_;
};

// Binary grid. Used both for patch-level masks (h x w) and pixel masks (H x W).
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}
  BinaryMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> b)
      : height(h), width(w), bits(std::move(b)) {
    if (bits.size() != h * w) throw ShapeError("BinaryMask: bit count does not match h*w");
    for (auto v : bits) {
      if (v > 1) throw FormatError("BinaryMask: mask values must be 0 or 1");
    }
  }

  std::size_t size() const { return bits.size(); }
  bool any() const {
    for (auto v : bits) {
      if (v) return true;
    }
    return false;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : bits) n += v;
    return n;
  }
  std::uint8_t at(std::size_t r, std::size_t c) const { return bits[r * width + c]; }
  void set(std::size_t r, std::size_t c, bool v = true) { bits[r * width + c] = v ? 1 : 0; }

  bool operator==(const BinaryMask&) const = default;
};

using PatchMask = BinaryMask;
using PixelMask = BinaryMask;

inline std::string encode_feature_map(const PatchFeatureMap& map) {
  std::string out;
  out.reserve(20 + map.values().size() * 4);
  out.append("NAGF");
  io::put_u32(out, kFormatVersion);
  io::put_u32(out, static_cast<std::uint32_t>(map.height()));
  io::put_u32(out, static_cast<std::uint32_t>(map.width()));
  io::put_u32(out, static_cast<std::uint32_t>(map.channels()));
  for (float v : map.values()) io::put_f32(out, v);
  return out;
}

inline PatchFeatureMap decode_feature_map(std::string_view bytes, bool normalize,
                                          const std::string& context = "feature file") {
  io::ByteReader rd(bytes, context);
  rd.expect_magic("NAGF");
  const auto version = rd.u32("version");
  if (version != kFormatVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version));
  }
  const std::size_t h = rd.u32("h");
  const std::size_t w = rd.u32("w");
  const std::size_t c = rd.u32("C");
  if (h == 0 || w == 0 || c == 0) throw FormatError(context + ": zero dimension in header");
  const std::size_t n = h * w * c;
  if ((bytes.size() - 20) / 4 < n) throw FormatError(context + ": truncated while reading values");
  std::vector<float> values(n);
  for (auto& v : values) {
    v = rd.f32("values");
    if (!std::isfinite(v)) throw FormatError(context + ": non-finite value");
  }
  rd.expect_end();
  PatchFeatureMap map(h, w, c, std::move(values));
  if (normalize) map.normalize_rows();
  return map;
}

inline void write_feature_file(const PatchFeatureMap& map, const std::filesystem::path& path) {
  io::write_file(path, encode_feature_map(map));
}

inline PatchFeatureMap read_feature_file(const std::filesystem::path& path, bool normalize) {
  return decode_feature_map(io::read_file(path), normalize, path.string());
}

inline std::string encode_mask(const BinaryMask& mask) {
  std::string out;
  out.append("NAGM");
  io::put_u32(out, kFormatVersion);
  io::put_u32(out, static_cast<std::uint32_t>(mask.height));
  io::put_u32(out, static_cast<std::uint32_t>(mask.width));
  for (auto b : mask.bits) out.push_back(static_cast<char>(b));
  return out;
}

inline BinaryMask decode_mask(std::string_view bytes, const std::string& context = "mask file") {
  io::ByteReader rd(bytes, context);
  rd.expect_magic("NAGM");
  const auto version = rd.u32("version");
  if (version != kFormatVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version));
  }
  const std::size_t h = rd.u32("h");
  const std::size_t w = rd.u32("w");
  if (h == 0 || w == 0) throw FormatError(context + ": zero dimension in header");
  if (bytes.size() - 16 < h * w) throw FormatError(context + ": truncated while reading bits");
  std::vector<std::uint8_t> bits(h * w);
  for (auto& b : bits) {
    b = rd.u8("bits");
    if (b > 1) throw FormatError(context + ": mask value outside {0,1}");
  }
  rd.expect_end();
  return BinaryMask(h, w, std::move(bits));
}

inline void write_mask_file(const BinaryMask& mask, const std::filesystem::path& path) {
  io::write_file(path, encode_mask(mask));
}

inline BinaryMask read_mask_file(const std::filesystem::path& path) {
  return decode_mask(io::read_file(path), path.string());
}

// Max-pools an H x W pixel mask onto an h x w patch grid: patch (r, c) covers
// rows [floor(r*H/h), floor((r+1)*H/h)) and the analogous column range.
inline PatchMask downsample_mask(const PixelMask& pixels, std::size_t h, std::size_t w) {
  const std::size_t H = pixels.height, W = pixels.width;
  if (h == 0 || w == 0 || H < h || W < w) {
    throw ShapeError("downsample_mask: cannot pool " + std::to_string(H) + "x" + std::to_string(W) +
                     " onto " + std::to_string(h) + "x" + std::to_string(w));
  }
  PatchMask out(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t r0 = r * H / h, r1 = (r + 1) * H / h;
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t c0 = c * W / w, c1 = (c + 1) * W / w;
      bool hit = false;
      for (std::size_t y = r0; y < r1 && !hit; ++y) {
        for (std::size_t x = c0; x < c1; ++x) {
          if (pixels.at(y, x)) {
            hit = true;
            break;
          }
        }
      }
      out.set(r, c, hit);
    }
  }
  return out;
}

// Nearest-neighbour expansion of a patch mask to pixel resolution, using
// the same cell boundaries as downsample_mask.
inline PixelMask upsample_mask_nearest(const PatchMask& patches, std::size_t H, std::size_t W) {
  const std::size_t h = patches.height, w = patches.width;
  if (H < h || W < w) throw ShapeError("upsample_mask_nearest: target smaller than source");
  PixelMask out(H, W);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (!patches.at(r, c)) continue;
      for (std::size_t y = r * H / h; y < (r + 1) * H / h; ++y) {
        for (std::size_t x = c * W / w; x < (c + 1) * W / w; ++x) out.set(y, x);
      }
    }
  }
  return out;
}

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct ManifestRecord {
  std::string image_id;
  std::string category;
  std::string defect_type;  // kNormalDefect for good samples
  Split split = Split::train;
  std::string feature_path;
  std::optional<std::string> mask_path;
  std::uint32_t image_h = 0;
  std::uint32_t image_w = 0;

  bool is_abnormal() const { return defect_type != kNormalDefect; }
  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  // Directory used to resolve relative paths; not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }

  std::set<std::string> categories() const {
    std::set<std::string> out;
    for (const auto& r : records) out.insert(r.category);
    return out;
  }

  // Throws DataError on the first violated manifest invariant.
  void validate() const {
    std::set<std::string> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.image_id).second) throw DataError("manifest: duplicate image_id " + r.image_id);
      if (r.split == Split::train && r.is_abnormal()) {
        throw DataError("manifest: train record " + r.image_id + " is not NORMAL");
      }
      if (r.split == Split::test && r.is_abnormal() && !r.mask_path) {
        throw DataError("manifest: abnormal test record " + r.image_id + " has no mask_path");
      }
    }
  }

  bool operator==(const DatasetManifest& o) const { return records == o.records; }
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline std::uint32_t parse_dim(const std::string& s, std::size_t line_no, const char* field) {
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || v > 0xffffffffu) {
    throw FormatError("manifest line " + std::to_string(line_no) + ": bad " + field + " '" + s + "'");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline std::string format_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    out += r.image_id + '\t' + r.category + '\t' + r.defect_type + '\t' + std::string(to_string(r.split)) +
           '\t' + r.feature_path + '\t' + r.mask_path.value_or("-") + '\t' + std::to_string(r.image_h) +
           '\t' + std::to_string(r.image_w) + '\n';
  }
  return out;
}

inline DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest manifest;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto f = detail::split_tabs(line);
    if (f.size() != 8) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 8 tab-separated fields, got " +
                        std::to_string(f.size()));
    }
    ManifestRecord r;
    r.image_id = f[0];
    r.category = f[1];
    r.defect_type = f[2];
    if (r.image_id.empty() || r.category.empty() || r.defect_type.empty() || f[4].empty()) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": empty field");
    }
    if (f[3] == "train") {
      r.split = Split::train;
    } else if (f[3] == "test") {
      r.split = Split::test;
    } else {
      throw FormatError("manifest line " + std::to_string(line_no) + ": bad split '" + f[3] + "'");
    }
    r.feature_path = f[4];
    if (f[5] != "-") r.mask_path = f[5];
    r.image_h = detail::parse_dim(f[6], line_no, "image_h");
    r.image_w = detail::parse_dim(f[7], line_no, "image_w");
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

inline void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  io::write_file(path, format_manifest(manifest));
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto manifest = parse_manifest(io::read_file(path));
  manifest.base_dir = path.parent_path();
  return manifest;
}

}  // namespace nagl

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "d2r/data.hpp"

// IDX files: a big-endian u32 magic (0x0000 | type | ndims), ndims big-endian
// u32 extents, then the unsigned-byte payload in row-major order.

namespace d2r {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

enum class IdxErrorKind { io, bad_magic, dimension_mismatch, truncated };

inline const char* to_string(IdxErrorKind k) {
  switch (k) {
    case IdxErrorKind::io: return "io";
    case IdxErrorKind::bad_magic: return "bad magic";
    case IdxErrorKind::dimension_mismatch: return "dimension mismatch";
    case IdxErrorKind::truncated: return "truncated";
  }
  return "?";
}

class IdxError : public Error {
 public:
  IdxError(IdxErrorKind kind, const std::string& what)
      : Error(std::string("idx ") + d2r::to_string(kind) + ": " + what), kind_(kind) {}
  IdxErrorKind kind() const noexcept { return kind_; }

 private:
  IdxErrorKind kind_;
};

namespace detail {

struct IdxFile {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> payload;
};

inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

inline IdxFile read_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw IdxError(IdxErrorKind::truncated, path.string() + " has no header");
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != expected_magic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", magic);
    throw IdxError(IdxErrorKind::bad_magic, path.string() + " has magic " + buf);
  }
  const std::size_t ndims = magic & 0xFF;
  if (bytes.size() < 4 + 4 * ndims) throw IdxError(IdxErrorKind::truncated, path.string() + " header is incomplete");
  IdxFile file;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    file.dims.push_back(read_be32(bytes.data() + 4 + 4 * i));
    count *= file.dims.back();
  }
  const std::size_t offset = 4 + 4 * ndims;
  if (bytes.size() - offset < count) {
    throw IdxError(IdxErrorKind::truncated, path.string() + " holds " + std::to_string(bytes.size() - offset) +
                                                " payload bytes, header promises " + std::to_string(count));
  }
  file.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                      bytes.begin() + static_cast<std::ptrdiff_t>(offset + count));
  return file;
}

}  // namespace detail

/// Reads an IDX image/label pair, flattens every image to one row scaled by
/// 1/255, and keeps the first `per_class_limit` samples of each class in file
/// order (0 keeps everything).
inline Dataset load_idx_subset(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                               std::size_t per_class_limit) {
  const auto images = detail::read_idx(images_path, kIdxImagesMagic);
  const auto labels = detail::read_idx(labels_path, kIdxLabelsMagic);
  const std::size_t n = images.dims[0];
  if (labels.dims[0] != n) {
    throw IdxError(IdxErrorKind::dimension_mismatch, "images file has " + std::to_string(n) +
                                                         " entries, labels file has " +
                                                         std::to_string(labels.dims[0]));
  }
  const std::size_t features = std::size_t{images.dims[1]} * images.dims[2];

  int max_label = 0;
  for (unsigned char l : labels.payload) max_label = std::max(max_label, static_cast<int>(l));
  std::vector<std::size_t> taken(static_cast<std::size_t>(max_label) + 1, 0);

  std::vector<double> xs;
  std::vector<int> ys;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels.payload[i];
    if (per_class_limit != 0 && taken[static_cast<std::size_t>(label)] >= per_class_limit) continue;
    ++taken[static_cast<std::size_t>(label)];
    ys.push_back(label);
    for (std::size_t f = 0; f < features; ++f) xs.push_back(images.payload[i * features + f] / 255.0);
  }
  const std::size_t rows = ys.size();
  return {Tensor({rows, features}, std::move(xs)), std::move(ys), static_cast<std::size_t>(max_label) + 1};
}

/// Writes features (quantised to round(255·x)) as an IDX image file of
/// rows × cols images and the labels as an IDX label file.
inline void write_idx(const Dataset& data, std::size_t rows, std::size_t cols,
                      const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  if (rows * cols != data.dim()) throw ShapeError("write_idx: rows × cols must equal the feature count");
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw IdxError(IdxErrorKind::io, "cannot open IDX output files");
  detail::write_be32(img, kIdxImagesMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(data.size()));
  detail::write_be32(img, static_cast<std::uint32_t>(rows));
  detail::write_be32(img, static_cast<std::uint32_t>(cols));
  for (double v : data.x.data()) img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  detail::write_be32(lab, kIdxLabelsMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.y) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!img || !lab) throw IdxError(IdxErrorKind::io, "write failed for IDX output");
}

}  // namespace d2r

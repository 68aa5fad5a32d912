#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <boost/crc.hpp>

#include "d2r/model.hpp"

// Checkpoint layout (all integers and floats little-endian):
//
//   bytes 0-3   magic "D2RC"
//   byte  4     format version (currently 1)
//   byte  5     role (0 guide, 1 target)
//   byte  6     activation (0 relu)
//   byte  7     reserved, 0
//   u64         init seed
//   u32         number of layer widths L
//   L x u64     layer widths
//   u64         parameter count P
//   P x f64     parameters, W0 (row-major) b0 W1 b1 ...
//   u32         CRC-32 of every preceding byte

namespace d2r {

inline constexpr std::uint8_t kCheckpointVersion = 1;
inline constexpr std::array<char, 4> kCheckpointMagic{'D', '2', 'R', 'C'};

enum class CheckpointErrorKind { io, bad_magic, version_mismatch, truncated, checksum, invalid };

inline const char* to_string(CheckpointErrorKind k) {
  switch (k) {
    case CheckpointErrorKind::io: return "io";
    case CheckpointErrorKind::bad_magic: return "bad magic";
    case CheckpointErrorKind::version_mismatch: return "version mismatch";
    case CheckpointErrorKind::truncated: return "truncated";
    case CheckpointErrorKind::checksum: return "checksum";
    case CheckpointErrorKind::invalid: return "invalid";
  }
  return "?";
}

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : Error(std::string("checkpoint ") + d2r::to_string(kind) + ": " + what), kind_(kind) {}
  CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <typename T>
T get_le(const unsigned char* p) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const ModelState& state) {
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  out.push_back(kCheckpointVersion);
  out.push_back(static_cast<unsigned char>(state.role));
  out.push_back(static_cast<unsigned char>(state.spec.activation));
  out.push_back(0);
  detail::put_le<std::uint64_t>(out, state.spec.init_seed);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(state.spec.layer_widths.size()));
  for (std::size_t w : state.spec.layer_widths) detail::put_le<std::uint64_t>(out, w);
  detail::put_le<std::uint64_t>(out, state.parameter_count());
  for (const Tensor* p : state.parameters()) {
    for (double v : p->data()) detail::put_le<double>(out, v);
  }
  detail::put_le<std::uint32_t>(out, detail::crc32(out.data(), out.size()));
  return out;
}

inline ModelState decode_checkpoint(const std::vector<unsigned char>& bytes) {
  using K = CheckpointErrorKind;
  const std::size_t n = bytes.size();
  if (n < kCheckpointMagic.size()) throw CheckpointError(K::truncated, "file is shorter than the magic number");
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw CheckpointError(K::bad_magic, "file does not start with D2RC");
  }
  if (n < 5) throw CheckpointError(K::truncated, "missing version byte");
  if (bytes[4] != kCheckpointVersion) {
    throw CheckpointError(K::version_mismatch, "file version " + std::to_string(bytes[4]) + ", expected " +
                                                   std::to_string(kCheckpointVersion));
  }
  std::size_t pos = 8;
  auto need = [&](std::size_t count) {
    if (n < pos + count) throw CheckpointError(K::truncated, "payload ends at byte " + std::to_string(n));
  };
  need(8 + 4);
  ModelState state;
  if (bytes[5] > 1) throw CheckpointError(K::invalid, "unknown role code");
  if (bytes[6] != 0) throw CheckpointError(K::invalid, "unknown activation code");
  state.role = static_cast<Role>(bytes[5]);
  state.spec.activation = Activation::relu;
  state.spec.init_seed = detail::get_le<std::uint64_t>(&bytes[pos]);
  pos += 8;
  const std::uint32_t layers = detail::get_le<std::uint32_t>(&bytes[pos]);
  pos += 4;
  if (layers > (n - pos) / 8) throw CheckpointError(K::truncated, "layer table exceeds file size");
  for (std::uint32_t i = 0; i < layers; ++i) {
    state.spec.layer_widths.push_back(detail::get_le<std::uint64_t>(&bytes[pos]));
    pos += 8;
  }
  need(8);
  const std::uint64_t count = detail::get_le<std::uint64_t>(&bytes[pos]);
  pos += 8;
  if (count > (n - pos) / 8) throw CheckpointError(K::truncated, "parameter payload exceeds file size");
  need(count * 8 + 4);
  const std::size_t crc_pos = pos + count * 8;
  if (n != crc_pos + 4) throw CheckpointError(K::invalid, "trailing bytes after checksum");
  if (detail::crc32(bytes.data(), crc_pos) != detail::get_le<std::uint32_t>(&bytes[crc_pos])) {
    throw CheckpointError(K::checksum, "CRC-32 mismatch");
  }

  try {
    state.spec.validate();
  } catch (const Error& e) {
    throw CheckpointError(K::invalid, e.what());
  }
  std::size_t expected = 0;
  for (std::size_t l = 0; l < state.spec.layer_count(); ++l) {
    expected += state.spec.layer_widths[l] * state.spec.layer_widths[l + 1] + state.spec.layer_widths[l + 1];
  }
  if (expected != count) throw CheckpointError(K::invalid, "parameter count does not match layer widths");

  for (std::size_t l = 0; l < state.spec.layer_count(); ++l) {
    const std::size_t in = state.spec.layer_widths[l], out = state.spec.layer_widths[l + 1];
    std::vector<double> w(in * out), b(out);
    for (double& v : w) {
      v = detail::get_le<double>(&bytes[pos]);
      pos += 8;
    }
    for (double& v : b) {
      v = detail::get_le<double>(&bytes[pos]);
      pos += 8;
    }
    try {
      state.weights.emplace_back(Shape{in, out}, std::move(w));
      state.biases.emplace_back(Shape{out}, std::move(b));
    } catch (const NonFiniteError& e) {
      throw CheckpointError(K::invalid, e.what());
    }
  }
  return state;
}

inline void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "write failed for " + path.string());
}

inline ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace d2r

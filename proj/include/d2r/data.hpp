#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "d2r/tensor.hpp"

namespace d2r {

/// Labelled samples with features in [0, 1].
struct Dataset {
  Tensor x;  // N × d
  std::vector<int> y;
  std::size_t class_count = 0;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.rank() == 2 ? x.cols() : 0; }

  void validate() const {
    if (x.rank() != 2 || x.rows() != y.size()) throw ShapeError("dataset features and labels disagree on sample count");
    for (double v : x.data()) {
      if (v < 0.0 || v > 1.0) throw Error("dataset feature outside [0, 1]");
    }
    for (int label : y) {
      if (label < 0 || static_cast<std::size_t>(label) >= class_count) throw Error("dataset label out of range");
    }
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{x.gather_rows(indices), {}, class_count};
    out.y.reserve(indices.size());
    for (std::size_t i : indices) out.y.push_back(y[i]);
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Seeded shuffle into disjoint train/test parts; the test part takes
/// round(test_fraction · N) samples.
inline DataSplit split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw Error("test fraction must lie in [0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

/// Axis-aligned box mapped linearly onto [0, 1]^d.
struct Frame {
  std::vector<double> lo;
  std::vector<double> hi;

  double to_unit(std::size_t axis, double v) const {
    return std::clamp((v - lo[axis]) / (hi[axis] - lo[axis]), 0.0, 1.0);
  }
};

/// Frame used by make_two_moons: the canonical arcs span x ∈ [−1, 2],
/// y ∈ [−½, 1]; the box is padded by 3σ on each side.
inline Frame two_moons_frame(double noise_sigma) {
  const double pad = 3.0 * noise_sigma;
  return {{-1.0 - pad, -0.5 - pad}, {2.0 + pad, 1.0 + pad}};
}

/// Two interleaved half circles: class 0 on (cos t, sin t), class 1 on
/// (1 − cos t, ½ − sin t), t evenly spaced over [0, π], plus Gaussian noise.
inline Dataset make_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n < 2) throw Error("make_two_moons needs at least two samples");
  if (n % 2 != 0) throw Error("make_two_moons needs an even sample count");
  if (!(noise_sigma >= 0.0)) throw Error("make_two_moons noise must be non-negative");
  const std::size_t half = n / 2;
  const Frame frame = two_moons_frame(noise_sigma);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<double> xs;
  xs.reserve(2 * n);
  std::vector<int> ys;
  ys.reserve(n);
  for (int cls = 0; cls < 2; ++cls) {
    for (std::size_t i = 0; i < half; ++i) {
      const double t = half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
      double px = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
      double py = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
      if (noise_sigma > 0.0) {
        px += noise_sigma * noise(rng);
        py += noise_sigma * noise(rng);
      }
      xs.push_back(frame.to_unit(0, px));
      xs.push_back(frame.to_unit(1, py));
      ys.push_back(cls);
    }
  }
  return {Tensor({n, 2}, std::move(xs)), std::move(ys), 2};
}

/// Per-axis frame around the centres, padded by 3σ (or ½ when an axis is degenerate).
inline Frame blob_frame(const std::vector<std::vector<double>>& centers, double sigma) {
  const std::size_t d = centers.front().size();
  Frame f{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t a = 0; a < d; ++a) {
    double lo = centers[0][a], hi = centers[0][a];
    for (const auto& c : centers) {
      lo = std::min(lo, c[a]);
      hi = std::max(hi, c[a]);
    }
    const double pad = hi - lo + 6.0 * sigma > 0.0 ? 3.0 * sigma : 0.5;
    f.lo[a] = lo - pad;
    f.hi[a] = hi + pad;
  }
  return f;
}

/// Isotropic Gaussian clusters; sample i belongs to centre i mod C. Points are
/// clipped to blob_frame(centers, sigma) and rescaled into [0, 1]^d.
inline Dataset make_blobs(std::size_t n, const std::vector<std::vector<double>>& centers, double sigma,
                          std::uint64_t seed) {
  if (centers.size() < 2) throw Error("make_blobs needs at least two centers");
  const std::size_t d = centers.front().size();
  if (d == 0) throw Error("make_blobs centers must have positive dimension");
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (centers[i].size() != d) throw ShapeError("make_blobs centers differ in dimension");
    for (std::size_t j = 0; j < i; ++j) {
      if (centers[i] == centers[j]) throw Error("make_blobs centers must be distinct");
    }
  }
  if (!(sigma >= 0.0)) throw Error("make_blobs sigma must be non-negative");
  const Frame frame = blob_frame(centers, sigma);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> xs;
  xs.reserve(n * d);
  std::vector<int> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % centers.size();
    ys[i] = static_cast<int>(c);
    for (std::size_t a = 0; a < d; ++a) {
      double v = centers[c][a];
      if (sigma > 0.0) v += sigma * noise(rng);
      xs.push_back(frame.to_unit(a, v));
    }
  }
  return {Tensor({n, d}, std::move(xs)), std::move(ys), centers.size()};
}

/// Shuffled mini-batches. The permutation for an epoch depends only on
/// (seed, epoch); the final batch may be short.
class BatchIterator {
 public:
  BatchIterator(std::size_t sample_count, std::size_t batch_size, std::uint64_t seed)
      : n_(sample_count), batch_size_(batch_size), seed_(seed) {
    if (batch_size == 0) throw Error("batch size must be positive");
  }

  std::vector<std::size_t> permutation(std::size_t epoch) const {
    std::vector<std::size_t> order(n_);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  std::vector<std::vector<std::size_t>> batches(std::size_t epoch) const {
    const auto order = permutation(epoch);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n_; start += batch_size_) {
      const std::size_t end = std::min(n_, start + batch_size_);
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
  }

  /// Batches for the current epoch, then advances the epoch counter.
  std::vector<std::vector<std::size_t>> next_epoch() { return batches(epoch_++); }

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t n_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
};

/// CSV with a header row x0..x{d-1},label; label is the last column.
inline void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (std::size_t a = 0; a < data.dim(); ++a) out << 'x' << a << ',';
  out << "label\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t a = 0; a < data.dim(); ++a) out << data.x.at(i, a) << ',';
    out << data.y[i] << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace d2r

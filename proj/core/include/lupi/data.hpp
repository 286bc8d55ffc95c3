#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lupi/rng.hpp"
#include "lupi/tensor.hpp"

namespace lupi {

enum class IdxErrorKind { kWrongMagic, kTruncated, kCountMismatch };

struct IdxError : std::runtime_error {
  IdxErrorKind kind;
  IdxError(IdxErrorKind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

struct GenConfig {
  std::size_t num_classes = 10;
  std::size_t grid_side = 16;
  std::size_t proto_support = 24;    // cells per class prototype
  double proto_lo = 0.5, proto_hi = 1.0;
  std::size_t distractors = 3;       // fragments of other classes per sample
  std::size_t fragment_cells = 8;
  double noise_std = 0.1;
  int jitter = 2;                    // prototype placement jitter, cells
  double clip_hi = 1.5;

  std::size_t dim() const { return grid_side * grid_side; }
};

/// Aligned (x, optional x*, y) records. x* = x ⊙ mask where present.
struct TripletDataset {
  Tensor x;                          // [n×d]
  Tensor xstar;                      // [n×d], zero rows where absent
  Tensor masks;                      // [n×d], binary
  std::vector<int> y;
  std::vector<std::uint8_t> has_star;
  std::size_t num_classes = 0;
  GenConfig meta;
  std::uint64_t seed = 0;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
  TripletDataset subset(const std::vector<std::size_t>& indices) const;
};

/// Cluttered-grid synthetic triplets: jittered class prototype plus
/// distractor fragments from other classes plus pixel noise, clipped to
/// [0, clip_hi]; x* is the prototype-support masked view. Deterministic in
/// (config, n, xstar_fraction, seed); per-sample randomness derives from
/// (seed, index).
TripletDataset generate(const GenConfig& config, std::size_t n, double xstar_fraction,
                        std::uint64_t seed);

/// Class prototype as a dense [d] tensor (support cells hold the prototype
/// values, rest zero). Exposed for generator tests.
Tensor class_prototype(const GenConfig& config, std::uint64_t seed, std::size_t cls);

/// Big-endian IDX ingestion (MNIST convention); pixels scaled to [0,1].
TripletDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Stratified seeded split into train/val/test.
std::array<TripletDataset, 3> split(const TripletDataset& dataset,
                                    const std::array<double, 3>& fractions,
                                    std::uint64_t seed);

void save_dataset(const TripletDataset& ds, const std::string& path);
TripletDataset load_dataset(const std::string& path);

}  // namespace lupi

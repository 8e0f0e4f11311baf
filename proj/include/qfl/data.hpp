#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qfl/tensor.hpp"

namespace qfl {

// Knobs for the synthetic two-class image generator.
struct SyntheticConfig {
  std::size_t samples_per_class = 100;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

// Labeled single-channel images; images[i] has dims [1, H, W].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t count_label(int label) const;
};

struct Partition {
  std::vector<Dataset> client_shards;

  std::vector<std::size_t> shard_sizes() const;
};

// Class 0: filled disc of radius H/4 centered in the image. Class 1: ring
// with radii H/4..H/3. Base intensity 0, feature intensity 1, Gaussian
// pixel noise, values clamped to [0,1]. Deterministic per seed.
Dataset generate_dataset(const SyntheticConfig& cfg);

// Shuffles, then cuts near-equal contiguous shards (sizes differ by <= 1).
Partition partition_iid(const Dataset& dataset, std::size_t num_clients, std::uint64_t seed);

// Gives each client a dominant class (round-robin) for a `skew` fraction of
// its shard; the remainder is drawn IID. skew = 0 matches partition_iid
// semantics.
Partition partition_label_skew(const Dataset& dataset, std::size_t num_clients, double skew,
                               std::uint64_t seed);

// Deterministic stratified split; throws ConfigError if either side of any
// class rounds to empty.
std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset, double test_fraction,
                                             std::uint64_t seed);

// Flat binary dataset file, bit-exact across platforms:
//   "QFLD", version u16 LE (=1), sample count u32 LE, channels u16 LE,
//   height u16 LE, width u16 LE, then per sample C*H*W binary64 LE values
//   in row-major order followed by one label byte.
std::vector<std::uint8_t> dataset_to_bytes(const Dataset& dataset);
Dataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace qfl

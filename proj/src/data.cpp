#include "qfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "qfl/bytes.hpp"
#include "qfl/errors.hpp"
#include "qfl/rng.hpp"

namespace qfl {

namespace {

constexpr char kDatasetMagic[4] = {'Q', 'F', 'L', 'D'};
constexpr std::uint16_t kDatasetVersion = 1;

void validate_config(const SyntheticConfig& cfg) {
  if (cfg.height < 8 || cfg.width < 8) {
    throw ConfigError("image size must be at least 8x8, got " + std::to_string(cfg.height) +
                      "x" + std::to_string(cfg.width));
  }
  if (cfg.samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma)) {
    throw ConfigError("noise_sigma must be a finite non-negative real");
  }
}

// Noise-free template for one class.
Tensor class_template(const SyntheticConfig& cfg, int label) {
  const double cy = (static_cast<double>(cfg.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(cfg.width) - 1.0) / 2.0;
  const double disc_radius = static_cast<double>(cfg.height) / 4.0;
  const double ring_outer = static_cast<double>(cfg.height) / 3.0;
  Tensor img({1, cfg.height, cfg.width});
  for (std::size_t r = 0; r < cfg.height; ++r) {
    for (std::size_t c = 0; c < cfg.width; ++c) {
      const double dy = static_cast<double>(r) - cy;
      const double dx = static_cast<double>(c) - cx;
      const double dist = std::sqrt(dy * dy + dx * dx);
      const bool lit = label == 0 ? dist <= disc_radius
                                  : (dist >= disc_radius && dist <= ring_outer);
      img.values[r * cfg.width + c] = lit ? 1.0 : 0.0;
    }
  }
  return img;
}

std::vector<std::size_t> shard_sizes_for(std::size_t total, std::size_t num_clients) {
  const std::size_t base = total / num_clients;
  const std::size_t extra = total % num_clients;
  std::vector<std::size_t> sizes(num_clients, base);
  for (std::size_t i = 0; i < extra; ++i) ++sizes[i];
  return sizes;
}

void check_partition_pre(const Dataset& dataset, std::size_t num_clients) {
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (num_clients > dataset.size()) {
    throw ConfigError("num_clients " + std::to_string(num_clients) + " exceeds dataset size " +
                      std::to_string(dataset.size()));
  }
}

Dataset take_indices(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    out.images.push_back(dataset.images[idx]);
    out.labels.push_back(dataset.labels[idx]);
  }
  return out;
}

}  // namespace

std::size_t Dataset::count_label(int label) const {
  std::size_t n = 0;
  for (int l : labels) {
    if (l == label) ++n;
  }
  return n;
}

std::vector<std::size_t> Partition::shard_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(client_shards.size());
  for (const Dataset& shard : client_shards) sizes.push_back(shard.size());
  return sizes;
}

Dataset generate_dataset(const SyntheticConfig& cfg) {
  validate_config(cfg);
  Rng rng(cfg.seed);
  const Tensor templates[2] = {class_template(cfg, 0), class_template(cfg, 1)};

  Dataset out;
  out.images.reserve(2 * cfg.samples_per_class);
  out.labels.reserve(2 * cfg.samples_per_class);
  for (int label = 0; label < 2; ++label) {
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      Tensor img = templates[label];
      if (cfg.noise_sigma > 0.0) {
        for (double& v : img.values) {
          v = std::clamp(v + rng.normal(0.0, cfg.noise_sigma), 0.0, 1.0);
        }
      }
      out.images.push_back(std::move(img));
      out.labels.push_back(label);
    }
  }
  return out;
}

Partition partition_iid(const Dataset& dataset, std::size_t num_clients, std::uint64_t seed) {
  check_partition_pre(dataset, num_clients);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const std::vector<std::size_t> sizes = shard_sizes_for(dataset.size(), num_clients);
  Partition part;
  std::size_t pos = 0;
  for (std::size_t size : sizes) {
    std::vector<std::size_t> shard(order.begin() + pos, order.begin() + pos + size);
    part.client_shards.push_back(take_indices(dataset, shard));
    pos += size;
  }
  return part;
}

Partition partition_label_skew(const Dataset& dataset, std::size_t num_clients, double skew,
                               std::uint64_t seed) {
  check_partition_pre(dataset, num_clients);
  if (!(skew >= 0.0 && skew <= 1.0)) throw ConfigError("skew must lie in [0, 1]");

  Rng rng(seed);
  std::vector<std::size_t> pools[2];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    pools[dataset.labels[i] == 0 ? 0 : 1].push_back(i);
  }
  rng.shuffle(pools[0]);
  rng.shuffle(pools[1]);

  const std::vector<std::size_t> sizes = shard_sizes_for(dataset.size(), num_clients);
  std::vector<std::vector<std::size_t>> shards(num_clients);

  // Phase 1: dominant-class placements, clients round-robin over classes.
  for (std::size_t i = 0; i < num_clients; ++i) {
    auto& pool = pools[i % 2];
    std::size_t want = static_cast<std::size_t>(
        std::llround(skew * static_cast<double>(sizes[i])));
    want = std::min(want, pool.size());
    for (std::size_t k = 0; k < want; ++k) {
      shards[i].push_back(pool.back());
      pool.pop_back();
    }
  }

  // Phase 2: remainder drawn IID from the merged leftover pool.
  std::vector<std::size_t> leftover;
  leftover.insert(leftover.end(), pools[0].begin(), pools[0].end());
  leftover.insert(leftover.end(), pools[1].begin(), pools[1].end());
  rng.shuffle(leftover);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < num_clients; ++i) {
    while (shards[i].size() < sizes[i]) shards[i].push_back(leftover[pos++]);
  }

  Partition part;
  for (const auto& shard : shards) part.client_shards.push_back(take_indices(dataset, shard));
  return part;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }

  Rng rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (int label = 0; label < 2; ++label) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.labels[i] == label) pool.push_back(i);
    }
    if (pool.empty()) continue;
    rng.shuffle(pool);
    const std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(pool.size())));
    if (n_test == 0 || n_test == pool.size()) {
      throw ConfigError("test_fraction " + std::to_string(test_fraction) +
                        " yields an empty split for class " + std::to_string(label) + " (" +
                        std::to_string(pool.size()) + " samples)");
    }
    test_idx.insert(test_idx.end(), pool.begin(), pool.begin() + n_test);
    train_idx.insert(train_idx.end(), pool.begin() + n_test, pool.end());
  }

  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {take_indices(dataset, train_idx), take_indices(dataset, test_idx)};
}

std::vector<std::uint8_t> dataset_to_bytes(const Dataset& dataset) {
  if (dataset.size() == 0) throw ConfigError("cannot serialize an empty dataset");
  if (dataset.images.size() != dataset.labels.size()) {
    throw ShapeError("dataset has " + std::to_string(dataset.images.size()) + " images but " +
                     std::to_string(dataset.labels.size()) + " labels");
  }
  const auto& dims = dataset.images.front().dims;
  if (dims.size() != 3) {
    throw ShapeError("dataset images must be [C,H,W], got " + shape_to_string(dims));
  }

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kDatasetMagic, kDatasetMagic + 4);
  append_u16(out, kDatasetVersion);
  append_u32(out, static_cast<std::uint32_t>(dataset.size()));
  append_u16(out, static_cast<std::uint16_t>(dims[0]));
  append_u16(out, static_cast<std::uint16_t>(dims[1]));
  append_u16(out, static_cast<std::uint16_t>(dims[2]));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tensor& img = dataset.images[i];
    if (img.dims != dims) {
      throw ShapeError("dataset image " + std::to_string(i) + " has dims " +
                       shape_to_string(img.dims) + ", expected " + shape_to_string(dims));
    }
    for (double v : img.values) append_f64(out, v);
    out.push_back(static_cast<std::uint8_t>(dataset.labels[i]));
  }
  return out;
}

Dataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes) {
  ByteReader reader(bytes.data(), bytes.size(), "dataset");
  char magic[4];
  reader.bytes(reinterpret_cast<std::uint8_t*>(magic), 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw FormatError("dataset: bad magic");
  const std::uint16_t version = reader.u16();
  if (version != kDatasetVersion) {
    throw VersionError("dataset: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = reader.u32();
  const std::size_t channels = reader.u16();
  const std::size_t height = reader.u16();
  const std::size_t width = reader.u16();
  if (count == 0 || channels == 0 || height == 0 || width == 0) {
    throw FormatError("dataset: zero count or dims");
  }

  Dataset out;
  out.images.reserve(count);
  out.labels.reserve(count);
  const std::size_t pixels = channels * height * width;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor img({channels, height, width});
    for (std::size_t k = 0; k < pixels; ++k) img.values[k] = reader.f64();
    const std::uint8_t label = reader.u8();
    if (label > 1) throw FormatError("dataset: label byte must be 0 or 1");
    out.images.push_back(std::move(img));
    out.labels.push_back(label);
  }
  reader.expect_end();
  return out;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  const std::vector<std::uint8_t> bytes = dataset_to_bytes(dataset);
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path + " for writing");
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  return dataset_from_bytes(bytes);
}

}  // namespace qfl

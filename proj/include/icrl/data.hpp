#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icrl/tensor.hpp"

namespace icrl {

struct DatasetClass {
  std::string name;
  std::size_t count = 0;
  std::vector<float> values;  // count * instance_numel, row-major per instance
};

// Per-class image tensors (c x s x s, values in [0, 1]). Immutable once
// built, so it can be shared read-only across evaluation threads.
class DatasetContainer {
 public:
  DatasetContainer() = default;
  DatasetContainer(Shape instance_shape, std::string provenance);

  void add_class(std::string name, std::vector<float> values);

  std::size_t class_count() const { return classes_.size(); }
  const DatasetClass& cls(std::size_t c) const { return classes_.at(c); }
  std::size_t instance_count(std::size_t c) const { return classes_.at(c).count; }
  const Shape& instance_shape() const { return instance_shape_; }
  std::size_t instance_numel() const { return shape_numel(instance_shape_); }
  const std::string& provenance() const { return provenance_; }
  void set_provenance(std::string p) { provenance_ = std::move(p); }

  std::span<const float> instance(std::size_t c, std::size_t i) const;

  template <class T>
  BasicTensor<T> instance_tensor(std::size_t c, std::size_t i) const {
    const auto v = instance(c, i);
    return BasicTensor<T>(instance_shape_, std::vector<T>(v.begin(), v.end()), false);
  }

  // Content equality; provenance is not part of the stored format.
  bool same_content(const DatasetContainer& other) const;

 private:
  Shape instance_shape_;
  std::string provenance_;
  std::vector<DatasetClass> classes_;
};

// FSDS layout, little-endian:
//   "FSDS" | u32 version | u32 class_count |
//   per class: u16 name_len, name bytes, u32 count, u32 c, u32 h, u32 w, f32 data |
//   u32 CRC-32 of every preceding byte
inline constexpr std::uint32_t kFsdsVersion = 1;

std::vector<std::uint8_t> encode_container(const DatasetContainer& container);
DatasetContainer decode_container(std::span<const std::uint8_t> bytes);
void save_container(const DatasetContainer& container, const std::filesystem::path& path);
DatasetContainer load_container(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

enum class OutlierRule {
  kOtherClass,  // drawn from a different class's cluster
  kUniform,     // uniform noise in [0, 1]
};

std::string_view to_string(OutlierRule rule);
OutlierRule parse_outlier_rule(std::string_view text);

struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t per_class = 40;
  std::size_t channels = 3;
  std::size_t size = 16;
  double separation = 10.0;  // expected distance between two class centers
  double noise = 0.1;        // per-pixel standard deviation around the center
  double outlier_fraction = 0.0;
  OutlierRule outlier_rule = OutlierRule::kOtherClass;
  std::uint64_t seed = 0;

  void validate() const;
};

// Class centers: 0.5 + z * separation / sqrt(2D), z ~ N(0, I), so two
// centers are `separation` apart in expectation.
std::vector<std::vector<float>> blob_centers(const SyntheticSpec& spec);

// Isotropic Gaussian clusters, clamped to [0, 1].
DatasetContainer gen_blobs(const SyntheticSpec& spec);

struct OutlierBlobs {
  DatasetContainer data;
  std::vector<std::vector<bool>> outlier;  // [class][instance]
  // For kOtherClass draws, the cluster the instance came from; otherwise its own class.
  std::vector<std::vector<std::size_t>> source_class;
};

// Same clean draws as gen_blobs (identical output at fraction 0); each
// instance is replaced by an outlier draw with probability outlier_fraction.
OutlierBlobs gen_outlier_blobs(const SyntheticSpec& spec);

// Sidecar CSV: class,instance,outlier,source_class
void save_outlier_flags(const OutlierBlobs& blobs, const std::filesystem::path& path);
std::vector<std::vector<bool>> load_outlier_flags(const std::filesystem::path& path,
                                                  const DatasetContainer& container);

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  // Throws ContractError on overlap or ids >= class_count.
  void validate(std::size_t class_count) const;
  const std::vector<std::size_t>& by_name(std::string_view name) const;
};

struct SplitRatios {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
};

SplitSpec split_classes(const DatasetContainer& container, const SplitRatios& ratios,
                        std::uint64_t seed);
SplitSpec split_classes(const DatasetContainer& container, SplitSpec explicit_lists);

// Text form: "[train]", "[val]", "[test]" headers, one class id per line.
std::string format_split(const SplitSpec& split);
SplitSpec parse_split(std::string_view text);
void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);

}  // namespace icrl

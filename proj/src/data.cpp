#include "icrl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <zlib.h>

#include "binary_io.hpp"
#include "icrl/errors.hpp"
#include "icrl/rng.hpp"

namespace icrl {

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace detail

DatasetContainer::DatasetContainer(Shape instance_shape, std::string provenance)
    : instance_shape_(std::move(instance_shape)), provenance_(std::move(provenance)) {
  if (instance_shape_.size() != 3 || shape_numel(instance_shape_) == 0) {
    throw ContractError("dataset instances must be non-empty c x h x w tensors");
  }
}

void DatasetContainer::add_class(std::string name, std::vector<float> values) {
  const std::size_t n = instance_numel();
  if (values.empty() || values.size() % n != 0) {
    throw ContractError("class '" + name + "' needs a positive whole number of " +
                        shape_str(instance_shape_) + " instances");
  }
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ContractError("class name longer than 65535 bytes");
  }
  DatasetClass cls{std::move(name), values.size() / n, std::move(values)};
  classes_.push_back(std::move(cls));
}

std::span<const float> DatasetContainer::instance(std::size_t c, std::size_t i) const {
  const DatasetClass& cls = classes_.at(c);
  if (i >= cls.count) {
    throw ContractError("instance " + std::to_string(i) + " out of range for class " +
                        std::to_string(c));
  }
  const std::size_t n = instance_numel();
  return std::span<const float>(cls.values).subspan(i * n, n);
}

bool DatasetContainer::same_content(const DatasetContainer& other) const {
  if (instance_shape_ != other.instance_shape_ || classes_.size() != other.classes_.size()) {
    return false;
  }
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    const auto& a = classes_[c];
    const auto& b = other.classes_[c];
    if (a.name != b.name || a.count != b.count) return false;
    if (std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(
        std::min<std::size_t>(bytes.size() - offset, std::numeric_limits<uInt>::max()));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_container(const DatasetContainer& container) {
  if (container.class_count() == 0) throw ContractError("cannot encode an empty class list");
  detail::ByteWriter w;
  w.bytes("FSDS");
  w.u32(kFsdsVersion);
  w.u32(static_cast<std::uint32_t>(container.class_count()));
  const Shape& shape = container.instance_shape();
  for (std::size_t c = 0; c < container.class_count(); ++c) {
    const DatasetClass& cls = container.cls(c);
    w.u16(static_cast<std::uint16_t>(cls.name.size()));
    w.bytes(cls.name);
    w.u32(static_cast<std::uint32_t>(cls.count));
    for (std::size_t extent : shape) w.u32(static_cast<std::uint32_t>(extent));
    w.f32s(cls.values);
  }
  const std::uint32_t crc = crc32_of(w.buffer());
  w.u32(crc);
  return std::move(w.buffer());
}

DatasetContainer decode_container(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4, "magic") != "FSDS") throw ParseError("bad magic, expected FSDS", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kFsdsVersion) {
    throw ParseError("unsupported FSDS version " + std::to_string(version), 4);
  }
  const std::size_t count_offset = r.position();
  const std::uint32_t classes = r.u32("class count");
  if (classes == 0) throw ParseError("empty class list", count_offset);

  DatasetContainer out;
  Shape shape;
  std::vector<std::pair<std::string, std::vector<float>>> parsed;
  for (std::uint32_t c = 0; c < classes; ++c) {
    const std::uint16_t name_len = r.u16("class name length");
    std::string name = r.bytes(name_len, "class name");
    const std::size_t count_pos = r.position();
    const std::uint32_t count = r.u32("instance count");
    if (count == 0) throw ParseError("class '" + name + "' has no instances", count_pos);
    const std::size_t shape_pos = r.position();
    Shape cls_shape{r.u32("channels"), r.u32("height"), r.u32("width")};
    if (shape_numel(cls_shape) == 0) throw ParseError("zero instance extent", shape_pos);
    if (c == 0) {
      shape = cls_shape;
    } else if (cls_shape != shape) {
      throw ParseError("class '" + name + "' has instance shape " + shape_str(cls_shape) +
                           ", container uses " + shape_str(shape),
                       shape_pos);
    }
    parsed.emplace_back(std::move(name),
                        r.f32s(static_cast<std::size_t>(count) * shape_numel(shape), "instance data"));
  }
  const std::size_t crc_pos = r.position();
  const std::uint32_t stored = r.u32("checksum");
  if (r.remaining() != 0) throw ParseError("trailing bytes after checksum", r.position());
  const std::uint32_t actual = crc32_of(bytes.first(crc_pos));
  if (stored != actual) throw ParseError("CRC-32 mismatch", crc_pos);

  out = DatasetContainer(shape, "");
  for (auto& [name, values] : parsed) out.add_class(std::move(name), std::move(values));
  return out;
}

void save_container(const DatasetContainer& container, const std::filesystem::path& path) {
  detail::write_file(path, encode_container(container));
}

DatasetContainer load_container(const std::filesystem::path& path) {
  DatasetContainer out = decode_container(detail::read_file(path));
  out.set_provenance(path.string());
  return out;
}

std::string_view to_string(OutlierRule rule) {
  return rule == OutlierRule::kUniform ? "uniform" : "other-class";
}

OutlierRule parse_outlier_rule(std::string_view text) {
  if (text == "other-class") return OutlierRule::kOtherClass;
  if (text == "uniform") return OutlierRule::kUniform;
  throw ConfigError("unknown outlier rule '" + std::string(text) +
                    "' (expected other-class or uniform)");
}

void SyntheticSpec::validate() const {
  if (classes == 0 || per_class == 0 || channels == 0 || size == 0) {
    throw ConfigError("synthetic spec: counts and sizes must be positive");
  }
  if (!(separation > 0.0)) throw ConfigError("synthetic spec: separation must be positive");
  if (!(noise >= 0.0)) throw ConfigError("synthetic spec: noise must be non-negative");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) {
    throw ConfigError("synthetic spec: outlier fraction must lie in [0, 1)");
  }
  if (outlier_rule == OutlierRule::kOtherClass && outlier_fraction > 0.0 && classes < 2) {
    throw ConfigError("synthetic spec: other-class outliers need at least two classes");
  }
}

std::vector<std::vector<float>> blob_centers(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t dim = spec.channels * spec.size * spec.size;
  const double spread = spec.separation / std::sqrt(2.0 * static_cast<double>(dim));
  Rng rng = make_rng(spec.seed, "blobs.centers");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<float>> centers(spec.classes, std::vector<float>(dim));
  for (auto& center : centers)
    for (float& v : center) v = static_cast<float>(0.5 + spread * normal(rng));
  return centers;
}

namespace {

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void draw_around(const std::vector<float>& center, double noise, Rng& rng,
                 std::normal_distribution<double>& normal, float* out) {
  for (std::size_t i = 0; i < center.size(); ++i) out[i] = clamp01(center[i] + noise * normal(rng));
}

std::string class_name(std::size_t c) { return "blob-" + std::to_string(c); }

}  // namespace

DatasetContainer gen_blobs(const SyntheticSpec& spec) {
  SyntheticSpec clean = spec;
  clean.outlier_fraction = 0.0;
  return gen_outlier_blobs(clean).data;
}

OutlierBlobs gen_outlier_blobs(const SyntheticSpec& spec) {
  spec.validate();
  const auto centers = blob_centers(spec);
  const std::size_t dim = centers.front().size();
  std::ostringstream provenance;
  provenance << "blobs(classes=" << spec.classes << ",per_class=" << spec.per_class
             << ",size=" << spec.channels << 'x' << spec.size << 'x' << spec.size
             << ",separation=" << spec.separation << ",noise=" << spec.noise
             << ",outliers=" << spec.outlier_fraction << '/' << to_string(spec.outlier_rule)
             << ",seed=" << spec.seed << ')';
  OutlierBlobs out{DatasetContainer({spec.channels, spec.size, spec.size}, provenance.str()), {}, {}};
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Rng instances = make_rng(spec.seed, "blobs.instances", c);
    Rng flags = make_rng(spec.seed, "blobs.outlier_flags", c);
    Rng draws = make_rng(spec.seed, "blobs.outlier_draws", c);
    std::vector<float> values(spec.per_class * dim);
    std::vector<bool> outlier(spec.per_class, false);
    std::vector<std::size_t> source(spec.per_class, c);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      float* dst = values.data() + i * dim;
      draw_around(centers[c], spec.noise, instances, normal, dst);
      if (spec.outlier_fraction <= 0.0 || unit(flags) >= spec.outlier_fraction) continue;
      outlier[i] = true;
      if (spec.outlier_rule == OutlierRule::kOtherClass) {
        std::uniform_int_distribution<std::size_t> pick(0, spec.classes - 2);
        std::size_t other = pick(draws);
        if (other >= c) ++other;
        source[i] = other;
        draw_around(centers[other], spec.noise, draws, normal, dst);
      } else {
        for (std::size_t k = 0; k < dim; ++k) dst[k] = static_cast<float>(unit(draws));
      }
    }
    out.data.add_class(class_name(c), std::move(values));
    out.outlier.push_back(std::move(outlier));
    out.source_class.push_back(std::move(source));
  }
  return out;
}

void save_outlier_flags(const OutlierBlobs& blobs, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "class,instance,outlier,source_class\n";
  for (std::size_t c = 0; c < blobs.outlier.size(); ++c)
    for (std::size_t i = 0; i < blobs.outlier[c].size(); ++i)
      out << c << ',' << i << ',' << (blobs.outlier[c][i] ? 1 : 0) << ','
          << blobs.source_class[c][i] << '\n';
  const std::string text = out.str();
  detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::vector<bool>> load_outlier_flags(const std::filesystem::path& path,
                                                  const DatasetContainer& container) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::vector<bool>> flags(container.class_count());
  for (std::size_t c = 0; c < container.class_count(); ++c)
    flags[c].assign(container.instance_count(c), false);
  std::string line;
  std::getline(in, line);  // header
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::size_t c = 0, i = 0, flag = 0;
    char comma = 0;
    if (!(row >> c >> comma >> i >> comma >> flag) || c >= flags.size() || i >= flags[c].size()) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": malformed outlier row");
    }
    flags[c][i] = flag != 0;
  }
  return flags;
}

void SplitSpec::validate(std::size_t class_count) const {
  std::set<std::size_t> seen;
  for (const auto* part : {&train, &val, &test}) {
    for (std::size_t id : *part) {
      if (id >= class_count) {
        throw ContractError("split references class " + std::to_string(id) + " but only " +
                            std::to_string(class_count) + " exist");
      }
      if (!seen.insert(id).second) {
        throw ContractError("class " + std::to_string(id) + " appears in more than one split");
      }
    }
  }
}

const std::vector<std::size_t>& SplitSpec::by_name(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

SplitSpec split_classes(const DatasetContainer& container, const SplitRatios& ratios,
                        std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      ratios.train + ratios.val + ratios.test > 1.0 + 1e-9) {
    throw ContractError("split ratios must be non-negative and sum to at most 1");
  }
  const std::size_t n = container.class_count();
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = make_rng(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng);
  auto count = [n](double r) { return static_cast<std::size_t>(std::floor(r * n + 1e-9)); };
  const std::size_t n_train = count(ratios.train), n_val = count(ratios.val);
  const std::size_t n_test = std::min(count(ratios.test), n - n_train - n_val);
  SplitSpec split;
  split.train.assign(ids.begin(), ids.begin() + n_train);
  split.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  split.test.assign(ids.begin() + n_train + n_val, ids.begin() + n_train + n_val + n_test);
  for (auto* part : {&split.train, &split.val, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

SplitSpec split_classes(const DatasetContainer& container, SplitSpec explicit_lists) {
  explicit_lists.validate(container.class_count());
  return explicit_lists;
}

std::string format_split(const SplitSpec& split) {
  std::ostringstream out;
  for (const char* name : {"train", "val", "test"}) {
    out << '[' << name << "]\n";
    for (std::size_t id : split.by_name(name)) out << id << '\n';
  }
  return out.str();
}

SplitSpec parse_split(std::string_view text) {
  SplitSpec split;
  std::vector<std::size_t>* current = nullptr;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      const std::string name = line.substr(1, line.find(']') - 1);
      if (name == "train") current = &split.train;
      else if (name == "val") current = &split.val;
      else if (name == "test") current = &split.test;
      else throw ConfigError("split line " + std::to_string(line_no) + ": unknown section [" + name + "]");
      continue;
    }
    if (!current) throw ConfigError("split line " + std::to_string(line_no) + ": id before any section");
    std::size_t consumed = 0;
    unsigned long long id = 0;
    try {
      id = std::stoull(line, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != line.size()) {
      throw ConfigError("split line " + std::to_string(line_no) + ": expected a class id, got '" + line + "'");
    }
    current->push_back(static_cast<std::size_t>(id));
  }
  return split;
}

void save_split(const SplitSpec& split, const std::filesystem::path& path) {
  const std::string text = format_split(split);
  detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

SplitSpec load_split(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return parse_split(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace icrl

#include "icrl/checkpoint.hpp"

#include <cstring>
#include <sstream>

#include "binary_io.hpp"
#include "icrl/errors.hpp"

namespace icrl {

namespace {

constexpr char kMagic[4] = {'I', 'C', 'R', 'L'};

std::string format_kv(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> parse_kv(const std::string& text, std::size_t base_offset) {
  std::map<std::string, std::string> kv;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ParseError("malformed configuration line '" + line + "'", base_offset + pos);
      }
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    pos = end + 1;
  }
  return kv;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  const auto& params = checkpoint.model.params;
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.data());
  }
  auto kv = checkpoint.model.config.to_map();
  for (const auto& [k, v] : checkpoint.train) kv.emplace(k, v);
  const std::string text = format_kv(kv);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4, "magic") != std::string_view(kMagic, 4)) {
    throw ParseError("not a checkpoint file (bad magic)", 0);
  }
  const std::size_t version_at = r.position();
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  const std::uint32_t count = r.u32("entry count");
  std::vector<std::pair<std::string, Tensor>> entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint16_t len = r.u16("entry name length");
    std::string name = r.bytes(len, "entry name");
    const std::size_t rank_at = r.position();
    const std::uint32_t rank = r.u32("entry rank");
    if (rank > 8) throw ParseError("implausible tensor rank " + std::to_string(rank), rank_at);
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("entry dimension");
    const std::size_t n = shape_numel(shape);
    entries.emplace_back(std::move(name), Tensor(shape, r.f32s(n, "entry values"), true));
  }
  const std::uint32_t text_len = r.u32("configuration length");
  const std::size_t text_at = r.position();
  const auto kv = parse_kv(r.bytes(text_len, "configuration"), text_at);
  if (r.remaining() != 0) throw ParseError("trailing bytes after checkpoint", r.position());

  Checkpoint cp;
  std::map<std::string, std::string> model_kv;
  for (const auto& [k, v] : kv) (k.rfind("model.", 0) == 0 ? model_kv : cp.train)[k] = v;
  cp.model.config = ModelConfig::from_map(model_kv);
  for (auto& [name, t] : entries) cp.model.params.add(name, std::move(t));

  // The parameter list must be exactly what the configuration builds.
  const Model<float> reference = build_model(cp.model.config, 0);
  for (const auto& [name, t] : reference.params) {
    if (!cp.model.params.contains(name)) throw ContractError("checkpoint is missing parameter " + name);
    if (cp.model.params.get(name).shape() != t.shape()) {
      throw ContractError("checkpoint parameter " + name + " has shape " +
                          shape_str(cp.model.params.get(name).shape()) + ", configuration expects " +
                          shape_str(t.shape()));
    }
  }
  for (const auto& [name, t] : cp.model.params) {
    if (!reference.params.contains(name) && name.rfind("pretrain.", 0) != 0) {
      throw ContractError("checkpoint has unexpected parameter " + name);
    }
  }
  return cp;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

bool same_parameters(const Model<float>& a, const Model<float>& b) {
  if (a.config.to_map() != b.config.to_map() || a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto& [na, ta] = a.params.entries()[i];
    const auto& [nb, tb] = b.params.entries()[i];
    if (na != nb || ta.shape() != tb.shape()) return false;
    if (std::memcmp(ta.data().data(), tb.data().data(), ta.numel() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace icrl

#include "softsense/nn/checkpoint.hpp"

#include <cstring>

#include "softsense/binio.hpp"

namespace softsense::nn {
namespace {

constexpr char kMagic[4] = {'S', 'S', 'M', '1'};
constexpr const char* kWhat = "model file";

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  binio::Writer w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.put(kCheckpointVersion);
  w.put_string(ckpt.descriptor);
  for (float m : ckpt.stats.mean) w.put(m);
  for (float s : ckpt.stats.std) w.put(s);
  for (bool c : ckpt.stats.clamped) w.put(static_cast<std::uint8_t>(c));
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) w.put(static_cast<std::uint32_t>(d));
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(t.data.data()), t.data.size() * sizeof(float)});
  }
  w.seal();
  return w.bytes();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, kWhat);
  const auto magic = r.get_bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw binio::MagicMismatchError("not an SSM1 model file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw binio::VersionMismatchError("unsupported model file version " + std::to_string(version));
  }
  binio::verify_crc(bytes, kWhat);
  binio::Reader body(bytes.first(bytes.size() - 4), kWhat);
  body.get_bytes(8);
  Checkpoint ckpt;
  ckpt.descriptor = body.get_string();
  for (auto& m : ckpt.stats.mean) m = body.get<float>();
  for (auto& s : ckpt.stats.std) s = body.get<float>();
  for (auto& c : ckpt.stats.clamped) c = body.get<std::uint8_t>() != 0;
  const auto count = body.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = body.get_string();
    const auto rank = body.get<std::uint32_t>();
    if (rank > 8) throw binio::FormatError("model file: implausible tensor rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<int>(body.get<std::uint32_t>()));
    const std::size_t n = shape_size(shape);
    const auto raw = body.get_bytes(n * sizeof(float));
    Tensor<float> t(shape);
    std::memcpy(t.data.data(), raw.data(), raw.size());
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (body.remaining() != 0) throw binio::FormatError("model file: trailing bytes after last tensor");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  binio::write_file_atomic(path, serialize(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(binio::read_file(path)); }

Checkpoint snapshot(const ParameterSet<float>& params, std::string descriptor, const data::NormStats& stats) {
  Checkpoint ckpt{std::move(descriptor), stats, {}};
  for (const auto& p : params.all()) ckpt.tensors.emplace_back(p.name, p.value);
  return ckpt;
}

void restore(ParameterSet<float>& params, const Checkpoint& ckpt) {
  if (ckpt.tensors.size() != params.all().size()) {
    throw binio::FormatError("model file has " + std::to_string(ckpt.tensors.size()) +
                             " tensors, architecture expects " + std::to_string(params.all().size()));
  }
  for (const auto& [name, t] : ckpt.tensors) {
    auto* p = params.find(name);
    if (!p) throw binio::FormatError("model file tensor '" + name + "' is not part of the architecture");
    if (p->value.shape != t.shape) {
      throw binio::FormatError("model file tensor '" + name + "' has shape " + shape_string(t.shape) +
                               ", expected " + shape_string(p->value.shape));
    }
    p->value = t;
    ++p->version;
  }
}

}  // namespace softsense::nn

#include <cstring>
#include <filesystem>
#include <fstream>

#include "eva/io.hpp"
#include "eva/train.hpp"

namespace eva {

namespace {
constexpr char kMagic[4] = {'E', 'V', 'A', 'C'};
}

void write_container(const std::string& path, const std::vector<StoredTensor>& tensors) {
  // Write to a temporary then rename so a crash never leaves half a file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out.write(kMagic, 4);
    le::put_u32(out, kCheckpointVersion);
    le::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      if (t.name.size() > 0xffff) throw FormatError("tensor name too long: " + t.name.substr(0, 32));
      le::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      le::put_u8(out, t.dtype);
      le::put_u8(out, static_cast<std::uint8_t>(t.shape.size()));
      for (auto d : t.shape) le::put_u32(out, static_cast<std::uint32_t>(d));
      for (double v : t.values) {
        if (t.dtype == 0) {
          le::put_f32(out, static_cast<float>(v));
        } else {
          le::put_f64(out, v);
        }
      }
    }
    if (!out) throw FormatError(path + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

std::vector<StoredTensor> read_container(const std::string& path) {
  le::Reader in(path);
  char magic[4];
  in.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path + ": not an EVAC checkpoint");
  const auto version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.u32("tensor count");
  std::vector<StoredTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto len = in.u16("name length");
    t.name.resize(len);
    in.bytes(t.name.data(), len, "name");
    t.dtype = in.u8("dtype");
    if (t.dtype > 1) throw FormatError(path + ": tensor " + t.name + " has unknown dtype");
    const auto ndim = in.u8("ndim");
    std::int64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      t.shape.push_back(in.u32("dims"));
      n *= t.shape.back();
    }
    const std::size_t width = t.dtype == 0 ? 4 : 8;
    if (in.offset() + static_cast<std::size_t>(n) * width > in.size()) {
      throw FormatError(path + ": truncated at offset " + std::to_string(in.size()) + " inside tensor " + t.name);
    }
    t.values.resize(static_cast<std::size_t>(n));
    for (auto& v : t.values) v = t.dtype == 0 ? static_cast<double>(in.f32("payload")) : in.f64("payload");
    out.push_back(std::move(t));
  }
  if (!in.at_end()) throw FormatError(path + ": trailing bytes after the last tensor");
  return out;
}

std::string sidecar_path(const std::string& container_path) {
  return std::filesystem::path(container_path).replace_extension(".json").string();
}

template <typename Real>
StoredTensor store(const std::string& name, std::span<const Real> values, const Shape& shape) {
  StoredTensor t;
  t.name = name;
  t.dtype = sizeof(Real) == 4 ? 0 : 1;
  t.shape = shape;
  t.values.assign(values.begin(), values.end());
  return t;
}

template <typename Real>
void load_parameters(ParameterSet<Real>& params, const std::vector<StoredTensor>& stored, const std::string& prefix) {
  std::map<std::string, const StoredTensor*> index;
  for (const auto& t : stored) index[t.name] = &t;
  for (const auto& e : params.entries()) {
    auto it = index.find(prefix + e.name);
    if (it == index.end()) throw FormatError("checkpoint is missing tensor " + prefix + e.name);
    if (it->second->shape != e.tensor.shape()) {
      throw FormatError("checkpoint tensor " + prefix + e.name + " has shape " + shape_string(it->second->shape) +
                        ", model expects " + shape_string(e.tensor.shape()));
    }
    Tensor<Real> t = e.tensor;
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<Real>(it->second->values[i]);
  }
}

template StoredTensor store<float>(const std::string&, std::span<const float>, const Shape&);
template StoredTensor store<double>(const std::string&, std::span<const double>, const Shape&);
template void load_parameters<float>(ParameterSet<float>&, const std::vector<StoredTensor>&, const std::string&);
template void load_parameters<double>(ParameterSet<double>&, const std::vector<StoredTensor>&, const std::string&);

}  // namespace eva

#include "hemafuse/checkpoint.hpp"

#include "byte_io.hpp"

namespace hemafuse {

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet<float>& params) {
  detail::ByteWriter w;
  w.magic("AFCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(reinterpret_cast<const std::uint8_t*>(name.data()), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.size(); ++i) w.f32(t[i]);
  }
  return std::move(w.bytes());
}

ParameterSet<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  r.expect_magic("AFCK");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DecodeError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  ParameterSet<float> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t len = r.u32();
    const auto* p = r.take(len);
    std::string name(reinterpret_cast<const char*>(p), len);
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim == 0) throw DecodeError("checkpoint: zero dimension in '" + name + "'");
      shape.push_back(dim);
    }
    if (static_cast<std::size_t>(shape_size(shape)) * 4 > r.remaining())
      throw DecodeError("checkpoint: truncated data");
    Tensor<float> t(shape);
    for (Index j = 0; j < t.size(); ++j) t[j] = r.f32();
    out.add(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) throw DecodeError("checkpoint: trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params) {
  detail::write_file(path, encode_checkpoint(params));
}

ParameterSet<float> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace hemafuse

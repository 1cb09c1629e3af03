#include "seqplace/nn/checkpoint.hpp"

#include "binary_io.hpp"

namespace seqplace::nn {

void save_tensors(const std::string& path, const TensorMap& tensors) {
  io::Writer w(path);
  w.magic("SQWT");
  w.pod<uint8_t>(1);
  w.pod<uint32_t>(static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    if (name.size() > UINT16_MAX) throw ConfigError("tensor name too long: " + name);
    if (tensor.rank() > UINT8_MAX) throw ConfigError("tensor rank too large: " + name);
    w.pod<uint16_t>(static_cast<uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.pod<uint8_t>(static_cast<uint8_t>(tensor.rank()));
    for (std::size_t d : tensor.shape) {
      w.pod<uint32_t>(static_cast<uint32_t>(d));
    }
    w.bytes(tensor.v.data(), tensor.v.size() * sizeof(float));
  }
  w.finish();
}

TensorMap load_tensors(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("SQWT", "checkpoint");
  r.expect_version(1, "checkpoint");
  const uint32_t count = r.pod<uint32_t>();
  TensorMap out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.pod<uint16_t>();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint8_t rank = r.pod<uint8_t>();
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      shape[d] = r.pod<uint32_t>();
      numel *= shape[d];
    }
    Tensor<float> t = Tensor<float>::zeros(shape);
    r.bytes(t.v.data(), numel * sizeof(float));
    if (!out.emplace(std::move(name), std::move(t)).second) {
      throw DataError(path + ": duplicate tensor name in checkpoint");
    }
  }
  if (!r.at_eof()) {
    throw DataError(path + ": trailing bytes after checkpoint payload at offset " +
                    std::to_string(r.offset()));
  }
  return out;
}

}  // namespace seqplace::nn

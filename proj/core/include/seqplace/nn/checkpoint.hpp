#pragma once

#include <map>
#include <string>

#include "seqplace/nn/tensor.hpp"

namespace seqplace::nn {

/** Named tensors, ordered by name so serialization is byte-stable. */
using TensorMap = std::map<std::string, Tensor<float>>;

/**
 * Checkpoint container, little-endian:
 *   "SQWT" magic, u8 version=1, u32 tensor count, then per tensor:
 *   u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 data.
 */
void save_tensors(const std::string& path, const TensorMap& tensors);
TensorMap load_tensors(const std::string& path);

}  // namespace seqplace::nn

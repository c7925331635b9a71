#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddspseg/layers.hpp"

namespace ddspseg::nn {

/// Container layout:
///   VVFCKPT1\n
///   tensors <count>\n
///   <name> <ndim> <d0> ... <dn-1>\n      (one line per tensor)
///   \n
///   concatenated little-endian float32 payloads, in manifest order.
/// Parameters come first, then buffers (batch-norm running moments).
std::vector<std::uint8_t> encode_checkpoint(const ParamRefs<float>& refs);
std::vector<std::uint8_t> encode_checkpoint(const ParamRefs<double>& refs);

/// Loads values into `refs`; names and shapes must match exactly, in order.
/// Throws std::runtime_error describing the first mismatch.
template <class T>
void decode_checkpoint(const std::vector<std::uint8_t>& bytes, ParamRefs<T>& refs);

void save_checkpoint(const std::filesystem::path& path, const ParamRefs<float>& refs);
template <class T>
void load_checkpoint(const std::filesystem::path& path, ParamRefs<T>& refs);

}  // namespace ddspseg::nn

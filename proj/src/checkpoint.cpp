#include "ddspseg/checkpoint.hpp"

#include <sstream>
#include <stdexcept>

#include "ddspseg/volio.hpp"

namespace ddspseg::nn {

namespace {

constexpr const char* kMagic = "VVFCKPT1";

template <class T>
std::vector<const Parameter<T>*> ordered(const ParamRefs<T>& refs) {
  std::vector<const Parameter<T>*> all(refs.params.begin(), refs.params.end());
  all.insert(all.end(), refs.buffers.begin(), refs.buffers.end());
  return all;
}

template <class T>
std::vector<std::uint8_t> encode(const ParamRefs<T>& refs) {
  const auto all = ordered(refs);
  std::string header = std::string(kMagic) + "\ntensors " + std::to_string(all.size()) + "\n";
  std::size_t payload = 0;
  for (const auto* p : all) {
    header += p->name + " " + std::to_string(p->shape.size());
    for (int d : p->shape) header += " " + std::to_string(d);
    header += "\n";
    payload += p->size();
  }
  header += "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 4 * payload);
  for (const auto* p : all) {
    for (T v : p->value) io::append_f32_le(out, static_cast<float>(v));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamRefs<float>& refs) { return encode(refs); }
std::vector<std::uint8_t> encode_checkpoint(const ParamRefs<double>& refs) { return encode(refs); }

template <class T>
void decode_checkpoint(const std::vector<std::uint8_t>& bytes, ParamRefs<T>& refs) {
  // The manifest ends at the first blank line.
  std::size_t end = 0;
  for (; end + 1 < bytes.size(); ++end) {
    if (bytes[end] == '\n' && bytes[end + 1] == '\n') break;
  }
  if (end + 1 >= bytes.size()) throw std::runtime_error("checkpoint: manifest not terminated");
  std::istringstream in(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(end + 1)));
  std::string magic, word;
  std::size_t count = 0;
  if (!(in >> magic) || magic != kMagic) throw std::runtime_error("checkpoint: bad magic");
  if (!(in >> word >> count) || word != "tensors") throw std::runtime_error("checkpoint: expected 'tensors <count>'");

  std::vector<Parameter<T>*> all(refs.params.begin(), refs.params.end());
  all.insert(all.end(), refs.buffers.begin(), refs.buffers.end());
  if (count != all.size()) {
    throw std::runtime_error("checkpoint: holds " + std::to_string(count) + " tensors, network has " +
                             std::to_string(all.size()));
  }
  std::size_t offset = end + 2;
  for (auto* p : all) {
    std::string name;
    std::size_t ndim = 0;
    if (!(in >> name >> ndim)) throw std::runtime_error("checkpoint: truncated manifest");
    std::vector<int> shape(ndim);
    for (auto& d : shape) {
      if (!(in >> d)) throw std::runtime_error("checkpoint: truncated manifest");
    }
    if (name != p->name || shape != p->shape) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' does not match network tensor '" + p->name + "'");
    }
    if (offset + 4 * p->size() > bytes.size()) throw std::runtime_error("checkpoint: payload too short");
    for (std::size_t i = 0; i < p->size(); ++i, offset += 4) p->value[i] = static_cast<T>(io::load_f32_le(&bytes[offset]));
  }
  if (offset != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes after payload");
}

void save_checkpoint(const std::filesystem::path& path, const ParamRefs<float>& refs) {
  io::write_file_bytes(path, encode_checkpoint(refs));
}

template <class T>
void load_checkpoint(const std::filesystem::path& path, ParamRefs<T>& refs) {
  decode_checkpoint(io::read_file_bytes(path), refs);
}

template void decode_checkpoint<float>(const std::vector<std::uint8_t>&, ParamRefs<float>&);
template void decode_checkpoint<double>(const std::vector<std::uint8_t>&, ParamRefs<double>&);
template void load_checkpoint<float>(const std::filesystem::path&, ParamRefs<float>&);
template void load_checkpoint<double>(const std::filesystem::path&, ParamRefs<double>&);

}  // namespace ddspseg::nn

#include "ddspseg/volio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ddspseg::io {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

void decode_payload(std::span<const std::uint8_t> payload, VoxelType type, std::vector<float>& out) {
  if (type == VoxelType::u8) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(payload[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = load_f32_le(payload.data() + 4 * i);
  }
}

std::size_t bytes_per_voxel(VoxelType t) { return t == VoxelType::u8 ? 1 : 4; }

}  // namespace

void append_f32_le(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(f));
  std::uint8_t b[4];
  std::memcpy(b, &bits, 4);
  out.insert(out.end(), b, b + 4);
}

float load_f32_le(const std::uint8_t* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  return std::bit_cast<float>(to_little(bits));
}

const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::io: return "io";
    case ErrorKind::malformed_header: return "malformed_header";
    case ErrorKind::payload_length: return "payload_length";
    case ErrorKind::unknown_dtype: return "unknown_dtype";
    case ErrorKind::non_integral_u8: return "non_integral_u8";
    case ErrorKind::unsupported_type: return "unsupported_type";
    case ErrorKind::compressed_data: return "compressed_data";
    case ErrorKind::missing_raw_file: return "missing_raw_file";
  }
  return "unknown";
}

FormatError::FormatError(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

std::vector<std::uint8_t> encode_vvf(const Volume& v, VoxelType dtype) {
  const auto d = v.dims();
  const auto s = v.spacing();
  std::string header = "VVF1\n";
  header += "dims " + std::to_string(d.nx) + " " + std::to_string(d.ny) + " " + std::to_string(d.nz) + "\n";
  header += "spacing " + format_double(s.sx) + " " + format_double(s.sy) + " " + format_double(s.sz) + "\n";
  header += dtype == VoxelType::u8 ? "dtype u8\n" : "dtype f32\n";
  header += "\n";

  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + v.size() * bytes_per_voxel(dtype));
  if (dtype == VoxelType::u8) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float x = v[i];
      if (!(x >= 0.0f && x <= 255.0f) || std::floor(x) != x) {
        throw FormatError(ErrorKind::non_integral_u8,
                          "voxel " + std::to_string(i) + " = " + std::to_string(x) + " is not an integer in [0, 255]");
      }
      out.push_back(static_cast<std::uint8_t>(x));
    }
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) append_f32_le(out, v[i]);
  }
  return out;
}

Volume decode_vvf(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto next_line = [&](const char* what) -> std::string_view {
    auto it = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), std::uint8_t{'\n'});
    if (it == bytes.end()) throw FormatError(ErrorKind::malformed_header, std::string("missing ") + what + " line");
    const auto end = static_cast<std::size_t>(it - bytes.begin());
    std::string_view line(reinterpret_cast<const char*>(bytes.data()) + pos, end - pos);
    pos = end + 1;
    return line;
  };

  if (next_line("magic") != "VVF1") throw FormatError(ErrorKind::malformed_header, "bad magic, expected VVF1");

  auto dims_tok = split_ws(next_line("dims"));
  Dims d;
  if (dims_tok.size() != 4 || dims_tok[0] != "dims" || !parse_number(dims_tok[1], d.nx) ||
      !parse_number(dims_tok[2], d.ny) || !parse_number(dims_tok[3], d.nz) || d.nx <= 0 || d.ny <= 0 || d.nz <= 0) {
    throw FormatError(ErrorKind::malformed_header, "expected 'dims <nx> <ny> <nz>' with positive integers");
  }

  auto sp_tok = split_ws(next_line("spacing"));
  Spacing s;
  if (sp_tok.size() != 4 || sp_tok[0] != "spacing" || !parse_number(sp_tok[1], s.sx) ||
      !parse_number(sp_tok[2], s.sy) || !parse_number(sp_tok[3], s.sz) || !(s.sx > 0) || !(s.sy > 0) ||
      !(s.sz > 0)) {
    throw FormatError(ErrorKind::malformed_header, "expected 'spacing <sx> <sy> <sz>' with positive decimals");
  }

  auto dt_tok = split_ws(next_line("dtype"));
  if (dt_tok.size() != 2 || dt_tok[0] != "dtype") {
    throw FormatError(ErrorKind::malformed_header, "expected 'dtype <u8|f32>'");
  }
  VoxelType type;
  if (dt_tok[1] == "u8") {
    type = VoxelType::u8;
  } else if (dt_tok[1] == "f32") {
    type = VoxelType::f32;
  } else {
    throw FormatError(ErrorKind::unknown_dtype, "unknown dtype '" + std::string(dt_tok[1]) + "'");
  }

  if (!next_line("blank separator").empty()) {
    throw FormatError(ErrorKind::malformed_header, "expected empty line after dtype");
  }

  const std::size_t expected = d.count() * bytes_per_voxel(type);
  const std::size_t have = bytes.size() - pos;
  if (have != expected) {
    throw FormatError(ErrorKind::payload_length, "payload has " + std::to_string(have) + " bytes, dims " +
                                                     to_string(d) + " require " + std::to_string(expected));
  }
  std::vector<float> data(d.count());
  decode_payload(bytes.subspan(pos), type, data);
  return Volume(d, s, std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(ErrorKind::io, "read failed for '" + path.string() + "'");
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(ErrorKind::io, "write failed for '" + path.string() + "'");
}

void write_vvf(const Volume& v, VoxelType dtype, const std::filesystem::path& path) {
  auto bytes = encode_vvf(v, dtype);
  write_file_bytes(path, bytes);
}

Volume read_vvf(const std::filesystem::path& path) { return decode_vvf(read_file_bytes(path)); }

Volume read_mhd_subset(const std::filesystem::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw FormatError(ErrorKind::io, "cannot open '" + header_path.string() + "'");

  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (split_ws(line).empty()) continue;
      throw FormatError(ErrorKind::malformed_header, "line without '=': " + line);
    }
    auto key_tok = split_ws(std::string_view(line).substr(0, eq));
    if (key_tok.size() != 1) throw FormatError(ErrorKind::malformed_header, "bad key in: " + line);
    auto val_tok = split_ws(std::string_view(line).substr(eq + 1));
    std::string value;
    for (std::size_t i = 0; i < val_tok.size(); ++i) {
      if (i) value += ' ';
      value += val_tok[i];
    }
    kv[std::string(key_tok[0])] = value;
  }

  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(ErrorKind::malformed_header, std::string("missing key ") + key);
    return it->second;
  };

  if (auto it = kv.find("ObjectType"); it != kv.end() && it->second != "Image") {
    throw FormatError(ErrorKind::malformed_header, "ObjectType must be Image");
  }
  if (get("NDims") != "3") throw FormatError(ErrorKind::malformed_header, "NDims must be 3");
  if (auto it = kv.find("CompressedData"); it != kv.end()) {
    if (it->second == "True" || it->second == "true") {
      throw FormatError(ErrorKind::compressed_data, "compressed payloads are not supported");
    }
    if (it->second != "False" && it->second != "false") {
      throw FormatError(ErrorKind::malformed_header, "CompressedData must be True or False");
    }
  }
  for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"}) {
    if (auto it = kv.find(key); it != kv.end() && (it->second == "True" || it->second == "true")) {
      throw FormatError(ErrorKind::unsupported_type, "big-endian payloads are not supported");
    }
  }

  auto dim_tok = split_ws(get("DimSize"));
  Dims d;
  if (dim_tok.size() != 3 || !parse_number(dim_tok[0], d.nx) || !parse_number(dim_tok[1], d.ny) ||
      !parse_number(dim_tok[2], d.nz) || d.nx <= 0 || d.ny <= 0 || d.nz <= 0) {
    throw FormatError(ErrorKind::malformed_header, "DimSize must hold three positive integers");
  }
  Spacing s;
  if (auto it = kv.find("ElementSpacing"); it != kv.end()) {
    auto sp_tok = split_ws(it->second);
    if (sp_tok.size() != 3 || !parse_number(sp_tok[0], s.sx) || !parse_number(sp_tok[1], s.sy) ||
        !parse_number(sp_tok[2], s.sz) || !(s.sx > 0) || !(s.sy > 0) || !(s.sz > 0)) {
      throw FormatError(ErrorKind::malformed_header, "ElementSpacing must hold three positive decimals");
    }
  }

  const std::string& etype = get("ElementType");
  VoxelType type;
  if (etype == "MET_UCHAR") {
    type = VoxelType::u8;
  } else if (etype == "MET_FLOAT") {
    type = VoxelType::f32;
  } else {
    throw FormatError(ErrorKind::unsupported_type, "ElementType " + etype + " is not supported");
  }

  const std::string& data_file = get("ElementDataFile");
  if (data_file == "LOCAL" || data_file == "LIST") {
    throw FormatError(ErrorKind::unsupported_type, "ElementDataFile must name a separate raw file");
  }
  const auto raw_path = header_path.parent_path() / data_file;
  if (!std::filesystem::exists(raw_path)) {
    throw FormatError(ErrorKind::missing_raw_file, "raw file '" + raw_path.string() + "' not found");
  }
  auto payload = read_file_bytes(raw_path);
  const std::size_t expected = d.count() * bytes_per_voxel(type);
  if (payload.size() != expected) {
    throw FormatError(ErrorKind::payload_length, "raw file has " + std::to_string(payload.size()) +
                                                     " bytes, DimSize requires " + std::to_string(expected));
  }
  std::vector<float> data(d.count());
  decode_payload(payload, type, data);
  return Volume(d, s, std::move(data));
}

Volume read_volume(const std::filesystem::path& path) {
  if (path.extension() == ".mhd") return read_mhd_subset(path);
  return read_vvf(path);
}

}  // namespace ddspseg::io

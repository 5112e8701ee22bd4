#include "tts/nn/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tts::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& s, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

}  // namespace

const Tensor& Container::at(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw FormatError("container has no array named '" + name + "'");
  return it->second;
}

std::string encode_container(const Container& c) {
  nlohmann::json header;
  header["arrays"] = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : c.arrays) {
    header["arrays"].push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"byte_offset", payload.size()}});
    for (double v : t.data()) {
      const auto f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      payload.append(buf, 4);
    }
  }
  header["config"] = c.config;
  std::string out = header.dump();
  out.push_back('\n');
  put_u64(out, payload.size());
  out += payload;
  return out;
}

Container decode_container(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError("container: header is not newline-terminated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: malformed header: ") + e.what());
  }
  if (bytes.size() < nl + 1 + 8) throw FormatError("container: missing payload length");
  const std::uint64_t len = get_u64(bytes, nl + 1);
  const std::size_t base = nl + 9;
  if (bytes.size() - base != len) {
    throw FormatError("container: payload length " + std::to_string(len) + " but " + std::to_string(bytes.size() - base) +
                      " bytes present");
  }
  Container c;
  if (header.contains("config")) c.config = header["config"];
  if (!header.contains("arrays") || !header["arrays"].is_array()) throw FormatError("container: header lacks 'arrays'");
  for (const auto& entry : header["arrays"]) {
    if (entry.value("dtype", "") != "f32") throw FormatError("container: unsupported dtype for " + entry.value("name", "?"));
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto off = entry.at("byte_offset").get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (off + 4 * n > len) throw FormatError("container: array '" + name + "' runs past the payload");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + base + off + 4 * i, 4);
      data[i] = f;
    }
    c.arrays.emplace(name, Tensor(shape, std::move(data)));
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  const auto bytes = encode_container(c);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return decode_container(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace tts::nn

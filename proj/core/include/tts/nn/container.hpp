#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "tts/nn/tensor.hpp"

namespace tts::nn {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Array archive used for checkpoints, feature dumps, statistics and alignments.
//
// Layout:
//   <JSON header>\n<u64 LE payload length><payload>
// The header is {"arrays":[{"name","dtype":"f32","shape","byte_offset"}...], "config":{...}}
// and the payload holds each array as little-endian IEEE-754 float32, in header order.
struct Container {
  std::map<std::string, Tensor> arrays;
  nlohmann::json config = nlohmann::json::object();

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return arrays.count(name) != 0; }
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// Serializes to / parses from an in-memory byte string (same layout as the file).
std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes);

}  // namespace tts::nn

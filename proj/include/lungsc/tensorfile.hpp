#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lungsc {

// Flat key -> array archive in the safetensors container format:
// an 8-byte little-endian header length, a JSON header mapping each tensor
// name to {dtype, shape, data_offsets}, then the raw data block.
// F32 and F64 payloads are supported; everything is held as double in
// memory. "__metadata__" carries string key/value pairs (config hash,
// split fingerprint, ...).
struct ArchiveTensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

class TensorArchive {
 public:
  static TensorArchive load(const std::string& path);
  // store_f32 halves size at the cost of precision; checkpoints use f64.
  void save(const std::string& path, bool store_f32 = false) const;

  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  const ArchiveTensor& at(const std::string& name) const;
  void put(const std::string& name, std::vector<int64_t> shape,
           std::vector<double> data);

  std::vector<std::string> names() const;
  size_t size() const { return tensors_.size(); }

  std::map<std::string, std::string> metadata;

 private:
  std::map<std::string, ArchiveTensor> tensors_;
};

}  // namespace lungsc

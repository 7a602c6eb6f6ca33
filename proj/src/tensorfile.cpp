#include "lungsc/tensorfile.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lungsc/error.hpp"

namespace lungsc {

using nlohmann::json;

const ArchiveTensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw MissingWeights("no tensor named '" + name + "'");
  return it->second;
}

void TensorArchive::put(const std::string& name, std::vector<int64_t> shape,
                        std::vector<double> data) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  if (n != static_cast<int64_t>(data.size()))
    throw ShapeMismatch("tensor '" + name + "': shape does not match data size");
  tensors_[name] = ArchiveTensor{std::move(shape), std::move(data)};
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [k, v] : tensors_) out.push_back(k);
  return out;
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");

  uint64_t header_len = 0;
  f.read(reinterpret_cast<char*>(&header_len), 8);
  if (!f || header_len == 0 || header_len > (1ULL << 31))
    throw IoError("'" + path + "' is not a tensor archive");

  std::string header(header_len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!f) throw IoError("truncated header in '" + path + "'");

  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception& e) {
    throw IoError("bad archive header in '" + path + "': " + e.what());
  }

  std::vector<char> blob((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());

  TensorArchive ar;
  for (auto it = h.begin(); it != h.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it.value().begin(); m != it.value().end(); ++m)
        ar.metadata[m.key()] = m.value().get<std::string>();
      continue;
    }
    const json& t = it.value();
    std::string dtype = t.at("dtype").get<std::string>();
    std::vector<int64_t> shape = t.at("shape").get<std::vector<int64_t>>();
    uint64_t begin = t.at("data_offsets").at(0).get<uint64_t>();
    uint64_t end = t.at("data_offsets").at(1).get<uint64_t>();
    if (end < begin || end > blob.size())
      throw IoError("tensor '" + it.key() + "' offsets out of range");

    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    std::vector<double> data(static_cast<size_t>(n));
    if (dtype == "F64") {
      if (end - begin != static_cast<uint64_t>(n) * 8)
        throw IoError("tensor '" + it.key() + "' size mismatch");
      std::memcpy(data.data(), blob.data() + begin, (end - begin));
    } else if (dtype == "F32") {
      if (end - begin != static_cast<uint64_t>(n) * 4)
        throw IoError("tensor '" + it.key() + "' size mismatch");
      const float* p = reinterpret_cast<const float*>(blob.data() + begin);
      for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = p[i];
    } else if (dtype == "I64") {
      // buffers like step counters; widened to double
      if (end - begin != static_cast<uint64_t>(n) * 8)
        throw IoError("tensor '" + it.key() + "' size mismatch");
      const int64_t* p = reinterpret_cast<const int64_t*>(blob.data() + begin);
      for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = static_cast<double>(p[i]);
    } else {
      throw IoError("tensor '" + it.key() + "' has unsupported dtype " + dtype);
    }
    ar.tensors_[it.key()] = ArchiveTensor{std::move(shape), std::move(data)};
  }
  return ar;
}

void TensorArchive::save(const std::string& path, bool store_f32) const {
  json h = json::object();
  if (!metadata.empty()) {
    json m = json::object();
    for (const auto& [k, v] : metadata) m[k] = v;
    h["__metadata__"] = m;
  }

  const size_t elem = store_f32 ? 4 : 8;
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    uint64_t bytes = static_cast<uint64_t>(t.data.size()) * elem;
    h[name] = {{"dtype", store_f32 ? "F32" : "F64"},
               {"shape", t.shape},
               {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }

  std::string header = h.dump();
  // pad header to 8-byte alignment, as the format recommends
  while (header.size() % 8 != 0) header.push_back(' ');
  uint64_t header_len = header.size();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f.write(reinterpret_cast<const char*>(&header_len), 8);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : tensors_) {
    if (store_f32) {
      std::vector<float> tmp(t.data.begin(), t.data.end());
      f.write(reinterpret_cast<const char*>(tmp.data()),
              static_cast<std::streamsize>(tmp.size() * 4));
    } else {
      f.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * 8));
    }
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace lungsc

#include "lungsc/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "lungsc/error.hpp"
#include "lungsc/log.hpp"

namespace lungsc {

namespace {

uint32_t read_u32(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

uint16_t read_u16(const char* p) {
  uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(f)),
                        std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw IoError("'" + path + "' is not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  size_t data_pos = 0, data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* id = buf.data() + pos;
    uint32_t chunk_len = read_u32(buf.data() + pos + 4);
    size_t body = pos + 8;
    if (std::memcmp(id, "fmt ", 4) == 0 && body + 16 <= buf.size()) {
      format = read_u16(buf.data() + body);
      channels = read_u16(buf.data() + body + 2);
      sample_rate = read_u32(buf.data() + body + 4);
      bits = read_u16(buf.data() + body + 14);
      if (format == 0xFFFE && chunk_len >= 40) {
        // WAVE_FORMAT_EXTENSIBLE: actual format is the first 2 bytes of the GUID
        format = read_u16(buf.data() + body + 24);
      }
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_pos = body;
      data_len = std::min<size_t>(chunk_len, buf.size() - body);
    }
    pos = body + chunk_len + (chunk_len & 1);
  }

  if (sample_rate == 0 || channels == 0)
    throw IoError("'" + path + "' has no fmt chunk");
  if (data_pos == 0) throw IoError("'" + path + "' has no data chunk");
  if (channels > 1)
    warn(path + ": " + std::to_string(channels) +
         " channels, using channel 0");

  const char* d = buf.data() + data_pos;
  const size_t bytes_per_sample = bits / 8;
  const size_t frame = bytes_per_sample * channels;
  if (frame == 0) throw IoError("'" + path + "' has zero frame size");
  const size_t n = data_len / frame;

  WavData out;
  out.sample_rate = static_cast<int>(sample_rate);
  out.channels = channels;
  out.samples.resize(n);

  if (format == 1 && bits == 16) {
    for (size_t i = 0; i < n; ++i) {
      int16_t v;
      std::memcpy(&v, d + i * frame, 2);
      out.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 1 && bits == 24) {
    for (size_t i = 0; i < n; ++i) {
      const unsigned char* p =
          reinterpret_cast<const unsigned char*>(d + i * frame);
      int32_t v = (p[0] << 8) | (p[1] << 16) | (p[2] << 24);
      out.samples[i] = static_cast<double>(v >> 8) / 8388608.0;
    }
  } else if (format == 1 && bits == 32) {
    for (size_t i = 0; i < n; ++i) {
      int32_t v;
      std::memcpy(&v, d + i * frame, 4);
      out.samples[i] = static_cast<double>(v) / 2147483648.0;
    }
  } else if (format == 3 && bits == 32) {
    for (size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, d + i * frame, 4);
      out.samples[i] = v;
    }
  } else if (format == 3 && bits == 64) {
    for (size_t i = 0; i < n; ++i)
      std::memcpy(&out.samples[i], d + i * frame, 8);
  } else {
    throw IoError("'" + path + "': unsupported format " +
                  std::to_string(format) + "/" + std::to_string(bits) + "bit");
  }
  return out;
}

void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");

  const uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
  const uint32_t riff_len = 36 + data_len;
  const uint16_t channels = 1, bits = 16, block = 2;
  const uint32_t byte_rate = static_cast<uint32_t>(sample_rate) * block;
  const uint16_t fmt = 1;
  const uint32_t fmt_len = 16;
  const uint32_t sr = static_cast<uint32_t>(sample_rate);

  f.write("RIFF", 4);
  f.write(reinterpret_cast<const char*>(&riff_len), 4);
  f.write("WAVEfmt ", 8);
  f.write(reinterpret_cast<const char*>(&fmt_len), 4);
  f.write(reinterpret_cast<const char*>(&fmt), 2);
  f.write(reinterpret_cast<const char*>(&channels), 2);
  f.write(reinterpret_cast<const char*>(&sr), 4);
  f.write(reinterpret_cast<const char*>(&byte_rate), 4);
  f.write(reinterpret_cast<const char*>(&block), 2);
  f.write(reinterpret_cast<const char*>(&bits), 2);
  f.write("data", 4);
  f.write(reinterpret_cast<const char*>(&data_len), 4);

  for (double s : samples) {
    double c = std::clamp(s, -1.0, 1.0);
    int16_t v = static_cast<int16_t>(std::lround(c * 32767.0));
    f.write(reinterpret_cast<const char*>(&v), 2);
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace lungsc

#pragma once

#include <string>
#include <vector>

namespace lungsc {

struct WavData {
  std::vector<double> samples;  // first channel, scaled to [-1, 1]
  int sample_rate = 0;
  int channels = 0;
};

// RIFF/WAVE reader for PCM 16/24/32 and IEEE float 32/64. Multi-channel
// files yield channel 0 with a warning.
WavData read_wav(const std::string& path);

// 16-bit PCM mono writer; samples are clipped to [-1, 1].
void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate);

}  // namespace lungsc

#include "dannet/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dannet/errors.hpp"

namespace dannet {

namespace {

uint32_t u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t u16le(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

void put_u32le(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back(static_cast<unsigned char>(x & 0xff));
  v.push_back(static_cast<unsigned char>((x >> 8) & 0xff));
  v.push_back(static_cast<unsigned char>((x >> 16) & 0xff));
  v.push_back(static_cast<unsigned char>((x >> 24) & 0xff));
}
void put_u16le(std::vector<unsigned char>& v, uint16_t x) {
  v.push_back(static_cast<unsigned char>(x & 0xff));
  v.push_back(static_cast<unsigned char>((x >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);

  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  bool have_fmt = false;
  size_t pos = 12;
  Waveform w;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const uint32_t size = u32le(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + size > bytes.size()) throw DataError("truncated chunk in wav file: " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw DataError("bad fmt chunk in " + path);
      const uint16_t format = u16le(bytes.data() + body);
      channels = u16le(bytes.data() + body + 2);
      sample_rate = static_cast<int>(u32le(bytes.data() + body + 4));
      bits = u16le(bytes.data() + body + 14);
      if (format != 1) throw DataError("wav is not PCM (format " + std::to_string(format) + "): " + path);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw DataError("data chunk before fmt in " + path);
      if (channels != 1 || bits != 16)
        throw DataError("expected 16-bit mono PCM, got " + std::to_string(bits) + "-bit " +
                        std::to_string(channels) + "ch: " + path);
      const size_t n = size / 2;
      w.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const int16_t s = static_cast<int16_t>(u16le(bytes.data() + body + 2 * i));
        w.samples[i] = std::clamp(static_cast<double>(s) / 32767.0, -1.0, 1.0);
      }
      w.sample_rate = sample_rate;
      return w;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }
  throw DataError("no data chunk in wav file: " + path);
}

void write_wav(const Waveform& w, const std::string& path) {
  if (w.sample_rate <= 0) throw DataError("wav sample rate must be positive");
  std::vector<unsigned char> bytes;
  const uint32_t data_size = static_cast<uint32_t>(w.samples.size() * 2);
  bytes.reserve(44 + data_size);
  bytes.insert(bytes.end(), {'R', 'I', 'F', 'F'});
  put_u32le(bytes, 36 + data_size);
  bytes.insert(bytes.end(), {'W', 'A', 'V', 'E'});
  bytes.insert(bytes.end(), {'f', 'm', 't', ' '});
  put_u32le(bytes, 16);
  put_u16le(bytes, 1);  // PCM
  put_u16le(bytes, 1);  // mono
  put_u32le(bytes, static_cast<uint32_t>(w.sample_rate));
  put_u32le(bytes, static_cast<uint32_t>(w.sample_rate * 2));
  put_u16le(bytes, 2);
  put_u16le(bytes, 16);
  bytes.insert(bytes.end(), {'d', 'a', 't', 'a'});
  put_u32le(bytes, data_size);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const int16_t q = static_cast<int16_t>(std::lrint(c * 32767.0));
    put_u16le(bytes, static_cast<uint16_t>(q));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open wav file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write on wav file: " + path);
}

}  // namespace dannet

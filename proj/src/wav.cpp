#include "avc/wav.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace avc::wav {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

// KSDATAFORMAT_SUBTYPE_IEEE_FLOAT and _PCM share this tail.
constexpr std::array<std::uint8_t, 14> kGuidTail{0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80,
                                                 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71};

template <typename T>
void put(std::vector<char>& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.insert(buf.end(), bytes, bytes + sizeof(T));
}

void put_tag(std::vector<char>& buf, const char* tag) { buf.insert(buf.end(), tag, tag + 4); }

template <typename T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

struct Parsed {
  WavInfo info;
  std::uint16_t block_align = 0;
  std::streamoff data_offset = 0;
};

Parsed parse_header(std::ifstream& in, const std::filesystem::path& path) {
  const std::string where = " in " + path.string();
  char riff[12];
  if (!in.read(riff, 12) || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(riff + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file" + where);

  Parsed p;
  bool have_fmt = false;
  char chunk[8];
  while (in.read(chunk, 8)) {
    const auto size = get<std::uint32_t>(chunk + 4);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw IoError("short fmt chunk" + where);
      std::vector<char> fmt(size);
      if (!in.read(fmt.data(), size)) throw IoError("truncated fmt chunk" + where);
      std::uint16_t tag = get<std::uint16_t>(fmt.data());
      p.info.channels = get<std::uint16_t>(fmt.data() + 2);
      p.info.sample_rate = get<std::uint32_t>(fmt.data() + 4);
      p.block_align = get<std::uint16_t>(fmt.data() + 12);
      const auto bits = get<std::uint16_t>(fmt.data() + 14);
      if (tag == kFormatExtensible) {
        if (size < 40) throw IoError("short extensible fmt chunk" + where);
        tag = get<std::uint16_t>(fmt.data() + 24);
        if (std::memcmp(fmt.data() + 26, kGuidTail.data(), kGuidTail.size()) != 0)
          throw IoError("unsupported extensible subformat" + where);
      }
      if (tag == kFormatFloat && bits == 32)
        p.info.format = SampleFormat::Float32;
      else if (tag == kFormatPcm && bits == 16)
        p.info.format = SampleFormat::Pcm16;
      else if (tag == kFormatPcm && bits == 24)
        p.info.format = SampleFormat::Pcm24;
      else if (tag == kFormatPcm && bits == 32)
        p.info.format = SampleFormat::Pcm32;
      else
        throw IoError("unsupported sample format (tag " + std::to_string(tag) + ", " +
                      std::to_string(bits) + " bits)" + where);
      if (p.info.channels == 0 || p.block_align != p.info.channels * (bits / 8))
        throw IoError("inconsistent fmt chunk" + where);
      if (size % 2) in.ignore(1);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw IoError("data chunk before fmt chunk" + where);
      p.data_offset = in.tellg();
      p.info.frames = size / p.block_align;
      return p;
    } else {
      in.seekg(size + (size % 2), std::ios::cur);
    }
  }
  throw IoError("no data chunk" + where);
}

}  // namespace

void write_float32(const std::filesystem::path& path, const MultichannelAudio& audio) {
  const std::size_t channels = audio.channel_count();
  const std::size_t frames = audio.frames();
  if (channels == 0 || channels > 0xFFFF) throw DomainError("wav: invalid channel count");
  for (const Waveform& ch : audio.channels)
    if (ch.size() != frames) throw DomainError("wav: channels differ in length");
  const std::uint64_t data_bytes = static_cast<std::uint64_t>(frames) * channels * 4;
  if (data_bytes > 0xFFFFFFFFull - 80) throw DomainError("wav: file too large for RIFF");

  std::vector<char> buf;
  buf.reserve(80 + data_bytes);
  const auto rate = static_cast<std::uint32_t>(std::lround(audio.sample_rate));
  const auto ch16 = static_cast<std::uint16_t>(channels);
  put_tag(buf, "RIFF");
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(4 + (8 + 40) + (8 + 4) + 8 + data_bytes));
  put_tag(buf, "WAVE");
  put_tag(buf, "fmt ");
  put<std::uint32_t>(buf, 40);
  put<std::uint16_t>(buf, kFormatExtensible);
  put<std::uint16_t>(buf, ch16);
  put<std::uint32_t>(buf, rate);
  put<std::uint32_t>(buf, rate * ch16 * 4);
  put<std::uint16_t>(buf, static_cast<std::uint16_t>(ch16 * 4));
  put<std::uint16_t>(buf, 32);
  put<std::uint16_t>(buf, 22);
  put<std::uint16_t>(buf, 32);  // valid bits
  put<std::uint32_t>(buf, 0);   // channel mask: unassigned
  put<std::uint16_t>(buf, kFormatFloat);
  buf.insert(buf.end(), kGuidTail.begin(), kGuidTail.end());
  put_tag(buf, "fact");
  put<std::uint32_t>(buf, 4);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(frames));
  put_tag(buf, "data");
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(data_bytes));
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t c = 0; c < channels; ++c) put<float>(buf, static_cast<float>(audio.channels[c][i]));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

WavInfo read_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_header(in, path).info;
}

MultichannelAudio read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const Parsed p = parse_header(in, path);
  std::vector<char> raw(static_cast<std::size_t>(p.info.frames) * p.block_align);
  in.seekg(p.data_offset);
  if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size())))
    throw IoError("truncated data chunk in " + path.string());

  MultichannelAudio audio(p.info.channels, static_cast<std::size_t>(p.info.frames), p.info.sample_rate);
  const std::size_t width = p.block_align / p.info.channels;
  for (std::size_t i = 0; i < audio.frames(); ++i)
    for (std::size_t c = 0; c < p.info.channels; ++c) {
      const char* s = raw.data() + i * p.block_align + c * width;
      double v = 0.0;
      switch (p.info.format) {
        case SampleFormat::Float32:
          v = get<float>(s);
          break;
        case SampleFormat::Pcm16:
          v = get<std::int16_t>(s) / 32768.0;
          break;
        case SampleFormat::Pcm24: {
          const std::int32_t x = (static_cast<std::int32_t>(static_cast<std::uint8_t>(s[0]))) |
                                 (static_cast<std::int32_t>(static_cast<std::uint8_t>(s[1])) << 8) |
                                 (static_cast<std::int32_t>(static_cast<std::int8_t>(s[2])) << 16);
          v = x / 8388608.0;
          break;
        }
        case SampleFormat::Pcm32:
          v = get<std::int32_t>(s) / 2147483648.0;
          break;
      }
      audio.channels[c][i] = v;
    }
  return audio;
}

}  // namespace avc::wav

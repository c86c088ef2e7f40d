#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string_view>

#include "fwm/photon_stream.hpp"

namespace fwm::stream {

namespace {

constexpr std::size_t kRecordBytes = 9;

bool ends_with_csv(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
}

// Both channels interleaved by time; signal first on equal timestamps.
std::vector<TimeTag> merge(const TimeTagStream& signal, const TimeTagStream& idler) {
  std::vector<TimeTag> all;
  all.reserve(signal.size() + idler.size());
  std::size_t i = 0, j = 0;
  while (i < signal.size() || j < idler.size()) {
    if (j == idler.size() || (i < signal.size() && signal[i].time_ps <= idler[j].time_ps))
      all.push_back({Channel::kSignal, signal[i++].time_ps});
    else
      all.push_back({Channel::kIdler, idler[j++].time_ps});
  }
  return all;
}

void route(std::pair<TimeTagStream, TimeTagStream>& out, unsigned channel, std::uint64_t t) {
  if (channel == 0)
    out.first.push_back({Channel::kSignal, t});
  else if (channel == 1)
    out.second.push_back({Channel::kIdler, t});
  else
    throw StreamError("time-tag record has unknown channel " + std::to_string(channel));
}

}  // namespace

std::vector<std::uint8_t> encode_tags(const TimeTagStream& signal, const TimeTagStream& idler) {
  const auto all = merge(signal, idler);
  std::vector<std::uint8_t> bytes;
  bytes.reserve(all.size() * kRecordBytes);
  for (const auto& tag : all) {
    bytes.push_back(static_cast<std::uint8_t>(tag.channel));
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(tag.time_ps >> (8 * b)));
  }
  return bytes;
}

std::pair<TimeTagStream, TimeTagStream> decode_tags(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kRecordBytes != 0)
    throw StreamError("time-tag file length is not a multiple of 9 bytes");
  std::pair<TimeTagStream, TimeTagStream> out;
  for (std::size_t off = 0; off < bytes.size(); off += kRecordBytes) {
    std::uint64_t t = 0;
    for (int b = 7; b >= 0; --b) t = (t << 8) | bytes[off + 1 + static_cast<std::size_t>(b)];
    route(out, bytes[off], t);
  }
  return out;
}

void write_tags(const std::string& path, const TimeTagStream& signal, const TimeTagStream& idler) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw StreamError("cannot open " + path + " for writing");
  if (ends_with_csv(path)) {
    f << "channel,time_ps\n";
    for (const auto& tag : merge(signal, idler))
      f << static_cast<unsigned>(tag.channel) << ',' << tag.time_ps << '\n';
  } else {
    const auto bytes = encode_tags(signal, idler);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (!f) throw StreamError("write failed for " + path);
}

std::pair<TimeTagStream, TimeTagStream> read_tags(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StreamError("cannot open " + path);
  if (!ends_with_csv(path)) {
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                          std::istreambuf_iterator<char>());
    return decode_tags(bytes);
  }

  std::pair<TimeTagStream, TimeTagStream> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("channel", 0) == 0)) continue;
    const auto comma = line.find(',');
    unsigned ch = 0;
    std::uint64_t t = 0;
    const std::string_view a(line.data(), comma == std::string::npos ? line.size() : comma);
    bool ok = comma != std::string::npos;
    if (ok) {
      const std::string_view b(line.data() + comma + 1, line.size() - comma - 1);
      ok = std::from_chars(a.data(), a.data() + a.size(), ch).ec == std::errc() &&
           std::from_chars(b.data(), b.data() + b.size(), t).ec == std::errc();
    }
    if (!ok) throw StreamError(path + ":" + std::to_string(lineno) + ": malformed record");
    route(out, ch, t);
  }
  return out;
}

}  // namespace fwm::stream

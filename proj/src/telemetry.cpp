#include "pestdet/telemetry.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

namespace pestdet {

std::int64_t saturate_count(std::int64_t n) {
  if (n < 0) throw std::out_of_range("negative count");
  return n > 255 ? 255 : n;
}

std::uint8_t crc8(std::span<const std::uint8_t> bytes) {
  std::uint8_t crc = 0;
  for (std::uint8_t b : bytes) {
    crc ^= b;
    for (int bit = 0; bit < 8; ++bit) {
      crc = static_cast<std::uint8_t>(crc & 0x80 ? (crc << 1) ^ 0x07 : crc << 1);
    }
  }
  return crc;
}

namespace {

void check_range(const char* field, std::int64_t value, std::int64_t max) {
  if (value < 0 || value > max) {
    throw std::out_of_range(std::string(field) + " " + std::to_string(value) + " outside [0, " +
                            std::to_string(max) + "]");
  }
}

}  // namespace

Payload encode(const TrapReport& r) {
  check_range("trap_id", r.trap_id, 0xFFFF);
  check_range("timestamp_minutes", r.timestamp_minutes, 0xFFFFFFFFLL);
  check_range("moth_count", r.moth_count, 255);
  check_range("insect_count", r.insect_count, 255);
  check_range("battery_soc_pct", r.battery_soc_pct, 100);

  Payload p{};
  p[0] = static_cast<std::uint8_t>(r.trap_id & 0xFF);
  p[1] = static_cast<std::uint8_t>(r.trap_id >> 8);
  p[2] = r.alert ? 1 : 0;
  p[3] = static_cast<std::uint8_t>(r.moth_count);
  p[4] = static_cast<std::uint8_t>(r.insect_count);
  p[5] = static_cast<std::uint8_t>(r.battery_soc_pct);
  for (int i = 0; i < 4; ++i) p[6 + i] = static_cast<std::uint8_t>(r.timestamp_minutes >> (8 * i));
  p[10] = crc8(std::span(p).first(10));
  return p;
}

TrapReport decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kPayloadSize) {
    throw PayloadLengthError("trap report must be " + std::to_string(kPayloadSize) + " bytes, got " +
                             std::to_string(bytes.size()));
  }
  if (crc8(bytes.first(10)) != bytes[10]) throw PayloadIntegrityError("trap report CRC mismatch");
  if (bytes[2] & 0xFE) throw PayloadIntegrityError("trap report has reserved flag bits set");
  if (bytes[5] > 100) throw PayloadIntegrityError("trap report battery level above 100%");

  TrapReport r;
  r.trap_id = bytes[0] | bytes[1] << 8;
  r.alert = bytes[2] & 1;
  r.moth_count = bytes[3];
  r.insect_count = bytes[4];
  r.battery_soc_pct = bytes[5];
  for (int i = 0; i < 4; ++i) r.timestamp_minutes |= static_cast<std::int64_t>(bytes[6 + i]) << (8 * i);
  return r;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (std::uint8_t b : bytes) {
    out += digits[b >> 4];
    out += digits[b & 0xF];
  }
  return out;
}

std::vector<std::uint8_t> from_hex(const std::string& text) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw FormatError(std::string("not a hex digit: '") + c + "'");
  };
  std::string digits;
  for (char c : text) {
    if (c != ' ') digits += c;
  }
  if (digits.size() % 2) throw FormatError("hex string has an odd number of digits");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < digits.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(nibble(digits[i]) << 4 | nibble(digits[i + 1])));
  }
  return out;
}

void write_payload(const Payload& payload, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<std::uint8_t> read_payload(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool alert_rule(const std::vector<MothCount>& history, std::int64_t window_minutes, std::int64_t threshold) {
  std::int64_t in_window = 0;
  std::size_t first = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i].count < 0) throw std::invalid_argument("negative moth count");
    if (i > 0 && history[i].timestamp_minutes < history[i - 1].timestamp_minutes) {
      throw std::invalid_argument("moth history timestamps must not decrease");
    }
    in_window += history[i].count;
    while (history[first].timestamp_minutes <= history[i].timestamp_minutes - window_minutes) {
      in_window -= history[first++].count;
    }
    if (in_window >= threshold) return true;
  }
  return false;
}

}  // namespace pestdet

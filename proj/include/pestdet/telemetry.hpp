#ifndef PESTDET_TELEMETRY_HPP
#define PESTDET_TELEMETRY_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pestdet/errors.hpp"

namespace pestdet {

/// Per-cycle result sent over the radio.
struct TrapReport {
  std::int64_t trap_id = 0;            // 0..65535
  std::int64_t timestamp_minutes = 0;  // minutes since the Unix epoch, 32-bit
  std::int64_t moth_count = 0;         // 0..255
  std::int64_t insect_count = 0;       // 0..255
  std::int64_t battery_soc_pct = 0;    // 0..100
  bool alert = false;

  bool operator==(const TrapReport&) const = default;
};

/// Counts above 255 are reported as 255.
std::int64_t saturate_count(std::int64_t n);

inline constexpr std::size_t kPayloadSize = 11;
using Payload = std::array<std::uint8_t, kPayloadSize>;

/// Decoding was given the wrong number of bytes.
class PayloadLengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// The checksum does not match, or a field holds an impossible value.
class PayloadIntegrityError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// CRC-8 with polynomial 0x07, zero initial value, no reflection, no final XOR.
std::uint8_t crc8(std::span<const std::uint8_t> bytes);

/// Little-endian layout: trap id (2), flags (1, bit 0 = alert), moths (1),
/// insects (1), SoC percent (1), timestamp (4), CRC-8 of the first ten bytes.
/// Throws std::out_of_range when a field does not fit.
Payload encode(const TrapReport& report);

/// Checks length, then CRC, then field ranges and reserved flag bits.
TrapReport decode(std::span<const std::uint8_t> bytes);

std::string to_hex(std::span<const std::uint8_t> bytes);  // lowercase, no separators
/// Accepts upper or lower case; spaces are ignored. Throws FormatError.
std::vector<std::uint8_t> from_hex(const std::string& text);

void write_payload(const Payload& payload, const std::filesystem::path& path);
std::vector<std::uint8_t> read_payload(const std::filesystem::path& path);

// --- treatment alert -------------------------------------------------------

struct MothCount {
  std::int64_t timestamp_minutes = 0;
  std::int64_t count = 0;
};

inline constexpr std::int64_t kAlertWindowMinutes = 7 * 24 * 60;
inline constexpr std::int64_t kAlertThreshold = 2;

/// True when some window (t - window, t] ending at a detection holds at least
/// `threshold` moths. Throws std::invalid_argument if timestamps decrease or
/// a count is negative.
bool alert_rule(const std::vector<MothCount>& history, std::int64_t window_minutes = kAlertWindowMinutes,
                std::int64_t threshold = kAlertThreshold);

}  // namespace pestdet

#endif  // PESTDET_TELEMETRY_HPP

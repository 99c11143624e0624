#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pillcase/error.hpp"

namespace pillcase {

/// Weight in grams with exactly one fractional digit, stored as tenths so
/// that the "xx.x" text form and the value can never drift apart.
class WeightReading {
public:
    static constexpr int max_tenths = 999;

    constexpr WeightReading() = default;

    static WeightReading from_tenths(int tenths) {
        if (tenths < 0 || tenths > max_tenths) {
            throw Error(ErrorCode::range, "weight out of range: " + std::to_string(tenths) + " tenths of a gram");
        }
        return WeightReading(tenths);
    }

    /// Strict conversion: rejects negatives, values above 99.9 and anything
    /// with more than one decimal place.
    static WeightReading from_grams(double grams) {
        if (!std::isfinite(grams)) {
            throw Error(ErrorCode::range, "weight is not finite");
        }
        const double scaled = grams * 10.0;
        const double nearest = std::round(scaled);
        if (std::abs(scaled - nearest) > 1e-6) {
            throw Error(ErrorCode::range, "weight has more than one decimal place: " + std::to_string(grams));
        }
        if (nearest < 0.0 || nearest > max_tenths) {
            throw Error(ErrorCode::range, "weight out of range [0.0, 99.9]: " + std::to_string(grams));
        }
        return WeightReading(static_cast<int>(nearest));
    }

    /// Sensor path: rounds half away from zero, then clamps to the
    /// representable range. Negative tare noise becomes 0.0.
    static WeightReading clamped(double grams) {
        if (std::isnan(grams)) {
            return WeightReading(0);
        }
        const double nearest = std::round(grams * 10.0);
        return WeightReading(static_cast<int>(std::clamp(nearest, 0.0, double(max_tenths))));
    }

    static WeightReading parse(std::string_view text) {
        if (text.size() != 4 || text[2] != '.') {
            throw Error(ErrorCode::range, "weight must look like \"xx.x\": " + std::string(text));
        }
        int tenths = 0;
        for (std::size_t i : {0u, 1u, 3u}) {
            if (text[i] < '0' || text[i] > '9') {
                throw Error(ErrorCode::range, "weight must look like \"xx.x\": " + std::string(text));
            }
            tenths = tenths * 10 + (text[i] - '0');
        }
        return WeightReading(tenths);
    }

    constexpr int tenths() const { return tenths_; }
    constexpr double grams() const { return tenths_ / 10.0; }

    /// Zero-padded fixed-width text, e.g. "03.9".
    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%02d.%d", tenths_ / 10, tenths_ % 10);
        return buf;
    }

    friend constexpr bool operator==(WeightReading, WeightReading) = default;
    friend constexpr auto operator<=>(WeightReading, WeightReading) = default;

private:
    constexpr explicit WeightReading(int tenths) : tenths_(tenths) {}
    int tenths_ = 0;
};

inline constexpr std::size_t block_size = 16;
using Block = std::array<std::uint8_t, block_size>;

namespace ndef {

// NDEF message TLV wrapping a single short well-known text record:
//   03 0B                 TLV type / length
//   D1 01 07 54           MB|ME|SR|TNF=1, type len 1, payload len 7, 'T'
//   02 65 6E              UTF-8, language length 2, "en"
//   d  d  2E d            weight text
//   FE                    terminator TLV
// Remaining bytes of the block are zero.
inline constexpr std::array<std::uint8_t, 9> header = {0x03, 0x0B, 0xD1, 0x01, 0x07, 0x54, 0x02, 0x65, 0x6E};
inline constexpr std::size_t payload_offset = header.size();
inline constexpr std::size_t payload_size = 4;
inline constexpr std::size_t dot_offset = payload_offset + 2;
inline constexpr std::size_t terminator_offset = payload_offset + payload_size;
inline constexpr std::uint8_t terminator = 0xFE;
inline constexpr std::size_t record_size = terminator_offset + 1;

static_assert(record_size == 14);
static_assert(record_size <= block_size);

/// Offsets holding weight digits (tens, units, tenths).
inline constexpr std::array<std::size_t, 3> digit_offsets = {payload_offset, payload_offset + 1, payload_offset + 3};

/// True for every byte offset that is fixed regardless of the weight.
constexpr bool is_framing_offset(std::size_t offset) {
    return std::find(digit_offsets.begin(), digit_offsets.end(), offset) == digit_offsets.end();
}

} // namespace ndef

/// Serialized record: the whole 16-byte data block.
struct NdefWeightRecord {
    Block bytes{};

    std::span<const std::uint8_t, ndef::payload_size> payload() const {
        return std::span<const std::uint8_t, ndef::payload_size>(bytes.data() + ndef::payload_offset, ndef::payload_size);
    }
};

inline NdefWeightRecord encode_weight(WeightReading w) {
    NdefWeightRecord rec;
    std::copy(ndef::header.begin(), ndef::header.end(), rec.bytes.begin());
    const std::string text = w.str();
    std::copy(text.begin(), text.end(), rec.bytes.begin() + ndef::payload_offset);
    rec.bytes[ndef::terminator_offset] = ndef::terminator;
    return rec;
}

inline NdefWeightRecord encode_weight(double grams) {
    return encode_weight(WeightReading::from_grams(grams));
}

/// Strict decode: every framing byte, the dot and the zero padding must
/// match, so a successful decode always re-encodes to the same block.
inline WeightReading decode_record(std::span<const std::uint8_t> block) {
    if (block.size() != block_size) {
        throw Error(ErrorCode::parse, "data block must be 16 bytes, got " + std::to_string(block.size()),
                    std::min(block.size(), block_size));
    }
    const NdefWeightRecord golden = encode_weight(WeightReading{});
    for (std::size_t i = 0; i < block_size; ++i) {
        if (ndef::is_framing_offset(i) && block[i] != golden.bytes[i]) {
            char msg[64];
            std::snprintf(msg, sizeof msg, "bad framing byte 0x%02X at offset %zu", block[i], i);
            throw Error(ErrorCode::parse, msg, i);
        }
    }
    // Value1 x 10 + Value2 + Value3 x 0.1, kept in integer tenths.
    int tenths = 0;
    for (std::size_t off : ndef::digit_offsets) {
        const std::uint8_t b = block[off];
        if (b < '0' || b > '9') {
            char msg[64];
            std::snprintf(msg, sizeof msg, "non-digit payload byte 0x%02X at offset %zu", b, off);
            throw Error(ErrorCode::payload, msg, off);
        }
        tenths = tenths * 10 + (b - '0');
    }
    return WeightReading::from_tenths(tenths);
}

/// Block-addressed tag storage. Block 4 (the first data block of a
/// MIFARE Classic sector 1) carries the weight record by default.
class TagMemory {
public:
    static constexpr std::size_t default_block_count = 16;
    static constexpr std::size_t default_data_block = 4;

    explicit TagMemory(std::size_t block_count = default_block_count, std::size_t data_block_index = default_data_block)
        : blocks_(block_count), data_block_(data_block_index) {
        if (data_block_index >= block_count) {
            throw Error(ErrorCode::invalid_argument, "data block index outside tag memory");
        }
    }

    std::size_t block_count() const { return blocks_.size(); }
    std::size_t data_block_index() const { return data_block_; }

    const Block& block(std::size_t index) const { return blocks_.at(index); }
    Block& block(std::size_t index) { return blocks_.at(index); }
    const Block& data_block() const { return blocks_[data_block_]; }

    /// Blank means the data block was never written (all zero).
    bool blank() const {
        const Block& b = data_block();
        return std::all_of(b.begin(), b.end(), [](std::uint8_t v) { return v == 0; });
    }

    const std::vector<Block>& blocks() const { return blocks_; }

    friend bool operator==(const TagMemory&, const TagMemory&) = default;

private:
    std::vector<Block> blocks_;
    std::size_t data_block_;
};

inline TagMemory write_tag(TagMemory mem, WeightReading w) {
    const std::size_t index = mem.data_block_index();
    mem.block(index) = encode_weight(w).bytes;
    return mem;
}

inline WeightReading read_tag(const TagMemory& mem) {
    if (mem.blank()) {
        throw Error(ErrorCode::empty_tag, "tag holds no weight record");
    }
    return decode_record(mem.data_block());
}

// Hex dump format: one block per line, 32 uppercase hex characters.

inline std::string to_hex_line(std::span<const std::uint8_t> block) {
    static constexpr char digits[] = "0123456789ABCDEF";
    std::string out;
    out.reserve(block.size() * 2);
    for (std::uint8_t b : block) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0F]);
    }
    return out;
}

inline std::string to_hex_dump(const TagMemory& mem) {
    std::string out;
    for (const Block& b : mem.blocks()) {
        out += to_hex_line(b);
        out += '\n';
    }
    return out;
}

/// Parses a hex dump; blank lines and lines starting with '#' are skipped.
inline std::vector<Block> parse_hex_dump(std::string_view text) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
    };
    std::vector<Block> blocks;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (line.size() != block_size * 2) {
            throw Error(ErrorCode::parse, "hex dump line " + std::to_string(line_no) + ": expected 32 hex characters");
        }
        Block b{};
        for (std::size_t i = 0; i < block_size; ++i) {
            const int hi = nibble(line[2 * i]);
            const int lo = nibble(line[2 * i + 1]);
            if (hi < 0 || lo < 0) {
                throw Error(ErrorCode::parse, "hex dump line " + std::to_string(line_no) + ": invalid hex digit");
            }
            b[i] = static_cast<std::uint8_t>(hi << 4 | lo);
        }
        blocks.push_back(b);
    }
    return blocks;
}

} // namespace pillcase

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rodent/types.hpp"

namespace rodent {

class codec_error : public std::runtime_error {
public:
    explicit codec_error(const std::string& m) : std::runtime_error(m) {}
};

using byte_buffer = std::vector<std::uint8_t>;

// --- primitive little-endian / varint encoding --------------------------------

void put_u16(byte_buffer& out, std::uint16_t v);
void put_u32(byte_buffer& out, std::uint32_t v);
void put_u64(byte_buffer& out, std::uint64_t v);
void put_f64(byte_buffer& out, double v);
void put_varint(byte_buffer& out, std::uint64_t v);
void put_string(byte_buffer& out, const std::string& s);

std::uint64_t zigzag_encode(std::int64_t v);
std::int64_t zigzag_decode(std::uint64_t v);

/// Sequential reader over a byte span; throws codec_error on truncation.
class byte_reader {
public:
    byte_reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit byte_reader(std::span<const std::uint8_t> s) : data_(s.data()), size_(s.size()) {}

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }
    bool done() const { return pos_ >= size_; }
    void skip(std::size_t n);

    std::uint8_t get_u8();
    std::uint16_t get_u16();
    std::uint32_t get_u32();
    std::uint64_t get_u64();
    double get_f64();
    std::uint64_t get_varint();
    std::string get_string();

private:
    void need(std::size_t n) const;
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

// --- storage element types ------------------------------------------------------

/// Runtime type of one stored entry: a scalar, a fixed-arity record of
/// scalars, or a variable-length list of a uniform element type.
struct stype {
    enum class t_kind : std::uint8_t { scalar, record, list };
    t_kind kind = t_kind::scalar;
    scalar_kind sc = scalar_kind::int64;      // scalar
    std::vector<scalar_kind> fields;          // record
    std::shared_ptr<stype> element;           // list

    static stype scalar(scalar_kind k);
    static stype record(std::vector<scalar_kind> fields);
    static stype list_of(stype element);

    /// Fixed on-disk width, or 0 when variable (strings or lists involved).
    std::size_t fixed_width() const;

    bool operator==(const stype& other) const;
};

// --- value encoding ---------------------------------------------------------------
//
// Untagged encoding: Int = 8 bytes LE two's complement; Float = 8 bytes IEEE
// 754 LE; Str = varint byte length then bytes; nesting = varint child count
// then children.

void encode_value(const value& v, byte_buffer& out);
byte_buffer encode_value(const value& v);

/// Typed decode against a type tree (fixed-arity nestings).
value decode_value(byte_reader& in, const nested_type& t);
value decode_value(std::span<const std::uint8_t> bytes, const nested_type& t);

/// Typed decode against a storage element type (handles dynamic lists).
value decode_entry(byte_reader& in, const stype& t);

/// Self-describing encoding used by blob segments: one tag byte per node.
void encode_tagged(const value& v, byte_buffer& out);
value decode_tagged(byte_reader& in);

// --- delta fixed-point blocks -------------------------------------------------------
//
// Numeric lists stored as zigzag varints of consecutive differences. Floats
// are scaled to 1e-6 fixed point first, so decoding is exact on that lattice
// and within 5e-7 otherwise.

inline constexpr double k_fixed_point_scale = 1e6;

std::int64_t to_fixed_point(const value& v, scalar_kind k);
value from_fixed_point(std::int64_t raw, scalar_kind k);

/// Writes deltas of the scaled values; `with_count` prefixes a varint length.
void encode_delta_block(const std::vector<value>& items, scalar_kind k, bool with_count,
                        byte_buffer& out);
std::vector<value> decode_delta_block(byte_reader& in, scalar_kind k, std::uint64_t count);
std::vector<value> decode_delta_block(byte_reader& in, scalar_kind k);  // with_count form

}  // namespace rodent

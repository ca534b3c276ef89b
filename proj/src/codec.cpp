#include "rodent/codec.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace rodent {

void put_u16(byte_buffer& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(byte_buffer& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(byte_buffer& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(byte_buffer& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_varint(byte_buffer& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<std::uint8_t>(v) | 0x80u);
        v >>= 7;
    }
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_string(byte_buffer& out, const std::string& s) {
    put_varint(out, s.size());
    out.insert(out.end(), s.begin(), s.end());
}

std::uint64_t zigzag_encode(std::int64_t v) {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}

std::int64_t zigzag_decode(std::uint64_t v) {
    return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1);
}

void byte_reader::need(std::size_t n) const {
    if (pos_ + n > size_) throw codec_error("truncated input");
}

void byte_reader::skip(std::size_t n) {
    need(n);
    pos_ += n;
}

std::uint8_t byte_reader::get_u8() {
    need(1);
    return data_[pos_++];
}

std::uint16_t byte_reader::get_u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(static_cast<std::uint16_t>(data_[pos_]) |
                                                 static_cast<std::uint16_t>(data_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
}

std::uint32_t byte_reader::get_u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t byte_reader::get_u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}

double byte_reader::get_f64() { return std::bit_cast<double>(get_u64()); }

std::uint64_t byte_reader::get_varint() {
    std::uint64_t v = 0;
    int shift = 0;
    for (;;) {
        std::uint8_t b = get_u8();
        if (shift == 63 && (b & 0x7Fu) > 1) throw codec_error("varint overflow");
        v |= static_cast<std::uint64_t>(b & 0x7Fu) << shift;
        if (!(b & 0x80u)) return v;
        shift += 7;
        if (shift > 63) throw codec_error("varint overflow");
    }
}

std::string byte_reader::get_string() {
    std::uint64_t len = get_varint();
    need(len);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
}

// --- stype -----------------------------------------------------------------------

stype stype::scalar(scalar_kind k) {
    stype t;
    t.kind = t_kind::scalar;
    t.sc = k;
    return t;
}

stype stype::record(std::vector<scalar_kind> fields) {
    stype t;
    t.kind = t_kind::record;
    t.fields = std::move(fields);
    return t;
}

stype stype::list_of(stype element) {
    stype t;
    t.kind = t_kind::list;
    t.element = std::make_shared<stype>(std::move(element));
    return t;
}

std::size_t stype::fixed_width() const {
    switch (kind) {
        case t_kind::scalar:
            return sc == scalar_kind::str ? 0 : 8;
        case t_kind::record: {
            std::size_t w = 0;
            for (auto f : fields) {
                if (f == scalar_kind::str) return 0;
                w += 8;
            }
            // The varint arity prefix; record widths are small enough for one byte.
            byte_buffer tmp;
            put_varint(tmp, fields.size());
            return w + tmp.size();
        }
        case t_kind::list:
            return 0;
    }
    return 0;
}

bool stype::operator==(const stype& other) const {
    if (kind != other.kind) return false;
    switch (kind) {
        case t_kind::scalar: return sc == other.sc;
        case t_kind::record: return fields == other.fields;
        case t_kind::list: return *element == *other.element;
    }
    return false;
}

// --- value encoding -----------------------------------------------------------------

void encode_value(const value& v, byte_buffer& out) {
    if (v.is_int()) {
        put_u64(out, static_cast<std::uint64_t>(v.as_int()));
    } else if (v.is_float()) {
        put_f64(out, v.as_float());
    } else if (v.is_str()) {
        put_string(out, v.as_str());
    } else {
        put_varint(out, v.size());
        for (const auto& c : v.children()) encode_value(c, out);
    }
}

byte_buffer encode_value(const value& v) {
    byte_buffer out;
    encode_value(v, out);
    return out;
}

namespace {

value decode_scalar(byte_reader& in, scalar_kind k) {
    switch (k) {
        case scalar_kind::int64:
            return value(static_cast<std::int64_t>(in.get_u64()));
        case scalar_kind::float64:
            return value(in.get_f64());
        case scalar_kind::str:
            return value(in.get_string());
    }
    throw codec_error("bad scalar kind");
}

}  // namespace

value decode_value(byte_reader& in, const nested_type& t) {
    switch (t.kind()) {
        case nested_type::node_kind::scalar:
            return decode_scalar(in, t.scalar_type());
        case nested_type::node_kind::labeled:
            return decode_value(in, t.inner());
        case nested_type::node_kind::nesting: {
            std::uint64_t count = in.get_varint();
            if (count != t.children().size())
                throw codec_error("nesting arity mismatch: stored " + std::to_string(count) +
                                  ", type " + std::to_string(t.children().size()));
            value::list kids;
            kids.reserve(count);
            for (const auto& ct : t.children()) kids.push_back(decode_value(in, ct));
            return value(std::move(kids));
        }
    }
    throw codec_error("bad type node");
}

value decode_value(std::span<const std::uint8_t> bytes, const nested_type& t) {
    byte_reader in(bytes);
    value v = decode_value(in, t);
    if (!in.done()) throw codec_error("trailing bytes after value");
    return v;
}

value decode_entry(byte_reader& in, const stype& t) {
    switch (t.kind) {
        case stype::t_kind::scalar:
            return decode_scalar(in, t.sc);
        case stype::t_kind::record: {
            std::uint64_t count = in.get_varint();
            if (count != t.fields.size()) throw codec_error("record arity mismatch");
            value::list kids;
            kids.reserve(count);
            for (auto f : t.fields) kids.push_back(decode_scalar(in, f));
            return value(std::move(kids));
        }
        case stype::t_kind::list: {
            std::uint64_t count = in.get_varint();
            value::list kids;
            kids.reserve(count);
            for (std::uint64_t i = 0; i < count; ++i)
                kids.push_back(decode_entry(in, *t.element));
            return value(std::move(kids));
        }
    }
    throw codec_error("bad stype node");
}

void encode_tagged(const value& v, byte_buffer& out) {
    if (v.is_int()) {
        out.push_back(0);
        put_u64(out, static_cast<std::uint64_t>(v.as_int()));
    } else if (v.is_float()) {
        out.push_back(1);
        put_f64(out, v.as_float());
    } else if (v.is_str()) {
        out.push_back(2);
        put_string(out, v.as_str());
    } else {
        out.push_back(3);
        put_varint(out, v.size());
        for (const auto& c : v.children()) encode_tagged(c, out);
    }
}

value decode_tagged(byte_reader& in) {
    std::uint8_t tag = in.get_u8();
    switch (tag) {
        case 0: return value(static_cast<std::int64_t>(in.get_u64()));
        case 1: return value(in.get_f64());
        case 2: return value(in.get_string());
        case 3: {
            std::uint64_t count = in.get_varint();
            value::list kids;
            kids.reserve(count);
            for (std::uint64_t i = 0; i < count; ++i) kids.push_back(decode_tagged(in));
            return value(std::move(kids));
        }
    }
    throw codec_error("bad value tag");
}

// --- delta fixed-point ---------------------------------------------------------------

std::int64_t to_fixed_point(const value& v, scalar_kind k) {
    if (k == scalar_kind::int64) return v.as_int();
    return std::llround(v.as_float() * k_fixed_point_scale);
}

value from_fixed_point(std::int64_t raw, scalar_kind k) {
    if (k == scalar_kind::int64) return value(raw);
    return value(static_cast<double>(raw) / k_fixed_point_scale);
}

void encode_delta_block(const std::vector<value>& items, scalar_kind k, bool with_count,
                        byte_buffer& out) {
    if (with_count) put_varint(out, items.size());
    std::int64_t prev = 0;
    for (const auto& v : items) {
        std::int64_t raw = to_fixed_point(v, k);
        put_varint(out, zigzag_encode(raw - prev));
        prev = raw;
    }
}

std::vector<value> decode_delta_block(byte_reader& in, scalar_kind k, std::uint64_t count) {
    std::vector<value> out;
    out.reserve(count);
    std::int64_t prev = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        prev += zigzag_decode(in.get_varint());
        out.push_back(from_fixed_point(prev, k));
    }
    return out;
}

std::vector<value> decode_delta_block(byte_reader& in, scalar_kind k) {
    return decode_delta_block(in, k, in.get_varint());
}

}  // namespace rodent

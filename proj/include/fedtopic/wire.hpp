// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0
//
// Canonical little-endian byte encoding shared by the network frames and
// the checkpoint file format. Integers are fixed-width LE, reals IEEE-754
// f64 LE, strings u16 byte length + UTF-8, arrays u64 count + elements.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "fedtopic/errors.hpp"

namespace fedtopic {

class ByteWriter {
public:
    void put_u8(std::uint8_t v) { buf_.push_back(v); }
    void put_u16(std::uint16_t v) { put_le(v, 2); }
    void put_u32(std::uint32_t v) { put_le(v, 4); }
    void put_u64(std::uint64_t v) { put_le(v, 8); }
    void put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }

    void put_string(const std::string& s) {
        if (s.size() > 0xffff) throw TransportError("string too long to encode");
        put_u16(static_cast<std::uint16_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void put_f64_array(const std::vector<double>& a) {
        put_u64(a.size());
        for (double v : a) put_f64(v);
    }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void put_le(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) {
            buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
        }
    }

    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<std::uint8_t>& buf) : ByteReader(buf.data(), buf.size()) {}

    std::uint8_t get_u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t get_u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t get_u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t get_u64() { return get_le(8); }
    double get_f64() { return std::bit_cast<double>(get_u64()); }

    std::string get_string() {
        std::size_t len = get_u16();
        need(len);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
        pos_ += len;
        if (!valid_utf8(s)) throw TransportError("invalid UTF-8 in encoded string");
        return s;
    }

    std::vector<double> get_f64_array() {
        std::uint64_t count = get_u64();
        if (count > size_ - pos_) throw TransportError("truncated payload: array length exceeds frame");
        std::vector<double> a(static_cast<std::size_t>(count));
        for (auto& v : a) v = get_f64();
        return a;
    }

    std::size_t remaining() const { return size_ - pos_; }

    void expect_end() const {
        if (pos_ != size_) throw TransportError("payload length mismatch: trailing bytes");
    }

    static bool valid_utf8(const std::string& s);

private:
    void need(std::size_t n) const {
        if (size_ - pos_ < n) throw TransportError("truncated payload");
    }

    std::uint64_t get_le(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

} // namespace fedtopic

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cil/errors.hpp"

namespace cil {

// Little-endian binary encoding helpers for the on-disk containers.
class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void magic(const char tag[4]) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(tag[i]));
    }

    const std::vector<uint8_t>& bytes() const { return buf_; }

    void to_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) fail(errc::state, "cannot open " + path + " for writing");
        out.write(reinterpret_cast<const char*>(buf_.data()),
                  static_cast<std::streamsize>(buf_.size()));
        if (!out) fail(errc::state, "write failed for " + path);
    }

private:
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<uint8_t> bytes) : buf_(std::move(bytes)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) fail(errc::parse, "cannot open " + path, 0);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
        return ByteReader(std::move(bytes));
    }

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == buf_.size(); }

    uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void expect_magic(const char tag[4], const std::string& what) {
        need(4);
        for (int i = 0; i < 4; ++i)
            if (buf_[pos_ + i] != static_cast<uint8_t>(tag[i]))
                fail(errc::parse, "bad magic for " + what, pos_);
        pos_ += 4;
    }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size())
            fail(errc::parse, "truncated input: need " + std::to_string(n) + " bytes", pos_);
    }
    std::vector<uint8_t> buf_;
    std::size_t pos_ = 0;
};

}  // namespace cil

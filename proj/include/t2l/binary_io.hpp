#pragma once

// Little-endian binary container shared by the adapter (T2LA), hypernet (T2LH)
// and base-model (T2LM) checkpoint files.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "t2l/error.hpp"

namespace t2l::io {

inline constexpr std::uint32_t kFormatVersion = 1;

class BinaryWriter {
   public:
    explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw InputError("cannot open '" + path + "' for writing");
    }

    void magic(const char (&tag)[5]) { out_.write(tag, 4); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void f64s(const std::vector<double>& v) {
        for (double x : v) f64(x);
    }

    void finish() {
        out_.flush();
        if (!out_) throw InputError("write to '" + path_ + "' failed");
    }

   private:
    template <typename U>
    void put(U v) {
        std::array<char, sizeof(U)> b{};
        for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(b.data(), b.size());
    }

    std::string path_;
    std::ofstream out_;
};

class BinaryReader {
   public:
    explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw InputError("cannot open '" + path + "' for reading");
    }

    /// Checks the 4-byte tag and the format version.
    void expect_header(const char (&tag)[5]) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, tag, 4) != 0)
            throw BadMagicError("'" + path_ + "': expected magic '" + std::string(tag, 4) + "', found '" +
                                std::string(got, 4) + "'");
        const std::uint32_t v = u32();
        if (v != kFormatVersion)
            throw VersionError("'" + path_ + "': format version " + std::to_string(v) + ", reader supports " +
                               std::to_string(kFormatVersion));
    }

    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > (1u << 24)) throw TruncatedFileError("'" + path_ + "': implausible string length");
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::vector<double> f64s(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
    const std::string& path() const { return path_; }

   private:
    void raw(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw TruncatedFileError("'" + path_ + "': truncated file");
    }
    template <typename U>
    U get() {
        std::array<unsigned char, sizeof(U)> b{};
        raw(reinterpret_cast<char*>(b.data()), b.size());
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
        return v;
    }

    std::string path_;
    std::ifstream in_;
};

}  // namespace t2l::io

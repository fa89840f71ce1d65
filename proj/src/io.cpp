#include "qfv/io.hpp"

#include <bit>
#include <cstring>

#include "qfv/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts need byte swaps");

namespace qfv {

void BinaryWriter::u32(uint32_t v) { raw(&v, sizeof v); }
void BinaryWriter::u64(uint64_t v) { raw(&v, sizeof v); }
void BinaryWriter::f64(double v) { raw(&v, sizeof v); }

void BinaryWriter::f64_array(std::span<const double> v) {
    raw(v.data(), v.size() * sizeof(double));
}

void BinaryWriter::str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
}

void BinaryWriter::raw(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
}

void BinaryWriter::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf_.data()),
              static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed: " + path);
}

BinaryReader BinaryReader::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open for reading: " + path);
    auto size = static_cast<size_t>(in.tellg());
    in.seekg(0);
    std::vector<uint8_t> data(size);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
    if (!in) throw IoError("read failed: " + path);
    return BinaryReader(std::move(data));
}

void BinaryReader::need(size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("truncated file: need " + std::to_string(n) +
                                                  " bytes at offset " + std::to_string(pos_));
}

uint32_t BinaryReader::u32() {
    uint32_t v;
    raw(&v, sizeof v);
    return v;
}

uint64_t BinaryReader::u64() {
    uint64_t v;
    raw(&v, sizeof v);
    return v;
}

double BinaryReader::f64() {
    double v;
    raw(&v, sizeof v);
    return v;
}

void BinaryReader::f64_array(std::span<double> out) {
    raw(out.data(), out.size() * sizeof(double));
}

std::string BinaryReader::str() {
    uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
}

void BinaryReader::raw(void* out, size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
}

}  // namespace qfv

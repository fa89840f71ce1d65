#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace qfv {

/// Little-endian binary writer over a whole-file buffer; flushed on save().
class BinaryWriter {
public:
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f64(double v);
    void f64_array(std::span<const double> v);
    void str(const std::string& s);
    void raw(const void* data, size_t n);

    const std::vector<uint8_t>& buffer() const { return buf_; }
    void save(const std::string& path) const;

private:
    std::vector<uint8_t> buf_;
};

/// Little-endian reader with truncation checks.
class BinaryReader {
public:
    explicit BinaryReader(std::vector<uint8_t> data) : buf_(std::move(data)) {}
    static BinaryReader from_file(const std::string& path);

    uint32_t u32();
    uint64_t u64();
    double f64();
    void f64_array(std::span<double> out);
    std::string str();
    void raw(void* out, size_t n);
    bool at_end() const { return pos_ == buf_.size(); }
    size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(size_t n) const;
    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
};

}  // namespace qfv

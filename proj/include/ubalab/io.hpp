#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ubalab/tensor.hpp"

namespace uba {

// Malformed or truncated UBDS file. `offset` is the byte position at which
// the problem was detected.
struct FormatError : std::runtime_error {
  size_t offset;
  FormatError(const std::string& msg, size_t off)
      : std::runtime_error(msg + " (at byte offset " + std::to_string(off) + ")"),
        offset(off) {}
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// UBDS binary container. One format family for datasets, checkpoints and
// trigger sets:
//
//   header:  magic "UBDS" | u8 version (=1) | u8 kind
//   kinds:   0 tensor      header then one tensor record body
//            1 dataset     tensor record body (images, rank 4) |
//                          u32 label_count | u32 labels[] |
//                          u32 class_count | u8 split tag
//            2 checkpoint  u32 tensor_count | tensor_count entries of
//                          (u16 name_len | name bytes | tensor record body)
//
//   tensor record body: u32 rank | u32 dims[rank] | f32 payload
//
// All integers and floats are little-endian. Payload is row-major float32.
// ---------------------------------------------------------------------------

enum : uint8_t { kUbdsTensor = 0, kUbdsDataset = 1, kUbdsCheckpoint = 2 };

// Low-level cursors used by the typed savers/loaders here and in dataset.hpp.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    buf_.push_back(static_cast<uint8_t>(v & 0xff));
    buf_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f32(float v);
  void bytes(const void* p, size_t n);
  void str(const std::string& s) {
    if (s.size() > 0xffff) throw IoError("name too long for checkpoint entry");
    u16(static_cast<uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<uint8_t> buf) : buf_(std::move(buf)) {}
  size_t offset() const { return pos_; }
  size_t remaining() const { return buf_.size() - pos_; }
  bool at_end() const { return pos_ == buf_.size(); }
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  void f32_block(float* out, size_t count);
  std::string str();
  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(msg, pos_); }

 private:
  void need(size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("unexpected end of file", pos_);
  }
  std::vector<uint8_t> buf_;
  size_t pos_ = 0;
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
uint64_t file_fnv1a64(const std::string& path);

// Tensor record body (no magic/kind header); shared by all kinds.
void write_tensor_body(ByteWriter& w, const Tensor& t);
Tensor read_tensor_body(ByteReader& r);

void write_ubds_header(ByteWriter& w, uint8_t kind);
// Checks magic + version, returns the kind byte.
uint8_t read_ubds_header(ByteReader& r);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace uba

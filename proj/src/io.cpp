#include "ubalab/io.hpp"

#include <cstring>
#include <fstream>

#include "ubalab/rng.hpp"

namespace uba {

void ByteWriter::f32(float v) {
  static_assert(sizeof(float) == 4);
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  u32(bits);
}

void ByteWriter::bytes(const void* p, size_t n) {
  const uint8_t* b = static_cast<const uint8_t*>(p);
  buf_.insert(buf_.end(), b, b + n);
}

uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

uint16_t ByteReader::u16() {
  need(2);
  uint16_t v = static_cast<uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

uint32_t ByteReader::u32() {
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf_[pos_ + static_cast<size_t>(i)]) << (8 * i);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::u64() {
  need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf_[pos_ + static_cast<size_t>(i)]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() {
  uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void ByteReader::f32_block(float* out, size_t count) {
  need(count * 4);
  // Little-endian host shortcut would be a straight memcpy; decode per
  // element so the format stays well-defined regardless of host order.
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<uint32_t>(buf_[pos_ + i * 4 + static_cast<size_t>(b)]) << (8 * b);
    std::memcpy(&out[i], &bits, 4);
  }
  pos_ += count * 4;
}

std::string ByteReader::str() {
  uint16_t n = u16();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file for reading: " + path);
  f.seekg(0, std::ios::end);
  std::streamoff len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw IoError("read failed: " + path);
  return buf;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open file for writing: " + path);
  if (!bytes.empty()) f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open file for writing: " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

uint64_t file_fnv1a64(const std::string& path) {
  auto bytes = read_file(path);
  return fnv1a64(bytes.data(), bytes.size());
}

void write_tensor_body(ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) w.u32(static_cast<uint32_t>(d));
  for (float v : t.data) w.f32(v);
}

Tensor read_tensor_body(ByteReader& r) {
  uint32_t rank = r.u32();
  if (rank > 8) r.fail("tensor rank " + std::to_string(rank) + " out of range");
  Shape shape(rank);
  int64_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = r.u32();
    if (d > (1u << 28)) r.fail("tensor dimension out of range");
    shape[i] = static_cast<int>(d);
    numel *= d;
  }
  Tensor t;
  t.shape = std::move(shape);
  t.data.resize(static_cast<size_t>(numel));
  r.f32_block(t.data.data(), t.data.size());
  return t;
}

void write_ubds_header(ByteWriter& w, uint8_t kind) {
  w.bytes("UBDS", 4);
  w.u8(1);  // version
  w.u8(kind);
}

uint8_t read_ubds_header(ByteReader& r) {
  if (r.remaining() < 4) r.fail("file too short for UBDS magic");
  char magic[4];
  for (auto& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, "UBDS", 4) != 0) throw FormatError("bad magic, not a UBDS file", 0);
  uint8_t version = r.u8();
  if (version != 1) r.fail("unsupported UBDS version " + std::to_string(version));
  return r.u8();
}

void save_tensor(const std::string& path, const Tensor& t) {
  ByteWriter w;
  write_ubds_header(w, kUbdsTensor);
  write_tensor_body(w, t);
  write_file(path, w.buffer());
}

Tensor load_tensor(const std::string& path) {
  ByteReader r(read_file(path));
  uint8_t kind = read_ubds_header(r);
  if (kind != kUbdsTensor) r.fail("expected tensor record, got kind " + std::to_string(kind));
  Tensor t = read_tensor_body(r);
  if (!r.at_end()) r.fail("trailing bytes after tensor payload");
  return t;
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  ByteWriter w;
  write_ubds_header(w, kUbdsCheckpoint);
  w.u32(static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    write_tensor_body(w, t);
  }
  write_file(path, w.buffer());
}

NamedTensors load_checkpoint(const std::string& path) {
  ByteReader r(read_file(path));
  uint8_t kind = read_ubds_header(r);
  if (kind != kUbdsCheckpoint) r.fail("expected checkpoint, got kind " + std::to_string(kind));
  uint32_t count = r.u32();
  if (count > 4096) r.fail("checkpoint tensor count out of range");
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    out.emplace_back(std::move(name), read_tensor_body(r));
  }
  if (!r.at_end()) r.fail("trailing bytes after checkpoint payload");
  return out;
}

}  // namespace uba

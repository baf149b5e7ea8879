#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cks/server.hpp"

namespace cks {

namespace detail {

inline std::uint32_t crc32(const std::vector<char>& data) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xffffffffu;
  for (char ch : data)
    c = table[(c ^ static_cast<unsigned char>(ch)) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

class ByteWriter {
 public:
  std::vector<char> bytes;

  void u8(std::uint8_t v) { bytes.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void matrix(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  void vector(const Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data) : bytes_(std::move(data)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  Matrix matrix() {
    auto rows = static_cast<Eigen::Index>(u64());
    auto cols = static_cast<Eigen::Index>(u64());
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f64();
    return m;
  }
  Vector vector() {
    auto n = static_cast<Eigen::Index>(u64());
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = f64();
    return v;
  }
  std::string str() {
    auto n = u64();
    const char* p = take(n);
    return std::string(p, p + n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const char* take(std::uint64_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

inline void write_model(ByteWriter& w, const ModelParams& m) {
  w.u8(static_cast<std::uint8_t>(m.role));
  w.u32(static_cast<std::uint32_t>(m.layers.size()));
  for (const Layer& l : m.layers) {
    w.u8(static_cast<std::uint8_t>(l.act));
    w.matrix(l.weight);
    w.vector(l.bias);
  }
}

inline ModelParams read_model(ByteReader& r) {
  ModelParams m;
  m.role = static_cast<ModelRole>(r.u8());
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Layer l;
    l.act = static_cast<Activation>(r.u8());
    l.weight = r.matrix();
    l.bias = r.vector();
    m.layers.push_back(std::move(l));
  }
  return m;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointMagic = 0x43534b43u;  // "CKSC"
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Self-describing binary container: magic, version, payload, CRC32.
inline void save_checkpoint(const ServerState& s, const std::string& path) {
  detail::ByteWriter w;
  detail::write_model(w, s.classifier);
  w.u64(static_cast<std::uint64_t>(s.table.dim));
  w.u32(static_cast<std::uint32_t>(s.table.entries.size()));
  for (const KnowledgeEntry& e : s.table.entries) {
    w.u8(e.initialized ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(e.last_winner ? *e.last_winner + 1 : 0));
    if (e.initialized) {
      w.vector(e.mean);
      w.matrix(e.cov);
    }
  }
  w.u64(s.gate_log.size());
  for (const GateRecord& g : s.gate_log) {
    w.u32(static_cast<std::uint32_t>(g.client));
    w.u32(static_cast<std::uint32_t>(g.cls));
    w.f64(g.trace_k);
    w.f64(g.trace_ref);
    w.u8(static_cast<std::uint8_t>((g.was_initialized ? 1 : 0) | (g.learned ? 2 : 0) |
                                   (g.takeover ? 4 : 0)));
  }
  w.u64(s.event_log.size());
  for (const std::string& e : s.event_log) w.str(e);

  detail::ByteWriter out;
  out.u32(kCheckpointMagic);
  out.u32(kCheckpointVersion);
  out.u64(w.bytes.size());
  out.bytes.insert(out.bytes.end(), w.bytes.begin(), w.bytes.end());
  out.u32(detail::crc32(w.bytes));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(out.bytes.data(), static_cast<std::streamsize>(out.bytes.size()));
}

inline ServerState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(f)),
                        std::istreambuf_iterator<char>());
  detail::ByteReader header(raw);
  if (header.u32() != kCheckpointMagic) throw std::runtime_error("bad magic");
  std::uint32_t version = header.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported version " + std::to_string(version));
  std::uint64_t payload_size = header.u64();
  if (raw.size() != 16 + payload_size + 4) throw std::runtime_error("checkpoint truncated");
  std::vector<char> payload(raw.begin() + 16, raw.begin() + 16 + static_cast<std::ptrdiff_t>(payload_size));
  detail::ByteReader tail(std::vector<char>(raw.end() - 4, raw.end()));
  if (tail.u32() != detail::crc32(payload)) throw std::runtime_error("checksum mismatch");

  detail::ByteReader r(std::move(payload));
  ServerState s;
  s.classifier = detail::read_model(r);
  s.table.dim = static_cast<Eigen::Index>(r.u64());
  std::uint32_t classes = r.u32();
  s.table.entries.resize(classes);
  for (KnowledgeEntry& e : s.table.entries) {
    e.initialized = r.u8() != 0;
    std::uint32_t winner = r.u32();
    if (winner > 0) e.last_winner = static_cast<int>(winner) - 1;
    if (e.initialized) {
      e.mean = r.vector();
      e.cov = r.matrix();
    }
  }
  std::uint64_t n_gate = r.u64();
  for (std::uint64_t i = 0; i < n_gate; ++i) {
    GateRecord g;
    g.client = static_cast<int>(r.u32());
    g.cls = static_cast<int>(r.u32());
    g.trace_k = r.f64();
    g.trace_ref = r.f64();
    std::uint8_t flags = r.u8();
    g.was_initialized = flags & 1;
    g.learned = flags & 2;
    g.takeover = flags & 4;
    s.gate_log.push_back(g);
  }
  std::uint64_t n_events = r.u64();
  for (std::uint64_t i = 0; i < n_events; ++i) s.event_log.push_back(r.str());
  if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint");
  return s;
}

}  // namespace cks

#pragma once

// File formats: a little binary container (JSON header + raw little-endian
// payloads) used for checkpoints, exported artifacts and dataset dumps, plus
// an append-only JSON-lines writer for metrics streams.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace hestia::io {

static_assert(sizeof(double) == 8, "payloads are 64-bit");

namespace detail {
// Payloads are written little-endian; this codebase targets little-endian
// hosts and refuses to guess elsewhere.
inline void check_endianness() {
  const std::uint16_t probe = 1;
  unsigned char byte;
  std::memcpy(&byte, &probe, 1);
  if (byte != 1) throw std::runtime_error("io: big-endian hosts are unsupported");
}
}  // namespace detail

// One named payload: either f64 values or i8 codes.
struct Blob {
  std::string name;
  std::vector<double> f64;
  std::vector<std::int8_t> i8;
  bool is_f64() const { return i8.empty(); }
};

struct Container {
  nlohmann::json meta;
  std::vector<Blob> blobs;

  const Blob& blob(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return b;
    throw std::runtime_error("container: missing blob '" + name + "'");
  }
  bool has_blob(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return true;
    return false;
  }
};

inline void save_container(const Container& c, const std::string& path) {
  detail::check_endianness();
  nlohmann::json header;
  header["meta"] = c.meta;
  header["blobs"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& b : c.blobs) {
    const std::uint64_t bytes = b.is_f64() ? b.f64.size() * 8 : b.i8.size();
    header["blobs"].push_back({{"name", b.name},
                               {"dtype", b.is_f64() ? "f64" : "i8"},
                               {"count", b.is_f64() ? b.f64.size() : b.i8.size()},
                               {"offset", offset}});
    offset += bytes;
  }
  const std::string head = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_container: cannot open " + path);
  const std::uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), 8);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& b : c.blobs) {
    if (b.is_f64())
      out.write(reinterpret_cast<const char*>(b.f64.data()),
                static_cast<std::streamsize>(b.f64.size() * 8));
    else
      out.write(reinterpret_cast<const char*>(b.i8.data()),
                static_cast<std::streamsize>(b.i8.size()));
  }
  if (!out) throw std::runtime_error("save_container: write failed for " + path);
}

inline Container load_container(const std::string& path) {
  detail::check_endianness();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_container: cannot open " + path);
  std::uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), 8);
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw std::runtime_error("load_container: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(head);

  Container c;
  c.meta = header.at("meta");
  for (const auto& entry : header.at("blobs")) {
    Blob b;
    b.name = entry.at("name").get<std::string>();
    const auto count = entry.at("count").get<std::size_t>();
    if (entry.at("dtype") == "f64") {
      b.f64.resize(count);
      in.read(reinterpret_cast<char*>(b.f64.data()), static_cast<std::streamsize>(count * 8));
    } else {
      b.i8.resize(count);
      in.read(reinterpret_cast<char*>(b.i8.data()), static_cast<std::streamsize>(count));
    }
    if (!in) throw std::runtime_error("load_container: truncated payload in " + path);
    c.blobs.push_back(std::move(b));
  }
  return c;
}

// Append-only JSON-lines stream; one record per line so interrupted runs
// remain parseable.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw std::runtime_error("JsonlWriter: cannot open " + path);
  }
  void write(const nlohmann::json& record) {
    out_ << record.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_jsonl: cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace hestia::io

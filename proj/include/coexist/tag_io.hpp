#pragma once

// Tag files.
//
// Text:   "# duration_ps=<N>", optional "time_ps,channel" header, then one
//         "<time_ps>,<channel>" row per tag.
// Binary: 16-byte header: "QTAG", u32 version (1), u64 duration_ps; then one
//         16-byte record per tag: u64 time_ps, u8 channel, 7 zero bytes.
//         All integers little-endian.

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "coexist/errors.hpp"
#include "coexist/tags.hpp"

namespace coexist {

enum class TagFormat { Text, Binary };

inline constexpr std::array<char, 4> kTagMagic{'Q', 'T', 'A', 'G'};
inline constexpr std::uint32_t kTagVersion = 1;
inline constexpr std::size_t kTagHeaderBytes = 16;
inline constexpr std::size_t kTagRecordBytes = 16;

inline void write_tags_text(std::ostream& out, const TagStream& s) {
  out << "# duration_ps=" << s.duration_ps << "\n";
  out << "time_ps,channel\n";
  for (const auto& t : s.tags) out << t.time_ps << ',' << static_cast<unsigned>(t.channel) << '\n';
}

namespace detail {

inline std::string_view trim(std::string_view v) {
  while (!v.empty() && (v.front() == ' ' || v.front() == '\t')) v.remove_prefix(1);
  while (!v.empty() && (v.back() == ' ' || v.back() == '\t' || v.back() == '\r')) v.remove_suffix(1);
  return v;
}

template <class T>
bool parse_uint(std::string_view v, T& out) {
  v = trim(v);
  if (v.empty()) return false;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  return ec == std::errc() && p == v.data() + v.size();
}

inline void put_u32(char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xff);
}
inline void put_u64(char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xff);
}
inline std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}
inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

}  // namespace detail

// Line numbers in errors are 1-based. Without a duration comment the duration
// is one past the last tag.
inline TagStream read_tags_text(std::istream& in, Node node) {
  TagStream s;
  bool have_duration = false;
  std::string line;
  std::size_t lineno = 0;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view v = detail::trim(line);
    if (v.empty()) continue;
    if (v.front() == '#') {
      const std::string_view body = detail::trim(v.substr(1));
      constexpr std::string_view key = "duration_ps=";
      if (body.substr(0, key.size()) == key) {
        if (!detail::parse_uint(body.substr(key.size()), s.duration_ps)) {
          throw ParseError("line " + std::to_string(lineno) + ": malformed duration_ps", lineno);
        }
        have_duration = true;
      }
      continue;
    }
    if (header_allowed && v == "time_ps,channel") {
      header_allowed = false;
      continue;
    }
    header_allowed = false;
    const auto comma = v.find(',');
    if (comma == std::string_view::npos) {
      throw ParseError("line " + std::to_string(lineno) + ": expected 'time_ps,channel'", lineno);
    }
    std::uint64_t t = 0;
    unsigned ch = 0;
    if (!detail::parse_uint(v.substr(0, comma), t)) {
      throw ParseError("line " + std::to_string(lineno) + ": malformed time_ps", lineno);
    }
    if (!detail::parse_uint(v.substr(comma + 1), ch) || ch > 255) {
      throw ParseError("line " + std::to_string(lineno) + ": malformed channel", lineno);
    }
    s.tags.push_back({t, node, static_cast<std::uint8_t>(ch)});
  }
  if (!have_duration) {
    std::uint64_t last = 0;
    for (const auto& t : s.tags) last = std::max(last, t.time_ps + 1);
    s.duration_ps = last;
  }
  return s;
}

inline void write_tags_binary(std::ostream& out, const TagStream& s) {
  std::array<char, kTagHeaderBytes> h{};
  std::memcpy(h.data(), kTagMagic.data(), 4);
  detail::put_u32(h.data() + 4, kTagVersion);
  detail::put_u64(h.data() + 8, s.duration_ps);
  out.write(h.data(), h.size());
  std::array<char, kTagRecordBytes> r{};
  for (const auto& t : s.tags) {
    r.fill(0);
    detail::put_u64(r.data(), t.time_ps);
    r[8] = static_cast<char>(t.channel);
    out.write(r.data(), r.size());
  }
}

// Errors carry the byte offset of the offending header field or record.
inline TagStream read_tags_binary(std::istream& in, Node node) {
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kTagHeaderBytes) {
    throw ParseError("truncated header at byte offset " + std::to_string(bytes.size()), bytes.size());
  }
  if (std::memcmp(bytes.data(), kTagMagic.data(), 4) != 0) throw ParseError("bad magic at byte offset 0", 0);
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kTagVersion) {
    throw ParseError("unsupported version " + std::to_string(version) + " at byte offset 4", 4);
  }
  TagStream s;
  s.duration_ps = detail::get_u64(bytes.data() + 8);
  const std::size_t body = bytes.size() - kTagHeaderBytes;
  if (body % kTagRecordBytes != 0) {
    const std::size_t off = kTagHeaderBytes + (body / kTagRecordBytes) * kTagRecordBytes;
    throw ParseError("truncated record at byte offset " + std::to_string(off), off);
  }
  s.tags.reserve(body / kTagRecordBytes);
  for (std::size_t off = kTagHeaderBytes; off < bytes.size(); off += kTagRecordBytes) {
    const char* p = bytes.data() + off;
    for (std::size_t k = 9; k < kTagRecordBytes; ++k) {
      if (p[k] != 0) {
        throw ParseError("nonzero reserved byte at byte offset " + std::to_string(off + k), off + k);
      }
    }
    s.tags.push_back({detail::get_u64(p), node, static_cast<std::uint8_t>(p[8])});
  }
  return s;
}

inline TagFormat detect_tag_format(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open tag file '" + path + "'");
  std::array<char, 4> m{};
  in.read(m.data(), 4);
  return (in.gcount() == 4 && m == kTagMagic) ? TagFormat::Binary : TagFormat::Text;
}

inline TagStream load_tags(const std::string& path, Node node) {
  const TagFormat f = detect_tag_format(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open tag file '" + path + "'");
  return f == TagFormat::Binary ? read_tags_binary(in, node) : read_tags_text(in, node);
}

inline void save_tags(const std::string& path, const TagStream& s, TagFormat f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write tag file '" + path + "'");
  if (f == TagFormat::Binary) write_tags_binary(out, s);
  else write_tags_text(out, s);
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

}  // namespace coexist

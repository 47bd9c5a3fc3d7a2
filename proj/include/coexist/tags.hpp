#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace coexist {

enum class Node : std::uint8_t { Alice = 0, Bob = 1 };

inline std::string to_string(Node n) { return n == Node::Alice ? "alice" : "bob"; }

struct TimeTag {
  std::uint64_t time_ps = 0;
  Node node = Node::Alice;
  std::uint8_t channel = 0;

  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

struct TagStream {
  std::vector<TimeTag> tags;
  std::uint64_t duration_ps = 0;

  std::size_t size() const { return tags.size(); }
  bool empty() const { return tags.empty(); }

  bool is_sorted() const {
    return std::is_sorted(tags.begin(), tags.end(),
                          [](const TimeTag& a, const TimeTag& b) { return a.time_ps < b.time_ps; });
  }

  void sort() {
    std::stable_sort(tags.begin(), tags.end(),
                     [](const TimeTag& a, const TimeTag& b) { return a.time_ps < b.time_ps; });
  }

  std::vector<std::uint64_t> times() const {
    std::vector<std::uint64_t> t;
    t.reserve(tags.size());
    for (const auto& tag : tags) t.push_back(tag.time_ps);
    return t;
  }

  double rate_cps() const {
    return duration_ps == 0 ? 0.0 : static_cast<double>(tags.size()) / (static_cast<double>(duration_ps) * 1e-12);
  }

  friend bool operator==(const TagStream&, const TagStream&) = default;
};

}  // namespace coexist

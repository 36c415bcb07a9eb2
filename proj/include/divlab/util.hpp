#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace divlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Mixes a run seed with an item index (splitmix64 finalizer). Every per-item
/// random stream is derived this way so parallel schedules stay reproducible.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Uniform integer in [0, n). Rejection sampling on the raw engine output, so
/// the draw sequence does not depend on the standard library's distributions.
std::size_t uniform_index(Rng& rng, std::size_t n);

/// Uniform real in [0, 1) with 53 random bits.
double uniform_unit(Rng& rng);

/// Picks k distinct indices from [0, n), returned in ascending order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t k);

/// Deterministic Fisher-Yates shuffle driven by uniform_index.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

/// Splits a UTF-8 string into code points (each returned as its byte string).
/// Invalid lead bytes are returned as single-byte units.
std::vector<std::string> utf8_chars(std::string_view s);

std::vector<std::string> split_whitespace(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);

/// Unit-cost Levenshtein distance.
template <typename T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Reads a whole file; throws Error when it cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

/// Formats a double with a fixed number of decimals (locale independent).
std::string format_fixed(double value, int decimals);

}  // namespace divlab

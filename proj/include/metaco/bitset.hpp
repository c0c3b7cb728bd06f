#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace metaco {

/// Fixed-size bitset sized at runtime. Bits beyond size() stay zero.
class Bitset {
 public:
  Bitset() = default;
  explicit Bitset(std::size_t n, bool value = false) : n_(n), words_((n + 63) / 64, value ? ~0ULL : 0ULL) {
    trim();
  }

  std::size_t size() const noexcept { return n_; }
  bool test(std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1ULL; }
  void set(std::size_t i) noexcept { words_[i >> 6] |= 1ULL << (i & 63); }
  void reset(std::size_t i) noexcept { words_[i >> 6] &= ~(1ULL << (i & 63)); }

  std::size_t count() const noexcept {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }
  bool none() const noexcept {
    for (auto w : words_)
      if (w) return false;
    return true;
  }
  bool any() const noexcept { return !none(); }

  /// this &= ~other
  void subtract(const Bitset& other) noexcept {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= ~other.words_[i];
  }
  bool intersects(const Bitset& other) const noexcept {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] & other.words_[i]) return true;
    return false;
  }

  /// Calls f(index) for every set bit in increasing order.
  template <class F>
  void for_each(F&& f) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t word = words_[w];
      while (word) {
        const int b = std::countr_zero(word);
        f(w * 64 + static_cast<std::size_t>(b));
        word &= word - 1;
      }
    }
  }

  const std::vector<std::uint64_t>& words() const noexcept { return words_; }
  bool operator==(const Bitset&) const = default;

 private:
  void trim() noexcept {
    if (n_ % 64 && !words_.empty()) words_.back() &= (1ULL << (n_ % 64)) - 1;
  }

  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace metaco

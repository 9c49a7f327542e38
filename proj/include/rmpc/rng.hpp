#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace rmpc {

/// Identifies one reproducible random stream: a seed plus a stream index
/// (typically the trial number).
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// Philox4x32-10 counter-based generator. Output block b of stream s under
/// seed k is a pure function of (k, s, b), so trials can be simulated in any
/// order or on any thread.
class CounterRng {
 public:
  explicit CounterRng(RngState state) noexcept : state_(state) {}

  std::uint64_t next_u64() noexcept;

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform on (0, 1].
  double uniform_pos() noexcept { return 1.0 - uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n) noexcept;
  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() noexcept;

  RngState state() const noexcept { return state_; }
  std::uint64_t blocks_used() const noexcept { return block_; }

 private:
  void refill() noexcept;

  RngState state_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// One Philox4x32-10 block: exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key) noexcept;

}  // namespace rmpc

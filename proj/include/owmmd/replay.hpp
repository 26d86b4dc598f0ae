#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "owmmd/diff.hpp"

namespace owmmd {

using Vector = Eigen::VectorXd;

/// A stored sample: input, label and the logits the model produced for it
/// when it was offered.
struct MemoryItem {
  Vector x;
  int y = 0;
  Vector z;

  friend bool operator==(const MemoryItem& a, const MemoryItem& b) {
    return a.y == b.y && a.x.size() == b.x.size() && a.z.size() == b.z.size() && a.x == b.x && a.z == b.z;
  }
};

/// Rows of a sampled batch stacked into matrices.
struct ReplayBatch {
  Tensor x;
  std::vector<int> y;
  Tensor z;
};

/// Fixed-capacity reservoir sample over the stream of offered items.
class ReservoirBuffer {
 public:
  explicit ReservoirBuffer(std::size_t capacity = 1, std::uint64_t seed = 0);

  /// Fill phase appends; afterwards the item replaces a uniform slot with
  /// probability capacity / (seen + 1).
  void offer(MemoryItem item);
  /// Same as offer() with the replacement draw supplied: `draw` must lie in
  /// [0, seen_count()] and the item lands in slot `draw` iff draw < capacity.
  /// Ignored while the buffer is filling.
  void offer_with_draw(MemoryItem item, std::uint64_t draw);

  /// `batch_size` items drawn uniformly with replacement.
  [[nodiscard]] std::vector<MemoryItem> sample(std::size_t batch_size, std::mt19937_64& rng) const;
  [[nodiscard]] ReplayBatch sample_batch(std::size_t batch_size, std::mt19937_64& rng) const;

  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] bool empty() const { return items_.empty(); }
  [[nodiscard]] std::uint64_t seen_count() const { return seen_; }
  [[nodiscard]] std::span<const MemoryItem> items() const { return items_; }
  [[nodiscard]] const std::mt19937_64& rng() const { return rng_; }

  friend bool operator==(const ReservoirBuffer& a, const ReservoirBuffer& b) {
    return a.capacity_ == b.capacity_ && a.seen_ == b.seen_ && a.items_ == b.items_ && a.rng_ == b.rng_;
  }

  /// Versioned binary dump; load() restores a bit-identical buffer,
  /// including the generator state.
  void save(const std::filesystem::path& path) const;
  static ReservoirBuffer load(const std::filesystem::path& path);

 private:
  std::size_t capacity_;
  std::vector<MemoryItem> items_;
  std::uint64_t seen_ = 0;
  std::mt19937_64 rng_;
};

ReplayBatch stack(std::span<const MemoryItem> items);

}  // namespace owmmd

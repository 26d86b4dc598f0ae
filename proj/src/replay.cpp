#include "owmmd/replay.hpp"

#include <sstream>

#include "binary_io.hpp"

namespace owmmd {

namespace {
constexpr std::string_view kBufferMagic = "OWMB";
constexpr std::uint32_t kBufferVersion = 1;
}  // namespace

ReservoirBuffer::ReservoirBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  require(capacity >= 1, ErrorCode::InvalidHyperParams, "buffer capacity must be at least 1");
  items_.reserve(capacity);
}

void ReservoirBuffer::offer(MemoryItem item) {
  if (items_.size() < capacity_) {
    offer_with_draw(std::move(item), 0);
    return;
  }
  std::uniform_int_distribution<std::uint64_t> dist(0, seen_);
  offer_with_draw(std::move(item), dist(rng_));
}

void ReservoirBuffer::offer_with_draw(MemoryItem item, std::uint64_t draw) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(item));
  } else {
    require(draw <= seen_, ErrorCode::DomainError, "reservoir draw outside [0, seen]");
    if (draw < capacity_) items_[static_cast<std::size_t>(draw)] = std::move(item);
  }
  ++seen_;
}

std::vector<MemoryItem> ReservoirBuffer::sample(std::size_t batch_size, std::mt19937_64& rng) const {
  require(!items_.empty(), ErrorCode::EmptyBuffer, "sample from an empty buffer");
  std::uniform_int_distribution<std::size_t> dist(0, items_.size() - 1);
  std::vector<MemoryItem> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) out.push_back(items_[dist(rng)]);
  return out;
}

ReplayBatch ReservoirBuffer::sample_batch(std::size_t batch_size, std::mt19937_64& rng) const {
  return stack(sample(batch_size, rng));
}

ReplayBatch stack(std::span<const MemoryItem> items) {
  ReplayBatch batch;
  if (items.empty()) return batch;
  const auto n = static_cast<Eigen::Index>(items.size());
  batch.x.resize(n, items.front().x.size());
  batch.z.resize(n, items.front().z.size());
  batch.y.reserve(items.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const MemoryItem& it = items[static_cast<std::size_t>(r)];
    batch.x.row(r) = it.x.transpose();
    batch.z.row(r) = it.z.transpose();
    batch.y.push_back(it.y);
  }
  return batch;
}

void ReservoirBuffer::save(const std::filesystem::path& path) const {
  binary::Writer w(path);
  w.magic(kBufferMagic, kBufferVersion);
  w.u64(capacity_);
  w.u64(seen_);
  std::ostringstream rng_state;
  rng_state << rng_;
  w.str(rng_state.str());
  w.u64(items_.size());
  for (const MemoryItem& it : items_) {
    w.i64(it.y);
    w.tensor(it.x);
    w.tensor(it.z);
  }
  w.finish();
}

ReservoirBuffer ReservoirBuffer::load(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic(kBufferMagic, kBufferVersion);
  const std::uint64_t capacity = r.u64();
  require(capacity >= 1, ErrorCode::IoError, path.string() + ": zero capacity");
  ReservoirBuffer buf(static_cast<std::size_t>(capacity));
  buf.seen_ = r.u64();
  std::istringstream rng_state(r.str());
  rng_state >> buf.rng_;
  require(!rng_state.fail(), ErrorCode::IoError, path.string() + ": bad generator state");
  const std::uint64_t count = r.u64();
  require(count <= capacity && count == std::min<std::uint64_t>(buf.seen_, capacity), ErrorCode::IoError,
          path.string() + ": item count inconsistent with capacity/seen");
  for (std::uint64_t i = 0; i < count; ++i) {
    MemoryItem it;
    it.y = static_cast<int>(r.i64());
    const Tensor x = r.tensor();
    const Tensor z = r.tensor();
    require(x.cols() == 1 && z.cols() == 1, ErrorCode::IoError, path.string() + ": malformed item");
    it.x = x.col(0);
    it.z = z.col(0);
    buf.items_.push_back(std::move(it));
  }
  r.expect_end();
  return buf;
}

}  // namespace owmmd

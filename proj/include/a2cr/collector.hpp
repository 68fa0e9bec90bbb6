#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "a2cr/graph.hpp"

namespace a2cr {

/// Class index order used by the Reasoner head and every CSV.
enum class Category : int {
  Breakout = 0,         // (1,1)
  SelfImprovement = 1,  // (1,0)
  Hovering = 2,         // (0,0)
  Prospect = 3,         // (0,1)
};
inline constexpr std::size_t kNumCategories = 4;

std::string_view category_name(Category c);
std::optional<Category> parse_category(std::string_view name);

struct PurposeLabel {
  std::uint8_t g_bit = 0;
  std::uint8_t se_bit = 0;

  Category category() const noexcept;
  static PurposeLabel from(Category c) noexcept;
  friend bool operator==(const PurposeLabel&, const PurposeLabel&) = default;
};

struct PoolEntry {
  double g = 0.0;
  double se = 0.0;
  PurposeLabel label;
  std::uint64_t insert_index = 0;
  bool warmup = false;  // labeled against fewer than the warm-up minimum
};

/// Fixed-capacity FIFO of labeled (G, S_e) pairs whose half-sample means set
/// the labeling thresholds.
class ExploringPool {
 public:
  static constexpr std::size_t kWarmupMinimum = 10;

  explicit ExploringPool(std::size_t capacity = 1000, std::uint64_t seed = 0);

  /// Thresholds are the means of one uniform half-sample (without
  /// replacement, floor(size/2) entries, at least 1) shared by both features.
  PurposeLabel pseudo_label(double g, double se);
  /// Appends, evicting the single oldest entry when over capacity.
  const PoolEntry& push(double g, double se, PurposeLabel label);
  /// pseudo_label followed by push as one critical section. An empty pool
  /// labels the first entry against itself.
  PoolEntry label_and_push(double g, double se);

  std::size_t size() const;
  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t pushed() const noexcept { return next_index_; }
  /// Snapshot copy of the contents, oldest first.
  std::vector<PoolEntry> entries() const;
  void write_csv(std::ostream& out) const;

 private:
  PurposeLabel label_locked(double g, double se);
  const PoolEntry& push_locked(double g, double se, PurposeLabel label, bool warmup);

  std::size_t capacity_;
  std::deque<PoolEntry> entries_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> scratch_;
  std::uint64_t next_index_ = 0;
  mutable std::mutex mutex_;
};

/// Category fractions ordered as Category.
std::array<double, kNumCategories> label_proportions(std::span<const PurposeLabel> history);
std::array<double, kNumCategories> label_proportions(std::span<const Category> history);

/// Stable binary cross entropy on raw logits against a one-hot target.
double bce_with_logits(std::span<const float> logits, Category target, BceMode mode = BceMode::Full);

}  // namespace a2cr

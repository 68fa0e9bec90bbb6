#include "a2cr/collector.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "a2cr/error.hpp"

namespace a2cr {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Breakout:
      return "Breakout";
    case Category::SelfImprovement:
      return "SelfImprovement";
    case Category::Hovering:
      return "Hovering";
    case Category::Prospect:
      return "Prospect";
  }
  throw ContractViolation("invalid category");
}

std::optional<Category> parse_category(std::string_view name) {
  for (int i = 0; i < static_cast<int>(kNumCategories); ++i) {
    if (category_name(static_cast<Category>(i)) == name) return static_cast<Category>(i);
  }
  return std::nullopt;
}

Category PurposeLabel::category() const noexcept {
  if (g_bit) return se_bit ? Category::Breakout : Category::SelfImprovement;
  return se_bit ? Category::Prospect : Category::Hovering;
}

PurposeLabel PurposeLabel::from(Category c) noexcept {
  switch (c) {
    case Category::Breakout:
      return {1, 1};
    case Category::SelfImprovement:
      return {1, 0};
    case Category::Hovering:
      return {0, 0};
    case Category::Prospect:
      return {0, 1};
  }
  return {};
}

ExploringPool::ExploringPool(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  if (capacity == 0) throw ContractViolation("pool capacity must be positive");
}

std::size_t ExploringPool::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<PoolEntry> ExploringPool::entries() const {
  std::lock_guard lock(mutex_);
  return {entries_.begin(), entries_.end()};
}

PurposeLabel ExploringPool::label_locked(double g, double se) {
  const std::size_t n = entries_.size();
  if (n == 0) throw ContractViolation("pseudo_label on an empty pool");
  const std::size_t half = std::max<std::size_t>(1, n / 2);
  scratch_.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch_[i] = i;
  double sum_g = 0.0;
  double sum_se = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng_);
    std::swap(scratch_[i], scratch_[j]);
    const auto& e = entries_[scratch_[i]];
    sum_g += e.g;
    sum_se += e.se;
  }
  const double k = static_cast<double>(half);
  return {static_cast<std::uint8_t>(g >= sum_g / k), static_cast<std::uint8_t>(se >= sum_se / k)};
}

PurposeLabel ExploringPool::pseudo_label(double g, double se) {
  std::lock_guard lock(mutex_);
  return label_locked(g, se);
}

const PoolEntry& ExploringPool::push_locked(double g, double se, PurposeLabel label, bool warmup) {
  if (!std::isfinite(g) || !std::isfinite(se)) throw NumericalError("non-finite pool entry");
  entries_.push_back(PoolEntry{g, se, label, next_index_++, warmup});
  if (entries_.size() > capacity_) entries_.pop_front();
  return entries_.back();
}

const PoolEntry& ExploringPool::push(double g, double se, PurposeLabel label) {
  std::lock_guard lock(mutex_);
  return push_locked(g, se, label, entries_.size() < kWarmupMinimum);
}

PoolEntry ExploringPool::label_and_push(double g, double se) {
  std::lock_guard lock(mutex_);
  const bool warmup = entries_.size() < kWarmupMinimum;
  const PurposeLabel label = entries_.empty() ? PurposeLabel{1, 1} : label_locked(g, se);
  return push_locked(g, se, label, warmup);
}

void ExploringPool::write_csv(std::ostream& out) const {
  std::lock_guard lock(mutex_);
  out << "insert_index,g,se,g_bit,se_bit,category\n";
  out.precision(9);
  for (const auto& e : entries_) {
    out << e.insert_index << ',' << e.g << ',' << e.se << ',' << int(e.label.g_bit) << ',' << int(e.label.se_bit)
        << ',' << category_name(e.label.category()) << '\n';
  }
}

std::array<double, kNumCategories> label_proportions(std::span<const Category> history) {
  if (history.empty()) throw ContractViolation("label proportions of an empty history");
  std::array<std::size_t, kNumCategories> counts{};
  for (Category c : history) ++counts[static_cast<std::size_t>(c)];
  std::array<double, kNumCategories> out{};
  const double n = static_cast<double>(history.size());
  for (std::size_t i = 0; i < kNumCategories; ++i) out[i] = static_cast<double>(counts[i]) / n;
  return out;
}

std::array<double, kNumCategories> label_proportions(std::span<const PurposeLabel> history) {
  std::vector<Category> cats;
  cats.reserve(history.size());
  for (const auto& l : history) cats.push_back(l.category());
  return label_proportions(std::span<const Category>(cats));
}

double bce_with_logits(std::span<const float> logits, Category target, BceMode mode) {
  if (logits.size() != kNumCategories) throw ShapeError("expected 4 logits");
  double loss = 0.0;
  for (std::size_t j = 0; j < kNumCategories; ++j) {
    const double p = logits[j];
    const double y = j == static_cast<std::size_t>(target) ? 1.0 : 0.0;
    // softplus(-p) = -log s(p); softplus(p) = -log(1 - s(p)).
    const double sp_neg = std::max(-p, 0.0) + std::log1p(std::exp(-std::abs(p)));
    if (mode == BceMode::Full) {
      loss += y * sp_neg + (1.0 - y) * (sp_neg + p);
    } else {
      loss += y * sp_neg;
    }
  }
  return loss;
}

}  // namespace a2cr

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace a2cr {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocator. Vectorized kernels peel loops by address
/// alignment, so a fixed base alignment keeps float summation order, and
/// therefore results, independent of where the heap places a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float32 tensor with an optional gradient slot.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  /// Enabling allocates a zeroed gradient buffer; disabling releases it.
  void set_requires_grad(bool on);
  bool has_grad() const noexcept { return grad_.size() == data_.size() && !data_.empty(); }
  std::span<float> grad() noexcept { return grad_; }
  std::span<const float> grad() const noexcept { return grad_; }
  void zero_grad();

 private:
  Shape shape_;
  FloatBuffer data_;
  FloatBuffer grad_;
  bool requires_grad_ = false;
};

/// Ordered, named parameter storage. Entries are addressed by index so that
/// copies of a ParamSet (worker replicas, snapshots) stay structurally valid.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  /// Adds a zero-initialized trainable tensor and returns its index.
  std::size_t add(std::string name, Shape shape);

  std::size_t size() const noexcept { return entries_.size(); }
  Tensor& operator[](std::size_t index) { return entries_.at(index).tensor; }
  const Tensor& operator[](std::size_t index) const { return entries_.at(index).tensor; }
  const std::string& name(std::size_t index) const { return entries_.at(index).name; }
  std::size_t index_of(std::string_view name) const;
  Tensor& at(std::string_view name) { return entries_[index_of(name)].tensor; }
  const Tensor& at(std::string_view name) const { return entries_[index_of(name)].tensor; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t total_elements() const;
  void zero_grad();
  /// Copies parameter values from a ParamSet with identical names and shapes.
  void copy_values_from(const ParamSet& other);
  /// FNV-1a over names, shapes and the raw bits of every value.
  std::uint64_t checksum() const;

 private:
  std::vector<Entry> entries_;
};

/// Binary checkpoint: "A2CR", version byte, then per parameter
/// (u32 name length, name bytes, u32 rank, u32 dims..., f32 data...), all
/// little-endian, until end of stream.
inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params);
/// Decodes into a fresh ParamSet (all entries trainable).
ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet read_checkpoint(const std::filesystem::path& path);
/// Loads values into an existing ParamSet; names and shapes must match exactly.
void load_checkpoint(ParamSet& params, const std::filesystem::path& path);

}  // namespace a2cr

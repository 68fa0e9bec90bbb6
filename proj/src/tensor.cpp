#include "a2cr/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "a2cr/error.hpp"

namespace a2cr {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), 0.0f);
  } else {
    grad_.clear();
    grad_.shrink_to_fit();
  }
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0f); }

std::size_t ParamSet::add(std::string name, Shape shape) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractViolation("duplicate parameter name: " + name);
  }
  Entry entry{std::move(name), Tensor(std::move(shape))};
  entry.tensor.set_requires_grad(true);
  entries_.push_back(std::move(entry));
  return entries_.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw ContractViolation("unknown parameter: " + std::string(name));
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (other.size() != size()) throw ShapeError("parameter set layouts differ");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& src = other.entries_[i];
    auto& dst = entries_[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
      throw ShapeError("parameter mismatch at " + dst.name);
    }
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), dst.tensor.data().begin());
  }
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    for (auto d : e.tensor.shape()) {
      const auto d32 = static_cast<std::uint32_t>(d);
      mix(&d32, sizeof d32);
    }
    mix(e.tensor.data().data(), e.tensor.size() * sizeof(float));
  }
  return h;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params) {
  std::vector<std::uint8_t> out{'A', '2', 'C', 'R', kCheckpointVersion};
  out.reserve(5 + params.total_elements() * 4 + params.size() * 64);
  for (const auto& e : params) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : e.tensor.data()) put_f32(out, f);
  }
  return out;
}

ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.str(4) != "A2CR") throw FormatError("checkpoint magic mismatch");
  if (const auto version = in.u8(); version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  ParamSet params;
  while (!in.done()) {
    const auto name_len = in.u32();
    std::string name = in.str(name_len);
    const auto rank = in.u32();
    if (rank > 8) throw FormatError("implausible rank in checkpoint entry " + name);
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    const auto idx = params.add(std::move(name), shape);
    for (auto& f : params[idx].data()) f = in.f32();
  }
  return params;
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
}

ParamSet read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_checkpoint(ParamSet& params, const std::filesystem::path& path) {
  const ParamSet loaded = read_checkpoint(path);
  if (loaded.size() != params.size()) {
    throw FormatError("checkpoint " + path.string() + " has " + std::to_string(loaded.size()) +
                      " parameters, expected " + std::to_string(params.size()));
  }
  try {
    params.copy_values_from(loaded);
  } catch (const ShapeError& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace a2cr

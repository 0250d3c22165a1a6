#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fir/model.hpp"
#include "fir/tensor.hpp"

namespace fir {

// Binary checkpoint layout:
//   magic "FIR1" | version u32 LE | tensor count u32 LE | entries...
// Each entry, with entries sorted by dotted name (byte-lexicographic):
//   name length u32 LE | UTF-8 name | ndim u32 LE | dims u64 LE each |
//   dtype tag u8 (1 = f32, 2 = f64) | raw little-endian values.
inline constexpr char kCheckpointMagic[4] = {'F', 'I', 'R', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr std::uint8_t checkpoint_dtype_tag();
template <>
constexpr std::uint8_t checkpoint_dtype_tag<float>() {
  return 1;
}
template <>
constexpr std::uint8_t checkpoint_dtype_tag<double>() {
  return 2;
}

namespace detail {

inline void append_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void append_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
void append_scalar(std::vector<std::uint8_t>& buf, T v) {
  if constexpr (sizeof(T) == 4) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(buf, bits);
  } else {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    append_u64(buf, bits);
  }
}

/// Byte reader that reports the offset of the first inconsistency.
class CheckpointReader {
 public:
  explicit CheckpointReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t offset() const { return off_; }
  bool at_end() const { return off_ == bytes_.size(); }

  void require(std::uint64_t n, const char* what) {
    if (off_ + n > bytes_.size()) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, off_);
    }
  }

  std::uint32_t read_u32(const char* what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
  }

  std::uint64_t read_u64(const char* what) {
    require(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[off_ + i]) << (8 * i);
    off_ += 8;
    return v;
  }

  std::uint8_t read_u8(const char* what) {
    require(1, what);
    return bytes_[off_++];
  }

  std::string read_string(std::uint64_t n, const char* what) {
    require(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + off_), n);
    off_ += n;
    return s;
  }

  template <typename T>
  std::vector<T> read_values(std::uint64_t count, const char* what) {
    require(count * sizeof(T), what);
    std::vector<T> out(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      if constexpr (sizeof(T) == 4) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          bits |= static_cast<std::uint32_t>(bytes_[off_ + i * 4 + b]) << (8 * b);
        }
        std::memcpy(&out[i], &bits, 4);
      } else {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
          bits |= static_cast<std::uint64_t>(bytes_[off_ + i * 8 + b]) << (8 * b);
        }
        std::memcpy(&out[i], &bits, 8);
      }
    }
    off_ += count * sizeof(T);
    return out;
  }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t off_ = 0;
};

}  // namespace detail

/// Serializes named tensors in canonical (byte-lexicographic) name order.
template <typename T>
std::vector<std::uint8_t> checkpoint_serialize(
    std::vector<std::pair<std::string, Tensor<T>>> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
  detail::append_u32(buf, kCheckpointVersion);
  detail::append_u32(buf, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    detail::append_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    detail::append_u32(buf, static_cast<std::uint32_t>(tensor.shape().size()));
    for (auto d : tensor.shape()) detail::append_u64(buf, static_cast<std::uint64_t>(d));
    buf.push_back(checkpoint_dtype_tag<T>());
    for (T v : tensor.values()) detail::append_scalar(buf, v);
  }
  return buf;
}

/// Parses a checkpoint buffer. Throws FormatError (with the byte offset)
/// on bad magic, unsupported version, wrong dtype or truncation; nothing is
/// returned on failure, so no partial state can escape.
template <typename T>
std::map<std::string, Tensor<T>> checkpoint_parse(std::vector<std::uint8_t> bytes) {
  detail::CheckpointReader r(std::move(bytes));
  r.require(4, "magic");
  const std::string magic = r.read_string(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint has bad magic, expected \"FIR1\"", 0);
  }
  const std::uint32_t version = r.read_u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t count = r.read_u32("tensor count");
  std::map<std::string, Tensor<T>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.read_u32("name length");
    const std::string name = r.read_string(name_len, "name");
    const std::uint32_t ndim = r.read_u32("rank");
    Shape shape(ndim);
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<std::int64_t>(r.read_u64("dimension"));
      if (shape[d] < 1) {
        throw FormatError("non-positive dimension in tensor \"" + name + "\"", r.offset() - 8);
      }
      numel *= static_cast<std::uint64_t>(shape[d]);
    }
    const std::uint64_t tag_offset = r.offset();
    const std::uint8_t tag = r.read_u8("dtype tag");
    if (tag != checkpoint_dtype_tag<T>()) {
      throw FormatError("dtype tag " + std::to_string(tag) + " does not match requested " +
                            std::to_string(checkpoint_dtype_tag<T>()) + " for tensor \"" +
                            name + "\"",
                        tag_offset);
    }
    std::vector<T> values = r.template read_values<T>(numel, "tensor values");
    if (out.count(name)) {
      throw FormatError("duplicate tensor name \"" + name + "\"", tag_offset);
    }
    out.emplace(name, Tensor<T>::from_data(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) {
    throw FormatError("trailing bytes after last tensor", r.offset());
  }
  return out;
}

template <typename T>
void checkpoint_save(const std::vector<std::pair<std::string, Tensor<T>>>& entries,
                     const std::string& path) {
  const std::vector<std::uint8_t> buf = checkpoint_serialize(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open checkpoint file for writing: " + path);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw FormatError("short write to checkpoint file: " + path);
}

template <typename T>
std::map<std::string, Tensor<T>> checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return checkpoint_parse<T>(std::move(bytes));
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_parameters(ModelParams<T>& m,
                                                                const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Tensor<T>>> entries;
  visit_model_params(m, cfg,
                     [&](const std::string& name, Tensor<T>& t) { entries.emplace_back(name, t); });
  return entries;
}

template <typename T>
void save_model_checkpoint(ModelParams<T>& m, const ModelConfig& cfg, const std::string& path) {
  checkpoint_save(named_parameters(m, cfg), path);
}

/// Loads a checkpoint into a freshly built parameter tree for `cfg`. The
/// stored names and shapes must match the tree exactly.
template <typename T>
ModelParams<T> load_model_checkpoint(const ModelConfig& cfg, const std::string& path) {
  std::map<std::string, Tensor<T>> stored = checkpoint_load<T>(path);
  ModelParams<T> m = build<T>(cfg, /*seed=*/0);
  std::size_t used = 0;
  visit_model_params(m, cfg, [&](const std::string& name, Tensor<T>& t) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      throw FormatError("checkpoint is missing tensor \"" + name + "\"");
    }
    if (it->second.shape() != t.shape()) {
      throw FormatError("checkpoint tensor \"" + name + "\" has shape " +
                        shape_to_string(it->second.shape()) + ", model wants " +
                        shape_to_string(t.shape()));
    }
    t.values() = it->second.values();
    ++used;
  });
  if (used != stored.size()) {
    throw FormatError("checkpoint holds " + std::to_string(stored.size()) +
                      " tensors, model uses " + std::to_string(used));
  }
  return m;
}

}  // namespace fir

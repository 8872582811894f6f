#include "icll/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "icll/error.hpp"

namespace icll {
namespace {

constexpr char kMagic[4] = {'I', 'C', 'L', 'L'};
constexpr char kAdamTag[4] = {'A', 'D', 'A', 'M'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32s(std::span<const float> values) {
    out_.reserve(out_.size() + 4 * values.size());
    for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
    }
  }
  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    auto b = bytes(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto b = bytes(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::vector<float> f32s(std::uint64_t count, const char* what) {
    if (count > (in_.size() - pos_) / 4) {
      throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
    }
    std::vector<float> out(count);
    for (auto& f : out) f = std::bit_cast<float>(u32(what));
    return out;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.parameters.size() != ckpt.config.parameter_count()) {
    throw DimensionError("encode_checkpoint: parameter count " +
                         std::to_string(ckpt.parameters.size()) + " does not match config (" +
                         std::to_string(ckpt.config.parameter_count()) + ")");
  }
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string json = ckpt.config.to_json();
  w.u32(static_cast<std::uint32_t>(json.size()));
  w.bytes(json.data(), json.size());
  w.u64(ckpt.parameters.size());
  w.f32s(ckpt.parameters);
  if (ckpt.optimizer) {
    const auto& s = *ckpt.optimizer;
    if (s.m.size() != ckpt.parameters.size() || s.v.size() != ckpt.parameters.size()) {
      throw DimensionError("encode_checkpoint: optimizer state size mismatch");
    }
    w.bytes(kAdamTag, 4);
    w.u64(s.step);
    w.f32s(s.m);
    w.f32s(s.v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic, expected 'ICLL'", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const std::uint32_t json_len = r.u32("config length");
  const std::size_t json_at = r.offset();
  auto json = r.bytes(json_len, "config JSON");
  Checkpoint ckpt;
  try {
    ckpt.config = ModelConfig::from_json(
        std::string_view(reinterpret_cast<const char*>(json.data()), json.size()));
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid config: ") + e.what(), json_at);
  }
  const std::size_t count_at = r.offset();
  const std::uint64_t count = r.u64("parameter count");
  if (count != ckpt.config.parameter_count()) {
    throw FormatError("parameter count " + std::to_string(count) + " does not match config (" +
                          std::to_string(ckpt.config.parameter_count()) + ")",
                      count_at);
  }
  ckpt.parameters = r.f32s(count, "parameters");
  if (!r.done()) {
    const std::size_t tag_at = r.offset();
    auto tag = r.bytes(4, "section tag");
    if (std::memcmp(tag.data(), kAdamTag, 4) != 0) {
      throw FormatError("unknown trailing section", tag_at);
    }
    AdamState s;
    s.step = r.u64("optimizer step");
    s.m = r.f32s(count, "optimizer first moments");
    s.v = r.f32s(count, "optimizer second moments");
    ckpt.optimizer = std::move(s);
    if (!r.done()) throw FormatError("trailing bytes after optimizer section", r.offset());
  }
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void save_checkpoint(const TransformerModel<float>& model, const std::filesystem::path& path,
                     const AdamState* optimizer) {
  Checkpoint ckpt{model.config(), model.flat_parameters(), std::nullopt};
  if (optimizer != nullptr) ckpt.optimizer = *optimizer;
  write_checkpoint(ckpt, path);
}

TransformerModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  TransformerModel<float> model(ckpt.config);
  model.assign_flat_parameters(ckpt.parameters);
  return model;
}

TransformerModel<float> load_checkpoint(const std::filesystem::path& path) {
  return model_from_checkpoint(read_checkpoint(path));
}

}  // namespace icll

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icll/autodiff.hpp"
#include "icll/rng.hpp"

namespace icll {

enum class Variant { full, attention_only, mlp_only };
enum class Activation { gelu, relu };

std::string to_string(Variant v);
std::string to_string(Activation a);
Variant parse_variant(std::string_view text);  // full | attention_only | attn_only | mlp_only
Activation parse_activation(std::string_view text);

struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  std::size_t d_emb = 64;
  std::size_t max_positions = 82;
  Variant variant = Variant::full;
  Activation activation = Activation::gelu;

  bool has_attention() const { return variant != Variant::mlp_only; }
  bool has_mlp() const { return variant != Variant::attention_only; }

  // Throws SpecError on zero sizes or d_emb not divisible by n_heads.
  void validate() const;
  std::size_t parameter_count() const;

  // Compact JSON with sorted keys; from_json validates.
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct Parameter {
  std::string name;
  ad::Tensor<T> tensor;
};

// Post-softmax attention weights, [batch, layers, heads, seq, seq].
struct AttentionMaps {
  std::size_t batch = 0;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t seq = 0;
  std::vector<double> weights;

  double at(std::size_t b, std::size_t l, std::size_t h, std::size_t i, std::size_t j) const {
    return weights[(((b * layers + l) * heads + h) * seq + i) * seq + j];
  }
};

// Decoder-only transformer over scalar tokens.
//
// Every token (x or y) is embedded by one shared 1 -> d_emb linear map plus a
// learned absolute positional embedding. Blocks are pre-norm GPT-2 style
// (attention and/or MLP sublayers with residuals, depending on the variant),
// followed by a final layer norm and a d_emb -> 1 read-out applied at every
// x-token position (even token indices).
//
// Parameters are held in canonical order: read_in, pos_emb, per layer
// [ln1, attention (w_qkv, b_qkv, w_out, b_out), ln2, mlp (w_fc, b_fc, w_proj,
// b_proj)], ln_f, read_out. The packed w_qkv is [d, 3d] laid out [Q | K | V]
// with each block split into n_heads contiguous column groups. Copies are deep.
template <typename T>
class TransformerModel {
 public:
  // GPT-2 initialization: weights ~ N(0, 0.02), biases 0, layer norm gain 1.
  TransformerModel(const ModelConfig& config, SeededRng& rng);

  TransformerModel(const TransformerModel& other);
  TransformerModel& operator=(const TransformerModel& other);
  TransformerModel(TransformerModel&&) noexcept = default;
  TransformerModel& operator=(TransformerModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  const ad::Tensor<T>& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  // Concatenation of all parameter values in canonical order.
  std::vector<T> flat_parameters() const;
  void assign_flat_parameters(std::span<const T> values);
  void zero_grad();

  // tokens is [batch, seq] row-major. Returns predictions [batch, (seq + 1) / 2],
  // one per x-token position. Throws CapacityError if seq > max_positions.
  ad::Tensor<T> forward(ad::Graph<T>& graph, std::span<const T> tokens, std::size_t batch,
                        std::size_t seq, AttentionMaps* attention = nullptr) const;

  template <typename U>
  TransformerModel<U> cast() const {
    TransformerModel<U> out(config_);
    std::vector<U> values;
    values.reserve(parameter_count());
    for (T v : flat_parameters()) values.push_back(static_cast<U>(v));
    out.assign_flat_parameters(values);
    return out;
  }

  // Zero-initialized model (used by checkpoint loading and cast()).
  explicit TransformerModel(const ModelConfig& config);

 private:
  void build(SeededRng* rng);
  void deep_copy_from(const TransformerModel& other);

  ModelConfig config_;
  std::vector<Parameter<T>> params_;
};

extern template class TransformerModel<float>;
extern template class TransformerModel<double>;

}  // namespace icll

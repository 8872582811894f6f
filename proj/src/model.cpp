#include "icll/model.hpp"

#include <algorithm>
#include <cmath>

#include "icll/error.hpp"
#include "json.hpp"

namespace icll {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::attention_only: return "attention_only";
    case Variant::mlp_only: return "mlp_only";
  }
  return "full";
}

std::string to_string(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }

Variant parse_variant(std::string_view text) {
  if (text == "full") return Variant::full;
  if (text == "attention_only" || text == "attn_only") return Variant::attention_only;
  if (text == "mlp_only") return Variant::mlp_only;
  throw SpecError("unknown model variant '" + std::string(text) + "'");
}

Activation parse_activation(std::string_view text) {
  if (text == "gelu") return Activation::gelu;
  if (text == "relu") return Activation::relu;
  throw SpecError("unknown activation '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (n_layers == 0) throw SpecError("n_layers must be positive");
  if (n_heads == 0) throw SpecError("n_heads must be positive");
  if (d_emb == 0) throw SpecError("d_emb must be positive");
  if (d_emb % n_heads != 0) {
    throw SpecError("d_emb (" + std::to_string(d_emb) + ") must be divisible by n_heads (" +
                    std::to_string(n_heads) + ")");
  }
  if (max_positions < 2) throw SpecError("max_positions must be at least 2");
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t d = d_emb;
  std::size_t per_layer = 0;
  if (has_attention()) per_layer += 2 * d + (d * 3 * d + 3 * d) + (d * d + d);
  if (has_mlp()) per_layer += 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
  return 2 * d + max_positions * d + n_layers * per_layer + 2 * d + (d + 1);
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_emb"] = d_emb;
  j["max_positions"] = max_positions;
  j["variant"] = to_string(variant);
  j["activation"] = to_string(activation);
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_emb = j.at("d_emb").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.activation = parse_activation(j.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("invalid model config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
TransformerModel<T>::TransformerModel(const ModelConfig& config, SeededRng& rng)
    : config_(config) {
  config_.validate();
  build(&rng);
}

template <typename T>
TransformerModel<T>::TransformerModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  build(nullptr);
}

template <typename T>
TransformerModel<T>::TransformerModel(const TransformerModel& other) {
  deep_copy_from(other);
}

template <typename T>
TransformerModel<T>& TransformerModel<T>::operator=(const TransformerModel& other) {
  if (this != &other) deep_copy_from(other);
  return *this;
}

template <typename T>
void TransformerModel<T>::deep_copy_from(const TransformerModel& other) {
  config_ = other.config_;
  params_.clear();
  for (const auto& p : other.params_) {
    std::vector<T> values(p.tensor.data().begin(), p.tensor.data().end());
    params_.push_back({p.name, ad::Tensor<T>::from(p.tensor.shape(), std::move(values), true)});
  }
}

template <typename T>
void TransformerModel<T>::build(SeededRng* rng) {
  const std::size_t d = config_.d_emb;
  params_.clear();
  auto weight = [&](std::string name, ad::Shape shape) {
    auto t = ad::Tensor<T>::zeros(std::move(shape), true);
    if (rng != nullptr)
      for (T& v : t.data()) v = static_cast<T>(rng->normal(0.0, 0.02));
    params_.push_back({std::move(name), t});
  };
  auto constant = [&](std::string name, ad::Shape shape, T value) {
    auto t = ad::Tensor<T>::zeros(std::move(shape), true);
    if (rng != nullptr) std::fill(t.data().begin(), t.data().end(), value);
    params_.push_back({std::move(name), t});
  };

  weight("read_in.weight", {1, d});
  constant("read_in.bias", {d}, T(0));
  weight("pos_emb", {config_.max_positions, d});
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    if (config_.has_attention()) {
      constant(p + "ln1.gamma", {d}, T(1));
      constant(p + "ln1.beta", {d}, T(0));
      weight(p + "attn.w_qkv", {d, 3 * d});
      constant(p + "attn.b_qkv", {3 * d}, T(0));
      weight(p + "attn.w_out", {d, d});
      constant(p + "attn.b_out", {d}, T(0));
    }
    if (config_.has_mlp()) {
      constant(p + "ln2.gamma", {d}, T(1));
      constant(p + "ln2.beta", {d}, T(0));
      weight(p + "mlp.w_fc", {d, 4 * d});
      constant(p + "mlp.b_fc", {4 * d}, T(0));
      weight(p + "mlp.w_proj", {4 * d, d});
      constant(p + "mlp.b_proj", {d}, T(0));
    }
  }
  constant("ln_f.gamma", {d}, T(1));
  constant("ln_f.beta", {d}, T(0));
  weight("read_out.weight", {d, 1});
  constant("read_out.bias", {1}, T(0));
}

template <typename T>
const ad::Tensor<T>& TransformerModel<T>::parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw UsageError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t TransformerModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
std::vector<T> TransformerModel<T>::flat_parameters() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for (const auto& p : params_) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

template <typename T>
void TransformerModel<T>::assign_flat_parameters(std::span<const T> values) {
  if (values.size() != parameter_count()) {
    throw DimensionError("assign_flat_parameters: expected " + std::to_string(parameter_count()) +
                         " values, got " + std::to_string(values.size()));
  }
  std::size_t offset = 0;
  for (auto& p : params_) {
    auto dst = p.tensor.data();
    std::copy_n(values.begin() + offset, dst.size(), dst.begin());
    offset += dst.size();
  }
}

template <typename T>
void TransformerModel<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
ad::Tensor<T> TransformerModel<T>::forward(ad::Graph<T>& g, std::span<const T> tokens,
                                           std::size_t batch, std::size_t seq,
                                           AttentionMaps* attention) const {
  if (seq == 0 || batch == 0) throw UsageError("forward: empty prompt batch");
  if (seq > config_.max_positions) {
    throw CapacityError("forward: prompt has " + std::to_string(seq) +
                        " tokens but the model supports at most " +
                        std::to_string(config_.max_positions));
  }
  if (tokens.size() != batch * seq) {
    throw DimensionError("forward: token buffer size " + std::to_string(tokens.size()) +
                         " != batch*seq " + std::to_string(batch * seq));
  }

  std::size_t cursor = 0;
  auto next = [&]() -> const ad::Tensor<T>& { return params_[cursor++].tensor; };

  const std::size_t rows = batch * seq;
  auto tok = ad::Tensor<T>::from({rows, 1}, std::vector<T>(tokens.begin(), tokens.end()));
  const auto& w_in = next();
  const auto& b_in = next();
  auto h = g.add_bias(g.matmul(tok, w_in), b_in);

  std::vector<std::size_t> positions(rows);
  for (std::size_t r = 0; r < rows; ++r) positions[r] = r % seq;
  h = g.add(h, g.embedding_lookup(next(), positions));

  std::vector<T> probs;
  if (attention != nullptr) {
    attention->batch = batch;
    attention->layers = config_.has_attention() ? config_.n_layers : 0;
    attention->heads = config_.has_attention() ? config_.n_heads : 0;
    attention->seq = seq;
    attention->weights.assign(batch * attention->layers * attention->heads * seq * seq, 0.0);
  }

  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    if (config_.has_attention()) {
      const auto& g1 = next();
      const auto& b1 = next();
      const auto& w_qkv = next();
      const auto& b_qkv = next();
      const auto& w_out = next();
      const auto& b_out = next();
      auto a = g.layer_norm(h, g1, b1);
      auto qkv = g.add_bias(g.matmul(a, w_qkv), b_qkv);
      auto ctx = g.self_attention(qkv, batch, seq, config_.n_heads, true,
                                  attention != nullptr ? &probs : nullptr);
      h = g.add(h, g.add_bias(g.matmul(ctx, w_out), b_out));
      if (attention != nullptr) {
        const std::size_t H = config_.n_heads, block = seq * seq;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t hd = 0; hd < H; ++hd) {
            const T* src = probs.data() + (b * H + hd) * block;
            double* dst = attention->weights.data() + ((b * attention->layers + l) * H + hd) * block;
            std::copy_n(src, block, dst);
          }
      }
    }
    if (config_.has_mlp()) {
      const auto& g2 = next();
      const auto& b2 = next();
      const auto& w_fc = next();
      const auto& b_fc = next();
      const auto& w_proj = next();
      const auto& b_proj = next();
      auto m = g.layer_norm(h, g2, b2);
      auto u = g.add_bias(g.matmul(m, w_fc), b_fc);
      u = config_.activation == Activation::gelu ? g.gelu(u) : g.relu(u);
      h = g.add(h, g.add_bias(g.matmul(u, w_proj), b_proj));
    }
  }
  const auto& gf = next();
  const auto& bf = next();
  h = g.layer_norm(h, gf, bf);

  const std::size_t n_pred = (seq + 1) / 2;
  std::vector<std::size_t> x_rows;
  x_rows.reserve(batch * n_pred);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < n_pred; ++k) x_rows.push_back(b * seq + 2 * k);
  auto sel = g.embedding_lookup(h, x_rows);
  const auto& w_out = next();
  const auto& b_out = next();
  auto pred = g.reshape(g.add_bias(g.matmul(sel, w_out), b_out), {batch, n_pred});

  for (T v : pred.data()) {
    if (!std::isfinite(v)) throw NumericError("forward: non-finite prediction");
  }
  return pred;
}

template class TransformerModel<float>;
template class TransformerModel<double>;

}  // namespace icll

#pragma once

// Plain-loop transformer forward for one token row, written independently of
// the autodiff engine. With causal == false the attention mask is dropped,
// giving a deliberately non-causal mutant.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "icll/model.hpp"

namespace testutil {

class ReferenceModel {
 public:
  ReferenceModel(const icll::TransformerModel<double>& m, bool causal) : m_(m), causal_(causal) {}

  std::vector<double> forward(std::span<const double> tokens) const {
    const auto& c = m_.config();
    const std::size_t d = c.d_emb, s = tokens.size();
    Mat h(s, std::vector<double>(d));
    const auto w_in = p("read_in.weight"), b_in = p("read_in.bias"), pos = p("pos_emb");
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t e = 0; e < d; ++e) h[i][e] = tokens[i] * w_in[e] + b_in[e] + pos[i * d + e];

    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      if (c.has_attention()) {
        const auto a = norm(h, p(pre + "ln1.gamma"), p(pre + "ln1.beta"));
        const auto qkv = linear(a, p(pre + "attn.w_qkv"), p(pre + "attn.b_qkv"), 3 * d);
        const std::size_t H = c.n_heads, dh = d / H;
        Mat ctx(s, std::vector<double>(d, 0.0));
        for (std::size_t hd = 0; hd < H; ++hd)
          for (std::size_t i = 0; i < s; ++i) {
            const std::size_t last = causal_ ? i + 1 : s;
            std::vector<double> w(last);
            for (std::size_t j = 0; j < last; ++j) {
              double dot = 0;
              for (std::size_t e = 0; e < dh; ++e) dot += qkv[i][hd * dh + e] * qkv[j][d + hd * dh + e];
              w[j] = dot / std::sqrt(double(dh));
            }
            const double mx = *std::max_element(w.begin(), w.end());
            double z = 0;
            for (auto& v : w) z += (v = std::exp(v - mx));
            for (std::size_t j = 0; j < last; ++j)
              for (std::size_t e = 0; e < dh; ++e) ctx[i][hd * dh + e] += w[j] / z * qkv[j][2 * d + hd * dh + e];
          }
        add_into(h, linear(ctx, p(pre + "attn.w_out"), p(pre + "attn.b_out"), d));
      }
      if (c.has_mlp()) {
        const auto a = norm(h, p(pre + "ln2.gamma"), p(pre + "ln2.beta"));
        auto u = linear(a, p(pre + "mlp.w_fc"), p(pre + "mlp.b_fc"), 4 * d);
        for (auto& row : u)
          for (auto& v : row) {
            if (c.activation == icll::Activation::relu) {
              v = std::max(v, 0.0);
            } else {
              const double k = std::sqrt(2.0 / std::numbers::pi);
              v = 0.5 * v * (1 + std::tanh(k * (v + 0.044715 * v * v * v)));
            }
          }
        add_into(h, linear(u, p(pre + "mlp.w_proj"), p(pre + "mlp.b_proj"), d));
      }
    }
    const auto f = norm(h, p("ln_f.gamma"), p("ln_f.beta"));
    const auto w_out = p("read_out.weight"), b_out = p("read_out.bias");
    std::vector<double> out;
    for (std::size_t i = 0; i < s; i += 2) {
      double v = b_out[0];
      for (std::size_t e = 0; e < d; ++e) v += f[i][e] * w_out[e];
      out.push_back(v);
    }
    return out;
  }

 private:
  using Mat = std::vector<std::vector<double>>;

  std::span<const double> p(const std::string& name) const { return m_.parameter(name).data(); }

  static Mat linear(const Mat& x, std::span<const double> w, std::span<const double> b, std::size_t n) {
    const std::size_t k = x[0].size();
    Mat y(x.size(), std::vector<double>(n));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double v = b[j];
        for (std::size_t t = 0; t < k; ++t) v += x[i][t] * w[t * n + j];
        y[i][j] = v;
      }
    return y;
  }

  static Mat norm(const Mat& x, std::span<const double> g, std::span<const double> b) {
    Mat y = x;
    for (auto& row : y) {
      double mean = 0, var = 0;
      for (double v : row) mean += v;
      mean /= double(row.size());
      for (double v : row) var += (v - mean) * (v - mean);
      var /= double(row.size());
      for (std::size_t e = 0; e < row.size(); ++e)
        row[e] = (row[e] - mean) / std::sqrt(var + 1e-5) * g[e] + b[e];
    }
    return y;
  }

  static void add_into(Mat& h, const Mat& delta) {
    for (std::size_t i = 0; i < h.size(); ++i)
      for (std::size_t e = 0; e < h[i].size(); ++e) h[i][e] += delta[i][e];
  }

  const icll::TransformerModel<double>& m_;
  bool causal_;
};

}  // namespace testutil

#pragma once

// Multi-head attention composed from primitive ops. Used to cross-check the
// fused kernel and, with the mask dropped, as a non-causal mutant.

#include <cmath>
#include <vector>

#include "icll/autodiff.hpp"

namespace testutil {

template <typename T>
icll::ad::Tensor<T> reference_attention(icll::ad::Graph<T>& g, const icll::ad::Tensor<T>& qkv,
                                        std::size_t batch, std::size_t seq, std::size_t heads,
                                        bool causal) {
  const std::size_t d = qkv.dim(1) / 3;
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<icll::ad::Tensor<T>> rows;
  for (std::size_t b = 0; b < batch; ++b) {
    auto block = g.slice_rows(qkv, b * seq, (b + 1) * seq);
    std::vector<icll::ad::Tensor<T>> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      auto q = g.slice_cols(block, h * dh, (h + 1) * dh);
      auto k = g.slice_cols(block, d + h * dh, d + (h + 1) * dh);
      auto v = g.slice_cols(block, 2 * d + h * dh, 2 * d + (h + 1) * dh);
      auto s = g.scale(g.matmul(q, g.transpose(k)), scale);
      auto p = causal ? g.causal_softmax(s) : g.softmax_lastdim(s);
      outs.push_back(g.matmul(p, v));
    }
    rows.push_back(g.concat_cols(outs));
  }
  return g.concat_rows(rows);
}

}  // namespace testutil

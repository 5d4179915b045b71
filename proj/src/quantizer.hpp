// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace dvnc {

// L learnable code vectors of dimension dim, shared across all segments and
// modules.
struct Codebook {
  int64_t size = 0;  // L
  int64_t dim = 0;   // segment dimension
  Tensor vectors;    // [L, dim], requires_grad

  static Codebook create(int64_t size, int64_t dim,
                         std::vector<double> values);
  static Codebook random_init(int64_t size, int64_t dim, uint64_t seed,
                              double range = 1.0);
  double at(int64_t code, int64_t d) const { return vectors.at(code, d); }
};

struct QuantizationResult {
  Tensor quantized;               // same shape as the input message
  std::vector<int64_t> indices;   // one code id per segment
  Tensor codebook_loss;           // scalar
  Tensor commitment_loss;         // scalar, beta already applied
};

struct GumbelConfig {
  double temperature = 1.0;
  bool hard = true;
  uint64_t seed = 0;
};

// Splits h into segments, snaps each to its nearest code vector (squared
// Euclidean distance, ties to the lowest index) and emits the two auxiliary
// losses. In training mode the quantized value routes the incoming gradient
// straight through to h; in evaluation mode it carries no gradient.
QuantizationResult quantize(const Tensor& h, const Codebook& cb, int64_t segments,
                            double beta, bool training);

// Nearest-code ids only, no graph side effects.
std::vector<int64_t> nearest_codes(const std::vector<double>& h,
                                   const Codebook& cb, int64_t segments);

// Lloyd's algorithm over [n, dim] samples. Initial centers are distinct
// samples drawn without replacement; empty clusters are reseeded to the
// sample farthest from its assigned center. sse_history, when given, records
// total within-cluster SSE after every assignment pass.
Codebook kmeans_init(const Tensor& samples, int64_t size, uint64_t seed,
                     int64_t max_iters, std::vector<double>* sse_history = nullptr);

// Gumbel-Softmax relaxation with logits = -||s_i - e_j||^2 per segment. With
// hard=true the value is the argmax code snapped straight-through onto the
// soft mixture. Losses are reported as zero for this variant.
QuantizationResult gumbel_quantize(const Tensor& h, const Codebook& cb,
                                   int64_t segments, const GumbelConfig& cfg);

// exp(entropy) of the code-usage distribution.
double perplexity(const std::vector<int64_t>& index_counts);

// task + codebook_weight * (codebook_loss + commitment_loss); the commitment
// term already carries beta.
Tensor total_loss(const Tensor& task, const Tensor& codebook_loss,
                  const Tensor& commitment_loss, double codebook_weight);

}  // namespace dvnc

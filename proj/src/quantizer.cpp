// SPDX-License-Identifier: Apache-2.0
#include "quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "rng.hpp"

namespace dvnc {

Codebook Codebook::create(int64_t size, int64_t dim, std::vector<double> values) {
  if (size < 1 || dim < 1) fail(ErrorKind::config, "codebook: size and dim must be >= 1");
  Codebook cb;
  cb.size = size;
  cb.dim = dim;
  cb.vectors = Tensor::from({size, dim}, std::move(values), /*requires_grad=*/true);
  return cb;
}

Codebook Codebook::random_init(int64_t size, int64_t dim, uint64_t seed, double range) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(size * dim));
  for (double& x : v) x = rng.uniform(-range, range);
  return create(size, dim, std::move(v));
}

namespace {

// Segment view bookkeeping shared by quantize / gumbel_quantize.
struct SegmentLayout {
  int64_t m = 0;
  int64_t segments = 0;
  int64_t dim = 0;
};

SegmentLayout segment_layout(const Tensor& h, const Codebook& cb, int64_t segments) {
  const int64_t m = h.numel();
  if (h.rank() == 2 && h.shape()[0] != 1)
    fail(ErrorKind::dimension, "quantize: message must be a vector");
  if (segments < 1) fail(ErrorKind::config, "quantize: segments must be >= 1");
  if (m % segments != 0)
    fail(ErrorKind::config, "quantize: message dim not divisible by segment count");
  if (m / segments != cb.dim)
    fail(ErrorKind::dimension, "quantize: segment dim does not match codebook dim");
  return {m, segments, cb.dim};
}

Tensor segment_of(const Tensor& h, int64_t i, int64_t dim) {
  if (h.rank() == 2) return slice(h, {0, i * dim}, {1, dim});
  return slice(h, {i * dim}, {dim});
}

int64_t nearest_code_of_segment(const std::vector<double>& h, int64_t offset,
                                const Codebook& cb) {
  const auto& e = cb.vectors.data();
  int64_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int64_t j = 0; j < cb.size; ++j) {
    double d = 0.0;
    for (int64_t k = 0; k < cb.dim; ++k) {
      const double diff = h[static_cast<size_t>(offset + k)] -
                          e[static_cast<size_t>(j * cb.dim + k)];
      d += diff * diff;
    }
    if (d < best_d) {  // strict: ties keep the lowest index
      best_d = d;
      best = j;
    }
  }
  return best;
}

}  // namespace

std::vector<int64_t> nearest_codes(const std::vector<double>& h, const Codebook& cb,
                                   int64_t segments) {
  std::vector<int64_t> out(static_cast<size_t>(segments));
  for (int64_t i = 0; i < segments; ++i)
    out[static_cast<size_t>(i)] = nearest_code_of_segment(h, i * cb.dim, cb);
  return out;
}

QuantizationResult quantize(const Tensor& h, const Codebook& cb, int64_t segments,
                            double beta, bool training) {
  const SegmentLayout lay = segment_layout(h, cb, segments);
  if (beta < 0.0) fail(ErrorKind::config, "quantize: beta must be nonnegative");

  QuantizationResult res;
  res.indices = nearest_codes(h.data(), cb, segments);

  // Fused forward: both losses share ||s_i - e_{o_i}||^2 per segment, and the
  // backward rules scatter exactly where the stop-gradients allow (codebook
  // loss into selected code rows, commitment loss into h, task gradient
  // straight through to h).
  const auto& hv = h.data();
  const auto& ev = cb.vectors.data();
  std::vector<double> codes(static_cast<size_t>(lay.m));
  auto diff = std::make_shared<std::vector<double>>(static_cast<size_t>(lay.m));
  double sum_sq = 0.0;
  for (int64_t i = 0; i < lay.segments; ++i) {
    const int64_t code = res.indices[static_cast<size_t>(i)];
    for (int64_t d = 0; d < lay.dim; ++d) {
      const size_t k = static_cast<size_t>(i * lay.dim + d);
      codes[k] = ev[static_cast<size_t>(code * lay.dim + d)];
      (*diff)[k] = hv[k] - codes[k];
      sum_sq += (*diff)[k] * (*diff)[k];
    }
  }

  auto idx = std::make_shared<std::vector<int64_t>>(res.indices);
  auto cb_node = cb.vectors.node();
  auto h_node = h.node();
  const int64_t dim = lay.dim;

  res.codebook_loss = custom_op(
      "vq-codebook-loss", {1}, {sum_sq}, {cb.vectors},
      [cb_node, diff, idx, dim](detail::Node& node) {
        detail::ensure_grad(*cb_node);
        const double g = node.grad[0];
        for (size_t i = 0; i < idx->size(); ++i)
          for (int64_t d = 0; d < dim; ++d)
            cb_node->grad[static_cast<size_t>((*idx)[i] * dim + d)] -=
                g * 2.0 * (*diff)[i * static_cast<size_t>(dim) + static_cast<size_t>(d)];
      });
  res.commitment_loss = custom_op(
      "vq-commitment-loss", {1}, {beta * sum_sq}, {h},
      [h_node, diff, beta](detail::Node& node) {
        detail::ensure_grad(*h_node);
        const double g = node.grad[0];
        for (size_t k = 0; k < diff->size(); ++k)
          h_node->grad[k] += g * beta * 2.0 * (*diff)[k];
      });
  res.quantized =
      training ? custom_op("vq-straight-through", h.shape(), std::move(codes), {h},
                           [h_node](detail::Node& node) {
                             detail::ensure_grad(*h_node);
                             for (size_t k = 0; k < node.grad.size(); ++k)
                               h_node->grad[k] += node.grad[k];
                           })
               : Tensor::from(h.shape(), std::move(codes));
  return res;
}

Codebook kmeans_init(const Tensor& samples, int64_t size, uint64_t seed,
                     int64_t max_iters, std::vector<double>* sse_history) {
  if (samples.rank() != 2) fail(ErrorKind::dimension, "kmeans: samples must be [n, dim]");
  const int64_t n = samples.shape()[0];
  const int64_t dim = samples.shape()[1];
  if (n < size)
    fail(ErrorKind::insufficient_data,
         "kmeans: fewer samples than requested clusters");
  if (max_iters < 1) fail(ErrorKind::config, "kmeans: max_iters must be >= 1");
  const auto& x = samples.data();

  // Distinct starting samples without replacement (partial Fisher-Yates).
  Rng rng(seed);
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (int64_t i = 0; i < size; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  std::vector<double> centers(static_cast<size_t>(size * dim));
  for (int64_t c = 0; c < size; ++c)
    for (int64_t d = 0; d < dim; ++d)
      centers[static_cast<size_t>(c * dim + d)] =
          x[static_cast<size_t>(perm[static_cast<size_t>(c)] * dim + d)];

  std::vector<int64_t> assign(static_cast<size_t>(n), -1);
  std::vector<double> dist(static_cast<size_t>(n), 0.0);

  auto assign_pass = [&]() {
    bool changed = false;
    double sse = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      int64_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < size; ++c) {
        double d = 0.0;
        for (int64_t k = 0; k < dim; ++k) {
          const double diff = x[static_cast<size_t>(i * dim + k)] -
                              centers[static_cast<size_t>(c * dim + k)];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[static_cast<size_t>(i)] != best) {
        assign[static_cast<size_t>(i)] = best;
        changed = true;
      }
      dist[static_cast<size_t>(i)] = best_d;
      sse += best_d;
    }
    if (sse_history) sse_history->push_back(sse);
    return changed;
  };

  for (int64_t iter = 0; iter < max_iters; ++iter) {
    if (!assign_pass()) break;

    std::vector<double> sums(static_cast<size_t>(size * dim), 0.0);
    std::vector<int64_t> counts(static_cast<size_t>(size), 0);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t c = assign[static_cast<size_t>(i)];
      counts[static_cast<size_t>(c)]++;
      for (int64_t k = 0; k < dim; ++k)
        sums[static_cast<size_t>(c * dim + k)] += x[static_cast<size_t>(i * dim + k)];
    }
    for (int64_t c = 0; c < size; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) continue;
      for (int64_t k = 0; k < dim; ++k)
        centers[static_cast<size_t>(c * dim + k)] =
            sums[static_cast<size_t>(c * dim + k)] /
            static_cast<double>(counts[static_cast<size_t>(c)]);
    }
    // Reseed empty clusters to the sample farthest from its assigned center.
    for (int64_t c = 0; c < size; ++c) {
      if (counts[static_cast<size_t>(c)] != 0) continue;
      int64_t far = 0;
      for (int64_t i = 1; i < n; ++i)
        if (dist[static_cast<size_t>(i)] > dist[static_cast<size_t>(far)]) far = i;
      for (int64_t k = 0; k < dim; ++k)
        centers[static_cast<size_t>(c * dim + k)] = x[static_cast<size_t>(far * dim + k)];
      dist[static_cast<size_t>(far)] = 0.0;
    }
  }

  return Codebook::create(size, dim, std::move(centers));
}

QuantizationResult gumbel_quantize(const Tensor& h, const Codebook& cb,
                                   int64_t segments, const GumbelConfig& cfg) {
  const SegmentLayout lay = segment_layout(h, cb, segments);
  if (!(cfg.temperature > 0.0))
    fail(ErrorKind::config, "gumbel: temperature must be positive");

  Rng rng(cfg.seed);
  QuantizationResult res;
  std::vector<Tensor> out_segments;
  for (int64_t i = 0; i < lay.segments; ++i) {
    Tensor s = segment_of(h, i, lay.dim);
    Tensor s_row = h.rank() == 2 ? s : reshape(s, {1, lay.dim});

    std::vector<Tensor> logit_parts;
    for (int64_t j = 0; j < cb.size; ++j) {
      Tensor e = slice(cb.vectors, {j, 0}, {1, cb.dim});
      logit_parts.push_back(scale(sq_l2(sub(s_row, e)), -1.0));
    }
    Tensor logits = cb.size == 1 ? reshape(logit_parts[0], {1, 1})
                                 : reshape(concat(logit_parts, 0), {1, cb.size});

    std::vector<double> noise(static_cast<size_t>(cb.size));
    for (double& g : noise) {
      double u;
      do {
        u = rng.next_double();
      } while (u <= 0.0);
      g = -std::log(-std::log(u));
    }
    Tensor perturbed = add(logits, Tensor::from({1, cb.size}, noise));
    Tensor weights = softmax_lastdim(scale(perturbed, 1.0 / cfg.temperature));
    Tensor soft = matmul(weights, cb.vectors);  // [1, dim]

    int64_t best = 0;
    for (int64_t j = 1; j < cb.size; ++j)
      if (weights.at(0, j) > weights.at(0, best)) best = j;
    res.indices.push_back(best);

    Tensor out_row = soft;
    if (cfg.hard) {
      Tensor hard_row = slice(cb.vectors, {best, 0}, {1, cb.dim});
      out_row = straight_through(hard_row, soft);
    }
    out_segments.push_back(h.rank() == 2 ? out_row : reshape(out_row, {lay.dim}));
  }

  res.quantized = lay.segments == 1 ? out_segments[0]
                                    : concat(out_segments, h.rank() == 2 ? 1 : 0);
  res.codebook_loss = Tensor::scalar(0.0);
  res.commitment_loss = Tensor::scalar(0.0);
  return res;
}

double perplexity(const std::vector<int64_t>& index_counts) {
  int64_t total = 0;
  for (int64_t c : index_counts) {
    if (c < 0) fail(ErrorKind::contract, "perplexity: negative count");
    total += c;
  }
  if (total == 0) fail(ErrorKind::contract, "perplexity: all counts are zero");
  double entropy = 0.0;
  for (int64_t c : index_counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

Tensor total_loss(const Tensor& task, const Tensor& codebook_loss,
                  const Tensor& commitment_loss, double codebook_weight) {
  if (codebook_weight < 0.0)
    fail(ErrorKind::config, "total_loss: codebook_weight must be nonnegative");
  return add(task, scale(add(codebook_loss, commitment_loss), codebook_weight));
}

}  // namespace dvnc

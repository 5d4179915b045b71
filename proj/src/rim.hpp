// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "quantizer.hpp"
#include "tensor.hpp"

namespace dvnc {

enum class Discretize { none, vq, gumbel };

struct RimConfig {
  int64_t modules = 2;       // M
  int64_t active = 2;        // K, top-K modules updated per step
  int64_t hidden = 32;       // per-module hidden size (message dim m)
  int64_t input_dim = 2;
  int64_t readout_dim = 1;
  Discretize discretize = Discretize::none;
  int64_t codebook_size = 16;  // L
  int64_t segments = 4;        // G
  double beta = 0.25;
  double codebook_weight = 0.25;
  double gumbel_tau = 1.0;
  bool gumbel_hard = true;
  double dropout_p = 0.0;
  uint64_t seed = 0;

  void validate() const;
  int64_t segment_dim() const { return hidden / segments; }
};

// All learnable arrays. The codebook is shared across segments and modules.
struct RimParams {
  struct Module {
    Tensor lstm_wx;   // [hidden (attended input), 4*hidden]
    Tensor lstm_wh;   // [hidden, 4*hidden]
    Tensor lstm_b;    // [1, 4*hidden]
    Tensor inatt_wq;  // [hidden, hidden]
  };
  std::vector<Module> modules;
  Tensor inatt_wk;  // [input_dim, hidden]
  Tensor inatt_wv;  // [input_dim, hidden]
  Tensor comm_wq, comm_wk, comm_wv;  // [hidden, hidden]
  Tensor readout_w;  // [modules*hidden, readout_dim]
  Tensor readout_b;  // [1, readout_dim]
  Codebook codebook;  // defined when discretize != none

  static RimParams init(const RimConfig& cfg, uint64_t seed);
  std::vector<std::pair<std::string, Tensor>> named() const;
  void zero_grad();
  // Deep copy with fresh leaves; grads are not carried over.
  RimParams clone() const;
};

struct RimState {
  Tensor z;  // [modules, hidden]
  Tensor c;  // [modules, hidden] LSTM cell
  int64_t step = 0;

  static RimState initial(const RimConfig& cfg);
};

// Auxiliary quantities accumulated across modules and steps.
struct RimAux {
  Tensor codebook_loss;    // scalar
  Tensor commitment_loss;  // scalar
  std::vector<int64_t> code_counts;  // codebook usage, empty when no codebook

  static RimAux zero(const RimConfig& cfg);
  void absorb(const RimAux& other);
};

// softmax(Q K^T / sqrt(d)) V
Tensor soft_attention(const Tensor& queries, const Tensor& keys, const Tensor& values);

struct InputAttention {
  std::vector<int64_t> selected;   // K module ids, ranked then sorted ascending
  std::vector<Tensor> attended;    // per module, [1, hidden]
  std::vector<double> scores;      // attention mass on the non-null input
};

// Each module queries {x_t, null token}; modules are ranked by attention mass
// on the non-null input, ties broken toward the lower module index.
InputAttention input_attention_topk(const RimState& state, const Tensor& x_t,
                                    const RimParams& params, int64_t top_k);

// One step of the recurrence: top-K modules update through their LSTM cells,
// the rest copy hidden and cell state; every module then reads the
// communication attention over all candidate states and adds the (optionally
// discretized) message as a residual.
std::pair<RimState, RimAux> rim_step(const RimState& state, const Tensor& x_t,
                                     const RimParams& params, const RimConfig& cfg,
                                     bool training);

// As rim_step, additionally appending every pre-quantization communication
// vector to comm_collector when it is non-null.
std::pair<RimState, RimAux> rim_step_collect(const RimState& state, const Tensor& x_t,
                                             const RimParams& params,
                                             const RimConfig& cfg, bool training,
                                             std::vector<double>* comm_collector);

struct RolloutResult {
  Tensor readout;  // [1, readout_dim]
  RimAux aux;
  RimState final_state;
};

// Runs rim_step over the rows of seq [T, input_dim] and applies the linear
// readout to the concatenated final hidden states. An optional collector
// receives every pre-quantization communication vector (for codebook
// bootstrapping).
RolloutResult rollout(const Tensor& seq, const RimParams& params,
                      const RimConfig& cfg, bool training,
                      std::vector<double>* comm_collector = nullptr);

}  // namespace dvnc

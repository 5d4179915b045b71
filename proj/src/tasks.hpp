// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace dvnc {

struct AddingSpec {
  int64_t length = 50;     // gap length (sequence length)
  double max_value = 1.0;  // channel-0 values are uniform in [0, max_value]
  int64_t batch = 1;
  uint64_t seed = 0;
  void validate() const;
};

struct CopyingSpec {
  int64_t payload_len = 4;
  int64_t delay = 10;
  int64_t n_symbols = 8;
  int64_t batch = 1;
  uint64_t seed = 0;
  void validate() const;
  // classes: 0 = blank, 1..n_symbols = payload symbols, n_symbols + 1 = go
  int64_t n_classes() const { return n_symbols + 2; }
  int64_t total_len() const { return payload_len + delay + payload_len; }
};

struct AddingBatch {
  // flattened [batch, length, 2]: channel 0 value, channel 1 marker
  std::vector<double> inputs;
  std::vector<double> targets;  // [batch]
  int64_t batch = 0;
  int64_t length = 0;

  // [length, 2] sequence for one sample
  Tensor sequence(int64_t b) const;
  double target(int64_t b) const { return targets[static_cast<size_t>(b)]; }
};

struct CopyingBatch {
  // flattened one-hot [batch, total_len, n_classes]
  std::vector<double> inputs;
  std::vector<int64_t> targets;  // [batch, total_len]; blank outside recall
  int64_t batch = 0;
  int64_t total_len = 0;
  int64_t n_classes = 0;
  int64_t payload_len = 0;

  Tensor sequence(int64_t b) const;
  int64_t target(int64_t b, int64_t t) const {
    return targets[static_cast<size_t>(b * total_len + t)];
  }
  int64_t recall_start() const { return total_len - payload_len; }
};

// Two markers sampled without replacement, the earlier one always in the
// first half; target is the sum of the two marked channel-0 values. Pure
// function of the spec.
AddingBatch adding_batch(const AddingSpec& spec);

// Payload symbols uniform over {1..n_symbols}; blanks during the delay; a
// "go" symbol at recall onset; targets carry the payload at the recall
// positions and blank elsewhere. Pure function of the spec.
CopyingBatch copying_batch(const CopyingSpec& spec);

}  // namespace dvnc

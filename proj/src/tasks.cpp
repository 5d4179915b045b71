// SPDX-License-Identifier: Apache-2.0
#include "tasks.hpp"

#include "rng.hpp"

namespace dvnc {

void AddingSpec::validate() const {
  if (length < 2) fail(ErrorKind::config, "adding: length must be >= 2");
  if (max_value <= 0.0) fail(ErrorKind::config, "adding: max_value must be positive");
  if (batch < 1) fail(ErrorKind::config, "adding: batch must be >= 1");
}

void CopyingSpec::validate() const {
  if (payload_len < 1) fail(ErrorKind::config, "copying: payload_len must be >= 1");
  if (delay < 0) fail(ErrorKind::config, "copying: delay must be nonnegative");
  if (n_symbols < 2) fail(ErrorKind::config, "copying: n_symbols must be >= 2");
  if (batch < 1) fail(ErrorKind::config, "copying: batch must be >= 1");
}

Tensor AddingBatch::sequence(int64_t b) const {
  const size_t off = static_cast<size_t>(b * length * 2);
  std::vector<double> seq(inputs.begin() + off, inputs.begin() + off + length * 2);
  return Tensor::from({length, 2}, std::move(seq));
}

Tensor CopyingBatch::sequence(int64_t b) const {
  const size_t off = static_cast<size_t>(b * total_len * n_classes);
  std::vector<double> seq(inputs.begin() + off,
                          inputs.begin() + off + total_len * n_classes);
  return Tensor::from({total_len, n_classes}, std::move(seq));
}

AddingBatch adding_batch(const AddingSpec& spec) {
  spec.validate();
  Rng rng(Rng::derive(spec.seed, 0x41444431));

  AddingBatch out;
  out.batch = spec.batch;
  out.length = spec.length;
  out.inputs.assign(static_cast<size_t>(spec.batch * spec.length * 2), 0.0);
  out.targets.assign(static_cast<size_t>(spec.batch), 0.0);

  const int64_t half = spec.length / 2;
  for (int64_t b = 0; b < spec.batch; ++b) {
    double* seq = out.inputs.data() + b * spec.length * 2;
    for (int64_t t = 0; t < spec.length; ++t)
      seq[t * 2] = rng.next_double() * spec.max_value;

    const int64_t first = static_cast<int64_t>(rng.below(static_cast<uint64_t>(half)));
    int64_t second = first;
    while (second == first)
      second = static_cast<int64_t>(rng.below(static_cast<uint64_t>(spec.length)));
    seq[first * 2 + 1] = 1.0;
    seq[second * 2 + 1] = 1.0;
    out.targets[static_cast<size_t>(b)] = seq[first * 2] + seq[second * 2];
  }
  return out;
}

CopyingBatch copying_batch(const CopyingSpec& spec) {
  spec.validate();
  Rng rng(Rng::derive(spec.seed, 0x434f5059));

  CopyingBatch out;
  out.batch = spec.batch;
  out.total_len = spec.total_len();
  out.n_classes = spec.n_classes();
  out.payload_len = spec.payload_len;
  out.inputs.assign(static_cast<size_t>(spec.batch * out.total_len * out.n_classes), 0.0);
  out.targets.assign(static_cast<size_t>(spec.batch * out.total_len), 0);

  const int64_t blank = 0;
  const int64_t go = spec.n_symbols + 1;
  const int64_t recall_start = out.total_len - spec.payload_len;

  for (int64_t b = 0; b < spec.batch; ++b) {
    double* seq = out.inputs.data() + b * out.total_len * out.n_classes;
    int64_t* tgt = out.targets.data() + b * out.total_len;

    std::vector<int64_t> payload(static_cast<size_t>(spec.payload_len));
    for (int64_t p = 0; p < spec.payload_len; ++p)
      payload[static_cast<size_t>(p)] =
          1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(spec.n_symbols)));

    for (int64_t t = 0; t < out.total_len; ++t) {
      int64_t cls = blank;
      if (t < spec.payload_len)
        cls = payload[static_cast<size_t>(t)];
      else if (t == recall_start)
        cls = go;  // the go symbol marks recall onset
      seq[t * out.n_classes + cls] = 1.0;
      tgt[t] = t >= recall_start ? payload[static_cast<size_t>(t - recall_start)] : blank;
    }
  }
  return out;
}

}  // namespace dvnc

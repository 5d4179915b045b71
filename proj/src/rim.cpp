// SPDX-License-Identifier: Apache-2.0
#include "rim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rng.hpp"

namespace dvnc {

void RimConfig::validate() const {
  if (modules < 1) fail(ErrorKind::config, "rim: modules must be >= 1");
  if (active < 1 || active > modules)
    fail(ErrorKind::config, "rim: active must satisfy 1 <= K <= M");
  if (hidden < 1) fail(ErrorKind::config, "rim: hidden must be >= 1");
  if (input_dim < 1) fail(ErrorKind::config, "rim: input_dim must be >= 1");
  if (readout_dim < 1) fail(ErrorKind::config, "rim: readout_dim must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    fail(ErrorKind::config, "rim: dropout must be in [0,1)");
  if (discretize != Discretize::none) {
    if (segments < 1) fail(ErrorKind::config, "rim: segments must be >= 1");
    if (hidden % segments != 0)
      fail(ErrorKind::config, "rim: hidden must be divisible by segments");
    if (codebook_size < 1) fail(ErrorKind::config, "rim: codebook_size must be >= 1");
    if (beta < 0.0) fail(ErrorKind::config, "rim: beta must be nonnegative");
    if (codebook_weight < 0.0)
      fail(ErrorKind::config, "rim: codebook_weight must be nonnegative");
    if (discretize == Discretize::gumbel && !(gumbel_tau > 0.0))
      fail(ErrorKind::config, "rim: gumbel_tau must be positive");
  }
}

namespace {

Tensor uniform_init(Shape shape, Rng& rng, double scale_override = 0.0) {
  const int64_t fan_in = shape[0];
  const double a =
      scale_override > 0.0 ? scale_override : 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(-a, a);
  return Tensor::from(std::move(shape), std::move(v), /*requires_grad=*/true);
}

Tensor row(const Tensor& m, int64_t i) {
  return slice(m, {i, 0}, {1, m.shape()[1]});
}

}  // namespace

RimParams RimParams::init(const RimConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::derive(seed, 0x52494d50));
  const int64_t h = cfg.hidden;

  RimParams p;
  p.modules.resize(static_cast<size_t>(cfg.modules));
  for (auto& m : p.modules) {
    m.lstm_wx = uniform_init({h, 4 * h}, rng);
    m.lstm_wh = uniform_init({h, 4 * h}, rng);
    // forget-gate bias starts at 1 so the cell can retain over long gaps
    std::vector<double> bias(static_cast<size_t>(4 * h), 0.0);
    for (int64_t d = 0; d < h; ++d) bias[static_cast<size_t>(h + d)] = 1.0;
    m.lstm_b = Tensor::from({1, 4 * h}, std::move(bias), /*requires_grad=*/true);
    m.inatt_wq = uniform_init({h, h}, rng);
  }
  p.inatt_wk = uniform_init({cfg.input_dim, h}, rng);
  p.inatt_wv = uniform_init({cfg.input_dim, h}, rng);
  p.comm_wq = uniform_init({h, h}, rng);
  p.comm_wk = uniform_init({h, h}, rng);
  p.comm_wv = uniform_init({h, h}, rng);
  p.readout_w = uniform_init({cfg.modules * h, cfg.readout_dim}, rng);
  p.readout_b = Tensor::zeros({1, cfg.readout_dim}, /*requires_grad=*/true);
  if (cfg.discretize != Discretize::none)
    p.codebook = Codebook::random_init(cfg.codebook_size, cfg.segment_dim(),
                                       rng.next_u64());
  return p;
}

std::vector<std::pair<std::string, Tensor>> RimParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < modules.size(); ++i) {
    const std::string base = "module" + std::to_string(i) + ".";
    out.emplace_back(base + "lstm.wx", modules[i].lstm_wx);
    out.emplace_back(base + "lstm.wh", modules[i].lstm_wh);
    out.emplace_back(base + "lstm.b", modules[i].lstm_b);
    out.emplace_back(base + "inatt.wq", modules[i].inatt_wq);
  }
  out.emplace_back("inatt.wk", inatt_wk);
  out.emplace_back("inatt.wv", inatt_wv);
  out.emplace_back("comm.wq", comm_wq);
  out.emplace_back("comm.wk", comm_wk);
  out.emplace_back("comm.wv", comm_wv);
  out.emplace_back("readout.w", readout_w);
  out.emplace_back("readout.b", readout_b);
  if (codebook.vectors.defined()) out.emplace_back("codebook", codebook.vectors);
  return out;
}

void RimParams::zero_grad() {
  for (auto& [name, t] : named()) {
    (void)name;
    const_cast<Tensor&>(t).zero_grad();
  }
}

RimParams RimParams::clone() const {
  auto copy_of = [](const Tensor& t) {
    return Tensor::from(t.shape(), t.data(), t.requires_grad());
  };
  RimParams c;
  c.modules.reserve(modules.size());
  for (const Module& m : modules)
    c.modules.push_back({copy_of(m.lstm_wx), copy_of(m.lstm_wh), copy_of(m.lstm_b),
                         copy_of(m.inatt_wq)});
  c.inatt_wk = copy_of(inatt_wk);
  c.inatt_wv = copy_of(inatt_wv);
  c.comm_wq = copy_of(comm_wq);
  c.comm_wk = copy_of(comm_wk);
  c.comm_wv = copy_of(comm_wv);
  c.readout_w = copy_of(readout_w);
  c.readout_b = copy_of(readout_b);
  if (codebook.vectors.defined()) {
    c.codebook.size = codebook.size;
    c.codebook.dim = codebook.dim;
    c.codebook.vectors = copy_of(codebook.vectors);
  }
  return c;
}

RimState RimState::initial(const RimConfig& cfg) {
  RimState s;
  s.z = Tensor::zeros({cfg.modules, cfg.hidden});
  s.c = Tensor::zeros({cfg.modules, cfg.hidden});
  s.step = 0;
  return s;
}

RimAux RimAux::zero(const RimConfig& cfg) {
  RimAux a;
  a.codebook_loss = Tensor::scalar(0.0);
  a.commitment_loss = Tensor::scalar(0.0);
  if (cfg.discretize != Discretize::none)
    a.code_counts.assign(static_cast<size_t>(cfg.codebook_size), 0);
  return a;
}

void RimAux::absorb(const RimAux& other) {
  codebook_loss = add(codebook_loss, other.codebook_loss);
  commitment_loss = add(commitment_loss, other.commitment_loss);
  if (code_counts.size() < other.code_counts.size())
    code_counts.resize(other.code_counts.size(), 0);
  for (size_t i = 0; i < other.code_counts.size(); ++i)
    code_counts[i] += other.code_counts[i];
}

Tensor soft_attention(const Tensor& queries, const Tensor& keys, const Tensor& values) {
  if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2)
    fail(ErrorKind::dimension, "soft_attention: rank-2 inputs required");
  if (queries.shape()[1] != keys.shape()[1])
    fail(ErrorKind::dimension, "soft_attention: query/key dims disagree");
  if (keys.shape()[0] != values.shape()[0])
    fail(ErrorKind::dimension, "soft_attention: key/value counts disagree");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.shape()[1]));
  Tensor scores = scale(matmul(queries, transpose(keys)), inv_sqrt_d);
  return matmul(softmax_lastdim(scores), values);
}

InputAttention input_attention_topk(const RimState& state, const Tensor& x_t,
                                    const RimParams& params, int64_t top_k) {
  const int64_t m_count = state.z.shape()[0];
  if (top_k < 1 || top_k > m_count)
    fail(ErrorKind::config, "input attention: bad top_k");

  Tensor x_row = x_t.rank() == 2 ? x_t : reshape(x_t, {1, x_t.numel()});
  // Null token is the zero vector; with bias-free projections its key and
  // value are exactly zero.
  Tensor key_x = matmul(x_row, params.inatt_wk);
  Tensor val_x = matmul(x_row, params.inatt_wv);
  Tensor keys = concat({key_x, Tensor::zeros(key_x.shape())}, 0);
  Tensor vals = concat({val_x, Tensor::zeros(val_x.shape())}, 0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(keys.shape()[1]));

  InputAttention out;
  out.attended.reserve(static_cast<size_t>(m_count));
  for (int64_t i = 0; i < m_count; ++i) {
    Tensor q = matmul(row(state.z, i), params.modules[static_cast<size_t>(i)].inatt_wq);
    Tensor weights = softmax_lastdim(scale(matmul(q, transpose(keys)), inv_sqrt_d));
    out.scores.push_back(weights.at(0, 0));
    out.attended.push_back(matmul(weights, vals));
  }

  std::vector<int64_t> order(static_cast<size_t>(m_count));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return out.scores[static_cast<size_t>(a)] > out.scores[static_cast<size_t>(b)];
  });
  out.selected.assign(order.begin(), order.begin() + top_k);
  std::sort(out.selected.begin(), out.selected.end());
  return out;
}

namespace {

// Saved activations for the fused LSTM backward.
struct LstmSaved {
  std::vector<double> in_g, forget_g, cand, out_g, tanh_c;
};

// Standard 4-gate LSTM cell on a [1, hidden] state row, fused into two
// custom nodes (hidden and cell outputs). The two backward closures split
// the chain rule: the hidden-output node carries everything reached through
// z', the cell-output node the direct c' path.
std::pair<Tensor, Tensor> lstm_cell(const Tensor& input, const Tensor& z_prev,
                                    const Tensor& c_prev,
                                    const RimParams::Module& w, int64_t hidden) {
  const int64_t h = hidden;
  const auto& xv = input.data();
  const auto& zv = z_prev.data();
  const auto& cv = c_prev.data();
  const auto& wx = w.lstm_wx.data();
  const auto& wh = w.lstm_wh.data();
  const auto& bias = w.lstm_b.data();
  const int64_t in_dim = input.numel();

  std::vector<double> gates(bias.begin(), bias.end());
  for (int64_t k = 0; k < in_dim; ++k) {
    const double x = xv[static_cast<size_t>(k)];
    if (x == 0.0) continue;
    const double* row = wx.data() + k * 4 * h;
    for (int64_t d = 0; d < 4 * h; ++d) gates[static_cast<size_t>(d)] += x * row[d];
  }
  for (int64_t k = 0; k < h; ++k) {
    const double z = zv[static_cast<size_t>(k)];
    if (z == 0.0) continue;
    const double* row = wh.data() + k * 4 * h;
    for (int64_t d = 0; d < 4 * h; ++d) gates[static_cast<size_t>(d)] += z * row[d];
  }

  auto saved = std::make_shared<LstmSaved>();
  saved->in_g.resize(static_cast<size_t>(h));
  saved->forget_g.resize(static_cast<size_t>(h));
  saved->cand.resize(static_cast<size_t>(h));
  saved->out_g.resize(static_cast<size_t>(h));
  saved->tanh_c.resize(static_cast<size_t>(h));
  std::vector<double> c_new(static_cast<size_t>(h));
  std::vector<double> z_new(static_cast<size_t>(h));
  auto sigm = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (int64_t d = 0; d < h; ++d) {
    const double ig = sigm(gates[static_cast<size_t>(d)]);
    const double fg = sigm(gates[static_cast<size_t>(h + d)]);
    const double cd = std::tanh(gates[static_cast<size_t>(2 * h + d)]);
    const double og = sigm(gates[static_cast<size_t>(3 * h + d)]);
    const double cn = fg * cv[static_cast<size_t>(d)] + ig * cd;
    saved->in_g[static_cast<size_t>(d)] = ig;
    saved->forget_g[static_cast<size_t>(d)] = fg;
    saved->cand[static_cast<size_t>(d)] = cd;
    saved->out_g[static_cast<size_t>(d)] = og;
    saved->tanh_c[static_cast<size_t>(d)] = std::tanh(cn);
    c_new[static_cast<size_t>(d)] = cn;
    z_new[static_cast<size_t>(d)] = og * saved->tanh_c[static_cast<size_t>(d)];
  }

  auto xn = input.node();
  auto zn = z_prev.node();
  auto cn_prev = c_prev.node();
  auto wxn = w.lstm_wx.node();
  auto whn = w.lstm_wh.node();
  auto bn = w.lstm_b.node();

  // Shared chain: given d(gates) pull into x, z, Wx, Wh, b; given dct pull
  // into c_prev.
  auto pull = [=](const std::vector<double>& dct, const std::vector<double>* dz_out) {
    std::vector<double> dg(static_cast<size_t>(4 * h), 0.0);
    for (int64_t d = 0; d < h; ++d) {
      const double ig = saved->in_g[static_cast<size_t>(d)];
      const double fg = saved->forget_g[static_cast<size_t>(d)];
      const double cd = saved->cand[static_cast<size_t>(d)];
      const double og = saved->out_g[static_cast<size_t>(d)];
      dg[static_cast<size_t>(d)] = dct[static_cast<size_t>(d)] * cd * ig * (1.0 - ig);
      dg[static_cast<size_t>(h + d)] = dct[static_cast<size_t>(d)] *
                                       cn_prev->value[static_cast<size_t>(d)] * fg *
                                       (1.0 - fg);
      dg[static_cast<size_t>(2 * h + d)] =
          dct[static_cast<size_t>(d)] * ig * (1.0 - cd * cd);
      if (dz_out)
        dg[static_cast<size_t>(3 * h + d)] = (*dz_out)[static_cast<size_t>(d)] *
                                             saved->tanh_c[static_cast<size_t>(d)] *
                                             og * (1.0 - og);
    }
    if (xn->requires_grad) {
      detail::ensure_grad(*xn);
      for (int64_t k = 0; k < in_dim; ++k) {
        double acc = 0.0;
        const double* row = wxn->value.data() + k * 4 * h;
        for (int64_t d = 0; d < 4 * h; ++d) acc += dg[static_cast<size_t>(d)] * row[d];
        xn->grad[static_cast<size_t>(k)] += acc;
      }
    }
    if (zn->requires_grad) {
      detail::ensure_grad(*zn);
      for (int64_t k = 0; k < h; ++k) {
        double acc = 0.0;
        const double* row = whn->value.data() + k * 4 * h;
        for (int64_t d = 0; d < 4 * h; ++d) acc += dg[static_cast<size_t>(d)] * row[d];
        zn->grad[static_cast<size_t>(k)] += acc;
      }
    }
    if (wxn->requires_grad) {
      detail::ensure_grad(*wxn);
      for (int64_t k = 0; k < in_dim; ++k) {
        const double x = xn->value[static_cast<size_t>(k)];
        if (x == 0.0) continue;
        double* row = wxn->grad.data() + k * 4 * h;
        for (int64_t d = 0; d < 4 * h; ++d) row[d] += x * dg[static_cast<size_t>(d)];
      }
    }
    if (whn->requires_grad) {
      detail::ensure_grad(*whn);
      for (int64_t k = 0; k < h; ++k) {
        const double z = zn->value[static_cast<size_t>(k)];
        if (z == 0.0) continue;
        double* row = whn->grad.data() + k * 4 * h;
        for (int64_t d = 0; d < 4 * h; ++d) row[d] += z * dg[static_cast<size_t>(d)];
      }
    }
    if (bn->requires_grad) {
      detail::ensure_grad(*bn);
      for (int64_t d = 0; d < 4 * h; ++d) bn->grad[static_cast<size_t>(d)] += dg[static_cast<size_t>(d)];
    }
    if (cn_prev->requires_grad) {
      detail::ensure_grad(*cn_prev);
      for (int64_t d = 0; d < h; ++d)
        cn_prev->grad[static_cast<size_t>(d)] +=
            dct[static_cast<size_t>(d)] * saved->forget_g[static_cast<size_t>(d)];
    }
  };

  std::vector<Tensor> parents = {input,     z_prev,    c_prev,
                                 w.lstm_wx, w.lstm_wh, w.lstm_b};
  Tensor z_out = custom_op(
      "lstm-hidden", {1, h}, std::move(z_new), parents,
      [=](detail::Node& node) {
        // everything reachable through z': output gate plus the c' chain
        std::vector<double> dct(static_cast<size_t>(h));
        for (int64_t d = 0; d < h; ++d) {
          const double th = saved->tanh_c[static_cast<size_t>(d)];
          dct[static_cast<size_t>(d)] = node.grad[static_cast<size_t>(d)] *
                                        saved->out_g[static_cast<size_t>(d)] *
                                        (1.0 - th * th);
        }
        pull(dct, &node.grad);
      });
  Tensor c_out = custom_op(
      "lstm-cell", {1, h}, std::move(c_new), parents,
      [=](detail::Node& node) { pull(node.grad, nullptr); });
  return {z_out, c_out};
}

}  // namespace

std::pair<RimState, RimAux> rim_step(const RimState& state, const Tensor& x_t,
                                     const RimParams& params, const RimConfig& cfg,
                                     bool training) {
  return rim_step_collect(state, x_t, params, cfg, training, nullptr);
}

std::pair<RimState, RimAux> rim_step_collect(const RimState& state, const Tensor& x_t,
                                             const RimParams& params,
                                             const RimConfig& cfg, bool training,
                                             std::vector<double>* comm_collector) {
  cfg.validate();
  InputAttention att = input_attention_topk(state, x_t, params, cfg.active);
  std::vector<bool> active(static_cast<size_t>(cfg.modules), false);
  for (int64_t i : att.selected) active[static_cast<size_t>(i)] = true;

  std::vector<Tensor> z_hat(static_cast<size_t>(cfg.modules));
  std::vector<Tensor> c_new(static_cast<size_t>(cfg.modules));
  for (int64_t i = 0; i < cfg.modules; ++i) {
    if (active[static_cast<size_t>(i)]) {
      auto [z, c] = lstm_cell(att.attended[static_cast<size_t>(i)], row(state.z, i),
                              row(state.c, i), params.modules[static_cast<size_t>(i)],
                              cfg.hidden);
      if (training && cfg.dropout_p > 0.0) {
        const uint64_t seed = Rng::derive(
            cfg.seed, 0xd0u ^ (static_cast<uint64_t>(state.step) << 8) ^
                          (static_cast<uint64_t>(i) << 40));
        z = dropout(z, cfg.dropout_p, seed);
      }
      z_hat[static_cast<size_t>(i)] = z;
      c_new[static_cast<size_t>(i)] = c;
    } else {
      z_hat[static_cast<size_t>(i)] = row(state.z, i);
      c_new[static_cast<size_t>(i)] = row(state.c, i);
    }
  }

  Tensor hats = concat(z_hat, 0);  // [M, hidden]
  Tensor comm = soft_attention(matmul(hats, params.comm_wq),
                               matmul(hats, params.comm_wk),
                               matmul(hats, params.comm_wv));

  RimAux aux = RimAux::zero(cfg);
  std::vector<Tensor> z_next(static_cast<size_t>(cfg.modules));
  for (int64_t i = 0; i < cfg.modules; ++i) {
    Tensor h_i = row(comm, i);  // [1, hidden]
    if (comm_collector)
      comm_collector->insert(comm_collector->end(), h_i.data().begin(),
                             h_i.data().end());
    Tensor residual;
    switch (cfg.discretize) {
      case Discretize::none:
        residual = h_i;
        break;
      case Discretize::vq: {
        QuantizationResult q =
            quantize(h_i, params.codebook, cfg.segments, cfg.beta, training);
        residual = q.quantized;
        aux.codebook_loss = add(aux.codebook_loss, q.codebook_loss);
        aux.commitment_loss = add(aux.commitment_loss, q.commitment_loss);
        for (int64_t idx : q.indices) aux.code_counts[static_cast<size_t>(idx)]++;
        break;
      }
      case Discretize::gumbel: {
        GumbelConfig gc;
        gc.temperature = cfg.gumbel_tau;
        gc.hard = cfg.gumbel_hard;
        gc.seed = Rng::derive(cfg.seed, 0x47u ^ (static_cast<uint64_t>(state.step) << 8) ^
                                            (static_cast<uint64_t>(i) << 40));
        QuantizationResult q = gumbel_quantize(h_i, params.codebook, cfg.segments, gc);
        residual = training ? q.quantized : stop_gradient(q.quantized);
        for (int64_t idx : q.indices) aux.code_counts[static_cast<size_t>(idx)]++;
        break;
      }
    }
    z_next[static_cast<size_t>(i)] = add(z_hat[static_cast<size_t>(i)], residual);
  }

  RimState next;
  next.z = concat(z_next, 0);
  next.c = concat(c_new, 0);
  next.step = state.step + 1;
  return {std::move(next), std::move(aux)};
}

RolloutResult rollout(const Tensor& seq, const RimParams& params, const RimConfig& cfg,
                      bool training, std::vector<double>* comm_collector) {
  if (seq.rank() != 2 || seq.shape()[1] != cfg.input_dim)
    fail(ErrorKind::dimension, "rollout: sequence must be [T, input_dim]");
  const int64_t steps = seq.shape()[0];
  if (steps < 1) fail(ErrorKind::contract, "rollout: at least one step required");

  RimState state = RimState::initial(cfg);
  RimAux aux = RimAux::zero(cfg);
  for (int64_t t = 0; t < steps; ++t) {
    Tensor x_t = slice(seq, {t, 0}, {1, cfg.input_dim});
    auto [next, step_aux] =
        rim_step_collect(state, x_t, params, cfg, training, comm_collector);
    state = std::move(next);
    aux.absorb(step_aux);
  }

  RolloutResult res;
  res.readout = add(matmul(reshape(state.z, {1, cfg.modules * cfg.hidden}),
                           params.readout_w),
                    params.readout_b);
  res.aux = std::move(aux);
  res.final_state = std::move(state);
  return res;
}

}  // namespace dvnc

// SPDX-License-Identifier: Apache-2.0
#include "reference_rim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rng.hpp"

namespace dvnc::testing {

namespace {

// out[r, c] = a[r, k] b[k, c], all row-major flat vectors
std::vector<double> matmul_ref(const std::vector<double>& a, int64_t ar, int64_t ak,
                               const std::vector<double>& b, int64_t bc) {
  std::vector<double> out(static_cast<size_t>(ar * bc), 0.0);
  for (int64_t i = 0; i < ar; ++i)
    for (int64_t k = 0; k < ak; ++k)
      for (int64_t j = 0; j < bc; ++j)
        out[static_cast<size_t>(i * bc + j)] +=
            a[static_cast<size_t>(i * ak + k)] * b[static_cast<size_t>(k * bc + j)];
  return out;
}

std::vector<double> softmax_ref(const std::vector<double>& x) {
  double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> y(x.size());
  double denom = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    denom += y[i];
  }
  for (double& v : y) v /= denom;
  return y;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

RefWeights RefWeights::from(const RimParams& params) {
  RefWeights w;
  for (const auto& [name, t] : params.named()) {
    w.names.push_back(name);
    w.arrays.push_back(t.data());
  }
  return w;
}

const std::vector<double>& RefWeights::get(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return arrays[i];
  throw std::runtime_error("RefWeights: no array named " + name);
}

std::vector<double>& RefWeights::get(const std::string& name) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return arrays[i];
  throw std::runtime_error("RefWeights: no array named " + name);
}

std::vector<double> RefWeights::flatten() const {
  std::vector<double> flat;
  for (const auto& a : arrays) flat.insert(flat.end(), a.begin(), a.end());
  return flat;
}

void RefWeights::unflatten(const std::vector<double>& flat) {
  size_t pos = 0;
  for (auto& a : arrays) {
    std::copy(flat.begin() + static_cast<long>(pos),
              flat.begin() + static_cast<long>(pos + a.size()), a.begin());
    pos += a.size();
  }
}

RefOutput reference_rollout(const RefWeights& w, const RimConfig& cfg,
                            const std::vector<double>& seq, int64_t steps,
                            RefTrace* record, const RefTrace* replay) {
  const int64_t M = cfg.modules;
  const int64_t H = cfg.hidden;
  const int64_t in_dim = cfg.input_dim;
  const int64_t G = cfg.segments;
  const int64_t L = cfg.codebook_size;
  const int64_t dim = cfg.discretize != Discretize::none ? cfg.segment_dim() : 0;

  std::vector<double> z(static_cast<size_t>(M * H), 0.0);
  std::vector<double> c(static_cast<size_t>(M * H), 0.0);
  RefOutput out;
  size_t site_cursor = 0;

  for (int64_t t = 0; t < steps; ++t) {
    const std::vector<double> x(seq.begin() + t * in_dim,
                                seq.begin() + (t + 1) * in_dim);

    // input attention: per-module query over {x, null token}
    std::vector<double> kx = matmul_ref(x, 1, in_dim, w.get("inatt.wk"), H);
    std::vector<double> vx = matmul_ref(x, 1, in_dim, w.get("inatt.wv"), H);
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(H));
    std::vector<double> score(static_cast<size_t>(M));
    std::vector<std::vector<double>> attended(static_cast<size_t>(M));
    for (int64_t i = 0; i < M; ++i) {
      const std::vector<double> zi(z.begin() + i * H, z.begin() + (i + 1) * H);
      std::vector<double> q = matmul_ref(
          zi, 1, H, w.get("module" + std::to_string(i) + ".inatt.wq"), H);
      double dot = 0.0;
      for (int64_t d = 0; d < H; ++d) dot += q[static_cast<size_t>(d)] * kx[static_cast<size_t>(d)];
      std::vector<double> sm = softmax_ref({dot * inv_sqrt_h, 0.0});
      score[static_cast<size_t>(i)] = sm[0];
      attended[static_cast<size_t>(i)].resize(static_cast<size_t>(H));
      for (int64_t d = 0; d < H; ++d)
        attended[static_cast<size_t>(i)][static_cast<size_t>(d)] =
            sm[0] * vx[static_cast<size_t>(d)];
    }
    std::vector<int64_t> order(static_cast<size_t>(M));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return score[static_cast<size_t>(a)] > score[static_cast<size_t>(b)];
    });
    std::vector<bool> active(static_cast<size_t>(M), false);
    for (int64_t k = 0; k < cfg.active; ++k)
      active[static_cast<size_t>(order[static_cast<size_t>(k)])] = true;

    // LSTM update for active modules, copy for the rest
    std::vector<double> z_hat(static_cast<size_t>(M * H));
    std::vector<double> c_new(static_cast<size_t>(M * H));
    for (int64_t i = 0; i < M; ++i) {
      if (!active[static_cast<size_t>(i)]) {
        for (int64_t d = 0; d < H; ++d) {
          z_hat[static_cast<size_t>(i * H + d)] = z[static_cast<size_t>(i * H + d)];
          c_new[static_cast<size_t>(i * H + d)] = c[static_cast<size_t>(i * H + d)];
        }
        continue;
      }
      const std::string base = "module" + std::to_string(i) + ".";
      const std::vector<double> zi(z.begin() + i * H, z.begin() + (i + 1) * H);
      std::vector<double> gates =
          matmul_ref(attended[static_cast<size_t>(i)], 1, H, w.get(base + "lstm.wx"), 4 * H);
      std::vector<double> rec = matmul_ref(zi, 1, H, w.get(base + "lstm.wh"), 4 * H);
      const std::vector<double>& bias = w.get(base + "lstm.b");
      for (int64_t d = 0; d < 4 * H; ++d)
        gates[static_cast<size_t>(d)] += rec[static_cast<size_t>(d)] + bias[static_cast<size_t>(d)];
      for (int64_t d = 0; d < H; ++d) {
        const double ig = sigmoid_ref(gates[static_cast<size_t>(d)]);
        const double fg = sigmoid_ref(gates[static_cast<size_t>(H + d)]);
        const double cand = std::tanh(gates[static_cast<size_t>(2 * H + d)]);
        const double og = sigmoid_ref(gates[static_cast<size_t>(3 * H + d)]);
        const double cn = fg * c[static_cast<size_t>(i * H + d)] + ig * cand;
        c_new[static_cast<size_t>(i * H + d)] = cn;
        z_hat[static_cast<size_t>(i * H + d)] = og * std::tanh(cn);
      }
    }

    // communication attention over all candidate states
    std::vector<double> Q = matmul_ref(z_hat, M, H, w.get("comm.wq"), H);
    std::vector<double> K = matmul_ref(z_hat, M, H, w.get("comm.wk"), H);
    std::vector<double> V = matmul_ref(z_hat, M, H, w.get("comm.wv"), H);
    std::vector<double> comm(static_cast<size_t>(M * H), 0.0);
    for (int64_t i = 0; i < M; ++i) {
      std::vector<double> scores(static_cast<size_t>(M));
      for (int64_t j = 0; j < M; ++j) {
        double dot = 0.0;
        for (int64_t d = 0; d < H; ++d)
          dot += Q[static_cast<size_t>(i * H + d)] * K[static_cast<size_t>(j * H + d)];
        scores[static_cast<size_t>(j)] = dot * inv_sqrt_h;
      }
      std::vector<double> a = softmax_ref(scores);
      for (int64_t j = 0; j < M; ++j)
        for (int64_t d = 0; d < H; ++d)
          comm[static_cast<size_t>(i * H + d)] +=
              a[static_cast<size_t>(j)] * V[static_cast<size_t>(j * H + d)];
    }

    // residual message, optionally discretized
    for (int64_t i = 0; i < M; ++i) {
      std::vector<double> h_i(comm.begin() + i * H, comm.begin() + (i + 1) * H);
      std::vector<double> residual = h_i;

      if (cfg.discretize == Discretize::vq) {
        const std::vector<double>& e = w.get("codebook");
        FrozenSite* rec_site = nullptr;
        const FrozenSite* rep_site = nullptr;
        if (record) {
          record->sites.emplace_back();
          rec_site = &record->sites.back();
        } else if (replay) {
          rep_site = &replay->sites.at(site_cursor++);
        } else {
          throw std::runtime_error("reference: vq needs record or replay");
        }

        std::vector<int64_t> idx;
        if (rec_site) {
          for (int64_t s = 0; s < G; ++s) {
            int64_t best = 0;
            double best_d = 1e300;
            for (int64_t j = 0; j < L; ++j) {
              double d2 = 0.0;
              for (int64_t d = 0; d < dim; ++d) {
                const double diff = h_i[static_cast<size_t>(s * dim + d)] -
                                    e[static_cast<size_t>(j * dim + d)];
                d2 += diff * diff;
              }
              if (d2 < best_d) {
                best_d = d2;
                best = j;
              }
            }
            idx.push_back(best);
          }
        } else {
          idx = rep_site->indices;
        }

        std::vector<double> codes(static_cast<size_t>(H));
        for (int64_t s = 0; s < G; ++s)
          for (int64_t d = 0; d < dim; ++d)
            codes[static_cast<size_t>(s * dim + d)] =
                e[static_cast<size_t>(idx[static_cast<size_t>(s)] * dim + d)];

        if (rec_site) {
          rec_site->indices = idx;
          rec_site->sg_segments = h_i;
          rec_site->sg_codes = codes;
          rec_site->st_offset.resize(static_cast<size_t>(H));
          for (int64_t d = 0; d < H; ++d)
            rec_site->st_offset[static_cast<size_t>(d)] =
                codes[static_cast<size_t>(d)] - h_i[static_cast<size_t>(d)];
          residual = codes;
        } else {
          // smooth surrogate: straight-through as identity plus frozen offset
          for (int64_t d = 0; d < H; ++d)
            residual[static_cast<size_t>(d)] =
                h_i[static_cast<size_t>(d)] + rep_site->st_offset[static_cast<size_t>(d)];
        }

        const std::vector<double>& sg_h = rec_site ? rec_site->sg_segments : rep_site->sg_segments;
        const std::vector<double>& sg_c = rec_site ? rec_site->sg_codes : rep_site->sg_codes;
        for (int64_t d = 0; d < H; ++d) {
          const int64_t s = d / dim;
          const double ecur = e[static_cast<size_t>(
              idx[static_cast<size_t>(s)] * dim + (d % dim))];
          const double d_cb = sg_h[static_cast<size_t>(d)] - ecur;
          const double d_cm = h_i[static_cast<size_t>(d)] - sg_c[static_cast<size_t>(d)];
          out.codebook_loss += d_cb * d_cb;
          out.commitment_loss += cfg.beta * d_cm * d_cm;
        }
      } else if (cfg.discretize == Discretize::gumbel) {
        const std::vector<double>& e = w.get("codebook");
        FrozenSite* rec_site = nullptr;
        const FrozenSite* rep_site = nullptr;
        if (record) {
          record->sites.emplace_back();
          rec_site = &record->sites.back();
        } else if (replay) {
          rep_site = &replay->sites.at(site_cursor++);
        } else {
          throw std::runtime_error("reference: gumbel needs record or replay");
        }

        std::vector<double> noise;
        if (rec_site) {
          // identical derivation and consumption order as the implementation
          Rng rng(Rng::derive(cfg.seed, 0x47u ^ (static_cast<uint64_t>(t) << 8) ^
                                            (static_cast<uint64_t>(i) << 40)));
          noise.resize(static_cast<size_t>(G * L));
          for (int64_t s = 0; s < G; ++s)
            for (int64_t j = 0; j < L; ++j) {
              double u;
              do {
                u = rng.next_double();
              } while (u <= 0.0);
              noise[static_cast<size_t>(s * L + j)] = -std::log(-std::log(u));
            }
          rec_site->gumbel_noise = noise;
        } else {
          noise = rep_site->gumbel_noise;
        }

        std::vector<int64_t> idx(static_cast<size_t>(G));
        std::vector<double> soft(static_cast<size_t>(H), 0.0);
        for (int64_t s = 0; s < G; ++s) {
          std::vector<double> logits(static_cast<size_t>(L));
          for (int64_t j = 0; j < L; ++j) {
            double d2 = 0.0;
            for (int64_t d = 0; d < dim; ++d) {
              const double diff = h_i[static_cast<size_t>(s * dim + d)] -
                                  e[static_cast<size_t>(j * dim + d)];
              d2 += diff * diff;
            }
            logits[static_cast<size_t>(j)] =
                (-d2 + noise[static_cast<size_t>(s * L + j)]) / cfg.gumbel_tau;
          }
          std::vector<double> y = softmax_ref(logits);
          int64_t best = 0;
          for (int64_t j = 1; j < L; ++j)
            if (y[static_cast<size_t>(j)] > y[static_cast<size_t>(best)]) best = j;
          idx[static_cast<size_t>(s)] = best;
          for (int64_t j = 0; j < L; ++j)
            for (int64_t d = 0; d < dim; ++d)
              soft[static_cast<size_t>(s * dim + d)] +=
                  y[static_cast<size_t>(j)] * e[static_cast<size_t>(j * dim + d)];
        }

        if (rec_site) rec_site->indices = idx;
        const std::vector<int64_t>& use_idx = rec_site ? idx : rep_site->indices;
        if (cfg.gumbel_hard) {
          if (rec_site) {
            std::vector<double> hard(static_cast<size_t>(H));
            for (int64_t s = 0; s < G; ++s)
              for (int64_t d = 0; d < dim; ++d)
                hard[static_cast<size_t>(s * dim + d)] =
                    e[static_cast<size_t>(use_idx[static_cast<size_t>(s)] * dim + d)];
            rec_site->st_offset.resize(static_cast<size_t>(H));
            for (int64_t d = 0; d < H; ++d)
              rec_site->st_offset[static_cast<size_t>(d)] =
                  hard[static_cast<size_t>(d)] - soft[static_cast<size_t>(d)];
            residual = hard;
          } else {
            for (int64_t d = 0; d < H; ++d)
              residual[static_cast<size_t>(d)] =
                  soft[static_cast<size_t>(d)] + rep_site->st_offset[static_cast<size_t>(d)];
          }
        } else {
          residual = soft;
        }
      }

      for (int64_t d = 0; d < H; ++d)
        z[static_cast<size_t>(i * H + d)] =
            z_hat[static_cast<size_t>(i * H + d)] + residual[static_cast<size_t>(d)];
    }
    c = c_new;
  }

  out.readout = matmul_ref(z, 1, M * H, w.get("readout.w"), cfg.readout_dim);
  const std::vector<double>& rb = w.get("readout.b");
  for (int64_t d = 0; d < cfg.readout_dim; ++d)
    out.readout[static_cast<size_t>(d)] += rb[static_cast<size_t>(d)];
  out.final_z = z;
  out.final_c = c;
  return out;
}

double reference_objective(const RefOutput& out, const std::vector<double>& target,
                           double codebook_weight) {
  double task = 0.0;
  for (size_t d = 0; d < target.size(); ++d) {
    const double e = out.readout[d] - target[d];
    task += e * e;
  }
  return task + codebook_weight * (out.codebook_loss + out.commitment_loss);
}

}  // namespace dvnc::testing

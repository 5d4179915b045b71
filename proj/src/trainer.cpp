// SPDX-License-Identifier: Apache-2.0
#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "rng.hpp"

namespace dvnc {

using nlohmann::json;

// ---- task spec ---------------------------------------------------------------

int64_t TaskSpec::input_dim() const {
  return kind == Kind::adding ? 2 : copying.n_classes();
}

int64_t TaskSpec::readout_dim() const {
  return kind == Kind::adding ? 1 : copying.payload_len * copying.n_classes();
}

void TaskSpec::set_batch(int64_t b) {
  adding.batch = b;
  copying.batch = b;
}

void TaskSpec::set_seed(uint64_t s) {
  adding.seed = s;
  copying.seed = s;
}

void TaskSpec::validate() const {
  if (kind == Kind::adding)
    adding.validate();
  else
    copying.validate();
}

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) fail(ErrorKind::config, "config: unknown key '" + it.key() + "' in " + where);
  }
}

const json& require_key(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end())
    fail(ErrorKind::config, "config: missing key '" + std::string(key) + "' in " + where);
  return *it;
}

TaskSpec parse_task(const json& j, bool eval_entry) {
  if (!j.is_object()) fail(ErrorKind::config, "config: task must be an object");
  TaskSpec spec;
  const std::string kind = require_key(j, "kind", "task").get<std::string>();
  if (kind == "adding") {
    spec.kind = TaskSpec::Kind::adding;
    reject_unknown_keys(j, {"kind", "length", "max_value", "batch", "seed"}, "adding task");
    spec.adding.length = require_key(j, "length", "adding task").get<int64_t>();
    spec.adding.max_value = j.value("max_value", 1.0);
  } else if (kind == "copying") {
    spec.kind = TaskSpec::Kind::copying;
    reject_unknown_keys(j, {"kind", "payload_len", "delay", "n_symbols", "batch", "seed"},
                        "copying task");
    spec.copying.payload_len = require_key(j, "payload_len", "copying task").get<int64_t>();
    spec.copying.delay = require_key(j, "delay", "copying task").get<int64_t>();
    spec.copying.n_symbols = require_key(j, "n_symbols", "copying task").get<int64_t>();
  } else {
    fail(ErrorKind::config, "config: task kind must be 'adding' or 'copying'");
  }
  if (eval_entry) {
    spec.set_batch(require_key(j, "batch", "eval task").get<int64_t>());
    spec.set_seed(require_key(j, "seed", "eval task").get<uint64_t>());
  } else {
    spec.set_batch(j.value("batch", int64_t{1}));
    spec.set_seed(j.value("seed", uint64_t{0}));
  }
  spec.validate();
  return spec;
}

json task_to_json(const TaskSpec& spec, bool with_batch_seed) {
  json j;
  if (spec.kind == TaskSpec::Kind::adding) {
    j["kind"] = "adding";
    j["length"] = spec.adding.length;
    j["max_value"] = spec.adding.max_value;
  } else {
    j["kind"] = "copying";
    j["payload_len"] = spec.copying.payload_len;
    j["delay"] = spec.copying.delay;
    j["n_symbols"] = spec.copying.n_symbols;
  }
  if (with_batch_seed) {
    j["batch"] = spec.batch();
    j["seed"] = spec.seed();
  }
  return j;
}

Discretize parse_discretize(const std::string& s) {
  if (s == "none") return Discretize::none;
  if (s == "vq") return Discretize::vq;
  if (s == "gumbel") return Discretize::gumbel;
  fail(ErrorKind::config, "config: discretize must be none|vq|gumbel");
}

const char* discretize_name(Discretize d) {
  switch (d) {
    case Discretize::none: return "none";
    case Discretize::vq: return "vq";
    case Discretize::gumbel: return "gumbel";
  }
  return "none";
}

}  // namespace

TaskSpec task_spec_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail(ErrorKind::config, "task: invalid JSON");
  return parse_task(j, /*eval_entry=*/true);
}

std::string task_spec_to_json_text(const TaskSpec& spec) {
  return task_to_json(spec, true).dump();
}

void TrainConfig::validate() const {
  task.validate();
  rim.validate();
  if (batch < 1) fail(ErrorKind::config, "config: batch must be >= 1");
  if (epochs < 0) fail(ErrorKind::config, "config: epochs must be nonnegative");
  if (steps_per_epoch < 1) fail(ErrorKind::config, "config: steps_per_epoch must be >= 1");
  if (grad_clip < 0.0) fail(ErrorKind::config, "config: grad_clip must be nonnegative");
  if (checkpoint_every < 0)
    fail(ErrorKind::config, "config: checkpoint_every must be nonnegative");
  if (!(adam.lr > 0.0)) fail(ErrorKind::config, "config: lr must be positive");
  if (out_dir.empty()) fail(ErrorKind::config, "config: out_dir must be set");
  for (const TaskSpec& s : eval_specs) {
    s.validate();
    if (s.kind != task.kind)
      fail(ErrorKind::config, "config: eval task kind must match training task");
    if (s.input_dim() != task.input_dim() || s.readout_dim() != task.readout_dim())
      fail(ErrorKind::config,
           "config: eval task is incompatible with the trained readout");
  }
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail(ErrorKind::config, "config: invalid JSON");
  if (!j.is_object()) fail(ErrorKind::config, "config: root must be an object");
  reject_unknown_keys(j,
                      {"task", "model", "optimizer", "batch", "epochs",
                       "steps_per_epoch", "grad_clip", "eval", "seed", "out_dir",
                       "checkpoint_every"},
                      "config root");

  TrainConfig cfg;
  cfg.task = parse_task(require_key(j, "task", "config"), /*eval_entry=*/false);

  const json& m = require_key(j, "model", "config");
  reject_unknown_keys(m,
                      {"modules", "active", "hidden", "discretize", "codebook_size",
                       "segments", "beta", "codebook_weight", "gumbel_tau",
                       "gumbel_hard", "dropout"},
                      "model");
  cfg.rim.modules = require_key(m, "modules", "model").get<int64_t>();
  cfg.rim.active = require_key(m, "active", "model").get<int64_t>();
  cfg.rim.hidden = require_key(m, "hidden", "model").get<int64_t>();
  cfg.rim.discretize =
      parse_discretize(m.value("discretize", std::string("none")));
  cfg.rim.codebook_size = m.value("codebook_size", int64_t{16});
  cfg.rim.segments = m.value("segments", int64_t{4});
  cfg.rim.beta = m.value("beta", 0.25);
  cfg.rim.codebook_weight = m.value("codebook_weight", 0.25);
  cfg.rim.gumbel_tau = m.value("gumbel_tau", 1.0);
  cfg.rim.gumbel_hard = m.value("gumbel_hard", true);
  cfg.rim.dropout_p = m.value("dropout", 0.0);

  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    reject_unknown_keys(o, {"kind", "lr", "beta1", "beta2", "eps"}, "optimizer");
    const std::string kind = o.value("kind", std::string("adam"));
    if (kind != "adam") fail(ErrorKind::config, "config: optimizer kind must be adam");
    cfg.adam.lr = o.value("lr", 0.001);
    cfg.adam.beta1 = o.value("beta1", 0.9);
    cfg.adam.beta2 = o.value("beta2", 0.999);
    cfg.adam.eps = o.value("eps", 1e-8);
  }

  cfg.batch = require_key(j, "batch", "config").get<int64_t>();
  cfg.epochs = require_key(j, "epochs", "config").get<int64_t>();
  cfg.steps_per_epoch = j.value("steps_per_epoch", int64_t{100});
  cfg.grad_clip = j.value("grad_clip", 1.0);
  cfg.seed = j.value("seed", uint64_t{0});
  cfg.out_dir = j.value("out_dir", std::string("."));
  cfg.checkpoint_every = j.value("checkpoint_every", int64_t{0});
  if (j.contains("eval")) {
    if (!j["eval"].is_array()) fail(ErrorKind::config, "config: eval must be an array");
    for (const json& e : j["eval"]) cfg.eval_specs.push_back(parse_task(e, true));
  }

  cfg.rim.input_dim = cfg.task.input_dim();
  cfg.rim.readout_dim = cfg.task.readout_dim();
  cfg.rim.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

std::string TrainConfig::to_json_text() const {
  json j;
  j["task"] = task_to_json(task, false);
  j["model"] = {{"modules", rim.modules},
                {"active", rim.active},
                {"hidden", rim.hidden},
                {"discretize", discretize_name(rim.discretize)},
                {"codebook_size", rim.codebook_size},
                {"segments", rim.segments},
                {"beta", rim.beta},
                {"codebook_weight", rim.codebook_weight},
                {"gumbel_tau", rim.gumbel_tau},
                {"gumbel_hard", rim.gumbel_hard},
                {"dropout", rim.dropout_p}};
  j["optimizer"] = {{"kind", "adam"},
                    {"lr", adam.lr},
                    {"beta1", adam.beta1},
                    {"beta2", adam.beta2},
                    {"eps", adam.eps}};
  j["batch"] = batch;
  j["epochs"] = epochs;
  j["steps_per_epoch"] = steps_per_epoch;
  j["grad_clip"] = grad_clip;
  j["seed"] = seed;
  // out_dir is run-local, not part of the model snapshot
  j["checkpoint_every"] = checkpoint_every;
  json evals = json::array();
  for (const TaskSpec& s : eval_specs) evals.push_back(task_to_json(s, true));
  j["eval"] = evals;
  return j.dump();
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.data().size(), 0.0);
    v_.emplace_back(p.data().size(), 0.0);
  }
}

double Adam::clip_global_norm(double max_norm) {
  double sq = 0.0;
  for (Tensor& p : params_)
    for (double g : p.mutable_grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& p : params_)
      for (double& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& data = params_[i].mutable_data();
    auto& grad = params_[i].mutable_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < data.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * grad[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * grad[k] * grad[k];
      data[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

// ---- training ------------------------------------------------------------------

namespace {

struct SampleLoss {
  Tensor task;  // scalar, per sample
};

Tensor copying_loss(const Tensor& readout, const CopyingBatch& batch, int64_t b,
                    double* accuracy_hits) {
  const int64_t n_classes = batch.n_classes;
  const int64_t payload = batch.payload_len;
  Tensor total = Tensor::scalar(0.0);
  for (int64_t p = 0; p < payload; ++p) {
    Tensor logits = slice(readout, {0, p * n_classes}, {1, n_classes});
    Tensor probs = softmax_lastdim(logits);
    const int64_t target = batch.target(b, batch.recall_start() + p);
    Tensor picked = reshape(slice(probs, {0, target}, {1, 1}), {1});
    total = add(total, scale(log(picked), -1.0));
    if (accuracy_hits) {
      int64_t argmax = 0;
      for (int64_t c = 1; c < n_classes; ++c)
        if (probs.at(0, c) > probs.at(0, argmax)) argmax = c;
      if (argmax == target) *accuracy_hits += 1.0;
    }
  }
  return scale(total, 1.0 / static_cast<double>(payload));
}

Tensor sample_task_loss(const TaskSpec& task, const Tensor& readout,
                        const AddingBatch* ab, const CopyingBatch* cb, int64_t b,
                        double* accuracy_hits) {
  if (task.kind == TaskSpec::Kind::adding) {
    Tensor err = sub(readout, Tensor::from({1, 1}, {ab->target(b)}));
    return sq_l2(err);
  }
  return copying_loss(readout, *cb, b, accuracy_hits);
}

void bootstrap_codebook(RimParams& params, const TrainConfig& cfg) {
  // Collect pre-quantization communication vectors from one warmup batch and
  // initialize the codebook with k-means over their segments.
  RimConfig warm = cfg.rim;
  warm.discretize = Discretize::none;
  std::vector<double> collected;
  const uint64_t warm_seed = Rng::derive(cfg.seed, 0x5741524d);
  if (cfg.task.kind == TaskSpec::Kind::adding) {
    AddingSpec spec = cfg.task.adding;
    spec.batch = cfg.batch;
    spec.seed = warm_seed;
    AddingBatch batch = adding_batch(spec);
    for (int64_t b = 0; b < spec.batch; ++b)
      rollout(batch.sequence(b), params, warm, /*training=*/false, &collected);
  } else {
    CopyingSpec spec = cfg.task.copying;
    spec.batch = cfg.batch;
    spec.seed = warm_seed;
    CopyingBatch batch = copying_batch(spec);
    for (int64_t b = 0; b < spec.batch; ++b)
      rollout(batch.sequence(b), params, warm, /*training=*/false, &collected);
  }

  const int64_t dim = cfg.rim.segment_dim();
  const int64_t n = static_cast<int64_t>(collected.size()) / dim;
  Tensor samples = Tensor::from({n, dim}, std::move(collected));
  Codebook init = kmeans_init(samples, cfg.rim.codebook_size,
                              Rng::derive(cfg.seed, 0x4b4d4e53), /*max_iters=*/50);
  params.codebook.vectors.mutable_data() = init.vectors.data();
}

void write_metrics_row(std::ofstream& out, const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                static_cast<long long>(m.step), m.task_loss, m.codebook_loss,
                m.commitment_loss, m.total_loss, m.perplexity, m.grad_norm, m.lr);
  out << buf;
}

}  // namespace

EvalRecord evaluate(const RimParams& params, const RimConfig& rim, const TaskSpec& spec) {
  spec.validate();
  if (spec.input_dim() != rim.input_dim || spec.readout_dim() != rim.readout_dim)
    fail(ErrorKind::config, "evaluate: task incompatible with model shapes");

  EvalRecord rec;
  rec.spec = spec;
  if (spec.kind == TaskSpec::Kind::adding) {
    AddingBatch batch = adding_batch(spec.adding);
    double sq_sum = 0.0;
    for (int64_t b = 0; b < batch.batch; ++b) {
      RolloutResult r = rollout(batch.sequence(b), params, rim, /*training=*/false);
      const double err = r.readout.at(0, 0) - batch.target(b);
      sq_sum += err * err;
    }
    rec.mse = sq_sum / static_cast<double>(batch.batch);
  } else {
    CopyingBatch batch = copying_batch(spec.copying);
    double ce_sum = 0.0, hits = 0.0;
    for (int64_t b = 0; b < batch.batch; ++b) {
      RolloutResult r = rollout(batch.sequence(b), params, rim, /*training=*/false);
      ce_sum += copying_loss(r.readout, batch, b, &hits).value();
    }
    rec.cross_entropy = ce_sum / static_cast<double>(batch.batch);
    rec.accuracy = hits / static_cast<double>(batch.batch * batch.payload_len);
  }
  return rec;
}

Checkpoint make_checkpoint(const RimParams& params, const TrainConfig& cfg,
                           uint64_t rng_state) {
  Checkpoint ckpt;
  for (const auto& [name, t] : params.named()) {
    Checkpoint::Array a;
    a.name = name;
    a.shape = t.shape();
    a.data.reserve(t.data().size());
    for (double v : t.data()) a.data.push_back(static_cast<float>(v));
    ckpt.arrays.push_back(std::move(a));
  }
  ckpt.rng_state = {rng_state};
  ckpt.config_json = cfg.to_json_text();
  return ckpt;
}

RimParams params_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out) {
  TrainConfig cfg = TrainConfig::from_json_text(ckpt.config_json);
  RimParams params = RimParams::init(cfg.rim, cfg.seed);
  for (auto& [name, t] : params.named()) {
    const Checkpoint::Array* a = ckpt.find(name);
    if (!a) fail(ErrorKind::config, "checkpoint: missing array " + name);
    if (a->shape != t.shape())
      fail(ErrorKind::config, "checkpoint: shape mismatch for " + name);
    auto& data = const_cast<Tensor&>(t).mutable_data();
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(a->data[i]);
  }
  if (cfg_out) *cfg_out = cfg;
  return params;
}

EvalRecord evaluate_checkpoint(const std::string& ckpt_path, const TaskSpec& spec) {
  Checkpoint ckpt = read_checkpoint(ckpt_path);
  TrainConfig cfg;
  RimParams params = params_from_checkpoint(ckpt, &cfg);
  return evaluate(params, cfg.rim, spec);
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);

  RimParams params = RimParams::init(cfg.rim, cfg.seed);
  if (cfg.rim.discretize != Discretize::none) bootstrap_codebook(params, cfg);

  std::vector<Tensor> opt_params;
  for (const auto& [name, t] : params.named()) opt_params.push_back(t);
  Adam opt(opt_params, cfg.adam);
  opt.zero_grad();

  TrainResult result;
  result.metrics_path = cfg.out_dir + "/metrics.csv";
  result.checkpoint_path = cfg.out_dir + "/model.ckpt";

  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) fail(ErrorKind::io, "train: cannot open metrics file");
  metrics << "step,task_loss,codebook_loss,commitment_loss,total_loss,perplexity,"
             "grad_norm,lr\n";

  Rng train_rng(Rng::derive(cfg.seed, 0x545249));
  const int64_t total = cfg.total_steps();
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch);

  // Samples are processed in a fixed number of shards with private parameter
  // copies; gradients merge in shard order, so results do not depend on the
  // machine's core count.
  constexpr int64_t kShards = 4;
  const size_t n_params = opt_params.size();

  struct ShardOut {
    std::vector<std::vector<double>> grads;
    std::vector<int64_t> code_counts;
    std::exception_ptr error;
  };

  std::vector<double> task_vals(static_cast<size_t>(cfg.batch));
  std::vector<double> cb_vals(static_cast<size_t>(cfg.batch));
  std::vector<double> cm_vals(static_cast<size_t>(cfg.batch));

  for (int64_t step = 0; step < total; ++step) {
    const uint64_t batch_seed = train_rng.next_u64();
    StepMetrics sm;
    sm.step = step;
    sm.lr = cfg.adam.lr;

    AddingBatch ab;
    CopyingBatch cb;
    if (cfg.task.kind == TaskSpec::Kind::adding) {
      AddingSpec spec = cfg.task.adding;
      spec.batch = cfg.batch;
      spec.seed = batch_seed;
      ab = adding_batch(spec);
    } else {
      CopyingSpec spec = cfg.task.copying;
      spec.batch = cfg.batch;
      spec.seed = batch_seed;
      cb = copying_batch(spec);
    }

    std::vector<ShardOut> shards(kShards);
    auto run_shard = [&](int64_t s) {
      ShardOut& out = shards[static_cast<size_t>(s)];
      const int64_t lo = s * cfg.batch / kShards;
      const int64_t hi = (s + 1) * cfg.batch / kShards;
      if (lo >= hi) return;
      try {
        RimParams local = params.clone();
        auto named = local.named();
        RimConfig shard_rim = cfg.rim;
        for (int64_t b = lo; b < hi; ++b) {
          // Per-(step, sample) noise stream for dropout and gumbel draws.
          shard_rim.seed = Rng::derive(
              cfg.seed, 0x53544550ULL ^ (static_cast<uint64_t>(step) * cfg.batch +
                                         static_cast<uint64_t>(b)));
          Tensor seq = cfg.task.kind == TaskSpec::Kind::adding ? ab.sequence(b)
                                                               : cb.sequence(b);
          RolloutResult r = rollout(seq, local, shard_rim, /*training=*/true);
          Tensor task = sample_task_loss(cfg.task, r.readout, &ab, &cb, b, nullptr);
          Tensor sample_total =
              total_loss(task, r.aux.codebook_loss, r.aux.commitment_loss,
                         cfg.rim.codebook_weight);

          task_vals[static_cast<size_t>(b)] = task.value();
          cb_vals[static_cast<size_t>(b)] = r.aux.codebook_loss.value();
          cm_vals[static_cast<size_t>(b)] = r.aux.commitment_loss.value();
          if (out.code_counts.size() < r.aux.code_counts.size())
            out.code_counts.resize(r.aux.code_counts.size(), 0);
          for (size_t i = 0; i < r.aux.code_counts.size(); ++i)
            out.code_counts[i] += r.aux.code_counts[i];

          backward(scale(sample_total, inv_batch));
        }
        out.grads.resize(n_params);
        for (size_t p = 0; p < n_params; ++p) {
          const auto& g = named[p].second.grad();
          out.grads[p] = g.empty()
                             ? std::vector<double>(named[p].second.data().size(), 0.0)
                             : g;
        }
      } catch (...) {
        out.error = std::current_exception();
      }
    };

    {
      const int64_t n_workers = std::max<int64_t>(
          1, std::min<int64_t>(kShards,
                               static_cast<int64_t>(std::thread::hardware_concurrency())));
      std::vector<std::thread> workers;
      for (int64_t w = 1; w < n_workers; ++w)
        workers.emplace_back([&, w] {
          for (int64_t s = w; s < kShards; s += n_workers) run_shard(s);
        });
      for (int64_t s = 0; s < kShards; s += n_workers) run_shard(s);
      for (auto& t : workers) t.join();
    }
    for (const ShardOut& out : shards)
      if (out.error) {
        metrics.flush();
        std::rethrow_exception(out.error);
      }

    std::vector<int64_t> code_counts;
    for (const ShardOut& out : shards) {
      if (!out.grads.empty())
        for (size_t p = 0; p < n_params; ++p) {
          auto& dst = opt_params[p].mutable_grad();
          for (size_t k = 0; k < dst.size(); ++k) dst[k] += out.grads[p][k];
        }
      if (code_counts.size() < out.code_counts.size())
        code_counts.resize(out.code_counts.size(), 0);
      for (size_t i = 0; i < out.code_counts.size(); ++i)
        code_counts[i] += out.code_counts[i];
    }
    for (int64_t b = 0; b < cfg.batch; ++b) {
      sm.task_loss += task_vals[static_cast<size_t>(b)] * inv_batch;
      sm.codebook_loss += cb_vals[static_cast<size_t>(b)] * inv_batch;
      sm.commitment_loss += cm_vals[static_cast<size_t>(b)] * inv_batch;
    }
    sm.total_loss = sm.task_loss +
                    cfg.rim.codebook_weight * (sm.codebook_loss + sm.commitment_loss);
    sm.perplexity = code_counts.empty() ? 0.0 : perplexity(code_counts);

    if (!std::isfinite(sm.total_loss)) {
      metrics.flush();
      std::cerr << "train: non-finite loss at step " << step
                << " (task=" << sm.task_loss << " codebook=" << sm.codebook_loss
                << " commitment=" << sm.commitment_loss << ")\n";
      fail(ErrorKind::numeric, "train: loss diverged to NaN/Inf");
    }

    sm.grad_norm = opt.clip_global_norm(cfg.grad_clip);
    opt.step();
    opt.zero_grad();

    write_metrics_row(metrics, sm);
    result.final_metrics = sm;

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < total)
      write_checkpoint(cfg.out_dir + "/model.step" + std::to_string(step + 1) + ".ckpt",
                       make_checkpoint(params, cfg, train_rng.state()));
  }
  metrics.flush();
  result.steps = total;

  write_checkpoint(result.checkpoint_path,
                   make_checkpoint(params, cfg, train_rng.state()));

  // Evaluations run through the saved checkpoint so the eval subcommand
  // reproduces them exactly despite the 32-bit payload.
  RimParams saved = params_from_checkpoint(read_checkpoint(result.checkpoint_path),
                                           nullptr);
  TaskSpec train_eval = cfg.task;
  train_eval.set_batch(cfg.batch);
  train_eval.set_seed(Rng::derive(cfg.seed, 0x4556414c));
  result.evals.push_back(evaluate(saved, cfg.rim, train_eval));
  for (const TaskSpec& spec : cfg.eval_specs)
    result.evals.push_back(evaluate(saved, cfg.rim, spec));
  return result;
}

}  // namespace dvnc

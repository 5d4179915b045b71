// SPDX-License-Identifier: Apache-2.0
#include "dvnc/dvnc.h"

#include <cstring>
#include <string>

#include <json.hpp>

#include "bounds.hpp"
#include "error.hpp"
#include "trainer.hpp"

using nlohmann::json;

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

dvnc_status status_of(const dvnc::Error& e) {
  switch (e.kind()) {
    case dvnc::ErrorKind::numeric:
      return DVNC_ERROR_NUMERIC;
    case dvnc::ErrorKind::config:
    case dvnc::ErrorKind::dimension:
    case dvnc::ErrorKind::contract:
    case dvnc::ErrorKind::insufficient_data:
    case dvnc::ErrorKind::io:
      return DVNC_ERROR_CONFIG;
  }
  return DVNC_ERROR_RUNTIME;
}

template <typename Fn>
dvnc_status guarded(Fn&& fn) {
  try {
    fn();
    return DVNC_OK;
  } catch (const dvnc::Error& e) {
    g_last_error = e.what();
    return status_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DVNC_ERROR_RUNTIME;
  }
}

json eval_record_json(const dvnc::EvalRecord& rec) {
  json j;
  j["task"] = json::parse(dvnc::task_spec_to_json_text(rec.spec));
  if (rec.spec.kind == dvnc::TaskSpec::Kind::adding) {
    j["mse"] = rec.mse;
  } else {
    j["cross_entropy"] = rec.cross_entropy;
    j["accuracy"] = rec.accuracy;
  }
  return j;
}

dvnc::BoundParams bound_params_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    dvnc::fail(dvnc::ErrorKind::config, "bounds: invalid JSON");
  dvnc::BoundParams p;
  p.loss_bound = j.value("C_J", 1.0);
  p.loss_bound_cont = j.value("tC_J", 1.0);
  p.codebook_size = j.value("L", int64_t{2});
  p.segments = j.value("G", int64_t{1});
  p.message_dim = j.value("m", int64_t{2});
  p.param_count = j.value("zeta", 0.0);
  p.delta = j.value("delta", 0.05);
  p.samples = j.value("n", int64_t{1});
  p.lipschitz = j.value("L_d", 0.0);
  p.lipschitz_cont = j.value("tL_d", 0.0);
  p.rho = j.value("rho", int64_t{1});
  p.sensitivity = j.value("varsigma", 0.0);
  p.repr_radius = j.value("R_H", 0.0);
  return p;
}

dvnc::Sampler sampler_from_json(const json& j, int64_t expected_dim) {
  if (!j.is_object())
    dvnc::fail(dvnc::ErrorKind::config, "concentration: distribution must be an object");
  const std::string kind = j.value("kind", std::string("gaussian"));
  if (kind == "gaussian")
    return dvnc::gaussian_sampler(j.value("mean", 0.0), j.value("stddev", 1.0));
  if (kind == "uniform")
    return dvnc::uniform_sampler(j.value("low", 0.0), j.value("high", 1.0));
  if (kind == "point_mass") {
    std::vector<double> v = j.at("value").get<std::vector<double>>();
    if (static_cast<int64_t>(v.size()) != expected_dim)
      dvnc::fail(dvnc::ErrorKind::config, "concentration: point_mass dim mismatch");
    return dvnc::point_mass_sampler(std::move(v));
  }
  if (kind == "two_point") {
    std::vector<double> a = j.at("a").get<std::vector<double>>();
    std::vector<double> b = j.at("b").get<std::vector<double>>();
    if (static_cast<int64_t>(a.size()) != expected_dim ||
        static_cast<int64_t>(b.size()) != expected_dim)
      dvnc::fail(dvnc::ErrorKind::config, "concentration: two_point dim mismatch");
    return dvnc::two_point_sampler(std::move(a), std::move(b), j.value("prob_a", 0.5));
  }
  dvnc::fail(dvnc::ErrorKind::config,
             "concentration: distribution kind must be "
             "gaussian|uniform|point_mass|two_point");
}

}  // namespace

extern "C" {

const char* dvnc_version(void) { return "0.1.0"; }

const char* dvnc_last_error(void) { return g_last_error.c_str(); }

void dvnc_string_free(char* s) { std::free(s); }

dvnc_status dvnc_train(const char* config_json, const char* out_dir,
                       int64_t seed_override, char** summary_json_out) {
  if (!config_json || !summary_json_out) {
    g_last_error = "dvnc_train: null argument";
    return DVNC_ERROR_CONFIG;
  }
  return guarded([&] {
    dvnc::TrainConfig cfg = dvnc::TrainConfig::from_json_text(config_json);
    if (out_dir && *out_dir) cfg.out_dir = out_dir;
    if (seed_override >= 0) {
      cfg.seed = static_cast<uint64_t>(seed_override);
      cfg.rim.seed = cfg.seed;
    }
    dvnc::TrainResult res = dvnc::train(cfg);

    json j;
    j["steps"] = res.steps;
    j["checkpoint"] = res.checkpoint_path;
    j["metrics_csv"] = res.metrics_path;
    if (res.final_metrics) {
      const auto& m = *res.final_metrics;
      j["final"] = {{"step", m.step},
                    {"task_loss", m.task_loss},
                    {"codebook_loss", m.codebook_loss},
                    {"commitment_loss", m.commitment_loss},
                    {"total_loss", m.total_loss},
                    {"perplexity", m.perplexity},
                    {"grad_norm", m.grad_norm},
                    {"lr", m.lr}};
    }
    json evals = json::array();
    for (const auto& rec : res.evals) evals.push_back(eval_record_json(rec));
    j["eval"] = evals;
    *summary_json_out = dup_string(j.dump());
  });
}

struct dvnc_model {
  dvnc::TrainConfig config;
  dvnc::RimParams params;
};

dvnc_status dvnc_model_open(const char* checkpoint_path, dvnc_model** out) {
  if (!checkpoint_path || !out) {
    g_last_error = "dvnc_model_open: null argument";
    return DVNC_ERROR_CONFIG;
  }
  return guarded([&] {
    dvnc::Checkpoint ckpt = dvnc::read_checkpoint(checkpoint_path);
    auto* model = new dvnc_model;
    model->params = dvnc::params_from_checkpoint(ckpt, &model->config);
    *out = model;
  });
}

void dvnc_model_close(dvnc_model* model) { delete model; }

dvnc_status dvnc_model_evaluate(dvnc_model* model, const char* task_json,
                                char** metrics_json_out) {
  if (!model || !task_json || !metrics_json_out) {
    g_last_error = "dvnc_model_evaluate: null argument";
    return DVNC_ERROR_CONFIG;
  }
  return guarded([&] {
    dvnc::TaskSpec spec = dvnc::task_spec_from_json_text(task_json);
    dvnc::EvalRecord rec = dvnc::evaluate(model->params, model->config.rim, spec);
    *metrics_json_out = dup_string(eval_record_json(rec).dump());
  });
}

dvnc_status dvnc_bounds_evaluate(const char* params_json, char** report_json_out) {
  if (!params_json || !report_json_out) {
    g_last_error = "dvnc_bounds_evaluate: null argument";
    return DVNC_ERROR_CONFIG;
  }
  return guarded([&] {
    dvnc::BoundParams p = bound_params_from_json(params_json);
    dvnc::BoundComparison cmp = dvnc::bound_comparison(p);
    json j;
    j["with_discretization"] = cmp.with_discretization;
    j["without_discretization"] = cmp.without_discretization;
    j["ratio_log10"] = cmp.ratio_log10;
    j["with_overflow"] = cmp.with_overflow;
    *report_json_out = dup_string(j.dump());
  });
}

dvnc_status dvnc_concentration_check(const char* spec_json, char** report_json_out) {
  if (!spec_json || !report_json_out) {
    g_last_error = "dvnc_concentration_check: null argument";
    return DVNC_ERROR_CONFIG;
  }
  return guarded([&] {
    json j = json::parse(spec_json, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      dvnc::fail(dvnc::ErrorKind::config, "concentration: invalid JSON");

    dvnc::ConcentrationSpec spec;
    spec.codebook_size = j.value("L", int64_t{2});
    spec.segments = j.value("G", int64_t{1});
    spec.dim = j.value("dim", int64_t{1});
    spec.samples = j.value("n", int64_t{100});
    spec.trials = j.value("trials", int64_t{1000});
    spec.delta = j.value("delta", 0.05);
    spec.seed = j.value("seed", uint64_t{0});
    spec.reference_samples = j.value("reference_samples", int64_t{1000000});
    if (j.contains("phi_bound")) {
      if (j["phi_bound"].is_number())
        spec.phi_bound = {j["phi_bound"].get<double>()};
      else
        spec.phi_bound = j["phi_bound"].get<std::vector<double>>();
    } else {
      spec.phi_bound = {1.0};
    }

    dvnc::Codebook cb;
    if (j.contains("codebook")) {
      auto rows = j["codebook"].get<std::vector<std::vector<double>>>();
      if (rows.empty()) dvnc::fail(dvnc::ErrorKind::config, "concentration: empty codebook");
      std::vector<double> flat;
      for (const auto& r : rows) {
        if (static_cast<int64_t>(r.size()) != spec.dim)
          dvnc::fail(dvnc::ErrorKind::config, "concentration: codebook dim mismatch");
        flat.insert(flat.end(), r.begin(), r.end());
      }
      cb = dvnc::Codebook::create(static_cast<int64_t>(rows.size()), spec.dim,
                                  std::move(flat));
    } else {
      cb = dvnc::Codebook::random_init(spec.codebook_size, spec.dim,
                                       dvnc::Rng::derive(spec.seed, 0xC0DEB));
    }

    dvnc::Sampler sampler =
        j.contains("distribution")
            ? sampler_from_json(j["distribution"], spec.segments * spec.dim)
            : dvnc::gaussian_sampler(0.0, 1.0);

    dvnc::ConcentrationReport rep = dvnc::concentration_check(spec, cb, sampler);
    json out;
    out["violation_rate"] = rep.violation_rate;
    out["per_k_violation"] = rep.per_k_violation;
    out["bound"] = rep.bound;
    out["population"] = rep.population;
    out["combos"] = rep.combos;
    out["trials"] = rep.trials;
    *report_json_out = dup_string(out.dump());
  });
}

}  // extern "C"

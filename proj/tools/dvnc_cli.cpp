// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Everything goes through the C API in dvnc/dvnc.h;
// machine-readable results are printed as JSON on stdout, human logs go to
// stderr. Exit codes: 0 success, 2 usage/config error, 3 numeric failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <dvnc/dvnc.h>

namespace {

// JSON arguments accept either an inline document or a path to one.
std::string load_json_arg(const std::string& arg) {
  if (!arg.empty() && (arg[0] == '{' || arg[0] == '[')) return arg;
  std::ifstream in(arg);
  if (!in) {
    std::cerr << "error: cannot open " << arg << "\n";
    std::exit(2);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int exit_code_of(dvnc_status status) {
  if (status == DVNC_OK) return 0;
  std::cerr << "error: " << dvnc_last_error() << "\n";
  return status == DVNC_ERROR_NUMERIC ? 3 : 2;
}

void print_and_free(char* json_out) {
  std::cout << json_out << "\n";
  dvnc_string_free(json_out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-valued neural communication toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, seed_arg, out_dir, ckpt_path, task_arg, params_arg, spec_arg;

  CLI::App* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", config_path, "Path to the training config JSON")
      ->required();
  long long seed_override = -1;
  train->add_option("--seed", seed_override, "Override the config seed");
  train->add_option("--out", out_dir, "Override the config output directory");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a task spec");
  eval->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  eval->add_option("--task", task_arg, "Task spec JSON (inline or path)")->required();

  CLI::App* bounds = app.add_subcommand("bounds", "Evaluate the generalization bounds");
  bounds->add_option("--params", params_arg, "Bound parameters JSON (inline or path)")
      ->required();

  CLI::App* conc =
      app.add_subcommand("concentration", "Monte Carlo concentration check");
  conc->add_option("--spec", spec_arg, "Check spec JSON (inline or path)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints usage / error text
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  if (train->parsed()) {
    std::string config = load_json_arg(config_path);
    char* summary = nullptr;
    dvnc_status st = dvnc_train(config.c_str(),
                                out_dir.empty() ? nullptr : out_dir.c_str(),
                                seed_override, &summary);
    if (st != DVNC_OK) return exit_code_of(st);
    print_and_free(summary);
    return 0;
  }

  if (eval->parsed()) {
    dvnc_model* model = nullptr;
    dvnc_status st = dvnc_model_open(ckpt_path.c_str(), &model);
    if (st != DVNC_OK) return exit_code_of(st);
    std::string task = load_json_arg(task_arg);
    char* metrics = nullptr;
    st = dvnc_model_evaluate(model, task.c_str(), &metrics);
    dvnc_model_close(model);
    if (st != DVNC_OK) return exit_code_of(st);
    print_and_free(metrics);
    return 0;
  }

  if (bounds->parsed()) {
    std::string params = load_json_arg(params_arg);
    char* report = nullptr;
    dvnc_status st = dvnc_bounds_evaluate(params.c_str(), &report);
    if (st != DVNC_OK) return exit_code_of(st);
    print_and_free(report);
    return 0;
  }

  if (conc->parsed()) {
    std::string spec = load_json_arg(spec_arg);
    char* report = nullptr;
    dvnc_status st = dvnc_concentration_check(spec.c_str(), &report);
    if (st != DVNC_OK) return exit_code_of(st);
    print_and_free(report);
    return 0;
  }

  std::cerr << app.help() << "\n";
  return 2;
}

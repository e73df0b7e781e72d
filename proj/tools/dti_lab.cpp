// Copyright 2026 The DTI Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// dti_lab: command-line entry point for the paradigm lab.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dti/common.hpp"
#include "dti/experiment.hpp"
#include "dti/flops.hpp"
#include "dti/leakage.hpp"

#ifdef DTI_HAVE_OPENMP
#include <omp.h>
#endif

namespace {

using nlohmann::json;

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string output_dir;
  std::string paradigm;
  std::string variant;
  std::string csv;
  std::vector<std::size_t> k_list;
  std::size_t k = 0;
  std::size_t n = 0;
  std::size_t epochs = 0;
  std::size_t users = 0;
  long long seed = -1;
  double lr = -1.0;
  bool dump_attention = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("-c,--config", f.config_path, "experiment config (JSON)");
  app->add_option("--set", f.sets, "override any config key, e.g. --set model.d_model=32");
  app->add_option("-o,--output-dir", f.output_dir, "run directory (relative to DTI_OUTPUT_ROOT)");
  app->add_option("--paradigm", f.paradigm, "sliding_window | dti");
  app->add_option("--variant", f.variant, "both_fixes | positional_fix_only | reset_only | no_fixes");
  app->add_option("--csv", f.csv, "load interactions from a csv file instead of generating");
  app->add_option("--k-list", f.k_list, "targets per streaming prompt to compare")->delimiter(',');
  app->add_option("-k,--k", f.k, "targets per streaming prompt");
  app->add_option("-n,--n", f.n, "context interactions");
  app->add_option("--epochs", f.epochs, "maximum epochs");
  app->add_option("--users", f.users, "synthetic users");
  app->add_option("--seed", f.seed, "parameter initialisation seed");
  app->add_option("--lr", f.lr, "base learning rate");
  app->add_flag("--dump-attention", f.dump_attention, "write attention plan and weights");
}

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

// File first, then flags.
dti::ExperimentConfig resolve_config(const CommonFlags& f) {
  json j = json::object();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw dti::ConfigError("cannot open config '" + f.config_path + "'");
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw dti::ConfigError("config '" + f.config_path + "' is not valid JSON: " + e.what());
    }
  }
  const auto set = [&](const std::string& dotted, const json& value) {
    std::string pointer = "/" + dotted;
    for (auto& ch : pointer)
      if (ch == '.') ch = '/';
    j[json::json_pointer(pointer)] = value;
  };
  if (!f.output_dir.empty()) set("output_dir", f.output_dir);
  if (!f.paradigm.empty()) set("train.paradigm", f.paradigm);
  if (!f.variant.empty()) set("variant", f.variant);
  if (!f.csv.empty()) {
    set("dataset.kind", "csv");
    set("dataset.csv_path", f.csv);
  }
  if (!f.k_list.empty()) set("k_list", f.k_list);
  if (f.k) set("prompting.k", f.k);
  if (f.n) set("prompting.n", f.n);
  if (f.epochs) set("train.max_epochs", f.epochs);
  if (f.users) set("dataset.synthetic.num_users", f.users);
  if (f.seed >= 0) set("seed", f.seed);
  if (f.lr >= 0.0) set("train.learning_rate", f.lr);
  if (f.dump_attention) set("dump_attention", true);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw dti::ConfigError("--set expects key=value, got '" + s + "'");
    set(s.substr(0, eq), parse_scalar(s.substr(eq + 1)));
  }
  dti::ExperimentConfig cfg = j.get<dti::ExperimentConfig>();
  cfg.validate();
  return cfg;
}

void apply_workers() {
  if (const char* w = std::getenv("DTI_WORKERS"); w && *w) {
    const int n = std::atoi(w);
    if (n < 1) throw dti::ConfigError("DTI_WORKERS must be a positive integer");
#ifdef DTI_HAVE_OPENMP
    omp_set_num_threads(n);
#endif
  }
}

std::string fmt_auc(const std::optional<double>& a) { return a ? dti::format_value(*a) : "undefined"; }

int cmd_run(const CommonFlags& f) {
  const dti::ExperimentConfig cfg = resolve_config(f);
  const dti::RunSummary s = dti::run_experiment(cfg);
  std::cout << "run directory: " << s.directory.string() << "\n"
            << "best epoch " << s.train.best_epoch << " of " << s.train.history.size() << "\n"
            << "val  auc " << fmt_auc(s.val.auc) << "  log_loss " << s.val.log_loss << "  f1 "
            << s.val.f1 << "\n"
            << "test auc " << fmt_auc(s.test.auc) << "  log_loss " << s.test.log_loss << "  f1 "
            << s.test.f1 << "\n";
  return s.train.diverged ? 1 : 0;
}

int cmd_compare(const CommonFlags& f) {
  const dti::ExperimentConfig cfg = resolve_config(f);
  const dti::ComparisonReport r = dti::compare_paradigms(cfg);
  std::printf("%-15s %4s %-20s %9s %9s %7s %10s %10s %10s %9s\n", "paradigm", "k", "variant",
              "val_auc", "log_loss", "f1", "s/epoch", "formula", "mac_red", "wall_red%");
  bool failed = false;
  for (const auto& row : r.rows) {
    std::printf("%-15s %4zu %-20s %9s %9.5f %7.4f %10.3f %10.4f %10.4f %9.2f %s\n",
                row.paradigm.c_str(), row.k, row.variant.c_str(), fmt_auc(row.auc).substr(0, 9).c_str(),
                row.log_loss, row.f1, row.seconds_per_epoch, row.formula_reduction,
                row.measured_reduction, row.wall_reduction_pct,
                row.status == "ok" ? "" : row.status.c_str());
    failed = failed || row.status == "failed";
  }
  std::cout << "written to " << dti::resolve_output_dir(cfg.output_dir).string() << "\n";
  return failed ? 1 : 0;
}

int cmd_ablate(const CommonFlags& f, const std::vector<std::string>& variant_names) {
  const dti::ExperimentConfig cfg = resolve_config(f);
  const dti::PreparedData data = dti::prepare_data(cfg);
  std::vector<dti::Variant> variants;
  if (variant_names.empty()) {
    variants = dti::standard_variants();
  } else {
    for (const auto& v : variant_names) variants.push_back(dti::variant_by_name(v));
  }
  dti::ModelConfig model = cfg.model;
  if (model.vocab_size == 0) model.vocab_size = data.dataset.vocabulary.size();
  const std::filesystem::path dir = dti::resolve_output_dir(cfg.output_dir);
  if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir))
    throw dti::ConfigError("output directory '" + dir.string() + "' already exists and is not empty");
  const std::string started = dti::utc_timestamp();
  const dti::AblationGrid grid = dti::run_ablation_grid(data.split, model, cfg.prompting, cfg.train,
                                                        cfg.k_list, variants, cfg.seed);
  std::filesystem::create_directories(dir);
  dti::write_ablation_csv(grid, dir / "ablation.csv");
  dti::write_manifest(dir, json(cfg), started, "complete");
  std::printf("%-22s %4s %10s %10s %8s %s\n", "variant", "k", "val_auc", "log_loss", "f1", "status");
  bool failed = false;
  for (const auto& c : grid.cells) {
    std::printf("%-22s %4zu %10s %10.5f %8.4f %s\n", c.variant.c_str(), c.k,
                fmt_auc(c.val_auc).substr(0, 10).c_str(), c.val_log_loss, c.val_f1, c.status.c_str());
    failed = failed || c.status == "failed";
  }
  return failed ? 1 : 0;
}

int cmd_gradcheck(const std::string& mode, const std::string& granularity, bool reset, double eps,
                  double tolerance, std::size_t per_tensor) {
  dti::SyntheticConfig sc;
  sc.num_users = 2;
  sc.items_per_user = 12;
  sc.vocab_size = 3;
  const dti::Dataset data = dti::generate_synthetic_dataset(sc);
  dti::ModelConfig mc;
  mc.layers = 2;
  mc.d_model = 8;
  mc.heads = 2;
  mc.ff_dim = 12;
  mc.vocab_size = data.vocabulary.size();
  mc.max_positions = 64;
  mc.positional_mode = dti::parse_positional_mode(mode);
  mc.reset.enabled = reset;
  mc.reset.granularity = dti::parse_blend_granularity(granularity);
  mc.init_std = 0.5;
  dti::PromptingConfig pc;
  pc.n = 3;
  pc.k = 4;
  const dti::PromptSet set = dti::build_prompt_set(data, pc, dti::Paradigm::dti);
  const auto ex = set.examples();
  const std::vector<dti::PromptExample> batch(ex.begin(), ex.begin() + std::min<std::size_t>(3, ex.size()));
  const dti::GradCheckReport r = dti::finite_difference_check(
      dti::ModelParams::init(mc, 11), batch, eps, per_tensor, 5);
  for (const auto& [name, err] : r.per_tensor) std::printf("%-18s %.3e\n", name.c_str(), err);
  std::printf("max relative error %.3e over %zu entries (tolerance %.1e)\n", r.max_rel_error,
              r.checked, tolerance);
  return r.max_rel_error < tolerance ? 0 : 1;
}

int cmd_flops(std::size_t m, std::size_t n, std::size_t k, std::size_t c, std::size_t layers,
              std::size_t d, std::size_t ff, bool as_json) {
  const dti::FlopsReport r = dti::flops_report(m, n, k, c, layers, d, ff == 0 ? 4 * d : ff);
  if (as_json)
    std::cout << dti::to_json(r).dump(2) << "\n";
  else
    std::cout << dti::format_flops_table(r);
  return 0;
}

int cmd_leakage(std::size_t layers, std::size_t seeds, std::size_t n, const std::string& out) {
  dti::SyntheticConfig sc;
  sc.num_users = 1;
  sc.items_per_user = 4 * n + 2;
  const dti::Dataset data = dti::generate_synthetic_dataset(sc);
  dti::PromptingConfig pc;
  pc.n = n;
  pc.k = 3 * n;
  const dti::PromptSet set = dti::build_prompt_set(data, pc, dti::Paradigm::dti);
  std::vector<std::pair<std::string, dti::SensitivityCurve>> curves;
  for (std::size_t s = 0; s < seeds; ++s)
    for (bool reset : {false, true}) {
      dti::ModelConfig mc;
      mc.layers = layers;
      mc.vocab_size = data.vocabulary.size();
      mc.init_std = 1.0;
      mc.reset.enabled = reset;
      mc.reset.y_max = 1.0;
      const auto params = dti::ModelParams::init(mc, s);
      dti::ProbeConfig probe;
      probe.seed = s;
      auto curve = dti::sensitivity_curve(params, set.prompts.front(), set.plans.front(), probe);
      std::printf("seed %zu reset %-3s max(d<=n) %.3e max(n<d<=2n) %.3e\n", s, reset ? "on" : "off",
                  curve.max_in(0, n), curve.max_in(n, 2 * n));
      curves.emplace_back("seed" + std::to_string(s) + (reset ? "_reset" : "_noreset"), curve);
    }
  if (!out.empty()) dti::write_sensitivity_csv(curves, out);
  return 0;
}

int cmd_plot_data(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<std::filesystem::path> paths(runs.begin(), runs.end());
  dti::emit_plot_data(paths, out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DTI lab: sliding-window vs streaming multi-target training for CTR prediction"};
  app.set_version_flag("--version", std::string(dti::kVersion));
  app.require_subcommand(1);

  CommonFlags run_f, cmp_f, abl_f;
  auto* run = app.add_subcommand("run", "train, evaluate and account one configuration");
  add_common(run, run_f);
  auto* cmp = app.add_subcommand("compare", "sliding-window baseline vs dti at every k");
  add_common(cmp, cmp_f);
  auto* abl = app.add_subcommand("ablate", "train the fix-toggling variant grid");
  add_common(abl, abl_f);
  std::vector<std::string> variant_names;
  abl->add_option("--variants", variant_names, "variants to train (default: all four)")->delimiter(',');

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
  std::string gc_mode = "none", gc_gran = "per_query";
  bool gc_reset = true;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::size_t gc_per = 20;
  gc->add_option("--positional-mode", gc_mode, "absolute | rope | none");
  gc->add_option("--granularity", gc_gran, "per_query | per_token");
  gc->add_option("--reset", gc_reset, "enable the key/value reset");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--tolerance", gc_tol, "maximum relative error");
  gc->add_option("--per-tensor", gc_per, "sampled entries per tensor");

  auto* fl = app.add_subcommand("flops", "analytic vs measured training cost");
  std::size_t fm = 1000, fn = 20, fk = 50, fc = 5, fL = 2, fd = 64, fff = 0;
  bool fjson = false;
  fl->add_option("-m", fm, "interactions per user");
  fl->add_option("-n", fn, "context interactions");
  fl->add_option("-k", fk, "targets per streaming prompt");
  fl->add_option("-c", fc, "tokens per interaction");
  fl->add_option("--layers", fL, "layers");
  fl->add_option("--d-model", fd, "hidden size");
  fl->add_option("--ff-dim", fff, "feed-forward size (default 4 * d)");
  fl->add_flag("--json", fjson, "print JSON instead of a table");

  auto* lk = app.add_subcommand("leakage", "sensitivity of a [SUM] logit to distant context");
  std::size_t lk_layers = 2, lk_seeds = 3, lk_n = 4;
  std::string lk_out;
  lk->add_option("--layers", lk_layers, "layers");
  lk->add_option("--seeds", lk_seeds, "random parameter seeds");
  lk->add_option("-n", lk_n, "context interactions");
  lk->add_option("--out", lk_out, "write curves as CSV");

  auto* pd = app.add_subcommand("plot-data", "collect run histories into one long-format CSV");
  std::vector<std::string> pd_runs;
  std::string pd_out = "plot_data.csv";
  pd->add_option("runs", pd_runs, "run directories");
  pd->add_option("--out", pd_out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    apply_workers();
    if (*run) return cmd_run(run_f);
    if (*cmp) return cmd_compare(cmp_f);
    if (*abl) return cmd_ablate(abl_f, variant_names);
    if (*gc) return cmd_gradcheck(gc_mode, gc_gran, gc_reset, gc_eps, gc_tol, gc_per);
    if (*fl) return cmd_flops(fm, fn, fk, fc, fL, fd, fff, fjson);
    if (*lk) return cmd_leakage(lk_layers, lk_seeds, lk_n, lk_out);
    if (*pd) return cmd_plot_data(pd_runs, pd_out);
  } catch (const dti::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

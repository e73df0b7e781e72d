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

#include "dti/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "dti/common.hpp"

namespace dti {

namespace fs = std::filesystem;

namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config field '" + where + key + "'");
}

nlohmann::json split_json(const SplitRatios& r) {
  return {{"train", r.train}, {"val", r.val}, {"test", r.test}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.kind == "synthetic") {
    dataset.synthetic.validate();
  } else if (dataset.kind == "csv") {
    if (dataset.csv_path.empty()) throw ConfigError("dataset.csv_path is required for csv sources");
    if (!fs::exists(dataset.csv_path))
      throw ConfigError("dataset.csv_path '" + dataset.csv_path + "' does not exist");
  } else {
    throw ConfigError("dataset.kind must be synthetic or csv, got '" + dataset.kind + "'");
  }
  const auto& s = dataset.split;
  if (!(s.train > 0 && s.val > 0 && s.test > 0) || std::abs(s.train + s.val + s.test - 1.0) > 1e-9)
    throw ConfigError("dataset.split ratios must be positive and sum to 1");
  prompting.validate();
  train.validate();
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = Vocabulary::kNumReserved + 1;
  m.validate();
  if (k_list.empty()) throw ConfigError("k_list must not be empty");
  for (auto k : k_list)
    if (k == 0) throw ConfigError("k_list entries must be >= 1");
  if (!variant.empty()) variant_by_name(variant);
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"dataset",
                      {{"kind", c.dataset.kind},
                       {"synthetic", c.dataset.synthetic},
                       {"csv_path", c.dataset.csv_path},
                       {"split", split_json(c.dataset.split)}}},
                     {"prompting", c.prompting},
                     {"model", c.model},
                     {"train", c.train},
                     {"k_list", c.k_list},
                     {"variant", c.variant},
                     {"output_dir", c.output_dir},
                     {"seed", c.seed},
                     {"dump_attention", c.dump_attention}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  try {
    reject_unknown_keys(j, {"dataset", "prompting", "model", "train", "k_list", "variant",
                            "output_dir", "seed", "dump_attention"},
                        "");
    const ExperimentConfig d;
    c = d;
    if (j.contains("dataset")) {
      const auto& ds = j.at("dataset");
      reject_unknown_keys(ds, {"kind", "synthetic", "csv_path", "split"}, "dataset.");
      c.dataset.kind = ds.value("kind", d.dataset.kind);
      if (ds.contains("synthetic")) {
        reject_unknown_keys(ds.at("synthetic"),
                            {"num_users", "items_per_user", "vocab_size", "tokens_per_interaction",
                             "latent_dim", "label_noise", "history_weight", "history_window",
                             "num_items", "rng_seed"},
                            "dataset.synthetic.");
        c.dataset.synthetic = ds.at("synthetic").get<SyntheticConfig>();
      }
      c.dataset.csv_path = ds.value("csv_path", d.dataset.csv_path);
      if (ds.contains("split")) {
        const auto& sp = ds.at("split");
        reject_unknown_keys(sp, {"train", "val", "test"}, "dataset.split.");
        c.dataset.split.train = sp.value("train", d.dataset.split.train);
        c.dataset.split.val = sp.value("val", d.dataset.split.val);
        c.dataset.split.test = sp.value("test", d.dataset.split.test);
      }
    }
    if (j.contains("prompting")) {
      reject_unknown_keys(j.at("prompting"), {"n", "k", "token_cap"}, "prompting.");
      c.prompting = j.at("prompting").get<PromptingConfig>();
    }
    if (j.contains("model")) {
      reject_unknown_keys(j.at("model"),
                          {"layers", "d_model", "heads", "ff_dim", "vocab_size", "max_positions",
                           "positional_mode", "sum_position_free", "alibi", "alibi_multiplier",
                           "rope_base", "reset", "dropout", "init_std"},
                          "model.");
      if (j.at("model").contains("reset"))
        reject_unknown_keys(j.at("model").at("reset"),
                            {"enabled", "y_min", "y_max", "granularity", "active_layers"},
                            "model.reset.");
      c.model = j.at("model").get<ModelConfig>();
    }
    if (j.contains("train")) {
      reject_unknown_keys(j.at("train"),
                          {"paradigm", "learning_rate", "weight_decay", "warmup_ratio",
                           "batch_size", "max_epochs", "patience", "seed", "beta1", "beta2",
                           "epsilon", "weighting"},
                          "train.");
      c.train = j.at("train").get<TrainConfig>();
    }
    c.k_list = j.value("k_list", d.k_list);
    c.variant = j.value("variant", d.variant);
    c.output_dir = j.value("output_dir", d.output_dir);
    c.seed = j.value("seed", d.seed);
    c.dump_attention = j.value("dump_attention", d.dump_attention);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return j.get<ExperimentConfig>();
}

fs::path resolve_output_dir(const std::string& dir) {
  fs::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("DTI_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedData out;
  out.dataset = cfg.dataset.kind == "csv" ? load_interactions_csv(cfg.dataset.csv_path)
                                          : generate_synthetic_dataset(cfg.dataset.synthetic);
  out.split = chronological_split(out.dataset, cfg.prompting.n, cfg.dataset.split);
  if (out.split.train.sequences.empty())
    throw ConfigError("no user has enough interactions for n=" + std::to_string(cfg.prompting.n));
  const auto& first = out.split.train.sequences.front().interactions.front();
  out.tokens_per_interaction = first.descriptor_tokens.size();
  return out;
}

namespace {

ModelConfig resolve_model(const ModelConfig& base, const PreparedData& data) {
  ModelConfig m = base;
  if (m.vocab_size == 0) m.vocab_size = data.dataset.vocabulary.size();
  if (m.vocab_size < data.dataset.vocabulary.size())
    throw ConfigError("model.vocab_size " + std::to_string(m.vocab_size) +
                      " is smaller than the dataset vocabulary (" +
                      std::to_string(data.dataset.vocabulary.size()) + ")");
  m.validate();
  return m;
}

void check_positions(const ModelConfig& m, const PromptSet& set) {
  if (m.positional_mode != PositionalMode::absolute) return;
  for (const auto& p : set.prompts)
    if (p.size() > m.max_positions)
      throw ConfigError("prompt of " + std::to_string(p.size()) +
                        " tokens exceeds model.max_positions=" + std::to_string(m.max_positions));
}

struct Prepared {
  ModelConfig model;
  PromptSet train, val, test;
};

Prepared prepare_sets(const ExperimentConfig& cfg, const PreparedData& data) {
  Prepared p;
  p.model = resolve_model(
      cfg.variant.empty() ? cfg.model : apply_variant(cfg.model, variant_by_name(cfg.variant)), data);
  p.train = build_prompt_set(data.split.train, cfg.prompting, cfg.train.paradigm);
  p.val = build_prompt_set(data.split.val, cfg.prompting, Paradigm::sliding_window);
  p.test = build_prompt_set(data.split.test, cfg.prompting, Paradigm::sliding_window);
  if (p.train.size() == 0 || p.val.size() == 0 || p.test.size() == 0)
    throw ConfigError("a split produced no prompts; check n and the split ratios");
  check_positions(p.model, p.train);
  check_positions(p.model, p.val);
  return p;
}

RunSummary run_prepared(const ExperimentConfig& cfg, const Prepared& p) {
  RunSummary s;
  s.model = p.model;
  s.train = train(ModelParams::init(p.model, cfg.seed), p.train, p.val, cfg.train);
  s.val = evaluate(s.train.params, p.val);
  s.test = evaluate(s.train.params, p.test);
  return s;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

nlohmann::json metric_json(const MetricsReport& r) {
  nlohmann::json j{{"count", r.count}};
  j["auc"] = r.auc ? nlohmann::json(format_value(*r.auc)) : nlohmann::json("undefined");
  j["log_loss"] = format_value(r.log_loss);
  j["f1"] = format_value(r.f1);
  return j;
}

void prepare_output_dir(const fs::path& dir) {
  if (fs::exists(dir) && (!fs::is_directory(dir) || !fs::is_empty(dir)))
    throw ConfigError("output directory '" + dir.string() + "' already exists and is not empty");
  fs::create_directories(dir);
}

}  // namespace

RunSummary run_in_memory(const ExperimentConfig& cfg, const PreparedData& data) {
  return run_prepared(cfg, prepare_sets(cfg, data));
}

RunSummary run_experiment(const ExperimentConfig& cfg) {
  const PreparedData data = prepare_data(cfg);
  const Prepared p = prepare_sets(cfg, data);
  const fs::path dir = resolve_output_dir(cfg.output_dir);
  prepare_output_dir(dir);
  const std::string started = utc_timestamp();
  ExperimentConfig snapshot = cfg;
  snapshot.model = p.model;
  const nlohmann::json config_json = snapshot;
  write_json(dir / "config.json", config_json);

  RunSummary s;
  try {
    s = run_prepared(cfg, p);
    s.directory = dir;
    write_history_csv(s.train.history, dir / "history.csv");
    write_json(dir / "metrics.json",
                {{"paradigm", to_string(cfg.train.paradigm)},
                 {"k", cfg.train.paradigm == Paradigm::dti ? cfg.prompting.k : 1},
                 {"best_epoch", s.train.best_epoch},
                 {"epochs_run", s.train.history.size()},
                 {"steps", s.train.steps},
                 {"diverged", s.train.diverged},
                 {"val", metric_json(s.val)},
                 {"test", metric_json(s.test)},
                 {"excluded_users", data.split.excluded_users}});
    const double c = static_cast<double>(data.tokens_per_interaction);
    const double n = static_cast<double>(cfg.prompting.n);
    const double k = cfg.train.paradigm == Paradigm::dti ? static_cast<double>(cfg.prompting.k) : 1.0;
    write_json(dir / "flops.json",
               {{"train_forward_linear_macs", s.train.train_macs.linear},
                {"train_forward_attention_macs", s.train.train_macs.attention},
                {"train_macs", training_macs(s.train.train_macs)},
                {"train_tokens", s.train.train_tokens},
                {"train_targets", s.train.train_targets},
                {"tokens_per_target", static_cast<double>(s.train.train_tokens) /
                                          static_cast<double>(std::max<std::uint64_t>(1, s.train.train_targets))},
                {"formula_reduction", reduction_ratio(n * c, k * c, k)}});
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : s.train.history) epochs.push_back({{"epoch", e.epoch}, {"seconds", e.seconds}});
    write_json(dir / "timing.json", {{"train_seconds", s.train.train_seconds},
                                     {"val_eval_seconds", s.val.seconds},
                                     {"test_eval_seconds", s.test.seconds},
                                     {"epochs", epochs}});
    save_checkpoint(s.train.params, dir / "checkpoint");
    if (cfg.dump_attention) {
      ForwardCache fc;
      forward(s.train.params, p.val.prompts.front(), p.val.plans.front(), {}, &fc);
      std::ofstream out(dir / "attention_dump.txt");
      out << "# plan (1 = attendable)\n" << format_plan_matrix(p.val.plans.front());
      for (std::size_t l = 0; l < p.model.layers; ++l)
        for (std::size_t h = 0; h < p.model.heads; ++h)
          out << "# layer " << l + 1 << " head " << h + 1 << '\n' << format_layer_attention(fc, l, h);
    }
    write_manifest(dir, config_json, started, s.train.diverged ? "diverged" : "complete");
  } catch (...) {
    try {
      write_manifest(dir, config_json, started, "failed");
    } catch (...) {
    }
    throw;
  }
  return s;
}

ComparisonReport compare_paradigms(const ExperimentConfig& cfg, bool write) {
  const PreparedData data = prepare_data(cfg);
  fs::path dir;
  std::string started;
  if (write) {
    dir = resolve_output_dir(cfg.output_dir);
    prepare_output_dir(dir);
    started = utc_timestamp();
  }
  ComparisonReport rep;
  const double c = static_cast<double>(data.tokens_per_interaction);
  const double n = static_cast<double>(cfg.prompting.n);

  const auto run_cell = [&](Paradigm paradigm, std::size_t k, const std::string& variant) {
    ComparisonRow row;
    row.paradigm = to_string(paradigm);
    row.k = k;
    row.variant = variant;
    try {
      ExperimentConfig cell = cfg;
      cell.train.paradigm = paradigm;
      cell.prompting.k = k;
      cell.variant = variant;
      const RunSummary s = run_in_memory(cell, data);
      row.auc = s.val.auc;
      row.log_loss = s.val.log_loss;
      row.f1 = s.val.f1;
      row.epochs = s.train.history.size();
      const double epochs = static_cast<double>(std::max<std::size_t>(1, row.epochs));
      double secs = 0.0;
      for (const auto& e : s.train.history) secs += e.seconds;
      row.seconds_per_epoch = secs / epochs;
      row.train_macs_per_epoch = training_macs(s.train.train_macs) / epochs;
      row.tokens_per_target = static_cast<double>(s.train.train_tokens) /
                              static_cast<double>(std::max<std::uint64_t>(1, s.train.train_targets));
      row.formula_reduction = reduction_ratio(n * c, static_cast<double>(k) * c, static_cast<double>(k));
      if (s.train.diverged) row.status = "diverged";
    } catch (const std::exception& e) {
      row.status = "failed";
      row.error = e.what();
      std::clog << "compare: cell " << row.paradigm << " k=" << k << " failed: " << e.what() << "\n";
    }
    return row;
  };

  rep.rows.push_back(run_cell(Paradigm::sliding_window, 1, cfg.variant));
  for (std::size_t k : cfg.k_list) rep.rows.push_back(run_cell(Paradigm::dti, k, cfg.variant));
  const ComparisonRow& sw = rep.rows.front();
  for (auto& r : rep.rows) {
    if (r.status == "failed" || sw.status == "failed") continue;
    r.measured_reduction = sw.train_macs_per_epoch / r.train_macs_per_epoch;
    r.wall_reduction_pct = 100.0 * (1.0 - r.seconds_per_epoch / sw.seconds_per_epoch);
  }
  if (write) {
    write_comparison_csv(rep, dir / "comparison.csv");
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows)
      rows.push_back({{"paradigm", r.paradigm},
                      {"k", r.k},
                      {"variant", r.variant},
                      {"auc", r.auc ? nlohmann::json(*r.auc) : nlohmann::json("undefined")},
                      {"log_loss", r.log_loss},
                      {"f1", r.f1},
                      {"epochs", r.epochs},
                      {"seconds_per_epoch", r.seconds_per_epoch},
                      {"train_macs_per_epoch", r.train_macs_per_epoch},
                      {"tokens_per_target", r.tokens_per_target},
                      {"formula_reduction", r.formula_reduction},
                      {"measured_reduction", r.measured_reduction},
                      {"wall_reduction_pct", r.wall_reduction_pct},
                      {"status", r.status},
                      {"error", r.error}});
    write_json(dir / "comparison.json", rows);
    write_manifest(dir, nlohmann::json(cfg), started, "complete");
  }
  return rep;
}

void write_comparison_csv(const ComparisonReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "paradigm,k,variant,val_auc,val_log_loss,val_f1,epochs,seconds_per_epoch,"
         "train_macs_per_epoch,tokens_per_target,formula_reduction,measured_reduction,"
         "wall_reduction_pct,status\n";
  for (const auto& row : r.rows)
    out << row.paradigm << ',' << row.k << ',' << row.variant << ','
        << (row.auc ? format_value(*row.auc) : "undefined") << ',' << format_value(row.log_loss)
        << ',' << format_value(row.f1) << ',' << row.epochs << ','
        << format_value(row.seconds_per_epoch) << ',' << format_value(row.train_macs_per_epoch)
        << ',' << format_value(row.tokens_per_target) << ',' << format_value(row.formula_reduction)
        << ',' << format_value(row.measured_reduction) << ','
        << format_value(row.wall_reduction_pct) << ',' << row.status << '\n';
}

void emit_plot_data(const std::vector<fs::path>& runs, const fs::path& out_path) {
  std::ofstream out(out_path);
  if (!out) throw Error("cannot write '" + out_path.string() + "'");
  out << "run_id,k,variant,epoch,metric,value\n";
  for (const auto& run : runs) {
    std::ifstream cin(run / "config.json");
    if (!cin) throw Error("run '" + run.string() + "' has no config.json");
    const nlohmann::json cfg = nlohmann::json::parse(cin);
    const bool is_dti = cfg.at("train").value("paradigm", "sliding_window") == "dti";
    const std::size_t k = is_dti ? cfg.at("prompting").value("k", std::size_t{1}) : 1;
    const auto& model = cfg.at("model");
    std::string variant = is_dti ? "dti" : "sliding_window";
    variant += model.value("positional_mode", "none") == "none" && model.value("sum_position_free", true)
                   ? "+positional_fix"
                   : "";
    variant += model.at("reset").value("enabled", false) ? "+reset" : "";
    const std::string run_id = run.filename().empty() ? run.parent_path().filename().string()
                                                      : run.filename().string();
    std::ifstream hin(run / "history.csv");
    if (!hin) throw Error("run '" + run.string() + "' has no history.csv");
    std::string line;
    std::getline(hin, line);
    while (std::getline(hin, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      if (f.size() != 4) throw Error("malformed history row in '" + run.string() + "': " + line);
      out << run_id << ',' << k << ',' << variant << ',' << f[0] << ',' << f[1] << '_' << f[2]
          << ',' << f[3] << '\n';
    }
  }
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256: digest initialisation failed");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, const nlohmann::json& config, const std::string& started,
                    const std::string& status) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  nlohmann::json inventory = nlohmann::json::array();
  for (const auto& f : files)
    inventory.push_back({{"path", fs::relative(f, dir).generic_string()},
                         {"bytes", fs::file_size(f)},
                         {"sha256", sha256_file(f)}});
  write_json(dir / "manifest.json", {{"artifact_version", kVersion},
                                     {"status", status},
                                     {"partial", status == "failed"},
                                     {"started", started},
                                     {"finished", utc_timestamp()},
                                     {"config", config},
                                     {"files", inventory}});
}

}  // namespace dti

#pragma once

// Config-driven runs: one JSON document describes data, split, model,
// training and attacks. Commands write their artifacts into an output
// directory and finish with manifest.json.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crl/attacks.hpp"
#include "crl/checkpoint.hpp"
#include "crl/data.hpp"
#include "crl/error.hpp"
#include "crl/trainer.hpp"
#include "json.hpp"

#ifndef CRL_VERSION
#define CRL_VERSION "0.0.0"
#endif

namespace crl {

using nlohmann::json;

struct DatasetSource {
  std::optional<BlobSpec> generator;  // exactly one of generator / csv
  std::optional<std::string> csv;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::uint64_t split_seed = 0;
  std::vector<std::size_t> layer_sizes{20, 64, 32, 5};
  TrainingConfig training;
  std::size_t n_shadow = 5;
  AttackOptions attack;
  std::string output_dir;
  json sweep_grid = json::object();  // dotted key -> list of values
  fs::path base_dir = ".";           // relative csv paths resolve against this
};

namespace detail {

/// Reads one JSON object, remembering which keys were consumed so that any
/// leftover key can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), ErrorKind::Config, where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  ObjectReader child(const std::string& key) {
    const json* v = raw(key);
    require(v != nullptr, ErrorKind::Config, field(key) + ": missing");
    return ObjectReader(*v, field(key));
  }

  void number(const std::string& key, double& out) {
    if (const json* v = raw(key)) {
      require(v->is_number(), ErrorKind::Config, field(key) + ": expected a number");
      out = v->get<double>();
    }
  }

  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = raw(key)) {
      require(v->is_number_integer(), ErrorKind::Config, field(key) + ": expected an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        require(v->get<std::int64_t>() >= 0 || v->is_number_unsigned(), ErrorKind::Config,
                field(key) + ": expected a non-negative integer");
      }
      out = v->get<Int>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = raw(key)) {
      require(v->is_boolean(), ErrorKind::Config, field(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = raw(key)) {
      require(v->is_string(), ErrorKind::Config, field(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  void sizes(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = raw(key)) {
      require(v->is_array(), ErrorKind::Config, field(key) + ": expected a list of integers");
      out.clear();
      for (const auto& e : *v) {
        require(e.is_number_unsigned() || (e.is_number_integer() && e.get<std::int64_t>() >= 0), ErrorKind::Config,
                field(key) + ": expected a list of non-negative integers");
        out.push_back(e.get<std::size_t>());
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      require(seen_.count(key) > 0, ErrorKind::Config, "unknown key '" + field(key) + "'");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_relax(ObjectReader r, RelaxConfig& rc) {
  r.number("alpha_rce", rc.alpha_rce);
  r.number("alpha_rcl", rc.alpha_rcl);
  r.number("tau_rce", rc.tau_rce);
  r.number("tau_rcl", rc.tau_rcl);
  r.number("lambda", rc.lambda);
  r.finish();
}

inline void read_training(ObjectReader r, TrainingConfig& t) {
  std::string defense = to_string(t.defense);
  r.string("defense", defense);
  try {
    t.defense = defense_from_string(defense);
  } catch (const Error& e) {
    fail(ErrorKind::Config, r.field("defense") + ": " + e.message());
  }
  r.integer("epochs", t.epochs);
  r.integer("batch_size", t.batch_size);
  r.number("lr", t.lr);
  r.number("center_lr", t.center_lr);
  r.number("center_init_scale", t.center_init_scale);
  r.boolean("nonnegative_centers", t.nonnegative_centers);
  r.number("momentum", t.momentum);
  r.number("weight_decay", t.weight_decay);
  r.integer("lr_decay_every", t.lr_decay_every);
  r.number("lr_decay_factor", t.lr_decay_factor);
  if (r.has("relax")) read_relax(r.child("relax"), t.relax);
  r.number("smoothing_eps", t.smoothing_eps);
  r.number("penalty_beta", t.penalty_beta);
  if (const json* v = r.raw("early_stop_epoch"); v && !v->is_null()) {
    require(v->is_number_integer(), ErrorKind::Config, r.field("early_stop_epoch") + ": expected an integer or null");
    t.early_stop_epoch = v->get<int>();
  }
  r.integer("seed", t.seed);
  r.integer("eval_every", t.eval_every);
  r.finish();
}

inline void read_attack(ObjectReader r, ExperimentConfig& cfg) {
  AttackOptions& a = cfg.attack;
  if (const json* v = r.raw("attacks")) {
    require(v->is_array() && !v->empty(), ErrorKind::Config, r.field("attacks") + ": expected a non-empty list");
    a.attacks.clear();
    for (const auto& name : *v) {
      require(name.is_string(), ErrorKind::Config, r.field("attacks") + ": expected attack names");
      try {
        a.attacks.push_back(attack_from_string(name.get<std::string>()));
      } catch (const Error& e) {
        fail(ErrorKind::Config, r.field("attacks") + ": " + e.message());
      }
    }
  }
  r.integer("n_shadow", cfg.n_shadow);
  r.integer("attack_seed", a.attack_seed);
  r.integer("histogram_bins", a.histogram_bins);
  if (r.has("nn")) {
    ObjectReader nn = r.child("nn");
    nn.integer("epochs", a.nn.epochs);
    nn.number("lr", a.nn.lr);
    nn.number("momentum", a.nn.momentum);
    nn.integer("batch_size", a.nn.batch_size);
    nn.number("dropout", a.nn.dropout);
    nn.finish();
  }
  r.finish();
}

inline bool uses_nn(const AttackOptions& a) {
  return std::find(a.attacks.begin(), a.attacks.end(), AttackKind::NN) != a.attacks.end();
}

}  // namespace detail

/// Checks every nested invariant; messages carry the field path.
inline void validate(const ExperimentConfig& cfg) {
  require(cfg.dataset.generator.has_value() != cfg.dataset.csv.has_value(), ErrorKind::Config,
          "dataset: give exactly one of 'generator' or 'csv'");
  if (const auto& g = cfg.dataset.generator) {
    require(g->classes >= 2, ErrorKind::Config, "dataset.generator.classes must be >= 2");
    require(g->dim >= 1, ErrorKind::Config, "dataset.generator.dim must be >= 1");
    require(g->n >= 2 * g->classes && g->n >= 4, ErrorKind::Config, "dataset.generator.n must be >= 2 * classes");
    require(g->separation > 0.0, ErrorKind::Config, "dataset.generator.separation must be > 0");
    require(g->label_noise >= 0.0 && g->label_noise < 1.0, ErrorKind::Config,
            "dataset.generator.label_noise must be in [0,1)");
    require(cfg.layer_sizes.size() >= 3, ErrorKind::Config, "model.layer_sizes needs at least 3 entries");
    require(cfg.layer_sizes.front() == g->dim, ErrorKind::Config,
            "model.layer_sizes[0] must equal dataset.generator.dim");
    require(cfg.layer_sizes.back() == g->classes, ErrorKind::Config,
            "model.layer_sizes must end with dataset.generator.classes");
  }
  require(cfg.layer_sizes.size() >= 3, ErrorKind::Config, "model.layer_sizes needs at least 3 entries");
  for (std::size_t s : cfg.layer_sizes) require(s >= 1, ErrorKind::Config, "model.layer_sizes entries must be >= 1");
  cfg.training.validate();
  const AttackOptions& a = cfg.attack;
  require(a.histogram_bins >= 1, ErrorKind::Config, "attack.histogram_bins must be >= 1");
  require(!detail::uses_nn(a) || cfg.n_shadow >= 1, ErrorKind::Config,
          "attack.n_shadow must be >= 1 when the nn attack is enabled");
  require(a.nn.epochs >= 1, ErrorKind::Config, "attack.nn.epochs must be >= 1");
  require(a.nn.lr > 0.0, ErrorKind::Config, "attack.nn.lr must be > 0");
  require(a.nn.momentum >= 0.0 && a.nn.momentum < 1.0, ErrorKind::Config, "attack.nn.momentum must be in [0,1)");
  require(a.nn.batch_size >= 1, ErrorKind::Config, "attack.nn.batch_size must be >= 1");
  require(a.nn.dropout >= 0.0 && a.nn.dropout < 1.0, ErrorKind::Config, "attack.nn.dropout must be in [0,1)");
  for (const auto& [key, values] : cfg.sweep_grid.items())
    require(values.is_array() && !values.empty(), ErrorKind::Config,
            "sweep.grid." + key + ": expected a non-empty list of values");
}

inline ExperimentConfig parse_config(const json& doc, const fs::path& base_dir = ".") {
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  detail::ObjectReader root(doc, "");

  if (root.has("dataset")) {
    detail::ObjectReader ds = root.child("dataset");
    if (ds.has("generator")) {
      BlobSpec spec;
      detail::ObjectReader g = ds.child("generator");
      g.integer("seed", spec.seed);
      g.integer("n", spec.n);
      g.integer("dim", spec.dim);
      g.integer("classes", spec.classes);
      g.number("separation", spec.separation);
      g.number("label_noise", spec.label_noise);
      g.finish();
      cfg.dataset.generator = spec;
    }
    if (ds.has("csv")) {
      std::string path;
      ds.string("csv", path);
      cfg.dataset.csv = path;
    }
    ds.finish();
  } else {
    cfg.dataset.generator = BlobSpec{};
  }
  if (root.has("split")) {
    detail::ObjectReader s = root.child("split");
    s.integer("base_seed", cfg.split_seed);
    s.finish();
  }
  if (root.has("model")) {
    detail::ObjectReader m = root.child("model");
    m.sizes("layer_sizes", cfg.layer_sizes);
    m.finish();
  }
  if (root.has("training")) detail::read_training(root.child("training"), cfg.training);
  if (root.has("attack")) detail::read_attack(root.child("attack"), cfg);
  root.string("output_dir", cfg.output_dir);
  if (root.has("sweep")) {
    detail::ObjectReader s = root.child("sweep");
    if (const json* grid = s.raw("grid")) {
      require(grid->is_object(), ErrorKind::Config, "sweep.grid: expected an object of dotted keys");
      cfg.sweep_grid = *grid;
    }
    s.finish();
  }
  root.finish();
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Config, "config file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

/// Fully resolved config, every field present; the config hash is taken over
/// its compact dump. The sweep grid is left out.
inline json to_json(const ExperimentConfig& cfg) {
  json j;
  if (const auto& g = cfg.dataset.generator)
    j["dataset"]["generator"] = {{"seed", g->seed},           {"n", g->n},
                                 {"dim", g->dim},             {"classes", g->classes},
                                 {"separation", g->separation}, {"label_noise", g->label_noise}};
  else
    j["dataset"]["csv"] = *cfg.dataset.csv;
  j["split"]["base_seed"] = cfg.split_seed;
  j["model"]["layer_sizes"] = cfg.layer_sizes;
  const TrainingConfig& t = cfg.training;
  j["training"] = {{"defense", to_string(t.defense)},
                   {"epochs", t.epochs},
                   {"batch_size", t.batch_size},
                   {"lr", t.lr},
                   {"center_lr", t.center_lr},
                   {"center_init_scale", t.center_init_scale},
                   {"nonnegative_centers", t.nonnegative_centers},
                   {"momentum", t.momentum},
                   {"weight_decay", t.weight_decay},
                   {"lr_decay_every", t.lr_decay_every},
                   {"lr_decay_factor", t.lr_decay_factor},
                   {"relax",
                    {{"alpha_rce", t.relax.alpha_rce},
                     {"alpha_rcl", t.relax.alpha_rcl},
                     {"tau_rce", t.relax.tau_rce},
                     {"tau_rcl", t.relax.tau_rcl},
                     {"lambda", t.relax.lambda}}},
                   {"smoothing_eps", t.smoothing_eps},
                   {"penalty_beta", t.penalty_beta},
                   {"early_stop_epoch", t.early_stop_epoch ? json(*t.early_stop_epoch) : json(nullptr)},
                   {"seed", t.seed},
                   {"eval_every", t.eval_every}};
  json names = json::array();
  for (AttackKind k : cfg.attack.attacks) names.push_back(to_string(k));
  const AttackTrainConfig& nn = cfg.attack.nn;
  j["attack"] = {{"attacks", names},
                 {"n_shadow", cfg.n_shadow},
                 {"attack_seed", cfg.attack.attack_seed},
                 {"histogram_bins", cfg.attack.histogram_bins},
                 {"nn",
                  {{"epochs", nn.epochs},
                   {"lr", nn.lr},
                   {"momentum", nn.momentum},
                   {"batch_size", nn.batch_size},
                   {"dropout", nn.dropout}}}};
  j["output_dir"] = cfg.output_dir;
  return j;
}

inline std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a(to_json(cfg).dump())); }

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  Dataset data;  // standardized with target-train statistics
  SplitPlan plan;
};

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.generator) return gen_blobs(*cfg.dataset.generator);
  fs::path p = *cfg.dataset.csv;
  if (p.is_relative()) p = cfg.base_dir / p;
  Dataset ds = load_csv(p.string());
  require(ds.dim() == cfg.layer_sizes.front(), ErrorKind::Config,
          "model.layer_sizes[0] = " + std::to_string(cfg.layer_sizes.front()) + " but " + p.string() + " has " +
              std::to_string(ds.dim()) + " features");
  require(ds.num_classes == cfg.layer_sizes.back(), ErrorKind::Config,
          "model.layer_sizes ends with " + std::to_string(cfg.layer_sizes.back()) + " but " + p.string() + " has " +
              std::to_string(ds.num_classes) + " classes");
  return ds;
}

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  Dataset raw = load_dataset(cfg);
  SplitPlan plan = make_split(raw.size(), cfg.split_seed, cfg.n_shadow);
  Dataset data = Standardizer::fit(raw, plan.target.train).apply(std::move(raw));
  return {std::move(data), std::move(plan)};
}

// ---------------------------------------------------------------------------
// Manifest

struct RunManifest {
  std::string command;
  std::string config_hash;
  json seeds;
  std::vector<std::string> artifacts;
  double wall_clock_seconds = 0.0;
  json extra = json::object();
};

inline json versions() {
  return {{"crl_lab", CRL_VERSION}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}};
}

inline json seeds_of(const ExperimentConfig& cfg) {
  json s{{"split", cfg.split_seed}, {"training", cfg.training.seed}, {"attack", cfg.attack.attack_seed}};
  if (cfg.dataset.generator) s["dataset"] = cfg.dataset.generator->seed;
  return s;
}

inline void write_manifest(const fs::path& dir, const RunManifest& m) {
  json j{{"command", m.command},
         {"config_hash", m.config_hash},
         {"seeds", m.seeds},
         {"artifacts", m.artifacts},
         {"wall_clock_seconds", m.wall_clock_seconds},
         {"versions", versions()}};
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  write_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Commands

struct TrainOutcome {
  TrainResult result;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::string checkpoint_hash;
};

inline TrainOutcome run_train(const ExperimentConfig& cfg, const fs::path& out_dir) {
  Stopwatch clock;
  const PreparedData prep = prepare_data(cfg);
  const Dataset train_set = prep.data.subset(prep.plan.target.train);
  const Dataset test_set = prep.data.subset(prep.plan.target.test);

  TrainOutcome out;
  out.result = train(cfg.training, cfg.layer_sizes, train_set, &test_set);
  out.train_acc = evaluate_accuracy(out.result.params, train_set);
  out.test_acc = evaluate_accuracy(out.result.params, test_set);
  out.checkpoint_hash = checkpoint_hash(out.result.params, out.result.centers);

  fs::create_directories(out_dir);
  const int epochs_run = static_cast<int>(out.result.history.size());
  save_checkpoint(out_dir, out.result.params, out.result.centers,
                  {cfg.layer_sizes, cfg.training.seed, epochs_run, to_string(cfg.training.defense)});
  std::ostringstream history;
  write_history_csv(history, out.result.history);
  write_atomic(out_dir / "history.csv", history.str());
  write_atomic(out_dir / "split.json", split_to_json(prep.plan).dump() + "\n");
  write_atomic(out_dir / "config.json", to_json(cfg).dump(2) + "\n");

  RunManifest m{"train", config_hash(cfg), seeds_of(cfg), {"model.json", "model.bin"}, 0.0, json::object()};
  if (out.result.centers.centers.size() > 0) m.artifacts.push_back("centers.bin");
  for (const char* f : {"history.csv", "split.json", "config.json"}) m.artifacts.push_back(f);
  m.extra = {{"checkpoint_hash", out.checkpoint_hash},
             {"epochs_run", epochs_run},
             {"train_acc", out.train_acc},
             {"test_acc", out.test_acc}};
  m.wall_clock_seconds = clock.seconds();
  write_manifest(out_dir, m);
  return out;
}

/// Fraction of members whose distance to the boundary falls in the top decile [0.9, 1].
inline double top_decile_fraction(const Vector& member_distances) {
  if (member_distances.empty()) return 0.0;
  std::size_t top = 0;
  for (double d : member_distances)
    if (d >= 0.9) ++top;
  return static_cast<double>(top) / static_cast<double>(member_distances.size());
}

struct AttackOutcome {
  SuiteResult suite;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double boundary_intersection = 0.0;
  double member_top_decile = 0.0;
};

/// Attacks a target under the adaptive protocol: shadows (when the NN attack
/// is on) are trained with the target's own defense and config.
inline AttackOutcome attack_model(const ExperimentConfig& cfg, const ModelParams& target, const PreparedData& prep) {
  std::vector<ShadowRun> shadows;
  if (detail::uses_nn(cfg.attack)) shadows = train_shadow_models(prep.data, prep.plan, cfg.layer_sizes, cfg.training);

  AttackOutcome out;
  out.suite = run_attack_suite(target, prep.data, prep.plan, shadows, cfg.attack);
  out.train_acc = evaluate_accuracy(target, prep.data.subset(prep.plan.target.train));
  out.test_acc = evaluate_accuracy(target, prep.data.subset(prep.plan.target.test));
  out.boundary_intersection = histogram_intersection(out.suite.boundary);
  const Dataset members = prep.data.subset(prep.plan.target.train);
  const Matrix probs = predict_proba(target, members.x);
  Vector d(members.size());
  for (std::size_t r = 0; r < members.size(); ++r) d[r] = distance_to_boundary(probs.row(r));
  out.member_top_decile = top_decile_fraction(d);
  return out;
}

inline json report_json(const AttackOutcome& a, const std::string& defense) {
  json attacks = json::array();
  for (const auto& r : a.suite.reports)
    attacks.push_back({{"name", r.name},
                       {"auc", r.auc},
                       {"thresholded_accuracy", r.thresholded_accuracy},
                       {"per_class_thresholds", r.per_class_thresholds}});
  return {{"defense", defense},
          {"train_acc", a.train_acc},
          {"test_acc", a.test_acc},
          {"attacks", attacks},
          {"boundary",
           {{"histogram_intersection", a.boundary_intersection}, {"member_top_decile_fraction", a.member_top_decile}}}};
}

inline std::string scores_csv(const AttackReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "score,is_member\n";
  for (double s : r.member_scores) out << s << ",1\n";
  for (double s : r.nonmember_scores) out << s << ",0\n";
  return out.str();
}

inline AttackOutcome run_attack(const ExperimentConfig& cfg, const fs::path& target_dir, const fs::path& out_dir) {
  Stopwatch clock;
  const Checkpoint ck = load_checkpoint(target_dir);
  require(ck.info.defense == to_string(cfg.training.defense), ErrorKind::Config,
          "training.defense: attack config names '" + std::string(to_string(cfg.training.defense)) +
              "' but the target was trained with '" + ck.info.defense + "'");
  require(ck.info.layer_sizes == cfg.layer_sizes, ErrorKind::Config,
          "model.layer_sizes does not match the target checkpoint");
  if (fs::exists(target_dir / "config.json")) {
    const json target_cfg = json::parse(detail::read_file(target_dir / "config.json"));
    const json mine = to_json(cfg);
    for (const char* section : {"dataset", "split"})
      require(target_cfg.value(section, json()) == mine.at(section), ErrorKind::Config,
              std::string(section) + ": attack config differs from the target's training config");
  }

  const PreparedData prep = prepare_data(cfg);
  AttackOutcome out = attack_model(cfg, ck.params, prep);

  fs::create_directories(out_dir);
  RunManifest m{"attack", config_hash(cfg), seeds_of(cfg), {"attack_report.json", "boundary_hist.csv"}, 0.0,
                json::object()};
  for (const auto& r : out.suite.reports) {
    std::ostringstream hist;
    write_histogram_csv(hist, r.histogram);
    write_atomic(out_dir / ("hist_" + r.name + ".csv"), hist.str());
    write_atomic(out_dir / ("scores_" + r.name + ".csv"), scores_csv(r));
    m.artifacts.push_back("hist_" + r.name + ".csv");
    m.artifacts.push_back("scores_" + r.name + ".csv");
  }
  std::ostringstream boundary;
  write_histogram_csv(boundary, out.suite.boundary);
  write_atomic(out_dir / "boundary_hist.csv", boundary.str());
  json report = report_json(out, ck.info.defense);
  report["target"] = target_dir.string();
  write_atomic(out_dir / "attack_report.json", report.dump(2) + "\n");

  m.extra = {{"target", target_dir.string()}, {"target_checkpoint_hash", checkpoint_hash(ck.params, ck.centers)}};
  m.wall_clock_seconds = clock.seconds();
  write_manifest(out_dir, m);
  return out;
}

/// Expands the sweep grid into one config document per point, in key order
/// with the last key varying fastest.
inline std::vector<std::pair<json, json>> expand_grid(const json& base_doc, const json& grid) {
  require(grid.is_object() && !grid.empty(), ErrorKind::Config, "sweep.grid is empty");
  std::vector<std::pair<std::string, json>> axes;
  for (const auto& [key, values] : grid.items()) {
    require(values.is_array() && !values.empty(), ErrorKind::Config,
            "sweep.grid." + key + ": expected a non-empty list of values");
    axes.emplace_back(key, values);
  }
  std::vector<std::pair<json, json>> points;  // (config doc, point values)
  std::vector<std::size_t> at(axes.size(), 0);
  while (true) {
    json doc = base_doc;
    doc.erase("sweep");
    json values = json::object();
    for (std::size_t a = 0; a < axes.size(); ++a) {
      std::string pointer = "/" + axes[a].first;
      for (char& c : pointer)
        if (c == '.') c = '/';
      doc[json::json_pointer(pointer)] = axes[a].second[at[a]];
      values[axes[a].first] = axes[a].second[at[a]];
    }
    points.emplace_back(std::move(doc), std::move(values));
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++at[a] < axes[a].second.size()) break;
      at[a] = 0;
      if (a == 0) return points;
    }
  }
}

inline std::string frontier_header(const json& grid, const std::vector<AttackKind>& attacks) {
  std::string h = "point";
  for (const auto& [key, values] : grid.items()) h += "," + key;
  h += ",train_acc,test_acc";
  for (AttackKind k : attacks) h += std::string(",auc_") + to_string(k);
  return h + "\n";
}

/// One train + attack per grid point; frontier.csv has one row per point.
inline std::size_t run_sweep(const json& doc, const fs::path& base_dir, const fs::path& out_dir) {
  Stopwatch clock;
  const ExperimentConfig base = parse_config(doc, base_dir);
  const auto points = expand_grid(doc, base.sweep_grid);
  // Validate every point before any work starts.
  std::vector<ExperimentConfig> configs;
  for (std::size_t i = 0; i < points.size(); ++i) {
    try {
      configs.push_back(parse_config(points[i].first, base_dir));
    } catch (const Error& e) {
      fail(e.kind(), "sweep point " + std::to_string(i) + ": " + e.message());
    }
  }

  fs::create_directories(out_dir);
  std::ostringstream table;
  table.precision(17);
  table << frontier_header(base.sweep_grid, base.attack.attacks);
  RunManifest m{"sweep", config_hash(base), seeds_of(base), {"frontier.csv"}, 0.0, json::object()};
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::ostringstream name;
    name << "point_" << std::setw(3) << std::setfill('0') << i;
    const fs::path dir = out_dir / name.str();
    run_train(configs[i], dir / "train");
    const AttackOutcome a = run_attack(configs[i], dir / "train", dir / "attack");
    table << i;
    for (const auto& [key, value] : points[i].second.items()) table << ',' << value.dump();
    table << ',' << a.train_acc << ',' << a.test_acc;
    for (const auto& r : a.suite.reports) table << ',' << r.auc;
    table << '\n';
    m.artifacts.push_back(name.str());
  }
  write_atomic(out_dir / "frontier.csv", table.str());
  m.extra = {{"points", points.size()}, {"grid", base.sweep_grid}};
  m.wall_clock_seconds = clock.seconds();
  write_manifest(out_dir, m);
  return points.size();
}

inline void run_gen_data(const BlobSpec& spec, const fs::path& out) {
  const Dataset ds = gen_blobs(spec);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path tmp = out.string() + ".tmp";
  save_csv(ds, tmp.string());
  fs::rename(tmp, out);
}

namespace detail {

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline std::string render_attack_report(const json& r) {
  std::ostringstream out;
  out << "defense " << r.value("defense", "?") << "  train_acc " << fixed(r.at("train_acc").get<double>())
      << "  test_acc " << fixed(r.at("test_acc").get<double>()) << "\n";
  out << std::left << std::setw(12) << "attack" << std::setw(10) << "auc"
      << "thresholded_acc\n";
  for (const auto& a : r.at("attacks"))
    out << std::left << std::setw(12) << a.at("name").get<std::string>() << std::setw(10)
        << fixed(a.at("auc").get<double>()) << fixed(a.at("thresholded_accuracy").get<double>()) << "\n";
  const auto& b = r.at("boundary");
  out << "boundary histogram intersection " << fixed(b.at("histogram_intersection").get<double>())
      << ", members in top decile " << fixed(b.at("member_top_decile_fraction").get<double>()) << "\n";
  return out.str();
}

inline std::vector<std::vector<std::string>> read_csv_cells(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(split_csv_line(line));
  return rows;
}

inline std::string render_table(std::vector<std::vector<std::string>> rows) {
  // Decimal cells below the header are shown with four digits.
  for (std::size_t r = 1; r < rows.size(); ++r)
    for (std::string& cell : rows[r])
      if (cell.find('.') != std::string::npos && cell.find_first_not_of("0123456789.-+e") == std::string::npos)
        cell = fixed(std::stod(cell));
  std::vector<std::size_t> width;
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c + 1 < row.size(); ++c)
      out << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
    if (!row.empty()) out << row.back();
    out << "\n";
  }
  return out.str();
}

}  // namespace detail

/// Summary text for a train, attack or sweep output directory.
inline std::string render_report(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::Config, "not a run directory: " + dir.string());
  std::ostringstream out;
  if (fs::exists(dir / "frontier.csv")) {
    out << "sweep " << dir.string() << "\n" << detail::render_table(detail::read_csv_cells(dir / "frontier.csv"));
    return out.str();
  }
  bool any = false;
  if (fs::exists(dir / "attack_report.json")) {
    out << detail::render_attack_report(json::parse(detail::read_file(dir / "attack_report.json")));
    any = true;
  }
  if (fs::exists(dir / "manifest.json")) {
    const json m = json::parse(detail::read_file(dir / "manifest.json"));
    if (m.value("command", "") == "train") {
      out << "train " << dir.string() << "  epochs " << m.at("epochs_run") << "  train_acc "
          << detail::fixed(m.at("train_acc").get<double>()) << "  test_acc "
          << detail::fixed(m.at("test_acc").get<double>()) << "  checkpoint " << m.at("checkpoint_hash").get<std::string>()
          << "\n";
    }
    any = true;
  }
  require(any, ErrorKind::Config, "no manifest, attack_report.json or frontier.csv in " + dir.string());
  return out.str();
}

}  // namespace crl

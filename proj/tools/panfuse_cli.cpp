// Copyright 2026 The Panfuse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// panfuse command line tool.
//
// Subcommands: fuse, eval, sweep, hist, synth, corrupt, bench.
// Exit codes: 0 = success, 2 = configuration error, 3 = input error,
// 4 = internal error.

#include <algorithm>
#include <limits>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "panfuse/panfuse.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInput = 3;
constexpr int kExitInternal = 4;

// Bad flag values, malformed config files, missing required arguments.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

std::string sanitize_id(const std::string& id) {
  std::string out = id.empty() ? std::string("image") : id;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    if (!ok) c = '_';
  }
  return out;
}

// Removes everything this run wrote unless commit() was reached.
class OutputTracker {
 public:
  ~OutputTracker() {
    if (committed_) return;
    for (const fs::path& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  void add(const fs::path& p) {
    std::lock_guard<std::mutex> lock(mu_);
    paths_.push_back(p);
  }
  void commit() { committed_ = true; }

 private:
  std::mutex mu_;
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

// Ties a CLI option, a config-file key, and a variable together so that the
// file can fill in any value the command line did not set (flags win over the
// file, the file wins over defaults).
class ConfigBinder {
 public:
  template <class T>
  void bind(CLI::Option* opt, const std::string& key, T* target) {
    Entry e;
    e.key = key;
    e.opt = opt;
    e.apply = [key, target](const json& v) {
      try {
        *target = v.get<T>();
      } catch (const json::exception& ex) {
        throw ConfigError("config key '" + key + "': " + ex.what());
      }
    };
    e.dump = [key, target](json& out) { out[key] = *target; };
    entries_.push_back(std::move(e));
  }

  void apply_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [k, v] : j.items()) {
      const Entry* entry = nullptr;
      for (const Entry& e : entries_) {
        if (e.key == k) {
          entry = &e;
          break;
        }
      }
      if (entry == nullptr) throw ConfigError("unknown config key: " + k);
      if (entry->opt == nullptr || entry->opt->count() == 0) {
        entry->apply(v);
        applied_.push_back(k);
      }
    }
  }

  // True when the key came from the command line or a --config file; such
  // values outrank spec files.
  bool locked(const std::string& key) const {
    for (const Entry& e : entries_) {
      if (e.key == key) {
        if (e.opt != nullptr && e.opt->count() > 0) return true;
        break;
      }
    }
    return std::find(applied_.begin(), applied_.end(), key) != applied_.end();
  }

  json resolved() const {
    json j = json::object();
    for (const Entry& e : entries_) e.dump(j);
    return j;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt = nullptr;
    std::function<void(const json&)> apply;
    std::function<void(json&)> dump;
  };
  std::vector<Entry> entries_;
  std::vector<std::string> applied_;
};

// Shared --config / --print-config / --workers wiring.
struct CommonOpts {
  std::string config_path;
  bool print_config = false;
  int workers = 0;  // 0 = all available cores

  void attach(CLI::App* cmd, ConfigBinder* binder, bool with_workers = true) {
    cmd->add_option("--config", config_path,
                    "JSON config file; command-line flags take precedence");
    cmd->add_flag("--print-config", print_config,
                  "Print the resolved configuration to stdout");
    if (with_workers) {
      CLI::Option* o = cmd->add_option("--workers", workers,
                                       "Worker threads (0 = all cores)");
      binder->bind(o, "workers", &workers);
    }
  }

  void finish(ConfigBinder& binder) const {
    if (!config_path.empty()) binder.apply_file(config_path);
    if (workers < 0) throw ConfigError("workers must be >= 0");
  }

  int worker_count() const {
    return workers == 0 ? panfuse::default_worker_count() : workers;
  }

  void maybe_print(const ConfigBinder& binder, const std::string& subcommand) const {
    if (!print_config) return;
    json j = binder.resolved();
    j["subcommand"] = subcommand;
    std::cout << j.dump(2) << "\n";
  }
};

std::vector<fs::path> read_path_list(const fs::path& list_path) {
  std::ifstream in(list_path);
  if (!in) throw panfuse::InputError("cannot open list file: " + list_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw panfuse::FormatError("list file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_array()) throw panfuse::FormatError("list file must hold a JSON array");
  std::vector<fs::path> out;
  const fs::path base = list_path.parent_path();
  for (const json& item : j) {
    if (!item.is_string()) {
      throw panfuse::FormatError("list entries must be strings");
    }
    fs::path p = item.get<std::string>();
    out.push_back(p.is_absolute() ? p : base / p);
  }
  return out;
}

std::vector<fs::path> gather_inputs(const std::vector<std::string>& direct,
                                    const std::string& list_path) {
  std::vector<fs::path> inputs;
  for (const std::string& m : direct) inputs.emplace_back(m);
  if (!list_path.empty()) {
    const auto extra = read_path_list(list_path);
    inputs.insert(inputs.end(), extra.begin(), extra.end());
  }
  return inputs;
}

fs::path annotation_sidecar(const fs::path& png_path) {
  fs::path p = png_path;
  p.replace_extension(".json");
  return p;
}

panfuse::PanopticMap load_map(const fs::path& png_path) {
  return panfuse::read_panoptic_png(png_path, annotation_sidecar(png_path));
}

// Uncertainty tensors travel as rank-2 float32 grids. no-prediction pixels
// were already folded to ln C by the writer.
panfuse::UncertaintyMap load_uncertainty(const fs::path& path, int num_classes) {
  const panfuse::Tensor t = panfuse::read_tensor(path);
  if (t.elem_type() != panfuse::ElemType::kFloat32 || t.rank() != 2) {
    throw panfuse::ShapeError("uncertainty tensor must be a rank-2 float32 grid: " +
                              path.string());
  }
  panfuse::UncertaintyMap u;
  u.height = static_cast<int>(t.dims()[0]);
  u.width = static_cast<int>(t.dims()[1]);
  u.num_classes = num_classes;
  const auto vals = t.as_f32();
  u.values.assign(vals.begin(), vals.end());
  u.no_prediction.assign(u.pixel_count(), 0);
  return u;
}

void write_uncertainty_tensor(const panfuse::UncertaintyMap& u, const fs::path& path) {
  const double cap = std::log(static_cast<double>(u.num_classes));
  std::vector<float> vals(u.pixel_count());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const bool missing = i < u.no_prediction.size() && u.no_prediction[i] != 0;
    vals[i] = static_cast<float>(missing ? cap : u.values[i]);
  }
  const panfuse::Tensor t = panfuse::Tensor::from_floats(
      {static_cast<std::uint32_t>(u.height), static_cast<std::uint32_t>(u.width)},
      vals);
  panfuse::write_tensor(t, path);
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw panfuse::InputError("cannot write: " + path.string());
  out << body;
}

// ---------------------------------------------------------------------------
// fuse

struct FuseCmd {
  std::vector<std::string> manifests;
  std::string list_path;
  std::string out_dir;
  std::string method_str = "ours";
  int samples = 0;
  double iou_threshold = 0.6;
  double min_member_fraction = 0.8;
  double min_prob = 0.4;
  int min_pixels = 4;
  double baseline_min_score = 0.85;
  int baseline_min_pixels = 4;
  bool prune = true;
  std::string upscale = "bilinear";
  std::int64_t hungarian_seed = -1;
  CommonOpts common;
  ConfigBinder binder;
  CLI::App* cmd = nullptr;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("fuse", "Fuse an ensemble into a panoptic map");
    binder.bind(cmd->add_option("--manifest", manifests, "Ensemble manifest path (repeatable)"),
                "manifests", &manifests);
    binder.bind(cmd->add_option("--list", list_path, "JSON array of manifest paths"),
                "list", &list_path);
    binder.bind(cmd->add_option("--out", out_dir, "Output directory"), "out", &out_dir);
    binder.bind(cmd->add_option("--method", method_str, "ours | hungarian | baseline"),
                "method", &method_str);
    binder.bind(cmd->add_option("--samples", samples, "Use only the first Q samples (0 = all)"),
                "samples", &samples);
    binder.bind(cmd->add_option("--iou-threshold", iou_threshold, "Instance merge IoU threshold"),
                "iou_threshold", &iou_threshold);
    binder.bind(cmd->add_option("--min-member-fraction", min_member_fraction,
                                "Fraction of samples an instance must appear in"),
                "min_member_fraction", &min_member_fraction);
    binder.bind(cmd->add_option("--min-prob", min_prob, "Pruning: minimum mean class probability"),
                "min_prob", &min_prob);
    binder.bind(cmd->add_option("--min-pixels", min_pixels, "Pruning: minimum segment area"),
                "min_pixels", &min_pixels);
    binder.bind(cmd->add_option("--baseline-min-score", baseline_min_score,
                                "Baseline: minimum top-class softmax score"),
                "baseline_min_score", &baseline_min_score);
    binder.bind(cmd->add_option("--baseline-min-pixels", baseline_min_pixels,
                                "Baseline: minimum segment area"),
                "baseline_min_pixels", &baseline_min_pixels);
    binder.bind(cmd->add_flag("--prune,!--no-prune", prune, "Apply confidence pruning (ours)"),
                "prune", &prune);
    binder.bind(cmd->add_option("--upscale", upscale, "bilinear | nearest"),
                "upscale", &upscale);
    binder.bind(cmd->add_option("--hungarian-seed", hungarian_seed,
                                "Seed for reference-sample draw (-1 = use sample 0)"),
                "hungarian_seed", &hungarian_seed);
    common.attach(cmd, &binder);
  }

  panfuse::FuseParams params() const {
    panfuse::FuseParams p;
    p.q_limit = samples;
    p.iou_threshold = iou_threshold;
    p.min_member_fraction = min_member_fraction;
    p.min_prob = min_prob;
    p.min_pixels = min_pixels;
    p.baseline_min_score = baseline_min_score;
    p.baseline_min_pixels = baseline_min_pixels;
    p.prune_enabled = prune;
    if (hungarian_seed >= 0) {
      p.hungarian_seed = static_cast<std::uint64_t>(hungarian_seed);
    }
    p.upscale = upscale == "nearest" ? panfuse::UpscaleMode::kNearest
                                     : panfuse::UpscaleMode::kBilinear;
    return p;
  }

  void validate() const {
    if (out_dir.empty()) throw ConfigError("fuse: --out is required");
    if (method_str != "ours" && method_str != "hungarian" && method_str != "baseline") {
      throw ConfigError("fuse: unknown method: " + method_str);
    }
    if (upscale != "bilinear" && upscale != "nearest") {
      throw ConfigError("fuse: unknown upscale mode: " + upscale);
    }
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
      throw ConfigError("fuse: iou-threshold must lie in (0, 1]");
    }
    if (!(min_member_fraction > 0.0 && min_member_fraction <= 1.0)) {
      throw ConfigError("fuse: min-member-fraction must lie in (0, 1]");
    }
    if (!(min_prob >= 0.0 && min_prob <= 1.0)) {
      throw ConfigError("fuse: min-prob must lie in [0, 1]");
    }
    if (min_pixels < 1) throw ConfigError("fuse: min-pixels must be >= 1");
    if (!(baseline_min_score >= 0.0 && baseline_min_score <= 1.0)) {
      throw ConfigError("fuse: baseline-min-score must lie in [0, 1]");
    }
    if (baseline_min_pixels < 1) {
      throw ConfigError("fuse: baseline-min-pixels must be >= 1");
    }
    if (samples < 0) throw ConfigError("fuse: samples must be >= 0");
  }

  int run() {
    common.finish(binder);
    validate();
    common.maybe_print(binder, "fuse");
    const std::vector<fs::path> inputs = gather_inputs(manifests, list_path);
    if (inputs.empty()) throw ConfigError("fuse: no input manifests given");

    const panfuse::Method method = panfuse::parse_method(method_str);
    const panfuse::FuseParams p = params();
    const fs::path out(out_dir);
    fs::create_directories(out);

    OutputTracker tracker;
    std::vector<json> entries(inputs.size());
    panfuse::parallel_for(inputs.size(), common.worker_count(), [&](std::size_t i) {
      const panfuse::EnsembleBatch batch = panfuse::load_ensemble(inputs[i]);
      const panfuse::FuseResult r = panfuse::fuse(batch, method, p);
      const std::string id = sanitize_id(batch.image_id());

      const fs::path png = out / (id + "_panoptic.png");
      const fs::path ann = out / (id + "_panoptic.json");
      tracker.add(png);
      tracker.add(ann);
      panfuse::write_panoptic_png(r.map, panfuse::make_segment_table(r.map), png,
                                  ann, batch.image_id());

      json files{{"panoptic_png", png.filename().string()},
                 {"panoptic_json", ann.filename().string()}};
      auto emit = [&](const std::optional<panfuse::UncertaintyMap>& u,
                      const std::string& stem) {
        if (!u) return;
        const fs::path hp = out / (id + "_" + stem + ".png");
        const fs::path tp = out / (id + "_" + stem + ".pftn");
        tracker.add(hp);
        tracker.add(tp);
        panfuse::export_heatmap(*u, hp);
        write_uncertainty_tensor(*u, tp);
        files[stem + "_png"] = hp.filename().string();
        files[stem + "_pftn"] = tp.filename().string();
      };
      emit(r.predictive, "predictive_entropy");
      emit(r.mutual_info, "mutual_information");
      emit(r.softmax_entropy, "softmax_entropy");

      entries[i] = json{{"image_id", batch.image_id()},
                        {"instances", r.instance_count},
                        {"segments", r.segment_count},
                        {"files", files}};
    });

    json report{{"subcommand", "fuse"},
                {"method", method_str},
                {"params", binder.resolved()},
                {"images", entries}};
    const fs::path report_path = out / "report.json";
    tracker.add(report_path);
    write_text(report_path, report.dump(2) + "\n");
    tracker.commit();
    std::cout << "fuse: wrote " << inputs.size() << " image(s) to " << out.string()
              << "\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// eval

struct EvalCmd {
  std::vector<std::string> preds;
  std::vector<std::string> gts;
  std::string catalog_path;
  std::string out_dir;
  double iou_threshold = 0.5;
  CommonOpts common;
  ConfigBinder binder;
  CLI::App* cmd = nullptr;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("eval", "Panoptic quality of predictions against ground truth");
    binder.bind(cmd->add_option("--pred", preds, "Prediction panoptic PNG (repeatable)"),
                "preds", &preds);
    binder.bind(cmd->add_option("--gt", gts, "Ground-truth panoptic PNG (repeatable)"),
                "gts", &gts);
    binder.bind(cmd->add_option("--catalog", catalog_path, "Class catalog JSON"),
                "catalog", &catalog_path);
    binder.bind(cmd->add_option("--out", out_dir, "Output directory"), "out", &out_dir);
    binder.bind(cmd->add_option("--iou-threshold", iou_threshold, "Match threshold (IoU strictly above)"),
                "iou_threshold", &iou_threshold);
    common.attach(cmd, &binder);
  }

  int run() {
    common.finish(binder);
    if (out_dir.empty()) throw ConfigError("eval: --out is required");
    if (catalog_path.empty()) throw ConfigError("eval: --catalog is required");
    if (preds.empty()) throw ConfigError("eval: no predictions given");
    if (preds.size() != gts.size()) {
      throw ConfigError("eval: --pred and --gt counts differ");
    }
    if (!(iou_threshold >= 0.0 && iou_threshold < 1.0)) {
      throw ConfigError("eval: iou-threshold must lie in [0, 1)");
    }
    common.maybe_print(binder, "eval");

    const panfuse::ClassCatalog catalog = panfuse::ClassCatalog::load(catalog_path);
    std::vector<panfuse::PQStats> parts(preds.size());
    panfuse::parallel_for(preds.size(), common.worker_count(), [&](std::size_t i) {
      const panfuse::PanopticMap pred = load_map(preds[i]);
      const panfuse::PanopticMap gt = load_map(gts[i]);
      parts[i] = panfuse::match_segments(pred, gt, iou_threshold);
    });
    panfuse::PQStats stats;
    for (const panfuse::PQStats& s : parts) stats += s;
    const panfuse::PQResult result = panfuse::pq(stats, catalog);

    const fs::path out(out_dir);
    fs::create_directories(out);
    OutputTracker tracker;

    std::ostringstream csv;
    csv << "scope,class_id,class_name,pq,sq,rq,sq_defined,tp,fp,fn,iou_sum,defined,"
           "num_classes\n";
    for (const panfuse::ClassPQ& c : result.per_class) {
      csv << "class," << c.class_id << "," << catalog.name(c.class_id) << ","
          << fmt_double(c.pq) << "," << fmt_double(c.sq) << "," << fmt_double(c.rq)
          << "," << (c.sq_defined ? 1 : 0) << "," << c.tp << "," << c.fp << ","
          << c.fn << "," << fmt_double(c.iou_sum) << "," << (c.defined ? 1 : 0)
          << ",\n";
    }
    auto agg_row = [&](const char* scope, const panfuse::PQAggregate& a) {
      csv << scope << ",,," << fmt_double(a.pq) << "," << fmt_double(a.sq) << ","
          << fmt_double(a.rq) << ",,,,,,," << a.num_classes << "\n";
    };
    agg_row("all", result.all);
    agg_row("things", result.things);
    agg_row("stuff", result.stuff);
    const fs::path csv_path = out / "eval.csv";
    tracker.add(csv_path);
    write_text(csv_path, csv.str());

    json per_class = json::array();
    for (const panfuse::ClassPQ& c : result.per_class) {
      per_class.push_back({{"class_id", c.class_id},
                           {"class_name", catalog.name(c.class_id)},
                           {"pq", c.pq},
                           {"sq", c.sq},
                           {"rq", c.rq},
                           {"sq_defined", c.sq_defined},
                           {"tp", c.tp},
                           {"fp", c.fp},
                           {"fn", c.fn},
                           {"iou_sum", c.iou_sum},
                           {"defined", c.defined}});
    }
    auto agg_json = [](const panfuse::PQAggregate& a) {
      return json{{"pq", a.pq}, {"sq", a.sq}, {"rq", a.rq},
                  {"num_classes", a.num_classes}};
    };
    json summary{{"subcommand", "eval"},
                 {"iou_threshold", iou_threshold},
                 {"per_class", per_class},
                 {"all", agg_json(result.all)},
                 {"things", agg_json(result.things)},
                 {"stuff", agg_json(result.stuff)}};
    const fs::path json_path = out / "eval.json";
    tracker.add(json_path);
    write_text(json_path, summary.dump(2) + "\n");
    tracker.commit();

    std::cout << "eval: PQ=" << fmt_double(result.all.pq)
              << " SQ=" << fmt_double(result.all.sq)
              << " RQ=" << fmt_double(result.all.rq) << " over "
              << result.all.num_classes << " class(es)\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// sweep

struct SweepCmd {
  std::vector<std::string> preds;
  std::vector<std::string> uncertainties;
  std::vector<std::string> gts;
  std::string catalog_path;
  std::string out_dir;
  double iou_threshold = panfuse::kSweepIouThreshold;
  int points = 50;
  double max_removal = 0.95;
  CommonOpts common;
  ConfigBinder binder;
  CLI::App* cmd = nullptr;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand(
        "sweep", "TPR/FDR as ground truth sheds its most uncertain pixels");
    binder.bind(cmd->add_option("--pred", preds, "Prediction panoptic PNG (repeatable)"),
                "preds", &preds);
    binder.bind(cmd->add_option("--uncertainty", uncertainties,
                                "Uncertainty tensor (.pftn, repeatable)"),
                "uncertainties", &uncertainties);
    binder.bind(cmd->add_option("--gt", gts, "Ground-truth panoptic PNG (repeatable)"),
                "gts", &gts);
    binder.bind(cmd->add_option("--catalog", catalog_path, "Class catalog JSON"),
                "catalog", &catalog_path);
    binder.bind(cmd->add_option("--out", out_dir, "Output directory"), "out", &out_dir);
    binder.bind(cmd->add_option("--iou-threshold", iou_threshold, "Match threshold"),
                "iou_threshold", &iou_threshold);
    binder.bind(cmd->add_option("--points", points, "Number of sweep points"),
                "points", &points);
    binder.bind(cmd->add_option("--max-removal", max_removal,
                                "Largest removed fraction targeted by the grid"),
                "max_removal", &max_removal);
    common.attach(cmd, &binder, /*with_workers=*/false);
  }

  int run() {
    common.finish(binder);
    if (out_dir.empty()) throw ConfigError("sweep: --out is required");
    if (catalog_path.empty()) throw ConfigError("sweep: --catalog is required");
    if (preds.empty()) throw ConfigError("sweep: no predictions given");
    if (preds.size() != gts.size() || preds.size() != uncertainties.size()) {
      throw ConfigError("sweep: --pred, --uncertainty and --gt counts differ");
    }
    if (points < 1) throw ConfigError("sweep: points must be >= 1");
    if (!(max_removal >= 0.0 && max_removal < 1.0)) {
      throw ConfigError("sweep: max-removal must lie in [0, 1)");
    }
    if (!(iou_threshold >= 0.0 && iou_threshold < 1.0)) {
      throw ConfigError("sweep: iou-threshold must lie in [0, 1)");
    }
    common.maybe_print(binder, "sweep");

    const panfuse::ClassCatalog catalog = panfuse::ClassCatalog::load(catalog_path);
    std::vector<panfuse::PanopticMap> pred_maps, gt_maps;
    std::vector<panfuse::UncertaintyMap> u_maps;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      pred_maps.push_back(load_map(preds[i]));
      gt_maps.push_back(load_map(gts[i]));
      u_maps.push_back(load_uncertainty(uncertainties[i], catalog.num_classes()));
    }
    std::vector<panfuse::SweepInput> inputs;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      inputs.push_back({&pred_maps[i], &u_maps[i], &gt_maps[i]});
    }
    panfuse::SweepParams sp;
    sp.iou_threshold = iou_threshold;
    sp.num_points = points;
    sp.max_removal = max_removal;
    const panfuse::SweepCurve curve = panfuse::uncertainty_sweep(inputs, sp);

    const fs::path out(out_dir);
    fs::create_directories(out);
    OutputTracker tracker;
    std::ostringstream csv;
    csv << "threshold,removed_fraction,tpr,fdr,tp,fp,fn\n";
    for (const panfuse::SweepPoint& p : curve.points) {
      csv << fmt_double(p.threshold) << "," << fmt_double(p.removed_fraction) << ","
          << fmt_double(p.tpr) << "," << fmt_double(p.fdr) << "," << p.tp << ","
          << p.fp << "," << p.fn << "\n";
    }
    const fs::path csv_path = out / "sweep.csv";
    tracker.add(csv_path);
    write_text(csv_path, csv.str());
    tracker.commit();
    std::cout << "sweep: " << curve.points.size() << " point(s) at IoU "
              << fmt_double(curve.iou_threshold) << "\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// hist

struct HistCmd {
  std::vector<std::string> uncertainties;
  std::string catalog_path;
  int num_classes = 0;
  int bins = 20;
  std::string out_dir;
  CommonOpts common;
  ConfigBinder binder;
  CLI::App* cmd = nullptr;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("hist", "Histogram of uncertainty values over [0, ln C]");
    binder.bind(cmd->add_option("--uncertainty", uncertainties,
                                "Uncertainty tensor (.pftn, repeatable)"),
                "uncertainties", &uncertainties);
    binder.bind(cmd->add_option("--catalog", catalog_path, "Class catalog JSON"),
                "catalog", &catalog_path);
    binder.bind(cmd->add_option("--classes", num_classes,
                                "Class count C (alternative to --catalog)"),
                "classes", &num_classes);
    binder.bind(cmd->add_option("--bins", bins, "Number of bins"), "bins", &bins);
    binder.bind(cmd->add_option("--out", out_dir, "Output directory"), "out", &out_dir);
    common.attach(cmd, &binder, /*with_workers=*/false);
  }

  int run() {
    common.finish(binder);
    if (out_dir.empty()) throw ConfigError("hist: --out is required");
    if (uncertainties.empty()) throw ConfigError("hist: no uncertainty tensors given");
    if (bins < 1) throw ConfigError("hist: bins must be >= 1");
    if (catalog_path.empty() == (num_classes == 0)) {
      throw ConfigError("hist: give exactly one of --catalog or --classes");
    }
    common.maybe_print(binder, "hist");

    int c = num_classes;
    if (!catalog_path.empty()) {
      c = panfuse::ClassCatalog::load(catalog_path).num_classes();
    }
    if (c < 2) throw ConfigError("hist: class count must be >= 2");

    std::vector<panfuse::UncertaintyMap> maps;
    for (const std::string& p : uncertainties) {
      maps.push_back(load_uncertainty(p, c));
    }
    const panfuse::EntropyHistogram h = panfuse::bin_entropy(maps, bins);

    const fs::path out(out_dir);
    fs::create_directories(out);
    OutputTracker tracker;
    std::ostringstream csv;
    csv << "bin_left,bin_right,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      csv << fmt_double(h.edges[b]) << "," << fmt_double(h.edges[b + 1]) << ","
          << h.counts[b] << "\n";
    }
    const fs::path csv_path = out / "hist.csv";
    tracker.add(csv_path);
    write_text(csv_path, csv.str());
    tracker.commit();
    std::cout << "hist: " << h.total << " value(s) in " << h.counts.size()
              << " bin(s)\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// synth

struct SynthCmd {
  std::string scene_path;
  std::string jitter_path;
  std::string out_dir;
  panfuse::SceneSpec scene;
  panfuse::JitterSpec jitter;
  int samples = 1;
  std::int64_t scene_seed = -1;
  std::int64_t jitter_seed = -1;
  CommonOpts common;
  ConfigBinder binder;
  CLI::App* cmd = nullptr;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("synth", "Generate a synthetic scene and ensemble");
    cmd->add_option("--scene", scene_path, "Scene spec JSON; flags take precedence");
    cmd->add_option("--jitter", jitter_path, "Jitter spec JSON; flags take precedence");
    binder.bind(cmd->add_option("--out", out_dir, "Output directory"), "out", &out_dir);
    binder.bind(cmd->add_option("--width", scene.width, "Image width"), "width",
                &scene.width);
    binder.bind(cmd->add_option("--height", scene.height, "Image height"), "height",
                &scene.height);
    binder.bind(cmd->add_option("--instances", scene.num_instances, "Planted instances"),
                "num_instances", &scene.num_instances);
    binder.bind(cmd->add_option("--min-extent", scene.min_extent, "Smallest instance extent"),
                "min_extent", &scene.min_extent);
    binder.bind(cmd->add_option("--max-extent", scene.max_extent, "Largest instance extent"),
                "max_extent", &scene.max_extent);
    binder.bind(cmd->add_option("--margin", scene.margin, "Clearance between instances"),
                "margin", &scene.margin);
    binder.bind(cmd->add_option("--bands", scene.num_stuff_bands, "Horizontal stuff bands"),
                "num_stuff_bands", &scene.num_stuff_bands);
    binder.bind(cmd->add_option("--classes", scene.num_classes, "Total classes incl. background"),
                "num_classes", &scene.num_classes);
    binder.bind(cmd->add_option("--stuff-classes", scene.num_stuff_classes, "Stuff classes"),
                "num_stuff_classes", &scene.num_stuff_classes);
    binder.bind(cmd->add_flag("--ellipses,!--rects-only", scene.ellipses,
                              "Mix ellipses in with rectangles"),
                "ellipses", &scene.ellipses);
    binder.bind(cmd->add_option("--scene-seed", scene_seed, "Scene RNG seed"),
                "scene_seed", &scene_seed);
    binder.bind(cmd->add_option("--samples", samples, "Ensemble samples Q"),
                "num_samples", &samples);
    binder.bind(cmd->add_option("--max-translate", jitter.max_translate,
                                "Max per-axis mask shift"),
                "max_translate", &jitter.max_translate);
    binder.bind(cmd->add_option("--max-dilate", jitter.max_dilate, "Max dilation rounds"),
                "max_dilate", &jitter.max_dilate);
    binder.bind(cmd->add_option("--logit-noise", jitter.logit_noise,
                                "Gaussian noise on class logits"),
                "logit_noise", &jitter.logit_noise);
    binder.bind(cmd->add_option("--dropout", jitter.dropout,
                                "Chance a sample loses an instance proposal"),
                "dropout", &jitter.dropout);
    binder.bind(cmd->add_option("--proposals", jitter.proposals_per_sample,
                                "Pad proposal slots to N (0 = exact)"),
                "proposals_per_sample", &jitter.proposals_per_sample);
    binder.bind(cmd->add_option("--mask-scale", jitter.mask_scale,
                                "Mask grid = image size / scale"),
                "mask_scale", &jitter.mask_scale);
    binder.bind(cmd->add_option("--jitter-seed", jitter_seed, "Jitter RNG seed"),
                "jitter_seed", &jitter_seed);
    common.attach(cmd, &binder, /*with_workers=*/false);
  }

  // Spec files fill fields that neither a flag nor a --config entry set.
  // key_map translates spec-file keys to the binder keys used for locking.
  template <class Spec>
  void overlay(const std::string& path, Spec* spec,
               const std::map<std::string, std::string>& key_map) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw panfuse::InputError("cannot open spec file: " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw panfuse::FormatError("spec file is not valid JSON: " + std::string(e.what()));
    }
    Spec from_file;
    try {
      from_file = j.template get<Spec>();
    } catch (const json::exception& e) {
      throw panfuse::FormatError("bad spec file: " + std::string(e.what()));
    }
    json merged, current;
    panfuse::to_json(merged, from_file);
    panfuse::to_json(current, *spec);
    for (auto& [k, v] : current.items()) {
      const auto it = key_map.find(k);
      if (it != key_map.end() && binder.locked(it->second)) merged[k] = v;
    }
    *spec = merged.template get<Spec>();
  }

  int run() {
    common.finish(binder);
    if (out_dir.empty()) throw ConfigError("synth: --out is required");
    if (samples < 1) throw ConfigError("synth: samples must be >= 1");
    if (scene_seed >= 0) scene.seed = static_cast<std::uint64_t>(scene_seed);
    if (jitter_seed >= 0) jitter.seed = static_cast<std::uint64_t>(jitter_seed);
    overlay(scene_path, &scene,
            {{"width", "width"},
             {"height", "height"},
             {"num_instances", "num_instances"},
             {"min_extent", "min_extent"},
             {"max_extent", "max_extent"},
             {"margin", "margin"},
             {"num_stuff_bands", "num_stuff_bands"},
             {"num_classes", "num_classes"},
             {"num_stuff_classes", "num_stuff_classes"},
             {"ellipses", "ellipses"},
             {"seed", "scene_seed"}});
    overlay(jitter_path, &jitter,
            {{"max_translate", "max_translate"},
             {"max_dilate", "max_dilate"},
             {"logit_noise", "logit_noise"},
             {"dropout", "dropout"},
             {"proposals_per_sample", "proposals_per_sample"},
             {"mask_scale", "mask_scale"},
             {"seed", "jitter_seed"}});
    common.maybe_print(binder, "synth");

    const panfuse::Scene sc = panfuse::gen_scene(scene);
    const panfuse::SynthEnsemble ens = panfuse::gen_ensemble(sc, samples, jitter);

    const fs::path out(out_dir);
    fs::create_directories(out);
    OutputTracker tracker;
    tracker.add(out / "synth_class_logits.pftn");
    tracker.add(out / "synth_mask_logits.pftn");
    tracker.add(out / "synth_catalog.json");
    tracker.add(out / "synth_manifest.json");
    const fs::path manifest = panfuse::save_ensemble(ens.batch, out, "synth");

    const fs::path gt_png = out / "gt_panoptic.png";
    const fs::path gt_json = out / "gt_panoptic.json";
    tracker.add(gt_png);
    tracker.add(gt_json);
    panfuse::write_panoptic_png(sc.gt, panfuse::make_segment_table(sc.gt), gt_png,
                                gt_json, ens.batch.image_id());

    json scene_j, jitter_j;
    panfuse::to_json(scene_j, scene);
    panfuse::to_json(jitter_j, jitter);
    jitter_j["num_samples"] = samples;
    const fs::path scene_out = out / "scene.json";
    const fs::path jitter_out = out / "jitter.json";
    tracker.add(scene_out);
    tracker.add(jitter_out);
    write_text(scene_out, scene_j.dump(2) + "\n");
    write_text(jitter_out, jitter_j.dump(2) + "\n");
    tracker.commit();

    std::cout << "synth: wrote " << manifest.string() << " ("
              << sc.instances.size() << " instance(s), Q=" << samples << ")\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// corrupt

struct CorruptCmd {
  std::string input_path;
  std::string output_path;
  int severity = 1;
  std::int64_t seed = 0;
  CommonOpts common;
  ConfigBinder binder;
  CLI::App* cmd = nullptr;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("corrupt", "Apply gaussian + shot noise to a float tensor");
    binder.bind(cmd->add_option("--input", input_path, "Input tensor (.pftn, float32)"),
                "input", &input_path);
    binder.bind(cmd->add_option("--output", output_path, "Output tensor (.pftn)"),
                "output", &output_path);
    binder.bind(cmd->add_option("--severity", severity, "Severity 1..3"),
                "severity", &severity);
    binder.bind(cmd->add_option("--seed", seed, "RNG seed"), "seed", &seed);
    common.attach(cmd, &binder, /*with_workers=*/false);
  }

  int run() {
    common.finish(binder);
    if (input_path.empty()) throw ConfigError("corrupt: --input is required");
    if (output_path.empty()) throw ConfigError("corrupt: --output is required");
    if (severity < 1 || severity > 3) {
      throw ConfigError("corrupt: severity must be 1, 2 or 3");
    }
    if (seed < 0) throw ConfigError("corrupt: seed must be >= 0");
    common.maybe_print(binder, "corrupt");

    const panfuse::Tensor t = panfuse::read_tensor(input_path);
    if (t.elem_type() != panfuse::ElemType::kFloat32) {
      throw panfuse::ValidationError("corrupt expects a float32 tensor");
    }
    const std::vector<float> noisy = panfuse::corrupt_image(
        t.as_f32(), severity, static_cast<std::uint64_t>(seed));
    OutputTracker tracker;
    tracker.add(output_path);
    panfuse::write_tensor(panfuse::Tensor::from_floats(t.dims(), noisy), output_path);
    tracker.commit();
    std::cout << "corrupt: wrote " << output_path << " (severity " << severity
              << ")\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// bench

struct BenchCmd {
  std::vector<std::string> manifests;
  std::string list_path;
  std::string out_dir;
  std::vector<int> counts{1, 5, 15};
  std::vector<std::string> methods{"baseline", "ours", "hungarian"};
  int repeats = 1;
  std::string upscale = "bilinear";
  CommonOpts common;
  ConfigBinder binder;
  CLI::App* cmd = nullptr;

  void attach(CLI::App& app) {
    cmd = app.add_subcommand("bench", "Time fusion methods over sample counts");
    binder.bind(cmd->add_option("--manifest", manifests, "Ensemble manifest (repeatable)"),
                "manifests", &manifests);
    binder.bind(cmd->add_option("--list", list_path, "JSON array of manifest paths"),
                "list", &list_path);
    binder.bind(cmd->add_option("--out", out_dir, "Output directory"), "out", &out_dir);
    binder.bind(cmd->add_option("--counts", counts, "Sample counts to time")->delimiter(','),
                "counts", &counts);
    binder.bind(cmd->add_option("--methods", methods, "Methods to time")->delimiter(','),
                "methods", &methods);
    binder.bind(cmd->add_option("--repeats", repeats,
                                "Timing repetitions (fastest is reported)"),
                "repeats", &repeats);
    binder.bind(cmd->add_option("--upscale", upscale, "bilinear | nearest"),
                "upscale", &upscale);
    common.attach(cmd, &binder, /*with_workers=*/false);
  }

  int run() {
    common.finish(binder);
    if (out_dir.empty()) throw ConfigError("bench: --out is required");
    if (repeats < 1) throw ConfigError("bench: repeats must be >= 1");
    if (counts.empty()) throw ConfigError("bench: counts must not be empty");
    for (const int c : counts) {
      if (c < 1) throw ConfigError("bench: counts must be >= 1");
    }
    for (const std::string& m : methods) {
      if (m != "ours" && m != "hungarian" && m != "baseline") {
        throw ConfigError("bench: unknown method: " + m);
      }
    }
    if (upscale != "bilinear" && upscale != "nearest") {
      throw ConfigError("bench: unknown upscale mode: " + upscale);
    }
    common.maybe_print(binder, "bench");
    const std::vector<fs::path> inputs = gather_inputs(manifests, list_path);
    if (inputs.empty()) throw ConfigError("bench: no input manifests given");

    // Loading stays outside the timed region.
    std::vector<panfuse::EnsembleBatch> batches;
    for (const fs::path& p : inputs) batches.push_back(panfuse::load_ensemble(p));
    for (const panfuse::EnsembleBatch& b : batches) {
      for (const int c : counts) {
        if (c > b.num_samples()) {
          throw panfuse::ValidationError(
              "bench: count " + std::to_string(c) + " exceeds the " +
              std::to_string(b.num_samples()) + " sample(s) of " + b.image_id());
        }
      }
    }

    panfuse::FuseParams params;
    params.upscale = upscale == "nearest" ? panfuse::UpscaleMode::kNearest
                                          : panfuse::UpscaleMode::kBilinear;

    std::vector<panfuse::Method> parsed;
    parsed.reserve(methods.size());
    for (const std::string& m : methods) parsed.push_back(panfuse::parse_method(m));

    // The fastest repeat is reported; noise only ever adds time. Repeats
    // interleave the whole (method, count) grid so a slow spell of the host
    // hits every cell instead of the adjacent repeats of a single one.
    std::vector<std::vector<double>> best(
        methods.size(), std::vector<double>(counts.size(),
                                            std::numeric_limits<double>::infinity()));
    for (int rep = 0; rep < repeats; ++rep) {
      for (std::size_t mi = 0; mi < parsed.size(); ++mi) {
        for (std::size_t ci = 0; ci < counts.size(); ++ci) {
          panfuse::FuseParams p = params;
          p.q_limit = counts[ci];
          double elapsed = 0.0;
          for (const panfuse::EnsembleBatch& b : batches) {
            const auto t0 = std::chrono::steady_clock::now();
            const panfuse::FuseResult r = panfuse::fuse(b, parsed[mi], p);
            const auto t1 = std::chrono::steady_clock::now();
            if (r.map.pixel_count() == 0) {
              throw panfuse::ValidationError("bench: empty fusion result");
            }
            elapsed += std::chrono::duration<double>(t1 - t0).count();
          }
          best[mi][ci] = std::min(best[mi][ci], elapsed);
        }
      }
    }

    std::ostringstream csv;
    csv << "method,samples,seconds_per_image\n";
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      for (std::size_t ci = 0; ci < counts.size(); ++ci) {
        csv << methods[mi] << "," << counts[ci] << ","
            << fmt_double(best[mi][ci] / static_cast<double>(batches.size()))
            << "\n";
      }
    }

    const fs::path out(out_dir);
    fs::create_directories(out);
    OutputTracker tracker;
    const fs::path csv_path = out / "bench.csv";
    tracker.add(csv_path);
    write_text(csv_path, csv.str());
    tracker.commit();
    std::cout << csv.str();
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"panfuse: panoptic segmentation ensemble fusion tools"};
  app.require_subcommand(1);

  FuseCmd fuse_cmd;
  EvalCmd eval_cmd;
  SweepCmd sweep_cmd;
  HistCmd hist_cmd;
  SynthCmd synth_cmd;
  CorruptCmd corrupt_cmd;
  BenchCmd bench_cmd;
  fuse_cmd.attach(app);
  eval_cmd.attach(app);
  sweep_cmd.attach(app);
  hist_cmd.attach(app);
  synth_cmd.attach(app);
  corrupt_cmd.attach(app);
  bench_cmd.attach(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (fuse_cmd.cmd->parsed()) return fuse_cmd.run();
    if (eval_cmd.cmd->parsed()) return eval_cmd.run();
    if (sweep_cmd.cmd->parsed()) return sweep_cmd.run();
    if (hist_cmd.cmd->parsed()) return hist_cmd.run();
    if (synth_cmd.cmd->parsed()) return synth_cmd.run();
    if (corrupt_cmd.cmd->parsed()) return corrupt_cmd.run();
    if (bench_cmd.cmd->parsed()) return bench_cmd.run();
    std::cerr << "no subcommand given\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const panfuse::Error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

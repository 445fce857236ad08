#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wedl/checkpoint.hpp"
#include "wedl/compressor.hpp"
#include "wedl/dataset.hpp"
#include "wedl/ensemble.hpp"
#include "wedl/metrics.hpp"

namespace wedl {

using json = nlohmann::json;

struct SyntheticSpec {
  int classes = 40;
  int per_class = 50;
  int dim = 32;
  double sep = 5.0;
  std::string warp = "tanh-mix";
};

struct DatasetSpec {
  std::string path;            // file-backed dataset
  std::string format = "csv";  // csv | bin
  std::optional<SyntheticSpec> synthetic;
};

// Full experiment configuration. Defaults match the documented
// hyperparameter table, so a minimal config is {dataset, mode, seed}.
struct RunConfig {
  DatasetSpec dataset;
  std::string mode = "WEDL";  // WEL | WEL-equal | WEDL | baseline:<loss>
  std::vector<std::string> losses = {"triplet", "binomial", "proxy_nca", "smoothed_ce"};
  int embed_dim = 64;
  int epochs = 20;
  int batch_classes = 8;
  int batch_per_class = 4;
  std::uint64_t seed = 0;

  double triplet_margin = 0.1;
  double binomial_beta1 = 2.0;
  double binomial_beta2 = 0.5;
  double binomial_c = 25.0;
  std::string binomial_c_mode = "exponent";
  double ce_gamma = 0.15;
  double lambda = 0.01;
  double eta = 100.0;
  double ema_smoothing = 2.0;
  bool equal_weights = false;
  bool literal_printed_distance = false;

  double lr = 1e-4;
  double weight_decay = 1e-4;
  double adam_eps = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double head_lr_scale = 10.0;
  double proxy_lr = 0.01;
  double classifier_lr = 0.01;

  std::vector<int> recall_ks = {1, 2, 4, 8};
  int eval_every = 1;  // 0: final evaluation only
  int kmeans_iters = 100;

  bool compress = false;
  int compressor_epochs = 30;
  double compressor_lr = 1e-3;

  bool is_baseline() const { return mode.rfind("baseline:", 0) == 0; }
  std::string baseline_loss() const { return mode.substr(9); }

  json to_json() const {
    json d;
    if (dataset.synthetic) {
      const SyntheticSpec& s = *dataset.synthetic;
      d["synthetic"] = {{"classes", s.classes}, {"per_class", s.per_class},
                        {"dim", s.dim},         {"sep", s.sep},
                        {"warp", s.warp}};
    } else {
      d["path"] = dataset.path;
      d["format"] = dataset.format;
    }
    return json{{"dataset", d},
                {"mode", mode},
                {"losses", losses},
                {"embed_dim", embed_dim},
                {"epochs", epochs},
                {"batch_classes", batch_classes},
                {"batch_per_class", batch_per_class},
                {"seed", seed},
                {"triplet_margin", triplet_margin},
                {"binomial_beta1", binomial_beta1},
                {"binomial_beta2", binomial_beta2},
                {"binomial_c", binomial_c},
                {"binomial_c_mode", binomial_c_mode},
                {"ce_gamma", ce_gamma},
                {"lambda", lambda},
                {"eta", eta},
                {"ema_smoothing", ema_smoothing},
                {"equal_weights", equal_weights},
                {"literal_printed_distance", literal_printed_distance},
                {"lr", lr},
                {"weight_decay", weight_decay},
                {"adam_eps", adam_eps},
                {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},
                {"head_lr_scale", head_lr_scale},
                {"proxy_lr", proxy_lr},
                {"classifier_lr", classifier_lr},
                {"recall_ks", recall_ks},
                {"eval_every", eval_every},
                {"kmeans_iters", kmeans_iters},
                {"compress", compress},
                {"compressor_epochs", compressor_epochs},
                {"compressor_lr", compressor_lr}};
  }

  static RunConfig from_json(const json& j) {
    RunConfig cfg;
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      if (d.contains("synthetic")) {
        const json& s = d.at("synthetic");
        SyntheticSpec spec;
        spec.classes = s.value("classes", spec.classes);
        spec.per_class = s.value("per_class", spec.per_class);
        spec.dim = s.value("dim", spec.dim);
        spec.sep = s.value("sep", spec.sep);
        spec.warp = s.value("warp", spec.warp);
        cfg.dataset.synthetic = spec;
      } else {
        cfg.dataset.path = d.value("path", std::string());
        cfg.dataset.format = d.value("format", std::string("csv"));
      }
    }
    cfg.mode = j.value("mode", cfg.mode);
    if (j.contains("losses")) cfg.losses = j.at("losses").get<std::vector<std::string>>();
    cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_classes = j.value("batch_classes", cfg.batch_classes);
    cfg.batch_per_class = j.value("batch_per_class", cfg.batch_per_class);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.triplet_margin = j.value("triplet_margin", cfg.triplet_margin);
    cfg.binomial_beta1 = j.value("binomial_beta1", cfg.binomial_beta1);
    cfg.binomial_beta2 = j.value("binomial_beta2", cfg.binomial_beta2);
    cfg.binomial_c = j.value("binomial_c", cfg.binomial_c);
    cfg.binomial_c_mode = j.value("binomial_c_mode", cfg.binomial_c_mode);
    cfg.ce_gamma = j.value("ce_gamma", cfg.ce_gamma);
    cfg.lambda = j.value("lambda", cfg.lambda);
    cfg.eta = j.value("eta", cfg.eta);
    cfg.ema_smoothing = j.value("ema_smoothing", cfg.ema_smoothing);
    cfg.equal_weights = j.value("equal_weights", cfg.equal_weights);
    cfg.literal_printed_distance =
        j.value("literal_printed_distance", cfg.literal_printed_distance);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
    cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
    cfg.head_lr_scale = j.value("head_lr_scale", cfg.head_lr_scale);
    cfg.proxy_lr = j.value("proxy_lr", cfg.proxy_lr);
    cfg.classifier_lr = j.value("classifier_lr", cfg.classifier_lr);
    if (j.contains("recall_ks")) cfg.recall_ks = j.at("recall_ks").get<std::vector<int>>();
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.kmeans_iters = j.value("kmeans_iters", cfg.kmeans_iters);
    cfg.compress = j.value("compress", cfg.compress);
    cfg.compressor_epochs = j.value("compressor_epochs", cfg.compressor_epochs);
    cfg.compressor_lr = j.value("compressor_lr", cfg.compressor_lr);
    return cfg;
  }

  // Collects every violation and reports them together.
  std::vector<std::string> validate() const {
    std::vector<std::string> errors;
    auto bad = [&](const std::string& msg) { errors.push_back(msg); };

    if (dataset.synthetic) {
      const SyntheticSpec& s = *dataset.synthetic;
      if (s.classes < 2) bad("dataset.synthetic.classes must be >= 2");
      if (s.per_class < 2) bad("dataset.synthetic.per_class must be >= 2");
      if (s.dim < 1) bad("dataset.synthetic.dim must be >= 1");
      if (s.sep < 0.0) bad("dataset.synthetic.sep must be >= 0");
      if (s.warp != "none" && s.warp != "tanh-mix")
        bad("dataset.synthetic.warp must be none or tanh-mix");
    } else {
      if (dataset.path.empty()) bad("dataset.path is required (or use dataset.synthetic)");
      if (dataset.format != "csv" && dataset.format != "bin")
        bad("dataset.format must be csv or bin");
    }

    const bool known_mode = mode == "WEL" || mode == "WEL-equal" || mode == "WEDL";
    if (is_baseline()) {
      try {
        parse_loss_kind(baseline_loss());
      } catch (const std::exception&) {
        bad("mode: unknown baseline loss '" + baseline_loss() + "'");
      }
    } else if (!known_mode) {
      bad("mode must be WEL, WEL-equal, WEDL, or baseline:<loss>");
    }
    if (losses.empty()) bad("losses must not be empty");
    for (const std::string& l : losses) {
      try {
        parse_loss_kind(l);
      } catch (const std::exception&) {
        bad("losses: unknown loss '" + l + "'");
      }
    }
    if (!is_baseline() && losses.size() < 2) bad("ensemble modes need at least 2 losses");

    if (embed_dim < 1) bad("embed_dim must be >= 1");
    if (epochs < 0) bad("epochs must be >= 0");
    if (batch_classes < 2) bad("batch_classes must be >= 2");
    if (batch_per_class < 2) bad("batch_per_class must be >= 2");
    if (triplet_margin <= 0.0) bad("triplet_margin must be > 0");
    if (binomial_beta1 <= 0.0) bad("binomial_beta1 must be > 0");
    if (binomial_c <= 0.0) bad("binomial_c must be > 0");
    if (binomial_c_mode != "exponent" && binomial_c_mode != "multiplier")
      bad("binomial_c_mode must be exponent or multiplier");
    if (ce_gamma < 0.0 || ce_gamma >= 1.0) bad("ce_gamma must be in [0, 1)");
    if (lambda < 0.0) bad("lambda must be >= 0");
    if (eta < 0.0) bad("eta must be >= 0");
    if (ema_smoothing <= 0.0) bad("ema_smoothing must be > 0");
    if (lr <= 0.0) bad("lr must be > 0");
    if (weight_decay < 0.0) bad("weight_decay must be >= 0");
    if (adam_eps <= 0.0) bad("adam_eps must be > 0");
    if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0) bad("adam_beta1 must be in (0, 1)");
    if (adam_beta2 <= 0.0 || adam_beta2 >= 1.0) bad("adam_beta2 must be in (0, 1)");
    if (head_lr_scale <= 0.0) bad("head_lr_scale must be > 0");
    if (proxy_lr <= 0.0) bad("proxy_lr must be > 0");
    if (classifier_lr <= 0.0) bad("classifier_lr must be > 0");
    if (recall_ks.empty()) bad("recall_ks must not be empty");
    for (int k : recall_ks)
      if (k < 1) bad("recall_ks entries must be >= 1");
    if (eval_every < 0) bad("eval_every must be >= 0");
    if (kmeans_iters < 1) bad("kmeans_iters must be >= 1");
    if (compress && mode != "WEDL") bad("compress requires mode WEDL");
    if (compressor_epochs < 0) bad("compressor_epochs must be >= 0");
    if (compressor_lr <= 0.0) bad("compressor_lr must be > 0");
    return errors;
  }

  void validate_or_throw() const {
    const auto errors = validate();
    if (errors.empty()) return;
    std::string msg = "invalid config:";
    for (const std::string& e : errors) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }

  EnsembleConfig ensemble_config() const {
    EnsembleConfig ec;
    if (is_baseline()) {
      ec.mode = EnsembleMode::wel_equal;
      ec.members = {parse_loss_kind(baseline_loss())};
    } else {
      ec.mode = mode == "WEL"         ? EnsembleMode::wel
                : mode == "WEL-equal" ? EnsembleMode::wel_equal
                                      : EnsembleMode::wedl;
      ec.members.clear();
      for (const std::string& l : losses) ec.members.push_back(parse_loss_kind(l));
    }
    ec.embed_dim = embed_dim;
    ec.hyper.triplet_margin = triplet_margin;
    ec.hyper.binomial_beta1 = binomial_beta1;
    ec.hyper.binomial_beta2 = binomial_beta2;
    ec.hyper.binomial_c = binomial_c;
    ec.hyper.binomial_c_mode = parse_binomial_c_mode(binomial_c_mode);
    ec.hyper.ce_gamma = ce_gamma;
    ec.lambda = lambda;
    ec.eta = eta;
    ec.ema_smoothing = ema_smoothing;
    ec.equal_weights = equal_weights;
    ec.literal_printed_distance = literal_printed_distance;
    ec.head_lr_scale = head_lr_scale;
    ec.proxy_lr_scale = proxy_lr / lr;
    ec.classifier_lr_scale = classifier_lr / lr;
    return ec;
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_classes = batch_classes;
    tc.batch_per_class = batch_per_class;
    tc.adam = {lr, adam_beta1, adam_beta2, adam_eps, weight_decay};
    return tc;
  }
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

inline json metrics_to_json(const MetricsReport& m) {
  json recall = json::object();
  for (const auto& [k, v] : m.recall) recall[std::to_string(k)] = v;
  return json{{"recall", recall},
              {"nmi", m.nmi_score},
              {"knn_acc", m.knn_acc},
              {"cluster_k", m.cluster_k},
              {"kmeans_seed", m.kmeans_seed}};
}

struct RunReport {
  json config;
  std::string config_hash;
  std::vector<std::string> member_names;
  std::vector<EpochRecord> epochs;
  std::vector<std::optional<MetricsReport>> epoch_metrics;  // parallel to epochs
  MetricsReport final_metrics;
  std::optional<MetricsReport> compressed_metrics;
  std::vector<CompressorEpochRecord> compressor_epochs;
  std::vector<double> coefficients;  // raw c_j
  std::vector<double> weights;       // effective w_j

  json to_json() const {
    json epoch_list = json::array();
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const EpochRecord& r = epochs[i];
      json e{{"epoch", r.epoch},      {"raw", r.raw},   {"normalized", r.normalized},
             {"weights", r.weights},  {"D", r.diversity}, {"total", r.total},
             {"lr", r.lr}};
      e["test_metrics"] = epoch_metrics[i] ? metrics_to_json(*epoch_metrics[i]) : json(nullptr);
      epoch_list.push_back(std::move(e));
    }
    json compressor_list = json::array();
    for (const CompressorEpochRecord& r : compressor_epochs)
      compressor_list.push_back(
          {{"epoch", r.epoch}, {"l_dist", r.mean_loss}, {"skipped", r.skipped_batches}});
    return json{{"config", config},
                {"config_hash", config_hash},
                {"members", member_names},
                {"epochs", epoch_list},
                {"final_metrics", metrics_to_json(final_metrics)},
                {"compressed_metrics",
                 compressed_metrics ? metrics_to_json(*compressed_metrics) : json(nullptr)},
                {"compressor_epochs", compressor_list},
                {"coefficients", coefficients},
                {"weights", weights}};
  }
};

inline FeatureDataset build_dataset(const RunConfig& cfg, Rng& rng) {
  if (cfg.dataset.synthetic) {
    const SyntheticSpec& s = *cfg.dataset.synthetic;
    return synth_gaussians(s.classes, s.per_class, s.dim, s.sep, parse_warp(s.warp), rng);
  }
  return load_features(cfg.dataset.path, parse_format(cfg.dataset.format));
}

// Test-split metrics for the current model state. Shared-head modes use the
// unit-normalized shared embedding directly; per-loss-head modes combine the
// heads through the weighted ensemble distance.
inline MetricsReport evaluate_model(const EnsembleModel& model, const FeatureDataset& test,
                                    const std::vector<int>& ks, std::uint64_t kmeans_seed,
                                    int kmeans_iters) {
  const auto embs = model.member_unit_embeddings(test.features);
  const DistanceSource src = model.heads.size() == 1
                                 ? DistanceSource::from_embedding(embs[0])
                                 : DistanceSource::from_ensemble(embs, model.loss_weights());
  return evaluate(src, test.labels, ks, test.class_count, kmeans_seed, kmeans_iters);
}

inline MetricsReport evaluate_compressed(const EnsembleModel& model,
                                         const CompressionRegressor& reg,
                                         const FeatureDataset& test, const std::vector<int>& ks,
                                         std::uint64_t kmeans_seed, int kmeans_iters) {
  const auto embs = model.member_unit_embeddings(test.features);
  const Matrix g = compress(reg, concat_weighted(embs, model.loss_weights()));
  return evaluate(DistanceSource::from_embedding(g), test.labels, ks, test.class_count,
                  kmeans_seed, kmeans_iters);
}

struct RunOutput {
  RunReport report;
  EnsembleModel model;
  std::optional<CompressionRegressor> regressor;
  ZslSplit split;
};

// Orchestrates one experiment: dataset -> disjoint-class split -> training ->
// per-epoch and final evaluation -> optional compression stage.
inline RunOutput run(const RunConfig& cfg) {
  cfg.validate_or_throw();

  Rng data_rng(Rng::derive(cfg.seed, 1));
  Rng model_rng(Rng::derive(cfg.seed, 2));
  Rng train_rng(Rng::derive(cfg.seed, 3));
  const std::uint64_t eval_seed = Rng::derive(cfg.seed, 4);
  Rng compressor_rng(Rng::derive(cfg.seed, 5));

  const FeatureDataset full = build_dataset(cfg, data_rng);
  ZslSplit split = zsl_split(full);
  for (int k : cfg.recall_ks)
    if (std::size_t(k) >= split.test.size())
      throw std::invalid_argument("recall_ks: k=" + std::to_string(k) +
                                  " is not below the test-set size " +
                                  std::to_string(split.test.size()));
  if (split.train.class_count < cfg.batch_classes)
    throw std::invalid_argument("batch_classes exceeds the train class count " +
                                std::to_string(split.train.class_count));

  EnsembleModel model = EnsembleModel::create(cfg.ensemble_config(), int(split.train.dim()),
                                              split.train.class_count, model_rng);

  RunOutput out{RunReport{}, std::move(model), std::nullopt, std::move(split)};
  out.report.config = cfg.to_json();
  out.report.config_hash = fnv1a_hex(out.report.config.dump());
  for (LossKind k : out.model.cfg.members) out.report.member_names.push_back(loss_name(k));

  std::vector<std::optional<MetricsReport>> epoch_metrics;
  const auto on_epoch = [&](int epoch, EnsembleModel& m) {
    const bool due = cfg.eval_every > 0 &&
                     (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (due)
      epoch_metrics.emplace_back(
          evaluate_model(m, out.split.test, cfg.recall_ks, eval_seed, cfg.kmeans_iters));
    else
      epoch_metrics.emplace_back(std::nullopt);
  };

  out.report.epochs = train(out.model, out.split.train, cfg.train_config(), train_rng, on_epoch);
  out.report.epoch_metrics = std::move(epoch_metrics);
  out.report.final_metrics =
      evaluate_model(out.model, out.split.test, cfg.recall_ks, eval_seed, cfg.kmeans_iters);
  out.report.coefficients.assign(out.model.coeffs.value.data.begin(),
                                 out.model.coeffs.value.data.end());
  out.report.weights = out.model.loss_weights();

  if (cfg.compress) {
    CompressionRegressor reg = CompressionRegressor::init(
        out.model.member_count() * cfg.embed_dim, cfg.embed_dim, compressor_rng);
    CompressorTrainConfig cc;
    cc.epochs = cfg.compressor_epochs;
    cc.batch_classes = cfg.batch_classes;
    cc.batch_per_class = cfg.batch_per_class;
    cc.adam.lr = cfg.compressor_lr;
    out.report.compressor_epochs =
        train_compressor(out.model, reg, out.split.train, cc, compressor_rng);
    out.report.compressed_metrics = evaluate_compressed(
        out.model, reg, out.split.test, cfg.recall_ks, eval_seed, cfg.kmeans_iters);
    out.regressor = std::move(reg);
  }
  return out;
}

namespace detail {
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

// Writes curves.csv (one row per epoch) and metrics.json next to it.
inline void emit_plot_data(const RunReport& report, const std::string& dir) {
  {
    const std::string path = dir + "/curves.csv";
    std::ofstream os(path);
    if (!os) throw std::runtime_error("emit_plot_data: cannot write '" + path + "'");
    os << "epoch";
    for (const std::string& m : report.member_names) os << ",raw_" << m;
    for (const std::string& m : report.member_names) os << ",lhat_" << m;
    for (const std::string& m : report.member_names) os << ",w_" << m;
    os << ",D,total,test_nmi,test_recall1\n";
    for (std::size_t i = 0; i < report.epochs.size(); ++i) {
      const EpochRecord& r = report.epochs[i];
      os << r.epoch;
      for (double v : r.raw) os << ',' << detail::fmt_double(v);
      for (double v : r.normalized) os << ',' << detail::fmt_double(v);
      for (double v : r.weights) os << ',' << detail::fmt_double(v);
      os << ',' << detail::fmt_double(r.diversity) << ',' << detail::fmt_double(r.total);
      if (report.epoch_metrics[i]) {
        const MetricsReport& m = *report.epoch_metrics[i];
        const auto r1 = m.recall.find(1);
        os << ',' << detail::fmt_double(m.nmi_score) << ','
           << (r1 != m.recall.end() ? detail::fmt_double(r1->second) : "");
      } else {
        os << ",,";
      }
      os << '\n';
    }
    if (!os) throw std::runtime_error("emit_plot_data: write failed for '" + path + "'");
  }
  {
    const std::string path = dir + "/metrics.json";
    std::ofstream os(path);
    if (!os) throw std::runtime_error("emit_plot_data: cannot write '" + path + "'");
    json j{{"final_metrics", metrics_to_json(report.final_metrics)},
           {"compressed_metrics", report.compressed_metrics
                                      ? metrics_to_json(*report.compressed_metrics)
                                      : json(nullptr)},
           {"weights", report.weights},
           {"coefficients", report.coefficients},
           {"config_hash", report.config_hash}};
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("emit_plot_data: write failed for '" + path + "'");
  }
}

inline void write_report(const RunReport& report, const std::string& dir) {
  const std::string path = dir + "/report.json";
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_report: cannot write '" + path + "'");
  os << report.to_json().dump(2) << '\n';
  if (!os) throw std::runtime_error("write_report: write failed for '" + path + "'");
}

}  // namespace wedl

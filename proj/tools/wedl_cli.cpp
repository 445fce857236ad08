#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wedl/gradcheck.hpp"
#include "wedl/wedl.hpp"

namespace fs = std::filesystem;

namespace {

wedl::RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  wedl::json j;
  is >> j;
  return wedl::RunConfig::from_json(j);
}

void print_metrics(const std::string& title, const wedl::MetricsReport& m) {
  std::cout << title << "\n";
  for (const auto& [k, v] : m.recall) std::cout << "  Recall@" << k << ": " << v << "\n";
  std::cout << "  NMI:      " << m.nmi_score << "\n";
  std::cout << "  kNN-Acc:  " << m.knn_acc << "\n";
}

int cmd_train(const std::string& config_path, const std::uint64_t* seed_override,
              const std::string& out_dir) {
  wedl::RunConfig cfg = load_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  fs::create_directories(out_dir);
  wedl::RunOutput out = wedl::run(cfg);
  wedl::write_report(out.report, out_dir);
  wedl::emit_plot_data(out.report, out_dir);
  wedl::save_checkpoint(out_dir + "/model.ckpt", out.model,
                        out.regressor ? &*out.regressor : nullptr);
  print_metrics("test metrics (" + cfg.mode + "):", out.report.final_metrics);
  if (out.report.compressed_metrics)
    print_metrics("test metrics (compressed):", *out.report.compressed_metrics);
  std::cout << "wrote " << out_dir << "/report.json, curves.csv, metrics.json, model.ckpt\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::uint64_t* seed_override, const std::string& out_dir) {
  wedl::RunConfig cfg = load_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  cfg.validate_or_throw();
  fs::create_directories(out_dir);

  wedl::Rng data_rng(wedl::Rng::derive(cfg.seed, 1));
  const wedl::FeatureDataset full = wedl::build_dataset(cfg, data_rng);
  const wedl::ZslSplit split = wedl::zsl_split(full);
  wedl::LoadedCheckpoint loaded = wedl::load_checkpoint(ckpt_path, cfg.ensemble_config());

  const std::uint64_t eval_seed = wedl::Rng::derive(cfg.seed, 4);
  const wedl::MetricsReport metrics = wedl::evaluate_model(
      loaded.model, split.test, cfg.recall_ks, eval_seed, cfg.kmeans_iters);
  print_metrics("test metrics (" + std::string(wedl::mode_name(loaded.model.cfg.mode)) + "):",
                metrics);
  wedl::json j{{"final_metrics", wedl::metrics_to_json(metrics)}};
  if (loaded.regressor) {
    const wedl::MetricsReport cm = wedl::evaluate_compressed(
        loaded.model, *loaded.regressor, split.test, cfg.recall_ks, eval_seed, cfg.kmeans_iters);
    print_metrics("test metrics (compressed):", cm);
    j["compressed_metrics"] = wedl::metrics_to_json(cm);
  }
  std::ofstream os(out_dir + "/metrics.json");
  os << j.dump(2) << '\n';
  return 0;
}

int cmd_compress(const std::string& config_path, const std::string& ckpt_path,
                 const std::uint64_t* seed_override, const std::string& out_dir) {
  wedl::RunConfig cfg = load_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  cfg.validate_or_throw();
  fs::create_directories(out_dir);

  wedl::Rng data_rng(wedl::Rng::derive(cfg.seed, 1));
  const wedl::FeatureDataset full = wedl::build_dataset(cfg, data_rng);
  const wedl::ZslSplit split = wedl::zsl_split(full);
  wedl::LoadedCheckpoint loaded = wedl::load_checkpoint(ckpt_path, cfg.ensemble_config());
  if (loaded.model.cfg.mode != wedl::EnsembleMode::wedl)
    throw std::runtime_error("compress: checkpoint must hold a WEDL model");

  wedl::Rng comp_rng(wedl::Rng::derive(cfg.seed, 5));
  wedl::CompressionRegressor reg = wedl::CompressionRegressor::init(
      loaded.model.member_count() * loaded.model.cfg.embed_dim, loaded.model.cfg.embed_dim,
      comp_rng);
  wedl::CompressorTrainConfig cc;
  cc.epochs = cfg.compressor_epochs;
  cc.batch_classes = cfg.batch_classes;
  cc.batch_per_class = cfg.batch_per_class;
  cc.adam.lr = cfg.compressor_lr;
  cc.verbose = true;
  const auto log = wedl::train_compressor(loaded.model, reg, split.train, cc, comp_rng);
  if (!log.empty())
    std::cout << "compressor l_dist: " << log.front().mean_loss << " -> " << log.back().mean_loss
              << " over " << log.size() << " epochs\n";

  const std::uint64_t eval_seed = wedl::Rng::derive(cfg.seed, 4);
  const wedl::MetricsReport cm = wedl::evaluate_compressed(
      loaded.model, reg, split.test, cfg.recall_ks, eval_seed, cfg.kmeans_iters);
  print_metrics("test metrics (compressed):", cm);
  wedl::save_checkpoint(out_dir + "/model.ckpt", loaded.model, &reg);
  std::ofstream os(out_dir + "/metrics.json");
  os << wedl::json{{"compressed_metrics", wedl::metrics_to_json(cm)}}.dump(2) << '\n';
  std::cout << "wrote " << out_dir << "/model.ckpt, metrics.json\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int instances) {
  const auto results = wedl::gradcheck_suite(seed, instances);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_rel_error <= 1e-4;
    ok = ok && pass;
    std::printf("%-22s max_rel_error=%.3e over %d instances  [%s]\n", r.name.c_str(),
                r.max_rel_error, r.instances, pass ? "PASS" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_synth(int classes, int per_class, int dim, double sep, const std::string& warp,
              std::uint64_t seed, const std::string& format, const std::string& out_dir) {
  fs::create_directories(out_dir);
  wedl::Rng rng(wedl::Rng::derive(seed, 1));  // same stream run() uses for data
  const wedl::FeatureDataset ds =
      wedl::synth_gaussians(classes, per_class, dim, sep, wedl::parse_warp(warp), rng);
  const wedl::FileFormat fmt = wedl::parse_format(format);
  const std::string path = out_dir + "/synth." + format;
  wedl::save_features(ds, path, fmt);
  std::cout << "wrote " << path << " (" << ds.size() << " records, d=" << ds.dim()
            << ", classes=" << ds.class_count << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted ensembles of deep metric learning losses over precomputed features"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, out_dir = "out";
  std::uint64_t seed = 0;

  auto* train_cmd = app.add_subcommand("train", "Train a model; writes report, curves, checkpoint");
  train_cmd->add_option("--config", config_path, "JSON config path")->required();
  auto* train_seed = train_cmd->add_option("--seed", seed, "Seed override");
  train_cmd->add_option("--out", out_dir, "Output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the config's test split");
  eval_cmd->add_option("--config", config_path, "JSON config path")->required();
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  auto* eval_seed = eval_cmd->add_option("--seed", seed, "Seed override");
  eval_cmd->add_option("--out", out_dir, "Output directory");

  auto* comp_cmd = app.add_subcommand("compress", "Distill a trained WEDL checkpoint");
  comp_cmd->add_option("--config", config_path, "JSON config path")->required();
  comp_cmd->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  auto* comp_seed = comp_cmd->add_option("--seed", seed, "Seed override");
  comp_cmd->add_option("--out", out_dir, "Output directory");

  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient battery");
  std::uint64_t gc_seed = 0;
  int gc_instances = 20;
  gc_cmd->add_option("--seed", gc_seed, "Seed");
  gc_cmd->add_option("--instances", gc_instances, "Instances per component");

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic feature dataset");
  int classes = 40, per_class = 50, dim = 32;
  double sep = 5.0;
  std::string warp = "tanh-mix", format = "csv";
  synth_cmd->add_option("--classes", classes, "Number of classes");
  synth_cmd->add_option("--per-class", per_class, "Samples per class");
  synth_cmd->add_option("--dim", dim, "Feature dimension");
  synth_cmd->add_option("--sep", sep, "Class mean radius");
  synth_cmd->add_option("--warp", warp, "none | tanh-mix");
  synth_cmd->add_option("--seed", seed, "Seed");
  synth_cmd->add_option("--format", format, "csv | bin");
  synth_cmd->add_option("--out", out_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed())
      return cmd_train(config_path, train_seed->count() ? &seed : nullptr, out_dir);
    if (eval_cmd->parsed())
      return cmd_eval(config_path, ckpt_path, eval_seed->count() ? &seed : nullptr, out_dir);
    if (comp_cmd->parsed())
      return cmd_compress(config_path, ckpt_path, comp_seed->count() ? &seed : nullptr, out_dir);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_instances);
    if (synth_cmd->parsed())
      return cmd_synth(classes, per_class, dim, sep, warp, seed, format, out_dir);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

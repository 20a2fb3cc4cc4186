#include <CLI11.hpp>

#include <iostream>

#include "dips/pipeline.hpp"

namespace {

dips::KeyValueConfig load_config(const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
  dips::KeyValueConfig kv;
  if (!config_path.empty()) kv = dips::KeyValueConfig::from_file(config_path);
  for (const std::string& pair : overrides) kv.set_pair(pair);
  return kv;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiPS: discriminative proposal sampling for weakly-supervised object localization"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "write a synthetic shapes dataset");
  std::string gen_out;
  dips::SyntheticDatasetSpec spec;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--images", spec.num_images, "total image count");
  gen->add_option("--size", spec.image_size, "square image size in pixels");
  gen->add_option("--classes", spec.num_classes, "number of classes");
  gen->add_option("--train-frac", spec.train_frac, "train split fraction");
  gen->add_option("--val-frac", spec.val_frac, "val split fraction");
  gen->add_option("--distractors", spec.max_distractors, "max distractor shapes per image");
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_flag("--force", gen_force, "overwrite an existing non-empty directory");

  // harvest
  auto* harvest = app.add_subcommand("harvest", "cache proposals for one training epoch");
  int harvest_epoch = 0;
  std::string harvest_out;
  harvest->add_option("--config", config_path, "run config file");
  harvest->add_option("--set", overrides, "override config key=value")->take_all();
  harvest->add_option("--epoch", harvest_epoch, "epoch index the seeds derive from")->required();
  harvest->add_option("--out", harvest_out, "cache file to write")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train the localization network");
  std::string resume_from, cache_in, cache_dump;
  bool verbose = false;
  train_cmd->add_option("--config", config_path, "run config file");
  train_cmd->add_option("--set", overrides, "override config key=value")->take_all();
  train_cmd->add_option("--resume", resume_from, "checkpoint to resume from");
  train_cmd->add_option("--harvest-cache", cache_in, "consume a proposal cache");
  train_cmd->add_option("--harvest-dump", cache_dump, "dump harvested proposals to a cache file");
  train_cmd->add_flag("--verbose", verbose, "print per-epoch progress");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "write localization maps and class scores");
  std::string ckpt_path, manifest_path, infer_out;
  infer_cmd->add_option("--config", config_path, "run config file (for the classifier)");
  infer_cmd->add_option("--set", overrides, "override config key=value")->take_all();
  infer_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  infer_cmd->add_option("--manifest", manifest_path, "image manifest")->required();
  infer_cmd->add_option("--out", infer_out, "prediction directory")->required();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score predictions against a manifest");
  std::string pred_dir, eval_manifest, eval_out, loss_tag;
  bool emit_plot = false;
  eval_cmd->add_option("--pred", pred_dir, "prediction directory")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "ground-truth manifest")->required();
  eval_cmd->add_option("--out", eval_out, "report directory")->required();
  eval_cmd->add_option("--losses", loss_tag, "loss-set tag recorded in the report");
  eval_cmd->add_flag("--plot", emit_plot, "also render the sweep plot");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render a threshold sweep CSV as SVG");
  std::string sweep_csv, plot_out;
  plot_cmd->add_option("--sweep", sweep_csv, "sweep csv")->required();
  plot_cmd->add_option("--out", plot_out, "output svg")->required();

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "loss-term ablation matrix");
  std::string loss_sets_arg = "cpa+crf,cpa+cls,cpa+crf+cls";
  std::string seeds_arg = "1,2,3";
  ablate_cmd->add_option("--config", config_path, "run config file");
  ablate_cmd->add_option("--set", overrides, "override config key=value")->take_all();
  ablate_cmd->add_option("--losses", loss_sets_arg, "comma-separated loss sets");
  ablate_cmd->add_option("--seeds", seeds_arg, "comma-separated seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      dips::GeneratedDataset ds = dips::generate_synthetic_dataset(spec, gen_out, gen_force);
      std::cout << "dataset written to " << ds.root << "\n";
      return 0;
    }
    if (harvest->parsed()) {
      dips::RunConfig cfg = dips::RunConfig::from_config(load_config(config_path, overrides));
      dips::harvest_to_cache(cfg, harvest_epoch, harvest_out);
      std::cout << "harvest cache written to " << harvest_out << "\n";
      return 0;
    }
    if (train_cmd->parsed()) {
      dips::RunConfig cfg = dips::RunConfig::from_config(load_config(config_path, overrides));
      dips::TrainOptions options;
      options.resume_from = resume_from;
      options.harvest_cache_in = cache_in;
      options.harvest_dump = cache_dump;
      options.quiet = !verbose;
      dips::TrainResult result = dips::train(cfg, options);
      std::cout << "trained " << result.epochs_run << " epochs, best val pxap "
                << result.best_val_pxap << "\n"
                << "last checkpoint: " << result.last_checkpoint << "\n"
                << "best checkpoint: " << result.best_checkpoint << "\n";
      return 0;
    }
    if (infer_cmd->parsed()) {
      dips::RunConfig cfg = dips::RunConfig::from_config(load_config(config_path, overrides));
      dips::InferResult result = dips::infer(ckpt_path, manifest_path, infer_out, cfg);
      std::cout << "wrote " << result.images << " maps to " << result.pred_dir << "\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      dips::EvalReport report = dips::evaluate(pred_dir, eval_manifest, eval_out, loss_tag);
      std::cout << "metrics: " << report.metrics_csv << "\n";
      if (report.pxap_value >= 0) std::cout << "pxap " << report.pxap_value << "\n";
      std::cout << "newmaxboxacc " << report.newmaxboxacc << "\n";
      if (emit_plot) {
        std::string svg = (dips::fs::path(eval_out) / "sweep_maxboxacc.svg").string();
        dips::plot_sweep_svg(report.sweep_csv, svg);
        std::cout << "plot: " << svg << "\n";
      }
      return 0;
    }
    if (plot_cmd->parsed()) {
      dips::plot_sweep_svg(sweep_csv, plot_out);
      std::cout << "plot written to " << plot_out << "\n";
      return 0;
    }
    if (ablate_cmd->parsed()) {
      dips::RunConfig cfg = dips::RunConfig::from_config(load_config(config_path, overrides));
      std::vector<uint64_t> seeds;
      for (const std::string& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
      std::vector<dips::AblationRow> rows = dips::ablate(cfg, split_list(loss_sets_arg), seeds);
      for (const dips::AblationRow& row : rows)
        std::cout << row.loss_set << " seed " << row.seed << ": pxap " << row.pxap_value
                  << " newmaxboxacc " << row.newmaxboxacc << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

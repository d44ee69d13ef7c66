// Command-line entry point: uniemo <verb> [options].

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "uniemo/checkpoint.hpp"
#include "uniemo/config.hpp"
#include "uniemo/data.hpp"
#include "uniemo/evaluation.hpp"
#include "uniemo/gradcheck.hpp"
#include "uniemo/image.hpp"
#include "uniemo/split.hpp"
#include "uniemo/training.hpp"

namespace fs = std::filesystem;
using namespace uniemo;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string out_dir = "uniemo_out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string resume;
  std::string manifest;
};

Config resolve(const CommonOptions& o) {
  std::vector<std::string> overrides;
  if (!o.manifest.empty()) overrides.push_back("data.manifest=" + o.manifest);
  overrides.insert(overrides.end(), o.overrides.begin(), o.overrides.end());
  std::optional<fs::path> file;
  if (!o.config_path.empty()) file = o.config_path;
  return resolve_config(file, overrides, o.seed);
}

std::vector<ManifestRecord> load_records(const Config& config, fs::path& base_dir) {
  const std::string& manifest = config.get("data.manifest");
  if (manifest.empty()) throw Error("no manifest given (use --manifest or --set data.manifest=PATH)");
  base_dir = fs::path(manifest).parent_path();
  return load_manifest(manifest);
}

std::optional<SplitPlan> load_plan(const Config& config) {
  const std::string& path = config.get("data.split_plan");
  if (path.empty()) return std::nullopt;
  return load_split_plan(path);
}

std::vector<ImageSample> load_split(const Config& config, std::string_view split) {
  fs::path base;
  const auto records = load_records(config, base);
  const auto plan = load_plan(config);
  const auto chosen = select_records(records, plan ? &*plan : nullptr, split);
  const TrainConfig tc = train_config(config);
  return load_samples(chosen, base, tc.backbone.image_size, tc.backbone.in_channels);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os || !(os << text)) throw Error("cannot write " + path.string());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

int cmd_pretrain(const CommonOptions& o) {
  const Config config = resolve(o);
  const TrainConfig tc = train_config(config);
  const auto teacher = make_teacher(tc);
  const auto data = load_split(config, "train");
  PretrainRunOptions run;
  run.out_dir = o.out_dir;
  if (!o.resume.empty()) run.resume = load_checkpoint(o.resume);
  const auto result = run_pretrain(config, data, *teacher, run);
  std::cout << "pretrain: " << result.reports.size() << " steps";
  if (!result.reports.empty()) std::cout << ", final lt " << fmt(result.reports.back().lt);
  std::cout << ", checkpoint " << (fs::path(o.out_dir) / "pretrain.ckpt").string() << "\n";
  return 0;
}

struct FinetuneOutcome {
  FinetuneRunResult result;
  EvalReport report;
};

FinetuneOutcome finetune_and_eval(const Config& config, const Checkpoint* pretrained,
                                  const fs::path& out_dir) {
  const auto train = load_split(config, "train");
  auto held = load_split(config, "val");
  if (held.empty()) held = load_split(config, "test");
  FinetuneRunOptions run;
  run.out_dir = out_dir;
  FinetuneOutcome out{run_finetune(config, pretrained, train, held, run), {}};
  out.report = held.empty() ? evaluate_split(out.result.checkpoint, train)
                            : evaluate_split(out.result.checkpoint, held);
  write_file(out_dir / "finetune_eval.json", eval_report_to_json(out.report));
  return out;
}

int cmd_finetune(const CommonOptions& o, const std::string& pretrained_path) {
  const Config config = resolve(o);
  std::optional<Checkpoint> pretrained;
  if (!pretrained_path.empty()) pretrained = load_checkpoint(pretrained_path);
  const auto out = finetune_and_eval(config, pretrained ? &*pretrained : nullptr, o.out_dir);
  std::cout << "finetune: train accuracy " << fmt(out.result.train_accuracy) << ", held-out accuracy "
            << fmt(out.result.accuracy) << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& ckpt_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  // Model shape comes from the checkpoint; data selection from the command line.
  const Config config = resolve(o);
  const auto samples = load_split(config, config.get("eval.split"));
  const EvalReport report = evaluate_split(ckpt, samples);
  write_file(fs::path(o.out_dir) / "eval_report.json", eval_report_to_json(report));
  std::cout << "eval: " << report.total << " samples, accuracy " << fmt(report.accuracy) << "\n";
  return 0;
}

int cmd_split(const CommonOptions& o) {
  const Config config = resolve(o);
  fs::path base;
  const auto records = load_records(config, base);
  const TrainConfig tc = train_config(config);
  const SplitPlan plan = select_best_split(records, base, config.get_uint("split.candidates"), tc.seed,
                                           config.get_uint("data.hist_bins"), tc.backbone.in_channels);
  const fs::path out = fs::path(o.out_dir) / "split_plan.json";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_split_plan(out, plan);
  std::cout << "split: seed " << plan.seed << ", train " << plan.train.size() << ", val "
            << plan.val.size() << ", test " << plan.test.size() << ", divergence "
            << fmt(plan.divergence_score) << ", plan " << out.string() << "\n";
  return 0;
}

int cmd_caption(const CommonOptions& o) {
  const Config config = resolve(o);
  fs::path base;
  auto records = load_records(config, base);
  for (auto& r : records) {
    try {
      r.caption = build_caption(r.attributes);
    } catch (const Error& e) {
      throw Error("manifest line " + std::to_string(r.line) + ": " + e.what());
    }
  }
  const fs::path out = fs::path(o.out_dir) / fs::path(config.get("data.manifest")).filename();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_manifest(out, records);
  std::cout << "caption: " << records.size() << " records written to " << out.string() << "\n";
  return 0;
}

int cmd_saliency(const CommonOptions& o, const std::string& ckpt_path, const std::string& image_path,
                 int target) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto model = Classifier::from_checkpoint(ckpt);
  const auto& bb = model->config.backbone;
  const Tensor image = read_image(image_path, bb.in_channels);
  if (target < 0) {
    const Tensor small = resize_bilinear(image, bb.image_size, bb.image_size);
    target = argmax_rows(model->predict(small))[0];
  }
  const Tensor heat = gradcam_heatmap(*model, image, target);
  const fs::path out = fs::path(o.out_dir) / (fs::path(image_path).stem().string() + "_saliency.png");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  export_heatmap(heat, image, out);
  std::cout << "saliency: class " << target << ", heatmap " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck() {
  bool ok = true;
  for (const std::string& name : gradcheck_components()) {
    const GradCheckResult r = gradient_check(name);
    const bool pass = r.max_rel_error < 1e-4;
    ok = ok && pass;
    char line[160];
    std::snprintf(line, sizeof(line), "%-14s max_rel_err %.3e  %s", name.c_str(), r.max_rel_error,
                  pass ? "ok" : "FAIL");
    std::cout << line << "\n";
  }
  return ok ? 0 : 1;
}

int cmd_sweep_mask(const CommonOptions& o, const std::vector<double>& ratios) {
  const Config base = resolve(o);
  const TrainConfig tc = train_config(base);
  const auto teacher = make_teacher(tc);
  const auto train = load_split(base, "train");
  fs::create_directories(o.out_dir);
  std::ostringstream csv;
  csv << "mask_ratio,final_lt,accuracy\n";
  for (double ratio : ratios) {
    Config config = base;
    config.set("model.mask_ratio", fmt(ratio));
    const fs::path dir = fs::path(o.out_dir) / ("mask_" + fmt(ratio));
    PretrainRunOptions run;
    run.out_dir = dir;
    const auto pre = run_pretrain(config, train, *teacher, run);
    const auto fin = finetune_and_eval(config, &pre.checkpoint, dir);
    const double lt = pre.reports.empty() ? 0.0 : pre.reports.back().lt;
    csv << fmt(ratio) << "," << fmt(lt) << "," << fmt(fin.report.accuracy) << "\n";
    std::cout << "mask ratio " << fmt(ratio) << ": final lt " << fmt(lt) << ", accuracy "
              << fmt(fin.report.accuracy) << "\n";
  }
  write_file(fs::path(o.out_dir) / "sweep_mask.csv", csv.str());
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Config file (key = value lines)");
  cmd->add_option("--out", o.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--set", o.overrides, "Config override key=value (repeatable)")->take_all();
  cmd->add_option("--seed", o.seed, "Seed (overrides config and UNIEMO_SEED)");
  cmd->add_option("--manifest", o.manifest, "Manifest path (same as --set data.manifest=PATH)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal masked pretraining, fine-tuning and evaluation", "uniemo"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");
  CommonOptions o;
  std::string pretrained, checkpoint, image;
  int target = -1;
  std::vector<double> ratios{0.25, 0.5, 0.75, 0.85};

  auto* pretrain = app.add_subcommand("pretrain", "Masked pretraining with teacher distillation");
  add_common(pretrain, o);
  pretrain->add_option("--resume", o.resume, "Continue from a pretrain checkpoint");

  auto* finetune = app.add_subcommand("finetune", "Fine-tune a classifier from a pretrain checkpoint");
  add_common(finetune, o);
  finetune->add_option("--pretrained", pretrained, "Pretrain checkpoint providing encoder weights");

  auto* eval = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  add_common(eval, o);
  eval->add_option("--checkpoint", checkpoint, "Fine-tune checkpoint")->required();

  auto* split = app.add_subcommand("split", "Select a stratified train/val/test split");
  add_common(split, o);

  auto* caption = app.add_subcommand("caption", "Write captions built from manifest attributes");
  add_common(caption, o);

  auto* saliency = app.add_subcommand("saliency", "Export a Grad-CAM overlay for one image");
  add_common(saliency, o);
  saliency->add_option("--checkpoint", checkpoint, "Fine-tune checkpoint")->required();
  saliency->add_option("--image", image, "Input image")->required();
  saliency->add_option("--class", target, "Target class (default: predicted class)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare autodiff gradients with finite differences");

  auto* sweep = app.add_subcommand("sweep-mask", "Pretrain, fine-tune and evaluate per mask ratio");
  add_common(sweep, o);
  sweep->add_option("--ratios", ratios, "Mask ratios")->delimiter(',')->capture_default_str();

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*pretrain) return cmd_pretrain(o);
    if (*finetune) return cmd_finetune(o, pretrained);
    if (*eval) return cmd_eval(o, checkpoint);
    if (*split) return cmd_split(o);
    if (*caption) return cmd_caption(o);
    if (*saliency) return cmd_saliency(o, checkpoint, image, target);
    if (*gradcheck) return cmd_gradcheck();
    if (*sweep) return cmd_sweep_mask(o, ratios);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 1;
}

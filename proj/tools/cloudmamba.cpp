// cloudmamba {make-synth|train|eval|predict|viz-stages|hard-subset}
//
// Failures print one line, "error: <Kind>: <message>", and exit 1.

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cloudmamba/pipeline/commands.hpp"
#include "cloudmamba/runtime.hpp"

namespace cm = cloudmamba;
namespace pl = cloudmamba::pipeline;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_file;
  std::string preset;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;

  bool explicit_config() const { return !config_file.empty() || !preset.empty(); }

  pl::RunConfig resolve() const {
    pl::RunConfig cfg = preset.empty() ? pl::RunConfig{} : pl::preset(preset);
    if (!config_file.empty()) cfg = pl::load_config_file(config_file, cfg);
    if (seed) cfg.training.seed = *seed;
    if (deterministic) cfg.training.deterministic = true;
    return cfg;
  }
};

struct ThresholdFlags {
  std::optional<double> gamma, tau_c, tau_r;

  void add(CLI::App* cmd) {
    cmd->add_option("--gamma", gamma, "uncertainty threshold in (0, 1]");
    cmd->add_option("--tau-c", tau_c, "coarse binarization threshold");
    cmd->add_option("--tau-r", tau_r, "refined binarization threshold");
  }
  cm::model::ThresholdConfig apply(cm::model::ThresholdConfig t) const {
    if (gamma) t.gamma = *gamma;
    if (tau_c) t.tau_coarse = *tau_c;
    if (tau_r) t.tau_refined = *tau_r;
    t.validate();
    return t;
  }
};

// Loads a checkpoint; an explicit --config/--preset must agree with it on
// every model field. Thresholds and data paths come from the explicit config
// when there is one, otherwise from the checkpoint.
struct Session {
  pl::LoadedModel loaded;
  pl::RunConfig cfg;

  Session(const Globals& g, const std::string& checkpoint) {
    if (g.explicit_config()) {
      cfg = g.resolve();
      loaded = pl::load_checkpoint(checkpoint, &cfg.model);
    } else {
      loaded = pl::load_checkpoint(checkpoint);
      cfg = loaded.config;
    }
  }
};

void emit(const json& report, const std::string& file) {
  const std::string text = report.dump(2);
  std::cout << text << '\n';
  if (file.empty()) return;
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw cm::IoError("cannot write " + file);
  out << text << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  cm::configure_allocator();
  CLI::App app{"Two-stage cloud segmentation with selective state-space blocks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "JSON run config merged over the preset")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "run seed");
  app.add_flag("--deterministic", g.deterministic, "omit wall-clock fields so reruns are byte-identical");
  app.fallthrough();

  // make-synth
  auto* synth = app.add_subcommand("make-synth", "write a synthetic dataset");
  std::string synth_out;
  std::optional<int> synth_count, synth_size;
  bool overwrite = false;
  synth->add_option("--out", synth_out, "dataset directory (default: data.dataset)");
  synth->add_option("--count", synth_count, "number of scenes");
  synth->add_option("--size", synth_size, "scene side in pixels");
  synth->add_flag("--overwrite", overwrite, "replace an existing dataset in --out");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_data, train_out;
  std::optional<int> train_epochs;
  std::optional<double> train_lr;
  train->add_option("--data", train_data, "dataset directory");
  train->add_option("--out", train_out, "output directory for checkpoints and the log");
  train->add_option("--epochs", train_epochs, "epoch count");
  train->add_option("--lr", train_lr, "initial learning rate");

  // eval
  auto* eval = app.add_subcommand("eval", "coarse, refined and fused metrics on one split");
  std::string checkpoint, data_dir, split = "test", report_file;
  ThresholdFlags thresholds;
  eval->add_option("--checkpoint", checkpoint, "checkpoint (.bin, .json or base path)")->required();
  eval->add_option("--data", data_dir, "dataset directory");
  eval->add_option("--split", split, "split tag");
  eval->add_option("--report", report_file, "also write the report here");
  thresholds.add(eval);

  // predict
  auto* predict = app.add_subcommand("predict", "masks and probability maps for one image");
  std::string image, out_path;
  predict->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  predict->add_option("--image", image, "16-bit 4-band PNG")->required();
  predict->add_option("--out", out_path, "output directory")->required();
  thresholds.add(predict);

  // viz-stages
  auto* viz = app.add_subcommand("viz-stages", "3x3 panel of every pipeline stage");
  std::string mask_file;
  viz->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  viz->add_option("--image", image, "16-bit 4-band PNG")->required();
  viz->add_option("--mask", mask_file, "optional ground-truth mask");
  viz->add_option("--out", out_path, "output PNG")->required();
  thresholds.add(viz);

  // hard-subset
  auto* hard = app.add_subcommand("hard-subset", "rank images by mean uncertainty and score the top fraction");
  double fraction = 0.10;
  hard->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  hard->add_option("--data", data_dir, "dataset directory");
  hard->add_option("--split", split, "split tag");
  hard->add_option("--fraction", fraction, "fraction of images to keep");
  hard->add_option("--report", report_file, "also write the report here");
  thresholds.add(hard);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      pl::RunConfig cfg = g.resolve();
      if (synth_count) cfg.data.synth_count = *synth_count;
      if (synth_size) cfg.data.patch_size = *synth_size;
      const std::string out = synth_out.empty() ? cfg.data.dataset : synth_out;
      const auto s = pl::make_synth(cfg, out, overwrite);
      std::cout << json{{"dataset", out}, {"train", s.train}, {"test", s.test}}.dump() << '\n';
    } else if (*train) {
      pl::RunConfig cfg = g.resolve();
      if (!train_data.empty()) cfg.data.dataset = train_data;
      if (!train_out.empty()) cfg.data.output = train_out;
      if (train_epochs) cfg.training.epochs = *train_epochs;
      if (train_lr) cfg.optimizer.lr = *train_lr;
      const auto r = pl::train(cfg, &std::cerr);
      std::cout << json{{"log", r.log.string()}, {"last", r.last.string()}, {"best", r.best.string()},
                        {"final_train_loss", r.epochs.back().train_loss}}
                       .dump()
                << '\n';
    } else if (*eval || *hard) {
      Session s(g, checkpoint);
      const std::string dir = data_dir.empty() ? s.cfg.data.dataset : data_dir;
      const auto ds = cm::data::Dataset::load(dir);
      const auto idx = ds.split(split);
      if (idx.empty()) throw cm::DatasetError("split '" + split + "' of " + dir + " is empty");
      const auto t = thresholds.apply(s.cfg.thresholds);
      if (*eval) {
        emit(pl::to_json(pl::evaluate(*s.loaded.net, ds, idx, t, split)), report_file);
      } else {
        emit(pl::to_json(pl::hard_subset(*s.loaded.net, ds, idx, t, fraction)), report_file);
      }
    } else if (*predict) {
      Session s(g, checkpoint);
      const auto st = pl::predict(*s.loaded.net, image, out_path, thresholds.apply(s.cfg.thresholds));
      const double accepted = std::count(st.acceptance.data.begin(), st.acceptance.data.end(), 1);
      std::cout << json{{"out", out_path}, {"acceptance_rate", accepted / double(st.acceptance.size())}}.dump() << '\n';
    } else if (*viz) {
      Session s(g, checkpoint);
      const cm::Tensor img = cm::data::read_image(image);
      s.loaded.net->config().check_input(img.height(), img.width(), img.channels());
      const auto st = cm::model::forward_full(*s.loaded.net, img, thresholds.apply(s.cfg.thresholds));
      std::optional<cm::BinaryMask> label;
      if (!mask_file.empty()) label = cm::data::read_mask(mask_file);
      pl::write_stage_panel(img, label ? &*label : nullptr, st, out_path);
      std::cout << json{{"panel", out_path}}.dump() << '\n';
    }
  } catch (const cm::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "cloudmamba/pipeline/commands.hpp"
#include "cloudmamba/pipeline/optim.hpp"
#include "test_util.hpp"

using namespace cloudmamba;
using namespace cloudmamba::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig tiny_config(const fs::path& root) {
  RunConfig c;
  c.model.levels = 2;
  c.model.base_channels = 4;
  c.model.max_channels = 16;
  c.model.state_dim = 4;
  c.optimizer.lr = 3e-3;
  c.training.epochs = 2;
  c.training.batch_size = 4;
  c.training.deterministic = true;
  c.data.dataset = (root / "data").string();
  c.data.output = (root / "run").string();
  c.data.patch_size = 16;
  c.data.synth_count = 10;
  c.data.test_fraction = 0.2;
  return c;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_log(const fs::path& file) {
  std::vector<json> out;
  std::ifstream in(file);
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

// Runs the CLI with stdout and stderr captured; returns the exit status.
int run_cli(const std::string& args, const testutil::TempDir& dir, std::string* out, std::string* err) {
  const fs::path o = dir / "cli.out", e = dir / "cli.err";
  const std::string cmd = std::string("\"") + CLOUDMAMBA_CLI + "\" " + args + " >\"" + o.string() + "\" 2>\"" +
                          e.string() + "\"";
  const int status = std::system(cmd.c_str());
  if (out) *out = slurp(o);
  if (err) *err = slurp(e);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, PresetsCarryTheirDocumentedValues) {
  const auto desk = preset("desk");
  EXPECT_EQ(desk.model.levels, 3);
  EXPECT_EQ(desk.model.base_channels, 16);
  EXPECT_EQ(desk.data.patch_size, 64);
  EXPECT_EQ(desk.data.synth_count, 200);
  EXPECT_EQ(desk.training.epochs, 5);
  EXPECT_EQ(desk.training.batch_size, 8);
  EXPECT_EQ(desk.training.seed, 42u);
  const auto paper = preset("paper");
  EXPECT_EQ(paper.model.levels, 5);
  EXPECT_EQ(paper.model.dilations, (std::array<int, 3>{1, 2, 4}));
  EXPECT_EQ(paper.thresholds.gamma, 0.4);
  EXPECT_EQ(paper.thresholds.tau_coarse, 0.5);
  EXPECT_EQ(paper.thresholds.tau_refined, 0.5);
  EXPECT_EQ(paper.optimizer.lr, 1e-4);
  EXPECT_EQ(paper.training.epochs, 30);
  EXPECT_EQ(paper.data.patch_size, 512);
  EXPECT_THROW(preset("laptop"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = preset("desk");
  c.loss.aux_weights = {1, 0.25, 0.125};
  c.model.mamba = nn::MambaVariant::kSeparate;
  c.thresholds.gamma = 0.3;
  c.training.seed = 1234567890123ULL;
  EXPECT_EQ(merge_json(RunConfig{}, to_json(c)), c);
}

TEST(Config, PartialDocumentOnlyTouchesNamedKeys) {
  const RunConfig base = preset("desk");
  const RunConfig merged = merge_json(base, json::parse(R"({"model": {"levels": 2}, "training": {"epochs": 9}})"));
  RunConfig want = base;
  want.model.levels = 2;
  want.training.epochs = 9;
  EXPECT_EQ(merged, want);
}

TEST(Config, UnknownKeysAndBadTypesAreRejected) {
  try {
    merge_json(RunConfig{}, json::parse(R"({"model": {"levelz": 2}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.levelz"), std::string::npos) << e.what();
  }
  EXPECT_THROW(merge_json(RunConfig{}, json::parse(R"({"modle": {}})")), ConfigError);
  EXPECT_THROW(merge_json(RunConfig{}, json::parse(R"({"model": {"levels": "three"}})")), ConfigError);
  EXPECT_THROW(merge_json(RunConfig{}, json::parse(R"({"thresholds": {"gamma": 0}})")).validate(), ConfigError);
}

TEST(Config, FileLoading) {
  testutil::TempDir dir;
  std::ofstream(dir / "c.json") << R"({"optimizer": {"lr": 0.5}})";
  EXPECT_EQ(load_config_file((dir / "c.json").string(), RunConfig{}).optimizer.lr, 0.5);
  std::ofstream(dir / "bad.json") << "{";
  EXPECT_THROW(load_config_file((dir / "bad.json").string(), RunConfig{}), ConfigError);
  EXPECT_THROW(load_config_file((dir / "none.json").string(), RunConfig{}), ConfigError);
}

TEST(Config, ModelDifferencesNameFields) {
  model::ModelConfig a, b;
  b.levels = 3;
  b.dilations = {1, 2, 8};
  EXPECT_EQ(model_differences(a, b), (std::vector<std::string>{"model.dilations", "model.levels"}));
  EXPECT_TRUE(model_differences(a, a).empty());
}

TEST(CosineLr, ClosedForm) {
  EXPECT_EQ(cosine_lr(1e-3, 0.01, 0, 10), 1e-3);
  const Real lo = 1e-5;
  for (int e = 0; e < 10; ++e)
    EXPECT_NEAR(cosine_lr(1e-3, 0.01, e, 10), lo + 0.5 * (1e-3 - lo) * (1 + std::cos(std::numbers::pi * e / 10)), 1e-18);
  EXPECT_NEAR(cosine_lr(1e-3, 0.01, 5, 10), 0.5 * (1e-3 + lo), 1e-18);
  for (int e = 1; e < 10; ++e) EXPECT_LT(cosine_lr(1e-3, 0.01, e, 10), cosine_lr(1e-3, 0.01, e - 1, 10));
  EXPECT_THROW(cosine_lr(1e-3, 0.01, 10, 10), InvalidParameter);
}

TEST(AdamW, TwoHandComputedSteps) {
  nn::ParameterStore ps;
  ag::Var w = ps.add("w", Tensor({2}, std::vector<Real>{1.0, -2.0}));
  ag::Var frozen = ps.add("frozen", Tensor({1}, 3.0));
  OptimizerConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW opt(ps, cfg);

  const std::vector<std::vector<Real>> grads{{0.5, -0.25}, {-1.0, 0.75}};
  std::vector<Real> want{1.0, -2.0}, m(2, 0), v(2, 0);
  const Real lr = 0.01;
  for (int t = 1; t <= 2; ++t) {
    ps.zero_grad();
    ag::backward(ag::sum(ag::mul(w, ag::Var(Tensor({2}, grads[t - 1])))));
    opt.step(lr);
    for (int i = 0; i < 2; ++i) {
      const Real g = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const Real mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      want[i] -= lr * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * want[i]);
    }
    EXPECT_NEAR(w.value()[0], want[0], 1e-15);
    EXPECT_NEAR(w.value()[1], want[1], 1e-15);
  }
  EXPECT_EQ(frozen.value()[0], 3.0);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(Checkpoint, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Checkpoint, RoundTripThroughEveryPathForm) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  model::CloudMambaNet net(cfg.model, 5);
  save_checkpoint(dir / "ck", net.parameters(), cfg, json{{"epoch", 3}});
  for (const auto& p : {dir / "ck", dir / "ck.bin", dir / "ck.json"}) {
    const auto loaded = load_checkpoint(p);
    EXPECT_EQ(loaded.config, cfg);
    EXPECT_EQ(loaded.meta.at("epoch"), 3);
    const auto& a = net.parameters().entries();
    const auto& b = loaded.net->parameters().entries();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i].name, b[i].name);
      ASSERT_EQ(a[i].var.value().storage(), b[i].var.value().storage());
    }
  }
}

TEST(Checkpoint, TamperedWeightsAreDetected) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  model::CloudMambaNet net(cfg.model, 5);
  save_checkpoint(dir / "ck", net.parameters(), cfg, json::object());
  std::string bytes = slurp(dir / "ck.bin");
  bytes[bytes.size() - 3] ^= 0x01;
  std::ofstream(dir / "ck.bin", std::ios::binary | std::ios::trunc) << bytes;
  EXPECT_THROW(load_checkpoint(dir / "ck"), CheckpointMismatch);
}

TEST(Checkpoint, ConfigDisagreementNamesTheField) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  model::CloudMambaNet net(cfg.model, 5);
  save_checkpoint(dir / "ck", net.parameters(), cfg, json::object());
  model::ModelConfig other = cfg.model;
  other.levels = 3;
  try {
    load_checkpoint(dir / "ck", &other);
    FAIL();
  } catch (const CheckpointMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("model.levels"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(load_checkpoint(dir / "ck", &cfg.model));
}

TEST(Checkpoint, ReadParametersChecksShapes) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  model::CloudMambaNet net(cfg.model, 5);
  save_checkpoint(dir / "ck", net.parameters(), cfg, json::object());
  model::ModelConfig wide = cfg.model;
  wide.base_channels = 8;
  model::CloudMambaNet other(wide, 5);
  EXPECT_THROW(read_parameters(dir / "ck.bin", other.parameters()), CheckpointMismatch);
  EXPECT_THROW(load_checkpoint(dir / "missing"), IoError);
}

TEST(MakeSynth, CountsSplitAndByteIdenticalOutput) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  const auto a = make_synth(cfg, dir / "a");
  EXPECT_EQ(a.train, 8);
  EXPECT_EQ(a.test, 2);
  make_synth(cfg, dir / "b");
  const auto ds = data::Dataset::load(dir / "a");
  ASSERT_EQ(ds.size(), 10u);
  EXPECT_EQ(ds.split("test").size(), 2u);
  EXPECT_EQ(ds[0].image.height(), 16);
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir / "a");
    ASSERT_EQ(slurp(entry.path()), slurp(dir / "b" / rel)) << rel;
  }
}

TEST(MakeSynth, ZeroScenesGiveEmptyDataset) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  cfg.data.synth_count = 0;
  const auto s = make_synth(cfg, dir / "empty");
  EXPECT_EQ(s.train + s.test, 0);
  EXPECT_TRUE(data::Dataset::load(dir / "empty").empty());
}

TEST(MakeSynth, RefusesNonEmptyDirectoryWithoutOverwrite) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  make_synth(cfg, dir / "a");
  EXPECT_THROW(make_synth(cfg, dir / "a"), IoError);
  cfg.data.synth_count = 4;
  EXPECT_EQ(make_synth(cfg, dir / "a", true).train + 0, 3);
  EXPECT_EQ(data::Dataset::load(dir / "a").size(), 4u);
  std::ofstream(dir / "other.txt") << "x";
  fs::create_directories(dir / "junk");
  std::ofstream(dir / "junk" / "f") << "x";
  EXPECT_THROW(make_synth(cfg, dir / "junk", true), IoError);
}

TEST(Train, ZeroLearningRateLeavesLossUnchanged) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  cfg.optimizer.lr = 0;
  cfg.training.augment = false;
  cfg.training.epochs = 3;
  make_synth(cfg, cfg.data.dataset);
  const auto r = train(cfg);
  ASSERT_EQ(r.epochs.size(), 3u);
  for (const auto& e : r.epochs) EXPECT_NEAR(e.train_loss, r.epochs[0].train_loss, 1e-7);
}

TEST(Train, WritesLogAndCheckpoints) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  make_synth(cfg, cfg.data.dataset);
  const auto r = train(cfg);
  EXPECT_TRUE(fs::exists(r.last.string() + ".bin"));
  EXPECT_TRUE(fs::exists(r.best.string() + ".json"));
  const auto log = read_log(r.log);
  ASSERT_EQ(log.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(log[i].at("epoch"), i + 1);
    EXPECT_FALSE(log[i].contains("seconds"));
    for (const char* key : {"lr", "train_loss", "terms", "val_miou", "val_f1", "val_oa"})
      EXPECT_TRUE(log[i].contains(key)) << key;
  }
  EXPECT_EQ(log[0].at("lr").get<double>(), cfg.optimizer.lr);
  EXPECT_LT(log[1].at("lr").get<double>(), cfg.optimizer.lr);
  EXPECT_EQ(load_checkpoint(r.last).meta.at("epoch"), 2);

  cfg.training.deterministic = false;
  cfg.training.epochs = 1;
  const auto timed = read_log(train(cfg).log);
  ASSERT_EQ(timed.size(), 1u);
  EXPECT_TRUE(timed[0].contains("seconds"));
}

TEST(Train, DivergenceRaisesNumericalError) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  cfg.optimizer.lr = 1e200;
  cfg.training.epochs = 3;
  make_synth(cfg, cfg.data.dataset);
  EXPECT_THROW(train(cfg), NumericalError);
}

TEST(Train, MissingTrainSplitIsDatasetError) {
  testutil::TempDir dir;
  RunConfig cfg = tiny_config(dir.path());
  cfg.data.synth_count = 0;
  make_synth(cfg, cfg.data.dataset);
  EXPECT_THROW(train(cfg), DatasetError);
}

class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir;
    cfg_ = new RunConfig(tiny_config(dir_->path()));
    cfg_->data.synth_count = 12;
    make_synth(*cfg_, cfg_->data.dataset);
    const auto r = train(*cfg_);
    loaded_ = new LoadedModel(load_checkpoint(r.last));
    ds_ = new data::Dataset(data::Dataset::load(cfg_->data.dataset));
  }
  static void TearDownTestSuite() {
    delete ds_;
    delete loaded_;
    delete cfg_;
    delete dir_;
  }

  static std::vector<std::size_t> all_indices() {
    std::vector<std::size_t> idx(ds_->size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }

  static testutil::TempDir* dir_;
  static RunConfig* cfg_;
  static LoadedModel* loaded_;
  static data::Dataset* ds_;
};

testutil::TempDir* TrainedModel::dir_ = nullptr;
RunConfig* TrainedModel::cfg_ = nullptr;
LoadedModel* TrainedModel::loaded_ = nullptr;
data::Dataset* TrainedModel::ds_ = nullptr;

TEST_F(TrainedModel, EvalGammaLimits) {
  model::ThresholdConfig t;
  t.gamma = 1e-12;
  const auto low = evaluate(*loaded_->net, *ds_, all_indices(), t, "all");
  EXPECT_EQ(low.fused.counts, low.refined.counts);
  EXPECT_EQ(low.acceptance_rate, 0.0);

  t.gamma = 1;
  const auto high = evaluate(*loaded_->net, *ds_, all_indices(), t, "all");
  EXPECT_EQ(high.fused.counts, high.coarse.counts);
  EXPECT_EQ(high.images, ds_->size());
  EXPECT_GT(high.acceptance_rate, 0.99);
  EXPECT_TRUE(high.mean_uncertainty >= 0 && high.mean_uncertainty <= 1);
}

TEST_F(TrainedModel, EvalReportJsonShape) {
  const auto r = evaluate(*loaded_->net, *ds_, ds_->split("test"), cfg_->thresholds, "test");
  const json j = to_json(r);
  for (const char* key : {"split", "images", "coarse", "refined", "fused", "acceptance_rate", "mean_uncertainty"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(j.at("fused").contains("miou"));
  EXPECT_THROW(evaluate(*loaded_->net, *ds_, {}, cfg_->thresholds, "none"), DatasetError);
}

TEST_F(TrainedModel, PredictWritesConsistentMaps) {
  const fs::path image = fs::path(cfg_->data.dataset) / "images" / (ds_->samples()[0].id + ".png");
  const fs::path out = dir_->path() / "pred";
  const auto st = predict(*loaded_->net, image, out, cfg_->thresholds);
  for (const char* name : {"fused.png", "coarse_mask.png", "refined_mask.png"}) {
    const cv::Mat m = cv::imread((out / name).string(), cv::IMREAD_UNCHANGED);
    ASSERT_EQ(m.type(), CV_8UC1) << name;
    for (int i = 0; i < m.rows * m.cols; ++i) ASSERT_TRUE(m.data[i] == 0 || m.data[i] == 255);
  }
  const cv::Mat fused = cv::imread((out / "fused.png").string(), cv::IMREAD_UNCHANGED);
  for (int i = 0; i < fused.rows * fused.cols; ++i) ASSERT_EQ(fused.data[i] == 255, st.fused[i] == 1);

  const cv::Mat p = cv::imread((out / "p_coarse.png").string(), cv::IMREAD_UNCHANGED);
  const cv::Mat u = cv::imread((out / "uncertainty.png").string(), cv::IMREAD_UNCHANGED);
  ASSERT_EQ(p.type(), CV_16UC1);
  ASSERT_EQ(u.type(), CV_16UC1);
  for (int y = 0; y < p.rows; ++y)
    for (int x = 0; x < p.cols; ++x) {
      const double pc = p.at<std::uint16_t>(y, x) / 65535.0, uc = u.at<std::uint16_t>(y, x) / 65535.0;
      ASSERT_NEAR(uc, 1 - 2 * std::abs(pc - 0.5), 2.0 / 65535);
    }
  EXPECT_THROW(predict(*loaded_->net, dir_->path() / "absent.png", out, cfg_->thresholds), IoError);
}

TEST_F(TrainedModel, HardSubsetProperties) {
  const auto r = hard_subset(*loaded_->net, *ds_, all_indices(), cfg_->thresholds, 0.25);
  ASSERT_EQ(r.ids.size(), 3u);  // ⌈0.25·12⌉
  for (std::size_t i = 1; i < r.mean_uncertainty.size(); ++i) EXPECT_GE(r.mean_uncertainty[i - 1], r.mean_uncertainty[i]);
  EXPECT_GE(r.subset_mean_uncertainty, r.full_mean_uncertainty);
  EXPECT_EQ(r.locality_violations, 0u);
  const json j = to_json(r);
  EXPECT_TRUE(j.contains("delta_miou"));
  EXPECT_NEAR(j.at("delta_miou").get<double>(), r.fused.miou - r.coarse.miou, 1e-4);
}

TEST(Panel, GrayLevels) {
  EXPECT_EQ(probability_gray(0.0), 0);
  EXPECT_EQ(probability_gray(1.0), 254);
  EXPECT_EQ(probability_gray(0.5), 127);
  EXPECT_EQ(uncertainty_gray(0.5), 255);
  EXPECT_EQ(uncertainty_gray(0.0), 0);
  EXPECT_EQ(uncertainty_gray(1.0), 0);
  // U is white exactly where the P panel is mid-gray.
  for (int k = 0; k <= 10000; ++k) {
    const Real p = k / 10000.0;
    ASSERT_EQ(uncertainty_gray(p) == 255, probability_gray(p) == 127) << p;
  }
}

TEST_F(TrainedModel, StagePanelIsAThreeByThreeGrid) {
  const auto& s = ds_->samples()[0];
  const auto st = model::forward_full(*loaded_->net, s.image, cfg_->thresholds);
  const fs::path out = dir_->path() / "panel.png";
  write_stage_panel(s.image, &s.label, st, out);
  const cv::Mat with = cv::imread(out.string(), cv::IMREAD_UNCHANGED);
  ASSERT_FALSE(with.empty());
  write_stage_panel(s.image, nullptr, st, dir_->path() / "panel2.png");
  const cv::Mat without = cv::imread((dir_->path() / "panel2.png").string(), cv::IMREAD_UNCHANGED);
  EXPECT_EQ(with.size(), without.size());
  EXPECT_GT(with.cols, 3 * 100);
  EXPECT_GT(with.rows, 3 * 100);
}

TEST(Cli, ErrorsArePrintedAsKindAndMessage) {
  testutil::TempDir dir;
  std::string out, err;
  EXPECT_EQ(run_cli("eval --checkpoint \"" + (dir / "nothing").string() + "\"", dir, &out, &err), 1);
  EXPECT_EQ(err.rfind("error: IoError: ", 0), 0u) << err;
  EXPECT_EQ(run_cli("predict --checkpoint x --image y", dir, &out, &err), 106);
}

TEST(Cli, MakeSynthPrintsSummary) {
  testutil::TempDir dir;
  std::string out, err;
  const std::string data = (dir / "d").string();
  ASSERT_EQ(run_cli("make-synth --out \"" + data + "\" --count 5 --size 16", dir, &out, &err), 0) << err;
  const json j = json::parse(out);
  EXPECT_EQ(j.at("train").get<int>() + j.at("test").get<int>(), 5);
  EXPECT_EQ(run_cli("make-synth --out \"" + data + "\" --count 5 --size 16", dir, &out, &err), 1);
  EXPECT_EQ(err.rfind("error: IoError: ", 0), 0u) << err;
  EXPECT_EQ(run_cli("--preset desk train --data \"" + (dir / "missing").string() + "\"", dir, &out, &err), 1);
  EXPECT_EQ(err.rfind("error: DatasetError: ", 0), 0u) << err;
}

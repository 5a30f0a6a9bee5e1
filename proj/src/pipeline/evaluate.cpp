#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cloudmamba/data/synth.hpp"
#include "cloudmamba/pipeline/commands.hpp"

namespace cloudmamba::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x73706c74ULL;

double round4(double v) { return std::round(v * 1e4) / 1e4; }

double mean(const Grid<Real>& g) {
  return g.data.empty() ? 0.0 : std::accumulate(g.data.begin(), g.data.end(), 0.0) / double(g.data.size());
}

void write_image(const fs::path& file, const cv::Mat& m) {
  bool ok = false;
  try {
    ok = cv::imwrite(file.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + file.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + file.string());
}

cv::Mat mask_image(const BinaryMask& m) {
  cv::Mat out(m.height, m.width, CV_8UC1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at<std::uint8_t>(y, x) = m.at(y, x) ? 255 : 0;
  return out;
}

cv::Mat unit_image16(const Grid<Real>& g) {
  cv::Mat out(g.height, g.width, CV_16UC1);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      out.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::lround(std::clamp(g.at(y, x), 0.0, 1.0) * 65535.0));
  return out;
}

std::uint64_t locality_violations(const model::StagePipelineOutput& s) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < s.fused.data.size(); ++i) n += s.acceptance.data[i] && s.fused.data[i] != s.coarse_mask.data[i];
  return n;
}

}  // namespace

SynthSummary make_synth(const RunConfig& cfg, const fs::path& out, bool overwrite) {
  cfg.validate();
  std::error_code ec;
  if (fs::exists(out) && !fs::is_empty(out, ec)) {
    if (!overwrite) throw IoError(out.string() + " is not empty (pass --overwrite to replace a dataset there)");
    if (!fs::exists(out / "manifest.json")) throw IoError(out.string() + " is not empty and holds no dataset");
    fs::remove_all(out / "images");
    fs::remove_all(out / "masks");
    fs::remove(out / "manifest.json");
  }
  const int count = cfg.data.synth_count;
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(data::scene_seed(cfg.training.seed ^ kSplitStream, 0));
  std::shuffle(order.begin(), order.end(), rng);
  const int n_test = static_cast<int>(std::lround(cfg.data.test_fraction * count));
  std::vector<bool> is_test(count, false);
  for (int k = 0; k < n_test; ++k) is_test[order[k]] = true;

  std::vector<data::ManifestEntry> entries;
  SynthSummary summary;
  for (int i = 0; i < count; ++i) {
    data::SynthParams p;
    p.seed = data::scene_seed(cfg.training.seed, static_cast<std::uint64_t>(i));
    p.height = p.width = cfg.data.patch_size;
    const data::Scene scene = data::generate_scene(p);
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05d", i);
    data::write_patch(out, id, scene.image, scene.label);
    entries.push_back({id, is_test[i] ? "test" : "train"});
    ++(is_test[i] ? summary.test : summary.train);
  }
  data::write_manifest(out, entries);
  return summary;
}

MetricSummary summarize(const metrics::ConfusionCounts& c) {
  return {c, metrics::miou(c), metrics::f1(c), metrics::oa(c)};
}

json to_json(const MetricSummary& m) {
  return {{"tp", m.counts.tp}, {"tn", m.counts.tn}, {"fp", m.counts.fp}, {"fn", m.counts.fn},
          {"miou", round4(m.miou)}, {"f1", round4(m.f1)}, {"oa", round4(m.oa)}};
}

json to_json(const EvalReport& r) {
  return {{"split", r.split},
          {"images", r.images},
          {"coarse", to_json(r.coarse)},
          {"refined", to_json(r.refined)},
          {"fused", to_json(r.fused)},
          {"acceptance_rate", round4(r.acceptance_rate)},
          {"mean_uncertainty", round4(r.mean_uncertainty)}};
}

EvalReport evaluate(const model::CloudMambaNet& net, const data::Dataset& ds, const std::vector<std::size_t>& indices,
                    const model::ThresholdConfig& thresholds, const std::string& split_name) {
  if (indices.empty()) throw DatasetError("split '" + split_name + "' is empty");
  metrics::ConfusionCounts coarse, refined, fused;
  std::uint64_t accepted = 0, pixels = 0;
  double u_sum = 0;
  for (std::size_t i : indices) {
    const data::Sample& s = ds[i];
    const auto st = model::forward_full(net, s.image, thresholds);
    coarse += metrics::confusion_counts(st.coarse_mask, s.label);
    refined += metrics::confusion_counts(st.refined_mask, s.label);
    fused += metrics::confusion_counts(st.fused, s.label);
    accepted += std::count(st.acceptance.data.begin(), st.acceptance.data.end(), std::uint8_t{1});
    pixels += st.acceptance.data.size();
    u_sum += std::accumulate(st.uncertainty.data.begin(), st.uncertainty.data.end(), 0.0);
  }
  EvalReport r;
  r.split = split_name;
  r.images = indices.size();
  r.coarse = summarize(coarse);
  r.refined = summarize(refined);
  r.fused = summarize(fused);
  r.acceptance_rate = double(accepted) / double(pixels);
  r.mean_uncertainty = u_sum / double(pixels);
  return r;
}

model::StagePipelineOutput predict(const model::CloudMambaNet& net, const fs::path& image, const fs::path& out_dir,
                                   const model::ThresholdConfig& thresholds) {
  const Tensor img = data::read_image(image);
  net.config().check_input(img.height(), img.width(), img.channels());
  auto st = model::forward_full(net, img, thresholds);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_image(out_dir / "fused.png", mask_image(st.fused));
  write_image(out_dir / "coarse_mask.png", mask_image(st.coarse_mask));
  write_image(out_dir / "refined_mask.png", mask_image(st.refined_mask));
  write_image(out_dir / "p_coarse.png", unit_image16(st.coarse));
  write_image(out_dir / "p_refined.png", unit_image16(st.refined));
  write_image(out_dir / "uncertainty.png", unit_image16(st.uncertainty));
  return st;
}

std::uint8_t probability_gray(Real p) {
  return static_cast<std::uint8_t>(std::lround(254.0 * std::clamp(p, 0.0, 1.0)));
}

std::uint8_t uncertainty_gray(Real p) {
  const int q = probability_gray(p);
  return static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(q - 127) / 127.0)));
}

void write_stage_panel(const Tensor& image, const BinaryMask* label, const model::StagePipelineOutput& st,
                       const fs::path& out_file) {
  const int H = image.height(), W = image.width();
  if (label && !label->same_shape(H, W)) throw ShapeError("ground-truth mask size differs from the image");
  const int scale = std::max(1, (128 + std::max(H, W) - 1) / std::max(H, W));
  const int cell_w = W * scale, cell_h = H * scale, header = 22, gap = 4;
  cv::Mat panel(3 * (cell_h + header) + 4 * gap, 3 * cell_w + 4 * gap, CV_8UC3, cv::Scalar(40, 40, 40));

  auto gray = [&](auto value) {
    cv::Mat m(H, W, CV_8UC3);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::uint8_t v = value(y, x);
        m.at<cv::Vec3b>(y, x) = {v, v, v};
      }
    return m;
  };
  auto mask = [&](const BinaryMask& b) { return gray([&](int y, int x) { return std::uint8_t(b.at(y, x) ? 255 : 0); }); };

  std::vector<std::pair<std::string, cv::Mat>> cells;
  cv::Mat rgb(H, W, CV_8UC3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)  // bands B, G, R map straight onto OpenCV's BGR order
        rgb.at<cv::Vec3b>(y, x)[c] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(image.at(y, x, c), 0.0, 1.0)));
  cells.emplace_back("(a) input RGB", rgb);
  if (label) {
    cells.emplace_back("(b) ground truth", mask(*label));
  } else {
    cv::Mat blank(H, W, CV_8UC3, cv::Scalar(90, 90, 90));
    cells.emplace_back("(b) no ground truth", blank);
  }
  cells.emplace_back("(c) P_c", gray([&](int y, int x) { return probability_gray(st.coarse.at(y, x)); }));
  cells.emplace_back("(d) Y_c", mask(st.coarse_mask));
  cells.emplace_back("(e) U", gray([&](int y, int x) { return uncertainty_gray(st.coarse.at(y, x)); }));
  cells.emplace_back("(f) M", mask(st.acceptance));
  cells.emplace_back("(g) P_r", gray([&](int y, int x) { return probability_gray(st.refined.at(y, x)); }));
  cells.emplace_back("(h) Y_r", mask(st.refined_mask));
  cells.emplace_back("(i) Y", mask(st.fused));

  for (std::size_t k = 0; k < cells.size(); ++k) {
    const int row = static_cast<int>(k) / 3, col = static_cast<int>(k) % 3;
    const int x0 = gap + col * (cell_w + gap), y0 = gap + row * (cell_h + header + gap);
    cv::Mat big;
    cv::resize(cells[k].second, big, cv::Size(cell_w, cell_h), 0, 0, cv::INTER_NEAREST);
    big.copyTo(panel(cv::Rect(x0, y0 + header, cell_w, cell_h)));
    cv::putText(panel, cells[k].first, cv::Point(x0 + 2, y0 + header - 6), cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
  }
  if (!out_file.parent_path().empty()) fs::create_directories(out_file.parent_path());
  write_image(out_file, panel);
}

json to_json(const HardSubsetReport& r) {
  json selected = json::array();
  for (std::size_t i = 0; i < r.ids.size(); ++i)
    selected.push_back({{"id", r.ids[i]}, {"mean_uncertainty", round4(r.mean_uncertainty[i])}});
  return {{"fraction", r.fraction},
          {"selected", selected},
          {"subset_mean_uncertainty", round4(r.subset_mean_uncertainty)},
          {"full_mean_uncertainty", round4(r.full_mean_uncertainty)},
          {"coarse", to_json(r.coarse)},
          {"fused", to_json(r.fused)},
          {"delta_miou", round4(r.fused.miou - r.coarse.miou)},
          {"locality_violations", r.locality_violations}};
}

HardSubsetReport hard_subset(const model::CloudMambaNet& net, const data::Dataset& ds,
                             const std::vector<std::size_t>& indices, const model::ThresholdConfig& thresholds,
                             double fraction) {
  if (indices.empty()) throw DatasetError("hard_subset: no images to rank");
  std::vector<model::StagePipelineOutput> stages;
  std::vector<double> scores;
  for (std::size_t i : indices) {
    stages.push_back(model::forward_full(net, ds[i].image, thresholds));
    scores.push_back(mean(stages.back().uncertainty));
  }
  const std::vector<int> picked = metrics::hard_subset(scores, fraction);

  HardSubsetReport r;
  r.fraction = fraction;
  r.full_mean_uncertainty = std::accumulate(scores.begin(), scores.end(), 0.0) / double(scores.size());
  metrics::ConfusionCounts coarse, fused;
  for (int k : picked) {
    const data::Sample& s = ds[indices[k]];
    r.ids.push_back(s.id);
    r.mean_uncertainty.push_back(scores[k]);
    coarse += metrics::confusion_counts(stages[k].coarse_mask, s.label);
    fused += metrics::confusion_counts(stages[k].fused, s.label);
    r.locality_violations += locality_violations(stages[k]);
  }
  r.subset_mean_uncertainty =
      std::accumulate(r.mean_uncertainty.begin(), r.mean_uncertainty.end(), 0.0) / double(r.mean_uncertainty.size());
  r.coarse = summarize(coarse);
  r.fused = summarize(fused);
  return r;
}

}  // namespace cloudmamba::pipeline

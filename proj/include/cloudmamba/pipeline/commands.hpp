#pragma once

// The work behind each CLI subcommand. Every function takes a resolved
// RunConfig and reports through return values; printing is left to the
// caller apart from the optional progress stream.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloudmamba/data/dataset.hpp"
#include "cloudmamba/metrics.hpp"
#include "cloudmamba/pipeline/checkpoint.hpp"

namespace cloudmamba::pipeline {

struct SynthSummary {
  int train = 0;
  int test = 0;
};

// Writes data.synth_count scenes of data.patch_size² into `out` with a
// seeded train/test split (data.test_fraction of the scenes, rounded, go to
// test). Identical configs produce byte-identical directories. A non-empty
// `out` is refused unless `overwrite` is set and it already holds a dataset.
SynthSummary make_synth(const RunConfig& cfg, const std::filesystem::path& out, bool overwrite = false);

struct MetricSummary {
  metrics::ConfusionCounts counts;
  double miou = 0;
  double f1 = 0;
  double oa = 0;
};

MetricSummary summarize(const metrics::ConfusionCounts& counts);
nlohmann::json to_json(const MetricSummary& m);

struct EpochRecord {
  int epoch = 0;  // 1-based
  Real lr = 0;
  Real train_loss = 0;
  std::vector<loss::LossTerm> terms;  // per-term means over the epoch
  std::optional<MetricSummary> validation;
  double seconds = 0;
};

nlohmann::json to_json(const EpochRecord& r, bool with_timing);

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::filesystem::path last;  // checkpoint base paths
  std::filesystem::path best;
  std::filesystem::path log;
};

// Trains on the "train" split of data.dataset and validates on "test" after
// every epoch. Writes <output>/train_log.jsonl (one record per epoch,
// truncated at start), <output>/last.{bin,json} after every epoch and
// <output>/best.{bin,json} for the best validation mIoU (lowest training
// loss when there is no test split). A non-finite loss term raises
// NumericalError naming the term.
TrainResult train(const RunConfig& cfg, std::ostream* progress = nullptr);

struct EvalReport {
  std::string split;
  std::size_t images = 0;
  MetricSummary coarse;
  MetricSummary refined;
  MetricSummary fused;
  double acceptance_rate = 0;  // fraction of pixels with M = 1
  double mean_uncertainty = 0;
};

nlohmann::json to_json(const EvalReport& r);

// Runs the two-stage inference over `indices` of `ds`.
EvalReport evaluate(const model::CloudMambaNet& net, const data::Dataset& ds, const std::vector<std::size_t>& indices,
                    const model::ThresholdConfig& thresholds, const std::string& split_name);

// Writes fused.png, coarse_mask.png, refined_mask.png (8-bit, 0/255) and
// p_coarse.png, p_refined.png, uncertainty.png (16-bit, value·65535).
model::StagePipelineOutput predict(const model::CloudMambaNet& net, const std::filesystem::path& image,
                                   const std::filesystem::path& out_dir, const model::ThresholdConfig& thresholds);

// 3×3 labelled panel in the order input RGB, ground truth, P_c, Ŷ_c, U, M,
// P_r, Ŷ_r, Ŷ. Without a label the second panel is a placeholder.
void write_stage_panel(const Tensor& image, const BinaryMask* label, const model::StagePipelineOutput& stages,
                       const std::filesystem::path& out_file);

// Gray levels used by the panel. P_c and U share one quantization
// q = round(254·P) so the U panel is white exactly where the P_c panel is
// mid-gray (127).
std::uint8_t probability_gray(Real p);
std::uint8_t uncertainty_gray(Real p);

struct HardSubsetReport {
  double fraction = 0;
  std::vector<std::string> ids;       // descending mean U
  std::vector<double> mean_uncertainty;  // aligned with ids
  double subset_mean_uncertainty = 0;
  double full_mean_uncertainty = 0;
  MetricSummary coarse;
  MetricSummary fused;
  // Pixels where Ŷ differs from Ŷ_c although M = 1; zero by construction.
  std::uint64_t locality_violations = 0;
};

nlohmann::json to_json(const HardSubsetReport& r);

HardSubsetReport hard_subset(const model::CloudMambaNet& net, const data::Dataset& ds,
                             const std::vector<std::size_t>& indices, const model::ThresholdConfig& thresholds,
                             double fraction = 0.10);

}  // namespace cloudmamba::pipeline

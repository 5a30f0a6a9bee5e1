#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include "cloudmamba/data/synth.hpp"
#include "cloudmamba/ops.hpp"
#include "cloudmamba/pipeline/commands.hpp"
#include "cloudmamba/pipeline/optim.hpp"

namespace cloudmamba::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Distinct seed streams derived from the run seed.
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
constexpr std::uint64_t kAugmentStream = 0x61756720ULL;

void check_finite(const loss::LossBreakdown& b, int epoch, const std::string& id) {
  for (const auto& t : b.terms) {
    if (!std::isfinite(t.value)) {
      throw NumericalError("non-finite loss term '" + t.name + "' (" + std::to_string(t.value) + ") at epoch " +
                           std::to_string(epoch) + " on sample '" + id + "'");
    }
  }
  const Real total = b.total.value()[0];
  if (!std::isfinite(total)) {
    throw NumericalError("non-finite total loss at epoch " + std::to_string(epoch) + " on sample '" + id + "'");
  }
}

// Inputs are validated on load, so a range violation inside the forward pass means the activations went
// non-finite; report it as divergence rather than as a domain error.
model::TrainingForward checked_forward(model::CloudMambaNet& net, const Tensor& image, int epoch, const std::string& id) {
  model::TrainingForward f;
  try {
    f = model::forward_train(net, image);
  } catch (const DomainError& e) {
    throw NumericalError("non-finite activations at epoch " + std::to_string(epoch) + " on sample '" + id + "' (" +
                         e.what() + ")");
  }
  std::vector<const ag::Var*> maps{&f.stage_one.coarse, &f.refined};
  for (const auto& a : f.stage_one.aux) maps.push_back(&a);
  for (const ag::Var* m : maps) {
    for (Real v : m->value().storage()) {
      if (!std::isfinite(v)) {
        throw NumericalError("non-finite network output at epoch " + std::to_string(epoch) + " on sample '" + id + "'");
      }
    }
  }
  return f;
}

void check_gradients(const nn::ParameterStore& params, int epoch) {
  for (const auto& p : params.entries()) {
    if (!p.var.has_grad()) continue;
    for (Real g : p.var.node()->grad.values()) {
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient for parameter '" + p.name + "' at epoch " + std::to_string(epoch));
      }
    }
  }
}

}  // namespace

json to_json(const EpochRecord& r, bool with_timing) {
  json terms = json::object();
  for (const auto& t : r.terms) terms[t.name] = t.value;
  json j = {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"terms", terms}};
  if (r.validation) {
    j["val_miou"] = r.validation->miou;
    j["val_f1"] = r.validation->f1;
    j["val_oa"] = r.validation->oa;
  } else {
    j["val_miou"] = nullptr;
    j["val_f1"] = nullptr;
    j["val_oa"] = nullptr;
  }
  if (with_timing) j["seconds"] = r.seconds;
  return j;
}

TrainResult train(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const data::Dataset ds = data::Dataset::load(cfg.data.dataset);
  const auto train_idx = ds.split("train");
  const auto test_idx = ds.split("test");
  if (train_idx.empty()) throw DatasetError("dataset " + cfg.data.dataset + " has no train split");
  for (std::size_t i : train_idx) {
    const Tensor& img = ds[i].image;
    cfg.model.check_input(img.height(), img.width(), img.channels());
  }
  if (progress && !ds.non_binary_masks().empty()) {
    *progress << "warning: " << ds.non_binary_masks().size() << " masks held values other than 0/255\n";
  }

  const fs::path out_dir = cfg.data.output;
  fs::create_directories(out_dir);
  TrainResult result;
  result.log = out_dir / "train_log.jsonl";
  result.last = out_dir / "last";
  result.best = out_dir / "best";
  std::ofstream log(result.log, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + result.log.string());

  model::CloudMambaNet net(cfg.model, cfg.training.seed);
  nn::ParameterStore& params = net.parameters();
  AdamW opt(params, cfg.optimizer);
  const bool timing = !cfg.training.deterministic;
  const int epochs = cfg.training.epochs;
  const std::size_t batch = static_cast<std::size_t>(cfg.training.batch_size);
  double best_score = -1;

  for (int e = 0; e < epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.lr = cosine_lr(cfg.optimizer.lr, cfg.optimizer.lr_min_factor, e, epochs);

    std::vector<std::size_t> order = train_idx;
    std::mt19937_64 shuffle_rng(data::scene_seed(cfg.training.seed ^ kShuffleStream, static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    Real loss_sum = 0;
    std::vector<Real> term_sums;
    std::vector<std::string> term_names;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const Real weight = Real(1) / Real(stop - start);
      params.zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        const data::Sample& s = ds[order[k]];
        Tensor image = s.image;
        BinaryMask label = s.label;
        if (cfg.training.augment) {
          const std::uint64_t key = static_cast<std::uint64_t>(e) * order.size() + k;
          data::augment(image, label, data::Augmentation::draw(data::scene_seed(cfg.training.seed ^ kAugmentStream, key)));
        }
        const model::TrainingForward f = checked_forward(net, image, rec.epoch, s.id);
        loss::LossBreakdown b = loss::total_loss(f.stage_one.coarse, f.refined, f.stage_one.aux, label, cfg.loss);
        check_finite(b, rec.epoch, s.id);
        if (term_names.empty()) {
          for (const auto& t : b.terms) term_names.push_back(t.name);
          term_sums.assign(term_names.size(), 0);
        }
        for (std::size_t t = 0; t < b.terms.size(); ++t) term_sums[t] += b.terms[t].value;
        loss_sum += b.total.value()[0];
        ag::backward(ag::scale(b.total, weight));
      }
      check_gradients(params, rec.epoch);
      opt.step(rec.lr);
    }
    const Real n = Real(order.size());
    rec.train_loss = loss_sum / n;
    for (std::size_t t = 0; t < term_names.size(); ++t) rec.terms.push_back({term_names[t], term_sums[t] / n});

    if (!test_idx.empty()) {
      rec.validation = evaluate(net, ds, test_idx, cfg.thresholds, "test").fused;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(rec);
    log << to_json(rec, timing).dump() << '\n';
    log.flush();

    json meta = {{"epoch", rec.epoch}, {"train_loss", rec.train_loss}};
    meta["val_miou"] = rec.validation ? json(rec.validation->miou) : json(nullptr);
    save_checkpoint(result.last, params, cfg, meta);
    const double score = rec.validation ? rec.validation->miou : -rec.train_loss;
    if (e == 0 || score > best_score) {
      best_score = score;
      save_checkpoint(result.best, params, cfg, meta);
    }
    if (progress) {
      *progress << "epoch " << rec.epoch << "/" << epochs << " lr=" << rec.lr << " loss=" << rec.train_loss;
      if (rec.validation) *progress << " val_miou=" << rec.validation->miou;
      if (timing) *progress << " (" << rec.seconds << " s)";
      *progress << '\n';
    }
  }
  return result;
}

}  // namespace cloudmamba::pipeline

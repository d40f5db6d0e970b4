#include "lgmoe/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "lgmoe/checkpoint.hpp"
#include "lgmoe/kernels.hpp"

namespace lgmoe {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  // lr == 0 is allowed: a degenerate run that must leave parameters untouched
  LGMOE_CHECK(lr >= 0.0, "train config: lr must be >= 0");
  LGMOE_CHECK(warmup_steps >= 0, "train config: warmup_steps must be >= 0");
  LGMOE_CHECK(max_steps >= 1, "train config: max_steps must be >= 1");
  LGMOE_CHECK(batch_size >= 1, "train config: batch_size must be >= 1");
  LGMOE_CHECK(clip_norm > 0.0, "train config: clip_norm must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr"] = lr;
  j["warmup_steps"] = warmup_steps;
  j["max_steps"] = max_steps;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["clip_norm"] = clip_norm;
  if (k_policy) {
    if (k_policy->mode == KPolicy::Mode::kFixed) {
      j["k_policy"] = {{"mode", "fixed"}, {"k", k_policy->k}};
    } else {
      j["k_policy"] = {{"mode", "dynamic"}, {"k_min", k_policy->k_min},
                       {"k_max", k_policy->k_max}};
    }
  }
  if (lambda_ctc) j["lambda_ctc"] = *lambda_ctc;
  if (lambda_inter) j["lambda_inter"] = *lambda_inter;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (j.contains("k_policy")) {
    const auto& kp = j.at("k_policy");
    std::string mode = kp.value("mode", "fixed");
    if (mode == "fixed") {
      c.k_policy = KPolicy::fixed(kp.value("k", 1));
    } else {
      c.k_policy = KPolicy::dynamic(kp.value("k_min", 1), kp.value("k_max", 1));
    }
  }
  if (j.contains("lambda_ctc")) c.lambda_ctc = j.at("lambda_ctc").get<double>();
  if (j.contains("lambda_inter")) c.lambda_inter = j.at("lambda_inter").get<double>();
  c.validate();
  return c;
}

double lr_at_step(double lr, int warmup_steps, int step) {
  if (warmup_steps == 0) return lr;
  double w = static_cast<double>(warmup_steps);
  double s = static_cast<double>(step);
  return lr * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir) {
  cfg.validate();
  LGMOE_CHECK(!dataset.utts.empty(), "train: dataset is empty");
  if (cfg.k_policy) {
    model.cfg.k_policy = *cfg.k_policy;
    model.cfg.k_policy.validate(model.cfg.experts_per_group);
  }
  if (cfg.lambda_ctc) model.cfg.lambda_ctc = *cfg.lambda_ctc;
  if (cfg.lambda_inter) model.cfg.lambda_inter = *cfg.lambda_inter;
  model.cfg.validate();

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  LGMOE_CHECK(log.good(), "train: cannot write train_log.jsonl in " << out_dir);
  std::ofstream stats_log(fs::path(out_dir) / "expert_stats.jsonl");

  Rng rng(cfg.seed);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  for (Param& p : model.params.items()) {
    p.adam_m = Tensor::zeros(p.value.shape());
    p.adam_v = Tensor::zeros(p.value.shape());
  }

  std::vector<Batch> batches = make_batches(dataset, cfg.batch_size, rng);
  size_t batch_cursor = 0;

  TrainResult result;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    if (batch_cursor >= batches.size()) {
      batches = make_batches(dataset, cfg.batch_size, rng);
      batch_cursor = 0;
    }
    const Batch& batch = batches[batch_cursor++];
    int k = sample_k(model.cfg.k_policy, rng);

    model.params.zero_grads();
    double loss_acc = 0.0, ctc_acc = 0.0, att_acc = 0.0, inter_acc = 0.0;
    // aggregate per (layer, language) over the batch
    std::map<std::pair<int, int>, GroupStats> step_stats;

    for (int i = 0; i < batch.size(); ++i) {
      Tensor feats = batch.utt_feats(i);
      Tape tape;
      ForwardCtx ctx(tape, model, /*train=*/true);
      ctx.k = k;
      std::vector<GroupStats> utt_stats;
      ctx.stats = &utt_stats;

      BoolMatrix mask = model.cfg.causal
                            ? chunk_mask(feats.dim(0), model.cfg.train_chunk_frames)
                            : full_mask(feats.dim(0));
      EncoderOutput enc = encoder_forward(ctx, feats, mask);
      CtcLabelSeq y_asr(batch.y_asr[static_cast<size_t>(i)]);
      CtcLabelSeq y_lid = lid_ctc_labels(batch.y_lid[static_cast<size_t>(i)]);
      LossBreakdown lb = total_loss(ctx, enc, y_asr, y_lid);
      LGMOE_CHECK(lb.feasible, "train: CTC alignment infeasible at step "
                                   << step << " (labels longer than frames?)");
      double inv_b = 1.0 / batch.size();
      tape.backward(scale(lb.total, inv_b));
      ctx.bind.harvest_grads();
      loss_acc += tape.value(lb.total).item() * inv_b;
      ctc_acc += lb.ctc * inv_b;
      att_acc += lb.att * inv_b;
      inter_acc += lb.inter * inv_b;
      for (const GroupStats& gs : utt_stats) {
        GroupStats& agg = step_stats[{gs.layer, gs.language}];
        if (agg.expert_counts.empty()) {
          agg = gs;
        } else {
          for (size_t e = 0; e < gs.expert_counts.size(); ++e)
            agg.expert_counts[e] += gs.expert_counts[e];
        }
      }
    }
    LGMOE_CHECK(std::isfinite(loss_acc), "train: loss diverged (non-finite) at step " << step);

    // global-norm clip
    double sq = 0.0;
    for (Param& p : model.params.items())
      sq += kern::active().dot(p.grad.data(), p.grad.data(),
                               static_cast<size_t>(p.grad.numel()));
    double norm = std::sqrt(sq);
    double clip_scale = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

    double lr_t = lr_at_step(cfg.lr, cfg.warmup_steps, step);
    double bc1 = 1.0 - std::pow(kBeta1, step);
    double bc2 = 1.0 - std::pow(kBeta2, step);
    for (Param& p : model.params.items()) {
      double* g = p.grad.data();
      double* m = p.adam_m.data();
      double* v = p.adam_v.data();
      double* x = p.value.data();
      for (int64_t i = 0; i < p.value.numel(); ++i) {
        double gi = g[i] * clip_scale;
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        x[i] -= lr_t * mhat / (std::sqrt(vhat) + kEps);
      }
    }

    nlohmann::json line;
    line["step"] = step;
    line["k"] = k;
    line["loss"] = loss_acc;
    line["ctc"] = ctc_acc;
    line["att"] = att_acc;
    line["inter"] = inter_acc;
    log << line.dump() << "\n";
    for (const auto& [key, gs] : step_stats) {
      nlohmann::json sj;
      sj["step"] = step;
      sj["layer"] = gs.layer;
      sj["language"] = gs.language;
      sj["expert_counts"] = gs.expert_counts;
      sj["k"] = gs.k;
      stats_log << sj.dump() << "\n";
    }

    if (step == 1) result.first_loss = loss_acc;
    result.final_loss = loss_acc;
    result.steps = step;
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      save_checkpoint(model,
                      (fs::path(out_dir) / ("ckpt_" + std::to_string(step) + ".bin")).string());
    }
  }

  result.log_path = (fs::path(out_dir) / "train_log.jsonl").string();
  result.ckpt_path = (fs::path(out_dir) / "ckpt_final.bin").string();
  save_checkpoint(model, result.ckpt_path);
  return result;
}

}  // namespace lgmoe

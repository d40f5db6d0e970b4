#include "lgmoe/eval.hpp"

#include <fstream>
#include <map>

#include "lgmoe/ctc.hpp"

namespace lgmoe {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  nlohmann::json mono_j = nlohmann::json::array();
  for (const RateAgg& r : mono)
    mono_j.push_back({{"ter", r.rate()}, {"edits", r.edits}, {"ref_len", r.ref_len},
                      {"n_utts", r.n_utts}});
  j["ter_mono"] = mono_j;
  j["ter_cs"] = {{"ter", cs.rate()}, {"edits", cs.edits}, {"ref_len", cs.ref_len},
                 {"n_utts", cs.n_utts}};
  j["ter_overall"] = {{"ter", overall.rate()}, {"edits", overall.edits},
                      {"ref_len", overall.ref_len}, {"n_utts", overall.n_utts}};
  j["routing_acc"] = {{"mono", routing_acc_mono}, {"cs", routing_acc_cs},
                      {"overall", routing_acc_overall}};
  nlohmann::json util = nlohmann::json::array();
  for (const GroupStats& gs : expert_util)
    util.push_back({{"layer", gs.layer}, {"language", gs.language},
                    {"expert_counts", gs.expert_counts}, {"k", gs.k}});
  j["expert_utilization"] = util;
  j["loss"] = {{"total", mean_loss}, {"ctc", mean_ctc}, {"att", mean_att},
               {"inter", mean_inter}};
  j["k"] = k_used;
  if (override_lang) j["override_lang"] = *override_lang;
  return j;
}

EvalReport evaluate(Model& model, const Dataset& dataset, const EvalOptions& opts) {
  LGMOE_CHECK(opts.k >= 1 && opts.k <= model.cfg.experts_per_group,
              "evaluate: k=" << opts.k << " outside [1," << model.cfg.experts_per_group
                             << "]");
  if (!opts.force_k) {
    const KPolicy& kp = model.cfg.k_policy;
    LGMOE_CHECK(opts.k >= kp.min_k() && opts.k <= kp.max_k(),
                "evaluate: k=" << opts.k << " outside the trained policy bounds ["
                               << kp.min_k() << "," << kp.max_k()
                               << "]; pass force to evaluate anyway");
  }
  if (opts.override_lang)
    LGMOE_CHECK(*opts.override_lang >= 0 && *opts.override_lang < model.cfg.n_languages,
                "evaluate: override language out of range");

  EvalReport report;
  report.k_used = opts.k;
  report.override_lang = opts.override_lang;
  report.mono.assign(static_cast<size_t>(model.cfg.n_languages), RateAgg{});

  std::ofstream routing_dump;
  if (!opts.dump_routing_path.empty()) {
    routing_dump.open(opts.dump_routing_path);
    LGMOE_CHECK(routing_dump.good(),
                "evaluate: cannot write routing dump " << opts.dump_routing_path);
  }

  std::map<std::pair<int, int>, GroupStats> util;
  int64_t frames_mono = 0, frames_mono_ok = 0, frames_cs = 0, frames_cs_ok = 0;
  double loss_sum = 0.0, ctc_sum = 0.0, att_sum = 0.0, inter_sum = 0.0;
  int n = 0;

  for (const Utterance& utt : dataset.utts) {
    Tape tape;
    ForwardCtx ctx(tape, model, /*train=*/false);
    ctx.k = opts.k;
    ctx.override_lang = opts.override_lang;
    std::vector<GroupStats> utt_stats;
    ctx.stats = &utt_stats;

    EncoderOutput enc = encoder_forward_full(ctx, utt.feats);
    std::vector<int> hyp = ctc_greedy_decode(tape.value(asr_head_log_probs(ctx, enc.h_final)));

    CtcLabelSeq y_asr(utt.y_asr);
    CtcLabelSeq y_lid = lid_ctc_labels(utt.y_lid);
    LossBreakdown lb = total_loss(ctx, enc, y_asr, y_lid);
    loss_sum += tape.value(lb.total).item();
    ctc_sum += lb.ctc;
    att_sum += lb.att;
    inter_sum += lb.inter;
    ++n;

    EditStats ed = edit_distance(hyp, utt.y_asr);
    bool mixed = false;
    for (int lang : utt.y_lid)
      if (lang != utt.y_lid.front()) mixed = true;
    RateAgg& cls = mixed ? report.cs
                         : report.mono[static_cast<size_t>(utt.y_lid.front())];
    cls.edits += ed.total();
    cls.ref_len += static_cast<int64_t>(utt.y_asr.size());
    cls.n_utts += 1;
    report.overall.edits += ed.total();
    report.overall.ref_len += static_cast<int64_t>(utt.y_asr.size());
    report.overall.n_utts += 1;

    // routing accuracy from the first MoE layer's table
    const RoutingTable& table = enc.tables.front();
    for (size_t t = 0; t < utt.true_frame_lang.size(); ++t) {
      bool ok = table.lang_ids[t] == utt.true_frame_lang[t];
      if (mixed) {
        ++frames_cs;
        frames_cs_ok += ok ? 1 : 0;
      } else {
        ++frames_mono;
        frames_mono_ok += ok ? 1 : 0;
      }
    }
    if (routing_dump.is_open())
      routing_dump << routing_table_jsonl(utt.utt_id, table) << "\n";

    for (const GroupStats& gs : utt_stats) {
      GroupStats& agg = util[{gs.layer, gs.language}];
      if (agg.expert_counts.empty()) {
        agg = gs;
      } else {
        for (size_t e = 0; e < gs.expert_counts.size(); ++e)
          agg.expert_counts[e] += gs.expert_counts[e];
      }
    }
  }

  report.routing_acc_mono =
      frames_mono > 0 ? static_cast<double>(frames_mono_ok) / frames_mono : 0.0;
  report.routing_acc_cs = frames_cs > 0 ? static_cast<double>(frames_cs_ok) / frames_cs : 0.0;
  int64_t frames_all = frames_mono + frames_cs;
  report.routing_acc_overall =
      frames_all > 0 ? static_cast<double>(frames_mono_ok + frames_cs_ok) / frames_all : 0.0;
  for (auto& [key, gs] : util) report.expert_util.push_back(gs);
  if (n > 0) {
    report.mean_loss = loss_sum / n;
    report.mean_ctc = ctc_sum / n;
    report.mean_att = att_sum / n;
    report.mean_inter = inter_sum / n;
  }
  return report;
}

}  // namespace lgmoe

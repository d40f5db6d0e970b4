#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgmoe/group.hpp"
#include "lgmoe/mask.hpp"
#include "lgmoe/params.hpp"

namespace lgmoe {

enum class RouteFrom { kLayerInput, kHInter };

struct ModelConfig {
  int d_in = 20;
  int d_model = 24;
  int n_heads = 2;
  int d_ffn = 48;
  int n_vanilla_layers = 1;
  int n_moe_layers = 1;
  int n_languages = 2;
  int experts_per_group = 2;
  KPolicy k_policy = KPolicy::dynamic(1, 2);
  int vocab_size = 17;  // CTC classes including the blank at index 0
  double lambda_ctc = 0.3;
  double lambda_inter = 0.1;
  bool causal = false;        // train with a chunked mask instead of full attention
  int train_chunk_frames = 8; // chunk width used when causal
  int conv_kernel = 3;
  int decoder_layers = 1;
  Act ffn_activation = Act::kSwish;
  RouteFrom route_from = RouteFrom::kLayerInput;
  bool uniform_gates = false;      // router-free gating (all gates 1/k)
  bool subsample_frontend = false; // 4x conv front-end, accounting only

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  /// Full-size accounting configuration: d=256, d_ffn=2048, 6+6 layers,
  /// 2 languages x 2 experts, 6-layer decoder, 80-dim features with the 4x
  /// subsampling front-end.
  static ModelConfig full_scale();
};

struct LnParams {
  int gamma = -1, beta = -1;
};
struct FfnParams {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};
struct AttnHead {
  int wq = -1, wk = -1, wv = -1, wo = -1;
};
struct AttnParams {
  std::vector<AttnHead> heads;
  int bo = -1;
};
struct EncLayer {
  LnParams ln_ffn1, ln_attn, ln_conv, ln_ffn2, ln_out;
  FfnParams ffn1;
  AttnParams attn;
  int conv_w = -1, conv_b = -1;
  bool is_moe = false;
  FfnParams ffn2;                  // vanilla layers only
  std::vector<ExpertGroup> groups; // MoE layers only
};
struct DecLayer {
  LnParams ln_self, ln_cross, ln_ffn;
  AttnParams self_attn, cross_attn;
  FfnParams ffn;
};

/// The full model: input projection, vanilla conformer block, MoE block,
/// shared language router heads, CTC head, and a small attention decoder.
class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed);

  ModelConfig cfg;
  ParamSet params;

  int in_w = -1, in_b = -1;
  std::vector<EncLayer> enc;
  int slr_w_lid = -1, slr_w_asr = -1;  // one instance, referenced by every MoE layer
  int head_w = -1, head_b = -1;        // final CTC head on h_final
  int dec_emb = -1;
  std::vector<DecLayer> dec;
  LnParams dec_ln_out;
  int dec_out_w = -1, dec_out_b = -1;

  int dh() const { return cfg.d_model / cfg.n_heads; }
  int dec_vocab() const { return cfg.vocab_size + 2; }  // + sos, eos
  int sos() const { return cfg.vocab_size; }
  int eos() const { return cfg.vocab_size + 1; }

  /// Sinusoidal positional encoding rows [offset, offset+len).
  Tensor posenc(int64_t offset, int len) const;
};

struct EncoderOutput {
  Var h_inter;  // after the vanilla block
  Var h_final;  // after the MoE block
  std::vector<RoutingTable> tables;  // one per MoE layer
};

struct ForwardCtx {
  ForwardCtx(Tape& tape, Model& model, bool train)
      : bind(tape, model.params, train), model(&model) {}

  ParamBinding bind;
  Model* model;
  int k = 1;
  std::optional<int> override_lang;
  std::vector<GroupStats>* stats = nullptr;
};

/// Per-layer streaming state: attention K/V per head plus the causal conv
/// left context. Cache contents after chunks [0..i] equal the corresponding
/// prefix computation's internal state.
struct LayerCache {
  std::vector<Tensor> k_cache, v_cache;  // one per head
  Tensor conv_tail;                      // up to kernel-1 input rows
};

/// One conformer layer (macaron FFN halves around attention and causal
/// depthwise conv). Exactly one of mask (full-utterance) or cache
/// (incremental) is set. For MoE layers the second FFN is the language-group
/// mixture and the produced routing table is appended to `tables`.
Var encoder_layer_apply(ForwardCtx& ctx, Var x, const EncLayer& layer, int layer_idx,
                        const BoolMatrix* mask, LayerCache* cache, Var h_inter,
                        std::vector<RoutingTable>* tables);

EncoderOutput encoder_forward(ForwardCtx& ctx, const Tensor& feats, const BoolMatrix& mask);

/// Convenience: full attention over the whole utterance.
EncoderOutput encoder_forward_full(ForwardCtx& ctx, const Tensor& feats);

/// Decoder output logits (steps x dec_vocab) for a teacher-forced input id
/// sequence (causal self-attention, cross-attention over h_final).
Var decoder_logits(ForwardCtx& ctx, Var h_final, const std::vector<int>& input_ids);

/// Teacher-forced token NLL from the attention decoder.
Var decoder_loss(ForwardCtx& ctx, Var h_final, const CtcLabelSeq& y_asr);

struct LossBreakdown {
  Var total;
  double ctc = 0.0;
  double att = 0.0;
  double inter = 0.0;
  bool feasible = true;  // all CTC terms had a valid alignment
};

/// total = lambda_ctc * L_ctc + (1 - lambda_ctc) * L_att + lambda_inter * L_inter
LossBreakdown total_loss(ForwardCtx& ctx, const EncoderOutput& enc, const CtcLabelSeq& y_asr,
                         const CtcLabelSeq& y_lid);

/// ASR head log-probs on h_final (for decoding).
Var asr_head_log_probs(ForwardCtx& ctx, Var h_final);

struct ParamCounts {
  int64_t total = 0;
  std::vector<int64_t> activated;  // activated[k-1] for k = 1..n
  int64_t per_expert = 0;
};

/// Exact integer parameter accounting from the config alone. Matches the
/// instantiated ParamSet element count. activated(k) counts everything
/// except the (n_total - k) experts per MoE layer that a frame's decode
/// path never touches.
ParamCounts count_params(const ModelConfig& cfg);

/// Analytic FLOP model (2*m*k*n per matmul) for one forward pass over
/// t_frames input frames with k active experts per frame. Matmul-dominated:
/// LN/activation/gating-projection costs are left out, so the estimate is
/// independent of the total expert count n.
int64_t estimate_flops(const ModelConfig& cfg, int64_t t_frames, int k);

/// Per-frame FLOPs of one expert FFN (the activated-expert increment).
int64_t expert_ffn_flops_per_frame(const ModelConfig& cfg);

/// MAC counter for the attention score/context products (streaming latency
/// accounting).
int64_t attn_mac_count();
void reset_attn_mac_count();

}  // namespace lgmoe

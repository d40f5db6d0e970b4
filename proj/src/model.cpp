#include "lgmoe/model.hpp"

#include <algorithm>
#include <cmath>

namespace lgmoe {

namespace {

int64_t g_attn_mac = 0;

Tensor xavier(std::vector<int> shape, Rng& rng) {
  LGMOE_CHECK(shape.size() == 2, "xavier init expects a matrix");
  double a = std::sqrt(6.0 / (shape[0] + shape[1]));
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-a, a);
  return t;
}

Tensor conv_init(int d, int kernel, Rng& rng) {
  double a = std::sqrt(1.0 / kernel);
  Tensor t({d, kernel});
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-a, a);
  return t;
}

}  // namespace

int64_t attn_mac_count() { return g_attn_mac; }
void reset_attn_mac_count() { g_attn_mac = 0; }

void ModelConfig::validate() const {
  LGMOE_CHECK(d_in >= 1 && d_model >= 1 && d_ffn >= 1, "config: dimensions must be positive");
  LGMOE_CHECK(n_heads >= 1 && d_model % n_heads == 0,
              "config: d_model " << d_model << " not divisible by n_heads " << n_heads);
  LGMOE_CHECK(n_vanilla_layers >= 1 && n_moe_layers >= 1,
              "config: need at least one vanilla and one MoE layer");
  LGMOE_CHECK(n_languages >= 1, "config: n_languages must be >= 1");
  LGMOE_CHECK(experts_per_group >= 1, "config: experts_per_group must be >= 1");
  k_policy.validate(experts_per_group);
  LGMOE_CHECK(vocab_size > n_languages,
              "config: vocab_size " << vocab_size << " must exceed n_languages " << n_languages);
  LGMOE_CHECK(lambda_ctc >= 0.0 && lambda_ctc <= 1.0,
              "config: lambda_ctc must be in [0,1], got " << lambda_ctc);
  LGMOE_CHECK(lambda_inter >= 0.0, "config: lambda_inter must be >= 0");
  LGMOE_CHECK(conv_kernel >= 1, "config: conv_kernel must be >= 1");
  LGMOE_CHECK(decoder_layers >= 1, "config: decoder_layers must be >= 1");
  LGMOE_CHECK(train_chunk_frames >= 1, "config: train_chunk_frames must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["d_in"] = d_in;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["d_ffn"] = d_ffn;
  j["n_vanilla_layers"] = n_vanilla_layers;
  j["n_moe_layers"] = n_moe_layers;
  j["n_languages"] = n_languages;
  j["experts_per_group"] = experts_per_group;
  if (k_policy.mode == KPolicy::Mode::kFixed) {
    j["k_policy"] = {{"mode", "fixed"}, {"k", k_policy.k}};
  } else {
    j["k_policy"] = {{"mode", "dynamic"}, {"k_min", k_policy.k_min}, {"k_max", k_policy.k_max}};
  }
  j["vocab_size"] = vocab_size;
  j["lambda_ctc"] = lambda_ctc;
  j["lambda_inter"] = lambda_inter;
  j["causal"] = causal;
  j["train_chunk_frames"] = train_chunk_frames;
  j["conv_kernel"] = conv_kernel;
  j["decoder_layers"] = decoder_layers;
  j["ffn_activation"] = ffn_activation == Act::kSwish ? "swish" : "relu";
  j["route_from"] = route_from == RouteFrom::kLayerInput ? "layer_input" : "h_inter";
  j["uniform_gates"] = uniform_gates;
  j["subsample_frontend"] = subsample_frontend;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_in = j.value("d_in", c.d_in);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.n_vanilla_layers = j.value("n_vanilla_layers", c.n_vanilla_layers);
  c.n_moe_layers = j.value("n_moe_layers", c.n_moe_layers);
  c.n_languages = j.value("n_languages", c.n_languages);
  c.experts_per_group = j.value("experts_per_group", c.experts_per_group);
  if (j.contains("k_policy")) {
    const auto& kp = j.at("k_policy");
    std::string mode = kp.value("mode", "fixed");
    if (mode == "fixed") {
      c.k_policy = KPolicy::fixed(kp.value("k", 1));
    } else if (mode == "dynamic") {
      c.k_policy = KPolicy::dynamic(kp.value("k_min", 1), kp.value("k_max", 1));
    } else {
      LGMOE_CHECK(false, "config: unknown k_policy mode " << mode);
    }
  }
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.lambda_ctc = j.value("lambda_ctc", c.lambda_ctc);
  c.lambda_inter = j.value("lambda_inter", c.lambda_inter);
  c.causal = j.value("causal", c.causal);
  c.train_chunk_frames = j.value("train_chunk_frames", c.train_chunk_frames);
  c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  std::string act = j.value("ffn_activation", "swish");
  LGMOE_CHECK(act == "swish" || act == "relu", "config: unknown ffn_activation " << act);
  c.ffn_activation = act == "swish" ? Act::kSwish : Act::kRelu;
  std::string rf = j.value("route_from", "layer_input");
  LGMOE_CHECK(rf == "layer_input" || rf == "h_inter", "config: unknown route_from " << rf);
  c.route_from = rf == "layer_input" ? RouteFrom::kLayerInput : RouteFrom::kHInter;
  c.uniform_gates = j.value("uniform_gates", c.uniform_gates);
  c.subsample_frontend = j.value("subsample_frontend", c.subsample_frontend);
  c.validate();
  return c;
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.d_in = 80;
  c.d_model = 256;
  c.n_heads = 4;
  c.d_ffn = 2048;
  c.n_vanilla_layers = 6;
  c.n_moe_layers = 6;
  c.n_languages = 2;
  c.experts_per_group = 2;
  c.k_policy = KPolicy::dynamic(1, 2);
  c.vocab_size = 5500;
  c.lambda_ctc = 0.3;
  c.lambda_inter = 0.1;
  c.causal = true;
  c.train_chunk_frames = 16;
  c.conv_kernel = 15;
  c.decoder_layers = 6;
  c.subsample_frontend = true;
  return c;
}

Model::Model(ModelConfig config, uint64_t seed) : cfg(std::move(config)) {
  cfg.validate();
  LGMOE_CHECK(!cfg.subsample_frontend,
              "subsample_frontend is an accounting flag; runtime models take frame-rate "
              "features through the input projection");
  Rng rng(seed);
  const int d = cfg.d_model, f = cfg.d_ffn, dh_ = dh();

  auto add_ln = [&](const std::string& prefix) {
    LnParams ln;
    ln.gamma = params.add(prefix + ".g", Tensor::full({d}, 1.0));
    ln.beta = params.add(prefix + ".b", Tensor::zeros({d}));
    return ln;
  };
  auto add_ffn = [&](const std::string& prefix) {
    FfnParams ffn;
    ffn.w1 = params.add(prefix + ".w1", xavier({d, f}, rng));
    ffn.b1 = params.add(prefix + ".b1", Tensor::zeros({f}));
    ffn.w2 = params.add(prefix + ".w2", xavier({f, d}, rng));
    ffn.b2 = params.add(prefix + ".b2", Tensor::zeros({d}));
    return ffn;
  };
  auto add_attn = [&](const std::string& prefix) {
    AttnParams ap;
    for (int h = 0; h < cfg.n_heads; ++h) {
      std::string hp = prefix + ".h" + std::to_string(h);
      AttnHead head;
      head.wq = params.add(hp + ".wq", xavier({d, dh_}, rng));
      head.wk = params.add(hp + ".wk", xavier({d, dh_}, rng));
      head.wv = params.add(hp + ".wv", xavier({d, dh_}, rng));
      head.wo = params.add(hp + ".wo", xavier({dh_, d}, rng));
      ap.heads.push_back(head);
    }
    ap.bo = params.add(prefix + ".bo", Tensor::zeros({d}));
    return ap;
  };

  in_w = params.add("in.w", xavier({cfg.d_in, d}, rng));
  in_b = params.add("in.b", Tensor::zeros({d}));

  int n_layers = cfg.n_vanilla_layers + cfg.n_moe_layers;
  for (int i = 0; i < n_layers; ++i) {
    std::string lp = "enc." + std::to_string(i);
    EncLayer layer;
    layer.is_moe = i >= cfg.n_vanilla_layers;
    layer.ln_ffn1 = add_ln(lp + ".ln_ffn1");
    layer.ffn1 = add_ffn(lp + ".ffn1");
    layer.ln_attn = add_ln(lp + ".ln_attn");
    layer.attn = add_attn(lp + ".attn");
    layer.ln_conv = add_ln(lp + ".ln_conv");
    layer.conv_w = params.add(lp + ".conv.w", conv_init(d, cfg.conv_kernel, rng));
    layer.conv_b = params.add(lp + ".conv.b", Tensor::zeros({d}));
    layer.ln_ffn2 = add_ln(lp + ".ln_ffn2");
    if (!layer.is_moe) {
      layer.ffn2 = add_ffn(lp + ".ffn2");
    } else {
      for (int l = 0; l < cfg.n_languages; ++l) {
        ExpertGroup grp;
        grp.language = l;
        std::string gp = lp + ".g" + std::to_string(l);
        for (int e = 0; e < cfg.experts_per_group; ++e) {
          ExpertFfn ex;
          std::string ep = gp + ".e" + std::to_string(e);
          ex.w1 = params.add(ep + ".w1", xavier({d, f}, rng));
          ex.b1 = params.add(ep + ".b1", Tensor::zeros({f}));
          ex.w2 = params.add(ep + ".w2", xavier({f, d}, rng));
          ex.b2 = params.add(ep + ".b2", Tensor::zeros({d}));
          grp.experts.push_back(ex);
        }
        grp.router_w = params.add(gp + ".router", xavier({d, cfg.experts_per_group}, rng));
        layer.groups.push_back(std::move(grp));
      }
    }
    layer.ln_out = add_ln(lp + ".ln_out");
    enc.push_back(std::move(layer));
  }

  slr_w_lid = params.add("slr.w_lid", xavier({d, cfg.n_languages + 1}, rng));
  slr_w_asr = params.add("slr.w_asr", xavier({d, cfg.vocab_size}, rng));
  head_w = params.add("head.w", xavier({d, cfg.vocab_size}, rng));
  head_b = params.add("head.b", Tensor::zeros({cfg.vocab_size}));

  dec_emb = params.add("dec.emb", xavier({dec_vocab(), d}, rng));
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    std::string lp = "dec." + std::to_string(i);
    DecLayer layer;
    layer.ln_self = add_ln(lp + ".ln_self");
    layer.self_attn = add_attn(lp + ".self");
    layer.ln_cross = add_ln(lp + ".ln_cross");
    layer.cross_attn = add_attn(lp + ".cross");
    layer.ln_ffn = add_ln(lp + ".ln_ffn");
    layer.ffn = add_ffn(lp + ".ffn");
    dec.push_back(std::move(layer));
  }
  dec_ln_out = add_ln("dec.ln_out");
  dec_out_w = params.add("dec.out.w", xavier({d, dec_vocab()}, rng));
  dec_out_b = params.add("dec.out.b", Tensor::zeros({dec_vocab()}));
}

Tensor Model::posenc(int64_t offset, int len) const {
  const int d = cfg.d_model;
  Tensor pe({len, d});
  for (int t = 0; t < len; ++t) {
    double pos = static_cast<double>(offset + t);
    for (int i = 0; i < d; i += 2) {
      double div = std::exp(-std::log(10000.0) * i / d);
      pe.at(t, i) = std::sin(pos * div);
      if (i + 1 < d) pe.at(t, i + 1) = std::cos(pos * div);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// forward building blocks

namespace {

Var ln_fwd(ParamBinding& bind, Var x, const LnParams& p) {
  return layer_norm(x, bind(p.gamma), bind(p.beta));
}

Var ffn_fwd(ParamBinding& bind, Var x, const FfnParams& p, Act act) {
  Var h = activation(add_bias(matmul(x, bind(p.w1)), bind(p.b1)), act);
  return add_bias(matmul(h, bind(p.w2)), bind(p.b2));
}

Var attn_masked(ParamBinding& bind, Var x_ln, const AttnParams& ap, const BoolMatrix& mask,
                int dh) {
  const Tensor& xv = x_ln.tape->value(x_ln);
  int frames = xv.dim(0);
  LGMOE_CHECK(mask.rows == frames && mask.cols == frames,
              "attention: mask " << mask.rows << "x" << mask.cols << " does not match T="
                                 << frames);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var out;
  for (size_t h = 0; h < ap.heads.size(); ++h) {
    const AttnHead& hd = ap.heads[h];
    Var q = matmul(x_ln, bind(hd.wq));
    Var k = matmul(x_ln, bind(hd.wk));
    Var v = matmul(x_ln, bind(hd.wv));
    Var scores = scale(matmul_nt(q, k), inv_sqrt);
    Var probs = masked_softmax_rows(scores, mask);
    Var ctxv = matmul(probs, v);
    g_attn_mac += 2LL * frames * frames * dh;
    Var contrib = matmul(ctxv, bind(hd.wo));
    out = (h == 0) ? contrib : add(out, contrib);
  }
  return add_bias(out, bind(ap.bo));
}

Var attn_cached(ParamBinding& bind, Var x_ln, const AttnParams& ap, LayerCache& cache,
                int dh) {
  Tape& tape = bind.tape();
  const Tensor& xv = x_ln.tape->value(x_ln);
  int chunk = xv.dim(0);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  if (cache.k_cache.size() != ap.heads.size()) {
    cache.k_cache.assign(ap.heads.size(), Tensor{});
    cache.v_cache.assign(ap.heads.size(), Tensor{});
  }
  Var out;
  for (size_t h = 0; h < ap.heads.size(); ++h) {
    const AttnHead& hd = ap.heads[h];
    Var q = matmul(x_ln, bind(hd.wq));
    Var k_new = matmul(x_ln, bind(hd.wk));
    Var v_new = matmul(x_ln, bind(hd.wv));
    Var k_all = k_new, v_all = v_new;
    if (cache.k_cache[h].numel() > 0) {
      k_all = concat_rows({tape.constant(cache.k_cache[h]), k_new});
      v_all = concat_rows({tape.constant(cache.v_cache[h]), v_new});
    }
    int total = tape.value(k_all).dim(0);
    Var scores = scale(matmul_nt(q, k_all), inv_sqrt);
    Var probs = softmax(scores, 1);  // everything cached is visible
    Var ctxv = matmul(probs, v_all);
    g_attn_mac += 2LL * chunk * total * dh;
    Var contrib = matmul(ctxv, bind(hd.wo));
    out = (h == 0) ? contrib : add(out, contrib);
    cache.k_cache[h] = tape.value(k_all);
    cache.v_cache[h] = tape.value(v_all);
  }
  return add_bias(out, bind(ap.bo));
}

Var conv_branch(ParamBinding& bind, Var x_ln, const EncLayer& layer, int conv_kernel,
                Tensor* conv_tail) {
  Tape& tape = bind.tape();
  Var input = x_ln;
  int lead = 0;
  if (conv_tail != nullptr && conv_tail->numel() > 0) {
    lead = conv_tail->dim(0);
    input = concat_rows({tape.constant(*conv_tail), x_ln});
  }
  Var y = dwconv_causal(input, bind(layer.conv_w), bind(layer.conv_b));
  if (lead > 0) y = slice_rows(y, lead, lead + tape.value(x_ln).dim(0));
  if (conv_tail != nullptr) {
    // keep the last kernel-1 input rows for the next chunk
    const Tensor& in_v = tape.value(input);
    int keep = std::min(conv_kernel - 1, in_v.dim(0));
    Tensor tail({keep, in_v.dim(1)});
    for (int r = 0; r < keep; ++r)
      for (int c = 0; c < in_v.dim(1); ++c)
        tail.at(r, c) = in_v.at(in_v.dim(0) - keep + r, c);
    *conv_tail = std::move(tail);
  }
  return swish(y);
}

}  // namespace

Var encoder_layer_apply(ForwardCtx& ctx, Var x, const EncLayer& layer, int layer_idx,
                        const BoolMatrix* mask, LayerCache* cache, Var h_inter,
                        std::vector<RoutingTable>* tables) {
  Model& m = *ctx.model;
  ParamBinding& bind = ctx.bind;
  Act act = m.cfg.ffn_activation;
  Var x_entry = x;

  x = add(x, scale(ffn_fwd(bind, ln_fwd(bind, x, layer.ln_ffn1), layer.ffn1, act), 0.5));
  Var attn = cache ? attn_cached(bind, ln_fwd(bind, x, layer.ln_attn), layer.attn, *cache,
                                 m.dh())
                   : attn_masked(bind, ln_fwd(bind, x, layer.ln_attn), layer.attn, *mask,
                                 m.dh());
  x = add(x, attn);
  x = add(x, conv_branch(bind, ln_fwd(bind, x, layer.ln_conv), layer, m.cfg.conv_kernel,
                         cache ? &cache->conv_tail : nullptr));

  if (!layer.is_moe) {
    x = add(x, scale(ffn_fwd(bind, ln_fwd(bind, x, layer.ln_ffn2), layer.ffn2, act), 0.5));
  } else {
    Var h_pre = ln_fwd(bind, x, layer.ln_ffn2);
    int frames = bind.tape().value(h_pre).dim(0);
    RoutingTable table;
    if (ctx.override_lang.has_value()) {
      table = override_routing_table(frames, *ctx.override_lang, m.cfg.n_languages);
    } else {
      const Tensor& src = m.cfg.route_from == RouteFrom::kLayerInput
                              ? bind.tape().value(x_entry)
                              : bind.tape().value(h_inter);
      table = make_routing_table(src, m.params.at(m.slr_w_lid).value, m.cfg.n_languages);
    }
    DispatchPlan plan = make_dispatch_plan(table, m.cfg.n_languages);
    std::vector<Var> outs;
    for (int l = 0; l < m.cfg.n_languages; ++l) {
      Var sub = dispatch(h_pre, plan, l);
      GroupStats stats;
      GroupStats* sp = ctx.stats ? &stats : nullptr;
      const ExpertGroup& grp = layer.groups[static_cast<size_t>(l)];
      Var y = m.cfg.uniform_gates
                  ? group_forward_uniform(bind, sub, grp, ctx.k, act, sp)
                  : group_forward(bind, sub, grp, ctx.k, act, sp);
      if (sp) {
        sp->layer = layer_idx;
        ctx.stats->push_back(*sp);
      }
      outs.push_back(y);
    }
    Var moe_out = combine(outs, plan);
    x = add(x, scale(moe_out, 0.5));
    if (tables) tables->push_back(std::move(table));
  }
  return ln_fwd(bind, x, layer.ln_out);
}

EncoderOutput encoder_forward(ForwardCtx& ctx, const Tensor& feats, const BoolMatrix& mask) {
  Model& m = *ctx.model;
  LGMOE_CHECK(feats.rank() == 2 && feats.dim(1) == m.cfg.d_in,
              "encoder: features " << feats.shape_str() << " do not match d_in=" << m.cfg.d_in);
  int frames = feats.dim(0);
  LGMOE_CHECK(frames >= 1, "encoder: empty feature sequence");
  Tape& tape = ctx.bind.tape();

  Var x = add_bias(matmul(tape.constant(feats), ctx.bind(m.in_w)), ctx.bind(m.in_b));
  x = add(x, tape.constant(m.posenc(0, frames)));

  EncoderOutput out;
  for (int i = 0; i < m.cfg.n_vanilla_layers; ++i)
    x = encoder_layer_apply(ctx, x, m.enc[static_cast<size_t>(i)], i, &mask, nullptr, Var{},
                            nullptr);
  out.h_inter = x;
  for (int i = m.cfg.n_vanilla_layers; i < static_cast<int>(m.enc.size()); ++i)
    x = encoder_layer_apply(ctx, x, m.enc[static_cast<size_t>(i)], i, &mask, nullptr,
                            out.h_inter, &out.tables);
  out.h_final = x;
  return out;
}

EncoderOutput encoder_forward_full(ForwardCtx& ctx, const Tensor& feats) {
  return encoder_forward(ctx, feats, full_mask(feats.dim(0)));
}

Var asr_head_log_probs(ForwardCtx& ctx, Var h_final) {
  Model& m = *ctx.model;
  return log_softmax(add_bias(matmul(h_final, ctx.bind(m.head_w)), ctx.bind(m.head_b)), 1);
}

Var decoder_logits(ForwardCtx& ctx, Var h_final, const std::vector<int>& input_ids) {
  Model& m = *ctx.model;
  ParamBinding& bind = ctx.bind;
  Tape& tape = bind.tape();
  LGMOE_CHECK(!input_ids.empty(), "decoder: empty input sequence");
  for (int id : input_ids)
    LGMOE_CHECK(id >= 0 && id < m.dec_vocab(),
                "decoder: input id " << id << " out of range [0," << m.dec_vocab() << ")");

  int steps = static_cast<int>(input_ids.size());
  Var x = gather_rows(bind(m.dec_emb), input_ids);
  x = add(x, tape.constant(m.posenc(0, steps)));
  BoolMatrix causal = chunk_mask(steps, 1);
  Act act = m.cfg.ffn_activation;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(m.dh()));

  for (const DecLayer& layer : m.dec) {
    x = add(x, attn_masked(bind, ln_fwd(bind, x, layer.ln_self), layer.self_attn, causal,
                           m.dh()));
    // cross attention over the encoder memory
    Var q_in = ln_fwd(bind, x, layer.ln_cross);
    Var out;
    for (size_t h = 0; h < layer.cross_attn.heads.size(); ++h) {
      const AttnHead& hd = layer.cross_attn.heads[h];
      Var q = matmul(q_in, bind(hd.wq));
      Var k = matmul(h_final, bind(hd.wk));
      Var v = matmul(h_final, bind(hd.wv));
      Var probs = softmax(scale(matmul_nt(q, k), inv_sqrt), 1);
      Var contrib = matmul(matmul(probs, v), bind(hd.wo));
      out = (h == 0) ? contrib : add(out, contrib);
    }
    x = add(x, add_bias(out, bind(layer.cross_attn.bo)));
    x = add(x, ffn_fwd(bind, ln_fwd(bind, x, layer.ln_ffn), layer.ffn, act));
  }
  x = ln_fwd(bind, x, m.dec_ln_out);
  return add_bias(matmul(x, bind(m.dec_out_w)), bind(m.dec_out_b));
}

Var decoder_loss(ForwardCtx& ctx, Var h_final, const CtcLabelSeq& y_asr) {
  Model& m = *ctx.model;
  LGMOE_CHECK(y_asr.length() >= 1, "decoder: empty label sequence");
  for (int tok : y_asr.labels)
    LGMOE_CHECK(tok >= 1 && tok < m.cfg.vocab_size,
                "decoder: label " << tok << " out of vocab [1," << m.cfg.vocab_size << ")");

  std::vector<int> input_ids{m.sos()};
  input_ids.insert(input_ids.end(), y_asr.labels.begin(), y_asr.labels.end());
  std::vector<std::vector<int>> targets;
  for (int tok : y_asr.labels) targets.push_back({tok});
  targets.push_back({m.eos()});

  int steps = static_cast<int>(input_ids.size());
  Var logits = decoder_logits(ctx, h_final, input_ids);
  Var picked = gather_cols(log_softmax(logits, 1), targets);
  return scale(sum(picked), -1.0 / steps);
}

LossBreakdown total_loss(ForwardCtx& ctx, const EncoderOutput& enc, const CtcLabelSeq& y_asr,
                         const CtcLabelSeq& y_lid) {
  Model& m = *ctx.model;
  Tape& tape = ctx.bind.tape();

  CtcLoss ctc = ctc_loss(asr_head_log_probs(ctx, enc.h_final), y_asr);
  Var att = decoder_loss(ctx, enc.h_final, y_asr);
  InterLoss inter = inter_loss(enc.h_inter, y_asr, y_lid, ctx.bind(m.slr_w_lid),
                               ctx.bind(m.slr_w_asr));

  Var total = add(add(scale(ctc.loss, m.cfg.lambda_ctc), scale(att, 1.0 - m.cfg.lambda_ctc)),
                  scale(inter.loss, m.cfg.lambda_inter));
  LossBreakdown out;
  out.total = total;
  out.ctc = tape.value(ctc.loss).item();
  out.att = tape.value(att).item();
  out.inter = tape.value(inter.loss).item();
  out.feasible = ctc.feasible && inter.lid_feasible && inter.asr_feasible;
  return out;
}

// ---------------------------------------------------------------------------
// accounting

namespace {

int64_t ln_count(const ModelConfig& c) { return 2LL * c.d_model; }

int64_t ffn_count(const ModelConfig& c) {
  return static_cast<int64_t>(c.d_model) * c.d_ffn + c.d_ffn +
         static_cast<int64_t>(c.d_ffn) * c.d_model + c.d_model;
}

int64_t attn_count(const ModelConfig& c) {
  return 4LL * c.d_model * c.d_model + c.d_model;
}

}  // namespace

ParamCounts count_params(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.d_model, v = cfg.vocab_size;
  const int64_t lang = cfg.n_languages, n = cfg.experts_per_group;

  int64_t frontend;
  if (cfg.subsample_frontend) {
    // two stride-2 3x3 conv layers then a linear projection
    frontend = 9 * d + d + 9 * d * d + d + (d * (cfg.d_in / 4)) * d + d;
  } else {
    frontend = static_cast<int64_t>(cfg.d_in) * d + d;
  }

  int64_t per_expert = ffn_count(cfg);
  int64_t layer_common = 5 * ln_count(cfg) + ffn_count(cfg) + attn_count(cfg) +
                         d * cfg.conv_kernel + d;
  int64_t vanilla = layer_common + ffn_count(cfg);
  int64_t moe = layer_common + lang * (n * per_expert + d * n);

  int64_t slr = d * (lang + 1) + d * v;
  int64_t head = d * v + v;

  int64_t dec_vocab = v + 2;
  int64_t dec_layer = 3 * ln_count(cfg) + 2 * attn_count(cfg) + ffn_count(cfg);
  int64_t decoder = dec_vocab * d + cfg.decoder_layers * dec_layer + ln_count(cfg) +
                    d * dec_vocab + dec_vocab;

  ParamCounts out;
  out.per_expert = per_expert;
  out.total = frontend + cfg.n_vanilla_layers * vanilla + cfg.n_moe_layers * moe + slr + head +
              decoder;
  for (int k = 1; k <= n; ++k) {
    int64_t inactive = (lang * n - k) * per_expert * cfg.n_moe_layers;
    out.activated.push_back(out.total - inactive);
  }
  return out;
}

int64_t expert_ffn_flops_per_frame(const ModelConfig& cfg) {
  return 2LL * cfg.d_model * cfg.d_ffn * 2;
}

int64_t estimate_flops(const ModelConfig& cfg, int64_t t_frames, int k) {
  cfg.validate();
  LGMOE_CHECK(t_frames >= 1, "estimate_flops: t_frames must be >= 1");
  LGMOE_CHECK(k >= 1 && k <= cfg.experts_per_group,
              "estimate_flops: k=" << k << " outside [1," << cfg.experts_per_group << "]");
  const int64_t d = cfg.d_model, f = cfg.d_ffn;

  int64_t t = t_frames;
  int64_t frontend;
  if (cfg.subsample_frontend) {
    int64_t t2 = t_frames / 2, din2 = cfg.d_in / 2;
    int64_t t4 = t_frames / 4, din4 = cfg.d_in / 4;
    frontend = 2 * 9 * d * t2 * din2          // conv1: 1 -> d channels
               + 2 * 9 * d * d * t4 * din4    // conv2: d -> d channels
               + 2 * t4 * (d * din4) * d;     // flatten projection
    t = t4;
  } else {
    frontend = 2 * t * cfg.d_in * d;
  }

  int64_t ffn = 2 * t * d * f * 2;
  int64_t attn = 2 * 4 * t * d * d + 2 * 2 * t * t * d;
  int64_t conv = 2 * t * d * cfg.conv_kernel;
  int64_t layer_common = ffn + attn + conv;

  int64_t lid_head = 2 * t * d * (cfg.n_languages + 1);  // per-MoE-layer routing
  int64_t vanilla = layer_common + ffn;
  int64_t moe = layer_common + k * expert_ffn_flops_per_frame(cfg) * t + lid_head;
  int64_t asr_head = 2 * t * d * cfg.vocab_size;

  return frontend + cfg.n_vanilla_layers * vanilla + cfg.n_moe_layers * moe + asr_head;
}

}  // namespace lgmoe

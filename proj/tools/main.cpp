// lgmoe command line: synthetic data generation, training, evaluation,
// streaming decode, routing visualization, and params/FLOPs reporting.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lgmoe/checkpoint.hpp"
#include "lgmoe/data.hpp"
#include "lgmoe/eval.hpp"
#include "lgmoe/kernels.hpp"
#include "lgmoe/model.hpp"
#include "lgmoe/streaming.hpp"
#include "lgmoe/train.hpp"
#include "lgmoe/viz.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  LGMOE_CHECK(in.good(), "cannot open " << path);
  json j;
  in >> j;
  return j;
}

int parse_lang(const std::string& s, int n_languages) {
  int lang = -1;
  if (s == "zh") {
    lang = 0;
  } else if (s == "en") {
    lang = 1;
  } else {
    try {
      lang = std::stoi(s);
    } catch (...) {
      LGMOE_CHECK(false, "unknown language '" << s << "' (use zh, en, or an index)");
    }
  }
  LGMOE_CHECK(lang >= 0 && lang < n_languages,
              "language " << s << " out of range [0," << n_languages << ")");
  return lang;
}

// model dims must agree with the dataset; fill them in when the config
// leaves them out
lgmoe::ModelConfig model_config_for_data(json model_json, const lgmoe::SynthSpec& spec) {
  auto reconcile = [&](const char* key, int want) {
    if (model_json.contains(key)) {
      int got = model_json.at(key).get<int>();
      LGMOE_CHECK(got == want,
                  "model config " << key << "=" << got << " does not match dataset (" << want
                                  << ")");
    } else {
      model_json[key] = want;
    }
  };
  reconcile("d_in", spec.d_in);
  reconcile("vocab_size", spec.vocab_size());
  reconcile("n_languages", spec.n_languages());
  return lgmoe::ModelConfig::from_json(model_json);
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
  lgmoe::SynthSpec spec = lgmoe::SynthSpec::from_json(load_json_file(spec_path));
  lgmoe::Dataset ds = lgmoe::generate(spec);
  lgmoe::save_dataset(ds, out_dir);
  std::cout << "wrote " << ds.utts.size() << " utterances to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  json cfg_json = load_json_file(config_path);
  lgmoe::Dataset ds = lgmoe::load_dataset(data_dir);
  lgmoe::ModelConfig mc = model_config_for_data(cfg_json.value("model", json::object()), ds.spec);
  lgmoe::TrainConfig tc = lgmoe::TrainConfig::from_json(cfg_json.value("train", json::object()));
  uint64_t model_seed = cfg_json.value("model_seed", 1234ULL);

  lgmoe::Model model(mc, model_seed);
  lgmoe::TrainResult result = lgmoe::train(model, ds, tc, out_dir);
  std::cout << "trained " << result.steps << " steps, loss " << result.first_loss << " -> "
            << result.final_loss << "\ncheckpoint: " << result.ckpt_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, int k,
             const std::string& lang, bool force, const std::string& dump_routing) {
  lgmoe::Model model = lgmoe::load_checkpoint(ckpt_path);
  lgmoe::Dataset ds = lgmoe::load_dataset(data_dir);
  lgmoe::EvalOptions opts;
  opts.k = k;
  opts.force_k = force;
  opts.dump_routing_path = dump_routing;
  if (!lang.empty()) opts.override_lang = parse_lang(lang, model.cfg.n_languages);
  lgmoe::EvalReport report = lgmoe::evaluate(model, ds, opts);
  std::cout << report.to_json().dump(2) << "\n";
  return 0;
}

int cmd_stream(const std::string& ckpt_path, const std::string& input_path, int chunk_frames,
               int k, const std::string& lang) {
  LGMOE_CHECK(chunk_frames >= 1, "chunk-frames must be >= 1");
  lgmoe::Model model = lgmoe::load_checkpoint(ckpt_path);
  std::optional<int> override_lang;
  if (!lang.empty()) override_lang = parse_lang(lang, model.cfg.n_languages);

  std::ifstream in(input_path, std::ios::binary);
  LGMOE_CHECK(in.good(), "cannot open " << input_path);
  in.seekg(0, std::ios::end);
  auto bytes = static_cast<int64_t>(in.tellg());
  in.seekg(0);
  int64_t frame_bytes = static_cast<int64_t>(sizeof(double)) * model.cfg.d_in;
  LGMOE_CHECK(bytes % frame_bytes == 0,
              input_path << " is not a whole number of " << model.cfg.d_in
                         << "-dim f64 frames");
  int64_t total_frames = bytes / frame_bytes;
  LGMOE_CHECK(total_frames >= 1, input_path << " contains no frames");

  lgmoe::ChunkState state = lgmoe::init_stream(model);
  int chunk_idx = 0;
  while (state.frames_consumed < total_frames) {
    int c = static_cast<int>(
        std::min<int64_t>(chunk_frames, total_frames - state.frames_consumed));
    lgmoe::Tensor chunk({c, model.cfg.d_in});
    in.read(reinterpret_cast<char*>(chunk.data()),
            static_cast<std::streamsize>(sizeof(double) * chunk.numel()));
    LGMOE_CHECK(in.good(), "short read on " << input_path);
    lgmoe::StreamStep step = lgmoe::stream_step(model, state, chunk, k, override_lang);
    json line;
    line["chunk_idx"] = chunk_idx++;
    line["partial_hyp"] = step.partial_hyp;
    line["lang_ids"] = step.chunk_tables.front().lang_ids;
    std::cout << line.dump() << "\n";
  }
  return 0;
}

int cmd_route_viz(const std::string& ckpt_path, const std::string& data_dir,
                  const std::string& utt_id, int k, const std::string& out_path) {
  lgmoe::Model model = lgmoe::load_checkpoint(ckpt_path);
  lgmoe::Dataset ds = lgmoe::load_dataset(data_dir);
  for (const lgmoe::Utterance& utt : ds.utts) {
    if (utt.utt_id == utt_id) {
      lgmoe::route_viz(model, utt, k, out_path);
      std::cout << lgmoe::route_ascii(model, utt, k);
      std::cout << "wrote " << out_path << "\n";
      return 0;
    }
  }
  LGMOE_CHECK(false, "utterance " << utt_id << " not found in " << data_dir);
  return 1;
}

int cmd_report(const std::string& config_path, bool full_scale, int64_t frames) {
  lgmoe::ModelConfig cfg = full_scale
                               ? lgmoe::ModelConfig::full_scale()
                               : lgmoe::ModelConfig::from_json(load_json_file(config_path));
  lgmoe::ParamCounts counts = lgmoe::count_params(cfg);

  std::printf("%-22s %15s\n", "quantity", "value");
  std::printf("%-22s %15lld\n", "total params", static_cast<long long>(counts.total));
  json j;
  j["total_params"] = counts.total;
  j["per_expert_params"] = counts.per_expert;
  j["t_frames"] = frames;
  json act = json::object(), fl = json::object();
  for (int k = 1; k <= cfg.experts_per_group; ++k) {
    int64_t a = counts.activated[static_cast<size_t>(k - 1)];
    int64_t f = lgmoe::estimate_flops(cfg, frames, k);
    std::printf("%-22s %15lld\n", ("activated(k=" + std::to_string(k) + ")").c_str(),
                static_cast<long long>(a));
    std::printf("%-22s %15lld\n", ("flops(k=" + std::to_string(k) + ")").c_str(),
                static_cast<long long>(f));
    act[std::to_string(k)] = a;
    fl[std::to_string(k)] = f;
  }
  j["activated"] = act;
  j["flops"] = fl;
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"language-group mixture-of-experts toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, data_dir, ckpt_path, lang, utt_id;
  std::string input_path, out_path, dump_routing;
  int k = 1, chunk_frames = 16;
  int64_t frames = 2000;
  bool force = false, full_scale = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic bilingual dataset");
  gen->add_option("--spec", spec_path, "SynthSpec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "JSON with model/train sections")->required();
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--k", k, "experts per frame");
  ev->add_option("--lang", lang, "route every frame to this language (zh/en/index)");
  ev->add_flag("--force", force, "allow k outside the trained policy bounds");
  ev->add_option("--dump-routing", dump_routing, "write routing tables JSONL here");

  auto* st = app.add_subcommand("stream", "chunked streaming decode of raw f64 frames");
  st->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  st->add_option("--input", input_path, "raw little-endian f64 frames (T x d_in)")->required();
  st->add_option("--chunk-frames", chunk_frames, "frames per chunk");
  st->add_option("--k", k, "experts per frame");
  st->add_option("--lang", lang, "route every frame to this language");

  auto* rv = app.add_subcommand("route-viz", "render routing vs truth as a color strip");
  rv->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  rv->add_option("--data", data_dir, "dataset directory")->required();
  rv->add_option("--utt", utt_id, "utterance id")->required();
  rv->add_option("--k", k, "experts per frame");
  rv->add_option("--out", out_path, "output PPM path")->required();

  auto* rp = app.add_subcommand("report", "params and FLOPs accounting");
  rp->add_option("--config", config_path, "ModelConfig JSON");
  rp->add_flag("--full-scale", full_scale, "use the built-in full-size config");
  rp->add_option("--frames", frames, "input frames for the FLOPs estimate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, out_dir);
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_dir, k, lang, force, dump_routing);
    if (st->parsed()) return cmd_stream(ckpt_path, input_path, chunk_frames, k, lang);
    if (rv->parsed()) return cmd_route_viz(ckpt_path, data_dir, utt_id, k, out_path);
    if (rp->parsed()) {
      LGMOE_CHECK(full_scale || !config_path.empty(), "report: pass --config or --full-scale");
      return cmd_report(config_path, full_scale, frames);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

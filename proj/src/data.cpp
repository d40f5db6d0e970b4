#include "lgmoe/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace lgmoe {

namespace fs = std::filesystem;

void SynthSpec::validate() const {
  LGMOE_CHECK(n_utts >= 1, "synth spec: n_utts must be >= 1");
  LGMOE_CHECK(1 <= t_min && t_min <= t_max, "synth spec: bad t_range");
  LGMOE_CHECK(lang_vocab.size() >= 2, "synth spec: need at least two languages");
  LGMOE_CHECK(d_in > static_cast<int>(lang_vocab.size()),
              "synth spec: d_in must exceed n_languages (language marker dims)");
  for (int v : lang_vocab) LGMOE_CHECK(v >= 1, "synth spec: empty language vocabulary");
  LGMOE_CHECK(cs_ratio >= 0.0 && cs_ratio <= 1.0, "synth spec: cs_ratio outside [0,1]");
  LGMOE_CHECK(1 <= seg_tokens_min && seg_tokens_min <= seg_tokens_max,
              "synth spec: bad segment length range");
  LGMOE_CHECK(1 <= frames_per_token_min && frames_per_token_min <= frames_per_token_max,
              "synth spec: bad frames_per_token range");
  LGMOE_CHECK(noise_std >= 0.0, "synth spec: negative noise_std");
  LGMOE_CHECK(seg_tokens_min * frames_per_token_min <= t_max,
              "synth spec: impossible — one minimal segment ("
                  << seg_tokens_min * frames_per_token_min << " frames) exceeds t_max="
                  << t_max);
}

int SynthSpec::vocab_size() const {
  return 1 + std::accumulate(lang_vocab.begin(), lang_vocab.end(), 0);
}

std::pair<int, int> SynthSpec::lang_range(int lang) const {
  LGMOE_CHECK(lang >= 0 && lang < n_languages(), "lang_range: language out of range");
  int lo = 1;
  for (int l = 0; l < lang; ++l) lo += lang_vocab[static_cast<size_t>(l)];
  return {lo, lo + lang_vocab[static_cast<size_t>(lang)] - 1};
}

int SynthSpec::lang_of_token(int token) const {
  for (int l = 0; l < n_languages(); ++l) {
    auto [lo, hi] = lang_range(l);
    if (token >= lo && token <= hi) return l;
  }
  return -1;
}

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json j;
  j["n_utts"] = n_utts;
  j["t_min"] = t_min;
  j["t_max"] = t_max;
  j["d_in"] = d_in;
  j["lang_vocab"] = lang_vocab;
  j["cs_ratio"] = cs_ratio;
  j["seg_tokens_min"] = seg_tokens_min;
  j["seg_tokens_max"] = seg_tokens_max;
  j["frames_per_token_min"] = frames_per_token_min;
  j["frames_per_token_max"] = frames_per_token_max;
  j["noise_std"] = noise_std;
  j["lang_sep"] = lang_sep;
  j["seed"] = seed;
  j["template_seed"] = template_seed;
  return j;
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.n_utts = j.value("n_utts", s.n_utts);
  s.t_min = j.value("t_min", s.t_min);
  s.t_max = j.value("t_max", s.t_max);
  s.d_in = j.value("d_in", s.d_in);
  if (j.contains("lang_vocab")) s.lang_vocab = j.at("lang_vocab").get<std::vector<int>>();
  s.cs_ratio = j.value("cs_ratio", s.cs_ratio);
  s.seg_tokens_min = j.value("seg_tokens_min", s.seg_tokens_min);
  s.seg_tokens_max = j.value("seg_tokens_max", s.seg_tokens_max);
  s.frames_per_token_min = j.value("frames_per_token_min", s.frames_per_token_min);
  s.frames_per_token_max = j.value("frames_per_token_max", s.frames_per_token_max);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.lang_sep = j.value("lang_sep", s.lang_sep);
  s.seed = j.value("seed", s.seed);
  s.template_seed = j.value("template_seed", s.template_seed);
  s.validate();
  return s;
}

std::vector<int> lid_labels_from_asr(const std::vector<int>& y_asr, const SynthSpec& spec) {
  std::vector<int> out;
  out.reserve(y_asr.size());
  for (int tok : y_asr) {
    int lang = spec.lang_of_token(tok);
    LGMOE_CHECK(lang >= 0, "lid_labels_from_asr: token " << tok << " in no language range");
    out.push_back(lang);
  }
  return out;
}

CtcLabelSeq lid_ctc_labels(const std::vector<int>& y_lid) {
  std::vector<int> labels;
  labels.reserve(y_lid.size());
  for (int lang : y_lid) labels.push_back(lang + 1);
  return CtcLabelSeq(std::move(labels));
}

namespace {

// Token template bank, keyed only by template_seed and geometry. The first
// n_languages dimensions are reserved language markers (+sep on the own
// language's dim, -sep elsewhere), which keeps the languages linearly
// separable with a margin of 2*lang_sep no matter how the random token
// parts land.
std::vector<Tensor> build_templates(const SynthSpec& spec) {
  Rng rng(spec.template_seed);
  std::vector<Tensor> bank(static_cast<size_t>(spec.vocab_size()));
  for (int l = 0; l < spec.n_languages(); ++l) {
    auto [lo, hi] = spec.lang_range(l);
    for (int tok = lo; tok <= hi; ++tok) {
      Tensor t = Tensor::randn({spec.d_in}, rng);
      for (int j = 0; j < spec.n_languages(); ++j)
        t.at(j) = j == l ? spec.lang_sep : -spec.lang_sep;
      bank[static_cast<size_t>(tok)] = std::move(t);
    }
  }
  return bank;
}

}  // namespace

Dataset generate(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  std::vector<Tensor> bank = build_templates(spec);
  Rng rng(spec.seed);

  for (int u = 0; u < spec.n_utts; ++u) {
    bool code_switch = rng.bernoulli(spec.cs_ratio);
    int target_frames = rng.uniform_int(spec.t_min, spec.t_max);
    int lang = rng.uniform_int(0, spec.n_languages() - 1);

    Utterance utt;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "utt_%05d", u);
    utt.utt_id = buf;

    std::vector<std::pair<int, int>> token_frames;  // (token, frames)
    int frames = 0;
    bool full = false;
    while (frames < target_frames && !full) {
      int n_tok = rng.uniform_int(spec.seg_tokens_min, spec.seg_tokens_max);
      auto [lo, hi] = spec.lang_range(lang);
      for (int i = 0; i < n_tok; ++i) {
        int tok = rng.uniform_int(lo, hi);
        int fpt = rng.uniform_int(spec.frames_per_token_min, spec.frames_per_token_max);
        if (frames + fpt > spec.t_max) {
          full = true;
          break;
        }
        token_frames.emplace_back(tok, fpt);
        utt.y_asr.push_back(tok);
        frames += fpt;
      }
      if (code_switch) lang = (lang + 1) % spec.n_languages();
    }
    if (token_frames.empty()) {
      // minimal utterance: a single shortest token
      auto [lo, hi] = spec.lang_range(lang);
      int tok = rng.uniform_int(lo, hi);
      token_frames.emplace_back(tok, spec.frames_per_token_min);
      utt.y_asr.push_back(tok);
      frames = spec.frames_per_token_min;
    }

    utt.feats = Tensor({frames, spec.d_in});
    int fr = 0;
    for (auto [tok, fpt] : token_frames) {
      int tok_lang = spec.lang_of_token(tok);
      const Tensor& tmpl = bank[static_cast<size_t>(tok)];
      for (int i = 0; i < fpt; ++i, ++fr) {
        for (int c = 0; c < spec.d_in; ++c)
          utt.feats.at(fr, c) = tmpl.at(c) + spec.noise_std * rng.normal();
        utt.true_frame_lang.push_back(tok_lang);
      }
    }
    utt.y_lid = lid_labels_from_asr(utt.y_asr, spec);
    ds.utts.push_back(std::move(utt));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream meta(fs::path(dir) / "meta.json");
    LGMOE_CHECK(meta.good(), "save_dataset: cannot write meta.json in " << dir);
    meta << ds.spec.to_json().dump(2) << "\n";
  }
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
  LGMOE_CHECK(manifest.good(), "save_dataset: cannot write manifest.jsonl in " << dir);
  for (const Utterance& utt : ds.utts) {
    std::string feat_file = utt.utt_id + ".f64";
    nlohmann::json j;
    j["utt_id"] = utt.utt_id;
    j["length"] = utt.feats.dim(0);
    j["y_asr"] = utt.y_asr;
    j["y_lid"] = utt.y_lid;
    j["true_frame_lang"] = utt.true_frame_lang;
    j["feat_file"] = feat_file;
    manifest << j.dump() << "\n";

    std::ofstream feats(fs::path(dir) / feat_file, std::ios::binary);
    LGMOE_CHECK(feats.good(), "save_dataset: cannot write " << feat_file);
    feats.write(reinterpret_cast<const char*>(utt.feats.data()),
                static_cast<std::streamsize>(sizeof(double) * utt.feats.numel()));
  }
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  {
    std::ifstream meta(fs::path(dir) / "meta.json");
    LGMOE_CHECK(meta.good(), "load_dataset: missing meta.json in " << dir);
    nlohmann::json j;
    meta >> j;
    ds.spec = SynthSpec::from_json(j);
  }
  std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
  LGMOE_CHECK(manifest.good(), "load_dataset: missing manifest.jsonl in " << dir);
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Utterance utt;
    utt.utt_id = j.at("utt_id").get<std::string>();
    int frames = j.at("length").get<int>();
    utt.y_asr = j.at("y_asr").get<std::vector<int>>();
    utt.y_lid = j.at("y_lid").get<std::vector<int>>();
    utt.true_frame_lang = j.at("true_frame_lang").get<std::vector<int>>();
    std::string feat_file = j.at("feat_file").get<std::string>();
    utt.feats = Tensor({frames, ds.spec.d_in});
    std::ifstream feats(fs::path(dir) / feat_file, std::ios::binary);
    LGMOE_CHECK(feats.good(), "load_dataset: missing feature file " << feat_file);
    feats.read(reinterpret_cast<char*>(utt.feats.data()),
               static_cast<std::streamsize>(sizeof(double) * utt.feats.numel()));
    LGMOE_CHECK(feats.gcount() == static_cast<std::streamsize>(sizeof(double) * utt.feats.numel()),
                "load_dataset: short read on " << feat_file);
    ds.utts.push_back(std::move(utt));
  }
  return ds;
}

Tensor Batch::utt_feats(int i) const {
  int frames = lengths.at(static_cast<size_t>(i));
  int d_in = feats.dim(2);
  Tensor out({frames, d_in});
  const double* src = feats.data() +
                      static_cast<size_t>(i) * feats.dim(1) * d_in;
  std::copy(src, src + static_cast<size_t>(frames) * d_in, out.data());
  return out;
}

std::vector<Batch> make_batches(const Dataset& ds, int batch_size, Rng& rng) {
  LGMOE_CHECK(batch_size >= 1, "make_batches: batch_size must be >= 1");
  std::vector<int> order(ds.utts.size());
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with our deterministic rng
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    int j = rng.uniform_int(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    Batch b;
    int t_max = 0;
    for (size_t i = start; i < end; ++i)
      t_max = std::max(t_max, ds.utts[static_cast<size_t>(order[i])].feats.dim(0));
    int d_in = ds.spec.d_in;
    b.feats = Tensor({static_cast<int>(end - start), t_max, d_in});
    for (size_t i = start; i < end; ++i) {
      const Utterance& utt = ds.utts[static_cast<size_t>(order[i])];
      int row = static_cast<int>(i - start);
      std::copy(utt.feats.data(), utt.feats.data() + utt.feats.numel(),
                b.feats.data() + static_cast<size_t>(row) * t_max * d_in);
      b.lengths.push_back(utt.feats.dim(0));
      b.y_asr.push_back(utt.y_asr);
      b.y_lid.push_back(utt.y_lid);
      b.true_frame_lang.push_back(utt.true_frame_lang);
      b.utt_index.push_back(order[i]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace lgmoe

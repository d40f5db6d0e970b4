#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgmoe/ctc.hpp"
#include "lgmoe/rng.hpp"
#include "lgmoe/tensor.hpp"

namespace lgmoe {

/// Synthetic bilingual corpus spec. Each token owns a fixed Gaussian
/// template vector (drawn from template_seed, so separately-seeded train and
/// test sets share one bank); frames are template + noise_std * noise. The
/// first n_languages feature dims are +-lang_sep language markers, keeping
/// the languages linearly separable by construction. Utterance composition
/// and noise come from `seed`.
struct SynthSpec {
  int n_utts = 256;
  int t_min = 40, t_max = 72;          // frames per utterance
  int d_in = 20;
  std::vector<int> lang_vocab = {8, 8};  // tokens per language, disjoint ranges
  double cs_ratio = 0.5;               // fraction of code-switching utterances
  int seg_tokens_min = 2, seg_tokens_max = 3;
  int frames_per_token_min = 4, frames_per_token_max = 7;
  double noise_std = 0.05;
  double lang_sep = 1.0;
  uint64_t seed = 1;
  uint64_t template_seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);

  int n_languages() const { return static_cast<int>(lang_vocab.size()); }
  int vocab_size() const;  // CTC classes including blank
  /// Inclusive token range [lo, hi] of one language.
  std::pair<int, int> lang_range(int lang) const;
  /// Language owning a token, or -1.
  int lang_of_token(int token) const;
};

struct Utterance {
  std::string utt_id;
  Tensor feats;  // T x d_in
  std::vector<int> y_asr;            // token labels, in [1, V-1]
  std::vector<int> y_lid;            // language ids per token, in [0, L)
  std::vector<int> true_frame_lang;  // per-frame ground truth, never seen by the model
};

struct Dataset {
  SynthSpec spec;
  std::vector<Utterance> utts;
};

Dataset generate(const SynthSpec& spec);

/// Token-wise map of ASR labels to 0-based language ids; consecutive
/// duplicates are kept (CTC absorbs repeats).
std::vector<int> lid_labels_from_asr(const std::vector<int>& y_asr, const SynthSpec& spec);

/// LID labels for CTC scoring (language id + 1, blank stays 0).
CtcLabelSeq lid_ctc_labels(const std::vector<int>& y_lid);

/// Directory layout: meta.json (the spec), manifest.jsonl (one line per
/// utterance: utt_id, length, y_asr, y_lid, true_frame_lang, feat_file) and
/// one raw little-endian f64 file of T x d_in frames per utterance.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Padded batch view over a dataset slice.
struct Batch {
  Tensor feats;  // B x T_max x d_in
  std::vector<int> lengths;
  std::vector<std::vector<int>> y_asr;
  std::vector<std::vector<int>> y_lid;
  std::vector<std::vector<int>> true_frame_lang;
  std::vector<int> utt_index;  // into the source dataset

  int size() const { return static_cast<int>(lengths.size()); }
  /// Unpadded T x d_in features of one batch entry.
  Tensor utt_feats(int i) const;
};

/// Shuffled batches covering the dataset once.
std::vector<Batch> make_batches(const Dataset& ds, int batch_size, Rng& rng);

}  // namespace lgmoe

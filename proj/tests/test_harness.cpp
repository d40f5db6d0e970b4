#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lgmoe/checkpoint.hpp"
#include "lgmoe/edit_distance.hpp"
#include "lgmoe/eval.hpp"
#include "lgmoe/train.hpp"
#include "lgmoe/viz.hpp"
#include "testutil.hpp"

using namespace lgmoe;

namespace {

namespace fs = std::filesystem;

ModelConfig tiny_config(const SynthSpec& spec) {
  ModelConfig c;
  c.d_in = spec.d_in;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 24;
  c.n_vanilla_layers = 1;
  c.n_moe_layers = 1;
  c.n_languages = spec.n_languages();
  c.experts_per_group = 2;
  c.k_policy = KPolicy::dynamic(1, 2);
  c.vocab_size = spec.vocab_size();
  c.conv_kernel = 3;
  c.decoder_layers = 1;
  return c;
}

SynthSpec tiny_spec() {
  SynthSpec s;
  s.n_utts = 16;
  s.t_min = 14;
  s.t_max = 24;
  s.d_in = 10;
  s.lang_vocab = {4, 4};
  s.seg_tokens_min = 1;
  s.seg_tokens_max = 2;
  s.frames_per_token_min = 4;
  s.frames_per_token_max = 6;
  s.seed = 5;
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream oss;
  oss << in.rdbuf();
  return oss.str();
}

std::string tmpdir(const std::string& leaf) {
  std::string dir = (fs::temp_directory_path() / leaf).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// exponential-time reference for small sequences
int edit_oracle(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (hyp.empty()) return static_cast<int>(ref.size());
  if (ref.empty()) return static_cast<int>(hyp.size());
  std::vector<int> h1(hyp.begin() + 1, hyp.end());
  std::vector<int> r1(ref.begin() + 1, ref.end());
  int sub = edit_oracle(h1, r1) + (hyp[0] == ref[0] ? 0 : 1);
  int del = edit_oracle(hyp, r1) + 1;
  int ins = edit_oracle(h1, ref) + 1;
  return std::min({sub, del, ins});
}

}  // namespace

TEST_CASE("edit distance basics") {
  CHECK(edit_distance({1, 2, 3}, {1, 2, 3}).total() == 0);
  EditStats del = edit_distance({}, {1, 2});
  CHECK(del.deletions == 2);
  CHECK(del.rate == 1.0);
  CHECK_FALSE(del.empty_ref);
  EditStats ins = edit_distance({1, 2}, {});
  CHECK(ins.insertions == 2);
  CHECK(ins.empty_ref);
  CHECK(ins.rate == 2.0);  // denominator clamps to 1
  EditStats sub = edit_distance({1, 9, 3}, {1, 2, 3});
  CHECK(sub.substitutions == 1);
  CHECK(sub.rate == doctest::Approx(1.0 / 3));
}

TEST_CASE("edit distance agrees with the exponential oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> hyp(static_cast<size_t>(rng.uniform_int(0, 6)));
    std::vector<int> ref(static_cast<size_t>(rng.uniform_int(0, 6)));
    for (auto& x : hyp) x = rng.uniform_int(1, 4);
    for (auto& x : ref) x = rng.uniform_int(1, 4);
    EditStats got = edit_distance(hyp, ref);
    CHECK(got.total() == edit_oracle(hyp, ref));
  }
}

TEST_CASE("warmup schedule") {
  CHECK(lr_at_step(1e-3, 0, 17) == 1e-3);
  // peak at step == warmup
  CHECK(lr_at_step(1e-3, 100, 100) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at_step(1e-3, 100, 50) < lr_at_step(1e-3, 100, 100));
  CHECK(lr_at_step(1e-3, 100, 400) == doctest::Approx(0.5e-3).epsilon(1e-12));
}

TEST_CASE("training runs, logs, and checkpoints deterministically") {
  SynthSpec spec = tiny_spec();
  Dataset ds = generate(spec);
  TrainConfig tc;
  tc.max_steps = 6;
  tc.batch_size = 4;
  tc.warmup_steps = 10;
  tc.seed = 9;

  std::string dir_a = tmpdir("lgmoe_train_a");
  std::string dir_b = tmpdir("lgmoe_train_b");
  Model ma(tiny_config(spec), 21);
  TrainResult ra = train(ma, ds, tc, dir_a);
  Model mb(tiny_config(spec), 21);
  TrainResult rb = train(mb, ds, tc, dir_b);

  CHECK(read_file(ra.log_path) == read_file(rb.log_path));
  CHECK(read_file(ra.ckpt_path) == read_file(rb.ckpt_path));
  CHECK(ra.steps == 6);

  // log lines carry the expected keys
  std::string line = read_file(ra.log_path).substr(0, read_file(ra.log_path).find('\n'));
  for (const char* key : {"\"step\"", "\"k\"", "\"loss\"", "\"ctc\"", "\"att\"", "\"inter\""})
    CHECK(line.find(key) != std::string::npos);

  // checkpoint round trip restores values bit-exactly
  Model back = load_checkpoint(ra.ckpt_path);
  for (size_t i = 0; i < back.params.size(); ++i) {
    CHECK(testutil::max_abs_diff(back.params.at(static_cast<int>(i)).value,
                                 ma.params.at(static_cast<int>(i)).value) == 0.0);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("lr = 0 never moves the parameters") {
  SynthSpec spec = tiny_spec();
  Dataset ds = generate(spec);
  Model m(tiny_config(spec), 23);
  std::vector<Tensor> before;
  for (const Param& p : m.params.items()) before.push_back(p.value);
  TrainConfig tc;
  tc.max_steps = 3;
  tc.batch_size = 4;
  tc.lr = 0.0;
  tc.warmup_steps = 0;
  std::string dir = tmpdir("lgmoe_train_lr0");
  train(m, ds, tc, dir);
  for (size_t i = 0; i < before.size(); ++i)
    CHECK(testutil::max_abs_diff(before[i], m.params.at(static_cast<int>(i)).value) == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("overfitting a single utterance drives the loss down") {
  SynthSpec spec = tiny_spec();
  spec.n_utts = 1;
  spec.noise_std = 0.0;
  Dataset ds = generate(spec);
  Model m(tiny_config(spec), 29);
  TrainConfig tc;
  tc.max_steps = 200;
  tc.batch_size = 1;
  tc.warmup_steps = 20;
  tc.lr = 2e-3;
  tc.seed = 4;
  std::string dir = tmpdir("lgmoe_overfit");
  TrainResult r = train(m, ds, tc, dir);
  CHECK(r.final_loss < 0.1 * r.first_loss);
  fs::remove_all(dir);
}

TEST_CASE("clean separable data trains to a near-zero error rate") {
  SynthSpec spec = tiny_spec();
  spec.n_utts = 32;
  spec.noise_std = 0.0;
  spec.lang_vocab = {3, 3};
  spec.lang_sep = 1.2;
  Dataset ds = generate(spec);
  ModelConfig cfg = tiny_config(spec);
  Model m(cfg, 47);
  TrainConfig tc;
  tc.max_steps = 1600;
  tc.batch_size = 8;
  tc.warmup_steps = 50;
  tc.lr = 2e-3;
  tc.seed = 2;
  std::string dir = tmpdir("lgmoe_oracle");
  train(m, ds, tc, dir);
  EvalOptions opts;
  opts.k = 1;
  EvalReport r = evaluate(m, ds, opts);
  CHECK(r.overall.rate() == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("evaluate is read-only and supports both k values after dynamic training") {
  SynthSpec spec = tiny_spec();
  Dataset ds = generate(spec);
  Model m(tiny_config(spec), 31);
  TrainConfig tc;
  tc.max_steps = 4;
  tc.batch_size = 4;
  std::string dir = tmpdir("lgmoe_eval");
  train(m, ds, tc, dir);

  std::vector<Tensor> before;
  for (const Param& p : m.params.items()) before.push_back(p.value);

  EvalOptions opts;
  opts.k = 1;
  EvalReport r1 = evaluate(m, ds, opts);
  opts.k = 2;
  EvalReport r2 = evaluate(m, ds, opts);
  CHECK(r1.k_used == 1);
  CHECK(r2.k_used == 2);
  CHECK(r1.overall.n_utts == spec.n_utts);

  for (size_t i = 0; i < before.size(); ++i)
    CHECK(testutil::max_abs_diff(before[i], m.params.at(static_cast<int>(i)).value) == 0.0);

  // k outside the trained bounds requires force
  Model fixed_model(tiny_config(spec), 33);
  fixed_model.cfg.k_policy = KPolicy::fixed(1);
  opts.k = 2;
  CHECK_THROWS_AS(evaluate(fixed_model, ds, opts), Error);
  opts.force_k = true;
  EvalReport forced = evaluate(fixed_model, ds, opts);
  CHECK(forced.k_used == 2);
  opts.k = 5;
  CHECK_THROWS_AS(evaluate(fixed_model, ds, opts), Error);

  // override mode: routing accuracy on the designated language is total
  EvalOptions ov;
  ov.k = 1;
  ov.override_lang = 0;
  EvalReport ro = evaluate(m, ds, ov);
  // every zh frame is routed zh; mono accuracy mixes zh (right) and en (wrong)
  CHECK(ro.routing_acc_overall > 0.0);
  fs::remove_all(dir);
}

TEST_CASE("routing dump and report json") {
  SynthSpec spec = tiny_spec();
  spec.n_utts = 4;
  Dataset ds = generate(spec);
  Model m(tiny_config(spec), 37);
  std::string dir = tmpdir("lgmoe_dump");
  EvalOptions opts;
  opts.k = 1;
  opts.dump_routing_path = dir + "/routing.jsonl";
  EvalReport r = evaluate(m, ds, opts);
  std::string dump = read_file(opts.dump_routing_path);
  CHECK(std::count(dump.begin(), dump.end(), '\n') == 4);
  CHECK(dump.find("utt_00000") != std::string::npos);
  nlohmann::json j = r.to_json();
  CHECK(j.contains("ter_mono"));
  CHECK(j.contains("ter_cs"));
  CHECK(j.contains("routing_acc"));
  CHECK(j.contains("expert_utilization"));
  CHECK(j.contains("loss"));
  fs::remove_all(dir);
}

TEST_CASE("route_viz renders deterministic strips") {
  SynthSpec spec = tiny_spec();
  spec.n_utts = 3;
  spec.cs_ratio = 1.0;
  Dataset ds = generate(spec);
  Model m(tiny_config(spec), 41);
  std::string dir = tmpdir("lgmoe_viz");

  const Utterance& utt = ds.utts[0];
  route_viz(m, utt, 1, dir + "/a.ppm");
  route_viz(m, utt, 1, dir + "/b.ppm");
  std::string a = read_file(dir + "/a.ppm");
  CHECK(a == read_file(dir + "/b.ppm"));
  CHECK(a.substr(0, 2) == "P6");

  std::string ascii = route_ascii(m, utt, 1);
  CHECK(ascii.find("router: ") != std::string::npos);
  CHECK(ascii.find("truth:  ") != std::string::npos);
  // exactly T routing characters per strip
  size_t line_end = ascii.find('\n');
  CHECK(static_cast<int>(line_end) - 8 == utt.feats.dim(0));
  fs::remove_all(dir);
}

TEST_CASE("ascii strip shows all-Z when every frame routes to zh") {
  SynthSpec spec = tiny_spec();
  spec.n_utts = 1;
  spec.cs_ratio = 0.0;
  Dataset ds = generate(spec);
  Model m(tiny_config(spec), 43);
  // zero LID head: all language logits tie and the tie-break picks zh
  Param& w = m.params.at(m.slr_w_lid);
  w.value = Tensor::zeros(w.value.shape());
  std::string ascii = route_ascii(m, ds.utts[0], 1);
  std::string router_line = ascii.substr(8, ascii.find('\n') - 8);
  CHECK(static_cast<int>(router_line.size()) == ds.utts[0].feats.dim(0));
  for (char c : router_line) CHECK(c == 'Z');
}

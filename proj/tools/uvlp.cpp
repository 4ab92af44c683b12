// Command-line front end: data generation, training, decoding, evaluation
// and the experiment harnesses.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "uvlp/checkpoint.hpp"
#include "uvlp/data.hpp"
#include "uvlp/decode.hpp"
#include "uvlp/error.hpp"
#include "uvlp/experiments.hpp"
#include "uvlp/gradcheck.hpp"
#include "uvlp/io_util.hpp"
#include "uvlp/metrics.hpp"
#include "uvlp/training.hpp"

namespace fs = std::filesystem;
using namespace uvlp;

namespace {

// Every subcommand takes --config: a flat JSON object whose keys are long
// flag names without the dashes. Values fill only flags not given on the
// command line.
void add_config(CLI::App* sub) {
  sub->add_option("--config", "flat JSON file of flag values; command-line flags win");
}

std::string config_scalar(const std::string& key, const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw CLI::ConversionError("config key '" + key + "' must be a scalar or a list of scalars");
}

void apply_config(CLI::App* sub) {
  const CLI::Option* file = sub->get_option("--config");
  if (file->count() == 0) return;
  const std::string path = file->as<std::string>();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw CLI::ConversionError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw CLI::ConversionError("config file " + path + " must hold a flat JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") throw CLI::ConversionError("unknown config key '" + key + "' in " + path);
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(config_scalar(key, v));
    } else {
      opt->add_result(config_scalar(key, value));
    }
    opt->run_callback();
  }
}

std::size_t decode_threads() {
  if (const char* env = std::getenv("UVLP_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return 1;
}

// Runs fn(i) for i in [0, n) on up to UVLP_THREADS threads. Results are
// written by index, so output order never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t threads = std::min(decode_threads(), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

GrammarSpec grammar_of(const std::string& path) { return path.empty() ? default_grammar() : load_grammar(path); }

Vocab vocab_of(const Checkpoint& ck) {
  return Vocab(std::vector<std::string>(ck.vocab_tokens.begin() + special::kReservedCount, ck.vocab_tokens.end()));
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(path, text);
  }
}

// Training flags shared by pretrain and the two fine-tuning commands.
struct TrainFlags {
  std::string data, out, init, log, grammar, preset = "desk";
  std::uint64_t seed = 1;
  std::size_t steps = 500, batch = 16, warmup = 100, checkpoint_every = 0;
  double lambda = 0.75, lr = 3e-3, dropout = 0.1, mask_rate = 0.15, clip = 1.0;
  std::size_t layers = 2, hidden = 64, heads = 4, ffn = 256, text_len = 20, max_positions = 64, answers = 32;
  bool strict_bert = false, region_pretext = false, no_class_input = false, global_positions = false;
  bool no_wallclock = false;

  std::vector<CLI::Option*> model_opts;
  CLI::Option *steps_opt{}, *batch_opt{}, *warmup_opt{}, *lambda_opt{}, *lr_opt{}, *dropout_opt{}, *mask_opt{},
      *clip_opt{}, *every_opt{};

  void attach(CLI::App* sub, bool pretraining, bool vqa) {
    add_config(sub);
    sub->add_option("--data", data, "training scenes (JSONL)")->required();
    sub->add_option("--out", out, "checkpoint to write")->required();
    sub->add_option("--log", log, "training log CSV");
    sub->add_option("--grammar", grammar, "grammar JSON (default: built-in)");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--preset", preset, "base hyper-parameters")->check(CLI::IsMember(preset_names()));
    if (!pretraining) sub->add_option("--init", init, "checkpoint to start from (default: from scratch)");
    steps_opt = sub->add_option("--steps", steps, "optimizer steps");
    batch_opt = sub->add_option("--batch", batch, "batch size");
    warmup_opt = sub->add_option("--warmup", warmup, "linear warm-up steps");
    lr_opt = sub->add_option("--lr", lr, "peak learning rate");
    clip_opt = sub->add_option("--clip", clip, "global gradient-norm clip");
    dropout_opt = sub->add_option("--dropout", dropout, "dropout probability");
    mask_opt = sub->add_option("--mask-rate", mask_rate, "share of caption tokens corrupted");
    every_opt = sub->add_option("--checkpoint-every", checkpoint_every, "periodic checkpoint interval");
    if (pretraining) lambda_opt = sub->add_option("--lambda", lambda, "share of seq2seq batches");
    sub->add_flag("--strict-bert-masking", strict_bert, "allow captions with no corrupted token");
    sub->add_flag("--no-wallclock", no_wallclock, "write 0 in the log's wall-clock column");
    model_opts = {sub->add_option("--layers", layers), sub->add_option("--hidden", hidden),
                  sub->add_option("--heads", heads), sub->add_option("--ffn", ffn),
                  sub->add_option("--text-len", text_len, "caption slots T"),
                  sub->add_option("--max-positions", max_positions),
                  sub->add_flag("--global-region-positions", global_positions),
                  sub->add_flag("--no-class-input", no_class_input, "withhold C_i from the region embedding")};
    if (pretraining) {
      model_opts.push_back(sub->add_flag("--region-pretext", region_pretext, "add masked region classification"));
    }
    if (vqa) sub->add_option("--answers", answers, "answer vocabulary size");
  }

  static bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

  // Preset, then data-derived sizes, then every explicitly given flag.
  TrainConfig build(const std::vector<SceneExample>& scenes, const Vocab& vocab, const Checkpoint* from) const {
    TrainConfig c = uvlp::preset(preset);
    ModelConfig& m = c.model;
    if (from != nullptr) {
      m = from->config;
    } else {
      if (scenes.empty() || scenes.front().regions.empty()) throw ConfigError("dataset has no regions");
      m.regions = scenes.front().regions.size();
      m.feature_dim = scenes.front().regions.front().features.size();
      m.num_classes = scenes.front().regions.front().class_probs.size();
      m.vocab_size = vocab.size();
    }
    auto set_if = [](const CLI::Option* o, auto& field, auto value) {
      if (given(o)) field = value;
    };
    set_if(model_opts[0], m.layers, layers);
    set_if(model_opts[1], m.hidden, hidden);
    set_if(model_opts[2], m.heads, heads);
    set_if(model_opts[3], m.ffn, ffn);
    set_if(model_opts[4], m.text_len, text_len);
    set_if(model_opts[5], m.max_positions, max_positions);
    if (given(model_opts[6])) m.region_positional = RegionPositional::kGlobal;
    if (given(model_opts[7])) m.class_probs_as_input = false;
    if (model_opts.size() > 8 && given(model_opts[8])) {
      m.region_pretext = true;
      m.class_probs_as_input = false;
    }
    if (from == nullptr) m.max_positions = std::max(m.max_positions, m.sequence_length());
    set_if(dropout_opt, m.dropout, dropout);
    set_if(steps_opt, c.steps, steps);
    set_if(batch_opt, c.batch, batch);
    set_if(warmup_opt, c.adam.warmup, warmup);
    set_if(lr_opt, c.adam.lr, lr);
    set_if(clip_opt, c.clip_norm, clip);
    set_if(mask_opt, c.corruption.rate, mask_rate);
    set_if(every_opt, c.checkpoint_every, checkpoint_every);
    set_if(lambda_opt, c.lambda, lambda);
    if (strict_bert) c.corruption.force_one = false;
    c.seed = seed;
    return c;
  }

  void finish(const TrainResult& r) const {
    save_checkpoint(r.checkpoint, out);
    if (!log.empty()) r.log.write(log, !no_wallclock);
    const auto& recs = r.log.records();
    std::cout << "steps " << r.checkpoint.step;
    if (!recs.empty()) std::cout << " final_loss " << recs.back().loss;
    std::cout << " checkpoint " << out << "\n";
  }
};

// Reads --data against a checkpoint, rebuilding soft labels from the
// checkpoint's answer classes.
std::vector<SceneExample> scenes_for(const std::string& path, const Checkpoint& ck) {
  std::vector<SceneExample> scenes = read_dataset(path);
  if (!ck.answers.empty()) {
    AnswerVocab av;
    av.answers = ck.answers;
    assign_soft_labels(scenes, av);
  }
  return scenes;
}

struct DecodeFlags {
  std::string ckpt, data, out;
  std::size_t beam = 1, max_len = 0;
  double alpha = 0.0;
  bool greedy = false;

  void attach(CLI::App* sub) {
    sub->add_option("--ckpt", ckpt, "checkpoint")->required();
    sub->add_option("--data", data, "scenes (JSONL)")->required();
    sub->add_option("--beam", beam, "beam width")->check(CLI::PositiveNumber);
    sub->add_flag("--greedy", greedy, "greedy decoding (ignores --beam)");
    sub->add_option("--length-alpha", alpha, "length normalization exponent");
    sub->add_option("--max-len", max_len, "word budget (default: caption slots T)");
  }

  std::vector<Prediction> run(const std::vector<SceneExample>& scenes, const Checkpoint& ck) const {
    const std::size_t budget = max_len == 0 ? ck.config.text_len : max_len;
    std::vector<Prediction> out(scenes.size());
    parallel_for(scenes.size(), [&](std::size_t i) {
      out[i] = greedy ? greedy_decode(scenes[i], ck.weights, ck.config, budget)
                      : beam_search(scenes[i], ck.weights, ck.config, beam, budget, alpha);
    });
    return out;
  }
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

int run(int argc, char** argv) {
  CLI::App app{"uvlp: unified vision-language pre-training on synthetic scenes"};
  app.require_subcommand(1);

  // gen-data
  struct {
    std::uint64_t seed = 1, first_id = 0;
    std::size_t scenes = 200, regions = 8;
    double noise = 0.1;
    std::string out, grammar, grammar_out;
  } gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate synthetic scenes from a grammar");
  add_config(gen_cmd);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--scenes", gen.scenes)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--regions", gen.regions, "regions per scene");
  gen_cmd->add_option("--noise", gen.noise, "feature noise std");
  gen_cmd->add_option("--first-id", gen.first_id, "scene id of the first scene");
  gen_cmd->add_option("--grammar", gen.grammar, "grammar JSON (default: built-in)");
  gen_cmd->add_option("--write-grammar", gen.grammar_out, "also write the grammar in use");
  gen_cmd->add_option("--out", gen.out)->required();

  TrainFlags pre, cap_ft, vqa_ft;
  auto* pre_cmd = app.add_subcommand("pretrain", "masked-LM pre-training, seq2seq and bidirectional");
  pre.attach(pre_cmd, true, false);
  auto* cap_cmd = app.add_subcommand("finetune-caption", "seq2seq fine-tuning for captioning");
  cap_ft.attach(cap_cmd, false, false);
  auto* vqa_cmd = app.add_subcommand("finetune-vqa", "VQA head fine-tuning");
  vqa_ft.attach(vqa_cmd, false, true);

  DecodeFlags dec;
  std::uint64_t decode_seed = 1;
  auto* caption_cmd = app.add_subcommand("caption", "decode captions, one line per scene");
  add_config(caption_cmd);
  dec.attach(caption_cmd);
  caption_cmd->add_option("--seed", decode_seed, "unused by decoding; accepted for uniformity");
  caption_cmd->add_option("--out", dec.out, "output file (default: stdout)");

  struct {
    std::string ckpt, data, out;
    std::size_t topk = 1;
    std::uint64_t seed = 1;
  } vq;
  auto* vqa_cmd2 = app.add_subcommand("vqa", "answer every question of every scene");
  add_config(vqa_cmd2);
  vqa_cmd2->add_option("--ckpt", vq.ckpt)->required();
  vqa_cmd2->add_option("--data", vq.data)->required();
  vqa_cmd2->add_option("--topk", vq.topk)->check(CLI::PositiveNumber);
  vqa_cmd2->add_option("--seed", vq.seed, "unused by inference; accepted for uniformity");
  vqa_cmd2->add_option("--out", vq.out, "output file (default: stdout)");

  DecodeFlags ev;
  struct {
    std::string json = "eval.json", csv = "eval.csv", name, task = "caption";
    std::uint64_t seed = 1;
  } evx;
  auto* eval_cmd = app.add_subcommand("eval", "caption BLEU@4 / masked-LM accuracy or VQA accuracy report");
  add_config(eval_cmd);
  ev.attach(eval_cmd);
  eval_cmd->add_option("--task", evx.task)->check(CLI::IsMember({"caption", "vqa"}));
  eval_cmd->add_option("--json", evx.json, "report JSON path");
  eval_cmd->add_option("--csv", evx.csv, "per-example CSV path");
  eval_cmd->add_option("--name", evx.name, "dataset id in the report (default: data file name)");
  eval_cmd->add_option("--seed", evx.seed, "corruption seed of the masked-LM metric");

  struct {
    std::uint64_t seed = 1;
    std::size_t batch = 2, regions = 4, text_len = 6;
    double scale = 0.3, h = 1e-5, tol = 1e-4;
  } gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of every model gradient");
  add_config(gc_cmd);
  gc_cmd->add_option("--seed", gc.seed);
  gc_cmd->add_option("--batch", gc.batch);
  gc_cmd->add_option("--regions", gc.regions);
  gc_cmd->add_option("--text-len", gc.text_len);
  gc_cmd->add_option("--scale", gc.scale, "weight std of the check point");
  gc_cmd->add_option("--step", gc.h, "central-difference step");
  gc_cmd->add_option("--tol", gc.tol, "pass threshold on the max relative error");

  struct {
    std::vector<std::string> logs;
    std::string out;
    std::uint64_t seed = 1;
  } cv;
  auto* curves_cmd = app.add_subcommand("curves", "merge training logs into one CSV, one loss column per run");
  add_config(curves_cmd);
  curves_cmd->add_option("logs", cv.logs, "training log CSVs")->required();
  curves_cmd->add_option("--out", cv.out, "output CSV (default: stdout)");
  curves_cmd->add_option("--seed", cv.seed, "unused; accepted for uniformity");

  struct {
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::size_t pretrain_steps = 6000, finetune_steps = 1500, eval_every = 100;
    std::size_t pretrain_scenes = 2000, finetune_scenes = 400, val_scenes = 150;
    std::size_t hidden = 32;
    double threshold = 0.9, lr = 2e-3, dropout = 0.0;
    std::string out_dir = "transfer", grammar;
  } tf;
  auto* transfer_cmd = app.add_subcommand("transfer", "pre-trained vs from-scratch fine-tuning curves");
  add_config(transfer_cmd);
  transfer_cmd->add_option("--seeds", tf.seeds)->delimiter(',');
  transfer_cmd->add_option("--pretrain-steps", tf.pretrain_steps);
  transfer_cmd->add_option("--finetune-steps", tf.finetune_steps);
  transfer_cmd->add_option("--eval-every", tf.eval_every);
  transfer_cmd->add_option("--pretrain-scenes", tf.pretrain_scenes);
  transfer_cmd->add_option("--finetune-scenes", tf.finetune_scenes);
  transfer_cmd->add_option("--val-scenes", tf.val_scenes);
  transfer_cmd->add_option("--threshold", tf.threshold);
  transfer_cmd->add_option("--hidden", tf.hidden, "model width; ffn is 4x");
  transfer_cmd->add_option("--lr", tf.lr);
  transfer_cmd->add_option("--dropout", tf.dropout);
  transfer_cmd->add_option("--grammar", tf.grammar);
  transfer_cmd->add_option("--out-dir", tf.out_dir);

  struct {
    std::uint64_t seed = 1;
    std::size_t pretrain_steps = 2000, finetune_steps = 600, hidden = 32;
    std::size_t pretrain_scenes = 1000, finetune_scenes = 300, val_scenes = 100;
    double lr = 2e-3;
    std::string out = "ablation.md", json, grammar;
  } ab;
  auto* ablation_cmd = app.add_subcommand("ablation", "region label as pretext target vs as input");
  add_config(ablation_cmd);
  ablation_cmd->add_option("--seed", ab.seed);
  ablation_cmd->add_option("--pretrain-steps", ab.pretrain_steps);
  ablation_cmd->add_option("--finetune-steps", ab.finetune_steps);
  ablation_cmd->add_option("--pretrain-scenes", ab.pretrain_scenes);
  ablation_cmd->add_option("--finetune-scenes", ab.finetune_scenes);
  ablation_cmd->add_option("--val-scenes", ab.val_scenes);
  ablation_cmd->add_option("--grammar", ab.grammar);
  ablation_cmd->add_option("--hidden", ab.hidden, "model width; ffn is 4x");
  ablation_cmd->add_option("--lr", ab.lr);
  ablation_cmd->add_option("--out", ab.out, "markdown report");
  ablation_cmd->add_option("--json", ab.json, "JSON report");

  try {
    app.parse(argc, argv);
    for (CLI::App* sub : app.get_subcommands()) apply_config(sub);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0 && e.get_name() != "CallForHelp") std::cerr << app.help();
    return code == 0 ? 0 : 1;
  }

  if (*gen_cmd) {
    const GrammarSpec g = grammar_of(gen.grammar);
    const SceneGenerator generator(g);
    write_dataset(generate_dataset(generator, gen.seed, gen.scenes, gen.regions, gen.noise, gen.first_id), gen.out);
    if (!gen.grammar_out.empty()) write_file_atomic(gen.grammar_out, grammar_to_json(g));
    std::cout << "wrote " << gen.scenes << " scenes to " << gen.out << "\n";
    return 0;
  }

  if (*pre_cmd) {
    const Vocab vocab = vocab_from_grammar(grammar_of(pre.grammar));
    const auto scenes = read_dataset(pre.data);
    const TrainConfig c = pre.build(scenes, vocab, nullptr);
    pre.finish(pretrain(scenes, c, vocab));
    return 0;
  }

  if (*cap_cmd || *vqa_cmd) {
    TrainFlags& f = *cap_cmd ? cap_ft : vqa_ft;
    std::optional<Checkpoint> init;
    if (!f.init.empty()) init = load_checkpoint(f.init);
    const Vocab vocab = init ? vocab_of(*init) : vocab_from_grammar(grammar_of(f.grammar));
    auto scenes = read_dataset(f.data);
    TrainConfig c = f.build(scenes, vocab, init ? &*init : nullptr);
    if (*cap_cmd) {
      f.finish(finetune_caption(scenes, init ? &*init : nullptr, c, vocab));
    } else {
      const AnswerVocab answers = build_answer_vocab(scenes, f.answers, vocab);
      if (answers.warning) std::cerr << "warning: " << *answers.warning << "\n";
      c.model.num_answers = answers.size();
      TrainHooks hooks;
      hooks.answers = answers.answers;
      f.finish(finetune_vqa(scenes, init ? &*init : nullptr, c, vocab, hooks));
    }
    return 0;
  }

  if (*caption_cmd) {
    const Checkpoint ck = load_checkpoint(dec.ckpt);
    const Vocab vocab = vocab_of(ck);
    const auto scenes = read_dataset(dec.data);
    const auto preds = dec.run(scenes, ck);
    std::string text;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      text += std::to_string(scenes[i].scene_id) + "\t" + detokenize(preds[i].caption, vocab) + "\n";
    }
    write_or_print(dec.out, text);
    return 0;
  }

  if (*vqa_cmd2) {
    const Checkpoint ck = load_checkpoint(vq.ckpt);
    if (ck.answers.empty()) throw ConfigError("checkpoint has no VQA head");
    const Vocab vocab = vocab_of(ck);
    const auto scenes = read_dataset(vq.data);
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      for (std::size_t q = 0; q < scenes[i].qa.size(); ++q) jobs.emplace_back(i, q);
    }
    std::vector<Prediction> preds(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t k) {
      const auto& s = scenes[jobs[k].first];
      preds[k] = vqa_predict(s, s.qa[jobs[k].second].question, ck.weights, ck.config, ck.answers, vq.topk);
    });
    std::string text;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      const auto& s = scenes[jobs[k].first];
      text += std::to_string(s.scene_id) + "\t" + detokenize(s.qa[jobs[k].second].question, vocab);
      for (const auto& a : preds[k].answers) text += "\t" + vocab.token(a.word) + ":" + fmt(a.score);
      text += "\n";
    }
    write_or_print(vq.out, text);
    return 0;
  }

  if (*eval_cmd) {
    const Checkpoint ck = load_checkpoint(ev.ckpt);
    const Vocab vocab = vocab_of(ck);
    const auto scenes = scenes_for(ev.data, ck);
    EvalReport report;
    report.dataset = evx.name.empty() ? fs::path(ev.data).filename().string() : evx.name;
    TrainConfig tc;
    tc.model = ck.config;
    if (evx.task == "caption") {
      const auto preds = ev.run(scenes, ck);
      std::vector<Sentence> hyps, all_hyps;
      std::vector<std::vector<Sentence>> refs;
      std::size_t exact = 0;
      for (std::size_t i = 0; i < scenes.size(); ++i) {
        const Sentence h = words_of(preds[i].caption, vocab);
        const Sentence r = words_of(scenes[i].caption, vocab);
        exact += h == r ? 1 : 0;
        hyps.push_back(h);
        refs.push_back({r});
        report.examples.push_back({detokenize(scenes[i].caption, vocab), detokenize(preds[i].caption, vocab),
                                   h.empty() ? 0.0 : bleu4({h}, {{r}})});
      }
      report.metrics["bleu4"] = bleu4(hyps, refs);
      report.metrics["exact_match"] = static_cast<double>(exact) / static_cast<double>(scenes.size());
      report.metrics["masked_lm_accuracy"] =
          evaluate_masked_lm(scenes, Objective::kSeq2Seq, ck.weights, tc, vocab, evx.seed).accuracy;
    } else {
      if (ck.answers.empty()) throw ConfigError("checkpoint has no VQA head");
      std::vector<std::size_t> top;
      std::vector<std::vector<double>> gold;
      for (const auto& s : scenes) {
        for (const auto& q : s.qa) {
          const Prediction p = vqa_predict(s, q.question, ck.weights, ck.config, ck.answers, 1);
          top.push_back(p.answers.front().index);
          gold.push_back(q.soft_label);
          report.examples.push_back({vocab.token(q.answer), vocab.token(p.answers.front().word),
                                     q.soft_label[p.answers.front().index]});
        }
      }
      report.metrics["qa_accuracy"] = qa_accuracy(top, gold);
    }
    report.write(evx.json, evx.csv);
    for (const auto& [k, v] : report.metrics) std::cout << k << " " << fmt(v) << "\n";
    return 0;
  }

  if (*gc_cmd) {
    ModelConfig c = grad_check_config();
    c.regions = gc.regions;
    c.text_len = gc.text_len;
    c.max_positions = std::max(c.max_positions, c.sequence_length());
    const GradCheckReport r = full_model_grad_check(c, gc.batch, gc.seed, gc.scale, gc.h);
    std::cout << "max relative error " << std::scientific << std::setprecision(3) << r.max_error << " ("
              << r.worst_tensor << ", " << r.coordinates << " coordinates, " << std::fixed << std::setprecision(1)
              << r.seconds << " s)\n";
    return r.max_error < gc.tol ? 0 : 2;
  }

  if (*curves_cmd) {
    std::vector<CurveRun> runs;
    for (const auto& path : cv.logs) {
      const TrainLog log = TrainLog::from_csv(read_text_file(path));
      CurveRun run;
      for (const auto& r : log.records()) {
        run.steps.push_back(r.step);
        run.losses.push_back(r.loss);
      }
      runs.push_back(std::move(run));
    }
    write_or_print(cv.out, merge_curves(runs));
    return 0;
  }

  if (*transfer_cmd) {
    const SceneGenerator generator(grammar_of(tf.grammar));
    fs::create_directories(tf.out_dir);
    nlohmann::json summary = nlohmann::json::array();
    for (const std::uint64_t seed : tf.seeds) {
      TransferOptions o;
      o.seed = seed;
      o.train.model.hidden = tf.hidden;
      o.train.model.ffn = 4 * tf.hidden;
      o.train.model.dropout = tf.dropout;
      o.train.adam.lr = tf.lr;
      o.pretrain_steps = tf.pretrain_steps;
      o.finetune_steps = tf.finetune_steps;
      o.eval_every = tf.eval_every;
      o.threshold = tf.threshold;
      o.sizes.pretrain = tf.pretrain_scenes;
      o.sizes.finetune = tf.finetune_scenes;
      o.sizes.val = tf.val_scenes;
      const TransferResult r = run_transfer(generator, o);
      const fs::path dir = fs::path(tf.out_dir) / ("seed" + std::to_string(seed));
      fs::create_directories(dir);
      nlohmann::json e{{"seed", seed}, {"seconds", r.seconds}};
      auto arm = [&](const char* name, const ArmResult& a) {
        a.log.write(dir / (std::string(name) + "_log.csv"), false);
        CurveRun metric;
        for (const auto& p : a.curve) {
          metric.steps.push_back(p.step);
          metric.losses.push_back(p.metric);
        }
        write_file_atomic(dir / (std::string(name) + "_metric.csv"), merge_curves({metric}));
        e[name] = {{"final_metric", a.final_metric},
                   {"steps_to_threshold", a.steps_to_threshold ? nlohmann::json(*a.steps_to_threshold)
                                                               : nlohmann::json(nullptr)}};
      };
      arm("caption_pretrained", r.caption_pretrained);
      arm("caption_scratch", r.caption_scratch);
      arm("vqa_pretrained", r.vqa_pretrained);
      arm("vqa_scratch", r.vqa_scratch);
      std::cout << e.dump() << "\n";
      summary.push_back(e);
    }
    write_file_atomic(fs::path(tf.out_dir) / "summary.json", summary.dump(2) + "\n");
    return 0;
  }

  if (*ablation_cmd) {
    const SceneGenerator generator(grammar_of(ab.grammar));
    TransferOptions o;
    o.seed = ab.seed;
    o.train.model.hidden = ab.hidden;
    o.train.model.ffn = 4 * ab.hidden;
    o.train.model.dropout = 0.0;
    o.train.adam.lr = ab.lr;
    o.pretrain_steps = ab.pretrain_steps;
    o.finetune_steps = ab.finetune_steps;
    o.sizes.pretrain = ab.pretrain_scenes;
    o.sizes.finetune = ab.finetune_scenes;
    o.sizes.val = ab.val_scenes;
    const AblationResult r = run_pretext_ablation(generator, o);
    write_or_print(ab.out, r.to_markdown());
    if (!ab.json.empty()) write_file_atomic(ab.json, r.to_json());
    if (!ab.out.empty() && ab.out != "-") std::cout << r.to_markdown();
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

#include "uvlp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "uvlp/embeddings.hpp"
#include "uvlp/error.hpp"
#include "uvlp/io_util.hpp"
#include "uvlp/optim.hpp"
#include "uvlp/rng.hpp"
#include "uvlp/transformer.hpp"

namespace uvlp {

const std::vector<std::string>& loss_registry() {
  static const std::vector<std::string> names = {"masked-lm", "region-pretext", "vqa-bce"};
  return names;
}

RunStreams::RunStreams(std::uint64_t seed) {
  for (std::uint64_t id = 1; id <= 4; ++id) streams_.push_back(Rng::stream(seed, id));
}
Rng& RunStreams::init() { return streams_[0]; }
Rng& RunStreams::order() { return streams_[1]; }
Rng& RunStreams::corruption() { return streams_[2]; }
Rng& RunStreams::dropout() { return streams_[3]; }

namespace {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t v = logits.cols();
  const double* p = logits.data() + row * v;
  return static_cast<std::size_t>(std::max_element(p, p + v) - p);
}

TrainConfig resolved(const TrainConfig& config, const Vocab& vocab) {
  TrainConfig c = config;
  if (c.model.vocab_size == 0) c.model.vocab_size = vocab.size();
  if (c.model.vocab_size != vocab.size()) {
    throw ConfigError("config vocab_size " + std::to_string(c.model.vocab_size) + " differs from vocabulary size " +
                      std::to_string(vocab.size()));
  }
  c.model.validate();
  return c;
}

ForwardOptions forward_options(const TrainConfig& config, Rng* dropout_rng) {
  ForwardOptions o;
  if (dropout_rng != nullptr && config.model.dropout > 0.0) {
    o.dropout = config.model.dropout;
    o.rng = dropout_rng;
  }
  return o;
}

std::vector<std::size_t> select_regions(std::size_t n, double rate, Rng& rng) {
  std::vector<std::size_t> picked;
  do {
    picked.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (rng.uniform() < rate) picked.push_back(j);
    }
  } while (picked.empty());
  return picked;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct BatchTerms {
  std::optional<Var> lm_sum;
  std::size_t lm_count = 0;
  std::size_t lm_correct = 0;
  std::optional<Var> pretext_sum;
  std::size_t pretext_count = 0;
  std::size_t pretext_correct = 0;
};

/// One forward over a batch for the masked-LM and/or region pretext terms.
BatchTerms pretrain_terms(Tape& tape, const BoundWeights& w, std::span<const SceneExample* const> batch,
                          Objective objective, const TrainConfig& config, const Vocab& vocab, Rng* corrupt_rng,
                          Rng* pretext_rng, const ForwardOptions& options) {
  if (batch.empty()) throw ConfigError("empty batch");
  const ModelConfig& m = config.model;
  const SequenceLayout layout{m.regions, m.text_len};
  const std::size_t u = layout.size();

  std::vector<Var> inputs;
  std::vector<const AttentionMask*> masks;
  std::vector<AttentionMask> mask_store;
  mask_store.reserve(batch.size());
  std::vector<std::size_t> lm_cols;
  std::vector<std::size_t> lm_targets;
  std::vector<std::size_t> region_cols;
  std::vector<std::size_t> region_targets;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const SceneExample& scene = *batch[b];
    std::vector<TokenId> slots = make_text_slots(scene.caption, m.text_len);
    if (corrupt_rng != nullptr) {
      Corruption c = corrupt_tokens(slots, *corrupt_rng, config.corruption, vocab);
      for (std::size_t i = 0; i < c.plan.positions.size(); ++i) {
        lm_cols.push_back(b * u + layout.text_begin() + c.plan.positions[i]);
        lm_targets.push_back(c.plan.original[i]);
      }
      slots = std::move(c.ids);
    }
    std::vector<std::size_t> zeroed;
    if (pretext_rng != nullptr) {
      zeroed = select_regions(scene.regions.size(), config.pretext_rate, *pretext_rng);
      for (std::size_t j : zeroed) {
        region_cols.push_back(b * u + 1 + j);
        region_targets.push_back(argmax(scene.regions[j].class_probs));
      }
    }
    RegionBatch regions = pack_regions(scene, m, zeroed);
    inputs.push_back(embed_sequence(w.embeddings, regions, slots, objective, m));
    mask_store.push_back(build_mask(objective, m.regions, m.text_len, pad_pattern(slots)));
  }
  for (const auto& mask : mask_store) masks.push_back(&mask);

  Var h0 = inputs.size() == 1 ? inputs[0] : ad::concat_columns(inputs);
  Var h = encode(h0, masks, w.layers, m, options);

  BatchTerms out;
  (void)tape;
  if (!lm_cols.empty()) {
    Var logits = lm_logits(h, lm_cols, w.lm, w.embeddings.token, m.ln_eps);
    out.lm_sum = ad::cross_entropy_sum(logits, lm_targets);
    out.lm_count = lm_cols.size();
    for (std::size_t i = 0; i < lm_cols.size(); ++i) {
      if (argmax_row(logits.value(), i) == lm_targets[i]) ++out.lm_correct;
    }
  }
  if (!region_cols.empty()) {
    Var logits = pretext_logits(h, region_cols, *w.pretext);
    out.pretext_sum = ad::cross_entropy_sum(logits, region_targets);
    out.pretext_count = region_cols.size();
    for (std::size_t i = 0; i < region_cols.size(); ++i) {
      if (argmax_row(logits.value(), i) == region_targets[i]) ++out.pretext_correct;
    }
  }
  return out;
}

bool trainable(const ModelWeights& w) { return w.embeddings.token.requires_grad(); }

struct VqaTerms {
  Var loss;
  double accuracy_sum = 0.0;
  Tensor logits;
};

VqaTerms vqa_terms(const BoundWeights& w, std::span<const QaItem> batch, const TrainConfig& config,
                   const ForwardOptions& options) {
  if (batch.empty()) throw ConfigError("empty batch");
  const ModelConfig& m = config.model;
  const SequenceLayout layout{m.regions, m.text_len};
  const std::size_t u = layout.size();
  std::vector<Var> inputs;
  std::vector<AttentionMask> mask_store;
  mask_store.reserve(batch.size());
  std::vector<std::size_t> offsets;
  const std::size_t k = m.num_answers;
  std::vector<double> targets(k * batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const SceneExample& scene = *batch[b].scene;
    const QaPair& qa = scene.qa.at(batch[b].qa);
    if (qa.soft_label.size() != k) {
      throw ShapeError("soft label of scene " + std::to_string(scene.scene_id) + " has " +
                       std::to_string(qa.soft_label.size()) + " entries, model has " + std::to_string(k) + " answers");
    }
    if (qa.question.size() > m.text_len) {
      throw ShapeError("question of scene " + std::to_string(scene.scene_id) + " exceeds text_len");
    }
    const auto slots = make_text_slots(qa.question, m.text_len);
    inputs.push_back(embed_sequence(w.embeddings, pack_regions(scene, m), slots, Objective::kBidirectional, m));
    mask_store.push_back(build_bidirectional_mask(m.regions, m.text_len, pad_pattern(slots)));
    offsets.push_back(b * u);
    for (std::size_t a = 0; a < k; ++a) targets[a * batch.size() + b] = qa.soft_label[a];
  }
  std::vector<const AttentionMask*> masks;
  for (const auto& mask : mask_store) masks.push_back(&mask);
  Var h0 = inputs.size() == 1 ? inputs[0] : ad::concat_columns(inputs);
  Var h = encode(h0, masks, w.layers, m, options);
  Var logits = vqa_logits(h, offsets, layout.sep(), w.vqa);
  VqaTerms out{ad::bce_with_logits_mean(logits, targets), 0.0, logits.value()};
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < k; ++a) {
      if (out.logits(a, b) > out.logits(best, b)) best = a;
    }
    out.accuracy_sum += batch[b].scene->qa[batch[b].qa].soft_label[best];
  }
  return out;
}

}  // namespace

LossValue masked_lm_loss(std::span<const SceneExample* const> batch, Objective objective, ModelWeights& weights,
                         const TrainConfig& config, const Vocab& vocab, Rng& rng, Rng* dropout_rng) {
  Tape tape(trainable(weights));
  BoundWeights w = bind(tape, weights);
  BatchTerms t = pretrain_terms(tape, w, batch, objective, config, vocab, &rng, nullptr,
                                forward_options(config, dropout_rng));
  Var loss = ad::scale(*t.lm_sum, 1.0 / static_cast<double>(t.lm_count));
  if (tape.recording()) tape.backward(loss);
  return {loss.value()[0], static_cast<double>(t.lm_correct) / static_cast<double>(t.lm_count), t.lm_count};
}

LossValue region_pretext_loss(std::span<const SceneExample* const> batch, ModelWeights& weights,
                              const TrainConfig& config, Rng& rng, Rng* dropout_rng) {
  if (!weights.pretext) throw ConfigError("region pretext head is not enabled");
  Tape tape(trainable(weights));
  BoundWeights w = bind(tape, weights);
  Vocab unused;
  BatchTerms t = pretrain_terms(tape, w, batch, Objective::kBidirectional, config, unused, nullptr, &rng,
                                forward_options(config, dropout_rng));
  Var loss = ad::scale(*t.pretext_sum, 1.0 / static_cast<double>(t.pretext_count));
  if (tape.recording()) tape.backward(loss);
  return {loss.value()[0], static_cast<double>(t.pretext_correct) / static_cast<double>(t.pretext_count),
          t.pretext_count};
}

std::vector<QaItem> qa_items(const std::vector<SceneExample>& examples) {
  std::vector<QaItem> items;
  for (const auto& s : examples) {
    for (std::size_t i = 0; i < s.qa.size(); ++i) items.push_back({&s, i});
  }
  return items;
}

LossValue vqa_loss(std::span<const QaItem> batch, ModelWeights& weights, const TrainConfig& config,
                   Rng* dropout_rng) {
  Tape tape(trainable(weights));
  BoundWeights w = bind(tape, weights);
  VqaTerms t = vqa_terms(w, batch, config, forward_options(config, dropout_rng));
  if (tape.recording()) tape.backward(t.loss);
  return {t.loss.value()[0], t.accuracy_sum / static_cast<double>(batch.size()), batch.size()};
}

void TrainLog::append(const TrainRecord& record) {
  if (!records_.empty() && record.step <= records_.back().step) {
    throw ConfigError("train log steps must be strictly increasing");
  }
  records_.push_back(record);
}

std::size_t TrainLog::count(Objective objective) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [&](const TrainRecord& r) { return r.objective == objective; }));
}

std::string TrainLog::to_csv(bool include_wallclock) const {
  std::ostringstream out;
  out.precision(17);
  out << "step,objective,loss,acc,wallclock_ms\n";
  for (const auto& r : records_) {
    out << r.step << ',' << objective_name(r.objective) << ',' << r.loss << ',' << r.accuracy << ','
        << (include_wallclock ? r.wallclock_ms : 0.0) << '\n';
  }
  return out.str();
}

TrainLog TrainLog::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "step,objective,loss,acc,wallclock_ms") {
    throw ParseError("expected header step,objective,loss,acc,wallclock_ms", line_no);
  }
  TrainLog log;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5) throw ParseError("expected 5 fields", line_no);
    try {
      TrainRecord r;
      r.step = std::stoull(fields[0]);
      r.objective = parse_objective(fields[1]);
      r.loss = std::stod(fields[2]);
      r.accuracy = std::stod(fields[3]);
      r.wallclock_ms = std::stod(fields[4]);
      log.append(r);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return log;
}

void TrainLog::write(const std::filesystem::path& path, bool include_wallclock) const {
  write_file_atomic(path, to_csv(include_wallclock));
}

namespace {

enum class Mode { kPretrain, kCaption, kVqa };

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

/// Endless epoch-shuffled stream of indices.
class Order {
 public:
  Order(std::size_t n, Rng& rng) : idx_(n), rng_(rng) {
    std::iota(idx_.begin(), idx_.end(), 0);
    pos_ = n;
  }
  std::size_t next() {
    if (pos_ == idx_.size()) {
      shuffle(idx_, rng_);
      pos_ = 0;
    }
    return idx_[pos_++];
  }

 private:
  std::vector<std::size_t> idx_;
  std::size_t pos_;
  Rng& rng_;
};

Checkpoint make_checkpoint(const TrainConfig& config, const Vocab& vocab, const TrainHooks& hooks, std::size_t step,
                           const ModelWeights& weights) {
  Checkpoint ck;
  ck.config = config.model;
  ck.step = step;
  ck.weights = weights;
  ck.weights.set_requires_grad(false);
  ck.vocab_tokens = vocab.tokens();
  ck.answers = hooks.answers;
  return ck;
}

TrainResult run(const std::vector<SceneExample>& dataset, const TrainConfig& config, const Vocab& vocab,
                const TrainHooks& hooks, ModelWeights weights, RunStreams& streams, Mode mode, double lambda) {
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  if (config.batch == 0) throw ConfigError("batch size must be positive");
  const auto start = std::chrono::steady_clock::now();

  std::vector<QaItem> items;
  if (mode == Mode::kVqa) {
    items = qa_items(dataset);
    if (items.empty()) throw ConfigError("dataset has no question-answer pairs");
  }
  Order order(mode == Mode::kVqa ? items.size() : dataset.size(), streams.order());
  ObjectiveSchedule schedule(lambda);
  weights.set_requires_grad(true);
  std::vector<NamedTensor> params = weights.named();
  AdamState adam;
  TrainResult result;
  const bool use_pretext = mode == Mode::kPretrain && weights.pretext.has_value();

  for (std::size_t step = 1; step <= config.steps; ++step) {
    weights.zero_grad();
    TrainRecord rec;
    rec.step = step;
    const ForwardOptions options = forward_options(config, &streams.dropout());
    if (mode == Mode::kVqa) {
      std::vector<QaItem> batch;
      for (std::size_t i = 0; i < config.batch; ++i) batch.push_back(items[order.next()]);
      rec.objective = Objective::kBidirectional;
      Tape tape;
      BoundWeights w = bind(tape, weights);
      VqaTerms t = vqa_terms(w, batch, config, options);
      rec.loss = t.loss.value()[0];
      rec.accuracy = t.accuracy_sum / static_cast<double>(batch.size());
      if (std::isfinite(rec.loss)) tape.backward(t.loss);
    } else {
      std::vector<const SceneExample*> batch;
      for (std::size_t i = 0; i < config.batch; ++i) batch.push_back(&dataset[order.next()]);
      rec.objective = schedule.next();
      Tape tape;
      BoundWeights w = bind(tape, weights);
      BatchTerms t = pretrain_terms(tape, w, batch, rec.objective, config, vocab, &streams.corruption(),
                                    use_pretext ? &streams.corruption() : nullptr, options);
      Var loss = ad::scale(*t.lm_sum, 1.0 / static_cast<double>(t.lm_count));
      if (t.pretext_sum) loss = ad::add(loss, ad::scale(*t.pretext_sum, 1.0 / static_cast<double>(t.pretext_count)));
      rec.loss = loss.value()[0];
      rec.accuracy = static_cast<double>(t.lm_correct) / static_cast<double>(t.lm_count);
      if (std::isfinite(rec.loss)) tape.backward(loss);
    }
    if (!std::isfinite(rec.loss)) {
      throw NonFiniteError("step " + std::to_string(step) + " (" + std::string(objective_name(rec.objective)) +
                           "): loss is " + std::to_string(rec.loss));
    }
    if (config.clip_norm > 0.0) clip_grad_norm(params, config.clip_norm);
    adam_step(params, adam, config.adam, step);
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.append(rec);

    if (hooks.checkpoint_path && config.checkpoint_every > 0 && step % config.checkpoint_every == 0 &&
        step != config.steps) {
      save_checkpoint(make_checkpoint(config, vocab, hooks, step, weights), *hooks.checkpoint_path);
    }
    const bool last = step == config.steps;
    if (hooks.evaluate && ((hooks.eval_every > 0 && step % hooks.eval_every == 0) || last)) {
      if (hooks.evaluate(step, weights)) break;
    }
  }
  const std::size_t final_step = result.log.size() == 0 ? 0 : result.log.records().back().step;
  result.checkpoint = make_checkpoint(config, vocab, hooks, final_step, weights);
  if (hooks.checkpoint_path) save_checkpoint(result.checkpoint, *hooks.checkpoint_path);
  return result;
}

void check_compatible(const Checkpoint& init, const ModelConfig& config) {
  const auto diff = architecture_mismatch(init.config, config);
  if (!diff.empty()) {
    std::string names;
    for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
    throw ConfigError("checkpoint config does not match: " + names);
  }
}

/// Trunk from the checkpoint; heads kept only where shapes agree.
ModelWeights from_init(const Checkpoint& init, const ModelConfig& config, Rng& rng, bool fresh_vqa) {
  check_compatible(init, config);
  ModelWeights w;
  w.embeddings = init.weights.embeddings;
  w.layers = init.weights.layers;
  w.lm = init.weights.lm;
  const bool same_vqa = init.config.num_answers == config.num_answers && init.config.vqa_hidden == config.vqa_hidden;
  w.vqa = (fresh_vqa || !same_vqa) ? init_vqa_head(config, rng) : init.weights.vqa;
  if (config.region_pretext) {
    if (init.weights.pretext) {
      w.pretext = init.weights.pretext;
    } else {
      Rng r = Rng::stream(rng.next_u64(), 5);
      ModelWeights fresh = init_weights(config, r);
      w.pretext = fresh.pretext;
    }
  }
  return w;
}

}  // namespace

TrainResult pretrain(const std::vector<SceneExample>& dataset, const TrainConfig& config, const Vocab& vocab,
                     const TrainHooks& hooks) {
  const TrainConfig c = resolved(config, vocab);
  RunStreams streams(c.seed);
  ModelWeights w = init_weights(c.model, streams.init());
  return run(dataset, c, vocab, hooks, std::move(w), streams, Mode::kPretrain, c.lambda);
}

TrainResult finetune_caption(const std::vector<SceneExample>& dataset, const Checkpoint* init,
                             const TrainConfig& config, const Vocab& vocab, const TrainHooks& hooks) {
  const TrainConfig c = resolved(config, vocab);
  RunStreams streams(c.seed);
  ModelWeights w = init ? from_init(*init, c.model, streams.init(), false) : init_weights(c.model, streams.init());
  return run(dataset, c, vocab, hooks, std::move(w), streams, Mode::kCaption, 1.0);
}

TrainResult finetune_vqa(const std::vector<SceneExample>& dataset, const Checkpoint* init, const TrainConfig& config,
                         const Vocab& vocab, const TrainHooks& hooks) {
  const TrainConfig c = resolved(config, vocab);
  RunStreams streams(c.seed);
  ModelWeights w = init ? from_init(*init, c.model, streams.init(), true) : init_weights(c.model, streams.init());
  return run(dataset, c, vocab, hooks, std::move(w), streams, Mode::kVqa, 0.0);
}

LossValue evaluate_masked_lm(const std::vector<SceneExample>& dataset, Objective objective,
                             const ModelWeights& weights, const TrainConfig& config, const Vocab& vocab,
                             std::uint64_t seed) {
  if (dataset.empty()) throw ConfigError("evaluation dataset is empty");
  const TrainConfig c = resolved(config, vocab);
  Rng rng(seed);
  double loss = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
  const std::size_t bs = std::max<std::size_t>(c.batch, 1);
  for (std::size_t i = 0; i < dataset.size(); i += bs) {
    std::vector<const SceneExample*> batch;
    for (std::size_t j = i; j < std::min(dataset.size(), i + bs); ++j) batch.push_back(&dataset[j]);
    Tape tape(false);
    BoundWeights w = bind(tape, weights);
    BatchTerms t = pretrain_terms(tape, w, batch, objective, c, vocab, &rng, nullptr, ForwardOptions{});
    loss += t.lm_sum->value()[0];
    count += t.lm_count;
    correct += t.lm_correct;
  }
  return {loss / static_cast<double>(count), static_cast<double>(correct) / static_cast<double>(count), count};
}

LossValue evaluate_vqa(const std::vector<SceneExample>& dataset, const ModelWeights& weights,
                       const TrainConfig& config) {
  const std::vector<QaItem> items = qa_items(dataset);
  if (items.empty()) throw ConfigError("evaluation dataset has no question-answer pairs");
  double loss = 0.0;
  double acc = 0.0;
  const std::size_t bs = std::max<std::size_t>(config.batch, 1);
  for (std::size_t i = 0; i < items.size(); i += bs) {
    const std::span<const QaItem> batch(items.data() + i, std::min(items.size(), i + bs) - i);
    Tape tape(false);
    BoundWeights w = bind(tape, weights);
    VqaTerms t = vqa_terms(w, batch, config, ForwardOptions{});
    loss += t.loss.value()[0] * static_cast<double>(batch.size());
    acc += t.accuracy_sum;
  }
  const double n = static_cast<double>(items.size());
  return {loss / n, acc / n, items.size()};
}

}  // namespace uvlp

#include "uvlp/weights.hpp"

#include <cmath>

#include "uvlp/error.hpp"
#include "uvlp/rng.hpp"

namespace uvlp {

namespace {

Tensor random_tensor(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = std * rng.normal();
  return t;
}

template <typename Fn>
void visit_embeddings(EmbeddingTables& e, const std::string& prefix, Fn&& fn) {
  fn(prefix + "region_proj", e.region_proj);
  fn(prefix + "class_proj", e.class_proj);
  fn(prefix + "geometry_proj", e.geometry_proj);
  fn(prefix + "branch_proj", e.branch_proj);
  fn(prefix + "class_ln_gain", e.class_ln_gain);
  fn(prefix + "class_ln_bias", e.class_ln_bias);
  fn(prefix + "geometry_ln_gain", e.geometry_ln_gain);
  fn(prefix + "geometry_ln_bias", e.geometry_ln_bias);
  fn(prefix + "token", e.token);
  fn(prefix + "position", e.position);
  fn(prefix + "segment", e.segment);
}

template <typename Fn>
void visit_layer(LayerWeights& l, const std::string& prefix, Fn&& fn) {
  fn(prefix + "query", l.query);
  fn(prefix + "key", l.key);
  fn(prefix + "value", l.value);
  fn(prefix + "output", l.output);
  fn(prefix + "ffn_in", l.ffn_in);
  fn(prefix + "ffn_in_bias", l.ffn_in_bias);
  fn(prefix + "ffn_out", l.ffn_out);
  fn(prefix + "ffn_out_bias", l.ffn_out_bias);
  fn(prefix + "attn_ln_gain", l.attn_ln_gain);
  fn(prefix + "attn_ln_bias", l.attn_ln_bias);
  fn(prefix + "ffn_ln_gain", l.ffn_ln_gain);
  fn(prefix + "ffn_ln_bias", l.ffn_ln_bias);
}

template <typename Fn>
void visit_all(ModelWeights& w, Fn&& fn) {
  visit_embeddings(w.embeddings, "embeddings.", fn);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    visit_layer(w.layers[i], "layers." + std::to_string(i) + ".", fn);
  }
  fn("lm.transform", w.lm.transform);
  fn("lm.transform_bias", w.lm.transform_bias);
  fn("lm.ln_gain", w.lm.ln_gain);
  fn("lm.ln_bias", w.lm.ln_bias);
  fn("lm.output_bias", w.lm.output_bias);
  fn("vqa.hidden", w.vqa.hidden);
  fn("vqa.hidden_bias", w.vqa.hidden_bias);
  fn("vqa.output", w.vqa.output);
  fn("vqa.output_bias", w.vqa.output_bias);
  if (w.pretext) {
    fn("pretext.weight", w.pretext->weight);
    fn("pretext.bias", w.pretext->bias);
  }
}

}  // namespace

std::vector<NamedTensor> ModelWeights::named() {
  std::vector<NamedTensor> out;
  visit_all(*this, [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelWeights::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  visit_all(const_cast<ModelWeights&>(*this), [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

void ModelWeights::set_requires_grad(bool on) {
  for (auto& p : named()) p.tensor->set_requires_grad(on);
}

void ModelWeights::zero_grad() {
  for (auto& p : named()) p.tensor->clear_grad();
}

VqaHead init_vqa_head(const ModelConfig& c, Rng& rng) {
  VqaHead h;
  h.hidden = random_tensor({c.vqa_hidden, c.hidden}, c.init_std, rng);
  h.hidden_bias = Tensor({c.vqa_hidden});
  h.output = random_tensor({c.num_answers, c.vqa_hidden}, c.init_std, rng);
  h.output_bias = Tensor({c.num_answers});
  return h;
}

ModelWeights init_weights(const ModelConfig& c, Rng& rng) {
  c.validate();
  const std::size_t d = c.hidden;
  const std::size_t half = c.branch_width();
  const double s = c.init_std;
  ModelWeights w;
  auto& e = w.embeddings;
  e.region_proj = random_tensor({d, c.feature_dim}, s, rng);
  e.class_proj = random_tensor({half, c.num_classes}, s, rng);
  e.geometry_proj = random_tensor({half, 5}, s, rng);
  e.branch_proj = random_tensor({d, 2 * half}, s, rng);
  e.class_ln_gain = Tensor({half}, 1.0);
  e.class_ln_bias = Tensor({half});
  e.geometry_ln_gain = Tensor({half}, 1.0);
  e.geometry_ln_bias = Tensor({half});
  e.token = random_tensor({c.vocab_size, d}, s, rng);
  e.position = random_tensor({c.max_positions, d}, s, rng);
  e.segment = random_tensor({4, d}, s, rng);
  for (std::size_t i = 0; i < c.layers; ++i) {
    LayerWeights l;
    l.query = random_tensor({d, d}, s, rng);
    l.key = random_tensor({d, d}, s, rng);
    l.value = random_tensor({d, d}, s, rng);
    l.output = random_tensor({d, d}, s, rng);
    l.ffn_in = random_tensor({c.ffn, d}, s, rng);
    l.ffn_in_bias = Tensor({c.ffn});
    l.ffn_out = random_tensor({d, c.ffn}, s, rng);
    l.ffn_out_bias = Tensor({d});
    l.attn_ln_gain = Tensor({d}, 1.0);
    l.attn_ln_bias = Tensor({d});
    l.ffn_ln_gain = Tensor({d}, 1.0);
    l.ffn_ln_bias = Tensor({d});
    w.layers.push_back(std::move(l));
  }
  w.lm.transform = random_tensor({d, d}, s, rng);
  w.lm.transform_bias = Tensor({d});
  w.lm.ln_gain = Tensor({d}, 1.0);
  w.lm.ln_bias = Tensor({d});
  w.lm.output_bias = Tensor({c.vocab_size});
  w.vqa = init_vqa_head(c, rng);
  if (c.region_pretext) {
    w.pretext = RegionPretextHead{random_tensor({c.num_classes, d}, s, rng), Tensor({c.num_classes})};
  }
  return w;
}

std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& config) {
  ModelConfig small = config;
  // Shapes only: build with a throwaway generator.
  Rng rng(0);
  ModelWeights w = init_weights(small, rng);
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& p : w.named()) out.emplace_back(p.name, p.tensor->shape());
  return out;
}

namespace {

template <typename Weights>
BoundWeights bind_impl(Tape& tape, Weights& w) {
  BoundWeights b;
  auto& e = w.embeddings;
  b.embeddings = {tape.parameter(e.region_proj),      tape.parameter(e.class_proj),
                  tape.parameter(e.geometry_proj),    tape.parameter(e.branch_proj),
                  tape.parameter(e.class_ln_gain),    tape.parameter(e.class_ln_bias),
                  tape.parameter(e.geometry_ln_gain), tape.parameter(e.geometry_ln_bias),
                  tape.parameter(e.token),            tape.parameter(e.position),
                  tape.parameter(e.segment)};
  for (auto& l : w.layers) {
    b.layers.push_back({tape.parameter(l.query), tape.parameter(l.key), tape.parameter(l.value),
                        tape.parameter(l.output), tape.parameter(l.ffn_in), tape.parameter(l.ffn_in_bias),
                        tape.parameter(l.ffn_out), tape.parameter(l.ffn_out_bias), tape.parameter(l.attn_ln_gain),
                        tape.parameter(l.attn_ln_bias), tape.parameter(l.ffn_ln_gain), tape.parameter(l.ffn_ln_bias)});
  }
  b.lm = {tape.parameter(w.lm.transform), tape.parameter(w.lm.transform_bias), tape.parameter(w.lm.ln_gain),
          tape.parameter(w.lm.ln_bias), tape.parameter(w.lm.output_bias)};
  b.vqa = {tape.parameter(w.vqa.hidden), tape.parameter(w.vqa.hidden_bias), tape.parameter(w.vqa.output),
           tape.parameter(w.vqa.output_bias)};
  if (w.pretext) b.pretext = BoundPretextHead{tape.parameter(w.pretext->weight), tape.parameter(w.pretext->bias)};
  return b;
}

}  // namespace

BoundWeights bind(Tape& tape, ModelWeights& weights) { return bind_impl(tape, weights); }
BoundWeights bind(Tape& tape, const ModelWeights& weights) { return bind_impl(tape, weights); }

BoundEmbeddings bind(Tape& tape, const EmbeddingTables& e) {
  return {tape.parameter(e.region_proj),      tape.parameter(e.class_proj),       tape.parameter(e.geometry_proj),
          tape.parameter(e.branch_proj),      tape.parameter(e.class_ln_gain),    tape.parameter(e.class_ln_bias),
          tape.parameter(e.geometry_ln_gain), tape.parameter(e.geometry_ln_bias), tape.parameter(e.token),
          tape.parameter(e.position),         tape.parameter(e.segment)};
}

BoundLayer bind(Tape& tape, const LayerWeights& l) {
  return {tape.parameter(l.query),        tape.parameter(l.key),          tape.parameter(l.value),
          tape.parameter(l.output),       tape.parameter(l.ffn_in),       tape.parameter(l.ffn_in_bias),
          tape.parameter(l.ffn_out),      tape.parameter(l.ffn_out_bias), tape.parameter(l.attn_ln_gain),
          tape.parameter(l.attn_ln_bias), tape.parameter(l.ffn_ln_gain),  tape.parameter(l.ffn_ln_bias)};
}

}  // namespace uvlp

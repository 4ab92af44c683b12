#include "uvlp/transformer.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "uvlp/error.hpp"

namespace uvlp {

Var masked_self_attention(Var h, std::span<const AttentionMask* const> masks, const BoundLayer& layer,
                          std::size_t heads, std::vector<Tensor>* probe) {
  const std::size_t d = h.shape()[0];
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  std::size_t total = 0;
  for (const AttentionMask* m : masks) total += m->size();
  if (h.value().cols() != total) {
    throw ShapeError("attention input has " + std::to_string(h.value().cols()) + " columns, masks cover " +
                     std::to_string(total));
  }
  const std::size_t dh = d / heads;
  const double factor = 1.0 / std::sqrt(static_cast<double>(dh));

  Var q = ad::matmul(layer.query, h);
  Var k = ad::matmul(layer.key, h);
  Var v = ad::matmul(layer.value, h);

  std::vector<Var> examples;
  examples.reserve(masks.size());
  std::size_t offset = 0;
  for (const AttentionMask* mask : masks) {
    const std::size_t u = mask->size();
    std::vector<std::size_t> cols(u);
    std::iota(cols.begin(), cols.end(), offset);
    offset += u;
    Var qe = masks.size() == 1 ? q : ad::select_columns(q, cols);
    Var ke = masks.size() == 1 ? k : ad::select_columns(k, cols);
    Var ve = masks.size() == 1 ? v : ad::select_columns(v, cols);
    std::vector<Var> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Var qh = heads == 1 ? qe : ad::slice_rows(qe, hd * dh, dh);
      Var kh = heads == 1 ? ke : ad::slice_rows(ke, hd * dh, dh);
      Var vh = heads == 1 ? ve : ad::slice_rows(ve, hd * dh, dh);
      // scores[j][t] = q_j . k_t for query j and key t.
      Var scores = ad::matmul(qh, kh, ad::Trans::kYes, ad::Trans::kNo);
      Var p = ad::masked_softmax(scores, mask->data(), factor);
      if (probe != nullptr) probe->push_back(p.value());
      head_out.push_back(ad::matmul(vh, p, ad::Trans::kNo, ad::Trans::kYes));
    }
    examples.push_back(heads == 1 ? head_out[0] : ad::concat_rows(head_out));
  }
  Var joined = examples.size() == 1 ? examples[0] : ad::concat_columns(examples);
  return ad::matmul(layer.output, joined);
}

Var transformer_block(Var h, std::span<const AttentionMask* const> masks, const BoundLayer& layer,
                      const ModelConfig& config, const ForwardOptions& options) {
  const bool drop = options.dropout > 0.0 && options.rng != nullptr;
  Var attn = masked_self_attention(h, masks, layer, config.heads, options.attention);
  if (drop) attn = ad::dropout(attn, options.dropout, *options.rng);
  Var mid = ad::layer_norm(ad::add(h, attn), layer.attn_ln_gain, layer.attn_ln_bias, config.ln_eps);
  Var inner = ad::gelu(ad::add_column_bias(ad::matmul(layer.ffn_in, mid), layer.ffn_in_bias));
  Var ffn = ad::add_column_bias(ad::matmul(layer.ffn_out, inner), layer.ffn_out_bias);
  if (drop) ffn = ad::dropout(ffn, options.dropout, *options.rng);
  return ad::layer_norm(ad::add(mid, ffn), layer.ffn_ln_gain, layer.ffn_ln_bias, config.ln_eps);
}

Var encode(Var h0, std::span<const AttentionMask* const> masks, std::span<const BoundLayer> layers,
           const ModelConfig& config, const ForwardOptions& options) {
  Var h = h0;
  if (options.dropout > 0.0 && options.rng != nullptr) h = ad::dropout(h, options.dropout, *options.rng);
  for (const BoundLayer& layer : layers) h = transformer_block(h, masks, layer, config, options);
  return h;
}

Var lm_logits(Var h, std::span<const std::size_t> columns, const BoundLmHead& head, Var token_table, double ln_eps) {
  Var x = ad::select_columns(h, columns);
  Var t = ad::gelu(ad::add_column_bias(ad::matmul(head.transform, x), head.transform_bias));
  t = ad::layer_norm(t, head.ln_gain, head.ln_bias, ln_eps);
  // token_table is V x d, so token_table * t is V x n.
  Var scores = ad::add_column_bias(ad::matmul(token_table, t), head.output_bias);
  return ad::transpose(scores);
}

Var vqa_logits(Var h, std::span<const std::size_t> offsets, std::size_t sep, const BoundVqaHead& head) {
  std::vector<std::size_t> cls_cols(offsets.begin(), offsets.end());
  std::vector<std::size_t> sep_cols(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) sep_cols[i] = offsets[i] + sep;
  Var z = ad::mul(ad::select_columns(h, cls_cols), ad::select_columns(h, sep_cols));
  Var hidden = ad::relu(ad::add_column_bias(ad::matmul(head.hidden, z), head.hidden_bias));
  return ad::add_column_bias(ad::matmul(head.output, hidden), head.output_bias);
}

Var pretext_logits(Var h, std::span<const std::size_t> columns, const BoundPretextHead& head) {
  Var x = ad::select_columns(h, columns);
  return ad::transpose(ad::add_column_bias(ad::matmul(head.weight, x), head.bias));
}

Tensor forward(const InputSequence& input, const AttentionMask& mask, const ModelWeights& weights,
               const ModelConfig& config, std::vector<Tensor>* attention) {
  if (input.size > config.max_positions) {
    throw ConfigError("sequence length " + std::to_string(input.size) + " exceeds max_positions " +
                      std::to_string(config.max_positions));
  }
  if (mask.size() != input.size || input.h0.cols() != input.size) {
    throw ShapeError("mask size " + std::to_string(mask.size()) + " does not match input of " +
                     std::to_string(input.size) + " columns");
  }
  Tape tape(false);
  std::vector<BoundLayer> layers;
  layers.reserve(weights.layers.size());
  for (const auto& l : weights.layers) layers.push_back(bind(tape, l));
  const AttentionMask* masks[] = {&mask};
  ForwardOptions options;
  options.attention = attention;
  return encode(tape.constant(input.h0), masks, layers, config, options).value();
}

Tensor lm_logits(const Tensor& h_final, std::span<const std::size_t> positions, const ModelWeights& weights,
                 const ModelConfig& config) {
  const SequenceLayout layout{config.regions, config.text_len};
  for (std::size_t p : positions) {
    if (!layout.is_text(p) || p >= h_final.cols()) {
      throw IndexError("position " + std::to_string(p) + " is outside the text block [" +
                       std::to_string(layout.text_begin()) + ", " + std::to_string(layout.size()) + ")");
    }
  }
  Tape tape(false);
  const BoundLmHead head{tape.parameter(weights.lm.transform), tape.parameter(weights.lm.transform_bias),
                         tape.parameter(weights.lm.ln_gain), tape.parameter(weights.lm.ln_bias),
                         tape.parameter(weights.lm.output_bias)};
  return lm_logits(tape.constant(h_final), positions, head, tape.parameter(weights.embeddings.token), config.ln_eps)
      .value();
}

}  // namespace uvlp

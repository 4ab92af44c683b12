#include "uvlp/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uvlp/error.hpp"

namespace uvlp {

namespace {

void check_table(const Tensor& t, std::size_t rows, std::size_t cols, const char* name) {
  if (t.rank() != 2 || t.rows() != rows || t.cols() != cols) {
    throw ShapeError(std::string("embedding table ") + name + " has shape " + shape_string(t.shape()) +
                     ", expected [" + std::to_string(rows) + ", " + std::to_string(cols) + "]");
  }
}

std::vector<double> normalize(std::vector<double> x, const Tensor& gain, const Tensor& bias, double eps) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double denom = var + eps;
  const double inv = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  return x;
}

std::vector<double> mat_vec(const Tensor& w, std::span<const double> x) {
  std::vector<double> out(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += w(r, c) * x[c];
    out[r] = acc;
  }
  return out;
}

}  // namespace

Tensor embed_region(const Region& region, const EmbeddingTables& t, double ln_eps, bool use_class) {
  const std::size_t d = t.region_proj.rows();
  const std::size_t hc = t.class_proj.rows();
  const std::size_t hg = t.geometry_proj.rows();
  check_table(t.region_proj, d, region.features.size(), "W_r");
  check_table(t.class_proj, hc, region.class_probs.size(), "W_c");
  check_table(t.geometry_proj, hg, 5, "W_g");
  check_table(t.branch_proj, d, hc + hg, "W_p");

  std::vector<double> joined(hc + hg, 0.0);
  if (use_class) {
    auto c = normalize(mat_vec(t.class_proj, region.class_probs), t.class_ln_gain, t.class_ln_bias, ln_eps);
    std::copy(c.begin(), c.end(), joined.begin());
  }
  auto g = normalize(mat_vec(t.geometry_proj, region.geometry), t.geometry_ln_gain, t.geometry_ln_bias, ln_eps);
  std::copy(g.begin(), g.end(), joined.begin() + static_cast<std::ptrdiff_t>(hc));

  auto appearance = mat_vec(t.region_proj, region.features);
  auto branch = mat_vec(t.branch_proj, joined);
  Tensor out({d});
  for (std::size_t i = 0; i < d; ++i) out[i] = appearance[i] + branch[i];
  return out;
}

std::vector<TokenId> make_text_slots(std::span<const TokenId> words, std::size_t text_len) {
  std::vector<TokenId> slots(text_len + 1, special::kPad);
  std::size_t n = 0;
  for (TokenId w : words) {
    if (w == special::kPad || w == special::kStop) break;
    if (n == text_len) break;
    slots[n++] = w;
  }
  slots[n] = special::kStop;
  return slots;
}

std::vector<bool> pad_pattern(std::span<const TokenId> slots) {
  std::vector<bool> pad(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) pad[i] = slots[i] == special::kPad;
  return pad;
}

RegionBatch pack_regions(const SceneExample& scene, const ModelConfig& config, std::span<const std::size_t> zeroed) {
  const std::size_t n = scene.regions.size();
  if (n != config.regions) {
    throw ShapeError("scene " + std::to_string(scene.scene_id) + " has " + std::to_string(n) +
                     " regions, model expects " + std::to_string(config.regions));
  }
  RegionBatch b{Tensor({config.feature_dim, n}), Tensor({config.num_classes, n}), Tensor({5, n})};
  for (std::size_t j = 0; j < n; ++j) {
    const Region& r = scene.regions[j];
    if (r.features.size() != config.feature_dim || r.class_probs.size() != config.num_classes) {
      throw ShapeError("region " + std::to_string(j) + " of scene " + std::to_string(scene.scene_id) +
                       " does not match feature_dim/num_classes");
    }
    const bool blank = std::find(zeroed.begin(), zeroed.end(), j) != zeroed.end();
    if (!blank) {
      for (std::size_t i = 0; i < config.feature_dim; ++i) b.features(i, j) = r.features[i];
    }
    for (std::size_t i = 0; i < config.num_classes; ++i) b.class_probs(i, j) = r.class_probs[i];
    for (std::size_t i = 0; i < 5; ++i) b.geometry(i, j) = r.geometry[i];
  }
  return b;
}

Var embed_regions(const BoundEmbeddings& e, const RegionBatch& regions, const ModelConfig& config) {
  Tape& tape = *e.token.tape;
  const std::size_t n = regions.features.cols();
  const std::size_t half = config.branch_width();
  Var appearance = ad::matmul(e.region_proj, tape.constant(regions.features));
  Var geometry = ad::layer_norm(ad::matmul(e.geometry_proj, tape.constant(regions.geometry)), e.geometry_ln_gain,
                                e.geometry_ln_bias, config.ln_eps);
  Var cls;
  if (config.class_probs_as_input) {
    cls = ad::layer_norm(ad::matmul(e.class_proj, tape.constant(regions.class_probs)), e.class_ln_gain,
                         e.class_ln_bias, config.ln_eps);
  } else {
    cls = tape.constant(Tensor({half, n}));
  }
  const Var parts[] = {cls, geometry};
  return ad::add(appearance, ad::matmul(e.branch_proj, ad::concat_rows(parts)));
}

Var embed_sequence(const BoundEmbeddings& e, const RegionBatch& regions, std::span<const TokenId> slots,
                   Objective objective, const ModelConfig& config) {
  const SequenceLayout layout{config.regions, config.text_len};
  const std::size_t u = layout.size();
  if (slots.size() != layout.text_slots()) {
    throw ShapeError("expected " + std::to_string(layout.text_slots()) + " text slots, got " +
                     std::to_string(slots.size()));
  }
  if (u > config.max_positions) {
    throw ConfigError("sequence length " + std::to_string(u) + " exceeds max_positions " +
                      std::to_string(config.max_positions));
  }

  std::vector<std::ptrdiff_t> tokens(u, ad::kNoRow);
  std::vector<std::ptrdiff_t> positions(u, ad::kNoRow);
  std::vector<std::ptrdiff_t> segments(u);
  tokens[0] = special::kCls;
  tokens[layout.sep()] = special::kSep;
  for (std::size_t i = 0; i < slots.size(); ++i) tokens[layout.text_begin() + i] = slots[i];
  for (std::size_t c = 0; c < u; ++c) {
    const bool region = c >= 1 && c <= layout.regions;
    if (!region || config.region_positional == RegionPositional::kGlobal) {
      positions[c] = static_cast<std::ptrdiff_t>(c);
    }
    segments[c] = static_cast<std::ptrdiff_t>(segment_row(objective, !layout.is_visual(c)));
  }

  Var word = ad::embedding_columns(e.token, tokens);
  Var regions_h = embed_regions(e, regions, config);
  // Region columns carry no token row, so adding the embedded regions into
  // columns 1..N completes the content term.
  std::vector<Var> cols;
  cols.reserve(3);
  cols.push_back(ad::select_columns(word, std::vector<std::size_t>{0}));
  cols.push_back(regions_h);
  std::vector<std::size_t> rest(u - layout.sep());
  for (std::size_t i = 0; i < rest.size(); ++i) rest[i] = layout.sep() + i;
  cols.push_back(ad::select_columns(word, rest));
  Var content = ad::concat_columns(cols);
  return ad::add(ad::add(content, ad::embedding_columns(e.position, positions)),
                 ad::embedding_columns(e.segment, segments));
}

InputSequence assemble_slots(const SceneExample& scene, std::span<const TokenId> slots, Objective objective,
                             const EmbeddingTables& tables, const ModelConfig& config) {
  Tape tape(false);
  BoundEmbeddings e = bind(tape, tables);
  RegionBatch regions = pack_regions(scene, config);
  Var h = embed_sequence(e, regions, slots, objective, config);
  const SequenceLayout layout{config.regions, config.text_len};
  InputSequence out;
  out.h0 = h.value();
  out.size = layout.size();
  out.text_start = layout.sep();
  out.token_ids.assign(slots.begin(), slots.end());
  out.region_count = layout.regions;
  out.text_pad = pad_pattern(slots);
  return out;
}

InputSequence assemble_input(const SceneExample& scene, std::span<const TokenId> text_ids, Objective objective,
                             const EmbeddingTables& tables, const ModelConfig& config) {
  if (text_ids.size() != config.text_len) {
    throw ShapeError("text has " + std::to_string(text_ids.size()) + " ids, expected " +
                     std::to_string(config.text_len));
  }
  const auto slots = make_text_slots(text_ids, config.text_len);
  return assemble_slots(scene, slots, objective, tables, config);
}

}  // namespace uvlp

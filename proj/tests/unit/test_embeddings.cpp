#include <doctest.h>

#include <cmath>

#include "model_fixtures.hpp"
#include "test_util.hpp"
#include "uvlp/embeddings.hpp"
#include "uvlp/error.hpp"
#include "uvlp/training.hpp"

using namespace uvlp;
using namespace uvlp::testing;

namespace {

// Straight-line region embedding: r = W_r R + W_p [LN(W_c C) ; LN(W_g G)].
std::vector<double> region_oracle(const Region& reg, const EmbeddingTables& t, double eps) {
  auto affine = [](const Tensor& w, const std::vector<double>& x) {
    std::vector<double> y(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < x.size(); ++j) y[i] += w.data()[i * x.size() + j] * x[j];
    }
    return y;
  };
  auto norm = [eps](std::vector<double> v, const Tensor& g, const Tensor& b) {
    double mu = 0.0;
    for (double x : v) mu += x / static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - mu) * (x - mu) / static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = g[i] * (v[i] - mu) / std::sqrt(s2 + eps) + b[i];
    return v;
  };
  std::vector<double> cat = norm(affine(t.class_proj, reg.class_probs), t.class_ln_gain, t.class_ln_bias);
  const auto g = norm(affine(t.geometry_proj, {reg.geometry.begin(), reg.geometry.end()}), t.geometry_ln_gain,
                      t.geometry_ln_bias);
  cat.insert(cat.end(), g.begin(), g.end());
  auto out = affine(t.region_proj, reg.features);
  const auto p = affine(t.branch_proj, cat);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
  return out;
}

void zero(Tensor& t) {
  for (double& v : t.values()) v = 0.0;
}

}  // namespace

TEST_CASE("region embedding matches the straight-line formula") {
  const ModelConfig c = small_config();
  Rng rng(31);
  const ModelWeights w = random_weights(c, 7);
  for (int i = 0; i < 200; ++i) {
    const Region reg = random_region(rng, c.feature_dim, c.num_classes);
    const Tensor got = embed_region(reg, w.embeddings);
    const auto want = region_oracle(reg, w.embeddings, 1e-12);
    CHECK(max_abs_diff(got.values(), want) < 1e-12);
  }
}

TEST_CASE("tape region embedding agrees with the direct one") {
  const ModelConfig c = small_config();
  Rng rng(32);
  const ModelWeights w = random_weights(c, 8);
  const SceneExample s = random_scene(rng, c, 3);
  Tape tape(false);
  const Tensor h = embed_regions(bind(tape, w.embeddings), pack_regions(s, c), c).value();
  for (std::size_t j = 0; j < c.regions; ++j) {
    const Tensor r = embed_region(s.regions[j], w.embeddings);
    for (std::size_t i = 0; i < c.hidden; ++i) CHECK(std::abs(h(i, j) - r[i]) < 1e-12);
  }
}

TEST_CASE("zero branch projection leaves only the appearance term") {
  const ModelConfig c = small_config();
  Rng rng(33);
  ModelWeights w = random_weights(c, 9);
  zero(w.embeddings.branch_proj);
  const Region reg = random_region(rng, c.feature_dim, c.num_classes);
  const Tensor got = embed_region(reg, w.embeddings);
  for (std::size_t i = 0; i < c.hidden; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < c.feature_dim; ++j) want += w.embeddings.region_proj(i, j) * reg.features[j];
    CHECK(std::abs(got[i] - want) < 1e-12);
  }
}

TEST_CASE("identity appearance with zeroed branches returns the features") {
  ModelConfig c = small_config();
  c.feature_dim = c.hidden;
  Rng rng(34);
  ModelWeights w = random_weights(c, 10);
  auto& e = w.embeddings;
  zero(e.region_proj);
  for (std::size_t i = 0; i < c.hidden; ++i) e.region_proj(i, i) = 1.0;
  zero(e.class_proj);
  zero(e.geometry_proj);
  zero(e.class_ln_bias);
  zero(e.geometry_ln_bias);
  const Region reg = random_region(rng, c.feature_dim, c.num_classes);
  const Tensor got = embed_region(reg, e);
  CHECK(max_abs_diff(got.values(), reg.features) < 1e-12);
}

TEST_CASE("region embedding is linear in the features") {
  const ModelConfig c = small_config();
  Rng rng(35);
  const ModelWeights w = random_weights(c, 11);
  Region reg = random_region(rng, c.feature_dim, c.num_classes);
  Region blank = reg;
  std::fill(blank.features.begin(), blank.features.end(), 0.0);
  Region scaled = reg;
  for (double& f : scaled.features) f *= 2.5;
  const Tensor base = embed_region(blank, w.embeddings);
  const Tensor one = embed_region(reg, w.embeddings);
  const Tensor two = embed_region(scaled, w.embeddings);
  for (std::size_t i = 0; i < c.hidden; ++i) CHECK(std::abs((two[i] - base[i]) - 2.5 * (one[i] - base[i])) < 1e-12);
}

TEST_CASE("region embedding checks table dimensions") {
  const ModelConfig c = small_config();
  Rng rng(36);
  const ModelWeights w = random_weights(c, 12);
  Region reg = random_region(rng, c.feature_dim + 1, c.num_classes);
  CHECK_THROWS_AS(embed_region(reg, w.embeddings), ShapeError);
}

TEST_CASE("input layout for N=2, T=2") {
  const ModelConfig c = small_config(2, 2);
  Rng rng(37);
  const ModelWeights w = random_weights(c, 13);
  const SceneExample s = random_scene(rng, c, 2);
  const auto in = assemble_input(s, s.caption, Objective::kSeq2Seq, w.embeddings, c);
  CHECK(in.size == 7);
  CHECK(in.text_start == 3);
  CHECK(in.h0.shape() == Shape{c.hidden, 7});
  // Slots: y1, y2, [STOP]; [STOP] lands in column 6.
  CHECK(in.token_ids == std::vector<TokenId>{s.caption[0], s.caption[1], special::kStop});
}

TEST_CASE("text columns are token plus position plus segment") {
  const ModelConfig c = small_config(2, 3);
  Rng rng(38);
  const ModelWeights w = random_weights(c, 14);
  const SceneExample s = random_scene(rng, c, 2);
  std::vector<TokenId> text = s.caption;
  text.push_back(special::kPad);
  const auto in = assemble_input(s, text, Objective::kBidirectional, w.embeddings, c);
  const auto& e = w.embeddings;
  // Columns: [CLS] r1 r2 [SEP] y1 y2 [STOP] [PAD].
  const std::vector<TokenId> ids{special::kCls, 0, 0, special::kSep, s.caption[0], s.caption[1], special::kStop,
                                 special::kPad};
  for (std::size_t col : {0, 3, 4, 5, 6, 7}) {
    const std::size_t seg = col == 0 ? segment_row(Objective::kBidirectional, false)
                                     : segment_row(Objective::kBidirectional, true);
    for (std::size_t i = 0; i < c.hidden; ++i) {
      const double want = e.token(ids[col], i) + e.position(col, i) + e.segment(seg, i);
      CHECK(std::abs(in.h0(i, col) - want) < 1e-12);
    }
  }
  // Region columns: embedding plus the visual segment, no position row.
  for (std::size_t j = 0; j < 2; ++j) {
    const Tensor r = embed_region(s.regions[j], e);
    for (std::size_t i = 0; i < c.hidden; ++i) {
      const double want = r[i] + e.segment(segment_row(Objective::kBidirectional, false), i);
      CHECK(std::abs(in.h0(i, j + 1) - want) < 1e-12);
    }
  }
}

TEST_CASE("global region positions are a switch") {
  ModelConfig c = small_config(2, 2);
  c.region_positional = RegionPositional::kGlobal;
  Rng rng(39);
  const ModelWeights w = random_weights(c, 15);
  const SceneExample s = random_scene(rng, c, 2);
  ModelConfig off = c;
  off.region_positional = RegionPositional::kNone;
  const auto with = assemble_input(s, s.caption, Objective::kSeq2Seq, w.embeddings, c);
  const auto without = assemble_input(s, s.caption, Objective::kSeq2Seq, w.embeddings, off);
  for (std::size_t i = 0; i < c.hidden; ++i) {
    CHECK(std::abs(with.h0(i, 1) - without.h0(i, 1) - w.embeddings.position(1, i)) < 1e-12);
    CHECK(with.h0(i, 0) == without.h0(i, 0));
  }
}

TEST_CASE("switching objective changes only the segment term") {
  const ModelConfig c = small_config(3, 4);
  Rng rng(40);
  const ModelWeights w = random_weights(c, 16);
  const SceneExample s = random_scene(rng, c, 3);
  std::vector<TokenId> text = s.caption;
  text.push_back(special::kPad);
  const auto a = assemble_input(s, text, Objective::kSeq2Seq, w.embeddings, c);
  const auto b = assemble_input(s, text, Objective::kBidirectional, w.embeddings, c);
  const SequenceLayout layout{c.regions, c.text_len};
  for (std::size_t col = 0; col < layout.size(); ++col) {
    const bool text_col = !layout.is_visual(col);
    for (std::size_t i = 0; i < c.hidden; ++i) {
      const double ref = a.h0(i, text_col ? layout.sep() : 0) - b.h0(i, text_col ? layout.sep() : 0);
      CHECK(std::abs((a.h0(i, col) - b.h0(i, col)) - ref) < 1e-12);
    }
  }
}

TEST_CASE("zero tables give a zero input") {
  const ModelConfig c = small_config();
  Rng rng(41);
  ModelWeights w = random_weights(c, 17);
  for (auto& p : w.named()) zero(*p.tensor);
  const SceneExample s = random_scene(rng, c, 4);
  const auto in = assemble_input(s, s.caption, Objective::kSeq2Seq, w.embeddings, c);
  for (double v : in.h0.values()) CHECK(v == 0.0);
}

TEST_CASE("assembly rejects a wrong text length and oversize sequences") {
  ModelConfig c = small_config(3, 4);
  Rng rng(42);
  const ModelWeights w = random_weights(c, 18);
  const SceneExample s = random_scene(rng, c, 3);
  CHECK_THROWS_AS(assemble_input(s, s.caption, Objective::kSeq2Seq, w.embeddings, c), ShapeError);
  ModelConfig wrong_n = c;
  wrong_n.regions = 2;
  std::vector<TokenId> text(4, special::kPad);
  CHECK_THROWS_AS(assemble_input(s, text, Objective::kSeq2Seq, w.embeddings, wrong_n), ShapeError);
  ModelConfig tiny = c;
  tiny.max_positions = 5;
  CHECK_THROWS(assemble_input(s, text, Objective::kSeq2Seq, w.embeddings, tiny));
}

TEST_CASE("masked-LM gradients reach every embedding table") {
  const ModelConfig c = small_config(3, 4);
  TrainConfig tc;
  tc.model = c;
  tc.corruption.rate = 0.5;
  const Vocab v = vocab_of_size(c.vocab_size);
  Rng rng(43);
  std::vector<SceneExample> scenes;
  for (int i = 0; i < 4; ++i) scenes.push_back(random_scene(rng, c, 4));
  std::vector<const SceneExample*> batch;
  for (const auto& s : scenes) batch.push_back(&s);
  ModelWeights w = random_weights(c, 19, 0.1);
  w.set_requires_grad(true);
  Rng corrupt(44);
  masked_lm_loss(batch, Objective::kSeq2Seq, w, tc, v, corrupt);
  auto nonzero = [](const Tensor& t, std::size_t begin = 0, std::size_t count = 0) {
    if (!t.has_grad()) return false;
    const auto g = t.grad();
    if (count == 0) count = g.size();
    return std::any_of(g.begin() + static_cast<std::ptrdiff_t>(begin),
                       g.begin() + static_cast<std::ptrdiff_t>(begin + count), [](double x) { return x != 0.0; });
  };
  const auto& e = w.embeddings;
  CHECK(nonzero(e.region_proj));
  CHECK(nonzero(e.branch_proj));
  CHECK(nonzero(e.class_proj));
  CHECK(nonzero(e.geometry_proj));
  CHECK(nonzero(e.token));
  CHECK(nonzero(e.position));
  const std::size_t visual = segment_row(Objective::kSeq2Seq, false);
  const std::size_t text = segment_row(Objective::kSeq2Seq, true);
  CHECK(nonzero(e.segment, visual * c.hidden, c.hidden));
  CHECK(nonzero(e.segment, text * c.hidden, c.hidden));
  // The bidirectional rows were not used.
  CHECK_FALSE(nonzero(e.segment, segment_row(Objective::kBidirectional, false) * c.hidden, c.hidden));
}

TEST_CASE("text slots place [STOP] after the last word") {
  const std::vector<TokenId> words{7, 8};
  CHECK(make_text_slots(words, 4) == std::vector<TokenId>{7, 8, special::kStop, special::kPad, special::kPad});
  CHECK(make_text_slots(words, 2) == std::vector<TokenId>{7, 8, special::kStop});
  CHECK(make_text_slots(words, 1) == std::vector<TokenId>{7, special::kStop});
  const std::vector<TokenId> padded{7, special::kPad, special::kPad};
  CHECK(make_text_slots(padded, 3) == std::vector<TokenId>{7, special::kStop, special::kPad, special::kPad});
}

#include "uvlp/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "uvlp/error.hpp"
#include "uvlp/rng.hpp"

namespace uvlp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

ConstMatMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMatMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MatMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }

Tape::Node& Tape::fresh_node() {
  nodes_.emplace_back();
  return nodes_.back();
}

Var Tape::constant(Tensor value) {
  Node& node = fresh_node();
  node.owned = std::move(value);
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor& param) {
  Node& node = fresh_node();
  node.external = &param;
  node.param = &param;
  node.needs_grad = recording_ && param.requires_grad();
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(const Tensor& param) {
  Node& node = fresh_node();
  node.external = &param;
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  bool needs = false;
  if (recording_) {
    for (std::size_t id : inputs) needs = needs || nodes_[id].needs_grad;
  }
  Node& node = fresh_node();
  node.owned = std::move(value);
  node.needs_grad = needs;
  if (needs) {
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
  }
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_[id];
  return node.external ? *node.external : node.owned;
}

std::span<const double> Tape::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(value(id).size(), 0.0);
  return node.grad;
}

std::span<double> Tape::accumulator(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return {};
  if (node.grad.empty()) node.grad.assign(value(id).size(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("backward: loss lives on a different tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(value(loss.id).shape()));
  }
  for (Node& node : nodes_) node.grad.clear();
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad.assign(1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty()) continue;
    if (node.backward) {
      node.backward(*this, i);
    } else if (node.param != nullptr && node.needs_grad) {
      add_into(node.param->grad(), node.grad);
    }
  }
}

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

namespace ad {

Var matmul(Var a, Var b, Trans ta, Trans tb) {
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool at = ta == Trans::kYes;
  const bool bt = tb == Trans::kYes;
  const std::size_t m = at ? av.cols() : av.rows();
  const std::size_t k = at ? av.rows() : av.cols();
  const std::size_t kb = bt ? bv.cols() : bv.rows();
  const std::size_t n = bt ? bv.rows() : bv.cols();
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_string(av.shape()) +
                     (at ? "^T" : "") + " and " + shape_string(bv.shape()) + (bt ? "^T" : ""));
  }
  Tensor out({m, n});
  auto c = as_matrix(out.values(), m, n);
  const auto am = as_matrix(av);
  const auto bm = as_matrix(bv);
  if (!at && !bt) c.noalias() = am * bm;
  else if (at && !bt) c.noalias() = am.transpose() * bm;
  else if (!at && bt) c.noalias() = am * bm.transpose();
  else c.noalias() = am.transpose() * bm.transpose();

  return tape.push(std::move(out), {a.id, b.id}, [at, bt, m, n](Tape& t, std::size_t self) {
    const std::size_t ia = t.inputs(self)[0];
    const std::size_t ib = t.inputs(self)[1];
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    const auto dc = as_matrix(t.grad(self), m, n);
    const auto am = as_matrix(av);
    const auto bm = as_matrix(bv);
    if (auto ga = t.accumulator(ia); !ga.empty()) {
      auto da = as_matrix(ga, av.rows(), av.cols());
      if (!at && !bt) da.noalias() += dc * bm.transpose();
      else if (!at && bt) da.noalias() += dc * bm;
      else if (at && !bt) da.noalias() += bm * dc.transpose();
      else da.noalias() += bm.transpose() * dc.transpose();
    }
    if (auto gb = t.accumulator(ib); !gb.empty()) {
      auto db = as_matrix(gb, bv.rows(), bv.cols());
      if (!at && !bt) db.noalias() += am.transpose() * dc;
      else if (at && !bt) db.noalias() += am * dc;
      else if (!at && bt) db.noalias() += dc.transpose() * am;
      else db.noalias() += dc.transpose() * am.transpose();
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows();
  const std::size_t c = av.cols();
  Tensor out({c, r});
  as_matrix(out.values(), c, r) = as_matrix(av).transpose();
  return a.tape->push(std::move(out), {a.id}, [r, c](Tape& t, std::size_t self) {
    auto ga = t.accumulator(t.inputs(self)[0]);
    as_matrix(ga, r, c) += as_matrix(t.grad(self), c, r).transpose();
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor out = av;
  out.clear_grad();
  add_into(out.values(), bv.values());
  return a.tape->push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    for (std::size_t in : t.inputs(self)) {
      if (auto acc = t.accumulator(in); !acc.empty()) add_into(acc, g);
    }
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "sub");
  Tensor out = av;
  out.clear_grad();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    if (auto acc = t.accumulator(t.inputs(self)[0]); !acc.empty()) add_into(acc, g);
    if (auto acc = t.accumulator(t.inputs(self)[1]); !acc.empty()) {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const std::size_t ia = t.inputs(self)[0];
    const std::size_t ib = t.inputs(self)[1];
    const auto g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (auto acc = t.accumulator(ia); !acc.empty()) {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * bv[i];
    }
    if (auto acc = t.accumulator(ib); !acc.empty()) {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out.clear_grad();
  for (double& v : out.values()) v *= factor;
  return a.tape->push(std::move(out), {a.id}, [factor](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    auto acc = t.accumulator(t.inputs(self)[0]);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += factor * g[i];
  });
}

Var add_column_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (bv.size() != m) {
    throw ShapeError("add_column_bias: bias " + shape_string(bv.shape()) + " does not match rows of " +
                     shape_string(xv.shape()));
  }
  Tensor out = xv;
  out.clear_grad();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[r];
  }
  return x.tape->push(std::move(out), {x.id, bias.id}, [m, n](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    if (auto acc = t.accumulator(t.inputs(self)[0]); !acc.empty()) add_into(acc, g);
    if (auto acc = t.accumulator(t.inputs(self)[1]); !acc.empty()) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) acc[r] += g[r * n + c];
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.rows();
  const std::size_t n = xv.cols();
  if (d < 2) throw DegenerateInputError("layer_norm: need at least 2 features, got " + std::to_string(d));
  if (gain.value().size() != d || bias.value().size() != d) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  // Per column: normalized values and inverse standard deviation.
  std::vector<double> xhat(d * n);
  std::vector<double> inv_std(n);
  for (std::size_t c = 0; c < n; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < d; ++r) mean += xv[r * n + c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      const double dev = xv[r * n + c] - mean;
      var += dev * dev;
    }
    var /= static_cast<double>(d);
    const double denom = std::sqrt(var + eps);
    const double inv = denom > 0.0 ? 1.0 / denom : 0.0;
    inv_std[c] = inv;
    for (std::size_t r = 0; r < d; ++r) {
      const double h = (xv[r * n + c] - mean) * inv;
      xhat[r * n + c] = h;
      out[r * n + c] = h * gv[r] + bv[r];
    }
  }
  return x.tape->push(std::move(out), {x.id, gain.id, bias.id},
                      [d, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                        const auto g = t.grad(self);
                        const Tensor& gv = t.value(t.inputs(self)[1]);
                        if (auto acc = t.accumulator(t.inputs(self)[1]); !acc.empty()) {
                          for (std::size_t i = 0; i < d * n; ++i) acc[i / n] += g[i] * xhat[i];
                        }
                        if (auto acc = t.accumulator(t.inputs(self)[2]); !acc.empty()) {
                          for (std::size_t i = 0; i < d * n; ++i) acc[i / n] += g[i];
                        }
                        auto acc = t.accumulator(t.inputs(self)[0]);
                        if (acc.empty()) return;
                        for (std::size_t c = 0; c < n; ++c) {
                          double mean_g = 0.0;
                          double mean_gx = 0.0;
                          for (std::size_t r = 0; r < d; ++r) {
                            const double gh = g[r * n + c] * gv[r];
                            mean_g += gh;
                            mean_gx += gh * xhat[r * n + c];
                          }
                          mean_g /= static_cast<double>(d);
                          mean_gx /= static_cast<double>(d);
                          for (std::size_t r = 0; r < d; ++r) {
                            const double gh = g[r * n + c] * gv[r];
                            acc[r * n + c] += inv_std[c] * (gh - mean_g - xhat[r * n + c] * mean_gx);
                          }
                        }
                      });
}

Var masked_softmax(Var logits, std::span<const std::uint8_t> allow, double factor) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows();
  const std::size_t cols = lv.cols();
  if (allow.size() != rows * cols) {
    throw ShapeError("masked_softmax: mask has " + std::to_string(allow.size()) + " entries for logits " +
                     shape_string(lv.shape()));
  }
  Tensor out(lv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = lv.data() + r * cols;
    const std::uint8_t* ok = allow.data() + r * cols;
    double* p = out.data() + r * cols;
    double peak = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!ok[c]) continue;
      any = true;
      // NaN or infinite scores make the row NaN so the loss surfaces them.
      peak = std::isfinite(in[c]) ? std::max(peak, factor * in[c]) : std::numeric_limits<double>::quiet_NaN();
      if (std::isnan(peak)) break;
    }
    if (!any) {
      throw InvalidMaskError("masked_softmax: row " + std::to_string(r) + " has no admissible column");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (ok[c]) {
        p[c] = std::exp(factor * in[c] - peak);
        total += p[c];
      }
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (ok[c]) p[c] /= total;
    }
  }
  return logits.tape->push(std::move(out), {logits.id}, [rows, cols, factor](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    const Tensor& p = t.value(self);
    auto acc = t.accumulator(t.inputs(self)[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += p[r * cols + c] * g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        acc[i] += factor * p[i] * (g[i] - dot);
      }
    }
  });
}

Var gelu(Var x) {
  Tensor out(x.value().shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
  return x.tape->push(std::move(out), {x.id}, [](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs(self)[0];
    const Tensor& xv = t.value(in);
    const auto g = t.grad(self);
    auto acc = t.accumulator(in);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double dinner = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      acc[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner);
    }
  });
}

Var relu(Var x) {
  Tensor out(x.value().shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return x.tape->push(std::move(out), {x.id}, [](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs(self)[0];
    const Tensor& xv = t.value(in);
    const auto g = t.grad(self);
    auto acc = t.accumulator(in);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (xv[i] > 0.0) acc[i] += g[i];
    }
  });
}

Var sigmoid(Var x) {
  Tensor out(x.value().shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  return x.tape->push(std::move(out), {x.id}, [](Tape& t, std::size_t self) {
    const Tensor& s = t.value(self);
    const auto g = t.grad(self);
    auto acc = t.accumulator(t.inputs(self)[0]);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factors(x.value().size());
  for (double& f : factors) f = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out(x.value().shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factors[i];
  return x.tape->push(std::move(out), {x.id}, [factors = std::move(factors)](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    auto acc = t.accumulator(t.inputs(self)[0]);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * factors[i];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (count == 0 || begin + count > av.rows()) {
    throw IndexError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(av.shape()));
  }
  const std::size_t cols = av.cols();
  std::vector<double> values(av.data() + begin * cols, av.data() + (begin + count) * cols);
  Tensor out({count, cols}, std::move(values));
  return a.tape->push(std::move(out), {a.id}, [begin, cols](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    auto acc = t.accumulator(t.inputs(self)[0]);
    for (std::size_t i = 0; i < g.size(); ++i) acc[begin * cols + i] += g[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.value().cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const auto v = p.value().values();
    std::copy(v.begin(), v.end(), out.data() + offset);
    offset += v.size();
  }
  return parts[0].tape->push(std::move(out), std::move(ids), [](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t in : t.inputs(self)) {
      const std::size_t len = t.value(in).size();
      if (auto acc = t.accumulator(in); !acc.empty()) add_into(acc, g.subspan(offset, len));
      offset += len;
    }
  });
}

Var select_columns(Var a, std::span<const std::size_t> columns) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows();
  const std::size_t cols = av.cols();
  if (columns.empty()) throw ShapeError("select_columns: empty selection");
  for (std::size_t c : columns) {
    if (c >= cols) throw IndexError("select_columns: column " + std::to_string(c) + " outside " + shape_string(av.shape()));
  }
  const std::size_t n = columns.size();
  Tensor out({rows, n});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * cols + columns[j]];
  }
  std::vector<std::size_t> picked(columns.begin(), columns.end());
  return a.tape->push(std::move(out), {a.id}, [rows, cols, picked = std::move(picked)](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    auto acc = t.accumulator(t.inputs(self)[0]);
    const std::size_t n = picked.size();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) acc[r * cols + picked[j]] += g[r * n + j];
    }
  });
}

Var concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_columns: nothing to concatenate");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) {
      throw ShapeError("concat_columns: row counts differ (" + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()) + ")");
    }
    cols += p.value().cols();
    ids.push_back(p.id);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t pc = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < pc; ++c) out[r * cols + offset + c] = v[r * pc + c];
    }
    offset += pc;
  }
  return parts[0].tape->push(std::move(out), std::move(ids), [rows, cols](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t in : t.inputs(self)) {
      const std::size_t pc = t.value(in).cols();
      if (auto acc = t.accumulator(in); !acc.empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < pc; ++c) acc[r * pc + c] += g[r * cols + offset + c];
        }
      }
      offset += pc;
    }
  });
}

Var embedding_columns(Var table, std::span<const std::ptrdiff_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t vocab = tv.rows();
  const std::size_t d = tv.cols();
  const std::size_t n = ids.size();
  if (n == 0) throw ShapeError("embedding_columns: no ids");
  for (std::ptrdiff_t id : ids) {
    if (id != kNoRow && (id < 0 || static_cast<std::size_t>(id) >= vocab)) {
      throw IndexError("embedding_columns: id " + std::to_string(id) + " outside table of " + std::to_string(vocab));
    }
  }
  Tensor out({d, n});
  for (std::size_t j = 0; j < n; ++j) {
    if (ids[j] == kNoRow) continue;
    const double* row = tv.data() + static_cast<std::size_t>(ids[j]) * d;
    for (std::size_t r = 0; r < d; ++r) out[r * n + j] = row[r];
  }
  std::vector<std::ptrdiff_t> kept(ids.begin(), ids.end());
  return table.tape->push(std::move(out), {table.id}, [d, kept = std::move(kept)](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    auto acc = t.accumulator(t.inputs(self)[0]);
    const std::size_t n = kept.size();
    for (std::size_t j = 0; j < n; ++j) {
      if (kept[j] == kNoRow) continue;
      double* row = acc.data() + static_cast<std::size_t>(kept[j]) * d;
      for (std::size_t r = 0; r < d; ++r) row[r] += g[r * n + j];
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return a.tape->push(Tensor::scalar(total), {a.id}, [](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto acc = t.accumulator(t.inputs(self)[0]);
    for (double& v : acc) v += g;
  });
}

Var sum_of(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("sum_of: no terms");
  double total = 0.0;
  std::vector<std::size_t> ids;
  for (const Var& s : scalars) {
    if (s.value().size() != 1) throw ShapeError("sum_of: terms must be scalar");
    total += s.value()[0];
    ids.push_back(s.id);
  }
  return scalars[0].tape->push(Tensor::scalar(total), std::move(ids), [](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (std::size_t in : t.inputs(self)) {
      if (auto acc = t.accumulator(in); !acc.empty()) acc[0] += g;
    }
  });
}

Var cross_entropy_sum(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows();
  const std::size_t cols = lv.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy_sum: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  }
  std::vector<double> probs(rows * cols);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) throw IndexError("cross_entropy_sum: target " + std::to_string(targets[r]) + " out of range");
    const double* in = lv.data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - peak);
    const double log_z = peak + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(in[c] - log_z);
    total += log_z - in[targets[r]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return logits.tape->push(Tensor::scalar(total), {logits.id},
                           [cols, probs = std::move(probs), tgt = std::move(tgt)](Tape& t, std::size_t self) {
                             const double g = t.grad(self)[0];
                             auto acc = t.accumulator(t.inputs(self)[0]);
                             for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g * probs[i];
                             for (std::size_t r = 0; r < tgt.size(); ++r) acc[r * cols + tgt[r]] -= g;
                           });
}

Var bce_with_logits_mean(Var logits, std::span<const double> targets) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.size();
  if (targets.size() != n) {
    throw ShapeError("bce_with_logits_mean: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " logits");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lv[i];
    total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  std::vector<double> tgt(targets.begin(), targets.end());
  return logits.tape->push(Tensor::scalar(total / static_cast<double>(n)), {logits.id},
                           [tgt = std::move(tgt)](Tape& t, std::size_t self) {
                             const std::size_t in = t.inputs(self)[0];
                             const Tensor& lv = t.value(in);
                             const double g = t.grad(self)[0] / static_cast<double>(tgt.size());
                             auto acc = t.accumulator(in);
                             for (std::size_t i = 0; i < acc.size(); ++i) {
                               acc[i] += g * (1.0 / (1.0 + std::exp(-lv[i])) - tgt[i]);
                             }
                           });
}

}  // namespace ad

double finite_diff_check(const std::function<double()>& loss, Tensor& params, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
  const std::vector<double> analytic = params.has_grad()
                                           ? std::vector<double>(params.grad().begin(), params.grad().end())
                                           : std::vector<double>(params.size(), 0.0);
  double worst = 0.0;
  auto values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace uvlp

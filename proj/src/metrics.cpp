#include "uvlp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "uvlp/error.hpp"
#include "uvlp/io_util.hpp"

namespace uvlp {

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[Sentence(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                             s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

void check_corpus(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs) {
  if (hyps.empty()) throw ConfigError("BLEU: empty corpus");
  if (hyps.size() != refs.size()) {
    throw ConfigError("BLEU: " + std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs.size()) +
                      " reference sets");
  }
  for (const auto& r : refs) {
    if (r.empty()) throw ConfigError("BLEU: hypothesis without references");
  }
}

}  // namespace

NgramStats ngram_precision(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs,
                           std::size_t n) {
  check_corpus(hyps, refs);
  NgramStats st;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = ngram_counts(hyps[i], n);
    std::map<std::vector<std::string>, std::size_t> max_ref;
    for (const auto& r : refs[i]) {
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    for (const auto& [g, c] : h) {
      st.total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) st.matched += std::min(c, it->second);
    }
  }
  return st;
}

double bleu4(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs) {
  check_corpus(hyps, refs);
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramStats st = ngram_precision(hyps, refs, n);
    const double p = st.matched == 0 ? 1.0 / static_cast<double>(st.total + 1)
                                     : static_cast<double>(st.matched) / static_cast<double>(st.total);
    log_sum += std::log(p) / 4.0;
  }
  std::size_t c = 0;
  std::size_t r = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    c += hyps[i].size();
    // Closest reference length, shorter one on ties.
    std::size_t best = refs[i][0].size();
    for (const auto& ref : refs[i]) {
      const auto d = [&](std::size_t len) { return std::llabs(static_cast<long long>(len) - static_cast<long long>(hyps[i].size())); };
      if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
    }
    r += best;
  }
  if (c == 0) return 0.0;
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum);
}

double qa_accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::vector<double>>& soft_labels) {
  if (predictions.size() != soft_labels.size()) {
    throw ConfigError("qa_accuracy: " + std::to_string(predictions.size()) + " predictions but " +
                      std::to_string(soft_labels.size()) + " labels");
  }
  if (predictions.empty()) throw ConfigError("qa_accuracy: no examples");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] >= soft_labels[i].size()) throw IndexError("qa_accuracy: prediction outside answer set");
    sum += soft_labels[i][predictions[i]];
  }
  return sum / static_cast<double>(predictions.size());
}

Sentence words_of(const std::vector<TokenId>& ids, const Vocab& vocab) {
  Sentence out;
  for (TokenId id : ids) {
    if (!Vocab::is_reserved(id)) out.push_back(vocab.token(id));
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["metrics"] = metrics;
  j["examples"] = nlohmann::json::array();
  for (const auto& e : examples) {
    j["examples"].push_back({{"reference", e.reference}, {"hypothesis", e.hypothesis}, {"score", e.score}});
  }
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    for (const auto& e : j.at("examples")) {
      r.examples.push_back({e.at("reference").get<std::string>(), e.at("hypothesis").get<std::string>(),
                            e.at("score").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), 1);
  }
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "reference,hypothesis,score\n";
  for (const auto& e : examples) out << csv_field(e.reference) << ',' << csv_field(e.hypothesis) << ',' << e.score << '\n';
  return out.str();
}

void EvalReport::write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const {
  write_file_atomic(json_path, to_json());
  write_file_atomic(csv_path, to_csv());
}

std::string merge_curves(const std::vector<CurveRun>& runs) {
  std::set<std::size_t> steps;
  for (const auto& r : runs) {
    if (r.steps.size() != r.losses.size()) throw ShapeError("curve run has mismatched steps and losses");
    steps.insert(r.steps.begin(), r.steps.end());
  }
  std::ostringstream out;
  out.precision(17);
  out << "step";
  for (std::size_t i = 0; i < runs.size(); ++i) out << ",run" << (i + 1) << "_loss";
  out << '\n';
  for (std::size_t s : steps) {
    out << s;
    for (const auto& r : runs) {
      out << ',';
      auto it = std::lower_bound(r.steps.begin(), r.steps.end(), s);
      if (it != r.steps.end() && *it == s) out << r.losses[static_cast<std::size_t>(it - r.steps.begin())];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace uvlp

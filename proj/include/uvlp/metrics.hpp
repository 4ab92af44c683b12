#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uvlp/vocab.hpp"

namespace uvlp {

using Sentence = std::vector<std::string>;

/// Clipped n-gram counts over a corpus: matched hypothesis n-grams and
/// total hypothesis n-grams.
struct NgramStats {
  std::size_t matched = 0;
  std::size_t total = 0;
};

NgramStats ngram_precision(const std::vector<Sentence>& hypotheses, const std::vector<std::vector<Sentence>>& references,
                           std::size_t n);

/// Corpus BLEU with n = 1..4, uniform weights and the brevity penalty
/// exp(1 - r / c) when c < r (r: closest reference length per sentence).
/// Any zero precision is smoothed to 1 / (total + 1).
double bleu4(const std::vector<Sentence>& hypotheses, const std::vector<std::vector<Sentence>>& references);

/// Mean soft-label value at the top-1 prediction.
double qa_accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::vector<double>>& soft_labels);

Sentence words_of(const std::vector<TokenId>& ids, const Vocab& vocab);

struct EvalRecord {
  std::string reference;
  std::string hypothesis;
  double score = 0.0;
};

struct EvalReport {
  std::string dataset;
  std::map<std::string, double> metrics;
  std::vector<EvalRecord> examples;

  std::string to_json() const;
  std::string to_csv() const;
  static EvalReport from_json(const std::string& text);
  void write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

/// Merges per-run loss columns aligned by step:
/// step,run1_loss,run2_loss,... with empty cells where a run has no step.
struct CurveRun {
  std::vector<std::size_t> steps;
  std::vector<double> losses;
};
std::string merge_curves(const std::vector<CurveRun>& runs);

}  // namespace uvlp

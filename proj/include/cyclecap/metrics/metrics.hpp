#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cyclecap::metrics {

using Tokens = std::vector<std::string>;

/// One candidate caption and its references, tokenized, <eos> removed.
struct EvalPair {
  Tokens candidate;
  std::vector<Tokens> references;
};
using Corpus = std::vector<EvalPair>;

/// Corpus BLEU-4: clipped n-gram precisions (n = 1..4) pooled over the
/// corpus, add-one smoothing for n >= 2, brevity penalty against the
/// closest reference length.
double bleu4(const Corpus& corpus);

/// Mean over pairs of the best LCS F-measure (beta = 1.2) over references.
double rouge_l(const Corpus& corpus);

/// Suffix-stripping stem used by meteor_lite.
std::string stem(const std::string& word);

/// Unigram alignment (exact, then stem) against each reference; score
/// Fmean * (1 - 0.5 * ((chunks - 1) / (matches - 1))^3), best over
/// references, mean over pairs.
double meteor_lite(const Corpus& corpus);

/// CIDEr-D over n = 1..4 with TF-IDF weights, clipped candidate counts,
/// Gaussian length penalty (sigma = 6) and x10 scaling. Document frequency
/// comes from the corpus references; idf = ln((N + 1) / max(df, 1)).
double cider(const Corpus& corpus);

struct InceptionScore {
  double mean = 0, std = 0;
};
/// exp(mean KL(p(y|x) || p(y))) per contiguous split of the rows; mean and
/// population std over splits. Rows are class distributions.
InceptionScore inception_score(const std::vector<std::vector<double>>& probs, std::size_t splits);

/// Exact two-sided binomial test: total probability of outcomes no more
/// likely than k under Binomial(n, p0), summed in log space.
double binomial_test_two_sided(long k, long n, double p0 = 0.5);

struct BinomialResult {
  long k = 0, n = 0;
  double p_value = 1;
};

struct MetricReport {
  double bleu4 = 0, rouge_l = 0, meteor = 0, cider = 0;
  double inception_mean = 0, inception_std = 0;
  std::optional<double> color_accuracy;
  std::optional<BinomialResult> binomial;

  /// metrics.csv (metric,value) and report.txt in `dir`.
  void write(const std::filesystem::path& dir) const;
};

}  // namespace cyclecap::metrics

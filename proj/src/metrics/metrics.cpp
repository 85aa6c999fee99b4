#include "cyclecap/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace cyclecap::metrics {

namespace {

using Counts = std::map<Tokens, double>;

Counts ngrams(const Tokens& t, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) c[Tokens(t.begin() + i, t.begin() + i + n)] += 1;
  return c;
}

void check_pair(const EvalPair& p) {
  if (p.references.empty()) throw std::invalid_argument("evaluation pair without references");
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double meteor_pair(const Tokens& cand, const Tokens& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  std::vector<long> align(cand.size(), -1);
  std::vector<bool> used(ref.size(), false);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (align[i] >= 0) continue;
      const auto key = pass == 0 ? cand[i] : stem(cand[i]);
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (used[j] || (pass == 0 ? ref[j] : stem(ref[j])) != key) continue;
        align[i] = static_cast<long>(j);
        used[j] = true;
        break;
      }
    }
  }
  std::size_t m = 0, chunks = 0;
  long prev = -2;
  bool prev_matched = false;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (align[i] < 0) {
      prev_matched = false;
      continue;
    }
    ++m;
    if (!prev_matched || align[i] != prev + 1) ++chunks;
    prev = align[i];
    prev_matched = true;
  }
  if (m == 0) return 0.0;
  const double p = double(m) / cand.size(), r = double(m) / ref.size();
  const double fmean = 10 * p * r / (r + 9 * p);
  const double frag = m > 1 ? double(chunks - 1) / double(m - 1) : 0.0;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

}  // namespace

double bleu4(const Corpus& corpus) {
  double match[5] = {0, 0, 0, 0, 0}, total[5] = {0, 0, 0, 0, 0};
  double cand_len = 0, ref_len = 0;
  for (const auto& pair : corpus) {
    check_pair(pair);
    const auto& c = pair.candidate;
    cand_len += c.size();
    // Closest reference length; ties go to the shorter reference.
    std::size_t best = pair.references.front().size();
    for (const auto& r : pair.references) {
      const auto d = std::abs(long(r.size()) - long(c.size())), bd = std::abs(long(best) - long(c.size()));
      if (d < bd || (d == bd && r.size() < best)) best = r.size();
    }
    ref_len += best;
    for (std::size_t n = 1; n <= 4; ++n) {
      auto cc = ngrams(c, n);
      Counts max_ref;
      for (const auto& r : pair.references)
        for (const auto& [g, k] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : cc) {
        auto it = max_ref.find(g);
        match[n] += std::min(k, it == max_ref.end() ? 0.0 : it->second);
        total[n] += k;
      }
    }
  }
  if (cand_len == 0 || match[1] == 0) return 0.0;
  double log_p = std::log(match[1] / total[1]);
  for (int n = 2; n <= 4; ++n) log_p += std::log((match[n] + 1) / (total[n] + 1));
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_p / 4);
}

double rouge_l(const Corpus& corpus) {
  if (corpus.empty()) return 0.0;
  constexpr double kBeta2 = 1.2 * 1.2;
  double sum = 0;
  for (const auto& pair : corpus) {
    check_pair(pair);
    double best = 0;
    for (const auto& r : pair.references) {
      if (pair.candidate.empty() || r.empty()) continue;
      const double l = static_cast<double>(lcs(pair.candidate, r));
      if (l == 0) continue;
      const double p = l / pair.candidate.size(), rec = l / r.size();
      best = std::max(best, (1 + kBeta2) * p * rec / (rec + kBeta2 * p));
    }
    sum += best;
  }
  return sum / corpus.size();
}

std::string stem(const std::string& w) {
  for (const char* suffix : {"ing", "ed", "es", "ly", "s"}) {
    const std::string s(suffix);
    if (w.size() >= s.size() + 3 && w.compare(w.size() - s.size(), s.size(), s) == 0) return w.substr(0, w.size() - s.size());
  }
  return w;
}

double meteor_lite(const Corpus& corpus) {
  if (corpus.empty()) return 0.0;
  double sum = 0;
  for (const auto& pair : corpus) {
    check_pair(pair);
    double best = 0;
    for (const auto& r : pair.references) best = std::max(best, meteor_pair(pair.candidate, r));
    sum += best;
  }
  return sum / corpus.size();
}

double cider(const Corpus& corpus) {
  if (corpus.empty()) return 0.0;
  constexpr double kSigma = 6.0;
  const double n_images = static_cast<double>(corpus.size());
  std::map<Tokens, double> df;
  for (const auto& pair : corpus) {
    check_pair(pair);
    std::set<Tokens> seen;
    for (const auto& r : pair.references)
      for (std::size_t n = 1; n <= 4; ++n)
        for (const auto& [g, k] : ngrams(r, n)) seen.insert(g);
    for (const auto& g : seen) df[g] += 1;
  }
  auto weigh = [&](const Tokens& t, std::size_t n, double& norm) {
    auto c = ngrams(t, n);
    norm = 0;
    for (auto& [g, k] : c) {
      auto it = df.find(g);
      k *= std::log((n_images + 1) / std::max(1.0, it == df.end() ? 0.0 : it->second));
      norm += k * k;
    }
    norm = std::sqrt(norm);
    return c;
  };
  double total = 0;
  for (const auto& pair : corpus) {
    double score = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
      double norm_c = 0;
      const auto vc = weigh(pair.candidate, n, norm_c);
      double acc = 0;
      for (const auto& r : pair.references) {
        double norm_r = 0;
        const auto vr = weigh(r, n, norm_r);
        if (norm_c == 0 || norm_r == 0) continue;
        double dot = 0;
        for (const auto& [g, k] : vc) {
          auto it = vr.find(g);
          if (it != vr.end()) dot += std::min(k, it->second) * it->second;
        }
        const double delta = double(pair.candidate.size()) - double(r.size());
        acc += dot / (norm_c * norm_r) * std::exp(-delta * delta / (2 * kSigma * kSigma));
      }
      score += acc / pair.references.size();
    }
    total += 10.0 * score / 4;
  }
  return total / n_images;
}

InceptionScore inception_score(const std::vector<std::vector<double>>& probs, std::size_t splits) {
  if (splits == 0 || probs.size() < splits) throw std::invalid_argument("inception_score: need at least one row per split");
  const std::size_t classes = probs.front().size();
  std::vector<double> scores;
  for (std::size_t s = 0; s < splits; ++s) {
    const std::size_t b = s * probs.size() / splits, e = (s + 1) * probs.size() / splits;
    std::vector<double> marginal(classes, 0.0);
    for (std::size_t i = b; i < e; ++i) {
      if (probs[i].size() != classes) throw std::invalid_argument("inception_score: ragged class distributions");
      for (std::size_t k = 0; k < classes; ++k) marginal[k] += probs[i][k] / double(e - b);
    }
    double kl = 0;
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t k = 0; k < classes; ++k)
        if (probs[i][k] > 0) kl += probs[i][k] * (std::log(probs[i][k]) - std::log(marginal[k]));
    scores.push_back(std::exp(kl / double(e - b)));
  }
  InceptionScore out;
  for (double v : scores) out.mean += v / scores.size();
  for (double v : scores) out.std += (v - out.mean) * (v - out.mean) / scores.size();
  out.std = std::sqrt(out.std);
  return out;
}

double binomial_test_two_sided(long k, long n, double p0) {
  if (n < 0 || k < 0 || k > n) throw std::invalid_argument("binomial test needs 0 <= k <= n");
  if (!(p0 > 0 && p0 < 1)) throw std::invalid_argument("binomial test needs 0 < p0 < 1");
  auto log_pmf = [&](long j) {
    return std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) + j * std::log(p0) +
           (n - j) * std::log1p(-p0);
  };
  // Relative slack so that outcomes tied with k in exact arithmetic count.
  const double threshold = log_pmf(k) + 1e-7;
  double max_log = -INFINITY;
  std::vector<double> terms;
  for (long j = 0; j <= n; ++j) {
    const double l = log_pmf(j);
    if (l <= threshold) {
      terms.push_back(l);
      max_log = std::max(max_log, l);
    }
  }
  double s = 0;
  for (double l : terms) s += std::exp(l - max_log);
  return std::min(1.0, std::exp(max_log + std::log(s)));
}

void MetricReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, double>> rows{{"bleu4", bleu4},        {"rouge_l", rouge_l},
                                                   {"meteor_lite", meteor}, {"cider", cider},
                                                   {"inception_mean", inception_mean},
                                                   {"inception_std", inception_std}};
  if (color_accuracy) rows.emplace_back("color_accuracy", *color_accuracy);
  if (binomial) {
    rows.emplace_back("binom_k", double(binomial->k));
    rows.emplace_back("binom_n", double(binomial->n));
    rows.emplace_back("binom_p", binomial->p_value);
  }
  std::ofstream csv(dir / "metrics.csv");
  std::ofstream txt(dir / "report.txt");
  csv << "metric,value\n";
  for (const auto& [name, v] : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    csv << name << ',' << buf << '\n';
    std::snprintf(buf, sizeof buf, "%-16s %.4g", name.c_str(), v);
    txt << buf << '\n';
  }
  if (!csv || !txt) throw std::runtime_error("cannot write report to " + dir.string());
}

}  // namespace cyclecap::metrics

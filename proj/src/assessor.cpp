#include "reflex/assessor.hpp"

#include "reflex/parallel.hpp"
#include "reflex/rng.hpp"

#include <boost/math/distributions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <memory>

namespace reflex {

double default_prior_weight(std::size_t j) {
  if (j == 0)
    throw PreconditionError("prior weight: stages are numbered from 1");
  const double x = static_cast<double>(j);
  return 1.0 / (x * x);
}

RecursivePosterior posterior_update(const RecursivePosterior& post, int y, double alpha_j,
                                    double beta_j) {
  if (y != 0 && y != 1)
    throw PreconditionError("posterior_update: indicator must be 0 or 1");
  if (!(alpha_j > 0.0) || !(beta_j > 0.0))
    throw PreconditionError("posterior_update: prior weights must be positive");
  RecursivePosterior out = post;
  out.k += 1;
  out.sum_alpha += alpha_j;
  out.sum_beta += beta_j;
  out.sum_y += y;
  return out;
}

RecursivePosterior posterior_update(const RecursivePosterior& post, int y) {
  const double w = default_prior_weight(post.k + 1);
  return posterior_update(post, y, w, w);
}

PosteriorSummary beta_summary(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0))
    throw PreconditionError("beta_summary: parameters must be positive");
  PosteriorSummary s;
  const double n = a + b;
  s.mean = a / n;
  s.variance = a * b / (n * n * (n + 1.0));
  boost::math::beta_distribution<double> dist(a, b);
  s.lower = boost::math::quantile(dist, 0.025);
  s.upper = boost::math::quantile(dist, 0.975);
  return s;
}

PosteriorSummary posterior_summary(const RecursivePosterior& post) {
  return beta_summary(post.a(), post.b());
}

double AdaptiveBound::current() const {
  if (j == 0)
    throw PreconditionError("adaptive bound: stage counter must be at least 1");
  return c_hat / std::log(static_cast<double>(j) + 1.0);
}

double AdaptiveBound::step(int y_prev) {
  if (y_prev != 0 && y_prev != 1)
    throw PreconditionError("adaptive bound: indicator must be 0 or 1");
  c_hat = std::max(c_min, c_hat + step_size * (2.0 * y_prev - 1.0));
  ++j;
  return current();
}

void BlockScheme::validate() const {
  if (sizes.empty()) {
    if (block_size == 0 || stages == 0)
      throw PreconditionError("block scheme: block size and stage count must be positive");
  } else {
    if (sizes.size() != stages)
      throw PreconditionError("block scheme: explicit sizes must list one size per stage");
    for (auto n : sizes)
      if (n == 0)
        throw PreconditionError("block scheme: block sizes must be positive");
  }
}

std::size_t BlockScheme::size(std::size_t j) const {
  if (j == 0 || j > stages)
    throw PreconditionError("block scheme: stage out of range");
  return sizes.empty() ? block_size : sizes[j - 1];
}

std::size_t BlockScheme::total() const {
  if (sizes.empty())
    return block_size * stages;
  std::size_t t = 0;
  for (auto n : sizes)
    t += n;
  return t;
}

void AssessorConfig::validate() const {
  scheme.validate();
  if (!(initial_c_hat > 0.0))
    throw PreconditionError("assessor: initial C-hat must be positive");
  if (!(c_min > 0.0))
    throw PreconditionError("assessor: C_min must be positive");
  if (!(bound_step >= 0.0))
    throw PreconditionError("assessor: bound step must be non-negative");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw PreconditionError("assessor: threshold must lie in (0, 1)");
}

AssessmentReport assess_statistics(std::span<const double> statistics, const AssessorConfig& cfg,
                                   const char* positive_label, const char* negative_label) {
  AssessmentReport rep;
  AdaptiveBound bound{std::max(cfg.c_min, cfg.initial_c_hat), 1, cfg.bound_step, cfg.c_min};
  RecursivePosterior post;
  int prev_y = 0;
  for (std::size_t j = 1; j <= statistics.size(); ++j) {
    const double c = j == 1 ? bound.current() : bound.step(prev_y);
    const double stat = statistics[j - 1];
    if (std::isnan(stat))
      throw NumericalError("assessor: stage statistic is NaN at stage " + std::to_string(j));
    const int y = std::abs(stat) <= c ? 1 : 0;
    post = posterior_update(post, y);
    StageRecord r;
    r.stage = j;
    r.block_size = j <= cfg.scheme.stages ? cfg.scheme.size(j) : 0;
    r.statistic = stat;
    r.bound = c;
    r.y = y;
    r.summary = posterior_summary(post);
    rep.stages.push_back(r);
    prev_y = y;
  }
  rep.posterior = post;
  if (post.k > 0) {
    rep.summary = posterior_summary(post);
    rep.positive = rep.summary.mean >= cfg.threshold;
  }
  rep.verdict = rep.positive ? positive_label : negative_label;
  return rep;
}

// ---------------------------------------------------------------------------

SeriesSource series_from_values(std::vector<double> values, std::string label) {
  auto data = std::make_shared<const std::vector<double>>(std::move(values));
  SeriesSource s;
  s.length = data->size();
  s.term = [data](std::uint64_t n) { return (*data)[n - 1]; };
  s.label = std::move(label);
  return s;
}

std::vector<std::string> builtin_series_names() {
  return {"one-over-n", "one-over-n-squared", "one-over-sqrt-n", "alternating-harmonic",
          "mobius-dirichlet"};
}

SeriesSource builtin_series(const std::string& name, double exponent, std::uint64_t terms) {
  SeriesSource s;
  s.label = name;
  if (name == "one-over-n") {
    s.term = [](std::uint64_t n) { return 1.0 / static_cast<double>(n); };
  } else if (name == "one-over-n-squared") {
    s.term = [](std::uint64_t n) {
      const double x = static_cast<double>(n);
      return 1.0 / (x * x);
    };
  } else if (name == "one-over-sqrt-n") {
    s.term = [](std::uint64_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  } else if (name == "alternating-harmonic") {
    s.term = [](std::uint64_t n) {
      return (n % 2 == 1 ? 1.0 : -1.0) / static_cast<double>(n);
    };
  } else if (name == "mobius-dirichlet") {
    if (!std::isfinite(exponent))
      throw PreconditionError("mobius-dirichlet: exponent must be finite");
    auto mu = std::make_shared<const std::vector<std::int8_t>>(mobius_sieve(terms));
    s.length = terms;
    s.term = [mu, exponent](std::uint64_t n) {
      const int m = (*mu)[n];
      return m == 0 ? 0.0 : m / std::pow(static_cast<double>(n), exponent);
    };
  } else {
    throw PreconditionError("unknown series '" + name + "'");
  }
  return s;
}

std::vector<double> block_sums(const SeriesSource& source, const BlockScheme& scheme,
                               std::size_t stages, int workers) {
  std::vector<std::uint64_t> start(stages + 1, 1);
  for (std::size_t j = 1; j <= stages; ++j)
    start[j] = start[j - 1] + scheme.size(j);
  std::vector<double> sums(stages, 0.0);
  parallel_for(stages, workers, [&](std::size_t j) {
    double acc = 0.0;
    for (std::uint64_t n = start[j]; n < start[j + 1]; ++n)
      acc += source.term(n);
    sums[j] = acc;
  });
  return sums;
}

AssessmentReport assess_series(const SeriesSource& source, const AssessorConfig& cfg,
                               int workers) {
  cfg.validate();
  std::size_t stages = cfg.scheme.stages;
  bool short_stream = false;
  if (source.length) {
    std::uint64_t used = 0;
    std::size_t complete = 0;
    while (complete < stages && used + cfg.scheme.size(complete + 1) <= *source.length) {
      used += cfg.scheme.size(complete + 1);
      ++complete;
    }
    short_stream = complete < stages;
    stages = complete;
  }
  const auto sums = block_sums(source, cfg.scheme, stages, workers);
  auto rep = assess_statistics(sums, cfg, "CONVERGENT", "DIVERGENT");
  if (short_stream)
    throw PartialResult("series '" + source.label + "' exhausted after " +
                            std::to_string(stages) + " of " +
                            std::to_string(cfg.scheme.stages) + " stages",
                        std::move(rep));
  return rep;
}

std::vector<std::int8_t> mobius_sieve(std::uint64_t limit, std::uint64_t max_bytes) {
  if (limit == 0)
    throw PreconditionError("mobius_sieve: limit must be at least 1");
  if (limit >= (std::uint64_t{1} << 32))
    throw BudgetError("mobius_sieve: limit exceeds 2^32");
  // μ table + composite bitmap + prime list (π(n) < 1.26 n / ln n).
  const double est_primes = limit < 17 ? 8.0 : 1.26 * static_cast<double>(limit) /
                                                   std::log(static_cast<double>(limit));
  const double bytes =
      static_cast<double>(limit + 1) * 1.125 + est_primes * sizeof(std::uint32_t);
  if (bytes > static_cast<double>(max_bytes))
    throw BudgetError("mobius_sieve: " + std::to_string(limit) + " terms need about " +
                      std::to_string(static_cast<std::uint64_t>(bytes)) +
                      " bytes, over the budget of " + std::to_string(max_bytes));
  const auto n = static_cast<std::uint32_t>(limit);
  std::vector<std::int8_t> mu(limit + 1, 0);
  std::vector<bool> composite(limit + 1, false);
  std::vector<std::uint32_t> primes;
  primes.reserve(static_cast<std::size_t>(est_primes));
  mu[1] = 1;
  for (std::uint64_t i = 2; i <= n; ++i) {
    if (!composite[i]) {
      primes.push_back(static_cast<std::uint32_t>(i));
      mu[i] = -1;
    }
    for (std::uint32_t p : primes) {
      const std::uint64_t m = i * p;
      if (m > n)
        break;
      composite[m] = true;
      if (i % p == 0) {
        mu[m] = 0;
        break;
      }
      mu[m] = static_cast<std::int8_t>(-mu[i]);
    }
  }
  return mu;
}

// ---------------------------------------------------------------------------

double edf_sup_distance_sorted(std::span<const double> block, std::span<const double> pooled) {
  if (block.empty() || pooled.empty())
    throw PreconditionError("edf_sup_distance: samples must be non-empty");
  const double nb = static_cast<double>(block.size());
  const double np = static_cast<double>(pooled.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < block.size() || j < pooled.size()) {
    double v;
    if (i == block.size())
      v = pooled[j];
    else if (j == pooled.size())
      v = block[i];
    else
      v = std::min(block[i], pooled[j]);
    while (i < block.size() && block[i] == v)
      ++i;
    while (j < pooled.size() && pooled[j] == v)
      ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / nb - static_cast<double>(j) / np));
  }
  return best;
}

double edf_sup_distance(std::span<const double> block, std::span<const double> pooled) {
  std::vector<double> b(block.begin(), block.end()), p(pooled.begin(), pooled.end());
  for (double x : b)
    if (std::isnan(x))
      throw PreconditionError("edf_sup_distance: NaN in sample");
  for (double x : p)
    if (std::isnan(x))
      throw PreconditionError("edf_sup_distance: NaN in sample");
  std::sort(b.begin(), b.end());
  std::sort(p.begin(), p.end());
  return edf_sup_distance_sorted(b, p);
}

namespace {

constexpr std::size_t kMinStationarityBlock = 10;

void check_series(std::span<const double> series, std::size_t stages) {
  if (stages == 0)
    throw PreconditionError("stationarity: need at least one block");
  if (series.size() / stages < kMinStationarityBlock)
    throw PreconditionError("stationarity: series of length " + std::to_string(series.size()) +
                            " is too short for " + std::to_string(stages) + " blocks of at least " +
                            std::to_string(kMinStationarityBlock));
  for (double x : series)
    if (!std::isfinite(x))
      throw PreconditionError("stationarity: series contains a non-finite value");
}

double block_distance(std::span<const double> series, const std::vector<double>& pooled,
                      std::size_t len, std::size_t j) {
  std::vector<double> block(series.begin() + static_cast<std::ptrdiff_t>(j * len),
                            series.begin() + static_cast<std::ptrdiff_t>((j + 1) * len));
  std::sort(block.begin(), block.end());
  return edf_sup_distance_sorted(block, pooled);
}

std::vector<double> sorted_pool(std::span<const double> series, std::size_t used) {
  std::vector<double> pooled(series.begin(), series.begin() + static_cast<std::ptrdiff_t>(used));
  std::sort(pooled.begin(), pooled.end());
  return pooled;
}

} // namespace

std::vector<double> block_edf_distances(std::span<const double> series, std::size_t stages,
                                        int workers) {
  check_series(series, stages);
  const std::size_t len = series.size() / stages;
  const auto pooled = sorted_pool(series, len * stages);
  std::vector<double> out(stages);
  parallel_for(stages, workers,
               [&](std::size_t j) { out[j] = block_distance(series, pooled, len, j); });
  return out;
}

std::vector<double> block_edf_distances_serial(std::span<const double> series,
                                               std::size_t stages) {
  check_series(series, stages);
  const std::size_t len = series.size() / stages;
  const auto pooled = sorted_pool(series, len * stages);
  std::vector<double> out(stages);
  for (std::size_t j = 0; j < stages; ++j)
    out[j] = block_distance(series, pooled, len, j);
  return out;
}

AssessmentReport assess_stationarity(std::span<const double> series, const AssessorConfig& cfg,
                                     int workers) {
  AssessorConfig c = cfg;
  c.scheme.sizes.clear();
  c.scheme.block_size = std::max<std::size_t>(1, series.size() / std::max<std::size_t>(1, cfg.scheme.stages));
  c.validate();
  const auto d = block_edf_distances(series, c.scheme.stages, workers);
  return assess_statistics(d, c, "STATIONARY", "NONSTATIONARY");
}

std::vector<double> ar1_series(double rho, std::size_t n, std::uint64_t seed) {
  if (!std::isfinite(rho))
    throw PreconditionError("ar1: rho must be finite");
  Stream rng(seed, StreamTag::Series);
  std::vector<double> x(n);
  double prev = std::abs(rho) < 1.0 ? rng.normal() / std::sqrt(1.0 - rho * rho) : 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    prev = rho * prev + rng.normal();
    x[t] = prev;
  }
  return x;
}

} // namespace reflex

#pragma once

// Recursive Beta-Binomial assessment of series convergence and time-series
// stationarity. Each stage contributes an indicator y_j; the posterior on
// the "success" probability after k stages is
//   Beta(Σα_j + Σy_j, k + Σβ_j − Σy_j),  α_j = β_j = 1/j².

#include "reflex/errors.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace reflex {

struct RecursivePosterior {
  std::size_t k = 0;
  double sum_alpha = 0.0;
  double sum_beta = 0.0;
  double sum_y = 0.0;

  double a() const noexcept { return sum_alpha + sum_y; }
  double b() const noexcept { return static_cast<double>(k) + sum_beta - sum_y; }
};

/// Default prior weight α_j = β_j = 1/j².
double default_prior_weight(std::size_t j);

RecursivePosterior posterior_update(const RecursivePosterior& post, int y, double alpha_j,
                                    double beta_j);

/// Update at stage k+1 with the default weights.
RecursivePosterior posterior_update(const RecursivePosterior& post, int y);

struct PosteriorSummary {
  double mean = 0.0;
  double variance = 0.0;
  double lower = 0.0; // 2.5% quantile
  double upper = 0.0; // 97.5% quantile
};

PosteriorSummary beta_summary(double a, double b);
PosteriorSummary posterior_summary(const RecursivePosterior& post);

/// c_j = Ĉ_j / log(j + 1), with Ĉ_j = max(C_min, Ĉ_{j-1} + step·(2y_{j-1} − 1)).
struct AdaptiveBound {
  double c_hat = 0.1;
  std::size_t j = 0;
  double step_size = 0.05;
  double c_min = 0.01;

  /// Bound at the current stage; requires j ≥ 1.
  double current() const;
  /// Advances to stage j + 1 given the previous indicator; returns c_{j+1}.
  double step(int y_prev);
};

struct BlockScheme {
  std::size_t block_size = 1000;       // n_j when `sizes` is empty
  std::size_t stages = 200;            // K
  std::vector<std::size_t> sizes;      // optional explicit n_1..n_K

  void validate() const;
  std::size_t size(std::size_t j) const; // 1-based stage
  std::size_t total() const;
};

struct AssessorConfig {
  BlockScheme scheme;
  double initial_c_hat = 0.1;
  double bound_step = 0.05;
  double c_min = 0.01;
  double threshold = 0.5;

  void validate() const;
};

struct StageRecord {
  std::size_t stage = 0;
  std::size_t block_size = 0;
  double statistic = 0.0; // |S_j| or an EDF distance
  double bound = 0.0;
  int y = 0;
  PosteriorSummary summary;
};

struct AssessmentReport {
  std::vector<StageRecord> stages;
  RecursivePosterior posterior;
  PosteriorSummary summary;
  bool positive = false; // final mean ≥ threshold
  std::string verdict;
};

/// A stream ran out before all stages were processed. Carries the stages
/// that did complete.
class PartialResult : public Error {
public:
  PartialResult(const std::string& msg, AssessmentReport report)
      : Error(msg), report_(std::move(report)) {}
  const AssessmentReport& report() const noexcept { return report_; }

private:
  AssessmentReport report_;
};

/// Runs the recursion over precomputed per-stage statistics.
AssessmentReport assess_statistics(std::span<const double> statistics, const AssessorConfig& cfg,
                                   const char* positive_label, const char* negative_label);

// ---------------------------------------------------------------------------
// Series

/// Terms X_1, X_2, ... addressed by 1-based index. `length` bounds the
/// stream when it is finite.
struct SeriesSource {
  std::function<double(std::uint64_t)> term;
  std::optional<std::uint64_t> length;
  std::string label;
};

SeriesSource series_from_values(std::vector<double> values, std::string label);

/// Named series: one-over-n, one-over-n-squared, one-over-sqrt-n,
/// alternating-harmonic, mobius-dirichlet (μ(n)/n^exponent). `terms` sizes
/// the Möbius table.
SeriesSource builtin_series(const std::string& name, double exponent, std::uint64_t terms);

std::vector<std::string> builtin_series_names();

/// Block partial sums S_j, one OpenMP task per block.
std::vector<double> block_sums(const SeriesSource& source, const BlockScheme& scheme,
                               std::size_t stages, int workers);

/// CONVERGENT / DIVERGENT by the final posterior mean. Throws PartialResult
/// when the source is shorter than the scheme.
AssessmentReport assess_series(const SeriesSource& source, const AssessorConfig& cfg,
                               int workers);

/// μ(1..limit) by a linear sieve; index 0 is unused. Throws BudgetError
/// when the tables would exceed `max_bytes`.
std::vector<std::int8_t> mobius_sieve(std::uint64_t limit,
                                      std::uint64_t max_bytes = std::uint64_t{1} << 30);

// ---------------------------------------------------------------------------
// Stationarity

/// sup_x |F_block(x) − F_pooled(x)| over half-lines (−∞, x].
double edf_sup_distance(std::span<const double> block, std::span<const double> pooled);

/// Same, on inputs already sorted ascending.
double edf_sup_distance_sorted(std::span<const double> block, std::span<const double> pooled);

/// Distance of each of `stages` contiguous equal blocks to the pooled EDF.
std::vector<double> block_edf_distances(std::span<const double> series, std::size_t stages,
                                        int workers);
std::vector<double> block_edf_distances_serial(std::span<const double> series,
                                               std::size_t stages);

/// STATIONARY / NONSTATIONARY. Uses scheme.stages contiguous blocks of
/// length N / K (the remainder is dropped); scheme.block_size is ignored.
AssessmentReport assess_stationarity(std::span<const double> series, const AssessorConfig& cfg,
                                     int workers);

/// x_t = ρ x_{t-1} + ε_t, ε_t ~ N(0, 1). Starts from the stationary law when
/// |ρ| < 1 and from 0 otherwise.
std::vector<double> ar1_series(double rho, std::size_t n, std::uint64_t seed);

} // namespace reflex

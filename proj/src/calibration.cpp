#include "reflex/calibration.hpp"

#include "reflex/errors.hpp"
#include "reflex/parallel.hpp"
#include "reflex/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace reflex {

void CalibrationConfig::validate() const {
  if (!(eta > 0.0 && eta < 1.0))
    throw PreconditionError("calibration: eta must lie in (0, 1)");
  if (n_min == 0 || n_min > n_max)
    throw PreconditionError("calibration: need 0 < n_min <= n_max");
  if (!(target_rel_se > 0.0))
    throw PreconditionError("calibration: target_rel_se must be positive");
  if (!(p_floor >= 0.0 && p_floor < 1.0))
    throw PreconditionError("calibration: p_floor must lie in [0, 1)");
  if (pilot_iters < 2)
    throw PreconditionError("calibration: pilot needs at least 2 iterations");
}

void update_minorisation(RegionCalibration& rc, const CalibrationConfig& cfg) {
  rc.low_p_warning = false;
  if (rc.zero_weight() || rc.log_s_hat == kOutOfSupport) {
    rc.p_hat = 0.0;
    return;
  }
  const double ratio = std::exp(rc.log_s_hat - rc.log_S_hat);
  double p = ratio - cfg.eta;
  if (!(p > 0.0)) {
    // The η margin swallowed the whole ratio; halve it instead so p̂ stays
    // a valid lower bound.
    p = 0.5 * ratio;
  }
  rc.p_hat = p;
  rc.low_p_warning = p < cfg.p_floor;
}

namespace {

std::string describe_point(const Vector& x) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  for (Eigen::Index i = 0; i < x.size(); ++i)
    os << (i ? ", " : "") << x[i];
  os << ')';
  return os.str();
}

// Running log-sum-exp of π̃ and π̃² with a moving reference point.
struct LogMoments {
  double ref = kOutOfSupport;
  double s1 = 0.0;
  double s2 = 0.0;
  std::size_t n = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = kOutOfSupport;

  void add(double l) {
    ++n;
    lo = std::min(lo, l);
    hi = std::max(hi, l);
    if (l == kOutOfSupport)
      return;
    if (l > ref) {
      double scale = std::exp(ref - l);
      s1 *= scale;
      s2 *= scale * scale;
      ref = l;
    }
    double w = std::exp(l - ref);
    s1 += w;
    s2 += w * w;
  }

  double log_mean() const {
    return s1 > 0.0 ? ref + std::log(s1 / static_cast<double>(n)) : kOutOfSupport;
  }

  double rel_se() const {
    if (!(s1 > 0.0))
      return 0.0;
    const double nn = static_cast<double>(n);
    const double m1 = s1 / nn;
    const double m2 = s2 / nn;
    const double var = std::max(m2 - m1 * m1, 0.0);
    return std::sqrt(var / nn) / m1;
  }
};

} // namespace

RegionCalibration calibrate_region(const TargetDistribution& target,
                                   const EllipsoidalPartition& partition, std::size_t region,
                                   const CalibrationConfig& cfg, std::uint32_t generation,
                                   std::size_t sample_multiplier) {
  cfg.validate();
  if (region >= partition.size())
    throw PreconditionError("calibration: region index out of range");
  if (target.dim() != partition.dim())
    throw PreconditionError("calibration: target and partition dimensions differ");

  Stream rng(cfg.seed, StreamTag::Calibration, region, generation);
  const std::size_t n_min = cfg.n_min * sample_multiplier;
  const std::size_t n_max = std::max(cfg.n_max * sample_multiplier, n_min);

  LogMoments acc;
  Vector x;
  std::size_t goal = n_min;
  for (;;) {
    while (acc.n < goal) {
      partition.sample_uniform_region(region, rng, x);
      double l = target.log_density(x);
      if (std::isnan(l))
        throw NumericalError("target '" + target.label() + "' returned NaN at " +
                             describe_point(x));
      if (l == std::numeric_limits<double>::infinity())
        throw NumericalError("target '" + target.label() + "' returned +inf at " +
                             describe_point(x));
      acc.add(l);
    }
    if (acc.rel_se() <= cfg.target_rel_se || acc.n >= n_max)
      break;
    goal = std::min(2 * acc.n, n_max);
  }

  RegionCalibration rc;
  rc.region = region;
  rc.generation = generation;
  rc.n_samples = acc.n;
  rc.log_mean_density = acc.log_mean();
  rc.log_weight = rc.log_mean_density == kOutOfSupport
                      ? kOutOfSupport
                      : partition.log_lebesgue_measure(region) + rc.log_mean_density;
  rc.weight_rel_se = acc.rel_se();
  rc.log_s_hat = acc.lo;
  rc.log_S_hat = acc.hi;
  update_minorisation(rc, cfg);
  return rc;
}

std::vector<double> normalize_log_weights(const std::vector<double>& log_weights) {
  double top = kOutOfSupport;
  for (double l : log_weights)
    top = std::max(top, l);
  if (top == kOutOfSupport)
    throw TargetUnreachable("every region has zero estimated mass");
  std::vector<double> w(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(log_weights[i] - top);
    total += w[i];
  }
  for (double& v : w)
    v /= total;
  return w;
}

namespace {

Calibration assemble(std::vector<RegionCalibration> regions) {
  std::vector<double> lw;
  lw.reserve(regions.size());
  for (const auto& r : regions)
    lw.push_back(r.log_weight);
  Calibration c;
  c.weights = normalize_log_weights(lw);
  c.regions = std::move(regions);
  return c;
}

} // namespace

Calibration calibrate_all(const TargetDistribution& target, const EllipsoidalPartition& partition,
                          const CalibrationConfig& cfg, int workers) {
  cfg.validate();
  std::vector<RegionCalibration> regions(partition.size());
  parallel_for(partition.size(), workers, [&](std::size_t i) {
    regions[i] = calibrate_region(target, partition, i, cfg);
  });
  return assemble(std::move(regions));
}

Calibration calibrate_all_serial(const TargetDistribution& target,
                                 const EllipsoidalPartition& partition,
                                 const CalibrationConfig& cfg) {
  cfg.validate();
  std::vector<RegionCalibration> regions;
  regions.reserve(partition.size());
  for (std::size_t i = 0; i < partition.size(); ++i)
    regions.push_back(calibrate_region(target, partition, i, cfg));
  return assemble(std::move(regions));
}

ExtendedCalibration extend_partition(const TargetDistribution& target,
                                     const EllipsoidalPartition& partition,
                                     const Calibration& calibration, std::size_t new_size,
                                     double radius_step, const CalibrationConfig& cfg,
                                     int workers) {
  if (calibration.regions.size() != partition.size())
    throw PreconditionError("extend: calibration does not match partition");
  EllipsoidalPartition grown = partition.extended(new_size, radius_step);
  std::vector<RegionCalibration> regions = calibration.regions;
  const std::size_t old_size = regions.size();
  regions.resize(grown.size());
  parallel_for(grown.size() - old_size, workers, [&](std::size_t k) {
    regions[old_size + k] = calibrate_region(target, grown, old_size + k, cfg);
  });
  return {std::move(grown), assemble(std::move(regions))};
}

namespace {

Matrix regularized_spd(Matrix cov) {
  cov = symmetrized(cov);
  const auto d = cov.rows();
  double jitter = std::max(cov.diagonal().cwiseAbs().maxCoeff(), 1.0) * 1e-12;
  for (int attempt = 0; attempt < 40; ++attempt) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success && cov.allFinite())
      return cov;
    cov += jitter * Matrix::Identity(d, d);
    jitter *= 10.0;
  }
  throw PilotFailure("pilot covariance could not be regularised to SPD");
}

} // namespace

PilotResult run_pilot(const TargetDistribution& target, const CalibrationConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(target.dim());
  const double dd = static_cast<double>(d);
  Stream rng(cfg.seed, StreamTag::Pilot);

  Vector x = cfg.pilot_start ? *cfg.pilot_start : Vector::Zero(d);
  if (x.size() != d)
    throw PreconditionError("pilot: start point dimension mismatch");
  double lx = target.log_density(x);
  if (!std::isfinite(lx))
    throw PilotFailure("pilot: target density at the start point is not positive and finite");

  constexpr std::size_t kEpoch = 100;
  constexpr double kTargetAcceptance = 0.234;
  const double base = 2.38 / std::sqrt(dd);
  double log_scale = 0.0;
  Matrix prop_lower = Matrix::Identity(d, d);
  bool shaped = false;

  // Running moments of the burn-in chain for the proposal shape.
  Vector run_mean = Vector::Zero(d);
  Matrix run_m2 = Matrix::Zero(d, d);
  std::size_t run_n = 0;

  Vector z(d), y(d);
  std::size_t epoch_accepts = 0, epoch_steps = 0;

  auto step = [&]() -> bool {
    for (Eigen::Index k = 0; k < d; ++k)
      z[k] = rng.normal();
    y = x + std::exp(log_scale) * base * (prop_lower * z);
    double ly = target.log_density(y);
    if (std::isnan(ly))
      throw NumericalError("target '" + target.label() + "' returned NaN at " +
                           describe_point(y));
    if (ly != kOutOfSupport && std::log(rng.uniform_open()) < ly - lx) {
      x = y;
      lx = ly;
      return true;
    }
    return false;
  };

  const std::size_t burnin = std::max<std::size_t>(cfg.pilot_burnin, kEpoch);
  for (std::size_t it = 0; it < burnin; ++it) {
    epoch_accepts += step() ? 1 : 0;
    ++epoch_steps;
    ++run_n;
    Vector delta = x - run_mean;
    run_mean += delta / static_cast<double>(run_n);
    run_m2 += delta * (x - run_mean).transpose();
    if (epoch_steps == kEpoch) {
      double rate = static_cast<double>(epoch_accepts) / static_cast<double>(kEpoch);
      if (epoch_accepts == 0) {
        // An epoch with no movement: shrink hard, and give up once the
        // step has collapsed by six orders of magnitude.
        log_scale -= std::log(10.0);
        if (log_scale < std::log(1e-6))
          throw PilotFailure("pilot: every proposal rejected for an entire tuning epoch "
                             "even at step scale 1e-6 (degenerate or point-mass target?)");
        // The chain has not moved; its history says nothing about shape.
        run_mean = x;
        run_m2.setZero();
        run_n = 1;
      } else {
        log_scale += 2.0 * (rate - kTargetAcceptance);
        if (run_n > 2 * static_cast<std::size_t>(d) + 10) {
          Matrix cov = symmetrized(run_m2 / static_cast<double>(run_n - 1));
          // A ridge keeps directions the chain has not explored yet alive.
          const double ridge = 1e-2 * cov.trace() / dd;
          cov.diagonal().array() += ridge;
          Eigen::LLT<Matrix> llt(cov);
          if (ridge > 0.0 && llt.info() == Eigen::Success && cov.allFinite()) {
            // The first learned shape already carries the target's scale.
            if (!shaped)
              log_scale = 0.0;
            shaped = true;
            prop_lower = llt.matrixL();
          }
        }
      }
      epoch_accepts = 0;
      epoch_steps = 0;
    }
  }

  Vector mean = Vector::Zero(d);
  Matrix m2 = Matrix::Zero(d, d);
  std::size_t accepts = 0;
  for (std::size_t it = 0; it < cfg.pilot_iters; ++it) {
    accepts += step() ? 1 : 0;
    Vector delta = x - mean;
    mean += delta / static_cast<double>(it + 1);
    m2 += delta * (x - mean).transpose();
  }
  if (accepts == 0)
    throw PilotFailure("pilot: no proposal accepted after burn-in");

  PilotResult out;
  out.mean = mean;
  out.covariance = regularized_spd(m2 / static_cast<double>(cfg.pilot_iters - 1));
  out.acceptance_rate = static_cast<double>(accepts) / static_cast<double>(cfg.pilot_iters);
  return out;
}

} // namespace reflex

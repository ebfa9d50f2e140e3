// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include "reflex/assessor.hpp"
#include "reflex/bandit.hpp"
#include "reflex/cli.hpp"
#include "reflex/engine.hpp"
#include "reflex/online.hpp"
#include "reflex/parallel.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace reflex;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> column(const RowMatrix& m, Eigen::Index j) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m(i, j);
  return v;
}

std::vector<double> unit_squares(std::size_t m) {
  std::vector<double> r;
  for (std::size_t i = 1; i <= m; ++i) r.push_back(double(i * i));
  return r;
}

const int kWorkers = default_workers();

// ---------------------------------------------------------------------------

Outcome iid_standard_normal() {
  int passed = 0;
  double worst_time = 0.0, worst_ks = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto t0 = Clock::now();
    SamplerConfig cfg;
    cfg.calibration.seed = seed;
    auto state = build_sampler(make_builtin(standard_normal(1)), cfg, 1);
    auto batch = draw_iid_batch(state, 10000, seed, 1);
    worst_time = std::max(worst_time, seconds_since(t0));
    double ks = oracle::ks_statistic(column(batch.samples, 0), oracle::normal_cdf);
    worst_ks = std::max(worst_ks, ks);
    passed += ks < 0.0163;
  }
  return {passed >= 9 && worst_time < 60.0,
          fmt("KS passes in %d/10 seeds (max D = %.4f), slowest single-worker run %.2f s", passed, worst_ks,
              worst_time)};
}

Outcome iid_correlated_normal() {
  const std::size_t d = 5;
  Matrix cov = Matrix::Identity(d, d);
  cov(0, 1) = cov(1, 0) = 0.5;
  auto target = make_builtin(NormalSpec{Vector::Zero(d), cov});
  std::vector<int> ks_pass(d, 0);
  double worst_corr = 0.0, worst_time = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto t0 = Clock::now();
    SamplerConfig cfg;
    cfg.calibration.seed = seed;
    auto state = build_sampler(target, cfg, kWorkers);
    auto batch = draw_iid_batch(state, 10000, seed, kWorkers);
    worst_time = std::max(worst_time, seconds_since(t0));
    for (std::size_t j = 0; j < d; ++j)
      ks_pass[j] += oracle::ks_statistic(column(batch.samples, j), oracle::normal_cdf) < 0.0163;
    Matrix centered = batch.samples.rowwise() - batch.samples.colwise().mean();
    Matrix emp = centered.transpose() * centered / double(batch.samples.rows() - 1);
    Vector sd = emp.diagonal().cwiseSqrt();
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        worst_corr = std::max(worst_corr, std::abs(emp(a, b) / (sd(a) * sd(b)) - cov(a, b)));
  }
  int min_pass = *std::min_element(ks_pass.begin(), ks_pass.end());
  return {min_pass >= 9 && worst_corr <= 0.05 && worst_time < 300.0,
          fmt("every coordinate passes KS in >= %d/10 seeds, max |corr error| %.4f, slowest run %.2f s", min_pass,
              worst_corr, worst_time)};
}

Outcome heavy_tails() {
  int t_pass = 0, c_pass = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SamplerConfig cfg;
    cfg.calibration.seed = seed;
    auto ts = build_sampler(make_builtin(standard_student_t(1, 5.0)), cfg, kWorkers);
    auto tb = draw_iid_batch(ts, 10000, seed, kWorkers);
    t_pass += oracle::ks_statistic(column(tb.samples, 0), [](double x) { return oracle::student_t_cdf(x, 5.0); }) <
              0.0163;
    auto cs = build_sampler(make_builtin(standard_cauchy(1)), cfg, kWorkers);
    auto cb = draw_iid_batch(cs, 10000, seed, kWorkers);
    c_pass += oracle::ks_statistic(column(cb.samples, 0), oracle::cauchy_cdf) < 0.0163;
  }
  // Minorisation constants on one shared partition.
  EllipsoidalPartition shared(Vector::Zero(1), Matrix::Identity(1, 1), unit_squares(8));
  CalibrationConfig cc;
  cc.seed = 1;
  auto min_p = [&](const Calibration& c) {
    double m = 1.0;
    for (const auto& r : c.regions)
      if (!r.zero_weight()) m = std::min(m, r.p_hat);
    return m;
  };
  double p_cauchy = min_p(calibrate_all(make_builtin(standard_cauchy(1)), shared, cc, kWorkers));
  double p_normal = min_p(calibrate_all(make_builtin(standard_normal(1)), shared, cc, kWorkers));
  return {t_pass >= 9 && c_pass >= 9 && p_cauchy >= p_normal,
          fmt("t(5) KS %d/10, Cauchy KS %d/10, min p-hat Cauchy %.4f vs normal %.3g", t_pass, c_pass, p_cauchy,
              p_normal)};
}

Outcome two_component_mixture() {
  MixtureSpec mix{{2.0 / 3.0, 1.0 / 3.0},
                  {NormalSpec{Vector::Zero(1), Matrix::Identity(1, 1)},
                   NormalSpec{Vector::Constant(1, 5.0), Matrix::Identity(1, 1)}}};
  auto cdf = [](double x) {
    return 2.0 / 3.0 * oracle::normal_cdf(x) + 1.0 / 3.0 * oracle::normal_cdf(x - 5.0);
  };
  int ks_pass = 0;
  double worst_frac = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SamplerConfig cfg;
    cfg.calibration.seed = seed;
    cfg.partition.radius_step = 0.25;
    auto state = build_sampler(make_builtin(mix), cfg, kWorkers);
    auto batch = draw_iid_batch(state, 10000, seed, kWorkers);
    auto xs = column(batch.samples, 0);
    double above = double(std::count_if(xs.begin(), xs.end(), [](double x) { return x > 2.5; })) / xs.size();
    worst_frac = std::max(worst_frac, std::abs(above - 1.0 / 3.0));
    ks_pass += oracle::ks_statistic(xs, cdf) < 0.0163;
  }
  return {worst_frac <= 0.02 && ks_pass >= 9,
          fmt("max |fraction above 2.5 - 1/3| = %.4f over 10 seeds, mixture KS %d/10", worst_frac, ks_pass)};
}

Outcome coalescence_law() {
  auto target = make_builtin(standard_normal(1));
  EllipsoidalPartition part(Vector::Zero(1), Matrix::Identity(1, 1), unit_squares(8));
  CalibrationConfig cc;
  cc.seed = 5;
  auto calib = calibrate_all(target, part, cc, kWorkers);
  bool ok = true;
  std::string detail;
  for (std::size_t region = 0; region < 4; ++region) {
    const auto& rc = calib.regions[region];
    std::vector<std::uint64_t> pooled;
    int gof_pass = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      std::vector<std::uint64_t> ts(10000);
      parallel_for(ts.size(), kWorkers, [&](std::size_t i) {
        Stream rng(seed, StreamTag::Test, region * 1'000'000 + i);
        ts[i] = perfect_sample(target, part, rc, rng).trace.coalescence_time;
      });
      auto gof = oracle::geometric_gof(ts, rc.p_hat);
      gof_pass += gof.statistic < oracle::chi_square_critical(gof.df, 0.01);
      pooled.insert(pooled.end(), ts.begin(), ts.end());
    }
    double mean = 0.0;
    for (auto t : pooled) mean += double(t);
    mean /= double(pooled.size());
    const double p = rc.p_hat;
    double z = (mean - 1.0 / p) / std::sqrt((1.0 - p) / (p * p) / double(pooled.size()));
    ok = ok && std::abs(z) < 3.0 && gof_pass >= 9;
    detail += fmt("%sregion %zu: p=%.4f z=%.2f GOF %d/10", region ? "; " : "", region + 1, p, z, gof_pass);
  }
  return {ok, detail};
}

Outcome truncated_component() {
  auto target = make_builtin(standard_normal(1));
  EllipsoidalPartition part(Vector::Zero(1), Matrix::Identity(1, 1), {1.0});
  CalibrationConfig cc;
  cc.seed = 6;
  auto rc = calibrate_region(target, part, 0, cc);
  std::vector<double> xs(100000);
  parallel_for(xs.size(), kWorkers, [&](std::size_t i) {
    Stream rng(6, StreamTag::Test, i);
    xs[i] = perfect_sample(target, part, rc, rng).x(0);
  });
  const double mass = oracle::normal_cdf(1.0) - oracle::normal_cdf(-1.0);
  double ks = oracle::ks_statistic(xs, [&](double x) {
    return std::clamp((oracle::normal_cdf(x) - oracle::normal_cdf(-1.0)) / mass, 0.0, 1.0);
  });
  double crit = oracle::ks_critical_1pct(xs.size());
  return {ks < crit, fmt("D = %.5f < %.5f", ks, crit)};
}

Outcome kalman_vs_conjugate() {
  oracle::Gen g(7);
  const std::size_t d = 2, m = 1, n = 100;
  Matrix h(m, d);
  h << 1.0, 0.5;
  Matrix r = Matrix::Constant(1, 1, 0.7);
  LinearGaussianModel model{Matrix::Identity(d, d), h, Matrix::Zero(d, d), r};
  GaussianBelief prior{Vector::Zero(d), 2.0 * Matrix::Identity(d, d)};
  Vector truth(2);
  truth << 0.8, -1.2;
  RowMatrix obs(n, m);
  for (std::size_t t = 0; t < n; ++t) obs(t, 0) = h.row(0).dot(truth) + std::sqrt(0.7) * g.normal();
  auto kf = kalman_filter(prior, model, obs).back();
  Matrix rinv = r.inverse();
  Matrix prec = prior.covariance.inverse() + double(n) * h.transpose() * rinv * h;
  Vector rhs = prior.covariance.inverse() * prior.mean;
  for (std::size_t t = 0; t < n; ++t) rhs += h.transpose() * rinv * obs.row(t).transpose();
  Matrix cov = prec.inverse();
  Vector mean = cov * rhs;
  double dm = (kf.mean - mean).cwiseAbs().maxCoeff();
  double dc = (kf.covariance - cov).cwiseAbs().maxCoeff();
  return {dm < 1e-10 && dc < 1e-10, fmt("max |mean diff| %.2e, max |cov diff| %.2e", dm, dc)};
}

Outcome particle_vs_kalman() {
  LinearGaussianModel model{Matrix::Constant(1, 1, 0.9), Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0),
                            Matrix::Constant(1, 1, 1.0)};
  GaussianBelief prior{Vector::Zero(1), Matrix::Identity(1, 1)};
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto traj = simulate_linear_gaussian(model, Vector::Zero(1), 100, seed);
    auto kf = kalman_filter(prior, model, traj.observations);
    auto e = gaussian_ensemble(prior, 10000, seed);
    double sse = 0.0;
    for (std::size_t t = 0; t < 100; ++t) {
      auto s = pf_step(e, linear_gaussian_transition(model), linear_gaussian_likelihood(model),
                       traj.observations.row(t).transpose(), 5000.0, seed, t, kWorkers);
      e = std::move(s.ensemble);
      double diff = ensemble_moments(e).mean(0) - kf[t].mean(0);
      sse += diff * diff;
    }
    worst = std::max(worst, std::sqrt(sse / 100.0));
  }
  return {worst < 0.1, fmt("largest per-seed RMSE %.4f", worst)};
}

Outcome thompson_regret() {
  BanditEnvironment env;
  for (double mu : {0.1, 0.2, 0.3, 0.4, 0.5}) env.arms.push_back(BernoulliArm{mu});
  const std::size_t horizon = 10000;
  std::vector<std::uint64_t> seeds(50);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i + 1;
  auto runs = run_bandit_seeds(env, Policy::Thompson, horizon, seeds, kWorkers);
  double final_mean = 0.0, rate_1k = 0.0, rate_10k = 0.0;
  for (const auto& r : runs) {
    final_mean += r.regret.final() / double(runs.size());
    rate_1k += r.regret.cumulative[1000] / 1000.0 / double(runs.size());
    rate_10k += r.regret.cumulative[10000] / 10000.0 / double(runs.size());
  }
  double bound = 0.0;
  for (std::size_t a = 0; a < env.size(); ++a) {
    double gap = env.best_mean() - env.arm_mean(a);
    if (gap > 0.0) bound += std::log(double(horizon)) / gap;
  }
  bound *= 3.0;
  return {final_mean <= bound && rate_10k < rate_1k,
          fmt("mean regret %.1f <= %.1f; R_t/t %.4f at 1e3 -> %.4f at 1e4", final_mean, bound, rate_1k, rate_10k)};
}

Outcome logistic_bridge() {
  const std::size_t k = 5;
  Matrix features(k, 2);
  for (std::size_t a = 0; a < k; ++a) {
    double angle = std::numbers::pi * double(a) / 4.0;
    features(a, 0) = std::cos(angle);
    features(a, 1) = std::sin(angle);
  }
  Vector w(2);
  w << 0.8, 0.4;
  LogisticBanditEnvironment env{features, w};
  std::vector<double> ts(20), uni(20);
  parallel_for(20, kWorkers, [&](std::size_t i) {
    ts[i] = run_logistic_bandit(env, Policy::Thompson, 2000, i + 1).regret.final();
    uni[i] = run_logistic_bandit(env, Policy::UniformRandom, 2000, i + 1).regret.final();
  });
  double mt = 0.0, mu = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    mt += ts[i] / 20.0;
    mu += uni[i] / 20.0;
  }
  return {mu >= 2.0 * mt, fmt("mean regret Thompson %.2f vs uniform %.2f (ratio %.1f)", mt, mu, mu / mt)};
}

Outcome series_assessor() {
  AssessorConfig cfg;
  struct Case {
    const char* name;
    double exponent;
    bool convergent;
  };
  bool ok = true;
  std::string detail;
  for (Case c : {Case{"one-over-n-squared", 2, true}, Case{"alternating-harmonic", 1, true},
                 Case{"one-over-n", 1, false}, Case{"one-over-sqrt-n", 0.5, false}}) {
    auto t0 = Clock::now();
    auto rep = assess_series(builtin_series(c.name, c.exponent, 0), cfg, kWorkers);
    double secs = seconds_since(t0);
    bool good = c.convergent ? rep.verdict == "CONVERGENT" && rep.summary.mean >= 0.9
                             : rep.verdict == "DIVERGENT" && rep.summary.mean <= 0.1;
    ok = ok && good && secs < 5.0;
    detail += fmt("%s%s %s %.3f (%.2f s)", detail.empty() ? "" : "; ", c.name, rep.verdict.c_str(),
                  rep.summary.mean, secs);
  }
  return {ok, detail};
}

Outcome mobius_probe() {
  auto mu = mobius_sieve(1'000'000);
  double s = 0.0;
  for (std::uint64_t n = 1; n <= 1'000'000; ++n) s += mu[n] / (double(n) * double(n));
  double err = std::abs(s - 6.0 / (std::numbers::pi * std::numbers::pi));
  AssessorConfig cfg;
  auto rep = assess_series(builtin_series("mobius-dirichlet", 2.0, cfg.scheme.total()), cfg, kWorkers);
  auto t0 = Clock::now();
  auto big = mobius_sieve(10'000'000);
  double secs = seconds_since(t0);
  return {err < 1e-3 && rep.verdict == "CONVERGENT" && secs < 10.0 && big.size() == 10'000'001,
          fmt("|sum - 6/pi^2| = %.2e; verdict %s (mean %.3f); sieve to 1e7 in %.2f s", err, rep.verdict.c_str(),
              rep.summary.mean, secs)};
}

Outcome stationarity() {
  AssessorConfig cfg;
  cfg.scheme.stages = 100;
  auto t0 = Clock::now();
  auto a = assess_stationarity(ar1_series(0.5, 200000, 13), cfg, kWorkers);
  double sa = seconds_since(t0);
  t0 = Clock::now();
  auto b = assess_stationarity(ar1_series(1.0, 200000, 13), cfg, kWorkers);
  double sb = seconds_since(t0);
  return {a.summary.mean >= 0.9 && b.summary.mean <= 0.1 && sa < 30.0 && sb < 30.0,
          fmt("rho=0.5 mean %.3f (%.2f s); rho=1 mean %.3f (%.2f s)", a.summary.mean, sa, b.summary.mean, sb)};
}

// Runs one command line at a given worker count and returns every file it
// wrote plus stdout, with wall-clock fields removed from JSON side files.
std::map<std::string, std::string> cli_outputs(const fs::path& dir, std::vector<std::string> args, int workers,
                                               int& code) {
  for (auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind("out", 0) == 0) fs::remove(e.path());
  args.insert(args.begin(), "reflex");
  args.push_back("--workers");
  args.push_back(std::to_string(workers));
  std::ostringstream out, err;
  code = cli::run(args, out, err);
  std::map<std::string, std::string> files{{"<stdout>", out.str()}};
  for (auto& e : fs::directory_iterator(dir)) {
    auto name = e.path().filename().string();
    if (name.rfind("out", 0) != 0) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::string body{std::istreambuf_iterator<char>(in), {}};
    if (name.ends_with(".json")) {
      auto j = nlohmann::ordered_json::parse(body);
      j.erase("wall_seconds");
      body = j.dump();
    }
    files[name] = body;
  }
  return files;
}

Outcome determinism() {
  fs::path dir = fs::temp_directory_path() / ("reflex_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "obs.csv");
    Stream rng(14, StreamTag::Test);
    double x = 0.0;
    for (int t = 0; t < 60; ++t) {
      x = 0.9 * x + rng.normal();
      f << x + rng.normal() << "\n";
    }
  }
  auto p = [&](const char* name) { return (dir / name).string(); };
  std::vector<std::vector<std::string>> commands{
      {"sample", "--target", "std-normal", "--dim", "2", "--n", "3000", "--seed", "14", "--out", p("out.csv"),
       "--n-min", "20000"},
      {"sample", "--target", "cauchy", "--n", "3000", "--seed", "14", "--out", p("out.bin"), "--format", "f64le",
       "--regions", "2", "--n-min", "5000"},
      {"filter", "--method", "particle", "--observations", p("obs.csv"), "--particles", "5000", "--seed", "14",
       "--F", "0.9", "--out", p("out.csv")},
      {"filter", "--observations", p("obs.csv"), "--F", "0.9", "--out", p("out.csv")},
      {"bandit", "--means", "0.1,0.3,0.5", "--horizon", "2000", "--seeds", "8", "--seed", "14", "--out",
       p("out.csv")},
      {"bandit", "--arms", "logistic", "--features", "1,0,0,1,0.7,0.7", "--weight", "0.8,0.4", "--horizon", "150",
       "--seeds", "2", "--seed", "14", "--out", p("out.csv")},
      {"assess-series", "--series", "mobius-dirichlet", "--out", p("out.json"), "--trace", p("out_trace.csv")},
      {"assess-stationarity", "--rho", "0.5", "--length", "50000", "--seed", "14", "--out", p("out.json"),
       "--trace", p("out_trace.csv")},
  };
  int identical = 0;
  std::string failures;
  for (const auto& cmd : commands) {
    int c1 = -1, c8 = -1;
    auto a = cli_outputs(dir, cmd, 1, c1);
    auto b = cli_outputs(dir, cmd, 8, c8);
    bool same = c1 == 0 && c8 == 0 && a == b && a.size() > 1;
    identical += same;
    if (!same) failures += " " + cmd[0];
  }
  fs::remove_all(dir);
  return {identical == int(commands.size()),
          fmt("%d/%zu command lines byte-identical at 1 and 8 workers%s%s", identical, commands.size(),
              failures.empty() ? "" : "; differing:", failures.c_str())};
}

} // namespace

int main() {
  const auto start = Clock::now();
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  std::vector<Criterion> criteria{
      {1, "iid sampler, standard normal d=1", iid_standard_normal},
      {2, "iid sampler, correlated normal d=5", iid_correlated_normal},
      {3, "Student-t(5) and Cauchy d=1", heavy_tails},
      {4, "two-component mixture", two_component_mixture},
      {5, "coalescence law", coalescence_law},
      {6, "truncated-component exactness", truncated_component},
      {7, "Kalman vs batch conjugate", kalman_vs_conjugate},
      {8, "particle filter vs Kalman", particle_vs_kalman},
      {9, "Thompson sampling regret", thompson_regret},
      {10, "exact-sampler bandit bridge", logistic_bridge},
      {11, "series assessor", series_assessor},
      {12, "Mobius probe", mobius_probe},
      {13, "stationarity", stationarity},
      {14, "determinism across worker counts", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %2d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  double total = seconds_since(start);
  bool fast = total < 900.0;
  failed += !fast;
  std::printf("%s criterion 15 (full suite under 15 minutes): %.1f s with %d worker(s)\n", fast ? "PASS" : "FAIL",
              total, kWorkers);
  return failed == 0 ? 0 : 1;
}

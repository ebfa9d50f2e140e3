#include "reflex/cli.hpp"

#include "reflex/assessor.hpp"
#include "reflex/bandit.hpp"
#include "reflex/engine.hpp"
#include "reflex/online.hpp"
#include "reflex/parallel.hpp"

#include <CLI11.hpp>

#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace reflex::cli {

using ojson = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Parameter tables

enum class Kind { UInt, Real, Text, RealList };

struct Param {
  std::string key;
  Kind kind;
  ojson fallback; // null: no default
  std::string help;
  bool required = false;
};

const char* kind_name(Kind k) {
  switch (k) {
  case Kind::UInt:
    return "a non-negative integer";
  case Kind::Real:
    return "a number";
  case Kind::Text:
    return "a string";
  case Kind::RealList:
    return "a list of numbers";
  }
  return "?";
}

std::vector<Param> calibration_params() {
  return {
      {"radius_step", Kind::Real, 1.0, "Mahalanobis radius step between regions"},
      {"regions", Kind::UInt, 0, "initial region count M (0: tail-probability rule)"},
      {"max_regions", Kind::UInt, 1024, "largest partition doubling may reach"},
      {"n_min", Kind::UInt, 100000, "minimum calibration samples per region"},
      {"n_max", Kind::UInt, 1000000, "maximum calibration samples per region"},
      {"target_rel_se", Kind::Real, 0.01, "target relative SE of region weights"},
      {"eta", Kind::Real, 1e-5, "safety margin subtracted from s/S"},
      {"p_floor", Kind::Real, 1e-4, "minorisation constant below which a warning is raised"},
      {"pilot_iters", Kind::UInt, 10000, "pilot chain length after burn-in"},
      {"pilot_burnin", Kind::UInt, 2000, "pilot burn-in"},
  };
}

std::vector<Param> params_for(const std::string& sub) {
  std::vector<Param> p;
  if (sub == "sample") {
    p = {
        {"target", Kind::Text, nullptr,
         "std-normal, normal, student-t, cauchy, mixture or logistic", true},
        {"dim", Kind::UInt, 1, "dimension"},
        {"dof", Kind::Real, 5.0, "Student-t degrees of freedom"},
        {"mean", Kind::RealList, ojson::array(), "location (normal, student-t, cauchy)"},
        {"cov", Kind::RealList, ojson::array(), "row-major covariance or scale matrix"},
        {"weights", Kind::RealList, ojson::array(), "mixture weights"},
        {"means", Kind::RealList, ojson::array(), "row-major component means (mixture)"},
        {"variances", Kind::RealList, ojson::array(), "isotropic component variances (mixture)"},
        {"design", Kind::RealList, ojson::array(), "row-major design matrix (logistic)"},
        {"responses", Kind::RealList, ojson::array(), "successes per design row (logistic)"},
        {"trials", Kind::RealList, ojson::array(), "trials per design row (logistic)"},
        {"prior_variance", Kind::Real, 1.0, "isotropic prior variance (logistic)"},
        {"n", Kind::UInt, nullptr, "number of draws", true},
        {"seed", Kind::UInt, nullptr, "random seed", true},
        {"out", Kind::Text, nullptr, "samples output path", true},
        {"format", Kind::Text, "csv", "csv or f64le"},
        {"diagnostics", Kind::Text, "", "diagnostics JSON path (default <out>.diagnostics.json)"},
        {"emit_calibration", Kind::Text, "", "also write the calibration as JSON to this path"},
    };
    for (auto& c : calibration_params())
      p.push_back(c);
  } else if (sub == "filter") {
    p = {
        {"method", Kind::Text, "kalman", "kalman or particle"},
        {"observations", Kind::Text, nullptr, "observation CSV, one row per step", true},
        {"state_dim", Kind::UInt, 1, "state dimension"},
        {"obs_dim", Kind::UInt, 1, "observation dimension"},
        {"F", Kind::RealList, ojson::array({1.0}), "row-major transition matrix"},
        {"H", Kind::RealList, ojson::array({1.0}), "row-major observation matrix"},
        {"Q", Kind::RealList, ojson::array({1.0}), "row-major state noise covariance"},
        {"R", Kind::RealList, ojson::array({1.0}), "row-major observation noise covariance"},
        {"prior_mean", Kind::RealList, ojson::array({0.0}), "prior state mean"},
        {"prior_cov", Kind::RealList, ojson::array({1.0}), "row-major prior covariance"},
        {"particles", Kind::UInt, 1000, "particle count"},
        {"ess_fraction", Kind::Real, 0.5, "resample when ESS < fraction * particles"},
        {"seed", Kind::UInt, nullptr, "random seed (particle method)"},
        {"out", Kind::Text, nullptr, "filtered moments CSV path", true},
        {"diagnostics", Kind::Text, "", "diagnostics JSON path (default <out>.diagnostics.json)"},
    };
  } else if (sub == "bandit") {
    p = {
        {"arms", Kind::Text, "bernoulli", "bernoulli, gaussian or logistic"},
        {"means", Kind::RealList, ojson::array(), "arm means (bernoulli, gaussian)"},
        {"variance", Kind::Real, 1.0, "reward variance (gaussian)"},
        {"features", Kind::RealList, ojson::array(), "row-major K x d arm features (logistic)"},
        {"weight", Kind::RealList, ojson::array(), "true weight vector (logistic)"},
        {"refresh_every", Kind::UInt, 25, "observations between sampler rebuilds (logistic)"},
        {"policy", Kind::Text, "thompson", "thompson or uniform"},
        {"horizon", Kind::UInt, nullptr, "rounds per run", true},
        {"seeds", Kind::UInt, 1, "number of runs; run i uses seed + i"},
        {"seed", Kind::UInt, nullptr, "base random seed", true},
        {"trace_every", Kind::UInt, 1, "write every k-th round to the trace"},
        {"out", Kind::Text, nullptr, "regret trace CSV path", true},
        {"summary", Kind::Text, "", "summary JSON path (default <out>.summary.json)"},
    };
  } else if (sub == "assess-series" || sub == "assess-stationarity") {
    if (sub == "assess-series") {
      p = {
          {"series", Kind::Text, "", "built-in series name"},
          {"exponent", Kind::Real, 2.0, "exponent a of mobius-dirichlet"},
          {"terms", Kind::Text, "", "file of terms, one per line"},
          {"block_size", Kind::UInt, 1000, "terms per stage"},
          {"stages", Kind::UInt, 200, "number of stages"},
          {"sieve_budget_mb", Kind::UInt, 1024, "memory budget of the Mobius sieve"},
      };
    } else {
      p = {
          {"values", Kind::Text, "", "file of observations, one per line"},
          {"rho", Kind::Real, 0.5, "AR(1) coefficient of the built-in generator"},
          {"length", Kind::UInt, 200000, "length of the generated series"},
          {"seed", Kind::UInt, nullptr, "random seed (generator)"},
          {"stages", Kind::UInt, 100, "number of contiguous blocks"},
      };
    }
    for (Param q : std::vector<Param>{
             {"initial_c_hat", Kind::Real, 0.1, "starting value of the adaptive bound scale"},
             {"bound_step", Kind::Real, 0.05, "adaptive bound step"},
             {"c_min", Kind::Real, 0.01, "floor of the adaptive bound scale"},
             {"threshold", Kind::Real, 0.5, "verdict threshold on the final posterior mean"},
             {"out", Kind::Text, nullptr, "report JSON path", true},
             {"trace", Kind::Text, "", "optional per-stage CSV path"},
         })
      p.push_back(q);
  } else {
    throw UsageError("unknown subcommand '" + sub + "'");
  }
  return p;
}

std::string flag_name(const std::string& key) {
  std::string f = "--";
  for (char c : key)
    f += c == '_' ? '-' : c;
  return f;
}

ojson parse_flag(const Param& p, const std::string& text) {
  auto bad = [&] {
    return UsageError(flag_name(p.key) + " expects " + kind_name(p.kind) + ", got '" + text + "'");
  };
  auto real = [&](const std::string& s) {
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw bad();
    }
    if (used != s.size())
      throw bad();
    return v;
  };
  switch (p.kind) {
  case Kind::Text:
    return text;
  case Kind::Real:
    return real(text);
  case Kind::UInt: {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
      throw bad();
    return v;
  }
  case Kind::RealList: {
    ojson arr = ojson::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty())
        arr.push_back(real(item));
    return arr;
  }
  }
  return nullptr;
}

void check_type(const Param& p, const ojson& v) {
  bool ok = false;
  switch (p.kind) {
  case Kind::Text:
    ok = v.is_string();
    break;
  case Kind::Real:
    ok = v.is_number();
    break;
  case Kind::UInt:
    ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    break;
  case Kind::RealList:
    ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const ojson& x) { return x.is_number(); });
    break;
  }
  if (!ok)
    throw UsageError("config key '" + p.key + "' expects " + kind_name(p.kind));
}

// ---------------------------------------------------------------------------
// Typed access to resolved values

std::uint64_t get_u(const ojson& v, const char* k) { return v.at(k).get<std::uint64_t>(); }
double get_r(const ojson& v, const char* k) { return v.at(k).get<double>(); }
std::string get_s(const ojson& v, const char* k) { return v.at(k).get<std::string>(); }
std::vector<double> get_l(const ojson& v, const char* k) {
  return v.at(k).get<std::vector<double>>();
}

Vector to_vector(const std::vector<double>& x) {
  return Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
}

Matrix to_matrix(const std::vector<double>& x, std::size_t rows, std::size_t cols,
                 const char* what) {
  if (x.size() != rows * cols)
    throw UsageError(std::string(what) + " must have " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " = " + std::to_string(rows * cols) +
                     " entries, got " + std::to_string(x.size()));
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = x[r * cols + c];
  return m;
}

template <typename Fn>
auto as_usage(Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError&) {
    throw;
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  } catch (const NotSpdError& e) {
    throw UsageError(e.what());
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
}

BuiltinTargetSpec target_spec(const ojson& v) {
  const std::string name = get_s(v, "target");
  const auto d = static_cast<std::size_t>(get_u(v, "dim"));
  if (d == 0)
    throw UsageError("--dim must be at least 1");
  auto location = [&]() -> Vector {
    auto m = get_l(v, "mean");
    if (m.empty())
      return Vector::Zero(static_cast<Eigen::Index>(d));
    if (m.size() != d)
      throw UsageError("--mean must have dim entries");
    return to_vector(m);
  };
  auto scale = [&]() -> Matrix {
    auto c = get_l(v, "cov");
    if (c.empty())
      return Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    return to_matrix(c, d, d, "--cov");
  };
  if (name == "std-normal")
    return standard_normal(d);
  if (name == "normal")
    return NormalSpec{location(), scale()};
  if (name == "student-t")
    return StudentTSpec{get_r(v, "dof"), location(), scale()};
  if (name == "cauchy")
    return CauchySpec{location(), scale()};
  if (name == "mixture") {
    MixtureSpec m;
    m.weights = get_l(v, "weights");
    auto means = get_l(v, "means");
    auto vars = get_l(v, "variances");
    const std::size_t k = m.weights.size();
    if (k == 0 || means.size() != k * d || vars.size() != k)
      throw UsageError("mixture needs K weights, K*dim means and K variances");
    Matrix mu = to_matrix(means, k, d, "--means");
    for (std::size_t i = 0; i < k; ++i)
      m.components.push_back(
          {mu.row(static_cast<Eigen::Index>(i)).transpose(),
           vars[i] * Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))});
    return m;
  }
  if (name == "logistic") {
    LogisticPosteriorSpec s;
    s.responses = get_l(v, "responses");
    s.trials = get_l(v, "trials");
    s.design = to_matrix(get_l(v, "design"), s.responses.size(), d, "--design");
    s.prior_mean = Vector::Zero(static_cast<Eigen::Index>(d));
    s.prior_variance = get_r(v, "prior_variance");
    return s;
  }
  throw UsageError("unknown target '" + name + "'");
}

SamplerConfig sampler_config(const ojson& v) {
  SamplerConfig s;
  s.partition.radius_step = get_r(v, "radius_step");
  if (auto m = get_u(v, "regions"))
    s.partition.regions = static_cast<std::size_t>(m);
  s.max_regions = static_cast<std::size_t>(get_u(v, "max_regions"));
  auto& c = s.calibration;
  c.n_min = static_cast<std::size_t>(get_u(v, "n_min"));
  c.n_max = static_cast<std::size_t>(get_u(v, "n_max"));
  c.target_rel_se = get_r(v, "target_rel_se");
  c.eta = get_r(v, "eta");
  c.p_floor = get_r(v, "p_floor");
  c.pilot_iters = static_cast<std::size_t>(get_u(v, "pilot_iters"));
  c.pilot_burnin = static_cast<std::size_t>(get_u(v, "pilot_burnin"));
  c.seed = get_u(v, "seed");
  return s;
}

LinearGaussianModel filter_model(const ojson& v) {
  const auto d = static_cast<std::size_t>(get_u(v, "state_dim"));
  const auto m = static_cast<std::size_t>(get_u(v, "obs_dim"));
  if (d == 0 || m == 0)
    throw UsageError("--state-dim and --obs-dim must be at least 1");
  LinearGaussianModel model{to_matrix(get_l(v, "F"), d, d, "--F"),
                            to_matrix(get_l(v, "H"), m, d, "--H"),
                            to_matrix(get_l(v, "Q"), d, d, "--Q"),
                            to_matrix(get_l(v, "R"), m, m, "--R")};
  model.validate();
  return model;
}

GaussianBelief filter_prior(const ojson& v) {
  const auto d = static_cast<std::size_t>(get_u(v, "state_dim"));
  auto mean = get_l(v, "prior_mean");
  if (mean.size() != d)
    throw UsageError("--prior-mean must have state_dim entries");
  GaussianBelief b{to_vector(mean), to_matrix(get_l(v, "prior_cov"), d, d, "--prior-cov")};
  cholesky_lower(b.covariance, "prior_cov");
  return b;
}

AssessorConfig assessor_config(const ojson& v) {
  AssessorConfig c;
  if (v.contains("block_size"))
    c.scheme.block_size = static_cast<std::size_t>(get_u(v, "block_size"));
  c.scheme.stages = static_cast<std::size_t>(get_u(v, "stages"));
  c.initial_c_hat = get_r(v, "initial_c_hat");
  c.bound_step = get_r(v, "bound_step");
  c.c_min = get_r(v, "c_min");
  c.threshold = get_r(v, "threshold");
  c.validate();
  return c;
}

void validate_semantics(const std::string& sub, const ojson& v) {
  if (sub == "sample") {
    spec_dim(target_spec(v));
    const auto fmt = get_s(v, "format");
    if (fmt != "csv" && fmt != "f64le")
      throw UsageError("--format must be csv or f64le");
    if (get_u(v, "n") == 0)
      throw UsageError("--n must be at least 1");
    sampler_config(v).validate();
    make_builtin(target_spec(v));
  } else if (sub == "filter") {
    const auto method = get_s(v, "method");
    if (method != "kalman" && method != "particle")
      throw UsageError("--method must be kalman or particle");
    if (method == "particle") {
      if (v.at("seed").is_null())
        throw UsageError("missing required option --seed (particle method)");
      if (get_u(v, "particles") == 0)
        throw UsageError("--particles must be at least 1");
      const double f = get_r(v, "ess_fraction");
      if (!(f >= 0.0 && f <= 1.0))
        throw UsageError("--ess-fraction must lie in [0, 1]");
    }
    filter_model(v);
    filter_prior(v);
  } else if (sub == "bandit") {
    const auto arms = get_s(v, "arms");
    const auto policy = get_s(v, "policy");
    if (policy != "thompson" && policy != "uniform")
      throw UsageError("--policy must be thompson or uniform");
    if (get_u(v, "horizon") == 0 || get_u(v, "seeds") == 0 || get_u(v, "trace_every") == 0)
      throw UsageError("--horizon, --seeds and --trace-every must be at least 1");
    if (arms == "bernoulli" || arms == "gaussian") {
      auto means = get_l(v, "means");
      if (means.empty())
        throw UsageError("--means must list at least one arm");
      if (arms == "bernoulli")
        for (double m : means)
          if (!(m >= 0.0 && m <= 1.0))
            throw UsageError("Bernoulli means must lie in [0, 1]");
      if (arms == "gaussian" && !(get_r(v, "variance") > 0.0))
        throw UsageError("--variance must be positive");
    } else if (arms == "logistic") {
      auto w = get_l(v, "weight");
      auto f = get_l(v, "features");
      if (w.empty() || f.empty() || f.size() % w.size() != 0)
        throw UsageError("logistic arms need --weight (d entries) and --features (K*d entries)");
      if (get_u(v, "refresh_every") == 0)
        throw UsageError("--refresh-every must be at least 1");
    } else {
      throw UsageError("--arms must be bernoulli, gaussian or logistic");
    }
  } else if (sub == "assess-series") {
    const bool named = !get_s(v, "series").empty();
    const bool file = !get_s(v, "terms").empty();
    if (named == file)
      throw UsageError("give exactly one of --series and --terms");
    if (named) {
      auto names = builtin_series_names();
      if (std::find(names.begin(), names.end(), get_s(v, "series")) == names.end())
        throw UsageError("unknown series '" + get_s(v, "series") + "'");
    }
    assessor_config(v);
  } else if (sub == "assess-stationarity") {
    if (get_s(v, "values").empty() && v.at("seed").is_null())
      throw UsageError("missing required option --seed (built-in AR(1) generator)");
    if (!std::isfinite(get_r(v, "rho")))
      throw UsageError("--rho must be finite");
    assessor_config(v);
  }
}

// ---------------------------------------------------------------------------
// Output helpers

std::string fmt_double(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!f)
    throw Error("cannot open '" + path + "' for writing");
  return f;
}

void write_json(const std::string& path, const ojson& doc) {
  auto f = open_out(path);
  f << doc.dump(2) << '\n';
  if (!f)
    throw Error("failed writing '" + path + "'");
}

ojson echo_config(const RunConfig& cfg) {
  ojson c = ojson::object();
  c["subcommand"] = cfg.subcommand;
  for (auto& [k, val] : cfg.values.items())
    c[k] = val;
  return c;
}

std::string default_path(const ojson& v, const char* key, const char* suffix) {
  auto p = get_s(v, key);
  return p.empty() ? get_s(v, "out") + suffix : p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> read_column(const std::string& path) {
  std::ifstream f(path);
  if (!f)
    throw Error("cannot open '" + path + "'");
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#')
      continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(line, &used));
    } catch (const std::exception&) {
      throw DomainError("'" + path + "' line " + std::to_string(lineno) + ": not a number");
    }
  }
  return out;
}

RowMatrix read_csv(const std::string& path, std::size_t cols) {
  std::ifstream f(path);
  if (!f)
    throw Error("cannot open '" + path + "'");
  std::vector<double> vals;
  std::string line;
  std::size_t rows = 0, lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows == 0 && vals.empty())
        continue; // header
      throw DomainError("'" + path + "' line " + std::to_string(lineno) + ": not numeric");
    }
    if (row.size() != cols)
      throw DomainError("'" + path + "' line " + std::to_string(lineno) + ": expected " +
                        std::to_string(cols) + " columns");
    vals.insert(vals.end(), row.begin(), row.end());
    ++rows;
  }
  RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::copy(vals.begin(), vals.end(), m.data());
  return m;
}

ojson summary_json(const PosteriorSummary& s) {
  return {{"mean", s.mean}, {"variance", s.variance}, {"lower", s.lower}, {"upper", s.upper}};
}

// ---------------------------------------------------------------------------
// Workflows

int run_sample(const RunConfig& cfg) {
  const auto& v = cfg.values;
  const auto t0 = std::chrono::steady_clock::now();
  const auto target = make_builtin(target_spec(v));
  const auto scfg = sampler_config(v);
  const auto seed = get_u(v, "seed");
  SamplerState state = build_sampler(target, scfg, cfg.workers);
  SampleBatch batch = draw_iid_batch(state, static_cast<std::size_t>(get_u(v, "n")), seed,
                                     cfg.workers);
  const auto& d = batch.diagnostics;

  const auto out = get_s(v, "out");
  const auto cols = batch.samples.cols();
  if (get_s(v, "format") == "csv") {
    auto f = open_out(out);
    for (Eigen::Index c = 0; c < cols; ++c)
      f << (c ? "," : "") << "dim_" << c;
    f << '\n';
    for (Eigen::Index r = 0; r < batch.samples.rows(); ++r) {
      for (Eigen::Index c = 0; c < cols; ++c)
        f << (c ? "," : "") << fmt_double(batch.samples(r, c));
      f << '\n';
    }
  } else {
    auto f = open_out(out, true);
    for (Eigen::Index i = 0; i < batch.samples.size(); ++i) {
      auto bits = std::bit_cast<std::uint64_t>(batch.samples.data()[i]);
      if constexpr (std::endian::native == std::endian::big)
        bits = __builtin_bswap64(bits);
      f.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }

  ojson diag;
  diag["schema_version"] = kSchemaVersion;
  diag["config"] = echo_config(cfg);
  diag["seed"] = seed;
  diag["regions"] = state.regions();
  diag["weights"] = state.calibration.weights;
  std::vector<double> p_hat;
  std::vector<std::size_t> low_p;
  for (const auto& r : state.calibration.regions) {
    p_hat.push_back(r.p_hat);
    if (r.low_p_warning)
      low_p.push_back(r.region);
  }
  diag["p_hat"] = p_hat;
  diag["low_p_regions"] = low_p;
  diag["draws"] = d.draws;
  diag["draws_per_region"] = d.draws_per_region;
  diag["coalescence_mean"] = d.coalescence_mean;
  diag["coalescence_max"] = d.coalescence_max;
  diag["expected_coalescence"] = d.expected_coalescence;
  diag["doubling_events"] = d.doubling_events;
  diag["refinements"] = d.refinements;
  diag["epsilon_proxy"] = d.epsilon_proxy;
  diag["tv_bound"] = d.tv_bound;
  diag["recalibrate_advised"] = d.recalibrate_advised;
  diag["wall_seconds"] = seconds_since(t0);
  write_json(default_path(v, "diagnostics", ".diagnostics.json"), diag);

  if (auto path = get_s(v, "emit_calibration"); !path.empty()) {
    ojson cal;
    cal["schema_version"] = kSchemaVersion;
    const auto& part = state.partition;
    cal["center"] = std::vector<double>(part.center().data(),
                                        part.center().data() + part.center().size());
    std::vector<std::vector<double>> scale;
    for (Eigen::Index r = 0; r < part.scale().rows(); ++r) {
      std::vector<double> row;
      for (Eigen::Index c = 0; c < part.scale().cols(); ++c)
        row.push_back(part.scale()(r, c));
      scale.push_back(row);
    }
    cal["scale_lower"] = scale;
    cal["radii_sq"] = part.radii_sq();
    ojson regs = ojson::array();
    for (const auto& r : state.calibration.regions) {
      regs.push_back({{"region", r.region},
                      {"weight", state.calibration.weights[r.region]},
                      {"log_weight", r.zero_weight() ? ojson(nullptr) : ojson(r.log_weight)},
                      {"weight_rel_se", r.weight_rel_se},
                      {"log_s_hat", std::isfinite(r.log_s_hat) ? ojson(r.log_s_hat) : ojson(nullptr)},
                      {"log_S_hat", std::isfinite(r.log_S_hat) ? ojson(r.log_S_hat) : ojson(nullptr)},
                      {"p_hat", r.p_hat},
                      {"n_samples", r.n_samples},
                      {"generation", r.generation},
                      {"low_p_warning", r.low_p_warning}});
    }
    cal["regions"] = regs;
    write_json(path, cal);
  }
  return 0;
}

int run_filter(const RunConfig& cfg) {
  const auto& v = cfg.values;
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = filter_model(v);
  const auto prior = filter_prior(v);
  const RowMatrix obs = read_csv(get_s(v, "observations"), model.obs_dim());
  const bool particle = get_s(v, "method") == "particle";
  const auto d = static_cast<Eigen::Index>(model.state_dim());

  std::vector<GaussianBelief> beliefs;
  std::vector<double> ess;
  std::vector<int> resampled;
  if (particle) {
    const auto seed = get_u(v, "seed");
    const auto n = static_cast<std::size_t>(get_u(v, "particles"));
    const double threshold = get_r(v, "ess_fraction") * static_cast<double>(n);
    auto trans = linear_gaussian_transition(model);
    auto lik = linear_gaussian_likelihood(model);
    ParticleEnsemble e = gaussian_ensemble(prior, n, seed);
    for (Eigen::Index t = 0; t < obs.rows(); ++t) {
      PfStep s = pf_step(e, trans, lik, obs.row(t).transpose(), threshold, seed,
                         static_cast<std::uint64_t>(t + 1), cfg.workers);
      e = std::move(s.ensemble);
      ess.push_back(s.ess);
      resampled.push_back(s.resampled ? 1 : 0);
      beliefs.push_back(ensemble_moments(e));
    }
  } else {
    beliefs = kalman_filter(prior, model, obs);
  }

  auto f = open_out(get_s(v, "out"));
  f << "t";
  for (Eigen::Index i = 0; i < d; ++i)
    f << ",mean_" << i;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      f << ",cov_" << i << '_' << j;
  if (particle)
    f << ",ess,resampled";
  f << '\n';
  for (std::size_t t = 0; t < beliefs.size(); ++t) {
    f << t + 1;
    for (Eigen::Index i = 0; i < d; ++i)
      f << ',' << fmt_double(beliefs[t].mean[i]);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        f << ',' << fmt_double(beliefs[t].covariance(i, j));
    if (particle)
      f << ',' << fmt_double(ess[t]) << ',' << resampled[t];
    f << '\n';
  }

  ojson diag;
  diag["schema_version"] = kSchemaVersion;
  diag["config"] = echo_config(cfg);
  diag["steps"] = beliefs.size();
  if (particle) {
    diag["resample_events"] = std::count(resampled.begin(), resampled.end(), 1);
    double mean_ess = 0.0;
    for (double e : ess)
      mean_ess += e;
    diag["mean_ess"] = ess.empty() ? 0.0 : mean_ess / static_cast<double>(ess.size());
  }
  diag["wall_seconds"] = seconds_since(t0);
  write_json(default_path(v, "diagnostics", ".diagnostics.json"), diag);
  return 0;
}

struct BanditOutcome {
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<double> regret;
  ojson extra;
};

int run_bandit_cmd(const RunConfig& cfg) {
  const auto& v = cfg.values;
  const auto t0 = std::chrono::steady_clock::now();
  const auto arms = get_s(v, "arms");
  const Policy policy = get_s(v, "policy") == "thompson" ? Policy::Thompson : Policy::UniformRandom;
  const auto horizon = static_cast<std::size_t>(get_u(v, "horizon"));
  const auto runs = static_cast<std::size_t>(get_u(v, "seeds"));
  const auto base = get_u(v, "seed");
  std::vector<std::uint64_t> seeds(runs);
  for (std::size_t i = 0; i < runs; ++i)
    seeds[i] = base + i;

  std::vector<BanditOutcome> outcomes(runs);
  if (arms == "logistic") {
    LogisticBanditEnvironment env;
    auto w = get_l(v, "weight");
    auto feats = get_l(v, "features");
    env.weight = to_vector(w);
    env.features = to_matrix(feats, feats.size() / w.size(), w.size(), "--features");
    env.validate();
    BridgeConfig bc;
    bc.refresh_every = static_cast<std::size_t>(get_u(v, "refresh_every"));
    parallel_for(runs, cfg.workers, [&](std::size_t i) {
      auto r = run_logistic_bandit(env, policy, horizon, seeds[i], bc);
      outcomes[i] = {std::move(r.actions), std::move(r.rewards), std::move(r.regret.cumulative),
                     {{"refreshes", r.refreshes},
                      {"stale_draws", r.stale_draws},
                      {"doubling_events", r.doubling_events},
                      {"refinements", r.refinements}}};
    });
  } else {
    BanditEnvironment env;
    for (double m : get_l(v, "means")) {
      if (arms == "bernoulli")
        env.arms.emplace_back(BernoulliArm{m});
      else
        env.arms.emplace_back(GaussianArm{m, get_r(v, "variance")});
    }
    auto results = run_bandit_seeds(env, policy, horizon, seeds, cfg.workers);
    for (std::size_t i = 0; i < runs; ++i)
      outcomes[i] = {std::move(results[i].history.actions), std::move(results[i].history.rewards),
                     std::move(results[i].regret.cumulative), ojson::object()};
  }

  const auto every = static_cast<std::size_t>(get_u(v, "trace_every"));
  auto f = open_out(get_s(v, "out"));
  f << "seed,t,action,reward,regret\n";
  for (std::size_t i = 0; i < runs; ++i) {
    const auto& o = outcomes[i];
    for (std::size_t t = 1; t <= horizon; ++t) {
      if (t % every != 0 && t != horizon)
        continue;
      f << seeds[i] << ',' << t << ',' << o.actions[t - 1] << ',' << fmt_double(o.rewards[t - 1])
        << ',' << fmt_double(o.regret[t]) << '\n';
    }
  }

  std::vector<double> finals;
  for (const auto& o : outcomes)
    finals.push_back(o.regret.back());
  double mean = 0.0;
  for (double x : finals)
    mean += x;
  mean /= static_cast<double>(runs);
  double var = 0.0;
  for (double x : finals)
    var += (x - mean) * (x - mean);
  const double sd = runs > 1 ? std::sqrt(var / static_cast<double>(runs - 1)) : 0.0;

  ojson sum;
  sum["schema_version"] = kSchemaVersion;
  sum["config"] = echo_config(cfg);
  sum["seeds"] = seeds;
  sum["final_regret"] = finals;
  sum["mean_final_regret"] = mean;
  sum["sd_final_regret"] = sd;
  if (arms == "logistic") {
    ojson per = ojson::array();
    for (const auto& o : outcomes)
      per.push_back(o.extra);
    sum["bridge"] = per;
  }
  sum["wall_seconds"] = seconds_since(t0);
  write_json(default_path(v, "summary", ".summary.json"), sum);
  return 0;
}

void write_assessment(const RunConfig& cfg, const AssessmentReport& rep) {
  const auto& v = cfg.values;
  ojson doc;
  doc["schema_version"] = kSchemaVersion;
  doc["config"] = echo_config(cfg);
  doc["verdict"] = rep.verdict;
  doc["posterior"] = {{"a", rep.posterior.a()}, {"b", rep.posterior.b()}};
  doc["summary"] = summary_json(rep.summary);
  ojson stages = ojson::array();
  for (const auto& s : rep.stages)
    stages.push_back({{"stage", s.stage},
                      {"block_size", s.block_size},
                      {"statistic", s.statistic},
                      {"bound", s.bound},
                      {"y", s.y},
                      {"mean", s.summary.mean},
                      {"lower", s.summary.lower},
                      {"upper", s.summary.upper}});
  doc["stages"] = stages;
  write_json(get_s(v, "out"), doc);
  if (auto path = get_s(v, "trace"); !path.empty()) {
    auto f = open_out(path);
    f << "stage,block_size,statistic,bound,y,mean,lower,upper\n";
    for (const auto& s : rep.stages)
      f << s.stage << ',' << s.block_size << ',' << fmt_double(s.statistic) << ','
        << fmt_double(s.bound) << ',' << s.y << ',' << fmt_double(s.summary.mean) << ','
        << fmt_double(s.summary.lower) << ',' << fmt_double(s.summary.upper) << '\n';
  }
}

int run_assess_series(const RunConfig& cfg) {
  const auto& v = cfg.values;
  const auto acfg = assessor_config(v);
  SeriesSource src;
  if (auto path = get_s(v, "terms"); !path.empty()) {
    src = series_from_values(read_column(path), path);
  } else {
    const auto name = get_s(v, "series");
    const auto budget = get_u(v, "sieve_budget_mb") << 20;
    if (name == "mobius-dirichlet") {
      // Size the sieve to what the scheme consumes, under the budget.
      const auto terms = acfg.scheme.total();
      auto mu = std::make_shared<const std::vector<std::int8_t>>(mobius_sieve(terms, budget));
      const double a = get_r(v, "exponent");
      src.label = name;
      src.length = terms;
      src.term = [mu, a](std::uint64_t n) {
        const int m = (*mu)[n];
        return m == 0 ? 0.0 : m / std::pow(static_cast<double>(n), a);
      };
    } else {
      src = builtin_series(name, get_r(v, "exponent"), 0);
    }
  }
  write_assessment(cfg, assess_series(src, acfg, cfg.workers));
  return 0;
}

int run_assess_stationarity(const RunConfig& cfg) {
  const auto& v = cfg.values;
  const auto acfg = assessor_config(v);
  std::vector<double> x;
  if (auto path = get_s(v, "values"); !path.empty())
    x = read_column(path);
  else
    x = ar1_series(get_r(v, "rho"), static_cast<std::size_t>(get_u(v, "length")), get_u(v, "seed"));
  write_assessment(cfg, assess_stationarity(x, acfg, cfg.workers));
  return 0;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const TailMassError*>(&e))
    return "tail_mass";
  if (dynamic_cast<const MinorisationViolation*>(&e))
    return "minorisation_violation";
  if (dynamic_cast<const DegenerateRegion*>(&e))
    return "degenerate_region";
  if (dynamic_cast<const PilotFailure*>(&e))
    return "pilot_failure";
  if (dynamic_cast<const TargetUnreachable*>(&e))
    return "target_unreachable";
  if (dynamic_cast<const NotSpdError*>(&e))
    return "not_spd";
  if (dynamic_cast<const SingularInnovation*>(&e))
    return "singular_innovation";
  if (dynamic_cast<const DegeneracyError*>(&e))
    return "particle_degeneracy";
  if (dynamic_cast<const BudgetError*>(&e))
    return "budget";
  if (dynamic_cast<const PartialResult*>(&e))
    return "partial_result";
  if (dynamic_cast<const DomainError*>(&e))
    return "domain";
  if (dynamic_cast<const NumericalError*>(&e))
    return "numerical";
  if (dynamic_cast<const PreconditionError*>(&e))
    return "precondition";
  return "runtime";
}

} // namespace

std::vector<std::string> subcommands() {
  return {"sample", "filter", "bandit", "assess-series", "assess-stationarity"};
}

namespace {

const char* describe(const std::string& sub) {
  if (sub == "sample") return "iid draws from a built-in target";
  if (sub == "filter") return "Kalman or bootstrap particle filter over an observation file";
  if (sub == "bandit") return "Thompson sampling or uniform play on a simulated bandit";
  if (sub == "assess-series") return "convergence verdict for a series";
  return "stationarity verdict for a time series";
}

} // namespace

RunConfig resolve_config(const std::string& subcommand, const nlohmann::json& file_values,
                         const std::map<std::string, std::string>& flag_values, int workers) {
  const auto params = params_for(subcommand);
  auto find = [&](const std::string& key) -> const Param* {
    for (const auto& p : params)
      if (p.key == key)
        return &p;
    return nullptr;
  };
  if (!file_values.is_null() && !file_values.is_object())
    throw UsageError("config file must hold a JSON object");
  if (workers < 1)
    throw UsageError("--workers must be at least 1");

  RunConfig cfg;
  cfg.subcommand = subcommand;
  cfg.workers = workers;
  for (const auto& p : params)
    cfg.values[p.key] = p.fallback;
  if (file_values.is_object()) {
    for (auto& [k, val] : file_values.items()) {
      const Param* p = find(k);
      if (!p)
        throw UsageError("unknown config key '" + k + "' for " + subcommand);
      ojson o = ojson::parse(val.dump());
      check_type(*p, o);
      cfg.values[k] = o;
    }
  }
  for (const auto& [k, text] : flag_values) {
    const Param* p = find(k);
    if (!p)
      throw UsageError("unknown option " + flag_name(k) + " for " + subcommand);
    cfg.values[k] = parse_flag(*p, text);
  }
  for (const auto& p : params)
    if (p.required && cfg.values[p.key].is_null())
      throw UsageError("missing required option " + flag_name(p.key));
  as_usage([&] {
    validate_semantics(subcommand, cfg.values);
    return 0;
  });
  return cfg;
}

int execute(const RunConfig& config, std::ostream& /*out*/, std::ostream& err) {
  try {
    int rc = 0;
    if (config.subcommand == "sample")
      rc = run_sample(config);
    else if (config.subcommand == "filter")
      rc = run_filter(config);
    else if (config.subcommand == "bandit")
      rc = run_bandit_cmd(config);
    else if (config.subcommand == "assess-series")
      rc = run_assess_series(config);
    else if (config.subcommand == "assess-stationarity")
      rc = run_assess_stationarity(config);
    else
      throw UsageError("unknown subcommand '" + config.subcommand + "'");
    return rc;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    ojson report;
    report["schema_version"] = kSchemaVersion;
    report["error"] = {{"kind", error_kind(e)}, {"message", e.what()}};
    if (auto* p = dynamic_cast<const PartialResult*>(&e))
      report["error"]["completed_stages"] = p->report().stages.size();
    if (auto* t = dynamic_cast<const TailMassError*>(&e))
      report["error"]["outer_weight"] = t->outer_weight();
    err << report.dump() << '\n';
    return 1;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Exact iid sampling, online filtering, bandits and recursive assessment"};
  app.name(args.empty() ? "reflex" : args[0]);
  app.require_subcommand(1);
  int workers = default_workers();
  app.add_option("--workers", workers, "parallel width (default REFLEX_WORKERS)");

  struct Sub {
    CLI::App* app;
    std::string config_path;
    std::map<std::string, std::string> storage;
    std::map<std::string, CLI::Option*> options;
  };
  std::map<std::string, Sub> subs;
  for (const auto& name : subcommands()) {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, describe(name));
    s.app->add_option("--config", s.config_path, "JSON config file");
    s.app->add_option("--workers", workers, "parallel width (default REFLEX_WORKERS)");
    for (const auto& p : params_for(name)) {
      std::string help = p.help;
      if (!p.fallback.is_null())
        help += " [" + p.fallback.dump() + "]";
      else if (p.required)
        help += " (required)";
      s.options[p.key] = s.app->add_option(flag_name(p.key), s.storage[p.key], help);
    }
  }

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }

  for (auto& [name, s] : subs) {
    if (!s.app->parsed())
      continue;
    try {
      nlohmann::json file_values;
      if (!s.config_path.empty()) {
        std::ifstream f(s.config_path);
        if (!f)
          throw UsageError("cannot read config file '" + s.config_path + "'");
        try {
          file_values = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
          throw UsageError("config file is not valid JSON: " + std::string(e.what()));
        }
      }
      std::map<std::string, std::string> flags;
      for (auto& [key, opt] : s.options)
        if (opt->count() > 0)
          flags[key] = s.storage[key];
      const RunConfig cfg = resolve_config(name, file_values, flags, workers);
      return execute(cfg, out, err);
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << '\n';
      return 2;
    }
  }
  err << "usage error: no subcommand\n";
  return 2;
}

} // namespace reflex::cli

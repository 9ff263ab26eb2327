#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "../dataset.hpp"
#include "../gradients.hpp"
#include "../hier_student_t.hpp"
#include "../optimize.hpp"
#include "../oracle.hpp"
#include "../parallel.hpp"
#include "../proposal.hpp"
#include "../sampler.hpp"
#include "../semi.hpp"
#include "../target.hpp"
#include "config.hpp"
#include "io.hpp"

namespace rvrs::cli {

namespace fs = std::filesystem;

struct RunContext {
  std::string experiment;
  Config config;
  std::uint64_t seed = 0;
  fs::path out;
  int workers = 1;
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"funnel", "gradvar", "sweep-z", "logreg", "semi", "bound-check", "eval"};
  return names;
}

namespace stream {
inline constexpr std::uint64_t data = 10;
inline constexpr std::uint64_t eval = 11;
inline constexpr std::uint64_t instances = 12;
inline constexpr std::uint64_t gradvar = 13;
}  // namespace stream

namespace detail {

inline const std::set<std::string> kCommonKeys{"seed", "workers", "output_dir"};

inline const std::set<std::string> kTrainKeys{
    "total_iters",      "S",           "epsilon",     "base_lr",    "phase1_iters",  "phase1_lr", "t_samples",
    "trace_every",      "checkpoint_every", "checkpoint_samples", "init_T_samples", "max_proposals"};

inline const std::set<std::string> kLogisticKeys{"data_path", "N",         "D",         "data_seed",
                                                 "weight_sd", "intercept", "standardize"};

inline std::set<std::string> keys(std::initializer_list<std::set<std::string>> groups,
                                  std::initializer_list<std::string> extra) {
  std::set<std::string> out(extra);
  for (const auto& g : groups) out.insert(g.begin(), g.end());
  return out;
}

struct TrainDefaults {
  long long total_iters = 10000;
  double base_lr = 1e-3;
  long long phase1_iters = 10000;
  double phase1_lr = 1e-2;
  long long checkpoint_every = 1000;
};

inline TrainConfig read_train_config(const Config& c, std::uint64_t seed, const TrainDefaults& d) {
  TrainConfig t;
  t.seed = seed;
  t.total_iters = c.get_int("total_iters", d.total_iters);
  t.S = c.get_int("S", 2);
  t.epsilon = c.get_double("epsilon", 1e-4);
  t.base_lr = c.get_double("base_lr", d.base_lr);
  t.phase1.iters = c.get_int("phase1_iters", d.phase1_iters);
  t.phase1.base_lr = c.get_double("phase1_lr", d.phase1_lr);
  t.t_samples = c.get_int("t_samples", 0);
  t.trace_every = c.get_int("trace_every", 100);
  t.phase1.trace_every = t.trace_every;
  t.checkpoint_every = c.get_int("checkpoint_every", d.checkpoint_every);
  t.checkpoint_samples = c.get_int("checkpoint_samples", 20000);
  t.init_T_samples = c.get_int("init_T_samples", 1000);
  t.max_proposals = c.get_int("max_proposals", 0);
  try {
    t.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (t.checkpoint_every < 0 || t.checkpoint_samples < 2) throw ConfigError("checkpoint settings out of range");
  return t;
}

struct LogisticSpec {
  std::string data_path;
  long long N = 100;
  long long D = 51;
  std::uint64_t data_seed = 0;
  double weight_sd = 3.0;
  bool intercept = true;
  bool standardize = true;

  Json to_json() const {
    Json j;
    j["type"] = "logistic";
    j["data_path"] = data_path;
    j["N"] = N;
    j["D"] = D;
    j["data_seed"] = data_seed;
    j["weight_sd"] = weight_sd;
    j["intercept"] = intercept;
    j["standardize"] = standardize;
    return j;
  }

  static LogisticSpec from_json(const Json& j) {
    LogisticSpec s;
    s.data_path = j.at("data_path").get<std::string>();
    s.N = j.at("N").get<long long>();
    s.D = j.at("D").get<long long>();
    s.data_seed = j.at("data_seed").get<std::uint64_t>();
    s.weight_sd = j.at("weight_sd").get<double>();
    s.intercept = j.at("intercept").get<bool>();
    s.standardize = j.at("standardize").get<bool>();
    return s;
  }
};

inline LogisticSpec read_logistic_spec(const Config& c, long long N, long long D) {
  LogisticSpec s;
  s.data_path = c.get_string("data_path", "");
  s.N = c.get_int("N", N);
  s.D = c.get_int("D", D);
  s.data_seed = static_cast<std::uint64_t>(c.get_int("data_seed", 0));
  s.weight_sd = c.get_double("weight_sd", 3.0);
  s.intercept = c.get_bool("intercept", true);
  s.standardize = c.get_bool("standardize", true);
  if (s.N < 1) throw ConfigError("N must be positive");
  if (s.D < (s.intercept ? 2 : 1)) throw ConfigError("D is too small");
  if (!s.data_path.empty() && !fs::is_regular_file(s.data_path)) {
    throw ConfigError("data_path '" + s.data_path + "' is not a readable file");
  }
  return s;
}

/// Features in every column but the last, 0/1 labels in the last. D counts the intercept when present;
/// for a file, D is taken from the file.
inline LogisticRegressionTarget build_logistic(const LogisticSpec& s) {
  Matrix X;
  Vector y;
  if (!s.data_path.empty()) {
    const Dataset ds = load_delimited(s.data_path);
    X = ds.features;
    y = ds.targets;
  } else {
    Rng rng(s.data_seed, stream::data);
    const Dataset ds = synthetic_logistic(s.N, s.intercept ? s.D - 1 : s.D, rng, s.weight_sd);
    X = ds.features;
    y = ds.targets;
  }
  check_binary_labels(y);
  if (s.standardize) standardize_columns(X);
  if (s.intercept) {
    Matrix with(X.rows(), X.cols() + 1);
    with << X, Vector::Ones(X.rows());
    X = std::move(with);
  }
  return LogisticRegressionTarget(std::move(X), std::move(y));
}

inline std::string label_z(double z) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "rvrs_z%g", z);
  return buf;
}

inline Json proposal_json(const MeanFieldNormal& q) {
  Json j;
  j["type"] = "meanfield";
  j["mu"] = vector_json(q.mu());
  j["log_scale"] = vector_json(q.log_scale());
  return j;
}

inline void write_fit(const fs::path& path, const Json& target, const MeanFieldNormal& q, const AcceptanceConfig* acc) {
  Json j;
  j["target"] = target;
  j["proposal"] = proposal_json(q);
  if (acc != nullptr) {
    j["T"] = acc->T;
    j["epsilon"] = acc->epsilon;
  }
  write_json(path, j);
}

inline void require_lists(const std::vector<double>& zs) {
  if (zs.empty()) throw ConfigError("Z_tgt list is empty");
  for (const double z : zs) {
    if (!(z > 0.0 && z < 1.0)) throw ConfigError("every Z_tgt must lie in (0, 1)");
  }
}

template <TargetModel Target>
double quad_vi_elbo(const Target& target, const MeanFieldNormal& q, const QuadratureGrid& grid) {
  const Vector theta = target.default_theta();
  return grid.integrate([&](const Vector& z) {
    const double lq = q.log_density(z);
    return std::exp(lq) * (target.log_joint(theta, z) - lq);
  });
}

// x, y, log_p, log_q, log_r, a on a square grid; acc == nullptr means no rejection step.
template <TargetModel Target>
void write_density(const fs::path& path, const Target& target, const MeanFieldNormal& q, const AcceptanceConfig* acc,
                   double Zr, double lo, double hi, long long nodes) {
  CsvWriter w(path, {"x", "y", "log_p", "log_q", "log_r", "a"});
  const Vector theta = target.default_theta();
  const double h = (hi - lo) / static_cast<double>(nodes - 1);
  Vector z(2);
  for (long long i = 0; i < nodes; ++i) {
    for (long long j = 0; j < nodes; ++j) {
      z << lo + h * static_cast<double>(i), lo + h * static_cast<double>(j);
      const double lp = target.log_joint(theta, z);
      const double lq = q.log_density(z);
      double a = 1.0;
      double log_a = 0.0;
      if (acc != nullptr) {
        const Acceptance ac = acceptance(lp, lq, *acc);
        a = ac.a;
        log_a = ac.log_a;
      }
      w.row({z[0], z[1], lp, lq, lq + log_a - std::log(Zr), a});
    }
  }
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

inline Json base_summary(const RunContext& ctx) {
  Json j;
  j["experiment"] = ctx.experiment;
  j["seed"] = ctx.seed;
  j["workers"] = ctx.workers;
  return j;
}

inline void finish_summary(Json& j, const RunContext& ctx, const std::vector<std::string>& files, const Timer& t) {
  Json cfg = Json::object();
  for (const auto& [k, v] : ctx.config.resolved()) cfg[k] = v;
  j["config"] = cfg;
  j["files"] = files;
  j["wall_time_seconds"] = t.seconds();
  write_json(ctx.out / "summary.json", j);
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------

inline Json run_funnel(const RunContext& ctx) {
  using namespace detail;
  const Config& c = ctx.config;
  c.restrict_to(keys({kCommonKeys, kTrainKeys}, {"Z_tgt", "eval_samples", "quad_nodes", "density_nodes",
                                                  "density_lo", "density_hi"}),
                ctx.experiment);
  const std::vector<double> zs = c.get_double_list("Z_tgt", {0.5, 0.2, 0.1, 0.05});
  require_lists(zs);
  TrainConfig tc = read_train_config(c, ctx.seed, {20000, 1e-3, 10000, 1e-2, 1000});
  const long long eval_samples = c.get_int("eval_samples", 100000);
  const long long quad_nodes = c.get_int("quad_nodes", 1001);
  const long long density_nodes = c.get_int("density_nodes", 101);
  const double density_lo = c.get_double("density_lo", -5.0);
  const double density_hi = c.get_double("density_hi", 5.0);
  if (eval_samples < 2 || quad_nodes < 3 || density_nodes < 2 || !(density_hi > density_lo)) {
    throw ConfigError("funnel: evaluation settings out of range");
  }
  Timer timer;
  const FunnelTarget target;
  const Vector theta(0);
  const Json target_json = Json{{"type", "funnel"}};

  const PhaseOne<MeanFieldNormal> p1 = phase_one(target, theta, MeanFieldNormal::standard(2), tc);
  struct Row {
    std::string method;
    double Z_tgt, elbo_quad, elbo_mc, Zr_quad, Zr_mc, T, scale;
    long long proposals;
  };
  std::vector<Row> rows(zs.size() + 1);
  std::vector<std::string> files{"results.csv"};

  {
    const MeanFieldNormal& q = p1.fit.proposal;
    const fs::path dir = ctx.out / "meanfield";
    fs::create_directories(dir);
    write_trace(dir / "trace.csv", p1.fit.trace);
    write_fit(dir / "fit.json", target_json, q, nullptr);
    write_density(dir / "density.csv", target, q, nullptr, 1.0, density_lo, density_hi, density_nodes);
    Rng er(ctx.seed, stream::eval);
    rows[0] = {"meanfield",
               1.0,
               quad_vi_elbo(target, q, QuadratureGrid::around(q, 12.0, quad_nodes)),
               estimate_vi_elbo(target, theta, q, er, eval_samples),
               1.0,
               1.0,
               std::numeric_limits<double>::infinity(),
               geometric_mean_scale(q),
               0};
    for (const char* f : {"trace.csv", "fit.json", "density.csv"}) files.push_back("meanfield/" + std::string(f));
  }

  std::vector<FitResult<MeanFieldNormal>> fits(zs.size());
  parallel_for(zs.size(), ctx.workers, [&](std::size_t k) {
    TrainConfig t = tc;
    t.Z_tgt = zs[k];
    fits[k] = fit_from_phase_one(target, theta, p1, t, PhiEstimator::rvrs);
  });
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const auto& f = fits[k];
    const std::string label = label_z(zs[k]);
    const fs::path dir = ctx.out / label;
    fs::create_directories(dir);
    const QuadratureGrid grid = QuadratureGrid::around(f.proposal, 12.0, quad_nodes);
    const double zr = quad_Zr(target, theta, f.proposal, f.acceptance, grid);
    Rng er(ctx.seed, stream::eval + 100 * (k + 1));
    const ElboEstimate e = estimate_elbo(target, theta, f.proposal, f.acceptance, er, eval_samples);
    rows[k + 1] = {"rvrs", zs[k], quad_elbo(target, theta, f.proposal, f.acceptance, grid), e.elbo, zr, e.Zr,
                   f.acceptance.T, geometric_mean_scale(f.proposal), f.total_proposals};
    write_trace(dir / "trace.csv", f.trace);
    write_checkpoints(dir / "checkpoints.csv", f.checkpoints);
    write_fit(dir / "fit.json", target_json, f.proposal, &f.acceptance);
    write_density(dir / "density.csv", target, f.proposal, &f.acceptance, zr, density_lo, density_hi, density_nodes);
    for (const char* name : {"trace.csv", "checkpoints.csv", "fit.json", "density.csv"}) {
      files.push_back(label + "/" + name);
    }
  }

  CsvWriter w(ctx.out / "results.csv",
              {"method", "Z_tgt", "elbo_quad", "elbo_mc", "Zr_quad", "Zr_mc", "T", "geo_scale", "total_proposals"});
  Json results = Json::array();
  for (const auto& r : rows) {
    w.row({r.method, r.Z_tgt, r.elbo_quad, r.elbo_mc, r.Zr_quad, r.Zr_mc, r.T, r.scale, r.proposals});
    results.push_back({{"method", r.method}, {"Z_tgt", r.Z_tgt}, {"elbo_quad", r.elbo_quad}, {"elbo_mc", r.elbo_mc},
                       {"Zr_quad", r.Zr_quad}, {"Zr_mc", r.Zr_mc}, {"T", r.T}, {"geo_scale", r.scale},
                       {"total_proposals", r.proposals}});
  }
  Json s = base_summary(ctx);
  s["results"] = results;
  finish_summary(s, ctx, files, timer);
  return s;
}

// ---------------------------------------------------------------------------------------------

struct GradVarRow {
  long long D = 0;
  double mean_ratio = 0.0;   // mean over location coordinates
  double scale_ratio = 0.0;  // mean over log-scale coordinates
  double median_ratio = 0.0;
  double min_ratio = 0.0;
  double T = 0.0;
  double Zr_hat = 0.0;
  double elbo_meanfield = 0.0;
  Vector var_rvrs;
  Vector var_vrs;
};

/// Per-coordinate variance of the RVRS and VRS phi-gradients over `samples` batches drawn at the
/// mean-field fit with T = -ELBO. Batches are split into `shards` fixed streams so the result does
/// not depend on the worker count.
inline GradVarRow gradvar_for_dimension(long long D, long long N, const MeanFieldConfig& mf, long long samples,
                                        Eigen::Index S, double epsilon, long long shards, double weight_sd,
                                        std::uint64_t seed, std::uint64_t data_seed, int workers) {
  Rng drng(data_seed, stream_id(stream::data, static_cast<std::uint64_t>(D)));
  Dataset ds = synthetic_logistic(N, D, drng, weight_sd);
  const LogisticRegressionTarget target(std::move(ds.features), std::move(ds.targets));
  const Vector theta(0);
  Rng r1(seed, stream_id(rvrs::stream::phase1, static_cast<std::uint64_t>(D)));
  const MeanFieldFit<MeanFieldNormal> fit = fit_meanfield(target, theta, MeanFieldNormal::standard(D), mf, r1);
  const MeanFieldNormal& q = fit.proposal;
  Rng r2(seed, stream_id(rvrs::stream::init_T, static_cast<std::uint64_t>(D)));
  GradVarRow row;
  row.D = D;
  row.elbo_meanfield = estimate_vi_elbo(target, theta, q, r2, 10000);
  row.T = -row.elbo_meanfield;
  const AcceptanceConfig acc(row.T, epsilon);

  const Eigen::Index P = q.num_params();
  struct Sums {
    Vector s1r, s2r, s1v, s2v;
    long long proposals = 0;
    long long accepted = 0;
  };
  std::vector<Sums> parts(static_cast<std::size_t>(shards));
  parallel_for(parts.size(), workers, [&](std::size_t k) {
    Sums& s = parts[k];
    s.s1r = s.s2r = s.s1v = s.s2v = Vector::Zero(P);
    Rng rng(seed, stream_id(stream::gradvar + 1000 * static_cast<std::uint64_t>(D), k));
    const long long lo = samples * static_cast<long long>(k) / shards;
    const long long hi = samples * static_cast<long long>(k + 1) / shards;
    for (long long i = lo; i < hi; ++i) {
      const AcceptedBatch b = rejection_sample(target, theta, q, acc, rng, S);
      const Vector gr = rvrs_phi_gradient(target, theta, q, acc, b);
      const Vector gv = vrs_phi_gradient(q, acc, b);
      s.s1r += gr;
      s.s2r += gr.cwiseAbs2();
      s.s1v += gv;
      s.s2v += gv.cwiseAbs2();
      s.proposals += b.total_proposals;
      s.accepted += b.size();
    }
  });
  Vector s1r = Vector::Zero(P), s2r = Vector::Zero(P), s1v = Vector::Zero(P), s2v = Vector::Zero(P);
  long long proposals = 0, accepted = 0;
  for (const auto& s : parts) {
    s1r += s.s1r;
    s2r += s.s2r;
    s1v += s.s1v;
    s2v += s.s2v;
    proposals += s.proposals;
    accepted += s.accepted;
  }
  const double m = static_cast<double>(samples);
  row.var_rvrs = ((s2r - s1r.cwiseAbs2() / m) / (m - 1.0)).cwiseMax(0.0);
  row.var_vrs = ((s2v - s1v.cwiseAbs2() / m) / (m - 1.0)).cwiseMax(0.0);
  const Vector ratio = row.var_vrs.cwiseQuotient(row.var_rvrs);
  row.mean_ratio = ratio.head(D).mean();
  row.scale_ratio = ratio.tail(D).mean();
  std::vector<double> sorted(ratio.data(), ratio.data() + ratio.size());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  row.median_ratio = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  row.min_ratio = sorted.front();
  row.Zr_hat = static_cast<double>(accepted) / static_cast<double>(proposals);
  return row;
}

inline Json run_gradvar(const RunContext& ctx) {
  using namespace detail;
  const Config& c = ctx.config;
  c.restrict_to(keys({kCommonKeys}, {"D", "N", "phase1_iters", "phase1_lr", "samples", "S", "epsilon", "shards",
                                     "data_seed", "weight_sd"}),
                ctx.experiment);
  const std::vector<long long> Ds = c.get_int_list("D", {10, 30, 60});
  const long long N = c.get_int("N", 100);
  MeanFieldConfig mf;
  mf.iters = c.get_int("phase1_iters", 10000);
  mf.base_lr = c.get_double("phase1_lr", 1e-2);
  const long long samples = c.get_int("samples", 500000);
  const Eigen::Index S = c.get_int("S", 2);
  const double epsilon = c.get_double("epsilon", 1e-4);
  const long long shards = c.get_int("shards", 16);
  const auto data_seed = static_cast<std::uint64_t>(c.get_int("data_seed", 0));
  const double weight_sd = c.get_double("weight_sd", 3.0);
  if (Ds.empty() || N < 1 || samples < 2 || S < 2 || shards < 1 || mf.iters < 0 || !(epsilon >= 0.0 && epsilon < 1.0)) {
    throw ConfigError("gradvar: settings out of range");
  }
  for (const long long d : Ds) {
    if (d < 1) throw ConfigError("gradvar: every D must be positive");
  }
  Timer timer;
  CsvWriter w(ctx.out / "gradvar.csv", {"D", "mean_ratio", "scale_ratio", "median_ratio", "min_ratio", "T",
                                        "Zr_hat", "elbo_meanfield"});
  CsvWriter wc(ctx.out / "gradvar_coords.csv", {"D", "coord", "block", "var_rvrs", "var_vrs", "ratio"});
  Json results = Json::array();
  for (const long long D : Ds) {
    const GradVarRow r =
        gradvar_for_dimension(D, N, mf, samples, S, epsilon, shards, weight_sd, ctx.seed, data_seed, ctx.workers);
    w.row({r.D, r.mean_ratio, r.scale_ratio, r.median_ratio, r.min_ratio, r.T, r.Zr_hat, r.elbo_meanfield});
    for (Eigen::Index i = 0; i < r.var_rvrs.size(); ++i) {
      wc.row({r.D, static_cast<long long>(i % D), std::string(i < D ? "mu" : "log_scale"), r.var_rvrs[i],
              r.var_vrs[i], r.var_vrs[i] / r.var_rvrs[i]});
    }
    results.push_back({{"D", r.D}, {"mean_ratio", r.mean_ratio}, {"scale_ratio", r.scale_ratio},
                       {"median_ratio", r.median_ratio}, {"min_ratio", r.min_ratio}, {"T", r.T},
                       {"Zr_hat", r.Zr_hat}, {"elbo_meanfield", r.elbo_meanfield}});
  }
  Json s = base_summary(ctx);
  s["results"] = results;
  finish_summary(s, ctx, {"gradvar.csv", "gradvar_coords.csv"}, timer);
  return s;
}

// ---------------------------------------------------------------------------------------------

struct SweepRow {
  std::string method;
  double Z_tgt = 0.0;
  double elbo = 0.0;
  double geo_scale = 0.0;
  double T = 0.0;
  double Zr_hat = 0.0;
  double Zr_se = 0.0;
  long long proposals = 0;
};

namespace detail {

template <TargetModel Target>
std::vector<SweepRow> sweep_target(const RunContext& ctx, const Target& target, const Json& target_json,
                                   const std::vector<double>& zs, const TrainConfig& tc, long long eval_samples,
                                   std::vector<std::string>& files) {
  const Vector theta = target.default_theta();
  const PhaseOne<MeanFieldNormal> p1 = phase_one(target, theta, MeanFieldNormal::standard(target.latent_dim()), tc);
  std::vector<SweepRow> rows;
  {
    fs::create_directories(ctx.out / "meanfield");
    write_trace(ctx.out / "meanfield" / "trace.csv", p1.fit.trace);
    write_fit(ctx.out / "meanfield" / "fit.json", target_json, p1.fit.proposal, nullptr);
    files.push_back("meanfield/trace.csv");
    files.push_back("meanfield/fit.json");
    Rng er(ctx.seed, stream::eval);
    rows.push_back({"meanfield", 1.0, estimate_vi_elbo(target, theta, p1.fit.proposal, er, eval_samples),
                    geometric_mean_scale(p1.fit.proposal), std::numeric_limits<double>::infinity(), 1.0, 0.0, 0});
  }
  std::vector<FitResult<MeanFieldNormal>> fits(zs.size());
  parallel_for(zs.size(), ctx.workers, [&](std::size_t k) {
    TrainConfig t = tc;
    t.Z_tgt = zs[k];
    fits[k] = fit_from_phase_one(target, theta, p1, t, PhiEstimator::rvrs);
  });
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const auto& f = fits[k];
    const std::string label = label_z(zs[k]);
    fs::create_directories(ctx.out / label);
    write_trace(ctx.out / label / "trace.csv", f.trace);
    write_checkpoints(ctx.out / label / "checkpoints.csv", f.checkpoints);
    write_fit(ctx.out / label / "fit.json", target_json, f.proposal, &f.acceptance);
    for (const char* name : {"trace.csv", "checkpoints.csv", "fit.json"}) files.push_back(label + "/" + name);
    Rng er(ctx.seed, stream::eval + 100 * (k + 1));
    const ElboEstimate e = estimate_elbo(target, theta, f.proposal, f.acceptance, er, eval_samples);
    rows.push_back({"rvrs", zs[k], e.elbo, geometric_mean_scale(f.proposal), f.acceptance.T, e.Zr, e.Zr_std_err,
                    f.total_proposals});
  }
  return rows;
}

inline Json sweep_json(const SweepRow& r) {
  return {{"method", r.method}, {"Z_tgt", r.Z_tgt}, {"elbo", r.elbo}, {"geo_scale", r.geo_scale}, {"T", r.T},
          {"Zr_hat", r.Zr_hat}, {"Zr_se", r.Zr_se}, {"total_proposals", r.proposals}};
}

}  // namespace detail

inline Json run_sweep_z(const RunContext& ctx) {
  using namespace detail;
  const Config& c = ctx.config;
  c.restrict_to(keys({kCommonKeys, kTrainKeys, kLogisticKeys}, {"Z_tgt", "target", "eval_samples"}), ctx.experiment);
  const std::vector<double> zs = c.get_double_list("Z_tgt", {0.4, 0.2, 0.1, 0.05});
  require_lists(zs);
  const std::string target_name = c.get_string("target", "logistic");
  if (target_name != "logistic" && target_name != "funnel") {
    throw ConfigError("sweep-z: target must be 'logistic' or 'funnel'");
  }
  const bool funnel = target_name == "funnel";
  const TrainConfig tc = read_train_config(c, ctx.seed, {funnel ? 20000 : 10000, 1e-3, 10000, 1e-2, 1000});
  const long long eval_samples = c.get_int("eval_samples", 100000);
  if (eval_samples < 2) throw ConfigError("eval_samples must be at least 2");
  LogisticSpec spec;
  if (!funnel) spec = read_logistic_spec(c, 100, 51);

  Timer timer;
  std::vector<std::string> files{"sweep.csv"};
  std::vector<SweepRow> rows;
  if (funnel) {
    rows = sweep_target(ctx, FunnelTarget{}, Json{{"type", "funnel"}}, zs, tc, eval_samples, files);
  } else {
    rows = sweep_target(ctx, build_logistic(spec), spec.to_json(), zs, tc, eval_samples, files);
  }
  CsvWriter w(ctx.out / "sweep.csv", {"method", "Z_tgt", "elbo", "geo_scale", "T", "Zr_hat", "Zr_se", "total_proposals"});
  Json results = Json::array();
  for (const auto& r : rows) {
    w.row({r.method, r.Z_tgt, r.elbo, r.geo_scale, r.T, r.Zr_hat, r.Zr_se, r.proposals});
    results.push_back(sweep_json(r));
  }
  Json s = base_summary(ctx);
  s["target"] = target_name;
  s["results"] = results;
  finish_summary(s, ctx, files, timer);
  return s;
}

// ---------------------------------------------------------------------------------------------

inline Json run_logreg(const RunContext& ctx) {
  using namespace detail;
  const Config& c = ctx.config;
  c.restrict_to(keys({kCommonKeys, kTrainKeys, kLogisticKeys}, {"Z_tgt", "methods", "eval_samples"}), ctx.experiment);
  const double Z = c.get_double("Z_tgt", 0.1);
  require_lists({Z});
  const std::string methods_text = c.get_string("methods", "meanfield,rvrs,vrs");
  std::set<std::string> methods;
  for (const auto& m : detail::split_list(methods_text)) {
    if (m != "meanfield" && m != "rvrs" && m != "vrs") throw ConfigError("logreg: unknown method '" + m + "'");
    methods.insert(m);
  }
  TrainConfig tc = read_train_config(c, ctx.seed, {10000, 1e-3, 10000, 1e-2, 1000});
  tc.Z_tgt = Z;
  const long long eval_samples = c.get_int("eval_samples", 100000);
  if (eval_samples < 2) throw ConfigError("eval_samples must be at least 2");
  const LogisticSpec spec = read_logistic_spec(c, 100, 51);

  Timer timer;
  const LogisticRegressionTarget target = build_logistic(spec);
  const Vector theta(0);
  const Json tj = spec.to_json();
  const PhaseOne<MeanFieldNormal> p1 = phase_one(target, theta, MeanFieldNormal::standard(target.latent_dim()), tc);
  std::vector<std::string> files{"results.csv"};
  std::vector<SweepRow> rows;
  if (methods.count("meanfield")) {
    fs::create_directories(ctx.out / "meanfield");
    write_trace(ctx.out / "meanfield" / "trace.csv", p1.fit.trace);
    write_fit(ctx.out / "meanfield" / "fit.json", tj, p1.fit.proposal, nullptr);
    files.insert(files.end(), {"meanfield/trace.csv", "meanfield/fit.json"});
    Rng er(ctx.seed, stream::eval);
    rows.push_back({"meanfield", 1.0, estimate_vi_elbo(target, theta, p1.fit.proposal, er, eval_samples),
                    geometric_mean_scale(p1.fit.proposal), std::numeric_limits<double>::infinity(), 1.0, 0.0, 0});
  }
  std::vector<std::string> fitted;
  for (const char* m : {"rvrs", "vrs"}) {
    if (methods.count(m)) fitted.emplace_back(m);
  }
  std::vector<FitResult<MeanFieldNormal>> fits(fitted.size());
  parallel_for(fitted.size(), ctx.workers, [&](std::size_t k) {
    fits[k] = fit_from_phase_one(target, theta, p1, tc, fitted[k] == "rvrs" ? PhiEstimator::rvrs : PhiEstimator::vrs);
  });
  for (std::size_t k = 0; k < fitted.size(); ++k) {
    const auto& f = fits[k];
    const std::string& m = fitted[k];
    fs::create_directories(ctx.out / m);
    write_trace(ctx.out / m / "trace.csv", f.trace);
    write_checkpoints(ctx.out / m / "checkpoints.csv", f.checkpoints);
    write_fit(ctx.out / m / "fit.json", tj, f.proposal, &f.acceptance);
    for (const char* name : {"trace.csv", "checkpoints.csv", "fit.json"}) files.push_back(m + "/" + name);
    Rng er(ctx.seed, stream::eval + 100 * (k + 1));
    const ElboEstimate e = estimate_elbo(target, theta, f.proposal, f.acceptance, er, eval_samples);
    rows.push_back({m, Z, e.elbo, geometric_mean_scale(f.proposal), f.acceptance.T, e.Zr, e.Zr_std_err,
                    f.total_proposals});
  }
  CsvWriter w(ctx.out / "results.csv", {"method", "Z_tgt", "elbo", "geo_scale", "T", "Zr_hat", "Zr_se", "total_proposals"});
  Json results = Json::array();
  for (const auto& r : rows) {
    w.row({r.method, r.Z_tgt, r.elbo, r.geo_scale, r.T, r.Zr_hat, r.Zr_se, r.proposals});
    results.push_back(sweep_json(r));
  }
  Json s = base_summary(ctx);
  s["latent_dim"] = static_cast<long long>(target.latent_dim());
  s["num_data"] = static_cast<long long>(target.num_data());
  s["results"] = results;
  finish_summary(s, ctx, files, timer);
  return s;
}

// ---------------------------------------------------------------------------------------------

struct SemiRow {
  std::string method;
  long long S_prime = 0;
  double elbo_per_datapoint = 0.0;
  double gap_to_oracle = 0.0;
  double mask_rate = 1.0;
  double log_Zr_lb_per_datapoint = 0.0;
  long long proposals = 0;
  long long skipped_steps = 0;
};

inline Json run_semi(const RunContext& ctx) {
  using namespace detail;
  const Config& c = ctx.config;
  c.restrict_to(keys({kCommonKeys},
                     {"data_path", "N", "Dx", "data_seed", "noise_sd", "extra_noise_sd", "extra_fraction", "nu",
                      "sigma", "prior_sd", "batch_size", "Z_tgt", "S", "S_prime", "total_iters", "base_lr",
                      "local_lr", "phase1_iters", "phase1_lr", "t_samples", "epsilon", "init_T_samples",
                      "trace_every", "max_proposals", "oracle_iters", "oracle_lr", "oracle_samples", "M1", "M2"}),
                ctx.experiment);
  const std::string data_path = c.get_string("data_path", "");
  const long long N = c.get_int("N", 256);
  const long long Dx = c.get_int("Dx", 3);
  const auto data_seed = static_cast<std::uint64_t>(c.get_int("data_seed", 0));
  const double noise_sd = c.get_double("noise_sd", 0.5);
  const double extra_sd = c.get_double("extra_noise_sd", 3.0);
  const double extra_frac = c.get_double("extra_fraction", 0.25);
  const double nu = c.get_double("nu", 4.0);
  const double sigma = c.get_double("sigma", 0.5);
  const double prior_sd = c.get_double("prior_sd", 1.0);
  SemiTrainConfig sc;
  sc.seed = ctx.seed;
  sc.batch_size = c.get_int("batch_size", 32);
  sc.Z_tgt = c.get_double("Z_tgt", 0.5);
  sc.S = c.get_int("S", 2);
  const std::vector<long long> s_primes = c.get_int_list("S_prime", {0});
  sc.total_iters = c.get_int("total_iters", 20000);
  sc.base_lr = c.get_double("base_lr", 1e-3);
  sc.local_lr = c.get_double("local_lr", 1e-2);
  sc.phase1.iters = c.get_int("phase1_iters", 5000);
  sc.phase1.base_lr = c.get_double("phase1_lr", 1e-2);
  sc.t_samples = c.get_int("t_samples", 0);
  sc.epsilon = c.get_double("epsilon", 1e-4);
  sc.init_T_samples = c.get_int("init_T_samples", 200);
  sc.trace_every = c.get_int("trace_every", 100);
  sc.phase1.trace_every = sc.trace_every;
  sc.max_proposals = c.get_int("max_proposals", 0);
  MeanFieldConfig oracle_cfg;
  oracle_cfg.iters = c.get_int("oracle_iters", 20000);
  oracle_cfg.base_lr = c.get_double("oracle_lr", 1e-2);
  oracle_cfg.trace_every = sc.trace_every;
  const long long oracle_samples = c.get_int("oracle_samples", 200000);
  SemiEvalConfig ec{c.get_int("M1", 200), c.get_int("M2", 1000)};
  try {
    sc.validate();
    ec.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("semi: ") + e.what());
  }
  if (oracle_samples < 1 || N < 1 || Dx < 0) throw ConfigError("semi: settings out of range");
  for (const long long sp : s_primes) {
    if (sp != 0 && sp < sc.S) throw ConfigError("semi: every S_prime must be 0 (rule of thumb) or at least S");
  }
  if (!data_path.empty() && !fs::is_regular_file(data_path)) {
    throw ConfigError("data_path '" + data_path + "' is not a readable file");
  }

  Timer timer;
  Dataset ds;
  if (!data_path.empty()) {
    ds = load_delimited(data_path);
  } else {
    Rng drng(data_seed, stream::data);
    ds = synthetic_heavy_tailed_regression(N, Dx, drng, noise_sd, extra_sd, extra_frac);
  }
  const HierStudentTModel model(ds.features, ds.targets, nu, sigma, prior_sd);
  const Vector theta = model.default_theta();
  const auto n_data = static_cast<double>(model.num_data());
  std::vector<std::string> files{"semi.csv"};

  // Oracle: Gamma latents integrated out, mean-field over the globals.
  const StudentTMarginalTarget marginal(model);
  Rng orng(ctx.seed, rvrs::stream::phase1);
  const auto oracle = fit_meanfield(marginal, theta, MeanFieldNormal::standard(model.global_dim()), oracle_cfg, orng);
  Rng oe(ctx.seed, stream::eval);
  const double oracle_elbo = estimate_vi_elbo(marginal, theta, oracle.proposal, oe, oracle_samples) / n_data;
  fs::create_directories(ctx.out / "oracle");
  write_trace(ctx.out / "oracle" / "trace.csv", oracle.trace);
  files.push_back("oracle/trace.csv");

  struct Run {
    std::string label;
    SemiTrainConfig cfg;
  };
  std::vector<Run> runs;
  {
    SemiTrainConfig u = sc;
    u.sampler = SemiSampler::unbiased;
    runs.push_back({"semi_unbiased", u});
    for (const long long sp : s_primes) {
      SemiTrainConfig b = sc;
      b.sampler = SemiSampler::biased;
      b.S_prime = sp;
      runs.push_back({"semi_biased_s" + std::to_string(b.resolved_S_prime()), b});
    }
  }
  std::vector<SemiFit> fits(runs.size());
  std::vector<SemiEvaluation> evals(runs.size());
  parallel_for(runs.size(), ctx.workers, [&](std::size_t k) {
    fits[k] = fit_semi(model, theta, runs[k].cfg);
    Rng er(ctx.seed, stream::eval + 1);
    const auto& st = fits[k].state;
    evals[k] = semi_evaluate(model, st.theta, st.global, st.locals, st.thresholds, runs[k].cfg.epsilon, ec, er);
  });

  std::vector<SemiRow> rows;
  rows.push_back({"oracle", 0, oracle_elbo, 0.0, 1.0, 0.0, 0, 0});
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& f = fits[k];
    const auto& e = evals[k];
    const bool biased = runs[k].cfg.sampler == SemiSampler::biased;
    rows.push_back({biased ? "semi_biased" : "semi_unbiased",
                    biased ? static_cast<long long>(runs[k].cfg.resolved_S_prime()) : 0, e.elbo_per_datapoint,
                    oracle_elbo - e.elbo_per_datapoint, f.mask_rate, e.log_Zr_lb / n_data, f.total_proposals,
                    f.skipped_steps});
    fs::create_directories(ctx.out / runs[k].label);
    write_trace(ctx.out / runs[k].label / "trace.csv", f.trace);
    files.push_back(runs[k].label + "/trace.csv");
  }
  CsvWriter w(ctx.out / "semi.csv", {"method", "S_prime", "elbo_per_datapoint", "gap_to_oracle", "mask_rate",
                                     "log_Zr_lb_per_datapoint", "total_proposals", "skipped_steps"});
  Json results = Json::array();
  for (const auto& r : rows) {
    w.row({r.method, r.S_prime, r.elbo_per_datapoint, r.gap_to_oracle, r.mask_rate, r.log_Zr_lb_per_datapoint,
           r.proposals, r.skipped_steps});
    results.push_back({{"method", r.method}, {"S_prime", r.S_prime}, {"elbo_per_datapoint", r.elbo_per_datapoint},
                       {"gap_to_oracle", r.gap_to_oracle}, {"mask_rate", r.mask_rate},
                       {"log_Zr_lb_per_datapoint", r.log_Zr_lb_per_datapoint}, {"total_proposals", r.proposals},
                       {"skipped_steps", r.skipped_steps}});
  }
  Json s = base_summary(ctx);
  s["num_data"] = static_cast<long long>(model.num_data());
  s["results"] = results;
  finish_summary(s, ctx, files, timer);
  return s;
}

// ---------------------------------------------------------------------------------------------

struct BoundInstance {
  double log_Zp, post_mean, post_sd, q_mean, q_sd;
};

// Random 1-D Gaussian posterior/proposal pairs with q wide enough for xi to be finite.
inline std::vector<BoundInstance> bound_instances(long long count, std::uint64_t seed) {
  Rng rng(seed, stream::instances);
  std::vector<BoundInstance> out;
  for (long long i = 0; i < count; ++i) {
    BoundInstance b{};
    b.log_Zp = -2.0 + 4.0 * rng.uniform();
    b.post_mean = rng.normal();
    b.post_sd = std::exp(-0.5 + rng.uniform());
    b.q_mean = b.post_mean + 0.5 * b.post_sd * rng.normal();
    b.q_sd = b.post_sd * (0.8 + 0.8 * rng.uniform());
    out.push_back(b);
  }
  return out;
}

inline Json run_bound_check(const RunContext& ctx) {
  using namespace detail;
  const Config& c = ctx.config;
  c.restrict_to(keys({kCommonKeys}, {"instances", "T_min", "T_max", "T_step", "quad_nodes", "width", "epsilon"}),
                ctx.experiment);
  const long long count = c.get_int("instances", 20);
  const double T_min = c.get_double("T_min", -8.0);
  const double T_max = c.get_double("T_max", 0.0);
  const double T_step = c.get_double("T_step", 0.5);
  const long long nodes = c.get_int("quad_nodes", 4001);
  const double width = c.get_double("width", 20.0);
  const double epsilon = c.get_double("epsilon", 0.0);
  if (count < 1 || !(T_step > 0.0) || !(T_max >= T_min) || nodes < 3 || !(width > 0.0) ||
      !(epsilon >= 0.0 && epsilon < 1.0)) {
    throw ConfigError("bound-check: settings out of range");
  }
  std::vector<double> Ts;
  for (long long i = 0;; ++i) {
    const double T = T_min + T_step * static_cast<double>(i);
    if (T > T_max + 1e-12) break;
    Ts.push_back(T);
  }
  Timer timer;
  const std::vector<BoundInstance> inst = bound_instances(count, ctx.seed);
  std::vector<std::vector<BoundReport>> reports(inst.size());
  parallel_for(inst.size(), ctx.workers, [&](std::size_t k) {
    const auto& b = inst[k];
    const AnalyticGaussianTarget target =
        AnalyticGaussianTarget::diagonal(b.log_Zp, Vector::Constant(1, b.post_mean), Vector::Constant(1, b.post_sd));
    const MeanFieldNormal q(Vector::Constant(1, b.q_mean), Vector::Constant(1, std::log(b.q_sd)));
    reports[k] = check_prop2(target, target.default_theta(), q, Ts, QuadratureGrid::around(q, width, nodes), epsilon);
  });
  CsvWriter w(ctx.out / "bound.csv", {"instance", "log_Zp", "post_mean", "post_sd", "q_mean", "q_sd", "T", "xi",
                                      "delta", "bound", "valid", "holds"});
  bool all_hold = true;
  long long valid_rows = 0;
  double worst_monotone = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < inst.size(); ++k) {
    const auto& b = inst[k];
    for (std::size_t i = 0; i < reports[k].size(); ++i) {
      const auto& r = reports[k][i];
      w.row({static_cast<long long>(k), b.log_Zp, b.post_mean, b.post_sd, b.q_mean, b.q_sd, r.T, r.xi, r.delta,
             r.bound, static_cast<long long>(r.valid), static_cast<long long>(r.holds)});
      all_hold = all_hold && r.holds;
      valid_rows += r.valid ? 1 : 0;
      // Rows are in increasing T; delta must not increase as T decreases.
      if (i > 0) worst_monotone = std::max(worst_monotone, reports[k][i - 1].delta - r.delta);
    }
  }
  CsvWriter ws(ctx.out / "bound_summary.csv", {"instances", "rows", "valid_rows", "all_hold", "max_monotone_violation"});
  const auto rows = static_cast<long long>(inst.size() * Ts.size());
  ws.row({count, rows, valid_rows, static_cast<long long>(all_hold), worst_monotone});
  Json s = base_summary(ctx);
  s["results"] = {{"instances", count},
                  {"rows", rows},
                  {"valid_rows", valid_rows},
                  {"all_hold", all_hold},
                  {"max_monotone_violation", worst_monotone}};
  finish_summary(s, ctx, {"bound.csv", "bound_summary.csv"}, timer);
  return s;
}

// ---------------------------------------------------------------------------------------------

inline Json run_eval(const RunContext& ctx) {
  using namespace detail;
  const Config& c = ctx.config;
  c.restrict_to(keys({kCommonKeys}, {"fit", "samples"}), ctx.experiment);
  const std::string fit_path = c.get_string("fit", "");
  const long long samples = c.get_int("samples", 100000);
  if (fit_path.empty()) throw ConfigError("eval: key 'fit' (path to a fit.json) is required");
  if (!fs::is_regular_file(fit_path)) throw ConfigError("eval: fit file '" + fit_path + "' not found");
  if (samples < 2) throw ConfigError("eval: samples must be at least 2");
  const Json fit = read_json(fit_path);
  Timer timer;

  MeanFieldNormal q;
  std::string type;
  LogisticSpec spec;
  try {
    q = MeanFieldNormal(json_vector(fit.at("proposal").at("mu")), json_vector(fit.at("proposal").at("log_scale")));
    type = fit.at("target").at("type").get<std::string>();
    if (type == "logistic") spec = LogisticSpec::from_json(fit.at("target"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("eval: malformed fit file: " + std::string(e.what()));
  }
  const bool has_T = fit.contains("T");
  Json results;
  auto evaluate = [&](const auto& target) {
    if (target.latent_dim() != q.dim()) throw ConfigError("eval: proposal dimension does not match the target");
    const Vector theta = target.default_theta();
    Rng rng(ctx.seed, stream::eval);
    CsvWriter w(ctx.out / "eval.csv", {"elbo", "Zr", "Zr_se", "log_Zr", "samples"});
    if (has_T) {
      const AcceptanceConfig acc(fit.at("T").get<double>(), fit.at("epsilon").get<double>());
      const ElboEstimate e = estimate_elbo(target, theta, q, acc, rng, samples);
      w.row({e.elbo, e.Zr, e.Zr_std_err, e.log_Zr, samples});
      results = {{"elbo", e.elbo}, {"Zr", e.Zr}, {"Zr_se", e.Zr_std_err}, {"log_Zr", e.log_Zr}, {"samples", samples}};
    } else {
      const double elbo = estimate_vi_elbo(target, theta, q, rng, samples);
      w.row({elbo, 1.0, 0.0, 0.0, samples});
      results = {{"elbo", elbo}, {"Zr", 1.0}, {"Zr_se", 0.0}, {"log_Zr", 0.0}, {"samples", samples}};
    }
  };
  if (type == "funnel") {
    evaluate(FunnelTarget{});
  } else if (type == "logistic") {
    if (!spec.data_path.empty() && !fs::is_regular_file(spec.data_path)) {
      throw ConfigError("eval: dataset '" + spec.data_path + "' referenced by the fit is missing");
    }
    evaluate(build_logistic(spec));
  } else {
    throw ConfigError("eval: unsupported target type '" + type + "'");
  }
  Json s = base_summary(ctx);
  s["fit"] = fit_path;
  s["results"] = results;
  finish_summary(s, ctx, {"eval.csv"}, timer);
  return s;
}

// ---------------------------------------------------------------------------------------------

/// Validates the configuration, creates the output directory and runs the experiment.
inline Json run_experiment(const RunContext& ctx) {
  static const std::map<std::string, std::function<Json(const RunContext&)>> table{
      {"funnel", run_funnel},   {"gradvar", run_gradvar}, {"sweep-z", run_sweep_z},        {"logreg", run_logreg},
      {"semi", run_semi},       {"bound-check", run_bound_check}, {"eval", run_eval}};
  const auto it = table.find(ctx.experiment);
  if (it == table.end()) throw ConfigError("unknown experiment '" + ctx.experiment + "'");
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec || !fs::is_directory(ctx.out)) throw ConfigError("cannot create output directory '" + ctx.out.string() + "'");
  return it->second(ctx);
}

}  // namespace rvrs::cli

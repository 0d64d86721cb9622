#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ssvi/ctm.hpp"
#include "ssvi/dataio.hpp"
#include "ssvi/glm.hpp"
#include "ssvi/gme.hpp"
#include "ssvi/metrics.hpp"
#include "ssvi/pmf.hpp"
#include "ssvi/sgp.hpp"

namespace ssvi {

/// Everything a run needs, filled from a key=value config file and/or flag
/// overrides (flags win). The seed is mandatory so every run is replayable.
struct RunConfig {
  std::string model;  // glm | gme | sgp | pmf | ctm
  std::string verb;   // synth | train | eval
  std::string engine = "hmcssvi";
  std::string schedule = "one_over_t";  // or constant:<rho>
  Eigen::Index batch_size = 0;          // 0 = full batch
  int mc_samples = 10;
  int inner_samples = 100;
  bool seed_set = false;
  std::uint64_t seed = 0;
  std::string train_path;
  std::string test_path;
  std::string model_in;
  std::string model_out;
  std::string out_path;
  long epochs = 10;
  long eval_every = 1;
  std::string likelihood = "logistic";  // gaussian:<var> | logistic | poisson:<lmax> | ordinal:<L>
  std::string timing = "work";          // work | wall

  Eigen::Index dim = 10;
  Eigen::Index n = 200;
  Eigen::Index rows = 20;
  Eigen::Index cols = 20;
  Eigen::Index latent = 5;
  double density = 1.0;
  Eigen::Index topics = 5;
  Eigen::Index vocab = 100;
  Eigen::Index docs = 50;
  Eigen::Index words_per_doc = 50;
  std::string approx = "optimal";  // ctm: optimal | simple | both
  std::string cov_mode = "full";   // ctm: full | diag
  std::string nll_scheme = "posterior+0.1I";
  int nll_samples = 10000;
  int nll_batches = 10;
  Eigen::Index nll_docs = 10;
  std::string sgp_variant = "opt";  // subopt | opt | v1 | v2
  Eigen::Index inducing = 20;
  bool grid_search = false;
  double tau_sq = 25.0;
};

inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  auto to_i = [&](const std::string& v) { return std::stol(v); };
  auto to_u = [&](const std::string& v) { return std::stoull(v); };
  auto to_d = [&](const std::string& v) { return std::stod(v); };
  if (key == "engine") c.engine = value;
  else if (key == "schedule") c.schedule = value;
  else if (key == "batch_size") c.batch_size = to_i(value);
  else if (key == "mc_samples") c.mc_samples = static_cast<int>(to_i(value));
  else if (key == "inner_samples") c.inner_samples = static_cast<int>(to_i(value));
  else if (key == "seed") { c.seed = to_u(value); c.seed_set = true; }
  else if (key == "train") c.train_path = value;
  else if (key == "test") c.test_path = value;
  else if (key == "model_in") c.model_in = value;
  else if (key == "model_out") c.model_out = value;
  else if (key == "out") c.out_path = value;
  else if (key == "epochs") c.epochs = to_i(value);
  else if (key == "eval_every") c.eval_every = to_i(value);
  else if (key == "likelihood") c.likelihood = value;
  else if (key == "timing") c.timing = value;
  else if (key == "dim") c.dim = to_i(value);
  else if (key == "n") c.n = to_i(value);
  else if (key == "rows") c.rows = to_i(value);
  else if (key == "cols") c.cols = to_i(value);
  else if (key == "latent") c.latent = to_i(value);
  else if (key == "density") c.density = to_d(value);
  else if (key == "topics") c.topics = to_i(value);
  else if (key == "vocab") c.vocab = to_i(value);
  else if (key == "docs") c.docs = to_i(value);
  else if (key == "words_per_doc") c.words_per_doc = to_i(value);
  else if (key == "approx") c.approx = value;
  else if (key == "cov_mode") c.cov_mode = value;
  else if (key == "nll_scheme") c.nll_scheme = value;
  else if (key == "nll_samples") c.nll_samples = static_cast<int>(to_i(value));
  else if (key == "nll_batches") c.nll_batches = static_cast<int>(to_i(value));
  else if (key == "nll_docs") c.nll_docs = to_i(value);
  else if (key == "variant") c.sgp_variant = value;
  else if (key == "inducing") c.inducing = to_i(value);
  else if (key == "grid_search") c.grid_search = (value == "1" || value == "true");
  else if (key == "tau_sq") c.tau_sq = to_d(value);
  else throw Error("unknown config key: " + key);
}

inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config parse error at line " + std::to_string(line_no));
    }
    apply_config_entry(c, line.substr(0, eq), line.substr(eq + 1));
  }
}

inline LikelihoodModel parse_likelihood(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "gaussian") return LikelihoodModel::gaussian(arg.empty() ? 1.0 : std::stod(arg));
  if (kind == "logistic") return LikelihoodModel::logistic();
  if (kind == "poisson") return LikelihoodModel::poisson_logistic(arg.empty() ? 10.0 : std::stod(arg));
  if (kind == "ordinal") return LikelihoodModel::ordinal(arg.empty() ? 5 : std::stoi(arg));
  throw Error("unknown likelihood: " + spec);
}

inline StepSchedule parse_schedule(const std::string& spec) {
  if (spec == "one_over_t") return StepSchedule::one_over_t();
  if (spec.rfind("one_over_t:", 0) == 0) {
    return StepSchedule::one_over_t(std::stod(spec.substr(11)));
  }
  if (spec.rfind("constant:", 0) == 0) return StepSchedule::constant(std::stod(spec.substr(9)));
  throw Error("unknown schedule: " + spec);
}

inline CtmNllScheme parse_nll_scheme(const std::string& s) {
  if (s == "prior") return CtmNllScheme::prior;
  if (s == "posterior") return CtmNllScheme::posterior;
  if (s == "posterior+0.1I") return CtmNllScheme::posterior_inflate_tenth;
  if (s == "posterior+1I") return CtmNllScheme::posterior_inflate_one;
  if (s == "point-split") return CtmNllScheme::point_split;
  throw Error("unknown nll scheme: " + s);
}

// ---------------------------------------------------------------------------
// plain-text model serialization

namespace detail {

inline void write_matrix(std::ostream& out, const std::string& tag, const MatrixXd& m) {
  out << tag << ' ' << m.rows() << ' ' << m.cols() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out << m(r, c) << (c + 1 == m.cols() ? '\n' : ' ');
    }
  }
  if (m.rows() == 0) out << '\n';
}

inline MatrixXd read_matrix(std::istream& in, const std::string& tag) {
  std::string got;
  Eigen::Index rows, cols;
  if (!(in >> got >> rows >> cols) || got != tag) {
    throw ParseError("model file: expected matrix tag " + tag);
  }
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(in >> m(r, c))) throw ParseError("model file: short matrix " + tag);
    }
  }
  return m;
}

inline double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// Deterministic work-or-wall clock for traces.
struct RunClock {
  bool wall;
  double start = 0.0;
  double work = 0.0;
  explicit RunClock(bool use_wall) : wall(use_wall) {
    if (wall) start = now_seconds();
  }
  void charge(double units) { work += units; }
  double read() const { return wall ? now_seconds() - start : work; }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// per-model evaluation helpers

/// Predictive metrics for the latent-linear models: f* ~ N(m.x, x.S x) pushed
/// through the likelihood by quadrature.
inline std::pair<double, double> glm_test_metrics(const GlmState& st, const GlmData& test) {
  double nll = 0.0, err = 0.0;
  long err_n = 0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const double m = st.local_mean(test, i);
    const double v = std::max(st.local_var(test, i), 1e-12);
    const double y = test.y[i];
    const auto& gh = GaussHermite::cached(100);
    VectorXd terms(100);
    const double scale = std::sqrt(2.0 * v);
    for (int q = 0; q < 100; ++q) {
      terms[q] = std::log(gh.weights[q] / std::sqrt(M_PI)) +
                 st.lik.log_lik(y, m + scale * gh.nodes[q]);
    }
    nll -= log_sum_exp(terms);
    switch (st.lik.kind()) {
      case LikelihoodModel::Kind::gaussian: {
        err += (m - y) * (m - y);
        ++err_n;
        break;
      }
      case LikelihoodModel::Kind::logistic: {
        const double p = GaussHermite::cached(100).expect(m, v, [](double f) { return sigmoid(f); });
        err += ((p >= 0.5 ? 1.0 : -1.0) != y) ? 1.0 : 0.0;
        ++err_n;
        break;
      }
      case LikelihoodModel::Kind::poisson_logistic: {
        const double ey = GaussHermite::cached(20).expect(
            m, v, [&](double f) { return st.lik.lambda_max() * sigmoid(f); });
        if (y != 0.0) {
          err += std::abs(std::round(ey) - y) / y;
          ++err_n;
        }
        break;
      }
      case LikelihoodModel::Kind::ordinal: {
        int best = 1;
        double best_p = -1.0;
        for (int level = 1; level <= st.lik.levels(); ++level) {
          const double p = GaussHermite::cached(100).expect(
              m, v, [&](double f) { return std::exp(st.lik.log_lik(level, f)); });
          if (p > best_p) {
            best_p = p;
            best = level;
          }
        }
        err += std::abs(best - y);
        ++err_n;
        break;
      }
    }
  }
  nll /= test.size();
  if (err_n > 0) err /= err_n;
  if (st.lik.kind() == LikelihoodModel::Kind::gaussian) err = std::sqrt(err);
  return {nll, err};
}

inline std::pair<double, double> gme_test_metrics(const GmeState& st, const GmeData& test) {
  double nll = 0.0, err = 0.0;
  long err_n = 0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const auto pred = gme_predict(st, test.X.row(i), 200);
    const double y = test.y[i];
    nll -= pred.log_prob(y);
    const double est = pred.point_estimate();
    switch (st.lik.kind()) {
      case LikelihoodModel::Kind::gaussian:
        err += (est - y) * (est - y);
        ++err_n;
        break;
      case LikelihoodModel::Kind::logistic:
        err += (est != y) ? 1.0 : 0.0;
        ++err_n;
        break;
      case LikelihoodModel::Kind::poisson_logistic:
        if (y != 0.0) {
          err += std::abs(est - y) / y;
          ++err_n;
        }
        break;
      case LikelihoodModel::Kind::ordinal:
        err += std::abs(est - y);
        ++err_n;
        break;
    }
  }
  nll /= test.size();
  if (err_n > 0) err /= err_n;
  if (st.lik.kind() == LikelihoodModel::Kind::gaussian) err = std::sqrt(err);
  return {nll, err};
}

// ---------------------------------------------------------------------------
// training drivers (shared by the train verb and the acceptance suite)

struct GlmRunResult {
  GlmState state;
  MetricsTrace trace;
};

inline GlmRunResult glm_train(const RunConfig& cfg, const GlmData& train, const GlmData& test,
                              const LikelihoodModel& lik) {
  GlmState state = GlmState::init(train.dim(), lik);
  const Engine engine = parse_engine(cfg.engine);
  StepSchedule sched = parse_schedule(cfg.schedule);
  AdagradState ad_mean(train.dim());
  AdagradState ad_chol(train.dim() * train.dim());
  detail::RunClock clock(cfg.timing == "wall");
  MetricsTrace trace;
  GuardLog log;

  const auto eval_est = GaussianExpectationEstimator::mc(cfg.mc_samples, cfg.seed ^ 0xe7a1);
  long iteration = 0;
  auto record = [&](long epoch) {
    MetricsRow row;
    row.wall_time_s = clock.read();
    row.epoch = epoch;
    row.iteration = iteration;
    row.neg_vlb_mc = -glm_vlb(state, train, eval_est);
    if (test.size() > 0) {
      auto [nll, err] = glm_test_metrics(state, test);
      row.test_nll = nll;
      row.error_metric = err;
    }
    row.notes = "engine=" + cfg.engine;
    trace.add(row);
  };
  record(0);

  const Eigen::Index n = train.size();
  const Eigen::Index batch = (cfg.batch_size > 0 && cfg.batch_size < n) ? cfg.batch_size : n;
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = shuffled_indices(n, detail::splitmix64(cfg.seed ^ (0x5eedULL + epoch)));
    for (Eigen::Index start = 0; start < n; start += batch) {
      Minibatch mb(order.begin() + start,
                   order.begin() + std::min<Eigen::Index>(start + batch, n));
      const auto est = GaussianExpectationEstimator::mc(
          cfg.mc_samples, detail::splitmix64(cfg.seed ^ (iteration * 2654435761ULL + 17)));
      switch (engine) {
        case Engine::mcssvi:
          state = mcssvi_step(state, train, mb, sched.next(), est, &log);
          break;
        case Engine::sdsvi: {
          const VectorXd gm = glm_mean_gradient(state, train, mb, est);
          const MatrixXd gc = glm_chol_gradient(state, train, mb, est);
          const VectorXd m = state.q.mean() + ad_mean.step(gm);
          const MatrixXd c = cholesky_grad_step(state.q.chol(), ad_chol.step(gc), 1.0);
          state = GlmState{GaussianDist(m, c), state.prior, state.lik};
          break;
        }
        case Engine::hmcssvi:
          state = hmcssvi_step(state, train, mb, sched.next(), ad_mean, est, &log);
          break;
      }
      ++iteration;
      clock.charge(static_cast<double>(mb.size()) * cfg.mc_samples);
    }
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) record(epoch);
  }
  return {state, trace};
}

struct GmeRunResult {
  GmeState state;
  MetricsTrace trace;
};

inline GmeRunResult gme_train(const RunConfig& cfg, const GmeData& train, const GmeData& test,
                              const LikelihoodModel& lik, bool optimal_bound = true) {
  GmeState state = GmeState::init(train.dim(), lik, cfg.tau_sq);
  const Engine engine = parse_engine(cfg.engine);
  StepSchedule sched = parse_schedule(cfg.schedule);
  AdagradState ad_mean(train.dim());
  AdagradState ad_chol(train.dim() * train.dim());
  AdagradState ad_sigma(1);
  detail::RunClock clock(cfg.timing == "wall");
  MetricsTrace trace;
  GuardLog log;
  long iteration = 0;

  auto record = [&](long epoch) {
    MetricsRow row;
    row.wall_time_s = clock.read();
    row.epoch = epoch;
    row.iteration = iteration;
    const GmeEstimator eval_est{cfg.mc_samples, cfg.inner_samples, cfg.seed ^ 0xe7a2};
    row.neg_vlb_mc = optimal_bound ? -gme_vlb_optimal(state, train, eval_est)
                                   : -gme_vlb_suboptimal(state, train, eval_est);
    if (test.size() > 0) {
      auto [nll, err] = gme_test_metrics(state, test);
      row.test_nll = nll;
      row.error_metric = err;
    }
    row.notes = std::string("engine=") + cfg.engine + (optimal_bound ? ";bound=optimal"
                                                                     : ";bound=suboptimal");
    trace.add(row);
  };
  record(0);

  const Eigen::Index n = train.size();
  const Eigen::Index batch = (cfg.batch_size > 0 && cfg.batch_size < n) ? cfg.batch_size : n;
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = shuffled_indices(n, detail::splitmix64(cfg.seed ^ (0x6eedULL + epoch)));
    for (Eigen::Index start = 0; start < n; start += batch) {
      Minibatch mb(order.begin() + start,
                   order.begin() + std::min<Eigen::Index>(start + batch, n));
      const GmeEstimator est{cfg.mc_samples, cfg.inner_samples,
                             detail::splitmix64(cfg.seed ^ (iteration * 2654435761ULL + 29))};
      const double rho = sched.next();
      state = gme_update(state, train, mb, engine, rho, StandardStep::driven(ad_mean),
                         StandardStep::driven(ad_chol), StandardStep::driven(ad_sigma), est,
                         optimal_bound, &log);
      ++iteration;
      clock.charge(static_cast<double>(mb.size()) * cfg.mc_samples * cfg.inner_samples);
    }
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) record(epoch);
  }
  return {state, trace};
}

struct PmfRunResult {
  PmfState state;
  MetricsTrace trace;
};

inline PmfRunResult pmf_train(const RunConfig& cfg, const TripletData& train,
                              const TripletData& test, const LikelihoodModel& lik) {
  PmfState st = PmfState::init(train, cfg.latent, lik, 1.0, 1.0, 10.0, cfg.seed ^ 0xf00d);
  PmfTrainer tr(std::move(st), parse_engine(cfg.engine), PmfEstimator{10, 10, cfg.seed},
                cfg.batch_size, parse_schedule(cfg.schedule));
  detail::RunClock clock(cfg.timing == "wall");
  MetricsTrace trace;

  auto record = [&](long epoch) {
    MetricsRow row;
    row.wall_time_s = clock.read();
    row.epoch = epoch;
    row.iteration = epoch * 2 * std::max(tr.state.num_u(), tr.state.num_v());
    row.neg_vlb_mc = -pmf_vlb(tr.state, PmfEstimator{10, 10, cfg.seed ^ 0xe7a3});
    if (test.size() > 0) {
      const auto metrics = pmf_evaluate(tr.state, test, 1000, cfg.seed ^ 0xe7a4);
      row.test_nll = metrics.nll;
      row.error_metric = metrics.error;
    }
    row.notes = "engine=" + cfg.engine;
    trace.add(row);
  };
  record(0);
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    tr.est = tr.est.stream(epoch);
    pmf_round_robin_epoch(tr);
    clock.charge(static_cast<double>(train.size()) * tr.est.k1 * tr.est.k2);
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) record(epoch);
  }
  return {std::move(tr.state), trace};
}

struct CtmRunResult {
  CtmState state;
  MetricsTrace trace;
};

inline CtmRunResult ctm_train(const RunConfig& cfg, const CorpusData& train,
                              const CorpusData& test, CtmApprox approx) {
  CtmState st = CtmState::init(train, cfg.topics, cfg.seed ^ 0xc01d, cfg.cov_mode == "diag");
  CtmTrainer tr(std::move(st), parse_engine(cfg.engine), approx, cfg.mc_samples, cfg.seed);
  detail::RunClock clock(cfg.timing == "wall");
  MetricsTrace trace;
  const char* approx_tag = approx == CtmApprox::optimal ? "optimal" : "simple";

  auto record = [&](long epoch) {
    MetricsRow row;
    row.wall_time_s = clock.read();
    row.epoch = epoch;
    row.iteration = epoch * train.num_docs();
    row.neg_vlb_mc = -ctm_vlb(tr.state, train, approx, cfg.mc_samples, cfg.seed ^ 0xe7a5);
    if (test.num_docs() > 0) {
      const auto scheme = parse_nll_scheme(cfg.nll_scheme);
      double nll = 0.0;
      const Eigen::Index limit = std::min<Eigen::Index>(cfg.nll_docs, test.num_docs());
      for (Eigen::Index d = 0; d < limit; ++d) {
        nll += ctm_test_nll(tr.state, test, d, scheme, cfg.nll_samples, cfg.nll_batches,
                            cfg.seed ^ (0xd0c + d))
                   .nll;
      }
      row.test_nll = nll / limit;
    }
    row.notes = std::string("engine=") + cfg.engine + ";approx=" + approx_tag;
    trace.add(row);
  };
  record(0);
  long total_words = 0;
  for (Eigen::Index d = 0; d < train.num_docs(); ++d) total_words += train.doc_length(d);
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    ctm_epoch(tr, train);
    clock.charge(static_cast<double>(total_words) * cfg.mc_samples);
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) record(epoch);
  }
  return {std::move(tr.state), trace};
}

// ---------------------------------------------------------------------------
// model files

inline void save_glm_model(const std::string& path, const GlmState& st,
                           const std::string& lik_spec) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << "ssvi-model glm\n" << "likelihood " << lik_spec << '\n';
  detail::write_matrix(out, "mean", st.q.mean());
  detail::write_matrix(out, "chol", st.q.chol());
  detail::write_matrix(out, "prior_mean", st.prior.mean());
  detail::write_matrix(out, "prior_chol", st.prior.chol());
}

inline GlmState load_glm_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  std::string tag, model, lik_key, lik_spec;
  in >> tag >> model >> lik_key >> lik_spec;
  if (tag != "ssvi-model" || model != "glm") throw ParseError("not a glm model file: " + path);
  const VectorXd m = detail::read_matrix(in, "mean");
  const MatrixXd c = detail::read_matrix(in, "chol");
  const VectorXd pm = detail::read_matrix(in, "prior_mean");
  const MatrixXd pc = detail::read_matrix(in, "prior_chol");
  return GlmState{GaussianDist(m, c), GaussianDist(pm, pc), parse_likelihood(lik_spec)};
}

inline void save_gme_model(const std::string& path, const GmeState& st,
                           const std::string& lik_spec) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << "ssvi-model gme\n" << "likelihood " << lik_spec << '\n';
  out << std::setprecision(17);
  out << "sigma_sq " << st.qv.scale_sq() << '\n';
  out << "tau_sq " << st.prior_v.scale_sq() << '\n';
  detail::write_matrix(out, "mean", st.qw.mean());
  detail::write_matrix(out, "chol", st.qw.chol());
}

inline GmeState load_gme_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  std::string tag, model, key, lik_spec;
  double sigma_sq, tau_sq;
  in >> tag >> model >> key >> lik_spec;
  if (tag != "ssvi-model" || model != "gme") throw ParseError("not a gme model file: " + path);
  in >> key >> sigma_sq >> key >> tau_sq;
  const VectorXd m = detail::read_matrix(in, "mean");
  const MatrixXd c = detail::read_matrix(in, "chol");
  GmeState st = GmeState::init(m.size(), parse_likelihood(lik_spec), tau_sq);
  st.qw = GaussianDist(m, c);
  st.qv = RayleighDist(sigma_sq);
  return st;
}

inline void save_sgp_model(const std::string& path, const SgpState& st) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << "ssvi-model sgp\n";
  out << std::setprecision(17);
  out << "kernel " << st.kernel.length_scale << ' ' << st.kernel.signal_var << ' '
      << st.kernel.noise_var << '\n';
  detail::write_matrix(out, "inducing", st.Z);
  detail::write_matrix(out, "mean", st.q.mean());
  detail::write_matrix(out, "chol", st.q.chol());
}

inline SgpState load_sgp_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  std::string tag, model, key;
  in >> tag >> model;
  if (tag != "ssvi-model" || model != "sgp") throw ParseError("not an sgp model file: " + path);
  KernelSpec k;
  in >> key >> k.length_scale >> k.signal_var >> k.noise_var;
  const MatrixXd z = detail::read_matrix(in, "inducing");
  const VectorXd m = detail::read_matrix(in, "mean");
  const MatrixXd c = detail::read_matrix(in, "chol");
  const MatrixXd k_ww = kernel_matrix(k, z, z) + k.jitter() * MatrixXd::Identity(z.rows(), z.rows());
  return SgpState{z, k, GaussianDist(m, c), k_ww, spd_inverse(k_ww)};
}

inline void save_pmf_model(const std::string& path, const PmfState& st,
                           const std::string& lik_spec) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << "ssvi-model pmf\n" << "likelihood " << lik_spec << '\n';
  out << std::setprecision(17);
  out << "shape " << st.num_u() << ' ' << st.num_v() << ' ' << st.latent_dim << '\n';
  out << "sigma " << st.sigma_u_sq << ' ' << st.sigma_v_sq << '\n';
  for (Eigen::Index i = 0; i < st.num_u(); ++i) {
    detail::write_matrix(out, "u_mean", st.u[i].mean());
    detail::write_matrix(out, "u_chol", st.u[i].chol());
  }
  for (Eigen::Index j = 0; j < st.num_v(); ++j) {
    detail::write_matrix(out, "v_mean", st.v[j].mean());
    detail::write_matrix(out, "v_chol", st.v[j].chol());
  }
}

inline PmfState load_pmf_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  std::string tag, model, key, lik_spec;
  in >> tag >> model >> key >> lik_spec;
  if (tag != "ssvi-model" || model != "pmf") throw ParseError("not a pmf model file: " + path);
  Eigen::Index nu, nv, k;
  in >> key >> nu >> nv >> k;
  PmfState st;
  st.latent_dim = k;
  st.lik = parse_likelihood(lik_spec);
  in >> key >> st.sigma_u_sq >> st.sigma_v_sq;
  for (Eigen::Index i = 0; i < nu; ++i) {
    const VectorXd m = detail::read_matrix(in, "u_mean");
    const MatrixXd c = detail::read_matrix(in, "u_chol");
    st.u.emplace_back(m, c);
  }
  for (Eigen::Index j = 0; j < nv; ++j) {
    const VectorXd m = detail::read_matrix(in, "v_mean");
    const MatrixXd c = detail::read_matrix(in, "v_chol");
    st.v.emplace_back(m, c);
  }
  st.obs_by_u.resize(nu);
  st.obs_by_v.resize(nv);
  return st;
}

inline void save_ctm_model(const std::string& path, const CtmState& st) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << "ssvi-model ctm\n";
  out << "shape " << st.topics << ' ' << st.vocab << '\n';
  detail::write_matrix(out, "beta", st.beta);
  detail::write_matrix(out, "mu", st.mu);
  detail::write_matrix(out, "sigma", st.sigma);
}

inline CtmState load_ctm_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  std::string tag, model, key;
  in >> tag >> model;
  if (tag != "ssvi-model" || model != "ctm") throw ParseError("not a ctm model file: " + path);
  CtmState st;
  in >> key >> st.topics >> st.vocab;
  st.beta = detail::read_matrix(in, "beta");
  st.mu = detail::read_matrix(in, "mu");
  st.sigma = detail::read_matrix(in, "sigma");
  return st;
}

// ---------------------------------------------------------------------------
// run entry point

/// Executes one configured run. Returns 0 on success, 2 for missing inputs
/// (before any trace is written), 1 for failures inside the modules. Errors
/// are reported as a one-line JSON record on `err`.
inline int run(const RunConfig& cfg, std::ostream& err = std::cerr) {
  auto fail = [&](int code, const std::string& message) {
    std::string escaped;
    for (char ch : message) {
      if (ch == '"' || ch == '\\') escaped += '\\';
      escaped += ch;
    }
    err << "{\"error\":\"" << escaped << "\",\"code\":" << code << ",\"model\":\"" << cfg.model
        << "\",\"verb\":\"" << cfg.verb << "\"}" << std::endl;
    return code;
  };
  try {
    if (!cfg.seed_set) return fail(2, "seed is required");
    if (cfg.model.empty() || cfg.verb.empty()) return fail(2, "model and verb are required");

    // pre-flight: every referenced input must exist before any output opens
    for (const std::string& p : {cfg.train_path, cfg.test_path, cfg.model_in}) {
      if (!p.empty() && !std::filesystem::exists(p)) {
        return fail(2, "missing input file: " + p);
      }
    }
    const LikelihoodModel lik = parse_likelihood(cfg.likelihood);

    if (cfg.verb == "synth") {
      if (cfg.out_path.empty()) return fail(2, "synth requires out=");
      if (cfg.model == "glm") {
        write_libsvm(cfg.out_path, synth_glm(cfg.n, cfg.dim, lik, cfg.seed));
      } else if (cfg.model == "gme") {
        write_libsvm(cfg.out_path, synth_gme(cfg.n, cfg.dim, lik, cfg.tau_sq, cfg.seed));
      } else if (cfg.model == "sgp") {
        write_libsvm(cfg.out_path, synth_sgp(cfg.n, KernelSpec{1.0, 1.0, 0.1}, cfg.seed));
      } else if (cfg.model == "pmf") {
        write_triplets(cfg.out_path, synth_pmf(cfg.rows, cfg.cols, cfg.latent, lik, cfg.density,
                                               cfg.seed));
      } else if (cfg.model == "ctm") {
        Rng rng(cfg.seed);
        const auto model = random_ctm_model(cfg.topics, cfg.vocab, rng);
        write_bow(cfg.out_path, synth_ctm(cfg.docs, cfg.words_per_doc, model, cfg.seed ^ 1));
      } else {
        return fail(2, "unknown model: " + cfg.model);
      }
      return 0;
    }

    if (cfg.verb == "train") {
      if (cfg.train_path.empty()) return fail(2, "train requires train=");
      MetricsTrace trace;

      if (cfg.model == "glm" || cfg.model == "gme") {
        auto all = read_libsvm(cfg.train_path);
        GlmData train, test;
        if (!cfg.test_path.empty()) {
          train = all;
          test = read_libsvm(cfg.test_path);
        } else {
          std::tie(train, test) = split_80_20(all, cfg.seed ^ 0x51ULL);
        }
        zscore_fit_apply(train, test);
        if (cfg.model == "glm") {
          auto res = glm_train(cfg, train, test, lik);
          trace = std::move(res.trace);
          if (!cfg.model_out.empty()) save_glm_model(cfg.model_out, res.state, cfg.likelihood);
        } else {
          auto res = gme_train(cfg, train, test, lik, cfg.approx != "simple");
          trace = std::move(res.trace);
          if (!cfg.model_out.empty()) save_gme_model(cfg.model_out, res.state, cfg.likelihood);
        }
      } else if (cfg.model == "sgp") {
        auto all = read_libsvm(cfg.train_path);
        DesignMatrixData train, test;
        if (!cfg.test_path.empty()) {
          train = all;
          test = read_libsvm(cfg.test_path);
        } else {
          std::tie(train, test) = split_80_20(all, cfg.seed ^ 0x51ULL);
        }
        zscore_labels(train.y, test.y);
        KernelSpec kernel{1.0, 1.0, 0.1};
        if (cfg.grid_search) {
          DesignMatrixData subset = train;
          if (train.size() > 100) {
            auto idx = shuffled_indices(train.size(), cfg.seed ^ 0x9d);
            subset.X.resize(100, train.dim());
            subset.y.resize(100);
            for (int i = 0; i < 100; ++i) {
              subset.X.row(i) = train.X.row(idx[i]);
              subset.y[i] = train.y[idx[i]];
            }
          }
          kernel = sgp_grid_search(subset, KernelGrids::defaults());
        }
        MatrixXd z(std::min(cfg.inducing, train.size()), train.dim());
        auto zidx = shuffled_indices(train.size(), cfg.seed ^ 0xa7);
        for (Eigen::Index r = 0; r < z.rows(); ++r) z.row(r) = train.X.row(zidx[r]);

        detail::RunClock clock(cfg.timing == "wall");
        SgpState st = [&] {
          if (cfg.sgp_variant == "subopt") return sgp_suboptimal_solve(train, z, kernel);
          if (cfg.sgp_variant == "opt") return sgp_optimal_solve(train, z, kernel);
          if (cfg.sgp_variant == "v1") return sgp_v1_solve(train, z, kernel);
          if (cfg.sgp_variant == "v2") return sgp_v2_solve(train, z, kernel).state;
          throw Error("unknown sgp variant: " + cfg.sgp_variant);
        }();
        clock.charge(static_cast<double>(train.size()) * z.rows());
        MetricsRow row;
        row.wall_time_s = clock.read();
        row.epoch = 1;
        row.iteration = 1;
        row.neg_vlb_mc = -sgp_vlb_suboptimal(st, train);
        if (test.size() > 0) {
          row.test_nll = sgp_test_nll(st, test);
          double rmse = 0.0;
          for (Eigen::Index i = 0; i < test.size(); ++i) {
            const auto p = sgp_predict(st, test.X.row(i));
            rmse += (p.mean - test.y[i]) * (p.mean - test.y[i]);
          }
          row.error_metric = std::sqrt(rmse / test.size());
        }
        row.notes = "variant=" + cfg.sgp_variant;
        trace.add(row);
        if (!cfg.model_out.empty()) save_sgp_model(cfg.model_out, st);
      } else if (cfg.model == "pmf") {
        auto all = read_triplets(cfg.train_path);
        TripletData train, test;
        if (!cfg.test_path.empty()) {
          train = all;
          test = read_triplets(cfg.test_path);
        } else {
          std::tie(train, test) = split_triplets_80_20(all, cfg.seed ^ 0x51ULL);
        }
        auto res = pmf_train(cfg, train, test, lik);
        trace = std::move(res.trace);
        if (!cfg.model_out.empty()) save_pmf_model(cfg.model_out, res.state, cfg.likelihood);
      } else if (cfg.model == "ctm") {
        auto all = read_bow(cfg.train_path);
        CorpusData train, test;
        if (!cfg.test_path.empty()) {
          train = all;
          test = filter_to_train_vocab(train, read_bow(cfg.test_path));
        } else {
          std::tie(train, test) = split_corpus_80_20(all, cfg.seed ^ 0x51ULL);
          test = filter_to_train_vocab(train, test);
        }
        if (cfg.approx == "both") {
          auto res_opt = ctm_train(cfg, train, test, CtmApprox::optimal);
          auto res_sim = ctm_train(cfg, train, test, CtmApprox::simple);
          for (const auto& r : res_opt.trace.rows()) trace.add(r);
          // the clock restarts for the second approximation; rows stay
          // distinguishable through the notes column
          const double shift = trace.rows().back().wall_time_s;
          for (auto r : res_sim.trace.rows()) {
            r.wall_time_s += shift;
            trace.add(r);
          }
          if (!cfg.model_out.empty()) save_ctm_model(cfg.model_out, res_opt.state);
        } else {
          auto res = ctm_train(cfg, train, test,
                               cfg.approx == "simple" ? CtmApprox::simple : CtmApprox::optimal);
          trace = std::move(res.trace);
          if (!cfg.model_out.empty()) save_ctm_model(cfg.model_out, res.state);
        }
      } else {
        return fail(2, "unknown model: " + cfg.model);
      }
      if (!cfg.out_path.empty()) trace.write(cfg.out_path);
      return 0;
    }

    if (cfg.verb == "eval") {
      if (cfg.model_in.empty() || cfg.test_path.empty()) {
        return fail(2, "eval requires model_in= and test=");
      }
      MetricsRow row;
      row.epoch = 0;
      row.iteration = 0;
      if (cfg.model == "glm") {
        auto st = load_glm_model(cfg.model_in);
        auto test = read_libsvm(cfg.test_path);
        auto [nll, errv] = glm_test_metrics(st, test);
        row.test_nll = nll;
        row.error_metric = errv;
      } else if (cfg.model == "gme") {
        auto st = load_gme_model(cfg.model_in);
        auto test = read_libsvm(cfg.test_path);
        auto [nll, errv] = gme_test_metrics(st, test);
        row.test_nll = nll;
        row.error_metric = errv;
      } else if (cfg.model == "sgp") {
        auto st = load_sgp_model(cfg.model_in);
        auto test = read_libsvm(cfg.test_path);
        row.test_nll = sgp_test_nll(st, test);
      } else if (cfg.model == "pmf") {
        auto st = load_pmf_model(cfg.model_in);
        auto test = read_triplets(cfg.test_path);
        const auto metrics = pmf_evaluate(st, test, 1000, cfg.seed);
        row.test_nll = metrics.nll;
        row.error_metric = metrics.error;
      } else if (cfg.model == "ctm") {
        auto st = load_ctm_model(cfg.model_in);
        auto test = read_bow(cfg.test_path);
        const auto scheme = parse_nll_scheme(cfg.nll_scheme);
        double nll = 0.0;
        const Eigen::Index limit = std::min<Eigen::Index>(cfg.nll_docs, test.num_docs());
        for (Eigen::Index d = 0; d < limit; ++d) {
          nll += ctm_test_nll(st, test, d, scheme, cfg.nll_samples, cfg.nll_batches,
                              cfg.seed ^ (0xd0c + d))
                     .nll;
        }
        row.test_nll = limit > 0 ? nll / limit : 0.0;
      } else {
        return fail(2, "unknown model: " + cfg.model);
      }
      row.notes = "eval";
      std::cout << MetricsTrace::kHeader << '\n';
      std::cout << std::setprecision(17) << row.wall_time_s << ",0,0," << row.neg_vlb_mc << ','
                << row.test_nll << ',' << row.error_metric << ',' << row.notes << '\n';
      if (!cfg.out_path.empty()) {
        MetricsTrace tr;
        tr.add(row);
        tr.write(cfg.out_path);
      }
      return 0;
    }
    return fail(2, "unknown verb: " + cfg.verb);
  } catch (const ParseError& e) {
    return fail(2, e.what());
  } catch (const std::exception& e) {
    return fail(1, e.what());
  }
}

}  // namespace ssvi

#pragma once

#include <algorithm>
#include <vector>

#include <Eigen/Core>

#include "ssvi/dataio.hpp"
#include "ssvi/expfam.hpp"
#include "ssvi/linalg.hpp"
#include "ssvi/optim.hpp"

namespace ssvi {

/// Logistic transformation to the K-simplex: h_k = e^{eta_k}/(1 + sum e^{eta}),
/// last coordinate pinned at logit zero.
inline VectorXd ctm_softmax_h(const VectorXd& eta) { return softmax_extended(eta); }

inline VectorXd ctm_log_h(const VectorXd& eta) {
  VectorXd logits(eta.size() + 1);
  logits.head(eta.size()) = eta;
  logits[eta.size()] = 0.0;
  return logits.array() - log_sum_exp(logits);
}

/// Correlated topic model: row-stochastic topics beta, logistic-normal prior
/// on the (K-1)-dimensional document parameters, one Gaussian per document.
struct CtmState {
  Eigen::Index topics = 0;  // K
  Eigen::Index vocab = 0;   // V
  MatrixXd beta;            // K x V
  VectorXd mu;              // K-1
  MatrixXd sigma;           // (K-1) x (K-1)
  std::vector<GaussianDist> q_eta;
  bool diagonal_cov = false;
  Eigen::Index last_doc = 0;

  GaussianDist prior() const {
    if (topics <= 1) return GaussianDist(VectorXd::Zero(0), MatrixXd::Zero(0, 0));
    return GaussianDist::from_moments(mu, sigma);
  }

  /// beta rows proportional to the counts of a randomly selected document
  /// plus uniform noise in [1, 2].
  static CtmState init(const CorpusData& corpus, Eigen::Index topics, std::uint64_t seed,
                       bool diagonal_cov = false, double init_var = 10.0) {
    CtmState st;
    st.topics = topics;
    st.vocab = corpus.vocab_size;
    st.diagonal_cov = diagonal_cov;
    st.mu = VectorXd::Zero(topics - 1);
    st.sigma = MatrixXd::Identity(topics - 1, topics - 1);
    Rng rng(seed);
    st.beta.resize(topics, corpus.vocab_size);
    for (Eigen::Index k = 0; k < topics; ++k) {
      VectorXd row = VectorXd::Zero(corpus.vocab_size);
      if (corpus.num_docs() > 0) {
        const auto& doc = corpus.docs[rng.integer(corpus.num_docs())];
        for (const auto& [w, c] : doc) row[w] += static_cast<double>(c);
      }
      for (Eigen::Index w = 0; w < corpus.vocab_size; ++w) row[w] += 1.0 + rng.uniform();
      st.beta.row(k) = row.transpose() / row.sum();
    }
    const Eigen::Index d = topics - 1;
    for (Eigen::Index i = 0; i < corpus.num_docs(); ++i) {
      st.q_eta.emplace_back(VectorXd::Zero(d),
                            std::sqrt(init_var) * MatrixXd::Identity(d, d));
    }
    return st;
  }
};

struct XiDerivs {
  double value;
  VectorXd grad;
  MatrixXd hess;
};

/// xi(eta) = log sum_k h_k(eta) beta_{k,w} with gradient and Hessian in eta.
/// Evaluated through the topic responsibilities r = softmax(log h + log beta),
/// which reduces to grad = r~ - h~ and
/// hess = diag(r~ - h~) + h~ h~^T - r~ r~^T.
inline XiDerivs ctm_xi_derivs(const VectorXd& eta, const VectorXd& beta_col) {
  const Eigen::Index k = beta_col.size();
  if ((beta_col.array() <= 0.0).all()) {
    throw Error("ctm_xi_derivs: beta column has no positive entry");
  }
  const VectorXd log_h = ctm_log_h(eta);
  VectorXd log_terms(k);
  for (Eigen::Index t = 0; t < k; ++t) {
    log_terms[t] = log_h[t] + (beta_col[t] > 0.0
                                   ? std::log(beta_col[t])
                                   : -std::numeric_limits<double>::infinity());
  }
  const double xi = log_sum_exp(log_terms);
  const VectorXd r = (log_terms.array() - xi).exp();
  const VectorXd h = log_h.array().exp();
  XiDerivs out;
  out.value = xi;
  const VectorXd rt = r.head(k - 1);
  const VectorXd ht = h.head(k - 1);
  out.grad = rt - ht;
  out.hess = MatrixXd((rt - ht).asDiagonal()) + ht * ht.transpose() - rt * rt.transpose();
  return out;
}

/// grad and Hessian of a single simplex coordinate h_k in eta.
inline VectorXd ctm_grad_h(const VectorXd& h, Eigen::Index k) {
  const Eigen::Index d = h.size() - 1;
  VectorXd e = VectorXd::Zero(d);
  if (k < d) e[k] = 1.0;
  return h[k] * (e - h.head(d));
}

inline MatrixXd ctm_hess_h(const VectorXd& h, Eigen::Index k) {
  const Eigen::Index d = h.size() - 1;
  VectorXd e = VectorXd::Zero(d);
  if (k < d) e[k] = 1.0;
  const VectorXd c = e - h.head(d);
  return h[k] * (c * c.transpose() - MatrixXd(h.head(d).asDiagonal()) +
                 h.head(d) * h.head(d).transpose());
}

/// Per-word value/grad/hess of the simple-structured bound term
/// sum_k log beta_{k,w} h_k(eta).
inline XiDerivs ctm_simple_derivs(const VectorXd& eta, const VectorXd& beta_col) {
  const Eigen::Index k = beta_col.size();
  const VectorXd h = ctm_softmax_h(eta);
  XiDerivs out;
  out.value = 0.0;
  out.grad = VectorXd::Zero(k - 1);
  out.hess = MatrixXd::Zero(k - 1, k - 1);
  for (Eigen::Index t = 0; t < k; ++t) {
    if (!(beta_col[t] > 0.0)) {
      throw Error("ctm_simple_derivs: beta entries must be positive");
    }
    const double lb = std::log(beta_col[t]);
    out.value += lb * h[t];
    out.grad += lb * ctm_grad_h(h, t);
    out.hess += lb * ctm_hess_h(h, t);
  }
  return out;
}

enum class CtmApprox { optimal, simple };

/// Paired bound estimates from shared samples; the structured value dominates
/// the simple one pointwise by Jensen's inequality on the topic mixture.
struct CtmVlbPair {
  double optimal;
  double simple;
};

inline CtmVlbPair ctm_vlb_pair(const CtmState& st, const CorpusData& corpus, int n_mc,
                               std::uint64_t seed) {
  const GaussianDist prior = st.prior();
  double opt = 0.0, simple = 0.0;
  for (Eigen::Index d = 0; d < corpus.num_docs(); ++d) {
    const double kl = kl_gaussian(st.q_eta[d], prior);
    opt -= kl;
    simple -= kl;
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(d));
    for (int l = 0; l < n_mc; ++l) {
      const VectorXd eta = st.q_eta[d].sample(rng);
      const VectorXd log_h = ctm_log_h(eta);
      const VectorXd h = log_h.array().exp();
      for (const auto& [w, c] : corpus.docs[d]) {
        VectorXd log_terms(st.topics);
        double sim = 0.0;
        for (Eigen::Index k = 0; k < st.topics; ++k) {
          const double lb = std::log(st.beta(k, w));
          log_terms[k] = log_h[k] + lb;
          sim += lb * h[k];
        }
        opt += c * log_sum_exp(log_terms) / n_mc;
        simple += c * sim / n_mc;
      }
    }
  }
  return {opt, simple};
}

inline double ctm_vlb(const CtmState& st, const CorpusData& corpus, CtmApprox approx, int n_mc,
                      std::uint64_t seed) {
  const auto pair = ctm_vlb_pair(st, corpus, n_mc, seed);
  return approx == CtmApprox::optimal ? pair.optimal : pair.simple;
}

namespace detail {

struct CtmDocTerms {
  VectorXd d_hat;   // sum_n dhat_n at the sampled etas
  MatrixXd dd_hat;  // sum_n Dhat_n (already includes the 1/2)
};

inline CtmDocTerms ctm_doc_terms(const CtmState& st, const CorpusData& corpus, Eigen::Index d,
                                 CtmApprox approx, int n_mc, Rng& rng) {
  const Eigen::Index dim = st.topics - 1;
  CtmDocTerms t{VectorXd::Zero(dim), MatrixXd::Zero(dim, dim)};
  for (int l = 0; l < n_mc; ++l) {
    const VectorXd eta = st.q_eta[d].sample(rng);
    for (const auto& [w, c] : corpus.docs[d]) {
      const XiDerivs xd = (approx == CtmApprox::optimal)
                              ? ctm_xi_derivs(eta, st.beta.col(w))
                              : ctm_simple_derivs(eta, st.beta.col(w));
      t.d_hat += c * xd.grad / n_mc;
      t.dd_hat += 0.5 * c * xd.hess / n_mc;
    }
  }
  return t;
}

}  // namespace detail

/// One document update. The covariance moves by the natural blend with the
/// data curvature projected onto the PSD cone; the mean moves by a standard
/// gradient step (H-MC-SSVI) or both parameters move by standard gradients
/// with the reparameterized Cholesky direction (S-DSVI).
inline void ctm_doc_update(CtmState& st, const CorpusData& corpus, Eigen::Index d, Engine engine,
                           double rho_nat, const StandardStep& mean_step,
                           const StandardStep& chol_step, CtmApprox approx, int n_mc,
                           std::uint64_t seed, GuardLog* log = nullptr) {
  if (engine == Engine::mcssvi) {
    throw Error("ctm_doc_update: natural mean updates are not defined for this model");
  }
  const Eigen::Index dim = st.topics - 1;
  st.last_doc = d;
  if (dim == 0) return;
  if (corpus.docs[d].empty()) {
    // no words: blend toward the prior
    const GaussianDist prior = st.prior();
    if (engine != Engine::sdsvi) {
      const MatrixXd prec = symmetrize((1.0 - rho_nat) * st.q_eta[d].precision() +
                                       rho_nat * prior.precision());
      st.q_eta[d] = GaussianDist::from_moments(st.q_eta[d].mean(), spd_inverse(prec));
    }
    return;
  }

  const GaussianDist prior = st.prior();
  Rng rng(seed);

  if (engine == Engine::sdsvi) {
    // reparameterized samples shared by the mean and Cholesky directions
    const MatrixXd& c_d = st.q_eta[d].chol();
    VectorXd grad_m = prior.precision() * (st.mu - st.q_eta[d].mean());
    MatrixXd dc = MatrixXd::Zero(dim, dim);
    for (int l = 0; l < n_mc; ++l) {
      const VectorXd eps = rng.normal_vector(dim);
      const VectorXd eta = st.q_eta[d].mean() + c_d.transpose() * eps;
      VectorXd g = VectorXd::Zero(dim);
      for (const auto& [w, cnt] : corpus.docs[d]) {
        const XiDerivs xd = (approx == CtmApprox::optimal)
                                ? ctm_xi_derivs(eta, st.beta.col(w))
                                : ctm_simple_derivs(eta, st.beta.col(w));
        g += cnt * xd.grad;
      }
      grad_m += g / n_mc;
      dc += eps * g.transpose() / n_mc;
    }
    MatrixXd grad_c = MatrixXd::Zero(dim, dim);
    grad_c.diagonal() = c_d.diagonal().cwiseInverse();
    grad_c += -c_d * prior.precision() + c_d * dc;
    if (st.diagonal_cov) grad_c = MatrixXd(grad_c.diagonal().asDiagonal());
    const MatrixXd scaled =
        chol_step.adagrad ? chol_step.adagrad->step(MatrixXd(triu(grad_c))) : MatrixXd(triu(grad_c));
    const MatrixXd new_c =
        cholesky_grad_step(c_d, scaled, chol_step.adagrad ? 1.0 : chol_step.size());
    const VectorXd new_m = st.q_eta[d].mean() + mean_step.apply(grad_m);
    st.q_eta[d] = GaussianDist(new_m, new_c);
    return;
  }

  // H-MC-SSVI: natural covariance with mandatory projection, standard mean
  const auto terms = detail::ctm_doc_terms(st, corpus, d, approx, n_mc, rng);
  MatrixXd target = prior.precision() + psd_project(-2.0 * terms.dd_hat);
  if (st.diagonal_cov) target = MatrixXd(target.diagonal().asDiagonal());
  MatrixXd prec = symmetrize((1.0 - rho_nat) * st.q_eta[d].precision() + rho_nat * target);
  if (!is_positive_definite(prec)) {
    if (log) ++log->rejections;
    return;
  }
  const MatrixXd cov = spd_inverse(prec);

  const VectorXd grad_m =
      prior.precision() * (st.mu - st.q_eta[d].mean()) + terms.d_hat;
  const VectorXd new_m = st.q_eta[d].mean() + mean_step.apply(grad_m);
  st.q_eta[d] = GaussianDist::from_moments(new_m, cov);
}

inline void ctm_doc_update_simple(CtmState& st, const CorpusData& corpus, Eigen::Index d,
                                  Engine engine, double rho_nat, const StandardStep& mean_step,
                                  const StandardStep& chol_step, int n_mc, std::uint64_t seed,
                                  GuardLog* log = nullptr) {
  ctm_doc_update(st, corpus, d, engine, rho_nat, mean_step, chol_step, CtmApprox::simple, n_mc,
                 seed, log);
}

// ---------------------------------------------------------------------------
// hyperparameters

/// Closed-form prior refresh: mu_hat is the mean of the document means,
/// Sigma_hat the average of S_d plus spread, floored on the diagonal.
inline void ctm_prior_update(CtmState& st) {
  const Eigen::Index dim = st.topics - 1;
  const auto n_docs = static_cast<double>(st.q_eta.size());
  if (n_docs == 0 || dim == 0) return;
  VectorXd mu = VectorXd::Zero(dim);
  for (const auto& q : st.q_eta) mu += q.mean();
  mu /= n_docs;
  MatrixXd sigma = MatrixXd::Zero(dim, dim);
  for (const auto& q : st.q_eta) {
    sigma += q.cov() + (mu - q.mean()) * (mu - q.mean()).transpose();
  }
  sigma /= n_docs;
  sigma.diagonal() = sigma.diagonal().cwiseMax(1e-8);
  st.mu = mu;
  st.sigma = symmetrize(sigma);
}

/// Stochastic beta update on the minimum representation alpha_{k,u}
/// (u < V, with beta_{k,V} pinned): one ADAGRAD step per call using the most
/// recently updated document, gradient scaled by the corpus size.
inline void ctm_beta_update(CtmState& st, const CorpusData& corpus, AdagradState& adagrad,
                            int n_mc, std::uint64_t seed) {
  const Eigen::Index k_topics = st.topics;
  const Eigen::Index v = st.vocab;
  const Eigen::Index d = st.last_doc;
  const auto& doc = corpus.docs[d];
  if (doc.empty()) return;
  const double d_scale = static_cast<double>(corpus.num_docs());

  // responsibilities gamma_{k,w} = h_k / sum_l beta_{l,w} h_l, averaged over
  // the eta samples; T_k = sum_{w in doc} c_w gamma_{k,w} beta_{k,w}
  Rng rng(seed);
  MatrixXd gamma_doc = MatrixXd::Zero(k_topics, static_cast<Eigen::Index>(doc.size()));
  for (int l = 0; l < n_mc; ++l) {
    const VectorXd eta = st.q_eta[d].sample(rng);
    const VectorXd h = ctm_softmax_h(eta);
    for (std::size_t t = 0; t < doc.size(); ++t) {
      const Eigen::Index w = doc[t].first;
      const double denom = st.beta.col(w).dot(h);
      gamma_doc.col(static_cast<Eigen::Index>(t)) += h / (denom * n_mc);
    }
  }

  MatrixXd grad = MatrixXd::Zero(k_topics, v - 1);
  for (Eigen::Index k = 0; k < k_topics; ++k) {
    double t_k = 0.0;
    for (std::size_t t = 0; t < doc.size(); ++t) {
      t_k += doc[t].second * gamma_doc(k, static_cast<Eigen::Index>(t)) * st.beta(k, doc[t].first);
    }
    for (Eigen::Index u = 0; u < v - 1; ++u) grad(k, u) = -st.beta(k, u) * d_scale * t_k;
    for (std::size_t t = 0; t < doc.size(); ++t) {
      const Eigen::Index w = doc[t].first;
      if (w < v - 1) {
        grad(k, w) += st.beta(k, w) * d_scale * doc[t].second *
                      gamma_doc(k, static_cast<Eigen::Index>(t));
      }
    }
  }

  // alpha from the current beta, one ADAGRAD step, back through the softmax
  const MatrixXd delta = adagrad.step(grad);
  for (Eigen::Index k = 0; k < k_topics; ++k) {
    VectorXd alpha(v - 1);
    for (Eigen::Index u = 0; u < v - 1; ++u) {
      alpha[u] = std::log(st.beta(k, u)) - std::log(st.beta(k, v - 1));
    }
    alpha += delta.row(k).transpose();
    st.beta.row(k) = softmax_extended(alpha).transpose();
  }
}

/// Closed-form topic update for the simple-structured bound:
/// beta_{k,.} proportional to counts weighted by E[h_k], batch over all
/// documents.
inline void ctm_beta_update_simple(CtmState& st, const CorpusData& corpus, int n_mc,
                                   std::uint64_t seed) {
  MatrixXd alpha_hat = MatrixXd::Zero(st.topics, st.vocab);
  for (Eigen::Index d = 0; d < corpus.num_docs(); ++d) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(d));
    VectorXd eh = VectorXd::Zero(st.topics);
    for (int l = 0; l < n_mc; ++l) eh += ctm_softmax_h(st.q_eta[d].sample(rng)) / n_mc;
    for (const auto& [w, c] : corpus.docs[d]) alpha_hat.col(w) += c * eh;
  }
  for (Eigen::Index k = 0; k < st.topics; ++k) {
    const double total = alpha_hat.row(k).sum();
    if (total > 0.0) {
      // keep entries strictly positive for the log terms
      VectorXd row = alpha_hat.row(k).transpose().array() + 1e-12;
      st.beta.row(k) = row.transpose() / row.sum();
    }
  }
}

/// Hyperparameter refresh after a document update: closed-form prior, then
/// the mode's topic update.
inline void ctm_hyper_update(CtmState& st, const CorpusData& corpus, CtmApprox mode,
                             AdagradState& beta_adagrad, int n_mc, std::uint64_t seed) {
  if (st.q_eta.empty()) throw Error("ctm_hyper_update: no documents processed");
  ctm_prior_update(st);
  if (st.topics < 2) return;
  if (mode == CtmApprox::optimal) {
    ctm_beta_update(st, corpus, beta_adagrad, n_mc, seed);
  } else {
    ctm_beta_update_simple(st, corpus, n_mc, seed);
  }
}

// ---------------------------------------------------------------------------
// training loop

struct CtmTrainer {
  CtmState state;
  Engine engine = Engine::hmcssvi;
  CtmApprox approx = CtmApprox::optimal;
  int n_mc = 10;
  std::uint64_t seed = 0;
  bool hyper_updates = true;
  long hyper_every = 1;  // documents between hyperparameter refreshes
  GuardLog log;
  long epoch = 0;
  std::vector<StepSchedule> sched;
  std::vector<AdagradState> ad_mean, ad_chol;
  AdagradState beta_adagrad;

  CtmTrainer(CtmState s, Engine e, CtmApprox a, int mc, std::uint64_t sd)
      : state(std::move(s)),
        engine(e),
        approx(a),
        n_mc(mc),
        seed(sd),
        beta_adagrad(state.topics * std::max<Eigen::Index>(state.vocab - 1, 0)) {
    const Eigen::Index dim = state.topics - 1;
    for (std::size_t d = 0; d < state.q_eta.size(); ++d) {
      sched.push_back(StepSchedule::one_over_t());
      ad_mean.emplace_back(dim);
      ad_chol.emplace_back(dim * dim);
    }
  }
};

inline void ctm_epoch(CtmTrainer& tr, const CorpusData& corpus) {
  long since_hyper = 0;
  for (Eigen::Index d = 0; d < corpus.num_docs(); ++d) {
    const double rho = tr.sched[d].next();
    const std::uint64_t step_seed =
        detail::splitmix64(tr.seed ^ (static_cast<std::uint64_t>(tr.epoch) * 131071 + d));
    ctm_doc_update(tr.state, corpus, d, tr.engine, rho, StandardStep::driven(tr.ad_mean[d]),
                   StandardStep::driven(tr.ad_chol[d]), tr.approx, tr.n_mc, step_seed, &tr.log);
    if (tr.hyper_updates && ++since_hyper >= tr.hyper_every) {
      ctm_hyper_update(tr.state, corpus, tr.approx, tr.beta_adagrad, tr.n_mc,
                       detail::splitmix64(step_seed ^ 0xbeefULL));
      since_hyper = 0;
    }
  }
  ++tr.epoch;
}

// ---------------------------------------------------------------------------
// held-out evaluation

enum class CtmNllScheme { prior, posterior, posterior_inflate_tenth, posterior_inflate_one,
                          point_split };

inline const char* to_string(CtmNllScheme s) {
  switch (s) {
    case CtmNllScheme::prior: return "prior";
    case CtmNllScheme::posterior: return "posterior";
    case CtmNllScheme::posterior_inflate_tenth: return "posterior+0.1I";
    case CtmNllScheme::posterior_inflate_one: return "posterior+1I";
    case CtmNllScheme::point_split: return "point-split";
  }
  return "?";
}

struct CtmNllResult {
  double nll = 0.0;          // negative log-likelihood per word
  double stderr_ = 0.0;      // across batches, on the per-word scale
  double ess = 0.0;          // effective sample size of the importance weights
  bool flagged = false;      // degenerate weights (ess below 10)
};

inline double ctm_log_p_words(const CtmState& st, const VectorXd& eta,
                              const std::vector<std::pair<Eigen::Index, Eigen::Index>>& words) {
  const VectorXd log_h = ctm_log_h(eta);
  double acc = 0.0;
  for (const auto& [w, c] : words) {
    VectorXd log_terms(st.topics);
    for (Eigen::Index k = 0; k < st.topics; ++k) {
      log_terms[k] = log_h[k] + std::log(st.beta(k, w));
    }
    acc += c * log_sum_exp(log_terms);
  }
  return acc;
}

/// Fits q(eta | words) for a held-out document: 100 iterations of the batch
/// hybrid update with diagonal covariances, model parameters frozen.
inline GaussianDist ctm_fit_doc_posterior(const CtmState& st,
                                          const std::vector<std::pair<Eigen::Index, Eigen::Index>>& words,
                                          int n_mc, std::uint64_t seed, int iters = 100) {
  CtmState tmp = st;
  tmp.diagonal_cov = true;
  tmp.q_eta.clear();
  const Eigen::Index dim = st.topics - 1;
  tmp.q_eta.emplace_back(VectorXd::Zero(dim), std::sqrt(10.0) * MatrixXd::Identity(dim, dim));
  CorpusData one;
  one.vocab_size = st.vocab;
  one.docs.push_back(words);
  StepSchedule sched = StepSchedule::one_over_t();
  AdagradState ad(dim);
  for (int it = 0; it < iters; ++it) {
    ctm_doc_update(tmp, one, 0, Engine::hmcssvi, sched.next(), StandardStep::driven(ad),
                   StandardStep::fixed(0.0), CtmApprox::optimal, n_mc,
                   detail::splitmix64(seed ^ static_cast<std::uint64_t>(it)));
  }
  return tmp.q_eta[0];
}

/// Importance-sampled (or point-approximated) held-out NLL per word.
inline CtmNllResult ctm_test_nll(const CtmState& st, const CorpusData& test_corpus,
                                 Eigen::Index doc, CtmNllScheme scheme, int n_samples,
                                 int n_batches, std::uint64_t seed, int fit_iters = 100) {
  const auto& words = test_corpus.docs[doc];
  double n_words = 0.0;
  for (const auto& [w, c] : words) n_words += c;
  CtmNllResult out;
  if (n_words == 0.0) return out;
  const Eigen::Index dim = st.topics - 1;

  if (scheme == CtmNllScheme::point_split) {
    // alternate the token positions (word-id order) into halves
    std::vector<std::pair<Eigen::Index, Eigen::Index>> first, second;
    std::map<Eigen::Index, Eigen::Index> c1, c2;
    long tick = 0;
    for (const auto& [w, c] : words) {
      for (Eigen::Index t = 0; t < c; ++t) {
        ((tick++ % 2 == 0) ? c1 : c2)[w] += 1;
      }
    }
    for (const auto& [w, c] : c1) first.emplace_back(w, c);
    for (const auto& [w, c] : c2) second.emplace_back(w, c);
    double n2 = 0.0;
    for (const auto& [w, c] : second) n2 += c;
    if (n2 == 0.0) return out;
    const GaussianDist q = ctm_fit_doc_posterior(st, first, 10, seed, fit_iters);
    out.nll = -ctm_log_p_words(st, q.mean(), second) / n2;
    return out;
  }

  GaussianDist proposal = GaussianDist(VectorXd::Zero(dim), MatrixXd::Identity(dim, dim));
  bool use_prior_proposal = false;
  switch (scheme) {
    case CtmNllScheme::prior:
      use_prior_proposal = true;
      break;
    case CtmNllScheme::posterior:
      proposal = ctm_fit_doc_posterior(st, words, 10, seed, fit_iters);
      break;
    case CtmNllScheme::posterior_inflate_tenth:
    case CtmNllScheme::posterior_inflate_one: {
      const GaussianDist q = ctm_fit_doc_posterior(st, words, 10, seed, fit_iters);
      const double inflate = (scheme == CtmNllScheme::posterior_inflate_tenth) ? 0.1 : 1.0;
      if (dim > 0) {
        proposal = GaussianDist::from_moments(
            q.mean(), q.cov() + inflate * MatrixXd::Identity(dim, dim));
      }
      break;
    }
    default:
      break;
  }
  const GaussianDist prior = st.prior();

  std::vector<double> batch_estimates;
  VectorXd all_logw(static_cast<Eigen::Index>(n_samples) * n_batches);
  Eigen::Index pos = 0;
  Rng rng = Rng::stream(seed, 0xa11ce);
  for (int b = 0; b < n_batches; ++b) {
    VectorXd logw(n_samples);
    for (int s = 0; s < n_samples; ++s) {
      const VectorXd eta = use_prior_proposal ? prior.sample(rng) : proposal.sample(rng);
      double lw = ctm_log_p_words(st, eta, words);
      if (!use_prior_proposal) {
        lw += prior.log_pdf(eta) - proposal.log_pdf(eta);
      }
      logw[s] = lw;
      all_logw[pos++] = lw;
    }
    batch_estimates.push_back(log_sum_exp(logw) - std::log(static_cast<double>(n_samples)));
  }
  const double log_p = log_sum_exp(all_logw) - std::log(static_cast<double>(all_logw.size()));
  out.nll = -log_p / n_words;

  double mean_b = 0.0;
  for (double b : batch_estimates) mean_b += b;
  mean_b /= batch_estimates.size();
  double var_b = 0.0;
  for (double b : batch_estimates) var_b += (b - mean_b) * (b - mean_b);
  if (batch_estimates.size() > 1) {
    var_b /= (batch_estimates.size() - 1.0);
    out.stderr_ = std::sqrt(var_b / batch_estimates.size()) / n_words;
  }

  const double lse1 = log_sum_exp(all_logw);
  const VectorXd two = 2.0 * all_logw;
  out.ess = std::exp(2.0 * lse1 - log_sum_exp(two));
  out.flagged = out.ess < 10.0;
  return out;
}

}  // namespace ssvi

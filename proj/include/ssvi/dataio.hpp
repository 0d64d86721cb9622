#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ssvi/errors.hpp"
#include "ssvi/expfam.hpp"
#include "ssvi/likelihoods.hpp"
#include "ssvi/linalg.hpp"
#include "ssvi/rng.hpp"

namespace ssvi {

/// Rows of (feature vector, label). Indices are 0-based internally; the
/// libsvm reader converts from the 1-based on-disk form. The optional a/c
/// vectors carry per-example offsets for the latent-linear models, giving
/// q(f_i) = N(a_i + h_i^T m, c_i + h_i^T S h_i); plain GLM keeps both zero.
struct DesignMatrixData {
  MatrixXd X;
  VectorXd y;
  VectorXd a;
  VectorXd c;
  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
  double mean_offset(Eigen::Index i) const { return a.size() ? a[i] : 0.0; }
  double var_offset(Eigen::Index i) const { return c.size() ? c[i] : 0.0; }
};

/// Sparse matrix observations (row, col, value) with a declared shape.
struct TripletData {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<Eigen::Index> i;
  std::vector<Eigen::Index> j;
  std::vector<double> y;
  std::size_t size() const { return y.size(); }
};

/// Bag-of-words corpus: per document a list of (word id, count).
struct CorpusData {
  Eigen::Index vocab_size = 0;
  std::vector<std::vector<std::pair<Eigen::Index, Eigen::Index>>> docs;
  Eigen::Index num_docs() const { return static_cast<Eigen::Index>(docs.size()); }
  Eigen::Index doc_length(Eigen::Index d) const {
    Eigen::Index n = 0;
    for (const auto& [w, c] : docs[d]) n += c;
    return n;
  }
};

namespace detail {

inline std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// libsvm rows: "label idx:val idx:val ..." with 1-based indices

inline DesignMatrixData read_libsvm(const std::string& path) {
  std::ifstream in = detail::open_or_throw(path);
  std::vector<double> labels;
  std::vector<std::map<Eigen::Index, double>> rows;
  Eigen::Index max_index = 0;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    try {
      std::size_t used = 0;
      const double label = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      labels.push_back(label);
    } catch (const std::exception&) {
      throw ParseError("libsvm parse error at line " + std::to_string(line_no) +
                       ": bad label '" + tok + "'");
    }
    std::map<Eigen::Index, double> row;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) {
        throw ParseError("libsvm parse error at line " + std::to_string(line_no) +
                         ": expected idx:val, got '" + tok + "'");
      }
      try {
        const long idx = std::stol(tok.substr(0, colon));
        const double val = std::stod(tok.substr(colon + 1));
        if (idx < 1) throw std::invalid_argument("index");
        row[idx - 1] = val;
        max_index = std::max<Eigen::Index>(max_index, idx);
      } catch (const std::exception&) {
        throw ParseError("libsvm parse error at line " + std::to_string(line_no) +
                         ": bad feature '" + tok + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  DesignMatrixData out;
  out.X = MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), max_index);
  out.y.resize(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.y[static_cast<Eigen::Index>(r)] = labels[r];
    for (const auto& [c, v] : rows[r]) out.X(static_cast<Eigen::Index>(r), c) = v;
  }
  return out;
}

inline void write_libsvm(const std::string& path, const DesignMatrixData& data) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open file for write: " + path);
  out.precision(17);
  for (Eigen::Index r = 0; r < data.size(); ++r) {
    out << data.y[r];
    for (Eigen::Index c = 0; c < data.dim(); ++c) {
      if (data.X(r, c) != 0.0) out << ' ' << (c + 1) << ':' << data.X(r, c);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// sparse triplets: "i j y" per line, 0-based, preceded by "rows cols"

inline TripletData read_triplets(const std::string& path) {
  std::ifstream in = detail::open_or_throw(path);
  TripletData out;
  std::string line;
  long line_no = 0;
  bool have_header = false;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (!have_header) {
      if (!(ls >> out.rows >> out.cols) || out.rows < 0 || out.cols < 0) {
        throw ParseError("triplet parse error at line " + std::to_string(line_no) +
                         ": expected 'rows cols' header");
      }
      have_header = true;
      continue;
    }
    Eigen::Index i, j;
    double y;
    if (!(ls >> i >> j >> y)) {
      throw ParseError("triplet parse error at line " + std::to_string(line_no));
    }
    if (i < 0 || i >= out.rows || j < 0 || j >= out.cols) {
      throw ParseError("triplet index out of range at line " + std::to_string(line_no));
    }
    out.i.push_back(i);
    out.j.push_back(j);
    out.y.push_back(y);
    seen.emplace_back(i, j);
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
    throw ParseError("triplet file contains duplicate cells");
  }
  return out;
}

inline void write_triplets(const std::string& path, const TripletData& data) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open file for write: " + path);
  out.precision(17);
  out << data.rows << ' ' << data.cols << '\n';
  for (std::size_t k = 0; k < data.size(); ++k) {
    out << data.i[k] << ' ' << data.j[k] << ' ' << data.y[k] << '\n';
  }
}

// ---------------------------------------------------------------------------
// UCI bag-of-words: three header lines (D, V, NNZ) then "docID wordID count",
// all 1-based

inline CorpusData read_bow(const std::string& path) {
  std::ifstream in = detail::open_or_throw(path);
  long d_decl = 0, v_decl = 0, nnz_decl = 0;
  if (!(in >> d_decl >> v_decl >> nnz_decl)) {
    throw ParseError("bow parse error: bad header in " + path);
  }
  CorpusData out;
  out.vocab_size = v_decl;
  out.docs.resize(d_decl);
  long seen = 0;
  long doc_id, word_id, count;
  while (in >> doc_id >> word_id >> count) {
    ++seen;
    if (doc_id < 1 || doc_id > d_decl || word_id < 1 || word_id > v_decl || count < 1) {
      throw ParseError("bow entry out of declared range at record " + std::to_string(seen));
    }
    out.docs[doc_id - 1].emplace_back(word_id - 1, count);
  }
  if (seen != nnz_decl) {
    throw ParseError("bow header mismatch: declared " + std::to_string(nnz_decl) +
                     " entries, found " + std::to_string(seen));
  }
  return out;
}

inline void write_bow(const std::string& path, const CorpusData& corpus) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open file for write: " + path);
  long nnz = 0;
  for (const auto& doc : corpus.docs) nnz += static_cast<long>(doc.size());
  out << corpus.num_docs() << '\n' << corpus.vocab_size << '\n' << nnz << '\n';
  for (Eigen::Index d = 0; d < corpus.num_docs(); ++d) {
    for (const auto& [w, c] : corpus.docs[d]) out << (d + 1) << ' ' << (w + 1) << ' ' << c << '\n';
  }
}

/// Drops words that never occur in `train` from `test` (vocabulary ids kept).
inline CorpusData filter_to_train_vocab(const CorpusData& train, const CorpusData& test) {
  std::vector<bool> present(train.vocab_size, false);
  for (const auto& doc : train.docs)
    for (const auto& [w, c] : doc) present[w] = true;
  CorpusData out;
  out.vocab_size = train.vocab_size;
  out.docs.resize(test.docs.size());
  for (std::size_t d = 0; d < test.docs.size(); ++d) {
    for (const auto& [w, c] : test.docs[d]) {
      if (w < train.vocab_size && present[w]) out.docs[d].emplace_back(w, c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization and splitting

struct ZScoreStats {
  VectorXd mean;
  VectorXd std;
};

/// Per-feature z-score fitted on train, applied to both. Constant features
/// map to zero via the 1e-8 floor.
inline ZScoreStats zscore_fit_apply(DesignMatrixData& train, DesignMatrixData& test) {
  if (train.size() == 0) throw Error("zscore_fit_apply: empty training set");
  ZScoreStats st;
  st.mean = train.X.colwise().mean();
  VectorXd var = (train.X.rowwise() - st.mean.transpose()).array().square().colwise().sum() /
                 static_cast<double>(train.size());
  st.std = var.array().sqrt().max(1e-8);
  train.X = (train.X.rowwise() - st.mean.transpose()).array().rowwise() /
            st.std.transpose().array();
  if (test.size() > 0) {
    test.X = (test.X.rowwise() - st.mean.transpose()).array().rowwise() /
             st.std.transpose().array();
  }
  return st;
}

/// Z-score over a label vector; returns (mean, std) used.
inline std::pair<double, double> zscore_labels(VectorXd& train_y, VectorXd& test_y) {
  const double mean = train_y.mean();
  double var = (train_y.array() - mean).square().sum() / train_y.size();
  const double sd = std::max(std::sqrt(var), 1e-8);
  train_y = (train_y.array() - mean) / sd;
  if (test_y.size() > 0) test_y = (test_y.array() - mean) / sd;
  return {mean, sd};
}

inline std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(n);
  for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  return idx;
}

/// Deterministic shuffled 80/20 split; train takes ceil(0.8 N).
inline std::pair<DesignMatrixData, DesignMatrixData> split_80_20(const DesignMatrixData& data,
                                                                 std::uint64_t seed) {
  if (data.size() < 5) throw Error("split_80_20: need at least 5 records");
  const auto idx = shuffled_indices(data.size(), seed);
  const Eigen::Index n_train = static_cast<Eigen::Index>(std::ceil(0.8 * data.size()));
  DesignMatrixData train, test;
  train.X.resize(n_train, data.dim());
  train.y.resize(n_train);
  test.X.resize(data.size() - n_train, data.dim());
  test.y.resize(data.size() - n_train);
  for (Eigen::Index k = 0; k < data.size(); ++k) {
    if (k < n_train) {
      train.X.row(k) = data.X.row(idx[k]);
      train.y[k] = data.y[idx[k]];
    } else {
      test.X.row(k - n_train) = data.X.row(idx[k]);
      test.y[k - n_train] = data.y[idx[k]];
    }
  }
  return {train, test};
}

inline std::pair<TripletData, TripletData> split_triplets_80_20(const TripletData& data,
                                                                std::uint64_t seed) {
  if (data.size() < 5) throw Error("split_triplets_80_20: need at least 5 records");
  auto idx = shuffled_indices(static_cast<Eigen::Index>(data.size()), seed);
  const std::size_t n_train = static_cast<std::size_t>(std::ceil(0.8 * data.size()));
  TripletData train, test;
  train.rows = test.rows = data.rows;
  train.cols = test.cols = data.cols;
  for (std::size_t k = 0; k < data.size(); ++k) {
    TripletData& dst = (k < n_train) ? train : test;
    dst.i.push_back(data.i[idx[k]]);
    dst.j.push_back(data.j[idx[k]]);
    dst.y.push_back(data.y[idx[k]]);
  }
  return {train, test};
}

inline std::pair<CorpusData, CorpusData> split_corpus_80_20(const CorpusData& data,
                                                            std::uint64_t seed) {
  if (data.num_docs() < 5) throw Error("split_corpus_80_20: need at least 5 documents");
  auto idx = shuffled_indices(data.num_docs(), seed);
  const Eigen::Index n_train = static_cast<Eigen::Index>(std::ceil(0.8 * data.num_docs()));
  CorpusData train, test;
  train.vocab_size = test.vocab_size = data.vocab_size;
  for (Eigen::Index k = 0; k < data.num_docs(); ++k) {
    ((k < n_train) ? train : test).docs.push_back(data.docs[idx[k]]);
  }
  return {train, test};
}

// ---------------------------------------------------------------------------
// synthetic generators mirroring each model's generative process

inline DesignMatrixData synth_glm(Eigen::Index n, Eigen::Index dim, const LikelihoodModel& lik,
                                  std::uint64_t seed) {
  Rng rng(seed);
  DesignMatrixData data;
  data.X.resize(n, dim);
  data.y.resize(n);
  const VectorXd w = rng.normal_vector(dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) data.X(i, j) = rng.normal();
    data.y[i] = lik.sample_y(data.X.row(i).dot(w), rng);
  }
  return data;
}

/// w1 ~ N(0,I), w2 ~ Rayleigh(tau^2), f_i ~ N(w1.x_i, w2), y_i ~ p(y|f_i).
inline DesignMatrixData synth_gme(Eigen::Index n, Eigen::Index dim, const LikelihoodModel& lik,
                                  double tau_sq, std::uint64_t seed) {
  Rng rng(seed);
  DesignMatrixData data;
  data.X.resize(n, dim);
  data.y.resize(n);
  const VectorXd w1 = rng.normal_vector(dim);
  const double w2 = RayleighDist(tau_sq).sample(rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) data.X(i, j) = rng.normal();
    const double f = data.X.row(i).dot(w1) + std::sqrt(w2) * rng.normal();
    data.y[i] = lik.sample_y(f, rng);
  }
  return data;
}

inline TripletData synth_pmf(Eigen::Index n_u, Eigen::Index n_v, Eigen::Index k,
                             const LikelihoodModel& lik, double density, std::uint64_t seed,
                             double sigma_u_sq = 1.0, double sigma_v_sq = 1.0) {
  if (!(density > 0.0) || density > 1.0) throw Error("synth_pmf: density must be in (0,1]");
  Rng rng(seed);
  MatrixXd u(k, n_u), v(k, n_v);
  for (Eigen::Index c = 0; c < n_u; ++c) u.col(c) = std::sqrt(sigma_u_sq) * rng.normal_vector(k);
  for (Eigen::Index c = 0; c < n_v; ++c) v.col(c) = std::sqrt(sigma_v_sq) * rng.normal_vector(k);
  TripletData out;
  out.rows = n_u;
  out.cols = n_v;
  for (Eigen::Index i = 0; i < n_u; ++i) {
    for (Eigen::Index j = 0; j < n_v; ++j) {
      if (density < 1.0 && rng.uniform() >= density) continue;
      out.i.push_back(i);
      out.j.push_back(j);
      out.y.push_back(lik.sample_y(u.col(i).dot(v.col(j)), rng));
    }
  }
  return out;
}

struct CtmModel {
  VectorXd mu;     // K-1
  MatrixXd sigma;  // (K-1) x (K-1)
  MatrixXd beta;   // K x V, rows on the simplex
};

inline VectorXd softmax_extended(const VectorXd& eta) {
  VectorXd logits(eta.size() + 1);
  logits.head(eta.size()) = eta;
  logits[eta.size()] = 0.0;
  const double m = logits.maxCoeff();
  VectorXd h = (logits.array() - m).exp();
  return h / h.sum();
}

/// Topic rows drawn uniformly on the simplex unless supplied.
inline CtmModel random_ctm_model(Eigen::Index k, Eigen::Index v, Rng& rng) {
  CtmModel model;
  model.mu = VectorXd::Zero(k - 1);
  model.sigma = MatrixXd::Identity(k - 1, k - 1);
  model.beta.resize(k, v);
  for (Eigen::Index t = 0; t < k; ++t) {
    double total = 0.0;
    for (Eigen::Index w = 0; w < v; ++w) {
      model.beta(t, w) = -std::log(rng.uniform());
      total += model.beta(t, w);
    }
    model.beta.row(t) /= total;
  }
  return model;
}

inline CorpusData synth_ctm(Eigen::Index docs, Eigen::Index words_per_doc, const CtmModel& model,
                            std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::Index k = model.beta.rows();
  const Eigen::Index v = model.beta.cols();
  GaussianDist prior = (k > 1)
                           ? GaussianDist::from_moments(model.mu, model.sigma)
                           : GaussianDist(VectorXd::Zero(0), MatrixXd::Zero(0, 0));
  CorpusData corpus;
  corpus.vocab_size = v;
  corpus.docs.resize(docs);
  for (Eigen::Index d = 0; d < docs; ++d) {
    const VectorXd theta = softmax_extended(prior.sample(rng));
    std::map<Eigen::Index, Eigen::Index> counts;
    for (Eigen::Index n = 0; n < words_per_doc; ++n) {
      double uz = rng.uniform();
      Eigen::Index z = 0;
      double cum = 0.0;
      for (; z < k; ++z) {
        cum += theta[z];
        if (uz < cum) break;
      }
      z = std::min(z, k - 1);
      double uw = rng.uniform();
      Eigen::Index w = 0;
      cum = 0.0;
      for (; w < v; ++w) {
        cum += model.beta(z, w);
        if (uw < cum) break;
      }
      w = std::min(w, v - 1);
      counts[w]++;
    }
    for (const auto& [w, c] : counts) corpus.docs[d].emplace_back(w, c);
  }
  return corpus;
}

}  // namespace ssvi

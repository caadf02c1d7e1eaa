#include "gridgp/gp_inference.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "gridgp/common.hpp"

namespace gridgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Cholesky with jitter escalation 1e-10 -> 1e-8 -> 1e-6 (scaled by trace/n).
Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& sym, double* jitter_used = nullptr) {
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (jitter_used) *jitter_used = 0.0;
  if (llt.info() == Eigen::Success) return llt;
  const double scale = std::max(sym.trace() / static_cast<double>(sym.rows()), 1e-300);
  for (double level : {1e-10, 1e-8, 1e-6}) {
    const double jitter = level * scale;
    Eigen::MatrixXd bumped = sym;
    bumped.diagonal().array() += jitter;
    llt.compute(bumped);
    if (llt.info() == Eigen::Success) {
      std::cerr << "[gridgp] covariance required jitter " << jitter << " (level " << level << ")\n";
      if (jitter_used) *jitter_used = jitter;
      return llt;
    }
  }
  throw NumericError("covariance matrix is indefinite beyond jitter tolerance");
}

double quantity_order(Quantity q) {
  switch (q) {
    case Quantity::angle: return 0;
    case Quantity::speed: return 1;
    case Quantity::rocof: return 2;
    case Quantity::power: break;
  }
  throw ValidationError("model-free path supports angle/speed/rocof chains only");
}

Eigen::VectorXd noise_variances(const SelectionSet& sel) {
  Eigen::VectorXd v(sel.size());
  for (std::size_t c = 0; c < sel.channels.size(); ++c) {
    for (std::size_t k = 0; k < sel.times.size(); ++k) {
      v[sel.flat(c, k)] = sel.channels[c].noise_std * sel.channels[c].noise_std;
    }
  }
  return v;
}

struct SolvedPrior {
  Eigen::MatrixXd sigma21;      // query x measured
  Eigen::MatrixXd sigma22;      // query x query
  Eigen::MatrixXd ainv_sigma12; // measured x query, A^{-1} Sigma12
  Eigen::VectorXd ainv_z;       // measured, A^{-1} z
  double logdet_a = 0.0;
};

// Builds all blocks and A^{-1}-products for a model-based problem, routing
// through the low-rank identity when the eigen core is small enough to win.
SolvedPrior solve_model_based(const InferenceProblem& p) {
  const CovarianceContext& ctx = *p.context;
  SolvedPrior out;
  out.sigma21 = assemble(ctx, p.query, p.measured).values;
  out.sigma22 = assemble(ctx, p.query, p.query).values;

  const Eigen::VectorXd sigma2 = noise_variances(p.measured);
  const Eigen::Index mt = p.measured.size();
  const double min_noise = sigma2.minCoeff();

  const Eigen::Index d = ctx.space->n_retained();
  Eigen::Index nq = 0;
  {
    std::vector<Quantity> qs;
    for (const auto& c : p.measured.channels) {
      bool seen = false;
      for (Quantity q : qs) seen = seen || q == c.quantity;
      if (!seen) qs.push_back(c.quantity);
    }
    nq = static_cast<Eigen::Index>(qs.size());
  }
  const Eigen::Index core_dim = nq * d * static_cast<Eigen::Index>(p.measured.times.size());
  const bool use_woodbury = min_noise > 1e-12 && core_dim <= (3 * mt) / 4;

  if (use_woodbury) {
    FactoredCovariance fac = assemble_factored(ctx, p.measured);
    Eigen::MatrixXd rhs(mt, 1 + out.sigma21.rows());
    rhs.col(0) = p.data;
    rhs.rightCols(out.sigma21.rows()) = out.sigma21.transpose();
    Eigen::MatrixXd solved = woodbury_solve(fac.b, fac.core, sigma2, rhs);
    out.ainv_z = solved.col(0);
    out.ainv_sigma12 = solved.rightCols(out.sigma21.rows());

    // Determinant lemma: logdet(BKB^T + D) = logdet(D) + logdet(I + K B^T D^{-1} B).
    Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(fac.core.rows(), fac.core.cols()) +
                            fac.core * (fac.b.transpose() * sigma2.cwiseInverse().asDiagonal() * fac.b);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(inner);
    double logdet_inner = 0.0;
    for (Eigen::Index i = 0; i < inner.rows(); ++i) {
      logdet_inner += std::log(std::abs(lu.matrixLU()(i, i)));
    }
    out.logdet_a = sigma2.array().log().sum() + logdet_inner;
    return out;
  }

  CovarianceBlock sigma11 = add_noise(assemble(ctx, p.measured, p.measured));
  Eigen::LLT<Eigen::MatrixXd> llt = robust_llt(sigma11.values);
  out.ainv_z = llt.solve(p.data);
  out.ainv_sigma12 = llt.solve(out.sigma21.transpose());
  out.logdet_a = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return out;
}

SolvedPrior solve_model_free(const InferenceProblem& p) {
  const ModelFreeKernel& k = *p.model_free;
  k.validate();
  if (p.measured.channels.size() != 1) {
    throw ValidationError("model-free inference works on a single channel");
  }
  const Quantity base = p.measured.channels[0].quantity;
  std::vector<int> orders = p.query_orders;
  if (orders.empty()) {
    for (const auto& c : p.query.channels) {
      double diff = quantity_order(c.quantity) - quantity_order(base);
      if (diff != 0.0 && diff != 1.0) {
        throw ValidationError("model-free query must be the measured quantity or its derivative");
      }
      orders.push_back(static_cast<int>(diff));
    }
  }
  if (orders.size() != p.query.channels.size()) {
    throw ValidationError("query_orders does not match query channels");
  }

  const auto& tm = p.measured.times;
  const auto& tq = p.query.times;
  const Eigen::Index m = static_cast<Eigen::Index>(tm.size());

  SolvedPrior out;
  Eigen::MatrixXd k11(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) k11(i, j) = k.eval(tm[i], 0, tm[j], 0);
  }
  out.sigma21.resize(p.query.size(), m);
  out.sigma22.resize(p.query.size(), p.query.size());
  for (std::size_t qc = 0; qc < p.query.channels.size(); ++qc) {
    for (std::size_t a = 0; a < tq.size(); ++a) {
      const Eigen::Index row = p.query.flat(qc, a);
      for (Eigen::Index j = 0; j < m; ++j) {
        out.sigma21(row, j) = k.eval(tq[a], orders[qc], tm[j], 0);
      }
      for (std::size_t qc2 = 0; qc2 < p.query.channels.size(); ++qc2) {
        for (std::size_t b = 0; b < tq.size(); ++b) {
          out.sigma22(row, p.query.flat(qc2, b)) = k.eval(tq[a], orders[qc], tq[b], orders[qc2]);
        }
      }
    }
  }

  Eigen::MatrixXd a = k11;
  a.diagonal() += noise_variances(p.measured);
  Eigen::LLT<Eigen::MatrixXd> llt = robust_llt(a);
  out.ainv_z = llt.solve(p.data);
  out.ainv_sigma12 = llt.solve(out.sigma21.transpose());
  out.logdet_a = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return out;
}

SolvedPrior solve_prior(const InferenceProblem& p) {
  p.validate();
  return p.context ? solve_model_based(p) : solve_model_free(p);
}

}  // namespace

void ModelFreeKernel::validate() const {
  if (!(s2 > 0) || !(beta > 0)) throw ValidationError("model-free kernel needs s2 > 0, beta > 0");
  if (noise_var < 0) throw ValidationError("negative noise variance");
}

double ModelFreeKernel::eval(double t1, int order1, double t2, int order2) const {
  const double d = t1 - t2;
  const double base = s2 * std::exp(-beta * d * d);
  if (order1 == 0 && order2 == 0) return base;
  if (order1 == 0 && order2 == 1) return base * 2.0 * beta * d;
  if (order1 == 1 && order2 == 0) return -base * 2.0 * beta * d;
  if (order1 == 1 && order2 == 1) return base * 2.0 * beta * (1.0 - 2.0 * beta * d * d);
  throw ValidationError("SE kernel derivative orders limited to 0/1");
}

void InferenceProblem::validate() const {
  measured.validate();
  query.validate();
  if (data.size() != measured.size()) {
    throw ValidationError("measured data length does not match selection");
  }
  if (static_cast<bool>(context) == static_cast<bool>(model_free)) {
    throw ValidationError("problem needs exactly one of covariance context / model-free kernel");
  }
  if (context) context->validate();
}

Eigen::MatrixXd woodbury_solve(const Eigen::MatrixXd& b, const Eigen::MatrixXd& k,
                               const Eigen::VectorXd& sigma2, const Eigen::MatrixXd& rhs) {
  const Eigen::Index mt = b.rows();
  const Eigen::Index dt = b.cols();
  if (k.rows() != dt || k.cols() != dt) throw ValidationError("K dimension mismatch");
  if (sigma2.size() != mt || rhs.rows() != mt) throw ValidationError("rhs/sigma2 dimension mismatch");
  if ((sigma2.array() <= 0).any()) throw ValidationError("woodbury_solve needs positive noise");

  const Eigen::VectorXd dinv = sigma2.cwiseInverse();
  Eigen::MatrixXd bt_dinv = b.transpose() * dinv.asDiagonal();
  Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(dt, dt) + k * (bt_dinv * b);
  Eigen::MatrixXd target = k * (bt_dinv * rhs);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(inner);
  Eigen::MatrixXd w = lu.solve(target);

  const double rel = (inner * w - target).norm() / std::max(target.norm(), 1e-300);
  if (!w.allFinite() || rel > 1e-6) {
    std::cerr << "[gridgp] woodbury inner system ill-conditioned (residual " << rel
              << "); falling back to dense solve\n";
    Eigen::MatrixXd dense = b * k * b.transpose();
    dense.diagonal() += sigma2;
    return robust_llt(dense).solve(rhs);
  }
  return dinv.asDiagonal() * (rhs - b * w);
}

PosteriorEstimate posterior(const InferenceProblem& problem) {
  SolvedPrior s = solve_prior(problem);

  PosteriorEstimate est;
  est.query = problem.query;
  est.mean = s.sigma21 * s.ainv_z;
  if (problem.model_free && !problem.query_orders.empty()) {
    // offset restored for order-0 queries only
    for (std::size_t qc = 0; qc < problem.query.channels.size(); ++qc) {
      if (problem.query_orders[qc] == 0) {
        for (std::size_t k = 0; k < problem.query.times.size(); ++k) {
          est.mean[problem.query.flat(qc, k)] += problem.model_free->mean_offset;
        }
      }
    }
  }

  Eigen::VectorXd reduction = (s.sigma21.array() * s.ainv_sigma12.transpose().array()).rowwise().sum();
  est.std.resize(problem.query.size());
  for (Eigen::Index i = 0; i < est.std.size(); ++i) {
    const double prior_var = s.sigma22(i, i);
    double var = prior_var - reduction[i];
    if (var < 0) {
      if (var < -1e-10 * std::max(1.0, prior_var)) {
        throw NumericError("negative posterior variance beyond round-off tolerance");
      }
      var = 0;
    }
    est.std[i] = std::sqrt(var);
  }

  const auto mt = static_cast<double>(problem.measured.size());
  est.loglik = -0.5 * (problem.data.dot(s.ainv_z) + s.logdet_a + mt * kLog2Pi);
  return est;
}

double anomaly_score(const InferenceProblem& problem, const Eigen::VectorXd& candidate) {
  if (candidate.size() != problem.query.size()) {
    throw ValidationError("candidate length does not match query selection");
  }
  SolvedPrior s = solve_prior(problem);
  Eigen::VectorXd mean = s.sigma21 * s.ainv_z;
  Eigen::MatrixXd cov = s.sigma22 - s.sigma21 * s.ainv_sigma12;
  cov = 0.5 * (cov + cov.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt = robust_llt(cov);
  Eigen::VectorXd diff = candidate - mean;
  const double maha = diff.dot(llt.solve(diff));
  const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return 0.5 * (maha + logdet + static_cast<double>(candidate.size()) * kLog2Pi);
}

ModelFreeKernel fit_model_free(const SignalFrame& data, Eigen::Index channel) {
  data.validate();
  if (channel < 0 || channel >= data.n_channels()) throw ValidationError("channel out of range");
  const Eigen::Index n_all = data.n_samples();
  if (n_all < 30) throw ValidationError("model-free fit needs at least 30 samples");

  // Hyperparameters are fit on at most 300 samples (deterministic stride);
  // the posterior itself uses the full record.
  const Eigen::Index stride = std::max<Eigen::Index>(1, n_all / 300);
  std::vector<double> t;
  std::vector<double> zraw;
  for (Eigen::Index k = 0; k < n_all; k += stride) {
    t.push_back(data.time(k));
    zraw.push_back(data.samples(k, channel));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(t.size());
  Eigen::VectorXd z = Eigen::Map<Eigen::VectorXd>(zraw.data(), n);
  const double mean = z.mean();
  z.array() -= mean;
  const double var = z.squaredNorm() / static_cast<double>(n);
  if (var < 1e-30) throw ValidationError("constant data: model-free kernel is degenerate");

  const double span = t.back() - t.front();
  const double dt = span / static_cast<double>(n - 1);
  const double log_beta_min = std::log(0.5 / (span * span));
  const double log_beta_max = std::log(8.0 / (dt * dt));

  // Profile negative log-likelihood at (beta, noise ratio eta): s2 closed
  // form from z^T C^{-1} z / n with C = Corr_beta + eta I.
  auto nll = [&](double log_beta, double log_eta, double* s2_out) {
    const double beta = std::exp(log_beta);
    const double eta = std::exp(log_eta);
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double d = t[static_cast<std::size_t>(i)] - t[static_cast<std::size_t>(j)];
        c(i, j) = std::exp(-beta * d * d);
        c(j, i) = c(i, j);
      }
      c(i, i) += eta;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const double quad = z.dot(llt.solve(z));
    if (!(quad > 0)) return std::numeric_limits<double>::infinity();
    const double s2 = quad / static_cast<double>(n);
    if (s2_out) *s2_out = s2;
    const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return 0.5 * (static_cast<double>(n) * std::log(s2) + logdet +
                  static_cast<double>(n) * (1.0 + kLog2Pi));
  };

  auto golden_beta = [&](double log_eta, double lo, double hi, double* best_nll) {
    const double ratio = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - ratio * (b - a), x2 = a + ratio * (b - a);
    double f1 = nll(x1, log_eta, nullptr), f2 = nll(x2, log_eta, nullptr);
    for (int it = 0; it < 40 && (b - a) > 1e-3; ++it) {
      if (f1 < f2) {
        b = x2; x2 = x1; f2 = f1;
        x1 = b - ratio * (b - a);
        f1 = nll(x1, log_eta, nullptr);
      } else {
        a = x1; x1 = x2; f1 = f2;
        x2 = a + ratio * (b - a);
        f2 = nll(x2, log_eta, nullptr);
      }
    }
    const double x = 0.5 * (a + b);
    if (best_nll) *best_nll = nll(x, log_eta, nullptr);
    return x;
  };

  // Coarse beta grid to bracket the basin, golden refinement, nested over a
  // noise-ratio grid.
  double best_obj = std::numeric_limits<double>::infinity();
  double best_log_beta = 0.0, best_log_eta = 0.0;
  for (int ei = 0; ei <= 10; ++ei) {
    const double log_eta = std::log(1e-6) + ei * (std::log(10.0) - std::log(1e-6)) / 10.0;
    double coarse_best = std::numeric_limits<double>::infinity();
    double coarse_log_beta = log_beta_min;
    for (int bi = 0; bi <= 16; ++bi) {
      const double lb = log_beta_min + bi * (log_beta_max - log_beta_min) / 16.0;
      const double f = nll(lb, log_eta, nullptr);
      if (f < coarse_best) {
        coarse_best = f;
        coarse_log_beta = lb;
      }
    }
    const double step = (log_beta_max - log_beta_min) / 16.0;
    double refined_obj = 0.0;
    const double refined = golden_beta(log_eta, std::max(log_beta_min, coarse_log_beta - step),
                                       std::min(log_beta_max, coarse_log_beta + step), &refined_obj);
    if (refined_obj < best_obj) {
      best_obj = refined_obj;
      best_log_beta = refined;
      best_log_eta = log_eta;
    }
  }

  ModelFreeKernel k;
  double s2 = var;
  nll(best_log_beta, best_log_eta, &s2);
  k.beta = std::exp(best_log_beta);
  k.s2 = s2;
  k.noise_var = s2 * std::exp(best_log_eta);
  k.mean_offset = mean;
  k.validate();
  return k;
}

PosteriorEstimate differentiate(const SignalFrame& data, Eigen::Index channel,
                                const std::vector<double>& query_times,
                                const std::optional<ModelFreeKernel>& kernel) {
  data.validate();
  if (channel < 0 || channel >= data.n_channels()) throw ValidationError("channel out of range");
  ModelFreeKernel k = kernel ? *kernel : fit_model_free(data, channel);

  InferenceProblem p;
  p.model_free = k;
  const ChannelSpec& src = data.channels[static_cast<std::size_t>(channel)];
  ChannelSpec meas = src;
  meas.noise_std = std::sqrt(k.noise_var);
  p.measured.channels = {meas};
  p.measured.times.resize(static_cast<std::size_t>(data.n_samples()));
  p.data.resize(data.n_samples());
  for (Eigen::Index i = 0; i < data.n_samples(); ++i) {
    p.measured.times[static_cast<std::size_t>(i)] = data.time(i);
    p.data[i] = data.samples(i, channel) - k.mean_offset;
  }
  ChannelSpec deriv = src;
  deriv.quantity = src.quantity == Quantity::angle ? Quantity::speed : Quantity::rocof;
  deriv.noise_std = 0.0;
  p.query.channels = {deriv};
  p.query.times = query_times;
  p.query_orders = {1};
  return posterior(p);
}

}  // namespace gridgp

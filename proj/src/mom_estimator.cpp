#include "gridgp/mom_estimator.hpp"

#include <cmath>

namespace gridgp {

void AlphaMatrix::validate() const {
  const Eigen::Index d = values.rows();
  if (values.cols() != d || mask.rows() != d || mask.cols() != d) {
    throw ValidationError("alpha matrix/mask dimensions inconsistent");
  }
  if ((values - values.transpose()).cwiseAbs().maxCoeff() > 0.0) {
    throw ValidationError("alpha matrix not exactly symmetric");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!mask(i, j) && values(i, j) != 0.0) {
        throw ValidationError("masked-out alpha entry is non-zero");
      }
    }
  }
}

NoiseSpec NoiseSpec::all_known(const Eigen::VectorXd& var) {
  NoiseSpec n;
  n.variance = var;
  n.known.assign(static_cast<std::size_t>(var.size()), true);
  return n;
}

NoiseSpec NoiseSpec::all_unknown(Eigen::Index m) {
  NoiseSpec n;
  n.variance = Eigen::VectorXd::Zero(m);
  n.known.assign(static_cast<std::size_t>(m), false);
  return n;
}

void NoiseSpec::validate(Eigen::Index m) const {
  if (variance.size() != m || static_cast<Eigen::Index>(known.size()) != m) {
    throw ValidationError("noise spec does not match channel count");
  }
  if ((variance.array() < 0).any()) throw ValidationError("negative noise variance");
}

SampleCovariance sample_cov(const SignalFrame& data, int lag_samples) {
  data.validate();
  if (lag_samples < 0) throw ValidationError("lag must be non-negative");
  const Eigen::Index t = data.n_samples();
  const Eigen::Index pairs = t - lag_samples;
  if (pairs < 2) throw ValidationError("insufficient samples for requested lag");

  SampleCovariance c;
  c.lag_s = lag_samples / data.rate_hz;
  c.sample_count = pairs;
  const auto& z = data.samples;
  c.values = z.bottomRows(pairs).transpose() * z.topRows(pairs) / static_cast<double>(pairs);
  if (lag_samples == 0) c.values = 0.5 * (c.values + c.values.transpose()).eval();
  return c;
}

Cutoffs cutoffs(double lambda, double gamma) {
  if (lambda < 0 || !(gamma > 0)) throw ValidationError("cutoffs need lambda >= 0, gamma > 0");
  Cutoffs c;
  const double root = std::sqrt(gamma * gamma + 4.0 * lambda);
  c.w_low = 0.5 * (-gamma + root);
  c.w_high = 0.5 * (gamma + root);
  c.bandwidth = gamma;
  return c;
}

BoolMatrix overlap_mask(const EigenSpace& space) {
  if (space.retained.empty()) throw ValidationError("no retained eigenstates");
  const Eigen::Index d = space.n_retained();
  std::vector<Cutoffs> cuts(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    cuts[static_cast<std::size_t>(i)] = cutoffs(space.eigvals[space.retained[i]], space.gamma);
  }
  BoolMatrix mask(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const auto& a = cuts[static_cast<std::size_t>(i)];
      const auto& b = cuts[static_cast<std::size_t>(j)];
      mask(i, j) = std::max(2.0 * a.w_low, 2.0 * b.w_low) < std::min(2.0 * a.w_high, 2.0 * b.w_high);
    }
  }
  return mask;
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& sym) {
  Eigen::MatrixXd s = 0.5 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed in psd_project");
  Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd p = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (p + p.transpose());
}

namespace {

// Column index bookkeeping for the LS design: the masked upper triangle of
// alpha first, then the unknown noise variances.
struct Unknowns {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> alpha_entries;  // (u, v), u <= v
  std::vector<Eigen::Index> noise_channels;
};

}  // namespace

AlphaFit fit_alpha(const std::vector<SampleCovariance>& covs, const GridModel& model,
                   const EigenSpace& space, const BoolMatrix& mask, const NoiseSpec& noise,
                   const std::vector<ChannelSpec>& channels,
                   const std::optional<FilterOperator>& filter,
                   const std::optional<TurbineSpec>& turbine) {
  if (covs.empty()) throw ValidationError("fit_alpha needs at least one sample covariance");
  const Eigen::Index d = space.n_retained();
  const Eigen::Index m = static_cast<Eigen::Index>(channels.size());
  if (mask.rows() != d || mask.cols() != d) throw ValidationError("mask dimension mismatch");
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (mask(i, j) != mask(j, i)) throw ValidationError("mask must be symmetric");
    }
  }
  noise.validate(m);
  for (const auto& c : covs) {
    if (c.values.rows() != m || c.values.cols() != m) {
      throw ValidationError("sample covariance dimension does not match channel count");
    }
  }

  // Channel weights: rows of M^-1/2 V (or M^1/2 V for power channels).
  Eigen::MatrixXd w(m, d);
  for (Eigen::Index c = 0; c < m; ++c) {
    const ChannelSpec& ch = channels[static_cast<std::size_t>(c)];
    if (ch.bus < 0 || ch.bus >= model.n_buses) throw ValidationError("channel bus out of range");
    const double scale = ch.quantity == Quantity::power ? std::sqrt(model.inertia[ch.bus])
                                                        : 1.0 / std::sqrt(model.inertia[ch.bus]);
    for (Eigen::Index i = 0; i < d; ++i) w(c, i) = scale * space.eigvecs(ch.bus, space.retained[i]);
  }

  Unknowns unknowns;
  for (Eigen::Index u = 0; u < d; ++u) {
    for (Eigen::Index v = u; v < d; ++v) {
      if (mask(u, v)) unknowns.alpha_entries.push_back({u, v});
    }
  }
  for (Eigen::Index c = 0; c < m; ++c) {
    if (!noise.known[static_cast<std::size_t>(c)]) unknowns.noise_channels.push_back(c);
  }
  const Eigen::Index n_alpha = static_cast<Eigen::Index>(unknowns.alpha_entries.size());
  const Eigen::Index n_unknown = n_alpha + static_cast<Eigen::Index>(unknowns.noise_channels.size());

  // One kernel matrix per (lag, row-quantity, col-quantity).
  std::vector<Quantity> qs;
  for (const auto& ch : channels) {
    bool seen = false;
    for (Quantity q : qs) seen = seen || q == ch.quantity;
    if (!seen) qs.push_back(ch.quantity);
  }

  const Eigen::Index n_eq = static_cast<Eigen::Index>(covs.size()) * m * m;
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n_eq, n_unknown);
  Eigen::VectorXd rhs(n_eq);

  for (std::size_t lag_idx = 0; lag_idx < covs.size(); ++lag_idx) {
    const SampleCovariance& cov = covs[lag_idx];
    const bool lag0 = std::abs(cov.lag_s) < 1e-12;

    std::vector<Eigen::MatrixXd> ker(qs.size() * qs.size());
    for (std::size_t qa = 0; qa < qs.size(); ++qa) {
      for (std::size_t qb = 0; qb < qs.size(); ++qb) {
        ker[qa * qs.size() + qb] =
            eigenstate_kernel_matrix(space, qs[qa], qs[qb], cov.lag_s, filter, turbine);
      }
    }
    auto kernel_for = [&](Quantity qa, Quantity qb) -> const Eigen::MatrixXd& {
      std::size_t ia = 0, ib = 0;
      while (qs[ia] != qa) ++ia;
      while (qs[ib] != qb) ++ib;
      return ker[ia * qs.size() + ib];
    };

    const Eigen::Index row0 = static_cast<Eigen::Index>(lag_idx) * m * m;
    for (Eigen::Index c1 = 0; c1 < m; ++c1) {
      for (Eigen::Index c2 = 0; c2 < m; ++c2) {
        // Equation for [C_tau]_{c1,c2} = E[z_{c1}(t+tau) z_{c2}(t)].
        const Eigen::Index row = row0 + c1 * m + c2;
        const Eigen::MatrixXd& k12 = kernel_for(channels[static_cast<std::size_t>(c1)].quantity,
                                                channels[static_cast<std::size_t>(c2)].quantity);
        double target = cov.values(c1, c2);
        if (lag0 && c1 == c2 && noise.known[static_cast<std::size_t>(c1)]) {
          target -= noise.variance[c1];
        }
        rhs[row] = target;
        for (Eigen::Index p = 0; p < n_alpha; ++p) {
          const auto [u, v] = unknowns.alpha_entries[static_cast<std::size_t>(p)];
          double coeff = w(c1, u) * w(c2, v) * k12(u, v);
          if (u != v) coeff += w(c1, v) * w(c2, u) * k12(v, u);
          design(row, p) = coeff;
        }
        if (lag0 && c1 == c2) {
          for (std::size_t nc = 0; nc < unknowns.noise_channels.size(); ++nc) {
            if (unknowns.noise_channels[nc] == c1) {
              design(row, n_alpha + static_cast<Eigen::Index>(nc)) = 1.0;
            }
          }
        }
      }
    }
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  if (rank < n_unknown) {
    throw ValidationError("rank-deficient moment design: deficiency " +
                          std::to_string(n_unknown - rank) +
                          " (add lags or metered channels)");
  }
  Eigen::VectorXd solution = qr.solve(rhs);

  AlphaFit fit;
  fit.noise = noise;
  bool clipped_noise = false;
  for (std::size_t nc = 0; nc < unknowns.noise_channels.size(); ++nc) {
    double v = solution[n_alpha + static_cast<Eigen::Index>(nc)];
    if (v < 0.0) {
      v = 0.0;
      clipped_noise = true;
    }
    fit.noise.variance[unknowns.noise_channels[nc]] = v;
  }
  if (clipped_noise) {
    // Re-solve the alpha block with the clipped noise pinned.
    Eigen::VectorXd adjusted = rhs - design.rightCols(n_unknown - n_alpha) *
                                         Eigen::VectorXd(fit.noise.variance(unknowns.noise_channels));
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr2(design.leftCols(n_alpha));
    solution.head(n_alpha) = qr2.solve(adjusted);
  }

  Eigen::MatrixXd alpha_ls = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index p = 0; p < n_alpha; ++p) {
    const auto [u, v] = unknowns.alpha_entries[static_cast<std::size_t>(p)];
    alpha_ls(u, v) = solution[p];
    alpha_ls(v, u) = solution[p];
  }
  fit.ls_residual = (design.leftCols(n_alpha) * solution.head(n_alpha) +
                     design.rightCols(n_unknown - n_alpha) *
                         Eigen::VectorXd(fit.noise.variance(unknowns.noise_channels)) -
                     rhs)
                        .squaredNorm();

  // Alternating projection: PSD cone <-> mask subspace, ending on the mask
  // step so pinned zeros are exact.
  Eigen::MatrixXd alpha = alpha_ls;
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::MatrixXd projected = psd_project(alpha);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        if (!mask(i, j)) projected(i, j) = 0.0;
      }
    }
    double change = (projected - alpha).norm();
    alpha = projected;
    if (change < 1e-10) break;
  }

  fit.alpha.values = alpha;
  fit.alpha.mask = mask;
  fit.alpha.validate();
  return fit;
}

}  // namespace gridgp

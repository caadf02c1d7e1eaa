#include "gridgp/covariance.hpp"

#include <cmath>
#include <map>

#include "gridgp/common.hpp"

namespace gridgp {

namespace {

// Checks t[k] = t[0] + k*dt for all k within a relative tolerance.
bool is_uniform_grid(const std::vector<double>& t, double dt) {
  for (std::size_t k = 1; k < t.size(); ++k) {
    if (std::abs(t[k] - t[0] - static_cast<double>(k) * dt) > 1e-9 * std::max(1.0, std::abs(dt))) {
      return false;
    }
  }
  return true;
}

// Kernel values between the row-quantity processes of eigenstate i and the
// col-quantity processes of eigenstate j, as a function of lag. Holds either
// the analytic mixtures (unfiltered) or precomputed integer-lag tables after
// zero-phase conjugation.
class PairKernelTable {
 public:
  PairKernelTable(const EigenSpace& space, const std::optional<FilterOperator>& filter,
                  const std::optional<TurbineSpec>& turbine, Quantity row_q, Quantity col_q,
                  const std::vector<double>& row_times, const std::vector<double>& col_times) {
    d_ = space.n_retained();
    row_mix_.resize(d_);
    col_mix_.resize(d_);
    for (Eigen::Index i = 0; i < d_; ++i) {
      double lam = space.eigvals[space.retained[i]];
      row_mix_[i] = quantity_mix(lam, space.gamma, row_q, turbine);
      col_mix_[i] = quantity_mix(lam, space.gamma, col_q, turbine);
    }
    filtered_ = filter.has_value();
    if (!filtered_) return;

    const FilterOperator& f = *filter;
    dt_ = 1.0 / f.sample_rate_hz;
    if (!is_uniform_grid(row_times, dt_) || !is_uniform_grid(col_times, dt_)) {
      throw ValidationError("filtered covariance requires uniform time grids at the filter rate");
    }
    double offset = (row_times[0] - col_times[0]) / dt_;
    offset0_ = std::llround(offset);
    if (std::abs(offset - static_cast<double>(offset0_)) > 1e-6) {
      throw ValidationError("row/col time grids are not phase-aligned at the filter rate");
    }

    // Autocorrelation G2 of the combined zero-phase kernel g: the filtered
    // kernel at integer lag d is sum_m G2[m] k((d-m)dt), and a white
    // feedthrough of weight w adds (w/dt) G2[d].
    Eigen::VectorXd g = f.zero_phase_kernel();
    const int gn = static_cast<int>(g.size());  // 2*taps-1
    half_ = gn - 1;                             // G2 support: |m| <= half_
    g2_ = Eigen::VectorXd::Zero(2 * half_ + 1);
    for (int m = -half_; m <= half_; ++m) {
      double acc = 0.0;
      for (int k = std::max(0, -m); k < std::min(gn, gn - m); ++k) acc += g[k] * g[k + m];
      g2_[m + half_] = acc;
    }

    dmin_ = offset0_ - static_cast<long long>(col_times.size() - 1);
    dmax_ = offset0_ + static_cast<long long>(row_times.size() - 1);
    const long long umin = dmin_ - half_, umax = dmax_ + half_;
    const std::size_t nlag = static_cast<std::size_t>(dmax_ - dmin_ + 1);
    const std::size_t nraw = static_cast<std::size_t>(umax - umin + 1);

    table_.assign(static_cast<std::size_t>(d_ * d_), {});
    std::vector<Eigen::VectorXd> raw(static_cast<std::size_t>(d_ * d_));
    parallel_for(static_cast<std::size_t>(d_ * d_), [&](std::size_t idx) {
      const Eigen::Index i = static_cast<Eigen::Index>(idx) / d_;
      const Eigen::Index j = static_cast<Eigen::Index>(idx) % d_;
      Eigen::VectorXd r(nraw);
      for (std::size_t u = 0; u < nraw; ++u) {
        r[static_cast<Eigen::Index>(u)] =
            cross_corr(row_mix_[i], col_mix_[j], static_cast<double>(umin + static_cast<long long>(u)) * dt_);
      }
      Eigen::VectorXd out = Eigen::VectorXd::Zero(nlag);
      const double ff = row_mix_[i].feedthrough * col_mix_[j].feedthrough;
      for (std::size_t dd = 0; dd < nlag; ++dd) {
        const long long d = dmin_ + static_cast<long long>(dd);
        double acc = 0.0;
        for (int m = -half_; m <= half_; ++m) {
          acc += g2_[m + half_] * r[static_cast<Eigen::Index>(d - m - umin)];
        }
        if (ff != 0.0 && std::llabs(d) <= half_) {
          acc += ff / dt_ * g2_[static_cast<Eigen::Index>(d) + half_];
        }
        out[static_cast<Eigen::Index>(dd)] = acc;
      }
      table_[idx] = std::move(out);
    });
  }

  bool filtered() const { return filtered_; }

  // D x D kernel matrix at a continuous lag (unfiltered path).
  Eigen::MatrixXd at_lag(double tau) const {
    Eigen::MatrixXd k(d_, d_);
    const bool equal_time = std::abs(tau) < 1e-12;
    for (Eigen::Index i = 0; i < d_; ++i) {
      for (Eigen::Index j = 0; j < d_; ++j) {
        if (equal_time && row_mix_[i].feedthrough != 0.0 && col_mix_[j].feedthrough != 0.0) {
          throw ValidationError(
              "power/rocof covariance at equal times is singular without a filter");
        }
        k(i, j) = cross_corr(row_mix_[i], col_mix_[j], tau);
      }
    }
    return k;
  }

  // D x D kernel matrix at integer lag d = (t_row - t_col)/dt (filtered path).
  Eigen::MatrixXd at_integer_lag(long long d) const {
    Eigen::MatrixXd k(d_, d_);
    const std::size_t dd = static_cast<std::size_t>(d - dmin_);
    for (Eigen::Index i = 0; i < d_; ++i) {
      for (Eigen::Index j = 0; j < d_; ++j) {
        k(i, j) = table_[static_cast<std::size_t>(i * d_ + j)][static_cast<Eigen::Index>(dd)];
      }
    }
    return k;
  }

  long long offset0() const { return offset0_; }

 private:
  Eigen::Index d_ = 0;
  std::vector<ExpMixKernel> row_mix_, col_mix_;
  bool filtered_ = false;
  double dt_ = 0.0;
  long long offset0_ = 0;
  long long dmin_ = 0, dmax_ = 0;
  int half_ = 0;
  Eigen::VectorXd g2_;
  std::vector<Eigen::VectorXd> table_;  // (i*D+j) -> lag-indexed values
};

// Weight of eigenstate i in a channel: M^-1/2 V for angle/speed/rocof,
// M^1/2 V for power (swing identity folded into the eigen-level kernel).
Eigen::MatrixXd channel_weights(const CovarianceContext& ctx,
                                const std::vector<ChannelSpec>& channels) {
  const GridModel& model = *ctx.model;
  const EigenSpace& space = *ctx.space;
  const Eigen::Index d = space.n_retained();
  Eigen::MatrixXd w(static_cast<Eigen::Index>(channels.size()), d);
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const ChannelSpec& ch = channels[c];
    if (ch.bus < 0 || ch.bus >= model.n_buses) throw ValidationError("channel bus out of range");
    const double scale = ch.quantity == Quantity::power ? std::sqrt(model.inertia[ch.bus])
                                                        : 1.0 / std::sqrt(model.inertia[ch.bus]);
    for (Eigen::Index i = 0; i < d; ++i) {
      w(static_cast<Eigen::Index>(c), i) = scale * space.eigvecs(ch.bus, space.retained[i]);
    }
  }
  return w;
}

std::vector<Quantity> distinct_quantities(const std::vector<ChannelSpec>& channels) {
  std::vector<Quantity> qs;
  for (const auto& c : channels) {
    bool seen = false;
    for (Quantity q : qs) seen = seen || q == c.quantity;
    if (!seen) qs.push_back(c.quantity);
  }
  return qs;
}

}  // namespace

void CovarianceContext::validate() const {
  if (!model || !space) throw ValidationError("covariance context missing model or eigenspace");
  const Eigen::Index d = space->n_retained();
  if (d == 0) throw ValidationError("no retained eigenstates");
  if (alpha.rows() != d || alpha.cols() != d) {
    throw ValidationError("alpha dimension does not match retained eigenstate count");
  }
  if (turbine) turbine->validate();
}

CovarianceBlock assemble(const CovarianceContext& ctx, const SelectionSet& rows,
                         const SelectionSet& cols) {
  ctx.validate();
  rows.validate();
  cols.validate();

  CovarianceBlock block;
  block.rows = rows;
  block.cols = cols;
  block.values.resize(rows.size(), cols.size());

  const Eigen::MatrixXd w_rows = channel_weights(ctx, rows.channels);
  const Eigen::MatrixXd w_cols = channel_weights(ctx, cols.channels);
  const std::size_t tr = rows.times.size(), tc = cols.times.size();

  for (Quantity qr : distinct_quantities(rows.channels)) {
    std::vector<std::size_t> rsel;
    for (std::size_t c = 0; c < rows.channels.size(); ++c) {
      if (rows.channels[c].quantity == qr) rsel.push_back(c);
    }
    for (Quantity qc : distinct_quantities(cols.channels)) {
      std::vector<std::size_t> csel;
      for (std::size_t c = 0; c < cols.channels.size(); ++c) {
        if (cols.channels[c].quantity == qc) csel.push_back(c);
      }

      PairKernelTable table(*ctx.space, ctx.filter, ctx.turbine, qr, qc, rows.times, cols.times);
      Eigen::MatrixXd wr(static_cast<Eigen::Index>(rsel.size()), w_rows.cols());
      Eigen::MatrixXd wc(static_cast<Eigen::Index>(csel.size()), w_cols.cols());
      for (std::size_t a = 0; a < rsel.size(); ++a) wr.row(static_cast<Eigen::Index>(a)) = w_rows.row(static_cast<Eigen::Index>(rsel[a]));
      for (std::size_t a = 0; a < csel.size(); ++a) wc.row(static_cast<Eigen::Index>(a)) = w_cols.row(static_cast<Eigen::Index>(csel[a]));

      if (table.filtered()) {
        // One spatialized matrix per integer lag, scattered along diagonals.
        const long long off = table.offset0();
        const long long dmin = off - static_cast<long long>(tc - 1);
        const long long dmax = off + static_cast<long long>(tr - 1);
        const std::size_t nlag = static_cast<std::size_t>(dmax - dmin + 1);
        std::vector<Eigen::MatrixXd> phi(nlag);
        parallel_for(nlag, [&](std::size_t dd) {
          const long long d = dmin + static_cast<long long>(dd);
          phi[dd] = wr * ctx.alpha.cwiseProduct(table.at_integer_lag(d)) * wc.transpose();
        });
        for (std::size_t k = 0; k < tr; ++k) {
          for (std::size_t l = 0; l < tc; ++l) {
            const std::size_t dd = static_cast<std::size_t>(
                off + static_cast<long long>(k) - static_cast<long long>(l) - dmin);
            const Eigen::MatrixXd& p = phi[dd];
            for (std::size_t a = 0; a < rsel.size(); ++a) {
              for (std::size_t b = 0; b < csel.size(); ++b) {
                block.values(rows.flat(rsel[a], k), cols.flat(csel[b], l)) =
                    p(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
              }
            }
          }
        }
      } else {
        // Cluster identical lags so uniform grids cost O(T) kernel matrices.
        std::map<double, std::vector<std::pair<std::size_t, std::size_t>>> lags;
        for (std::size_t k = 0; k < tr; ++k) {
          for (std::size_t l = 0; l < tc; ++l) {
            lags[rows.times[k] - cols.times[l]].push_back({k, l});
          }
        }
        std::vector<const std::pair<const double, std::vector<std::pair<std::size_t, std::size_t>>>*> items;
        items.reserve(lags.size());
        for (const auto& kv : lags) items.push_back(&kv);
        parallel_for(items.size(), [&](std::size_t n) {
          const double tau = items[n]->first;
          Eigen::MatrixXd p = wr * ctx.alpha.cwiseProduct(table.at_lag(tau)) * wc.transpose();
          for (const auto& [k, l] : items[n]->second) {
            for (std::size_t a = 0; a < rsel.size(); ++a) {
              for (std::size_t b = 0; b < csel.size(); ++b) {
                block.values(rows.flat(rsel[a], k), cols.flat(csel[b], l)) =
                    p(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
              }
            }
          }
        });
      }
    }
  }
  return block;
}

CovarianceBlock add_noise(CovarianceBlock block) {
  const auto& r = block.rows;
  const auto& c = block.cols;
  bool same = r.channels.size() == c.channels.size() && r.times == c.times;
  if (same) {
    for (std::size_t i = 0; i < r.channels.size(); ++i) {
      same = same && r.channels[i].bus == c.channels[i].bus &&
             r.channels[i].quantity == c.channels[i].quantity &&
             r.channels[i].noise_std == c.channels[i].noise_std;
    }
  }
  if (!same) throw ValidationError("add_noise requires a diagonal block (rows == cols)");
  for (std::size_t ch = 0; ch < r.channels.size(); ++ch) {
    const double v = r.channels[ch].noise_std * r.channels[ch].noise_std;
    if (v == 0.0) continue;
    for (std::size_t k = 0; k < r.times.size(); ++k) {
      block.values(r.flat(ch, k), r.flat(ch, k)) += v;
    }
  }
  return block;
}

Eigen::VectorXd participation(const GridModel& model, const EigenSpace& space, int bus) {
  if (bus < 0 || bus >= model.n_buses) throw ValidationError("bus out of range");
  const Eigen::Index d = space.n_retained();
  Eigen::VectorXd p(d);
  const double scale = 1.0 / std::sqrt(model.inertia[bus]);
  for (Eigen::Index i = 0; i < d; ++i) p[i] = scale * space.eigvecs(bus, space.retained[i]);
  return p;
}

Eigen::MatrixXd factored_cross_core(const CovarianceContext& ctx,
                                    const std::vector<Quantity>& row_quantities,
                                    const std::vector<double>& row_times,
                                    const std::vector<Quantity>& col_quantities,
                                    const std::vector<double>& col_times) {
  ctx.validate();
  const Eigen::Index d = ctx.space->n_retained();
  const Eigen::Index tr = static_cast<Eigen::Index>(row_times.size());
  const Eigen::Index tc = static_cast<Eigen::Index>(col_times.size());
  Eigen::MatrixXd core(static_cast<Eigen::Index>(row_quantities.size()) * d * tr,
                       static_cast<Eigen::Index>(col_quantities.size()) * d * tc);
  for (std::size_t qa = 0; qa < row_quantities.size(); ++qa) {
    for (std::size_t qb = 0; qb < col_quantities.size(); ++qb) {
      PairKernelTable table(*ctx.space, ctx.filter, ctx.turbine, row_quantities[qa],
                            col_quantities[qb], row_times, col_times);
      for (Eigen::Index k = 0; k < tr; ++k) {
        for (Eigen::Index l = 0; l < tc; ++l) {
          Eigen::MatrixXd kd =
              table.filtered()
                  ? table.at_integer_lag(table.offset0() + k - l)
                  : table.at_lag(row_times[static_cast<std::size_t>(k)] -
                                 col_times[static_cast<std::size_t>(l)]);
          for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) {
              core((static_cast<Eigen::Index>(qa) * d + i) * tr + k,
                   (static_cast<Eigen::Index>(qb) * d + j) * tc + l) = ctx.alpha(i, j) * kd(i, j);
            }
          }
        }
      }
    }
  }
  return core;
}

FactoredCovariance assemble_factored(const CovarianceContext& ctx, const SelectionSet& sel) {
  ctx.validate();
  sel.validate();
  FactoredCovariance out;
  out.quantities = distinct_quantities(sel.channels);
  const Eigen::Index d = ctx.space->n_retained();
  const Eigen::Index t = static_cast<Eigen::Index>(sel.times.size());
  const Eigen::Index nq = static_cast<Eigen::Index>(out.quantities.size());

  const Eigen::MatrixXd w = channel_weights(ctx, sel.channels);
  out.b = Eigen::MatrixXd::Zero(sel.size(), nq * d * t);
  for (std::size_t c = 0; c < sel.channels.size(); ++c) {
    Eigen::Index qidx = 0;
    while (out.quantities[static_cast<std::size_t>(qidx)] != sel.channels[c].quantity) ++qidx;
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index k = 0; k < t; ++k) {
        out.b(sel.flat(c, static_cast<std::size_t>(k)), (qidx * d + i) * t + k) =
            w(static_cast<Eigen::Index>(c), i);
      }
    }
  }
  out.core = factored_cross_core(ctx, out.quantities, sel.times, out.quantities, sel.times);
  return out;
}

Eigen::MatrixXd eigenstate_kernel_matrix(const EigenSpace& space, Quantity row_quantity,
                                         Quantity col_quantity, double tau,
                                         const std::optional<FilterOperator>& filter,
                                         const std::optional<TurbineSpec>& turbine) {
  if (space.retained.empty()) throw ValidationError("no retained eigenstates");
  if (!filter) {
    PairKernelTable table(space, filter, turbine, row_quantity, col_quantity, {0.0}, {0.0});
    return table.at_lag(tau);
  }
  const double dt = 1.0 / filter->sample_rate_hz;
  const double steps = tau / dt;
  const long long lag = std::llround(steps);
  if (std::abs(steps - static_cast<double>(lag)) > 1e-6) {
    throw ValidationError("filtered kernel lag must be an integer number of samples");
  }
  PairKernelTable table(space, filter, turbine, row_quantity, col_quantity,
                        {static_cast<double>(lag) * dt}, {0.0});
  return table.at_integer_lag(lag);
}

}  // namespace gridgp

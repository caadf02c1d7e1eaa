#include <doctest.h>

#include <cmath>

#include "gridgp/covariance.hpp"
#include "gridgp/dynamics_sim.hpp"
#include "gridgp/signal_filter.hpp"
#include "test_support.hpp"

using namespace gridgp;

namespace {

struct Fixture {
  GridModel model;
  EigenSpace space;
  CovarianceContext ctx;

  explicit Fixture(GridModel m, std::optional<BandSpec> band = std::nullopt)
      : model(std::move(m)), space(eigenspace(model, band)) {
    ctx.model = &model;
    ctx.space = &space;
    ctx.alpha = Eigen::MatrixXd::Identity(space.n_retained(), space.n_retained());
  }
};

std::vector<double> grid(double t0, double dt, int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) t[static_cast<std::size_t>(k)] = t0 + k * dt;
  return t;
}

// A small hand-built band-pass used where design()'s attenuation demands
// would force long tap counts.
FilterOperator toy_filter(int taps, double rate, double lo, double hi) {
  FilterOperator f;
  f.sample_rate_hz = rate;
  f.pass_low_hz = lo;
  f.pass_high_hz = hi;
  f.taps.resize(taps);
  const int mid = (taps - 1) / 2;
  const double fc_l = lo / rate, fc_h = hi / rate;
  for (int i = 0; i < taps; ++i) {
    const int k = i - mid;
    double ideal;
    if (k == 0) {
      ideal = 2.0 * (fc_h - fc_l);
    } else {
      ideal = (std::sin(2.0 * testsup::kPi * fc_h * k) - std::sin(2.0 * testsup::kPi * fc_l * k)) /
              (testsup::kPi * k);
    }
    f.taps[i] = ideal * (0.54 + 0.46 * std::cos(2.0 * testsup::kPi * k / (taps - 1)));
  }
  f.taps /= f.gain_at(0.5 * (lo + hi));
  return f;
}

}  // namespace

TEST_CASE("single zero-mode bus covariance is V^2/(2 gamma)") {
  GridModel m = testsup::path_model(2, 1.0, 1.0, 1.0);
  m.laplacian.setZero();  // both eigenvalues at zero
  Fixture fx(std::move(m));
  fx.space.retained = {0};
  fx.ctx.alpha = Eigen::MatrixXd::Identity(1, 1);

  SelectionSet sel;
  sel.channels = {{0, Quantity::speed, 0.0}};
  sel.times = {0.0};
  CovarianceBlock block = assemble(fx.ctx, sel, sel);
  const double v = fx.space.eigvecs(0, 0);
  CHECK(block.values(0, 0) == doctest::Approx(v * v / 2.0).epsilon(1e-12));
}

TEST_CASE("speed blocks are symmetric PSD") {
  Fixture fx(testsup::standard_ten_machine());
  SelectionSet sel;
  for (int b = 0; b < 10; b += 2) sel.channels.push_back({b, Quantity::speed, 0.0});
  sel.times = grid(0.0, 1.0 / 15.0, 12);
  CovarianceBlock block = assemble(fx.ctx, sel, sel);
  CHECK((block.values - block.values.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(block.values);
  CHECK(eig.eigenvalues().minCoeff() > -1e-8 * block.values.trace());
}

TEST_CASE("buses with identical eigen-weights share covariance rows") {
  GridModel m = testsup::path_model(2, 1.0, 1.0, 0.8);
  m.laplacian.setZero();
  Fixture fx(std::move(m));
  fx.space.eigvecs.row(1) = fx.space.eigvecs.row(0);  // force identical weights
  SelectionSet sel;
  sel.channels = {{0, Quantity::speed, 0.0}, {1, Quantity::speed, 0.0}};
  sel.times = grid(0.0, 0.1, 5);
  CovarianceBlock block = assemble(fx.ctx, sel, sel);
  for (std::size_t k = 0; k < 5; ++k) {
    for (Eigen::Index c = 0; c < block.values.cols(); ++c) {
      CHECK(block.values(sel.flat(0, k), c) == block.values(sel.flat(1, k), c));
    }
  }
}

TEST_CASE("add_noise shifts channel-time diagonals") {
  Fixture fx(testsup::standard_ten_machine());
  SelectionSet sel;
  sel.channels = {{0, Quantity::speed, 0.005}, {3, Quantity::speed, 0.002}};
  sel.times = grid(0.0, 0.5, 3);
  CovarianceBlock block = assemble(fx.ctx, sel, sel);

  CovarianceBlock clean = block;
  for (auto& c : clean.rows.channels) c.noise_std = 0.0;
  for (auto& c : clean.cols.channels) c.noise_std = 0.0;
  CovarianceBlock unchanged = add_noise(clean);
  CHECK((unchanged.values - clean.values).cwiseAbs().maxCoeff() == 0.0);

  CovarianceBlock noisy = add_noise(block);
  Eigen::MatrixXd diff = noisy.values - block.values;
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(diff(sel.flat(0, k), sel.flat(0, k)) == doctest::Approx(2.5e-5).epsilon(1e-12));
    CHECK(diff(sel.flat(1, k), sel.flat(1, k)) == doctest::Approx(4e-6).epsilon(1e-12));
  }
  CHECK(std::abs(diff.sum() - 3 * (2.5e-5 + 4e-6)) < 1e-14);

  // off-diagonal blocks cannot take noise
  SelectionSet other = sel;
  other.times = grid(10.0, 0.5, 3);
  CovarianceBlock off = assemble(fx.ctx, sel, other);
  CHECK_THROWS_AS(add_noise(off), ValidationError);
}

TEST_CASE("participation: symmetric pair, inertia scaling, orthogonality") {
  GridModel m = testsup::path_model(2, 1.0, 1.0, 0.5);
  EigenSpace space = eigenspace(m);
  Eigen::VectorXd p0 = participation(m, space, 0);
  Eigen::VectorXd p1 = participation(m, space, 1);
  CHECK(std::abs(p0[1]) == doctest::Approx(std::abs(p1[1])).epsilon(1e-12));
  CHECK(p0[1] * p1[1] < 0.0);

  // heavier machine participates less (M^-1/2 scaling)
  GridModel heavy = m;
  heavy.inertia[0] = 1e6;
  heavy.damping[0] = 0.5e6;
  EigenSpace hspace = eigenspace(heavy);
  CHECK(participation(heavy, hspace, 0).cwiseAbs().maxCoeff() < 1e-2);

  // inertia-weighted participation of any non-zero mode sums to zero
  GridModel uneven = testsup::path_model(4, 1.3, 0.5, 0.4);
  uneven.inertia << 0.3, 0.9, 0.5, 1.4;
  uneven.damping = 0.4 * uneven.inertia;
  EigenSpace uspace = eigenspace(uneven);
  for (int mode = 1; mode < 4; ++mode) {
    double acc = 0.0;
    for (int b = 0; b < 4; ++b) acc += uneven.inertia[b] * participation(uneven, uspace, b)[mode];
    CHECK(std::abs(acc) < 1e-10);
  }
}

TEST_CASE("factored form reconstructs the assembled block") {
  GridModel model = testsup::standard_ten_machine();
  BandSpec band;
  band.low_hz = 0.5;
  band.high_hz = 0.8;
  Fixture fx(model, band);
  REQUIRE(fx.space.n_retained() == 4);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 4);
  a.diagonal() << 1.0, 2.0, 0.5, 1.5;
  a(0, 1) = a(1, 0) = 0.3;
  fx.ctx.alpha = a;

  SelectionSet sel;
  for (int b : {0, 2, 5, 7, 9}) sel.channels.push_back({b, Quantity::speed, 0.0});
  sel.times = grid(0.0, 1.0 / 15.0, 10);

  CovarianceBlock direct = assemble(fx.ctx, sel, sel);
  FactoredCovariance fac = assemble_factored(fx.ctx, sel);
  Eigen::MatrixXd rebuilt = fac.b * fac.core * fac.b.transpose();
  CHECK((rebuilt - direct.values).norm() <= 1e-9 * direct.values.norm());

  // cross core against a different query selection
  SelectionSet query;
  query.channels = {{1, Quantity::speed, 0.0}};
  query.times = grid(0.2, 1.0 / 15.0, 4);
  FactoredCovariance qfac = assemble_factored(fx.ctx, query);
  Eigen::MatrixXd cross =
      factored_cross_core(fx.ctx, qfac.quantities, query.times, fac.quantities, sel.times);
  Eigen::MatrixXd sigma21 = qfac.b * cross * fac.b.transpose();
  CovarianceBlock direct21 = assemble(fx.ctx, query, sel);
  CHECK((sigma21 - direct21.values).norm() <= 1e-9 * direct21.values.norm());
}

TEST_CASE("joint blocks contain their marginals exactly") {
  Fixture fx(testsup::standard_ten_machine());
  SelectionSet joint;
  for (int b = 0; b < 4; ++b) joint.channels.push_back({b, Quantity::speed, 0.0});
  joint.times = grid(0.0, 0.2, 6);

  SelectionSet one_time = joint;
  one_time.times = {joint.times[2]};
  SelectionSet one_bus;
  one_bus.channels = {joint.channels[1]};
  one_bus.times = joint.times;

  CovarianceBlock big = assemble(fx.ctx, joint, joint);
  CovarianceBlock m_time = assemble(fx.ctx, one_time, one_time);
  CovarianceBlock m_bus = assemble(fx.ctx, one_bus, one_bus);

  for (std::size_t c1 = 0; c1 < 4; ++c1) {
    for (std::size_t c2 = 0; c2 < 4; ++c2) {
      CHECK(m_time.values(static_cast<Eigen::Index>(c1), static_cast<Eigen::Index>(c2)) ==
            big.values(joint.flat(c1, 2), joint.flat(c2, 2)));
    }
  }
  for (std::size_t k1 = 0; k1 < 6; ++k1) {
    for (std::size_t k2 = 0; k2 < 6; ++k2) {
      CHECK(m_bus.values(static_cast<Eigen::Index>(k1), static_cast<Eigen::Index>(k2)) ==
            big.values(joint.flat(1, k1), joint.flat(1, k2)));
    }
  }
}

TEST_CASE("cross-quantity blocks differentiate along the column time axis") {
  BandSpec band;
  band.low_hz = 0.5;
  band.high_hz = 0.8;
  Fixture fx(testsup::standard_ten_machine(), band);

  SelectionSet rows, cols;
  rows.channels = {{2, Quantity::angle, 0.0}};
  rows.times = {1.0};
  cols.channels = {{5, Quantity::speed, 0.0}};
  const double h = 1e-5;
  for (double t : {0.2, 0.6, 0.95}) {
    cols.times = {t};
    SelectionSet up, dn;
    up.channels = dn.channels = {{5, Quantity::angle, 0.0}};
    up.times = {t + h};
    dn.times = {t - h};
    const double fd = (assemble(fx.ctx, rows, up).values(0, 0) -
                       assemble(fx.ctx, rows, dn).values(0, 0)) /
                      (2.0 * h);
    const double direct = assemble(fx.ctx, rows, cols).values(0, 0);
    CHECK(direct == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("equal-time power and rocof demand a filter") {
  Fixture fx(testsup::standard_ten_machine());
  SelectionSet sel;
  sel.channels = {{0, Quantity::power, 0.0}};
  sel.times = {0.0, 0.5};
  CHECK_THROWS_WITH_AS(assemble(fx.ctx, sel, sel), doctest::Contains("filter"), ValidationError);

  SelectionSet rocof = sel;
  rocof.channels = {{0, Quantity::rocof, 0.0}};
  CHECK_THROWS_AS(assemble(fx.ctx, rocof, rocof), ValidationError);

  // distinct times are fine without a filter
  SelectionSet r = sel, c = sel;
  r.times = {0.5};
  c.times = {0.0};
  CHECK(std::isfinite(assemble(fx.ctx, r, c).values(0, 0)));
}

TEST_CASE("filtered conjugation equals the explicit zero-phase operator") {
  GridModel model = testsup::standard_ten_machine();
  BandSpec band;
  band.low_hz = 0.5;
  band.high_hz = 0.8;
  Fixture fx(model, band);
  FilterOperator f = toy_filter(41, 15.0, 0.5, 0.8);

  const double dt = 1.0 / 15.0;
  const int taps = f.num_taps();
  const int t_out = 9;
  const int margin = 59;  // >= taps for interior equality; t_ext > 3*taps
  const int t_ext = t_out + 2 * margin;

  // brute force: F K F^T with F built column-by-column from apply_zero_phase
  SignalFrame impulse;
  impulse.rate_hz = 15.0;
  impulse.channels = {{0, Quantity::speed, 0.0}};
  impulse.units = {"rad/s"};
  Eigen::MatrixXd f_op(t_ext, t_ext);
  for (int j = 0; j < t_ext; ++j) {
    impulse.samples = Eigen::MatrixXd::Zero(t_ext, 1);
    impulse.samples(j, 0) = 1.0;
    f_op.col(j) = apply_zero_phase(f, impulse).samples.col(0);
  }

  std::vector<double> ext_times = grid(0.0, dt, t_ext);
  SelectionSet speed_only, rocof_only;
  speed_only.channels = {{1, Quantity::speed, 0.0}};
  rocof_only.channels = {{6, Quantity::rocof, 0.0}};

  // pre-conjugation covariance on the extended grid, with the alpha/dt
  // white surrogate on the equal-time rocof diagonal
  Eigen::MatrixXd k_raw(2 * t_ext, 2 * t_ext);
  {
    speed_only.times = rocof_only.times = ext_times;
    Eigen::MatrixXd kss = assemble(fx.ctx, speed_only, speed_only).values;
    Eigen::MatrixXd ksr = assemble(fx.ctx, speed_only, rocof_only).values;
    Eigen::MatrixXd krr(t_ext, t_ext);
    for (int a = 0; a < t_ext; ++a) {
      for (int b = 0; b < t_ext; ++b) {
        if (a == b) continue;
        SelectionSet ra = rocof_only, cb = rocof_only;
        ra.times = {ext_times[static_cast<std::size_t>(a)]};
        cb.times = {ext_times[static_cast<std::size_t>(b)]};
        krr(a, b) = assemble(fx.ctx, ra, cb).values(0, 0);
      }
    }
    const EigenSpace& sp = fx.space;
    Eigen::VectorXd w6 = participation(model, sp, 6);
    double diag = 0.0;
    for (Eigen::Index i = 0; i < sp.n_retained(); ++i) {
      ExpMixKernel mi = quantity_mix(sp.eigvals[sp.retained[i]], sp.gamma, Quantity::rocof);
      for (Eigen::Index j = 0; j < sp.n_retained(); ++j) {
        ExpMixKernel mj = quantity_mix(sp.eigvals[sp.retained[j]], sp.gamma, Quantity::rocof);
        diag += w6[i] * w6[j] * fx.ctx.alpha(i, j) *
                (cross_corr(mi, mj, 0.0) + mi.feedthrough * mj.feedthrough / dt);
      }
    }
    for (int a = 0; a < t_ext; ++a) krr(a, a) = diag;
    k_raw.topLeftCorner(t_ext, t_ext) = kss;
    k_raw.topRightCorner(t_ext, t_ext) = ksr;
    k_raw.bottomLeftCorner(t_ext, t_ext) = ksr.transpose();
    k_raw.bottomRightCorner(t_ext, t_ext) = krr;
  }
  Eigen::MatrixXd f2 = Eigen::MatrixXd::Zero(2 * t_ext, 2 * t_ext);
  f2.topLeftCorner(t_ext, t_ext) = f_op;
  f2.bottomRightCorner(t_ext, t_ext) = f_op;
  Eigen::MatrixXd brute = f2 * k_raw * f2.transpose();

  // fast path: lag-domain conjugation on the interior window
  CovarianceContext fctx = fx.ctx;
  fctx.filter = f;
  SelectionSet inner;
  inner.channels = {{1, Quantity::speed, 0.0}, {6, Quantity::rocof, 0.0}};
  inner.times = grid(margin * dt, dt, t_out);
  CovarianceBlock fast = assemble(fctx, inner, inner);

  for (std::size_t c1 = 0; c1 < 2; ++c1) {
    for (std::size_t c2 = 0; c2 < 2; ++c2) {
      for (int a = 0; a < t_out; ++a) {
        for (int b = 0; b < t_out; ++b) {
          const double bf = brute(static_cast<Eigen::Index>(c1) * t_ext + margin + a,
                                  static_cast<Eigen::Index>(c2) * t_ext + margin + b);
          const double fp = fast.values(inner.flat(c1, static_cast<std::size_t>(a)),
                                        inner.flat(c2, static_cast<std::size_t>(b)));
          CHECK(fp == doctest::Approx(bf).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("filtered speed covariance matches simulated data") {
  // Monte-Carlo check of the whole chain: ambient runs, decimation,
  // zero-phase filtering, empirical covariance across two buses and lags.
  // The low-pass retains every mode, so the band reduction is exact and the
  // comparison isolates the conjugation itself.
  GridModel model = testsup::designer_model(
      {0.06, 0.10, 0.14, 0.18, 0.19, 0.53, 0.60, 0.68, 0.76}, 0.026525823848649224, 1.2);
  const double rate = 500.0 / 33.0;  // integer decimation of the 2 ms grid
  BandSpec band;
  band.low_hz = 0.0;
  band.high_hz = 2.0;
  band.transition_hz = 0.3;
  band.num_taps = 201;
  FilterOperator f = design(band, rate);

  EigenSpace space = eigenspace(model, band);
  REQUIRE(space.n_retained() == 10);
  CovarianceContext ctx;
  ctx.model = &model;
  ctx.space = &space;
  const double sigma = 0.1;
  // uniform inertia: alpha = sigma^2 m I over the retained modes
  ctx.alpha = sigma * sigma * model.inertia[0] *
              Eigen::MatrixXd::Identity(space.n_retained(), space.n_retained());
  ctx.filter = f;

  const std::vector<int> buses = {1, 7};
  const int n_lags = 8;
  Eigen::MatrixXd emp = Eigen::MatrixXd::Zero(2 * n_lags, 2 * n_lags);
  const int n_seeds = 32;
  for (int seed = 0; seed < n_seeds; ++seed) {
    Scenario s;
    s.kind = ScenarioKind::ambient;
    s.ambient_scale = sigma;
    s.duration = 900.0;
    s.sim_dt = 2e-3;
    s.seed = 500 + static_cast<std::uint64_t>(seed);
    SignalFrame truth = simulate(model, s, std::nullopt, 33);
    SignalFrame filt = apply_zero_phase(f, truth);
    const Eigen::Index c0 = filt.find_channel(buses[0], Quantity::speed);
    const Eigen::Index c1 = filt.find_channel(buses[1], Quantity::speed);
    const int edge = f.edge_samples();
    const Eigen::Index t_use = filt.n_samples() - 2 * edge - n_lags;
    for (int a = 0; a < n_lags; ++a) {
      for (int b = 0; b < n_lags; ++b) {
        const double inv = 1.0 / (static_cast<double>(t_use) * n_seeds);
        emp(a, b) += filt.samples.col(c0).segment(edge + a, t_use).dot(
                         filt.samples.col(c0).segment(edge + b, t_use)) * inv;
        emp(a, n_lags + b) += filt.samples.col(c0).segment(edge + a, t_use).dot(
                                  filt.samples.col(c1).segment(edge + b, t_use)) * inv;
        emp(n_lags + a, b) += filt.samples.col(c1).segment(edge + a, t_use).dot(
                                  filt.samples.col(c0).segment(edge + b, t_use)) * inv;
        emp(n_lags + a, n_lags + b) += filt.samples.col(c1).segment(edge + a, t_use).dot(
                                           filt.samples.col(c1).segment(edge + b, t_use)) * inv;
      }
    }
  }

  SelectionSet sel;
  sel.channels = {{buses[0], Quantity::speed, 0.0}, {buses[1], Quantity::speed, 0.0}};
  sel.times = grid(0.0, 1.0 / rate, n_lags);
  CovarianceBlock analytic = assemble(ctx, sel, sel);

  CHECK((emp - analytic.values).norm() <= 0.02 * analytic.values.norm());
}

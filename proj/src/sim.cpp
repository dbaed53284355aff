#include "rsfdi/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <random>
#include <thread>

#include <boost/random/normal_distribution.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "rsfdi/errors.hpp"

namespace rsfdi {

double FaultEvent::value(double t) const {
  if (t < onset) return 0.0;
  if (profile == FaultProfile::Step) return severity;
  return severity * std::min(1.0, (t - onset) / ramp_duration);
}

int Scenario::steps() const { return static_cast<int>(std::floor(horizon / dt + 1e-9)) + 1; }

Eigen::VectorXd Scenario::input(double t, int m) const {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(m);
  for (const auto& s : inputs) {
    if (s.t > t) break;
    for (int i = 0; i < m && i < s.u.size(); ++i) u(i) = s.u(i);
  }
  return u;
}

Scenario Scenario::healthy() const {
  Scenario h = *this;
  h.faults.clear();
  return h;
}

void Scenario::validate(int fault_count) const {
  if (!(dt > 0.0)) throw Error(ErrorCode::Validation, "dt must be positive");
  if (!(horizon > 0.0)) throw Error(ErrorCode::Validation, "horizon must be positive");
  for (const auto& f : faults) {
    if (f.onset < 0.0 || f.onset > horizon) throw Error(ErrorCode::Validation, "fault onset outside [0, T]");
    if (f.fault < 0 || f.fault >= fault_count) throw Error(ErrorCode::Validation, "fault index out of range");
    if (f.profile == FaultProfile::Ramp && !(f.ramp_duration > 0.0))
      throw Error(ErrorCode::Validation, "ramp duration must be positive");
  }
  for (double v : process_variance)
    if (v < 0.0) throw Error(ErrorCode::Validation, "negative process variance");
  for (double v : measurement_variance)
    if (v < 0.0) throw Error(ErrorCode::Validation, "negative measurement variance");
  for (std::size_t i = 1; i < inputs.size(); ++i)
    if (inputs[i].t < inputs[i - 1].t) throw Error(ErrorCode::Validation, "input table must be sorted by time");
}

double scalar_zoh_step(double lambda, double x, double w, double dt) {
  const double z = lambda * dt;
  double gamma;
  if (std::abs(z) < 1e-8)
    gamma = dt * (1.0 + z / 2.0 + z * z / 6.0);
  else
    gamma = std::expm1(z) / lambda;
  return x + gamma * (lambda * x + w);
}

namespace {

// Phi = e^{X dt}, Gamma = int_0^dt e^{X s} ds from one augmented exponential
void zoh_pair(const Eigen::MatrixXd& x, double dt, Eigen::MatrixXd& phi, Eigen::MatrixXd& gamma) {
  const int n = static_cast<int>(x.rows());
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = x * dt;
  aug.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n) * dt;
  Eigen::MatrixXd e = aug.exp();
  phi = e.topLeftCorner(n, n);
  gamma = e.topRightCorner(n, n);
}

double broadcast(const std::vector<double>& v, int i) {
  if (v.empty()) return 0.0;
  return v.size() == 1 ? v[0] : v.at(i);
}

struct PlantBlock {
  int offset;
  int dim;
  double lambda;          // 1x1 blocks
  Eigen::MatrixXd phi;    // larger blocks
  Eigen::MatrixXd gamma;
};

}  // namespace

SimulationResult simulate(const Model& m, const std::vector<DetectionFilter>& filters, const Scenario& sc,
                          const SimulationOptions& opt) {
  const RieszSpectralSystem& sys = *m.sys;
  const Truncation& tr = *m.tr;
  sc.validate(sys.fault_count());
  const int n = m.n();
  const int q = m.q();
  const int steps = sc.steps();
  const double dt = sc.dt;
  const int nin = sys.inputs();

  Eigen::MatrixXd B = tr.B(sys);
  Eigen::MatrixXd L = tr.L(sys);
  std::vector<PlantBlock> blocks;
  Eigen::VectorXd proc_sd(n);
  for (const auto& b : tr.blocks()) {
    PlantBlock pb{b.offset, b.dim, b.lambda.real(), {}, {}};
    if (b.dim > 1) zoh_pair(m.A.block(b.offset, b.offset, b.dim, b.dim), dt, pb.phi, pb.gamma);
    blocks.push_back(pb);
    proc_sd.segment(b.offset, b.dim).setConstant(std::sqrt(broadcast(sc.process_variance, b.family) * dt));
  }
  Eigen::VectorXd meas_sd(q);
  for (int j = 0; j < q; ++j) meas_sd(j) = std::sqrt(broadcast(sc.measurement_variance, j) * dt);

  // filter rows of the joint exponential of [[A, 0], [-E C, F]]
  struct FilterStep {
    Eigen::MatrixXd phi_x, phi_w, gam_x, gam_w;
    bool coupled;
  };
  std::vector<FilterStep> fs;
  for (const auto& f : filters) {
    const int nf = f.dim();
    FilterStep s;
    Eigen::MatrixXd ec = f.E * m.C;
    s.coupled = ec.size() > 0 && ec.cwiseAbs().maxCoeff() > 0.0;
    if (s.coupled) {
      Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(n + nf, n + nf);
      joint.topLeftCorner(n, n) = m.A;
      joint.bottomLeftCorner(nf, n) = -ec;
      joint.bottomRightCorner(nf, nf) = f.F;
      Eigen::MatrixXd phi, gam;
      zoh_pair(joint, dt, phi, gam);
      s.phi_x = phi.bottomLeftCorner(nf, n);
      s.phi_w = phi.bottomRightCorner(nf, nf);
      s.gam_x = gam.bottomLeftCorner(nf, n);
      s.gam_w = gam.bottomRightCorner(nf, nf);
    } else {
      zoh_pair(f.F, dt, s.phi_w, s.gam_w);
    }
    fs.push_back(std::move(s));
  }

  std::mt19937_64 rng(sc.seed);
  boost::random::normal_distribution<double> normal(0.0, 1.0);

  SimulationResult res;
  res.seed = sc.seed;
  res.time.resize(steps);
  res.y.resize(steps, q);
  res.residual.resize(steps, filters.size());
  if (opt.keep_state) res.state.resize(steps, n);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::VectorXd> w(filters.size());
  for (std::size_t i = 0; i < filters.size(); ++i) w[i] = Eigen::VectorXd::Zero(filters[i].dim());
  Eigen::VectorXd fvals(sys.fault_count());
  Eigen::VectorXd force(n), xn(n), v(q);

  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    res.time[k] = t;
    for (int j = 0; j < q; ++j) v(j) = meas_sd(j) > 0.0 ? meas_sd(j) * normal(rng) : 0.0;
    Eigen::VectorXd y = m.C * x + v;
    res.y.row(k) = y.transpose();
    for (std::size_t i = 0; i < filters.size(); ++i)
      res.residual(k, i) = (filters[i].H * y - filters[i].M * w[i]).norm();
    if (opt.keep_state) res.state.row(k) = x.transpose();
    if (k + 1 == steps) break;

    Eigen::VectorXd u = sc.input(t, nin);
    fvals.setZero();
    for (const auto& e : sc.faults) fvals(e.fault) += e.value(t);
    force = B * u + L * fvals;
    for (int c = 0; c < n; ++c)
      if (proc_sd(c) > 0.0) force(c) += proc_sd(c) * normal(rng);

    for (std::size_t i = 0; i < filters.size(); ++i) {
      const auto& f = filters[i];
      // y is held over the step only through its noise; C x is propagated exactly
      Eigen::VectorXd fw = f.G * u - f.E * v;
      Eigen::VectorXd next = fs[i].phi_w * w[i] + fs[i].gam_w * fw;
      if (fs[i].coupled) next += fs[i].phi_x * x + fs[i].gam_x * force;
      w[i] = next;
    }
    for (const auto& b : blocks) {
      if (b.dim == 1)
        xn(b.offset) = scalar_zoh_step(b.lambda, x(b.offset), force(b.offset), dt);
      else
        xn.segment(b.offset, b.dim) = b.phi * x.segment(b.offset, b.dim) + b.gamma * force.segment(b.offset, b.dim);
    }
    x = xn;
    if (k % 64 == 0 && !x.allFinite())
      throw Error(ErrorCode::Nonfinite, "state overflow at t = " + std::to_string(t));
  }
  if (!x.allFinite() || !res.residual.allFinite()) throw Error(ErrorCode::Nonfinite, "nonfinite trace");
  return res;
}

ThresholdSet monte_carlo_thresholds(const Model& m, const std::vector<DetectionFilter>& filters, const Scenario& sc,
                                    int runs, std::uint64_t base_seed, int jobs) {
  if (runs < 1) throw Error(ErrorCode::Validation, "need at least one Monte Carlo run");
  ThresholdSet ts;
  ts.runs = runs;
  ts.threshold.assign(filters.size(), 0.0);
  for (int r = 0; r < runs; ++r) ts.seeds.push_back(base_seed + r);
  std::vector<Eigen::VectorXd> peaks(runs);
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (int r = next++; r < runs; r = next++) {
      try {
        Scenario h = sc.healthy();
        h.seed = ts.seeds[r];
        SimulationResult s = simulate(m, filters, h);
        peaks[r] = s.residual.colwise().maxCoeff().transpose();
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  jobs = std::max(1, std::min(jobs, runs));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  for (const auto& p : peaks)
    for (int i = 0; i < p.size(); ++i) ts.threshold[i] = std::max(ts.threshold[i], p(i));
  return ts;
}

int first_persistent_crossing(const Eigen::VectorXd& series, double th, int n_persist) {
  int run = 0;
  for (int k = 0; k < series.size(); ++k) {
    run = series(k) > th ? run + 1 : 0;
    if (run >= n_persist) return k - n_persist + 1;
  }
  return -1;
}

DecisionTable detect(const SimulationResult& trace, const std::vector<double>& thresholds,
                     const std::vector<DetectionFilter>& filters, const Scenario& sc, int n_persist) {
  if (thresholds.size() != static_cast<std::size_t>(trace.residual.cols()))
    throw Error(ErrorCode::Validation, "thresholds and residual traces are not aligned");
  DecisionTable table;
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < trace.residual.cols(); ++i) {
    Detection d;
    d.filter = i;
    d.fault = i < static_cast<int>(filters.size()) ? filters[i].fault : i;
    int k = first_persistent_crossing(trace.residual.col(i), thresholds[i], n_persist);
    if (k >= 0) {
      d.time = trace.time[k];
      order.push_back({*d.time, i});
      for (const auto& e : sc.faults)
        if (e.fault == d.fault) d.delay = *d.time - e.onset;
    }
    table.rows.push_back(d);
  }
  std::sort(order.begin(), order.end());
  for (auto& [t, i] : order) table.fired.push_back(i);
  return table;
}

}  // namespace rsfdi

#include "spatialvb/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "spatialvb/format.hpp"
#include "spatialvb/samplers.hpp"

namespace spatialvb {

namespace {

constexpr const char* kVersion = "0.1.0";

Json vec_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

Dataset simulate_dataset(const SimConfig& cfg) {
  SimulatedSem sim = simulate_sem(cfg);
  MissingPattern pattern;
  std::optional<Matrix> x_star;
  std::optional<Vector> psi;
  Mechanism mech = Mechanism::kMar;
  if (const auto* mar = std::get_if<MarMechanism>(&cfg.mechanism)) {
    pattern = generate_mar(sim.y, mar->missing_fraction, cfg.seed + 1);
  } else {
    const auto& mn = std::get<MnarMechanism>(cfg.mechanism);
    mech = Mechanism::kMnar;
    SelectionModel sel{Vector(2), mn.psi_y, selection_design(sim.x, mn.covariate_index)};
    sel.psi_x << mn.psi_0, mn.psi_xstar;
    pattern = generate_mnar(sim.y, sel, cfg.seed + 1);
    if (pattern.n_u() == 0 || pattern.n_o() == 0) {
      throw InvalidArgument("simulated MNAR pattern has no missing or no observed unit");
    }
    x_star = sel.x_star;
    psi = Vector(3);
    *psi << mn.psi_0, mn.psi_xstar, mn.psi_y;
  }
  Vector y = sim.y;
  for (Index i : pattern.unobserved()) y(i) = std::numeric_limits<double>::quiet_NaN();
  return Dataset{std::move(y), std::move(sim.x), std::move(sim.w), std::move(pattern),
                 std::move(x_star), sim.y, mech, sim.truth, std::move(psi), cfg};
}

OlsFit ols_observed(const Matrix& x, const Vector& y, const MissingPattern& pattern) {
  const Matrix xo = gather_rows(x, pattern.observed());
  const Vector yo = gather(y, pattern.observed());
  const Index df = xo.rows() - xo.cols();
  if (df < 1) throw InvalidArgument("OLS needs more observed units than regressors");
  Eigen::ColPivHouseholderQR<Matrix> qr(xo);
  if (qr.rank() < xo.cols()) throw InvalidArgument("observed design matrix is rank deficient");
  OlsFit fit;
  fit.beta = qr.solve(yo);
  fit.sigma2 = (yo - xo * fit.beta).squaredNorm() / static_cast<double>(df);
  if (!(fit.sigma2 > 0.0)) throw InvalidArgument("OLS residual variance is zero");
  return fit;
}

Vector initial_theta(const TargetDensity& target, const OlsFit& ols, double rho0, double psi0) {
  const ThetaLayout& layout = target.layout();
  const UnconstrainedSemParams u = to_unconstrained(SemParams{ols.beta, ols.sigma2, rho0});
  if (layout.mechanism == Mechanism::kMnar) {
    const Vector psi_x = Vector::Constant(layout.n_psi_x, psi0);
    return layout.pack(u, &psi_x, psi0);
  }
  return layout.pack(u);
}

namespace {

Json acceptance_json(const std::vector<AcceptanceCounter>& acc) {
  Json a = Json::array();
  for (const auto& c : acc) {
    a.push_back({{"proposed", c.proposed}, {"accepted", c.accepted}, {"rate", c.rate()}});
  }
  return a;
}

std::unique_ptr<MissingSampler> make_sampler(const TargetDensity& target, Method method,
                                             const SamplerConfig& sc, Json& tuning) {
  SamplerSettings s;
  s.n1 = sc.resolved_n1(method);
  s.k_prime = sc.k_prime;
  s.warm_start = sc.warm_start;
  s.partition_seed = sc.partition_seed;
  const Index n_u = target.pattern().n_u();
  tuning["warm_start"] = sc.warm_start;
  switch (method) {
    case Method::kHvbNob:
      if (target.mechanism() == Mechanism::kMar) {
        tuning["sampler"] = "direct";
        return std::make_unique<DirectMarSampler>(target);
      }
      tuning["sampler"] = "nob";
      tuning["n1"] = s.n1;
      return std::make_unique<MnarNoBlockSampler>(target, s);
    case Method::kHvbG: {
      const Index k_star = sc.block_size > 0 ? std::min(sc.block_size, n_u) : default_block_size_mar(n_u);
      BlockPartition part = make_blocks(target.pattern(), k_star, sc.partition_seed);
      tuning["sampler"] = "gibbs";
      tuning["n1"] = s.n1;
      tuning["block_size"] = k_star;
      tuning["k"] = part.k();
      return std::make_unique<GibbsMarSampler>(target, part, s);
    }
    case Method::kHvbAllB:
    case Method::kHvb3B: {
      const Index k_star =
          sc.block_size > 0 ? std::min(sc.block_size, n_u) : default_block_size_mnar(n_u);
      BlockPartition part = make_blocks(target.pattern(), k_star, sc.partition_seed);
      const bool all = method == Method::kHvbAllB;
      tuning["sampler"] = all ? "allb" : "randomb";
      tuning["n1"] = s.n1;
      tuning["block_size"] = k_star;
      tuning["k"] = part.k();
      if (!all) {
        if (s.k_prime > part.k()) {
          throw UsageError("k_prime = " + std::to_string(s.k_prime) + " exceeds the " +
                           std::to_string(part.k()) + " available blocks");
        }
        tuning["k_prime"] = s.k_prime;
      }
      return std::make_unique<MnarBlockSampler>(
          target, part, all ? BlockScheme::kAll : BlockScheme::kRandom, s);
    }
    default:
      throw InvalidArgument("not a hybrid VB method");
  }
}

}  // namespace

RunOutcome run_method(const Dataset& data, const RunConfig& cfg, std::uint64_t seed) {
  if (!data.mechanism) throw UsageError("dataset has no missing-data mechanism");
  const Mechanism mech = *data.mechanism;
  check_compatible(cfg.method, mech);
  if (data.pattern.n_u() == 0 && cfg.method != Method::kJvb && cfg.method != Method::kHvbNob &&
      cfg.method != Method::kHmc) {
    throw UsageError("block samplers need at least one missing response");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const TargetDensity target(mech, data.sem_data(), cfg.priors, cfg.precision.to_options(seed));
  RunOutcome out;
  out.method = cfg.method;
  out.mechanism = mech;
  out.seed = seed;
  out.theta_names = target.layout().names();
  out.missing_units = data.pattern.unobserved();
  out.tuning = Json::object();
  out.tuning["logdet"] = to_string(target.precision().method());

  const OlsFit ols = ols_observed(data.x, data.sem_data().y, data.pattern);
  const Vector theta0 = initial_theta(target, ols);
  Rng rng(seed);
  BlockConditionals full(target);
  const Vector y_u0 = draw_mar_conditional(full, theta0, rng);
  const Index s = target.dim_theta();

  if (cfg.method == Method::kHmc) {
    const HmcConfig hc = cfg.hmc.to_config();
    HmcResult res = hmc_run(target, hc, theta0, y_u0, rng);
    const Index nd = res.draws.rows();
    Matrix cons(nd, s);
    for (Index i = 0; i < nd; ++i) {
      cons.row(i) = target.constrain(res.draws.row(i).head(s).transpose()).transpose();
    }
    const auto names = target.constrained_names();
    auto col_sd = [](const Matrix& m, Index j) {
      const double mu = m.col(j).mean();
      return std::sqrt((m.col(j).array() - mu).square().sum() / static_cast<double>(m.rows() - 1));
    };
    for (Index j = 0; j < s; ++j) out.theta.push_back({names[j], cons.col(j).mean(), col_sd(cons, j)});
    const Index nu = target.dim_missing();
    out.y_u_mean.resize(nu);
    out.y_u_sd.resize(nu);
    for (Index k = 0; k < nu; ++k) {
      out.y_u_mean(k) = res.draws.col(s + k).mean();
      out.y_u_sd(k) = col_sd(res.draws, s + k);
    }
    out.tuning["n_samples"] = hc.n_samples;
    out.tuning["burn_in"] = hc.burn_in;
    out.tuning["leapfrog_steps"] = res.leapfrog_steps;
    out.tuning["step_size"] = res.step_size;
    out.tuning["adapt_mass"] = hc.adapt_mass;
    out.tuning["acceptance_rate"] = res.acceptance_rate;
    out.tuning["nonfinite"] = res.nonfinite;
    if (res.acceptance_rate < 0.2) {
      out.warnings.push_back("HMC acceptance rate " + std::to_string(res.acceptance_rate) +
                             " is low; consider a smaller step size");
    }
    out.hmc = std::move(res);
  } else {
    FitOptions fo = cfg.vb;
    out.tuning["factors"] = fo.factors;
    out.tuning["iterations"] = fo.iterations;
    out.tuning["draws_per_iteration"] = fo.draws_per_iteration;
    FitResult fit;
    if (cfg.method == Method::kJvb) {
      Vector mu(s + y_u0.size());
      mu << theta0, y_u0;
      fo.factors = std::min<Index>(fo.factors, mu.size());
      const VParams vp0 = VParams::init(mu, fo.factors, fo.b_init, fo.d_init);
      fit = jvb_fit(target, vp0, fo, rng);
    } else {
      auto sampler = make_sampler(target, cfg.method, cfg.sampler, out.tuning);
      fo.factors = std::min<Index>(fo.factors, s);
      const VParams vp0 = VParams::init(theta0, fo.factors, fo.b_init, fo.d_init);
      fit = hvb_fit(target, vp0, *sampler, fo, rng);
      fit.method = to_string(cfg.method);
      if (!fit.acceptance.empty()) out.tuning["acceptance"] = acceptance_json(fit.acceptance);
    }
    out.theta = fit.theta;
    out.y_u_mean = fit.y_u_mean;
    out.y_u_sd = fit.y_u_sd;
    out.warnings = fit.warnings;
    out.flagged = fit.flagged;
    out.vb = std::move(fit);
  }
  if (data.y_full && out.y_u_mean.size() > 0) {
    const Vector truth = gather(*data.y_full, out.missing_units);
    out.mse_missing = (out.y_u_mean - truth).squaredNorm() / static_cast<double>(truth.size());
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

Json outcome_to_json(const RunOutcome& out, const Dataset& data) {
  Json j;
  j["method"] = to_string(out.method);
  j["mechanism"] = to_string(out.mechanism);
  j["seed"] = out.seed;
  j["n"] = data.x.rows();
  j["n_u"] = data.pattern.n_u();
  j["dataset"] = data.fingerprint();
  Json th = Json::array();
  for (const auto& p : out.theta) th.push_back({{"name", p.name}, {"mean", p.mean}, {"sd", p.sd}});
  j["theta"] = th;
  if (out.vb) {
    const FitResult& f = *out.vb;
    j["elbo_kind"] = f.elbo_is_proxy ? "proxy" : "elbo";
    Json mu = Json::object();
    for (std::size_t k = 0; k < out.theta_names.size(); ++k) {
      mu[out.theta_names[k]] = f.theta_mean_unconstrained(static_cast<Index>(k));
    }
    j["theta_unconstrained_mean"] = mu;
    j["iterations"] = f.iterations;
    j["skipped"] = f.skipped;
    j["clipped"] = f.clipped;
    const auto smooth = moving_average(f.elbo_trace, 500);
    const std::size_t m = std::min<std::size_t>(1000, smooth.size());
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      first += smooth[i];
      last += smooth[smooth.size() - m + i];
    }
    j["diagnostics"] = {{"smoothed_elbo_first1000", first / static_cast<double>(m)},
                        {"smoothed_elbo_last1000", last / static_cast<double>(m)},
                        {"max_abs_trajectory_slope_last2000", max_abs_slope(f.mean_trajectory, 2000)}};
  } else {
    j["elbo_kind"] = nullptr;
  }
  j["flagged"] = out.flagged;
  j["warnings"] = out.warnings;
  j["tuning"] = out.tuning;
  j["seconds"] = out.seconds;
  j["mse_missing"] = out.mse_missing ? Json(*out.mse_missing) : Json(nullptr);
  if (data.truth) {
    Json t;
    t["beta"] = vec_json(data.truth->beta);
    t["sigma2_y"] = data.truth->sigma2_y;
    t["rho"] = data.truth->rho;
    if (data.truth_psi) t["psi"] = vec_json(*data.truth_psi);
    j["truth"] = t;
  }
  return j;
}

void write_run_artifacts(const std::filesystem::path& dir, const RunOutcome& out,
                         const Dataset& data, const RunConfig& cfg) {
  ensure_directory(dir);
  std::vector<std::string> files = {"summary.json", "missing_posterior.csv"};
  write_text(dir / "summary.json", outcome_to_json(out, data).dump(2) + "\n");

  Matrix miss(static_cast<Index>(out.missing_units.size()), 3);
  for (Index k = 0; k < miss.rows(); ++k) {
    miss(k, 0) = static_cast<double>(out.missing_units[k]);
    miss(k, 1) = out.y_u_mean(k);
    miss(k, 2) = out.y_u_sd(k);
  }
  write_csv(dir / "missing_posterior.csv", {"index", "mean", "sd"}, miss);

  if (out.vb) {
    const FitResult& f = *out.vb;
    Matrix trace(static_cast<Index>(f.elbo_trace.size()), 2);
    for (Index t = 0; t < trace.rows(); ++t) {
      trace(t, 0) = static_cast<double>(t + 1);
      trace(t, 1) = f.elbo_trace[t];
    }
    write_csv(dir / "elbo_trace.csv", {"iteration", f.elbo_is_proxy ? "value_proxy" : "value"}, trace);
    Matrix traj(f.mean_trajectory.rows(), f.mean_trajectory.cols() + 1);
    for (Index t = 0; t < traj.rows(); ++t) traj(t, 0) = static_cast<double>(t + 1);
    traj.rightCols(f.mean_trajectory.cols()) = f.mean_trajectory;
    std::vector<std::string> header = {"iteration"};
    header.insert(header.end(), out.theta_names.begin(), out.theta_names.end());
    write_csv(dir / "mean_trajectory.csv", header, traj);
    files.push_back("elbo_trace.csv");
    files.push_back("mean_trajectory.csv");
  }
  if (out.hmc) {
    std::vector<std::string> header = out.theta_names;
    for (Index u : out.missing_units) header.push_back("y_u_" + std::to_string(u));
    write_csv(dir / "chain.csv", header, out.hmc->draws);
    files.push_back("chain.csv");
  }

  const std::string cfg_text = run_config_to_json(cfg).dump();
  Json manifest;
  manifest["software"] = "spatialvb";
  manifest["version"] = kVersion;
  manifest["command"] = "fit";
  manifest["seed"] = out.seed;
  manifest["config_hash"] = hex64(fingerprint(cfg_text));
  manifest["dataset"] = data.fingerprint();
  manifest["config"] = run_config_to_json(cfg);
  manifest["files"] = files;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::string ComparisonTable::render() const {
  auto cell = [](double mean, double sd) {
    if (std::isnan(mean)) return std::string("-");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f (%.4f)", mean, sd);
    return std::string(buf);
  };
  std::size_t w0 = 9;
  for (const auto& p : parameters) w0 = std::max(w0, p.size());
  std::vector<std::size_t> widths;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::size_t w = methods[m].size();
    for (std::size_t p = 0; p < parameters.size(); ++p) {
      w = std::max(w, cell(cells[p][m].first, cells[p][m].second).size());
    }
    widths.push_back(w);
  }
  std::ostringstream os;
  auto pad = [&](const std::string& s, std::size_t w) {
    os << s << std::string(w > s.size() ? w - s.size() : 0, ' ');
  };
  pad("parameter", w0);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    os << "  ";
    pad(methods[m], widths[m]);
  }
  os << '\n';
  for (std::size_t p = 0; p < parameters.size(); ++p) {
    pad(parameters[p], w0);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      os << "  ";
      pad(cell(cells[p][m].first, cells[p][m].second), widths[m]);
    }
    os << '\n';
  }
  bool any_mse = false;
  for (const auto& v : mse) any_mse = any_mse || v.has_value();
  if (any_mse) {
    pad("MSE(y_u)", w0);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      os << "  ";
      char buf[32];
      if (mse[m]) {
        std::snprintf(buf, sizeof(buf), "%.4f", *mse[m]);
      } else {
        std::snprintf(buf, sizeof(buf), "-");
      }
      pad(buf, widths[m]);
    }
    os << '\n';
  }
  return os.str();
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream os;
  os << "parameter";
  for (const auto& m : methods) os << ',' << m << "_mean," << m << "_sd";
  os << '\n';
  auto num = [](double v) { return std::isnan(v) ? std::string(kNaToken) : format_real(v); };
  for (std::size_t p = 0; p < parameters.size(); ++p) {
    os << parameters[p];
    for (std::size_t m = 0; m < methods.size(); ++m) {
      os << ',' << num(cells[p][m].first) << ',' << num(cells[p][m].second);
    }
    os << '\n';
  }
  os << "mse_missing";
  for (const auto& v : mse) os << ',' << (v ? format_real(*v) : std::string(kNaToken)) << ',' << kNaToken;
  os << '\n';
  return os.str();
}

ComparisonTable compare_fits(const std::vector<std::filesystem::path>& dirs,
                             const std::optional<std::filesystem::path>& truth_dir) {
  if (dirs.size() < 2) throw UsageError("compare needs at least two completed fits");
  std::optional<Vector> y_full;
  if (truth_dir) {
    const CsvTable t = read_csv(*truth_dir / "y_full.csv", false);
    if (t.values.cols() != 1) throw IoError("y_full.csv must have one column");
    y_full = t.values.col(0);
  }
  ComparisonTable table;
  std::string dataset;
  std::map<std::string, std::size_t> param_index;
  std::vector<std::map<std::string, std::pair<double, double>>> per_method;
  for (const auto& dir : dirs) {
    Json s;
    try {
      s = Json::parse(read_text(dir / "summary.json"));
    } catch (const nlohmann::json::exception& e) {
      throw IoError((dir / "summary.json").string() + " is not valid JSON: " + e.what());
    }
    const std::string fp = s.at("dataset").get<std::string>();
    if (dataset.empty()) {
      dataset = fp;
    } else if (fp != dataset) {
      throw UsageError("fit " + dir.string() + " was run on a different dataset");
    }
    std::string label = s.at("method").get<std::string>();
    for (const auto& m : table.methods) {
      if (m == label) label += "[" + dir.filename().string() + "]";
    }
    table.methods.push_back(label);
    std::map<std::string, std::pair<double, double>> cells;
    for (const auto& p : s.at("theta")) {
      const std::string name = p.at("name").get<std::string>();
      if (!param_index.count(name)) {
        param_index[name] = table.parameters.size();
        table.parameters.push_back(name);
      }
      cells[name] = {p.at("mean").get<double>(), p.at("sd").get<double>()};
    }
    per_method.push_back(std::move(cells));
    if (y_full) {
      const CsvTable mp = read_csv(dir / "missing_posterior.csv", false);
      if (mp.values.rows() == 0) {
        table.mse.emplace_back(std::nullopt);
      } else {
        double acc = 0.0;
        for (Index k = 0; k < mp.values.rows(); ++k) {
          const auto unit = static_cast<Index>(mp.values(k, 0));
          if (unit < 0 || unit >= y_full->size()) throw IoError("missing_posterior index out of range");
          const double e = mp.values(k, 1) - (*y_full)(unit);
          acc += e * e;
        }
        table.mse.emplace_back(acc / static_cast<double>(mp.values.rows()));
      }
    } else if (s.contains("mse_missing") && !s["mse_missing"].is_null()) {
      table.mse.emplace_back(s["mse_missing"].get<double>());
    } else {
      table.mse.emplace_back(std::nullopt);
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  table.cells.assign(table.parameters.size(),
                     std::vector<std::pair<double, double>>(table.methods.size(), {nan, nan}));
  for (std::size_t m = 0; m < per_method.size(); ++m) {
    for (const auto& [name, v] : per_method[m]) table.cells[param_index[name]][m] = v;
  }
  return table;
}

}  // namespace spatialvb

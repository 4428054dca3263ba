#include "spatialvb/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace spatialvb {

const char* to_string(Method m) {
  switch (m) {
    case Method::kJvb:
      return "jvb";
    case Method::kHvbNob:
      return "hvb-nob";
    case Method::kHvbG:
      return "hvb-g";
    case Method::kHvbAllB:
      return "hvb-allb";
    case Method::kHvb3B:
      return "hvb-3b";
    case Method::kHmc:
      return "hmc";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kJvb, Method::kHvbNob, Method::kHvbG, Method::kHvbAllB, Method::kHvb3B,
                   Method::kHmc}) {
    if (s == to_string(m)) return m;
  }
  throw UsageError("unknown method '" + s + "' (expected jvb, hvb-nob, hvb-g, hvb-allb, hvb-3b or hmc)");
}

void check_compatible(Method method, Mechanism mechanism) {
  if (method == Method::kHvbG && mechanism != Mechanism::kMar) {
    throw UsageError("method hvb-g requires MAR missingness");
  }
  if ((method == Method::kHvbAllB || method == Method::kHvb3B) && mechanism != Mechanism::kMnar) {
    throw UsageError(std::string("method ") + to_string(method) + " requires MNAR missingness");
  }
}

int SamplerConfig::resolved_n1(Method method) const {
  if (n1 > 0) return n1;
  return method == Method::kHvbG ? 5 : 10;
}

std::filesystem::path DataPaths::resolve(const std::filesystem::path& explicit_path,
                                         const char* default_name) const {
  if (!explicit_path.empty()) return explicit_path;
  return dir / default_name;
}

HmcConfig HmcSettings::to_config() const {
  HmcConfig c;
  c.n_samples = n_samples;
  c.leapfrog_steps = leapfrog_steps;
  c.step_size = step_size;
  c.burn_in = burn_in;
  c.tune_step_size = tune_step_size;
  c.pilot_iterations = pilot_iterations;
  c.adapt_mass = adapt_mass;
  c.adapt_iterations = adapt_iterations;
  return c;
}

PrecisionModel::Options PrecisionSettings::to_options(std::uint64_t seed) const {
  PrecisionModel::Options o;
  o.method = logdet;
  o.exact_trace_limit = exact_trace_limit;
  o.hutchinson_probes = hutchinson_probes;
  o.probe_seed = seed;
  return o;
}

const char* to_string(LogDetMethod m) {
  switch (m) {
    case LogDetMethod::kAuto:
      return "auto";
    case LogDetMethod::kSpectrum:
      return "spectrum";
    case LogDetMethod::kSparseCholesky:
      return "cholesky";
    case LogDetMethod::kHutchinson:
      return "hutchinson";
  }
  return "?";
}

LogDetMethod logdet_method_from_string(const std::string& s) {
  for (LogDetMethod m : {LogDetMethod::kAuto, LogDetMethod::kSpectrum,
                         LogDetMethod::kSparseCholesky, LogDetMethod::kHutchinson}) {
    if (s == to_string(m)) return m;
  }
  throw UsageError("unknown log-determinant method '" + s + "'");
}

void RunConfig::validate(Command cmd) const {
  if (jobs < 1) throw UsageError("jobs must be at least 1");
  if (replicates < 1) throw UsageError("replicates must be at least 1");
  switch (cmd) {
    case Command::kSimulate:
      if (!simulation) throw UsageError("simulate needs a \"simulation\" section");
      simulation->validate();
      break;
    case Command::kFit: {
      if (simulation.has_value() == data.has_value()) {
        throw UsageError("fit needs exactly one of \"simulation\" or \"data\"");
      }
      if (simulation) simulation->validate();
      if (data && replicates > 1) {
        throw UsageError("replicates > 1 needs a \"simulation\" section (each replicate re-simulates)");
      }
      priors.validate();
      if (method == Method::kHmc) {
        hmc.to_config().validate(0);
      } else {
        vb.validate();
      }
      if (sampler.n1 < 0 || sampler.block_size < 0 || sampler.k_prime < 1) {
        throw UsageError("sampler: n1 and block_size must be >= 0 (0 = default), k_prime >= 1");
      }
      std::optional<Mechanism> mech = mechanism;
      if (simulation) {
        const Mechanism sim_mech = std::holds_alternative<MarMechanism>(simulation->mechanism)
                                       ? Mechanism::kMar
                                       : Mechanism::kMnar;
        if (mech && *mech != sim_mech) {
          throw UsageError("\"mechanism\" disagrees with the simulation mechanism");
        }
        mech = sim_mech;
      }
      if (mech) check_compatible(method, *mech);
      break;
    }
    case Command::kCompare:
      if (compare_fits.size() < 2) throw UsageError("compare needs at least two fit directories");
      break;
  }
}

namespace {

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const Json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw UsageError(std::string(where) + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw UsageError(std::string("unknown key '") + k + "' in " + where);
  }
}

Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector vector_from_json(const Json& a) {
  if (!a.is_array()) throw UsageError("expected a JSON array of numbers");
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Index>(i)) = a[i].get<double>();
  return v;
}

}  // namespace

Json sim_config_to_json(const SimConfig& cfg) {
  Json j;
  j["side"] = cfg.side;
  j["r"] = cfg.r;
  j["beta_true"] = cfg.beta_true ? vector_to_json(*cfg.beta_true) : Json(nullptr);
  j["sigma2_true"] = cfg.sigma2_true;
  j["rho_true"] = cfg.rho_true;
  if (const auto* mar = std::get_if<MarMechanism>(&cfg.mechanism)) {
    j["mechanism"] = {{"type", "MAR"}, {"missing_fraction", mar->missing_fraction}};
  } else {
    const auto& mn = std::get<MnarMechanism>(cfg.mechanism);
    j["mechanism"] = {{"type", "MNAR"},
                      {"psi_0", mn.psi_0},
                      {"psi_xstar", mn.psi_xstar},
                      {"psi_y", mn.psi_y},
                      {"covariate_index", mn.covariate_index}};
  }
  j["seed"] = cfg.seed;
  return j;
}

SimConfig sim_config_from_json(const Json& j) {
  check_keys(j, "simulation",
             {"side", "r", "beta_true", "sigma2_true", "rho_true", "mechanism", "seed"});
  SimConfig cfg;
  read_opt(j, "side", cfg.side);
  read_opt(j, "r", cfg.r);
  if (j.contains("beta_true") && !j.at("beta_true").is_null()) {
    cfg.beta_true = vector_from_json(j.at("beta_true"));
  }
  read_opt(j, "sigma2_true", cfg.sigma2_true);
  read_opt(j, "rho_true", cfg.rho_true);
  read_opt(j, "seed", cfg.seed);
  if (j.contains("mechanism")) {
    const Json& m = j.at("mechanism");
    const std::string type = m.at("type").get<std::string>();
    if (type == "MAR") {
      check_keys(m, "simulation.mechanism", {"type", "missing_fraction"});
      MarMechanism mar;
      read_opt(m, "missing_fraction", mar.missing_fraction);
      cfg.mechanism = mar;
    } else if (type == "MNAR") {
      check_keys(m, "simulation.mechanism",
                 {"type", "psi_0", "psi_xstar", "psi_y", "covariate_index"});
      MnarMechanism mn;
      read_opt(m, "psi_0", mn.psi_0);
      read_opt(m, "psi_xstar", mn.psi_xstar);
      read_opt(m, "psi_y", mn.psi_y);
      read_opt(m, "covariate_index", mn.covariate_index);
      cfg.mechanism = mn;
    } else {
      throw UsageError("simulation.mechanism.type must be MAR or MNAR");
    }
  }
  return cfg;
}

Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["out"] = c.out.string();
  j["jobs"] = c.jobs;
  j["replicates"] = c.replicates;
  if (c.simulation) j["simulation"] = sim_config_to_json(*c.simulation);
  if (c.data) {
    const DataPaths& d = *c.data;
    Json dj;
    dj["dir"] = d.dir.string();
    dj["y"] = d.resolve(d.y, "y.csv").string();
    dj["X"] = d.resolve(d.x, "X.csv").string();
    dj["W"] = d.resolve(d.w, "W.txt").string();
    dj["Xstar"] = d.resolve(d.x_star, "Xstar.csv").string();
    dj["y_full"] = d.resolve(d.y_full, "y_full.csv").string();
    dj["truth"] = d.resolve(d.truth, "truth.json").string();
    j["data"] = dj;
  }
  j["mechanism"] = c.mechanism ? Json(to_string(*c.mechanism)) : Json(nullptr);
  j["method"] = to_string(c.method);
  j["vb"] = {{"iterations", c.vb.iterations},
             {"factors", c.vb.factors},
             {"draws_per_iteration", c.vb.draws_per_iteration},
             {"clip", c.vb.clip},
             {"upsilon", c.vb.upsilon},
             {"alpha", c.vb.alpha},
             {"b_init", c.vb.b_init},
             {"d_init", c.vb.d_init},
             {"summary_draws", c.vb.summary_draws},
             {"summary_window", c.vb.summary_window}};
  j["sampler"] = {{"n1", c.sampler.resolved_n1(c.method)},
                  {"block_size", c.sampler.block_size},
                  {"k_prime", c.sampler.k_prime},
                  {"warm_start", c.sampler.warm_start},
                  {"partition_seed", c.sampler.partition_seed}};
  j["hmc"] = {{"n_samples", c.hmc.n_samples},
              {"leapfrog_steps", c.hmc.leapfrog_steps},
              {"step_size", c.hmc.step_size},
              {"burn_in", c.hmc.burn_in},
              {"tune_step_size", c.hmc.tune_step_size},
              {"pilot_iterations", c.hmc.pilot_iterations},
              {"adapt_mass", c.hmc.adapt_mass},
              {"adapt_iterations", c.hmc.adapt_iterations}};
  j["priors"] = {{"var_beta", c.priors.var_beta},
                 {"var_gamma", c.priors.var_gamma},
                 {"var_rho_logit", c.priors.var_rho_logit},
                 {"var_psi", c.priors.var_psi}};
  j["precision"] = {{"logdet", to_string(c.precision.logdet)},
                    {"exact_trace_limit", c.precision.exact_trace_limit},
                    {"hutchinson_probes", c.precision.hutchinson_probes}};
  if (!c.compare_fits.empty() || c.compare_truth) {
    Json cj;
    cj["fits"] = Json::array();
    for (const auto& f : c.compare_fits) cj["fits"].push_back(f.string());
    cj["truth"] = c.compare_truth ? Json(c.compare_truth->string()) : Json(nullptr);
    j["compare"] = cj;
  }
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  check_keys(j, "config",
             {"seed", "out", "jobs", "replicates", "simulation", "data", "mechanism", "method", "vb",
              "sampler", "hmc", "priors", "precision", "compare"});
  RunConfig c;
  try {
    read_opt(j, "seed", c.seed);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    read_opt(j, "jobs", c.jobs);
    read_opt(j, "replicates", c.replicates);
    if (j.contains("simulation") && !j.at("simulation").is_null()) {
      const Json& s = j.at("simulation");
      c.simulation = sim_config_from_json(s);
      if (!s.contains("seed")) c.simulation->seed = c.seed;
    }
    if (j.contains("data") && !j.at("data").is_null()) {
      const Json& d = j.at("data");
      check_keys(d, "data", {"dir", "y", "X", "W", "Xstar", "y_full", "truth"});
      DataPaths p;
      auto path = [&](const char* key, std::filesystem::path& out) {
        if (d.contains(key) && !d.at(key).is_null()) out = d.at(key).get<std::string>();
      };
      path("dir", p.dir);
      path("y", p.y);
      path("X", p.x);
      path("W", p.w);
      path("Xstar", p.x_star);
      path("y_full", p.y_full);
      path("truth", p.truth);
      c.data = p;
    }
    if (j.contains("mechanism") && !j.at("mechanism").is_null()) {
      c.mechanism = mechanism_from_string(j.at("mechanism").get<std::string>());
    }
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("vb")) {
      const Json& v = j.at("vb");
      check_keys(v, "vb",
                 {"iterations", "factors", "draws_per_iteration", "clip", "upsilon", "alpha",
                  "b_init", "d_init", "summary_draws", "summary_window"});
      read_opt(v, "iterations", c.vb.iterations);
      read_opt(v, "factors", c.vb.factors);
      read_opt(v, "draws_per_iteration", c.vb.draws_per_iteration);
      read_opt(v, "clip", c.vb.clip);
      read_opt(v, "upsilon", c.vb.upsilon);
      read_opt(v, "alpha", c.vb.alpha);
      read_opt(v, "b_init", c.vb.b_init);
      read_opt(v, "d_init", c.vb.d_init);
      read_opt(v, "summary_draws", c.vb.summary_draws);
      read_opt(v, "summary_window", c.vb.summary_window);
    }
    if (j.contains("sampler")) {
      const Json& s = j.at("sampler");
      check_keys(s, "sampler", {"n1", "block_size", "k_prime", "warm_start", "partition_seed"});
      read_opt(s, "n1", c.sampler.n1);
      read_opt(s, "block_size", c.sampler.block_size);
      read_opt(s, "k_prime", c.sampler.k_prime);
      read_opt(s, "warm_start", c.sampler.warm_start);
      read_opt(s, "partition_seed", c.sampler.partition_seed);
    }
    if (j.contains("hmc")) {
      const Json& h = j.at("hmc");
      check_keys(h, "hmc",
                 {"n_samples", "leapfrog_steps", "step_size", "burn_in", "tune_step_size",
                  "pilot_iterations", "adapt_mass", "adapt_iterations"});
      read_opt(h, "n_samples", c.hmc.n_samples);
      read_opt(h, "leapfrog_steps", c.hmc.leapfrog_steps);
      read_opt(h, "step_size", c.hmc.step_size);
      read_opt(h, "burn_in", c.hmc.burn_in);
      read_opt(h, "tune_step_size", c.hmc.tune_step_size);
      read_opt(h, "pilot_iterations", c.hmc.pilot_iterations);
      read_opt(h, "adapt_mass", c.hmc.adapt_mass);
      read_opt(h, "adapt_iterations", c.hmc.adapt_iterations);
    }
    if (j.contains("priors")) {
      const Json& p = j.at("priors");
      check_keys(p, "priors", {"var_beta", "var_gamma", "var_rho_logit", "var_psi"});
      read_opt(p, "var_beta", c.priors.var_beta);
      read_opt(p, "var_gamma", c.priors.var_gamma);
      read_opt(p, "var_rho_logit", c.priors.var_rho_logit);
      read_opt(p, "var_psi", c.priors.var_psi);
    }
    if (j.contains("precision")) {
      const Json& p = j.at("precision");
      check_keys(p, "precision", {"logdet", "exact_trace_limit", "hutchinson_probes"});
      if (p.contains("logdet")) {
        c.precision.logdet = logdet_method_from_string(p.at("logdet").get<std::string>());
      }
      read_opt(p, "exact_trace_limit", c.precision.exact_trace_limit);
      read_opt(p, "hutchinson_probes", c.precision.hutchinson_probes);
    }
    if (j.contains("compare")) {
      const Json& cj = j.at("compare");
      check_keys(cj, "compare", {"fits", "truth"});
      if (cj.contains("fits")) {
        for (const auto& f : cj.at("fits")) c.compare_fits.emplace_back(f.get<std::string>());
      }
      if (cj.contains("truth") && !cj.at("truth").is_null()) {
        c.compare_truth = cj.at("truth").get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::uint64_t fingerprint(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace spatialvb

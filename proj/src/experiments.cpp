// SPDX-License-Identifier: Apache-2.0
#include <cnnlab/experiments.hpp>

#include <cnnlab/bounds.hpp>
#include <cnnlab/constructor.hpp>
#include <cnnlab/parallel.hpp>
#include <cnnlab/rng.hpp>
#include <cnnlab/symmetry.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

namespace cnnlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Defaults = std::map<std::string, std::string>;

const std::map<std::string, Defaults>& all_defaults() {
  static const std::map<std::string, Defaults> table = {
    {"check-constructions",
     {{"d", "256"}, {"samples", "1000"}, {"k", "4"}, {"m", "8"},
      {"tol_separation", "1e-8"}, {"tol_exact", "1e-10"},
      {"save_params", "1"}}},
    {"train",
     {{"family", "cnn"}, {"input_dim", "64"}, {"stride", "2"}, {"depth", "0"},
      {"channels", "4"}, {"activation", "relu"}, {"target", "separation"},
      {"i", "1"}, {"j", "2"}, {"A0", "10"}, {"dist", "std_gaussian"},
      {"n", "200"}, {"sigma", "0"}, {"optimizer", "adam"}, {"lr", "1e-3"},
      {"lr_decay", "0"}, {"steps", "1000"}, {"batch", "0"}, {"lambda", "0"},
      {"reg", "identity"}, {"A", "inf"}, {"B", "inf"}, {"restarts", "1"},
      {"early_stop", "0"}, {"init", "uniform_fan_in"}, {"init_scale", "1"},
      {"n_test", "10000"}}},
    {"figure2",
     {{"d", "1024"}, {"n", "400"}, {"stride", "4"}, {"channels", "4"},
      {"fcn_width", "10"}, {"sigma", "0"}, {"dist", "uniform_cube"},
      {"lr", "1e-3"}, {"lr_decay", "0"}, {"steps", "4000"},
      {"early_stop", "1e-5"}, {"restarts", "3"}, {"n_test", "4000"},
      {"eval_every", "500"}, {"targets", "short,long"}}},
    {"equivariance",
     {{"d", "16"}, {"n", "64"}, {"steps", "200"}, {"trials", "20"},
      {"batch", "16"}, {"sigma", "0.5"}, {"lcn_stride", "2"},
      {"lcn_channels", "4"}, {"lcn_lr", "1e-2"}, {"fcn_width", "16"},
      {"fcn_lr", "1e-2"}, {"fcn_init", "0.1"}, {"tol", "1e-6"},
      {"negative_min", "1e-2"}}},
    {"distances",
     {{"d", "64"}, {"s", "1,8,32"}, {"n", "100000"}, {"A0", "10"},
      {"fcn_d", "16"}, {"fcn_pairs", "3"}, {"trunc_dims", "16,64"},
      {"trunc_max", "0.01"}, {"tau_probes", "10000"}}},
    {"bounds",
     {{"binom_n", "30"}, {"packing_n", "12"}, {"semiloc_dims", "16,64,256,1024"},
      {"fano_M", "16"}, {"fano_A", "1"}, {"fano_sigma", "1"},
      {"cover_d", "4"}, {"cover_J", "0.5,1,2,4"}, {"cover_t", "0.01"},
      {"cover_n", "32"}, {"risk_sigma", "1"}, {"risk_A", "1"},
      {"risk_p", "100"}, {"risk_eps", "0.01"}, {"risk_M", "1"},
      {"risk_delta", "0.05"}, {"risk_L", "3"},
      {"risk_n", "100,1000,10000,100000,1000000"}}},
    {"lowerbound-sweep",
     {{"families", "lcn,fcn"}, {"dims", "16,32,64,128,256,512"},
      {"sigma", "100"}, {"eps_frac", "0.5"}, {"calibrate", "1"},
      {"cal_n", "100000"}, {"lcn_d_ref", "64"}, {"fcn_d_ref", "16"},
      {"c_lcn", "64"}, {"c_fcn", "4"}, {"lcn_slope", "0.8,1.2"},
      {"fcn_slope", "1.8,2.2"}, {"sigma_ratio_tol", "0.1"}}},
  };
  return table;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::size_t b = 0;
  while (b <= s.size()) {
    std::size_t e = s.find(',', b);
    if (e == std::string::npos)
      e = s.size();
    std::string item = s.substr(b, e - b);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty())
      out.push_back(item);
    b = e + 1;
  }
  return out;
}

class Csv {
public:
  Csv(const fs::path& path, const std::string& header) : os_(path) {
    if (!os_)
      throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    os_ << header << '\n';
  }
  template <class... Args>
  void row(fmt::format_string<Args...> f, Args&&... args) {
    os_ << fmt::format(f, std::forward<Args>(args)...) << '\n';
  }

private:
  std::ofstream os_;
};

template <class F>
auto wrap_config(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("key '{}': {}", key, e.what()));
  }
}

double sample_variance(const Tensor& y) {
  double n = static_cast<double>(y.size());
  double mean = std::accumulate(y.values.begin(), y.values.end(), 0.0) / n;
  double acc = 0.0;
  for (double v : y.values)
    acc += (v - mean) * (v - mean);
  return acc / (n - 1.0);
}

double mse(std::span<const double> pred, const Tensor& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += (pred[i] - y[i]) * (pred[i] - y[i]);
  return acc / static_cast<double>(pred.size());
}

std::size_t log_base(std::size_t n, std::size_t s) {
  std::size_t L = 0, v = 1;
  while (v < n) {
    v *= s;
    ++L;
  }
  if (v != n)
    throw ConfigError(fmt::format("input dimension {} is not a power of {}", n, s));
  return L;
}

TwoLayerNet random_net(std::size_t m, std::size_t k, std::uint64_t seed,
                       std::uint64_t index) {
  Rng rng(seed, "random_net", index);
  TwoLayerNet g;
  g.m = m;
  g.k = k;
  for (std::size_t j = 0; j < m; ++j)
    g.a.push_back(rng.normal());
  for (std::size_t j = 0; j < m * k; ++j)
    g.U.push_back(rng.normal() / std::sqrt(static_cast<double>(k)));
  for (std::size_t j = 0; j < m; ++j)
    g.c.push_back(rng.normal());
  return g;
}

IndexSet random_index_set(std::size_t k, std::size_t dim, std::uint64_t seed,
                          std::uint64_t index) {
  Rng rng(seed, "index_set", index);
  IndexSet I;
  while (I.size() < k) {
    std::size_t v = 1 + rng.below(dim);
    if (std::find(I.begin(), I.end(), v) == I.end())
      I.push_back(v);
  }
  std::sort(I.begin(), I.end());
  return I;
}

std::span<const double> row_of(const Tensor& X, std::size_t r) {
  std::size_t D = X.dim(1);
  return std::span<const double>(X.values.data() + r * D, D);
}

// ---------------------------------------------------------------- train

ArchConfig arch_from(const ParamSet& p) {
  Family fam = wrap_config("family", [&] { return family_from_string(p.str("family")); });
  std::size_t D = p.count("input_dim");
  std::vector<std::size_t> ch = p.counts("channels");
  if (ch.empty())
    throw ConfigError("key 'channels': empty list");
  std::string act = p.str("activation");
  auto acts_for = [&](std::size_t L) {
    if (act == "separation") {
      std::vector<Activation> a(L, Activation::relu);
      a.front() = Activation::relu2;
      a.back() = Activation::relu2;
      return a;
    }
    Activation a = wrap_config("activation", [&] { return activation_from_string(act); });
    return std::vector<Activation>(L, a);
  };
  if (fam == Family::FCN) {
    std::vector<std::size_t> widths{D};
    std::size_t L = p.count("depth") ? p.count("depth") : ch.size();
    for (std::size_t l = 0; l < L; ++l)
      widths.push_back(ch.size() == 1 ? ch[0] : ch.at(l));
    return wrap_config("channels", [&] { return ArchConfig::fcn(D, widths, acts_for(L)); });
  }
  std::size_t s = p.count("stride");
  std::size_t L = p.count("depth") ? p.count("depth") : log_base(D, s);
  std::vector<std::size_t> chs{1};
  for (std::size_t l = 0; l < L; ++l) {
    if (ch.size() != 1 && ch.size() != L)
      throw ConfigError(fmt::format("key 'channels': need 1 or {} entries", L));
    chs.push_back(ch.size() == 1 ? ch[0] : ch[l]);
  }
  return wrap_config("depth", [&] {
    return fam == Family::CNN ? ArchConfig::cnn(D, s, chs, acts_for(L))
                              : ArchConfig::lcn(D, s, chs, acts_for(L));
  });
}

TargetSpec target_from(const ParamSet& p, std::size_t D) {
  std::string t = p.str("target");
  return wrap_config("target", [&]() -> TargetSpec {
    if (t == "separation")
      return TargetSpec::separation(D);
    if (t == "truncated_separation")
      return TargetSpec::truncated_separation(D, p.num("A0"));
    if (t == "short" || t == "long")
      return figure2_target(t, D);
    if (t == "product")
      return TargetSpec::product(D, p.count("i"), p.count("j"));
    throw ConfigError(fmt::format("key 'target': unknown target '{}'", t));
  });
}

InitScheme init_from(const ParamSet& p) {
  std::string k = p.str("init");
  if (k == "uniform_fan_in")
    return InitScheme::uniform_fan_in();
  if (k == "gaussian")
    return InitScheme::gaussian(p.num("init_scale"));
  throw ConfigError(fmt::format("key 'init': unknown scheme '{}'", k));
}

int run_train(const ParamSet& p, const ExperimentConfig& ec,
              std::vector<std::string>& artifacts, std::ostream& log) {
  ArchConfig cfg = arch_from(p);
  TargetSpec spec = target_from(p, cfg.input_dim);
  InputDist dist = wrap_config("dist", [&] { return dist_from_string(p.str("dist")); });
  TrainConfig tc;
  tc.optimizer = wrap_config("optimizer", [&] { return optimizer_from_string(p.str("optimizer")); });
  tc.lr = p.num("lr");
  tc.lr_decay = p.num("lr_decay");
  tc.steps = p.count("steps");
  tc.batch = p.count("batch");
  tc.lambda = p.num("lambda");
  std::string reg = p.str("reg");
  if (reg != "identity" && reg != "square")
    throw ConfigError(fmt::format("key 'reg': unknown form '{}'", reg));
  tc.reg = reg == "square" ? RegForm::square : RegForm::identity;
  tc.A = p.num("A");
  tc.B = p.num("B");
  tc.restarts = p.count("restarts");
  tc.early_stop = p.num("early_stop");
  tc.seed = ec.seed;
  wrap_config("lr", [&] { tc.validate(); return 0; });
  InitScheme init = init_from(p);

  Dataset ds = make_dataset(spec, dist, p.count("n"), p.num("sigma"), ec.seed, ec.threads);
  TrainResult r = train(cfg, init, ds, tc);
  Estimate te = test_error(cfg, r.theta, spec, dist, p.count("n_test"), ec.seed, ec.threads);

  fs::path out(ec.out_dir);
  {
    Csv csv(out / "trajectory.csv", "step,train_loss,norm_P");
    for (std::size_t t = 0; t < r.traj.loss.size(); ++t)
      csv.row("{},{},{}", t, r.traj.loss[t], r.traj.norm[t]);
  }
  {
    Csv csv(out / "result.csv", "metric,value");
    csv.row("test_mse,{}", te.value);
    csv.row("test_se,{}", te.se);
    csv.row("final_loss,{}", r.final_loss);
    csv.row("final_objective,{}", r.final_objective);
    csv.row("norm_P,{}", param_norm_P(cfg, r.theta));
    csv.row("steps_run,{}", r.steps_run);
    csv.row("best_restart,{}", r.best_restart);
    csv.row("diverged,{}", r.diverged ? 1 : 0);
    csv.row("param_count,{}", param_count(cfg));
  }
  {
    std::ofstream os(out / "model.json");
    os << to_json(cfg, r.theta).dump(1) << '\n';
  }
  artifacts.insert(artifacts.end(), {"trajectory.csv", "result.csv", "model.json"});
  fmt::print(log, "train: {} steps, final loss {:.4g}, test mse {:.4g} +- {:.2g}\n",
             r.steps_run, r.final_loss, te.value, te.se);
  return r.diverged ? 1 : 0;
}

// ---------------------------------------------------- check-constructions

int run_check_constructions(const ParamSet& p, const ExperimentConfig& ec,
                            std::vector<std::string>& artifacts, std::ostream& log) {
  std::size_t d = p.count("d");
  std::vector<ConstructionCheck> rows =
    check_constructions(d, p.count("samples"), ec.seed, ec.threads);
  double tol_sep = p.num("tol_separation"), tol_exact = p.num("tol_exact");
  fs::path out(ec.out_dir);
  Csv csv(out / "constructions.csv", "builder,d,max_gap,tol,norm_P,budget,pass");
  bool ok = true;
  for (auto& r : rows) {
    bool sep = r.builder.rfind("separation", 0) == 0;
    r.tol = sep ? tol_sep : (r.builder == "linear_selector" ? 0.0 : tol_exact);
    r.pass = r.max_gap <= r.tol && r.norm <= r.budget;
    ok = ok && r.pass;
    csv.row("{},{},{},{},{},{},{}", r.builder, r.d, r.max_gap, r.tol, r.norm,
            r.budget, r.pass ? 1 : 0);
    fmt::print(log, "{:<28} gap {:.3g} (tol {:.0e}) norm {:.4g} / {:.4g} {}\n",
               r.builder, r.max_gap, r.tol, r.norm, r.budget, r.pass ? "ok" : "FAIL");
  }
  artifacts.push_back("constructions.csv");
  if (p.flag("save_params")) {
    std::size_t k = p.count("k"), m = p.count("m");
    IndexSet I = random_index_set(k, 4 * d, ec.seed, 0);
    TwoLayerNet feats = random_net(m, k, ec.seed, 0);
    std::vector<std::pair<std::string, Built>> built = {
      {"linear_selector", build_linear_selector(4 * d, I)},
      {"relu_selector", build_relu_selector(d, I, feats)},
      {"feature_extractor", build_universal_feature_extractor(d)},
      {"separation_cnn", build_separation_cnn(d)},
      {"sparse_cnn", assemble_sparse_cnn(d, I, feats)},
    };
    for (const auto& [name, b] : built) {
      std::string file = name + ".params";
      save_binary((out / file).string(), b.first, b.second);
      artifacts.push_back(file);
    }
  }
  return ok ? 0 : 1;
}

// --------------------------------------------------------------- figure2

int run_figure2_cmd(const ParamSet& p, const ExperimentConfig& ec,
                    std::vector<std::string>& artifacts, std::ostream& log) {
  Figure2Settings st;
  st.d = p.count("d");
  st.n = p.count("n");
  st.stride = p.count("stride");
  st.channels = p.count("channels");
  st.fcn_width = p.count("fcn_width");
  st.sigma = p.num("sigma");
  st.dist = wrap_config("dist", [&] { return dist_from_string(p.str("dist")); });
  st.lr = p.num("lr");
  st.lr_decay = p.num("lr_decay");
  st.steps = p.count("steps");
  st.early_stop = p.num("early_stop");
  st.restarts = p.count("restarts");
  st.n_test = p.count("n_test");
  st.eval_every = p.count("eval_every");
  st.targets = split(p.str("targets"));
  st.seed = ec.seed;
  st.threads = ec.threads;
  log_base(st.d, st.stride);
  if (st.eval_every == 0)
    throw ConfigError("key 'eval_every': must be positive");
  if (st.n_test < 2)
    throw ConfigError("key 'n_test': need at least 2 test points");
  for (const auto& t : st.targets)
    wrap_config("targets", [&] { return figure2_target(t, st.d); });

  Figure2Result res = run_figure2(st);
  fs::path out(ec.out_dir);
  {
    Csv csv(out / "figure2_curves.csv", "target,model,step,train_loss,test_mse");
    for (const auto& c : res.curves)
      csv.row("{},{},{},{},{}", c.target, c.model, c.step, c.train_loss, c.test_mse);
  }
  bool ok = true;
  {
    Csv csv(out / "figure2_summary.csv",
            "target,model,test_mse,var_y,ratio,final_loss,steps_run,pass");
    for (const auto& s : res.summary) {
      bool pass = s.model == "cnn" ? s.ratio < 0.05 : s.ratio > 0.5;
      ok = ok && pass;
      csv.row("{},{},{},{},{},{},{},{}", s.target, s.model, s.test_mse, s.var_y,
              s.ratio, s.final_loss, s.steps_run, pass ? 1 : 0);
      fmt::print(log, "{:<6} {:<4} test/var {:.4f} after {} steps {}\n", s.target,
                 s.model, s.ratio, s.steps_run, pass ? "ok" : "FAIL");
    }
  }
  artifacts.insert(artifacts.end(), {"figure2_curves.csv", "figure2_summary.csv"});
  return ok ? 0 : 1;
}

// ----------------------------------------------------------- equivariance

int run_equivariance_cmd(const ParamSet& p, const ExperimentConfig& ec,
                         std::vector<std::string>& artifacts, std::ostream& log) {
  EquivarianceSettings st;
  st.d = p.count("d");
  st.n = p.count("n");
  st.steps = p.count("steps");
  st.trials = p.count("trials");
  st.batch = p.count("batch");
  st.sigma = p.num("sigma");
  st.lcn_stride = p.count("lcn_stride");
  st.lcn_channels = p.count("lcn_channels");
  st.lcn_lr = p.num("lcn_lr");
  st.fcn_width = p.count("fcn_width");
  st.fcn_lr = p.num("fcn_lr");
  st.fcn_init = p.num("fcn_init");
  st.seed = ec.seed;
  double tol = p.num("tol"), neg = p.num("negative_min");
  std::vector<EquivarianceRow> rows =
    wrap_config("d", [&] { return run_equivariance(st); });

  Csv csv(fs::path(ec.out_dir) / "equivariance.csv",
          "test,group,family,optimizer,trial,T,deviation");
  std::map<std::string, std::pair<double, double>> range;
  for (const auto& r : rows) {
    csv.row("{},{},{},{},{},{},{}", r.test, r.group, r.family, r.optimizer,
            r.trial, r.T, r.deviation);
    auto [it, fresh] = range.emplace(r.test, std::pair{r.deviation, r.deviation});
    if (!fresh) {
      it->second.first = std::min(it->second.first, r.deviation);
      it->second.second = std::max(it->second.second, r.deviation);
    }
  }
  artifacts.push_back("equivariance.csv");
  bool ok = true;
  for (const auto& [test, mm] : range) {
    bool negative = test.find("negative") != std::string::npos;
    bool pass = negative ? mm.first >= neg : mm.second <= tol;
    ok = ok && pass;
    fmt::print(log, "{:<24} deviation in [{:.3g}, {:.3g}] {}\n", test, mm.first,
               mm.second, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

// -------------------------------------------------------------- distances

int run_distances(const ParamSet& p, const ExperimentConfig& ec,
                  std::vector<std::string>& artifacts, std::ostream& log) {
  std::size_t d = p.count("d"), n = p.count("n");
  double A0 = p.num("A0");
  double inf = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> ss = p.counts("s");
  Csv csv(fs::path(ec.out_dir) / "distances.csv",
          "law,d,s,n,estimate,se,target,lo,hi,pass");
  bool ok = true;
  auto emit = [&](const std::string& law, std::size_t dd, double s, Estimate e,
                  double target, double lo, double hi) {
    bool pass = e.value >= lo && e.value <= hi;
    ok = ok && pass;
    csv.row("{},{},{},{},{},{},{},{},{},{}", law, dd, s, n, e.value, e.se, target,
            lo, hi, pass ? 1 : 0);
    fmt::print(log, "{:<16} d={:<4} s={:<8.4g} {:.4f} +- {:.4f} in [{:.4f}, {:.4f}] {}\n",
               law, dd, s, e.value, e.se, lo, hi, pass ? "ok" : "FAIL");
  };
  std::uint64_t idx = 0;
  for (std::size_t s : ss) {
    if (s == 0 || s > d)
      throw ConfigError(fmt::format("key 's': need 1 <= s <= d, got {}", s));
    double dd = static_cast<double>(d), sd = static_cast<double>(s);
    Estimate e = lcn_distance(d, s, inf, n, mix64(ec.seed + idx++), ec.threads);
    double target = 64.0 * sd / dd;
    emit("lcn", d, sd, e, target, target - 3 * e.se, target + 3 * e.se);
    Estimate et = lcn_distance(d, s, A0, n, mix64(ec.seed + idx++), ec.threads);
    emit("lcn_truncated", d, sd, et, target, 63.0 * sd / dd - 3 * et.se,
         target + 3 * et.se);
  }
  std::size_t fd = p.count("fcn_d");
  for (std::size_t k = 0; k < p.count("fcn_pairs"); ++k) {
    Eigen::MatrixXd U = sample_haar_orthogonal(fd, ec.seed, 2 * k).Q;
    Eigen::MatrixXd U2 = sample_haar_orthogonal(fd, ec.seed, 2 * k + 1).Q;
    double f2 = (U - U2).squaredNorm();
    Estimate e = fcn_distance(U, U2, inf, n, mix64(ec.seed + idx++), ec.threads);
    double target = 4.0 * f2 / static_cast<double>(fd);
    emit("fcn", fd, f2, e, target, target - 3 * e.se, target + 3 * e.se);
  }
  double tmax = p.num("trunc_max");
  for (std::size_t td : p.counts("trunc_dims")) {
    Estimate e = truncation_rate(td, A0, n, mix64(ec.seed + idx++), ec.threads);
    emit("truncation_rate", td, A0, e, tmax, 0.0, tmax);
  }
  {
    Eigen::MatrixXd U = sample_haar_orthogonal(fd, ec.seed, 1000).Q;
    TauU tu = tau_U_construct(U, p.count("tau_probes"), ec.seed);
    Estimate e{tu.c, tu.spread};
    emit("tau_U_constant", fd, 0.0, e, 2.0, 2.0 - 1e-9, 2.0 + 1e-9);
  }
  artifacts.push_back("distances.csv");
  return ok ? 0 : 1;
}

// ----------------------------------------------------------------- bounds

int run_bounds(const ParamSet& p, const ExperimentConfig& ec,
               std::vector<std::string>& artifacts, std::ostream& log) {
  Csv csv(fs::path(ec.out_dir) / "bounds.csv", "name,value,formula,check,pass");
  bool ok = true;
  auto emit = [&](const std::string& name, double v, const std::string& formula,
                  int check, bool pass) {
    if (check)
      ok = ok && pass;
    csv.row("{},{},{},{},{}", name, v, formula, check, pass ? 1 : 0);
    if (check && !pass)
      fmt::print(log, "bounds: {} FAILED ({})\n", name, v);
  };

  std::size_t bn = p.count("binom_n");
  std::size_t cases = 0, fails = 0;
  for (std::size_t n = 1; n <= bn; ++n)
    for (std::size_t m = 1; m <= n; ++m) {
      ++cases;
      fails += binom_sum_bound(n, m).holds ? 0 : 1;
    }
  emit(fmt::format("binom_sum_bound_cases_n{}", bn), static_cast<double>(cases),
       "exact_vs_enm_pow_m", 1, fails == 0);
  {
    BinomSum b = binom_sum_bound(4, 1);
    emit("binom_sum_n4_m1", b.exact.convert_to<double>(), "exact_sum", 1, b.exact == 5);
    emit("binom_bound_n4_m1", b.bound, "enm_pow_m", 0, true);
  }

  std::size_t pn = p.count("packing_n");
  std::size_t pfails = 0, pcases = 0;
  for (std::size_t n = 1; n <= pn; ++n)
    for (std::size_t m = 1; m <= n; ++m) {
      ++pcases;
      double lb = hamming_packing_lb(n, static_cast<double>(m)).value;
      double greedy = static_cast<double>(greedy_hamming_packing(n, static_cast<double>(m)).size());
      if (lb > greedy)
        ++pfails;
    }
  emit(fmt::format("hamming_packing_cases_n{}", pn), static_cast<double>(pcases),
       "volume_bound_le_greedy", 1, pfails == 0);
  emit("hamming_packing_lb_n4_m1", hamming_packing_lb(4, 1.0).value, "volume_bound", 0, true);

  double base = semiloc_base_constant();
  double want = 2.0 / std::pow(5.0 * std::exp(1.0), 0.25);
  emit("semiloc_base_constant", base, "two_over_5e_quarter", 1,
       std::abs(base - want) <= 1e-12);
  for (std::size_t d : p.counts("semiloc_dims"))
    emit(fmt::format("semiloc_log_packing_d{}", d), semiloc_log_packing(d),
         "hamming_volume", 1,
         semiloc_log_packing(d) >= static_cast<double>(d) * std::log(base) - 1e-9);

  {
    std::size_t M = p.count("fano_M");
    double A = p.num("fano_A"), sigma = p.num("fano_sigma");
    double logM = std::log(static_cast<double>(M));
    std::vector<double> D(M * M, 4.0 * A);
    for (std::size_t i = 0; i < M; ++i)
      D[i * M + i] = 0.0;
    double sum = 4.0 * A * static_cast<double>(M * (M - 1));
    double n_half = 0.5 * 2.0 * sigma * sigma * static_cast<double>(M * M) * logM / sum;
    double fb = fano_bound(M, A, D, n_half, sigma);
    double expect = A * (0.5 - std::log(2.0) / logM);
    emit(fmt::format("fano_bound_M{}_half", M), fb, "fano_regression", 1,
         std::abs(fb - expect) <= 1e-12 * std::max(1.0, A));
    emit("gaussian_kl_gap2", gaussian_kl(0.0, 2.0, 1.0), "gaussian_kl", 1,
         gaussian_kl(0.0, 2.0, 1.0) == 2.0);
  }

  {
    std::size_t cd = p.count("cover_d");
    std::size_t D = 4 * cd;
    std::size_t L = log_base(D, 2);
    std::vector<std::size_t> ch(L + 1, 2);
    ch[0] = 1;
    ArchConfig cfg = ArchConfig::cnn(D, 2, ch, std::vector<Activation>(L, Activation::relu));
    Tensor X = sample_inputs(InputDist::std_gaussian, D, p.count("cover_n"), ec.seed, "cover");
    double t = p.num("cover_t");
    double prev = -std::numeric_limits<double>::infinity();
    bool mono = true;
    for (double J : p.nums("cover_J")) {
      CoveringBound cb = covering_bound(cfg, J, t, X);
      emit(fmt::format("covering_log_J{}", J), cb.log_value, "cnn_covering", 0, true);
      mono = mono && cb.log_value > prev;
      prev = cb.log_value;
    }
    emit("covering_monotone_in_J", mono ? 1.0 : 0.0, "cnn_covering", 1, mono);
  }

  {
    ExcessRiskInputs in;
    in.sigma = p.num("risk_sigma");
    in.A = p.num("risk_A");
    in.p = p.num("risk_p");
    in.eps_star = p.num("risk_eps");
    in.M_star = p.num("risk_M");
    in.delta = p.num("risk_delta");
    double L = p.num("risk_L");
    in.gamma = [L](double J) { return J * std::pow(1.0 + J, L); };
    std::vector<double> ns, vals;
    for (double n : p.nums("risk_n")) {
      in.n = n;
      in.B = 2.0 * in.A + in.sigma * std::sqrt(std::log(n));
      in.lambda = 1.0 / std::sqrt(n);
      ExcessRiskTerms tr = excess_risk_terms(in);
      emit(fmt::format("excess_risk_n{}", n), tr.total, "excess_risk_four_term", 0, true);
      ns.push_back(n);
      vals.push_back(tr.total);
    }
    if (ns.size() >= 2)
      emit("excess_risk_loglog_slope", loglog_slope(ns, vals), "loglog_least_squares", 0, true);
  }
  artifacts.push_back("bounds.csv");
  return ok ? 0 : 1;
}

// ------------------------------------------------------- lowerbound-sweep

int run_sweep(const ParamSet& p, const ExperimentConfig& ec,
              std::vector<std::string>& artifacts, std::ostream& log) {
  fs::path out(ec.out_dir);
  Csv rows(out / "sweep.csv", "family,sigma,d,log_M,A,sup_l2,n_star");
  Csv rep(out / "sweep_report.csv", "name,value,formula,pass");
  bool ok = true;
  double sigma = p.num("sigma");
  double rtol = p.num("sigma_ratio_tol");
  for (const auto& fam_s : split(p.str("families"))) {
    Family fam = wrap_config("families", [&] { return family_from_string(fam_s); });
    if (fam == Family::CNN)
      throw ConfigError("key 'families': only lcn and fcn have sweeps");
    std::string tag = to_string(fam);
    SweepSettings st;
    st.family = fam;
    st.dims = p.counts("dims");
    st.sigma = sigma;
    st.eps_frac = p.num("eps_frac");
    st.c = fam == Family::LCN ? p.num("c_lcn") : p.num("c_fcn");
    if (p.flag("calibrate")) {
      std::size_t dref = fam == Family::LCN ? p.count("lcn_d_ref") : p.count("fcn_d_ref");
      Calibration cal = calibrate_distance_law(fam, dref, p.count("cal_n"), ec.seed, ec.threads);
      rep.row("{}_calibrated_c,{},mc_distance_law,{}", tag, cal.c, cal.constant ? 1 : 0);
      rep.row("{}_calibrated_c_alt,{},mc_distance_law,{}", tag, cal.c_alt, cal.constant ? 1 : 0);
      ok = ok && cal.constant;
      fmt::print(log, "{} calibration c={:.4f} alt={:.4f} {}\n", tag, cal.c, cal.c_alt,
                 cal.constant ? "constant" : "NOT constant");
      st.c = cal.c;
    }
    SweepResult r1 = wrap_config("dims", [&] { return lower_bound_sweep(st); });
    st.sigma = 2.0 * sigma;
    SweepResult r2 = lower_bound_sweep(st);
    for (const auto* r : {&r1, &r2})
      for (const auto& row : r->rows)
        rows.row("{},{},{},{},{},{},{}", tag, r == &r1 ? sigma : 2.0 * sigma, row.d,
                 row.log_M, row.A, row.sup_l2, row.n_star);
    std::vector<double> win = p.nums(fam == Family::LCN ? "lcn_slope" : "fcn_slope");
    if (win.size() != 2)
      throw ConfigError("slope windows take two numbers");
    bool spass = r1.slope >= win[0] && r1.slope <= win[1];
    rep.row("{}_slope,{},loglog_least_squares,{}", tag, r1.slope, spass ? 1 : 0);
    double worst = 0.0;
    for (std::size_t i = 0; i < r1.rows.size(); ++i)
      worst = std::max(worst, std::abs(r2.rows[i].n_star / r1.rows[i].n_star / 4.0 - 1.0));
    bool qpass = worst <= rtol;
    rep.row("{}_sigma_doubling_max_rel_dev,{},n_star_ratio_over_4,{}", tag, worst, qpass ? 1 : 0);
    ok = ok && spass && qpass;
    fmt::print(log, "{} slope {:.4f} {} ; sigma doubling deviation {:.4f} {}\n", tag,
               r1.slope, spass ? "ok" : "FAIL", worst, qpass ? "ok" : "FAIL");
  }
  artifacts.insert(artifacts.end(), {"sweep.csv", "sweep_report.csv"});
  return ok ? 0 : 1;
}

} // namespace

// ------------------------------------------------------------ public API

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [k, _] : all_defaults())
      v.push_back(k);
    return v;
  }();
  return names;
}

std::map<std::string, std::string> subcommand_defaults(const std::string& sub) {
  auto it = all_defaults().find(sub);
  if (it == all_defaults().end())
    throw ConfigError(fmt::format("unknown subcommand '{}'", sub));
  return it->second;
}

std::vector<ConstructionCheck> check_constructions(std::size_t d,
                                                   std::size_t samples,
                                                   std::uint64_t seed,
                                                   std::size_t threads) {
  std::size_t D = 4 * d;
  Tensor X = sample_inputs(InputDist::std_gaussian, D, samples, seed, "check", threads);
  std::vector<ConstructionCheck> out;
  auto gap_over = [&](const std::function<double(std::span<const double>)>& f) {
    std::vector<double> g(samples);
    parallel_for(samples, threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t r = b; r < e; ++r)
        g[r] = f(row_of(X, r));
    });
    return *std::max_element(g.begin(), g.end());
  };

  IndexSet I = random_index_set(4, D, seed, 0);
  TwoLayerNet feats = random_net(8, I.size(), seed, 0);
  auto pick = [&](std::span<const double> x) {
    std::vector<double> v;
    for (std::size_t i : I)
      v.push_back(x[i - 1]);
    return v;
  };

  {
    auto [cfg, th] = build_linear_selector(D, I);
    double gap = gap_over([&](std::span<const double> x) {
      Tensor z = hidden_state(cfg, th, x, cfg.depth);
      std::vector<double> want = pick(x);
      double g = z.size() == want.size() ? 0.0 : INFINITY;
      for (std::size_t t = 0; t < want.size() && t < z.size(); ++t)
        g = std::max(g, std::abs(z[t] - want[t]));
      return g;
    });
    out.push_back({"linear_selector", d, gap, 0.0, param_norm_P(cfg, th),
                   relu_selector_norm_budget(d, feats), false});
  }
  {
    auto [cfg, th] = build_relu_selector(d, I, feats);
    double gap = gap_over([&](std::span<const double> x) {
      Tensor z = hidden_state(cfg, th, x, cfg.depth);
      std::vector<double> xi = pick(x);
      double g = z.size() == feats.m ? 0.0 : INFINITY;
      for (std::size_t j = 0; j < feats.m && j < z.size(); ++j)
        g = std::max(g, std::abs(z[j] - feats.unit(j, xi)) /
                          std::max(1.0, std::abs(feats.unit(j, xi))));
      return g;
    });
    out.push_back({"relu_selector", d, gap, 0.0, param_norm_P(cfg, th),
                   relu_selector_norm_budget(d, feats), false});
  }
  {
    auto [cfg, th] = build_universal_feature_extractor(d);
    double gap = gap_over([&](std::span<const double> x) {
      Tensor z = hidden_state(cfg, th, x, cfg.depth);
      if (z.rank() != 2 || z.dim(0) != 2 || z.dim(1) != D)
        return static_cast<double>(INFINITY);
      double g = 0.0;
      for (std::size_t row = 0; row < 2; ++row)
        for (std::size_t i = 0; i < 2 * d; ++i) {
          double xi = x[row * 2 * d + i];
          g = std::max(g, std::abs(z[row * D + 2 * i] - std::max(xi, 0.0)));
          g = std::max(g, std::abs(z[row * D + 2 * i + 1] - std::max(-xi, 0.0)));
        }
      return g;
    });
    out.push_back({"feature_extractor", d, gap, 0.0, param_norm_P(cfg, th),
                   kNormBudgetC * static_cast<double>(D), false});
  }
  {
    TwoLayerNet net = random_net(8, D, seed, 1);
    auto [cfg, th] = build_two_layer_sim(d, net);
    double gap = gap_over([&](std::span<const double> x) {
      double want = net(x);
      return std::abs(forward(cfg, th, x) - want) / std::max(1.0, std::abs(want));
    });
    double budget = 0.0;
    for (std::size_t j = 0; j < net.m; ++j)
      budget += std::abs(net.a[j]);
    budget = kNormBudgetC * (static_cast<double>(D) + std::sqrt(
      std::inner_product(net.U.begin(), net.U.end(), net.U.begin(), 0.0)) + budget);
    out.push_back({"two_layer_sim", d, gap, 0.0, param_norm_P(cfg, th), budget, false});
  }
  double log_d = std::log2(static_cast<double>(D));
  for (bool lcn : {false, true}) {
    auto [cfg, th] = lcn ? build_separation_lcn(d) : build_separation_cnn(d);
    double gap = gap_over([&](std::span<const double> x) {
      double want = separation_target(x);
      return std::abs(forward(cfg, th, x) - want) / std::max(1.0, std::abs(want));
    });
    double budget = kNormBudgetC * log_d;
    if (lcn)
      budget *= static_cast<double>(D);
    out.push_back({lcn ? "separation_lcn" : "separation_cnn", d, gap, 0.0,
                   param_norm_P(cfg, th), budget, false});
  }
  return out;
}

TargetSpec figure2_target(const std::string& name, std::size_t d) {
  if (name == "short")
    return TargetSpec::product(d, 1, 2);
  if (name == "long")
    return TargetSpec::product(d, 1, d);
  throw std::invalid_argument(fmt::format("unknown figure2 target '{}'", name));
}

Figure2Result run_figure2(const Figure2Settings& st) {
  std::size_t L = log_base(st.d, st.stride);
  std::vector<std::size_t> ch(L + 1, st.channels);
  ch[0] = 1;
  ArchConfig cnn = ArchConfig::cnn(st.d, st.stride, ch,
                                   std::vector<Activation>(L, Activation::relu));
  ArchConfig fcn = ArchConfig::fcn(st.d, {st.d, st.fcn_width}, {Activation::relu});

  struct Job {
    std::string target;
    std::string model;
    Dataset train;
    const Dataset* test;
    double var_y;
    std::vector<Figure2Point> curve;
    Figure2Summary sum;
  };
  std::vector<Dataset> tests;
  std::vector<double> vars;
  tests.reserve(st.targets.size());
  std::vector<Job> jobs;
  for (const auto& t : st.targets) {
    TargetSpec spec = figure2_target(t, st.d);
    tests.push_back(make_dataset(spec, st.dist, st.n_test, 0.0,
                                 mix64(st.seed ^ purpose_id("figure2-test")),
                                 st.threads));
    vars.push_back(sample_variance(tests.back().y));
  }
  for (std::size_t k = 0; k < st.targets.size(); ++k) {
    TargetSpec spec = figure2_target(st.targets[k], st.d);
    Dataset tr = make_dataset(spec, st.dist, st.n, st.sigma, st.seed, st.threads);
    for (const char* model : {"cnn", "fcn", "ols"})
      jobs.push_back({st.targets[k], model, tr, &tests[k], vars[k], {}, {}});
  }

  parallel_for(jobs.size(), st.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t j = b; j < e; ++j) {
      Job& job = jobs[j];
      job.sum.target = job.target;
      job.sum.model = job.model;
      job.sum.var_y = job.var_y;
      if (job.model == "ols") {
        OlsModel m = ols_fit(job.train.X, job.train.y);
        std::vector<double> pred(job.test->n()), fit(job.train.n());
        for (std::size_t r = 0; r < pred.size(); ++r)
          pred[r] = m(row_of(job.test->X, r));
        for (std::size_t r = 0; r < fit.size(); ++r)
          fit[r] = m(row_of(job.train.X, r));
        job.sum.test_mse = mse(pred, job.test->y);
        job.sum.final_loss = 0.5 * mse(fit, job.train.y);
        job.curve.push_back({job.target, job.model, 0, job.sum.final_loss, job.sum.test_mse});
      } else {
        const ArchConfig& cfg = job.model == "cnn" ? cnn : fcn;
        TrainConfig tc;
        tc.optimizer = Optimizer::adam;
        tc.lr = st.lr;
        tc.lr_decay = st.lr_decay;
        tc.steps = st.steps;
        tc.early_stop = st.early_stop;
        tc.restarts = st.restarts;
        tc.seed = st.seed;
        std::vector<std::vector<std::pair<std::size_t, double>>> evals;
        TrainResult r = train(cfg, InitScheme::uniform_fan_in(), job.train, tc,
                              [&](std::size_t t, const Params& th) {
                                if (t == 0)
                                  evals.emplace_back();
                                if (t % st.eval_every == 0)
                                  evals.back().emplace_back(
                                    t, mse(forward_batch(cfg, th, job.test->X), job.test->y));
                              });
        for (const auto& [t, te] : evals.at(r.best_restart))
          if (t < r.steps_run)
            job.curve.push_back({job.target, job.model, t,
                                 t < r.traj.loss.size() ? r.traj.loss[t] : r.final_loss, te});
        job.sum.test_mse = mse(forward_batch(cfg, r.theta, job.test->X), job.test->y);
        job.sum.final_loss = r.final_loss;
        job.sum.steps_run = r.steps_run;
        job.curve.push_back({job.target, job.model, r.steps_run, r.final_loss,
                             job.sum.test_mse});
      }
      job.sum.ratio = job.sum.test_mse / job.var_y;
    }
  });

  Figure2Result res;
  for (auto& job : jobs) {
    res.curves.insert(res.curves.end(), job.curve.begin(), job.curve.end());
    res.summary.push_back(job.sum);
  }
  return res;
}

std::vector<EquivarianceRow> run_equivariance(const EquivarianceSettings& st) {
  std::size_t D = 4 * st.d;
  std::size_t L = log_base(D, st.lcn_stride);
  std::vector<std::size_t> ch(L + 1, st.lcn_channels);
  ch[0] = 1;
  ArchConfig lcn = ArchConfig::lcn(D, st.lcn_stride, ch,
                                   std::vector<Activation>(L, Activation::relu));
  ArchConfig fcn = ArchConfig::fcn(D, {D, st.fcn_width}, {Activation::relu});
  Dataset ds = make_dataset(TargetSpec::separation(D), InputDist::std_gaussian, st.n,
                            st.sigma, st.seed);

  auto tcfg = [&](Optimizer o, double lr, std::size_t trial) {
    TrainConfig tc;
    tc.optimizer = o;
    tc.lr = lr;
    tc.steps = st.steps;
    tc.batch = st.batch;
    tc.seed = mix64(st.seed + trial);
    return tc;
  };

  struct Case {
    const char* test;
    const char* group;
    const ArchConfig* cfg;
    Optimizer opt;
    double lr;
    InitScheme init;
  };
  std::vector<Case> cases = {
    {"lcn_adam_local", "local_perm", &lcn, Optimizer::adam, st.lcn_lr,
     InitScheme::uniform_fan_in()},
    {"fcn_sgd_orthogonal", "orthogonal", &fcn, Optimizer::sgd, st.fcn_lr,
     InitScheme::gaussian(st.fcn_init)},
    {"fcn_adam_orthogonal_negative", "orthogonal", &fcn, Optimizer::adam, st.fcn_lr,
     InitScheme::gaussian(st.fcn_init)},
  };
  std::vector<EquivarianceRow> rows;
  for (const auto& c : cases)
    for (std::size_t k = 0; k < st.trials; ++k) {
      GroupElement e = c.cfg->family == Family::LCN
                         ? random_local_perm(D / 2, st.seed, k)
                         : sample_haar_orthogonal(D, st.seed, k);
      CoupledResult r =
        coupled_equivariance_test(*c.cfg, e, ds, tcfg(c.opt, c.lr, k), c.init);
      rows.push_back({c.test, c.group, to_string(c.cfg->family), to_string(c.opt), k,
                      st.steps, r.max_deviation});
    }
  return rows;
}

int run_experiment(const ExperimentConfig& ec, std::ostream& log) {
  ParamSet p(ec.subcommand, subcommand_defaults(ec.subcommand), ec.params);
  if (ec.threads == 0)
    throw ConfigError("threads must be positive");
  fs::create_directories(ec.out_dir);
  std::vector<std::string> artifacts;
  int status = 0;
  const std::string& s = ec.subcommand;
  if (s == "check-constructions")
    status = run_check_constructions(p, ec, artifacts, log);
  else if (s == "train")
    status = run_train(p, ec, artifacts, log);
  else if (s == "figure2")
    status = run_figure2_cmd(p, ec, artifacts, log);
  else if (s == "equivariance")
    status = run_equivariance_cmd(p, ec, artifacts, log);
  else if (s == "distances")
    status = run_distances(p, ec, artifacts, log);
  else if (s == "bounds")
    status = run_bounds(p, ec, artifacts, log);
  else
    status = run_sweep(p, ec, artifacts, log);

  json m;
  m["tool"] = "cnnlab";
  m["version"] = kVersion;
  m["csv_schema_version"] = kCsvSchemaVersion;
  m["subcommand"] = s;
  m["seed"] = ec.seed;
  m["params"] = p.resolved();
  m["artifacts"] = artifacts;
  m["status"] = status;
  std::ofstream os(fs::path(ec.out_dir) / "manifest.json");
  os << m.dump(2) << '\n';
  return status;
}

} // namespace cnnlab

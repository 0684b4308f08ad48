// Command-line driver: runs one experiment described by a JSON config
// and writes a deterministic CSV or JSON table.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ntkflow/ntkflow.hpp"

using nlohmann::json;
using nlohmann::ordered_json;
namespace nf = ntkflow;

namespace {

constexpr const char* kToolVersion = "ntkflow 0.1.0";
constexpr const char* kSchemaId = "ntkflow-config-v1";

struct Options {
  std::string config_path;
  std::string out_path;       // empty: stdout
  std::string format;         // empty: take from config, default csv
  std::optional<std::uint64_t> seed;
  std::optional<int> quadrature_order;
  bool deterministic = false;
  bool no_normalise = false;
};

struct Table {
  std::vector<std::string> columns;
  std::vector<ordered_json> rows;  // one json array per row
};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw nf::config_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string dirname_of(const std::string& path) {
  const auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw nf::config_error("unknown key '" + it.key() + "' in " + where);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Config access helpers

template <class T>
T get_or(const json& cfg, const std::string& key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw nf::config_error("config key '" + key + "' has the wrong type");
  }
}

template <class T>
T require(const json& cfg, const std::string& key) {
  if (!cfg.contains(key)) throw nf::config_error("config key '" + key + "' is required");
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw nf::config_error("config key '" + key + "' has the wrong type");
  }
}

struct Dataset {
  Eigen::MatrixXd points;   // n0 x m
  Eigen::RowVectorXd labels;  // 1 x m (may be empty)
  bool normalised = false;
};

Dataset load_dataset(const json& cfg, const std::string& config_dir, bool want_normalise) {
  if (!cfg.contains("dataset")) throw nf::config_error("config key 'dataset' is required");
  const json& ds = cfg.at("dataset");
  if (!ds.is_object()) throw nf::config_error("'dataset' must be an object");
  reject_unknown_keys(ds, {"points", "labels", "path", "normalise"}, "dataset");

  Dataset out;
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  bool csv_labels = false;

  if (ds.contains("path")) {
    if (ds.contains("points") || ds.contains("labels"))
      throw nf::config_error("dataset: give either 'path' or inline 'points'/'labels'");
    std::string path = ds.at("path").get<std::string>();
    if (!path.empty() && path.front() != '/') path = config_dir + "/" + path;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::vector<double> vals;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
      if (vals.size() < 2) throw nf::config_error("dataset csv: need features and a label");
      labels.push_back(vals.back());
      vals.pop_back();
      rows.push_back(std::move(vals));
    }
    csv_labels = true;
  } else {
    const auto pts = require<std::vector<std::vector<double>>>(ds, "points");
    rows = pts;
    if (ds.contains("labels")) {
      labels = ds.at("labels").get<std::vector<double>>();
      csv_labels = true;
    }
  }
  if (rows.empty()) throw nf::config_error("dataset: no points given");
  const std::size_t n0 = rows.front().size();
  for (const auto& r : rows)
    if (r.size() != n0) throw nf::config_error("dataset: ragged point rows");
  out.points.resize(static_cast<Eigen::Index>(n0), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < n0; ++i)
      out.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
  if (csv_labels) {
    if (labels.size() != rows.size())
      throw nf::config_error("dataset: labels and points disagree in count");
    out.labels.resize(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t j = 0; j < labels.size(); ++j)
      out.labels(static_cast<Eigen::Index>(j)) = labels[j];
  }

  const bool normalise = get_or<bool>(ds, "normalise", want_normalise);
  if (normalise) {
    const double sn0 = std::sqrt(static_cast<double>(out.points.rows()));
    for (Eigen::Index j = 0; j < out.points.cols(); ++j) {
      const double nrm = out.points.col(j).norm();
      if (nrm == 0.0) throw nf::config_error("dataset: cannot normalise the zero point");
      out.points.col(j) *= sn0 / nrm;
    }
    out.normalised = true;
  }
  return out;
}

nf::ActivationSpec activation_from(const json& cfg) {
  const auto name = get_or<std::string>(cfg, "activation", "erf");
  const auto mode_name = get_or<std::string>(cfg, "kernel_mode", "auto");
  nf::KernelMode mode;
  if (mode_name == "analytic")
    mode = nf::KernelMode::analytic;
  else if (mode_name == "quadrature")
    mode = nf::KernelMode::quadrature;
  else if (mode_name == "auto")
    mode = (name == "relu" || name == "erf" || name == "identity")
               ? nf::KernelMode::analytic
               : nf::KernelMode::quadrature;
  else
    throw nf::config_error("kernel_mode must be analytic, quadrature or auto");
  auto act = nf::activation_by_name(name, mode);
  act.validate();
  return act;
}

nf::RegulariserSpec regulariser_from(const json& cfg) {
  const auto name = get_or<std::string>(cfg, "regulariser", "identity");
  if (name == "identity") return nf::RegulariserSpec::identity();
  throw nf::config_error("unknown regulariser: " + name);
}

nf::LossSpec loss_from(const json& cfg) {
  const auto name = get_or<std::string>(cfg, "loss", "least_squares");
  if (name == "least_squares") return nf::LossSpec::least_squares();
  throw nf::config_error("unknown loss: " + name);
}

int quad_order(const json& cfg, const Options& opt) {
  if (opt.quadrature_order) return *opt.quadrature_order;
  return get_or<int>(cfg, "quadrature_order", 64);
}

std::uint64_t run_seed(const json& cfg, const Options& opt) {
  if (opt.seed) return *opt.seed;
  return get_or<std::uint64_t>(cfg, "seed", 0);
}

const std::set<std::string> kCommonKeys = {"schema",  "experiment", "dataset",
                                           "out",     "format",     "seed",
                                           "quadrature_order"};

std::set<std::string> with_common(std::set<std::string> extra) {
  extra.insert(kCommonKeys.begin(), kCommonKeys.end());
  return extra;
}

// ---------------------------------------------------------------------------
// Experiments

Table run_kernel(const json& cfg, const std::string& dir, const Options& opt) {
  reject_unknown_keys(cfg, with_common({"activation", "kernel_mode", "depth"}), "config");
  const Dataset ds = load_dataset(cfg, dir, false);
  const int depth = get_or<int>(cfg, "depth", 2);
  const auto act = activation_from(cfg);
  const auto rule = nf::gauss_hermite_rule(quad_order(cfg, opt));
  const nf::PointSet pts(ds.points, ds.normalised);
  const auto stack = nf::kernel_stack(pts, depth, act, rule);

  Table t;
  t.columns = {"layer", "i", "j", "sigma", "theta"};
  for (int l = 0; l < depth; ++l)
    for (Eigen::Index i = 0; i < pts.size(); ++i)
      for (Eigen::Index j = i; j < pts.size(); ++j)
        t.rows.push_back(ordered_json::array({l + 1, i, j, stack.sigma[l].values(i, j),
                                              stack.theta[l].values(i, j)}));
  return t;
}

Table run_flow(const json& cfg, const std::string& dir, const Options& opt) {
  reject_unknown_keys(cfg,
                      with_common({"activation", "kernel_mode", "depth", "lambda", "T",
                                   "step", "loss", "regulariser", "record_every"}),
                      "config");
  const Dataset ds = load_dataset(cfg, dir, false);
  if (ds.labels.size() == 0) throw nf::config_error("flow: dataset labels are required");
  const int depth = get_or<int>(cfg, "depth", 2);
  const double lambda = get_or<double>(cfg, "lambda", 0.0);
  const double T = get_or<double>(cfg, "T", 1.0);
  const auto act = activation_from(cfg);
  const auto rule = nf::gauss_hermite_rule(quad_order(cfg, opt));
  const nf::PointSet pts(ds.points, ds.normalised);
  const auto stack = nf::kernel_stack(pts, depth, act, rule);
  const nf::GramMatrix& theta = stack.theta.back();
  const double m = static_cast<double>(pts.size());
  const nf::GramMatrix tilde{theta.values / m, nf::GramNormalisation::per_sample};
  const double step = get_or<double>(cfg, "step", nf::default_step(lambda, tilde));
  const int every = get_or<int>(cfg, "record_every", 1);
  if (every < 1) throw nf::config_error("record_every must be >= 1");

  const auto traj = nf::integrate(
      nf::FlowState::initial(Eigen::RowVectorXd::Zero(pts.size())),
      nf::IntegrateConfig{T, step, nf::Integrator::rk4}, theta, {}, loss_from(cfg),
      ds.labels, lambda, regulariser_from(cfg));

  // central finite difference of C_s on the recorded grid
  const auto& obs = traj.observables;
  std::vector<double> dcs_fd(obs.size(), 0.0);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 < obs.size() ? i + 1 : i;
    dcs_fd[i] = lo == hi ? 0.0 : (obs[hi].Cs - obs[lo].Cs) / (obs[hi].t - obs[lo].t);
  }

  Table t;
  t.columns = {"t", "L_s", "R", "C_s", "dCs_identity", "dCs_fd"};
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (i % static_cast<std::size_t>(every) != 0 && i + 1 != obs.size()) continue;
    t.rows.push_back(ordered_json::array(
        {obs[i].t, obs[i].Ls, obs[i].R, obs[i].Cs, obs[i].dCs, dcs_fd[i]}));
  }
  return t;
}

Table run_lsq(const json& cfg, const std::string& dir, const Options& opt) {
  reject_unknown_keys(cfg,
                      with_common({"activation", "kernel_mode", "depth", "lambda", "times",
                                   "include_limit"}),
                      "config");
  const Dataset ds = load_dataset(cfg, dir, false);
  if (ds.labels.size() == 0) throw nf::config_error("lsq: dataset labels are required");
  const int depth = get_or<int>(cfg, "depth", 2);
  const double lambda = get_or<double>(cfg, "lambda", 0.0);
  const auto times = get_or<std::vector<double>>(cfg, "times", {0.0, 1.0});
  const bool include_limit = get_or<bool>(cfg, "include_limit", true);
  const auto act = activation_from(cfg);
  const auto rule = nf::gauss_hermite_rule(quad_order(cfg, opt));
  const nf::PointSet pts(ds.points, ds.normalised);
  const auto stack = nf::kernel_stack(pts, depth, act, rule);
  const double m = static_cast<double>(pts.size());

  nf::LsqSystem sys{nf::GramMatrix{stack.theta.back().values / m,
                                   nf::GramNormalisation::per_sample},
                    Eigen::VectorXd::Zero(pts.size()), ds.labels.transpose(), lambda};
  const nf::LsqSolver solver(std::move(sys));

  Table t;
  t.columns = {"t", "is_limit"};
  for (Eigen::Index j = 0; j < pts.size(); ++j)
    t.columns.push_back("F_" + std::to_string(j + 1));
  auto push_row = [&](const std::string& time, int limit, const Eigen::VectorXd& f) {
    ordered_json row = ordered_json::array({time, limit});
    for (Eigen::Index j = 0; j < f.size(); ++j) row.push_back(f(j));
    t.rows.push_back(std::move(row));
  };
  for (double tv : times) push_row(fmt(tv), 0, solver.trajectory_at(tv));
  if (include_limit) push_row("inf", 1, solver.limit_infinity());
  return t;
}

Table run_finite(const json& cfg, const std::string& dir, const Options& opt) {
  reject_unknown_keys(cfg,
                      with_common({"activation", "depth", "widths", "lambda", "T", "step",
                                   "loss", "regulariser", "probe_every"}),
                      "config");
  const Dataset ds = load_dataset(cfg, dir, false);
  if (ds.labels.size() == 0) throw nf::config_error("finite: dataset labels are required");
  const auto widths = require<std::vector<int>>(cfg, "widths");
  const int depth = get_or<int>(cfg, "depth", 2);
  const double lambda = get_or<double>(cfg, "lambda", 0.5);
  nf::TrainOptions topt;
  topt.T = get_or<double>(cfg, "T", 1.0);
  topt.step = get_or<double>(cfg, "step", 1e-2);
  const int probe_every = get_or<int>(cfg, "probe_every", 20);
  const auto act = activation_from(cfg);

  const auto report = nf::drift_report(widths, depth, act, ds.points,
                                       Eigen::MatrixXd(ds.labels), loss_from(cfg), lambda,
                                       regulariser_from(cfg), topt, run_seed(cfg, opt),
                                       probe_every);
  Table t;
  t.columns = {"width", "sup_dtheta", "sup_xi_minus_du", "D_final", "theta_slope"};
  for (const auto& row : report.rows)
    t.rows.push_back(ordered_json::array({row.width, row.sup_dtheta, row.sup_xi_minus_du,
                                          row.D_final, report.theta_slope}));
  return t;
}

Table run_pacbayes(const json& cfg, const std::string& dir, const Options& opt) {
  reject_unknown_keys(
      cfg, with_common({"activation", "eta", "delta", "T", "step", "record_every"}),
      "config");
  if (opt.no_normalise)
    throw nf::config_error("pacbayes requires sphere-normalised inputs; "
                           "--no-normalise is not allowed here");
  const Dataset ds = load_dataset(cfg, dir, true);
  if (!ds.normalised)
    throw nf::config_error("pacbayes requires sphere-normalised inputs");
  if (ds.labels.size() == 0) throw nf::config_error("pacbayes: dataset labels are required");
  const double eta = get_or<double>(cfg, "eta", 1.0);
  const double delta = get_or<double>(cfg, "delta", 0.05);
  const double T = get_or<double>(cfg, "T", 1.0);
  const double step = get_or<double>(cfg, "step", 1e-2);
  const int every = get_or<int>(cfg, "record_every", 1);
  if (every < 1) throw nf::config_error("record_every must be >= 1");

  const auto rule = nf::gauss_hermite_rule(quad_order(cfg, opt));
  const auto base = activation_from(cfg);
  const auto conv = nf::convolve_activation(base, rule);
  const double sigma = std::sqrt(nf::sigma0_squared(conv, rule));
  const nf::PointSet pts(ds.points, true);
  const auto theta = nf::shallow_ntk(pts, conv, rule);
  const int m = static_cast<int>(pts.size());
  const double lambda = nf::lambda_from_eta(eta, m);

  const auto traj = nf::evolve_misclassification(
      theta, Eigen::RowVectorXd::Zero(m), ds.labels, sigma, lambda, T, step);

  Table t;
  t.columns = {"t", "L_bar_s", "R", "C_s", "bound"};
  for (std::size_t i = 0; i < traj.observables.size(); ++i) {
    if (i % static_cast<std::size_t>(every) != 0 && i + 1 != traj.observables.size())
      continue;
    const auto& obs = traj.observables[i];
    const double bound = nf::pac_bound(obs.Ls, obs.R, eta, delta, m).bound;
    t.rows.push_back(ordered_json::array({obs.t, obs.Ls, obs.R, obs.Cs, bound}));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Output

void write_output(const Table& table, const json& cfg, const Options& opt,
                  std::uint64_t config_hash, std::uint64_t seed) {
  std::string format = opt.format;
  if (format.empty()) format = get_or<std::string>(cfg, "format", "csv");
  if (format != "csv" && format != "json")
    throw nf::config_error("format must be csv or json");
  std::string out_path = opt.out_path;
  if (out_path.empty()) out_path = get_or<std::string>(cfg, "out", "");

  char hash_hex[20];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(config_hash));

  std::string text;
  if (format == "csv") {
    std::ostringstream os;
    os << "# tool " << kToolVersion << "\n";
    os << "# config_hash " << hash_hex << "\n";
    os << "# seed " << seed << "\n";
    if (!opt.deterministic) os << "# timestamp " << std::time(nullptr) << "\n";
    os << "# config " << cfg.dump() << "\n";
    for (std::size_t c = 0; c < table.columns.size(); ++c)
      os << (c ? "," : "") << table.columns[c];
    os << "\n";
    for (const auto& row : table.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) os << ",";
        const auto& cell = row[c];
        if (cell.is_number_float())
          os << fmt(cell.get<double>());
        else if (cell.is_string())
          os << cell.get<std::string>();
        else
          os << cell.dump();
      }
      os << "\n";
    }
    text = os.str();
  } else {
    ordered_json doc;
    doc["tool"] = kToolVersion;
    doc["config_hash"] = hash_hex;
    doc["seed"] = seed;
    if (!opt.deterministic) doc["timestamp"] = std::time(nullptr);
    doc["config"] = cfg;
    doc["columns"] = table.columns;
    doc["rows"] = table.rows;
    text = doc.dump(2) + "\n";
  }

  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw nf::config_error("cannot open output file: " + out_path);
    out << text;
  }
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"regularised NTK dynamics laboratory"};
  app.add_option("--config", opt.config_path, "path to a JSON experiment config")
      ->required();
  app.add_option("--out", opt.out_path, "output file (default: stdout)");
  app.add_option("--format", opt.format, "output format")
      ->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--seed", opt.seed, "seed override");
  app.add_option("--quadrature-order", opt.quadrature_order,
                 "Gauss-Hermite order override");
  app.add_flag("--deterministic", opt.deterministic,
               "suppress timestamps for byte-identical reruns");
  app.add_flag("--no-normalise", opt.no_normalise,
               "skip sphere normalisation of the dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const std::string raw = read_file(opt.config_path);
    const std::uint64_t config_hash = fnv1a(raw);
    json cfg;
    try {
      cfg = json::parse(raw);
    } catch (const json::exception& e) {
      throw nf::config_error(std::string("config is not valid JSON: ") + e.what());
    }
    if (!cfg.is_object()) throw nf::config_error("config must be a JSON object");
    const auto schema = get_or<std::string>(cfg, "schema", kSchemaId);
    if (schema != kSchemaId)
      throw nf::config_error("unsupported schema id: " + schema);
    if (opt.no_normalise && cfg.contains("dataset") && cfg.at("dataset").is_object())
      cfg["dataset"]["normalise"] = false;

    const auto experiment = require<std::string>(cfg, "experiment");
    const std::string dir = dirname_of(opt.config_path);
    Table table;
    if (experiment == "kernel")
      table = run_kernel(cfg, dir, opt);
    else if (experiment == "flow")
      table = run_flow(cfg, dir, opt);
    else if (experiment == "lsq")
      table = run_lsq(cfg, dir, opt);
    else if (experiment == "finite")
      table = run_finite(cfg, dir, opt);
    else if (experiment == "pacbayes")
      table = run_pacbayes(cfg, dir, opt);
    else
      throw nf::config_error("unknown experiment: " + experiment);

    write_output(table, cfg, opt, config_hash, run_seed(cfg, opt));
    return 0;
  } catch (const nf::divergence_error& e) {
    std::cerr << "error: " << e.what() << " (t = " << e.time << ")\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

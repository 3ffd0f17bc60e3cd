#include "dtfl/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dtfl/errors.hpp"

namespace dtfl::experiment {

namespace {

using json = nlohmann::ordered_json;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Typed access to a JSON object that remembers which keys were consumed, so
// leftovers can be reported as unknown fields.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.push_back(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  Node child(const std::string& key) { return Node(j_.at(key), path(key)); }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path(key), "expected true or false");
        out = v.get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path(key), "expected a string");
        out = v.get<std::string>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path(key), "expected a number");
        out = v.get<T>();
      } else {
        if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path(key), "expected an integer");
        if (v.is_number_integer() && v.get<std::int64_t>() < 0) throw ConfigError(path(key), "must be >= 0");
        out = static_cast<T>(v.get<std::uint64_t>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path(key), e.what());
    }
  }

  template <class T>
  void read_list(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(path(key), "expected a list");
    std::vector<T> items;
    for (std::size_t i = 0; i < v.size(); ++i) items.push_back(list_item<T>(v[i], path(key) + "[" + std::to_string(i) + "]"));
    out = std::move(items);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError(path(it.key()), "unknown field");
  }

 private:
  template <class T>
  static T list_item(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, std::string>) {
      // Sweep values may be written as numbers; they are kept as text.
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number()) return v.dump();
      throw ConfigError(where, "expected a string or number");
    } else {
      if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(where, "expected an integer");
      if (v.is_number_integer() && v.get<std::int64_t>() < 0) throw ConfigError(where, "must be >= 0");
      return static_cast<T>(v.get<std::uint64_t>());
    }
  }

  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

template <class F>
void checked(const std::string& field, F&& f) {
  try {
    f();
  } catch (const InvalidInput& e) {
    throw ConfigError(field, e.what());
  }
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

json all_strategies() {
  json a = json::array();
  for (const auto& s : strategy_names()) a.push_back(s);
  return a;
}

json preset_patch(const std::string& preset) {
  if (preset == "convergence") {
    return json{{"name", "convergence"},
                {"data",
                 {{"source", "synthetic"},
                  {"synthetic", {{"dim", 20}, {"n_real", 4000}, {"n_twin", 4000}, {"shift", 0.5}}}}},
                {"fl",
                 {{"num_clients", 20},
                  {"client_fraction", 0.3},
                  {"local_epochs", 2},
                  {"batch_size", 10},
                  {"max_rounds", 100},
                  {"target_accuracy", 0.8}}},
                {"strategies", all_strategies()},
                {"seeds", {0, 1, 2, 3, 4}}};
  }
  if (preset == "gamma-sweep") {
    json p = preset_patch("convergence");
    p["name"] = "gamma-sweep";
    p["strategies"] = json::array({"fpf"});
    p["fl"]["max_rounds"] = 500;
    p["sweep"] = {{"param", "gamma"}, {"values", {"0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"}}};
    return p;
  }
  if (preset == "scale100") {
    json p = preset_patch("convergence");
    p["name"] = "scale100";
    p["fl"]["num_clients"] = 100;
    p["fl"]["max_rounds"] = 100;
    return p;
  }
  throw ConfigError("preset", "unknown preset '" + preset + "' (expected convergence, gamma-sweep or scale100)");
}

const char* exchange_name(methods::LayerExchange e) {
  switch (e) {
    case methods::LayerExchange::DTtoAgg: return "dt_to_agg";
    case methods::LayerExchange::AggToDT: return "agg_to_dt";
    case methods::LayerExchange::None: break;
  }
  return "none";
}

methods::LayerExchange parse_exchange(const std::string& s, const std::string& field) {
  if (s == "dt_to_agg") return methods::LayerExchange::DTtoAgg;
  if (s == "agg_to_dt") return methods::LayerExchange::AggToDT;
  if (s == "none") return methods::LayerExchange::None;
  throw ConfigError(field, "unknown layer direction '" + s + "' (expected dt_to_agg, agg_to_dt or none)");
}

const char* policy_name(methods::ExchangePolicy::Kind k) {
  using K = methods::ExchangePolicy::Kind;
  switch (k) {
    case K::Static: return "static";
    case K::Reverse: return "reverse";
    case K::None: return "none";
    case K::Custom: break;
  }
  return "custom";
}

methods::ExchangePolicy::Kind parse_policy(const std::string& s, const std::string& field, bool allow_custom) {
  using K = methods::ExchangePolicy::Kind;
  if (s == "static") return K::Static;
  if (s == "reverse") return K::Reverse;
  if (s == "none") return K::None;
  if (s == "custom" && allow_custom) return K::Custom;
  throw ConfigError(field, std::string("expected static, reverse, none") + (allow_custom ? " or custom" : "") +
                               ", got '" + s + "'");
}

void parse_data(Node n, DataConfig& d) {
  std::string source = d.source == SourceKind::Csv ? "csv" : "synthetic";
  n.read("source", source);
  if (source == "synthetic") d.source = SourceKind::Synthetic;
  else if (source == "csv") d.source = SourceKind::Csv;
  else throw ConfigError(n.path("source"), "expected synthetic or csv");

  if (n.has("synthetic")) {
    Node s = n.child("synthetic");
    s.read("dim", d.synthetic.dim);
    s.read("n_real", d.synthetic.n_real);
    s.read("n_twin", d.synthetic.n_twin);
    s.read("anomaly_rate", d.synthetic.anomaly_rate);
    s.read("shift", d.synthetic.shift);
    s.read("noise_scale", d.synthetic.noise_scale);
    s.read("separation", d.synthetic.separation);
    s.read("anomaly_spread", d.synthetic.anomaly_spread);
    s.finish();
    checked(n.path("synthetic"), [&] { d.synthetic.validate(); });
  }
  if (n.has("csv")) {
    Node c = n.child("csv");
    std::string real = d.csv.real.string(), twin = d.csv.twin.string();
    c.read("real", real);
    c.read("twin", twin);
    c.read("schema", d.csv.schema);
    c.finish();
    d.csv.real = real;
    d.csv.twin = twin;
    checked(c.path("schema"), [&] { (void)data::CsvSchema::preset(d.csv.schema); });
  }
  if (d.source == SourceKind::Csv) require(!d.csv.real.empty(), n.path("csv.real"), "required for a csv source");

  n.read("test_fraction", d.test_fraction);
  require(d.test_fraction > 0.0 && d.test_fraction < 1.0, n.path("test_fraction"), "must lie in (0, 1)");
  if (n.has("partition")) {
    Node p = n.child("partition");
    std::string scheme = d.partition == data::PartitionScheme::Iid ? "iid" : "label_skew";
    p.read("scheme", scheme);
    if (scheme == "iid") d.partition = data::PartitionScheme::Iid;
    else if (scheme == "label_skew") d.partition = data::PartitionScheme::LabelSkew;
    else throw ConfigError(p.path("scheme"), "expected iid or label_skew");
    p.read("minority_fraction", d.minority_fraction);
    require(d.minority_fraction >= 0.0 && d.minority_fraction <= 1.0, p.path("minority_fraction"),
            "must lie in [0, 1]");
    p.finish();
  }
  n.read("standardize", d.standardize);
  n.finish();
}

void parse_fl(Node n, fl::FLConfig& f) {
  n.read("num_clients", f.num_clients);
  n.read("client_fraction", f.client_fraction);
  n.read("local_epochs", f.local_epochs);
  n.read("batch_size", f.batch_size);
  n.read("max_rounds", f.max_rounds);
  n.read("target_accuracy", f.target_accuracy);
  n.read("eval_cadence", f.eval_cadence);
  n.read("threads", f.threads);
  n.read("stop_at_target", f.stop_at_target);
  if (n.has("optimizer")) {
    Node o = n.child("optimizer");
    std::string kind = f.optimizer.kind == nn::OptimizerKind::Adam ? "adam" : "sgd";
    o.read("kind", kind);
    if (kind == "adam") f.optimizer.kind = nn::OptimizerKind::Adam;
    else if (kind == "sgd") f.optimizer.kind = nn::OptimizerKind::Sgd;
    else throw ConfigError(o.path("kind"), "expected adam or sgd");
    o.read("learning_rate", f.optimizer.learning_rate);
    o.read("beta1", f.optimizer.beta1);
    o.read("beta2", f.optimizer.beta2);
    o.read("epsilon", f.optimizer.epsilon);
    o.finish();
    checked(o.path(""), [&] { f.optimizer.validate(); });
  }
  n.finish();
  require(f.num_clients > 0, n.path("num_clients"), "must be positive");
  require(f.client_fraction > 0.0 && f.client_fraction <= 1.0, n.path("client_fraction"), "must lie in (0, 1]");
  require(f.local_epochs > 0, n.path("local_epochs"), "must be positive");
  require(f.batch_size > 0, n.path("batch_size"), "must be positive");
  require(f.max_rounds > 0, n.path("max_rounds"), "must be positive");
  require(f.target_accuracy >= 0.0 && f.target_accuracy <= 1.0, n.path("target_accuracy"), "must lie in [0, 1]");
  require(f.eval_cadence > 0, n.path("eval_cadence"), "must be positive");
  require(f.threads > 0, n.path("threads"), "must be positive");
}

void parse_methods(Node n, StrategySettings& s) {
  if (n.has("fedprox")) {
    Node c = n.child("fedprox");
    c.read("mu", s.fedprox_mu);
    c.finish();
    require(s.fedprox_mu >= 0.0, c.path("mu"), "must be >= 0");
  }
  if (n.has("hfl")) {
    Node c = n.child("hfl");
    c.read("num_edges", s.hfl.num_edges);
    c.read_list("assignment", s.hfl.assignment);
    c.read("edge_period", s.hfl.edge_period);
    c.finish();
    require(s.hfl.num_edges > 0, c.path("num_edges"), "must be positive");
    require(s.hfl.edge_period > 0, c.path("edge_period"), "must be positive");
  }
  if (n.has("twin")) {
    Node c = n.child("twin");
    c.read("pretrain_epochs", s.twin.pretrain_epochs);
    c.read("init_from_twin", s.twin.init_from_twin);
    c.finish();
  }
  if (n.has("dtml")) {
    Node c = n.child("dtml");
    if (c.has("alpha")) {
      double a = 0.0;
      c.read("alpha", a);
      s.dtml.alpha = a;
    }
    c.read("beta", s.dtml.beta);
    c.read("meta_batch", s.dtml.meta_batch);
    c.finish();
    checked(c.path(""), [&] { s.dtml.validate(); });
  }
  if (n.has("fpf")) {
    Node c = n.child("fpf");
    c.read("gamma", s.fpf.gamma);
    std::string sim = s.fpf.similarity == methods::Similarity::MatrixRV ? "matrix_rv" : "frobenius_cosine";
    c.read("similarity", sim);
    if (sim == "frobenius_cosine") s.fpf.similarity = methods::Similarity::FrobeniusCosine;
    else if (sim == "matrix_rv") s.fpf.similarity = methods::Similarity::MatrixRV;
    else throw ConfigError(c.path("similarity"), "expected frobenius_cosine or matrix_rv");
    c.finish();
    checked(c.path("gamma"), [&] { s.fpf.validate(); });
  }
  if (n.has("lpe")) {
    Node c = n.child("lpe");
    std::string policy = policy_name(s.lpe.kind);
    c.read("policy", policy);
    s.lpe.kind = parse_policy(policy, c.path("policy"), true);
    c.read("low", s.lpe.low);
    if (c.has("high")) {
      std::size_t h = 0;
      c.read("high", h);
      s.lpe.high = h;
    }
    std::vector<std::string> custom;
    for (auto e : s.lpe.custom) custom.emplace_back(exchange_name(e));
    c.read_list("custom", custom);
    s.lpe.custom.clear();
    for (std::size_t i = 0; i < custom.size(); ++i)
      s.lpe.custom.push_back(parse_exchange(custom[i], c.path("custom") + "[" + std::to_string(i) + "]"));
    c.finish();
    require(s.lpe.kind != methods::ExchangePolicy::Kind::Custom || !s.lpe.custom.empty(), c.path("custom"),
            "required for the custom policy");
    require(!s.lpe.high || s.lpe.low <= *s.lpe.high, c.path("high"), "must be >= low");
  }
  if (n.has("cwa")) {
    Node c = n.child("cwa");
    c.read("simultaneous_swap", s.cwa.simultaneous_swap);
    c.finish();
  }
  if (n.has("dtkd")) {
    Node c = n.child("dtkd");
    c.read("teacher_pretrain_epochs", s.dtkd.teacher_pretrain_epochs);
    c.read("soft_label_cache", s.dtkd.soft_label_cache);
    c.finish();
    require(s.dtkd.teacher_pretrain_epochs > 0, c.path("teacher_pretrain_epochs"), "must be positive");
  }
  n.finish();
}

ExperimentConfig from_json(const json& root) {
  ExperimentConfig c;
  Node n(root, "");
  n.read("preset", c.preset);
  n.read("name", c.name);
  require(!c.name.empty() && c.name.find_first_of("/\\") == std::string::npos, "name",
          "must be a non-empty name without path separators");
  if (n.has("data")) parse_data(n.child("data"), c.data);
  if (n.has("model")) {
    Node m = n.child("model");
    m.read_list("hidden", c.hidden);
    m.finish();
    require(!c.hidden.empty(), "model.hidden", "needs at least one hidden layer");
    for (std::size_t h : c.hidden) require(h > 0, "model.hidden", "layer sizes must be positive");
  }
  if (n.has("fl")) parse_fl(n.child("fl"), c.fl);
  n.read_list("strategies", c.strategies);
  require(!c.strategies.empty(), "strategies", "must name at least one strategy");
  for (std::size_t i = 0; i < c.strategies.size(); ++i) {
    const auto& names = strategy_names();
    require(std::find(names.begin(), names.end(), c.strategies[i]) != names.end(),
            "strategies[" + std::to_string(i) + "]", "unknown strategy '" + c.strategies[i] + "'");
  }
  n.read_list("seeds", c.seeds);
  require(!c.seeds.empty(), "seeds", "must list at least one seed");
  if (n.has("methods")) parse_methods(n.child("methods"), c.settings);
  if (n.has("alignment")) {
    Node a = n.child("alignment");
    a.read("standardize", c.alignment.standardize);
    a.read("projections", c.alignment.num_projections);
    a.read("seed", c.alignment.seed);
    a.finish();
    require(c.alignment.num_projections > 0, "alignment.projections", "must be positive");
  }
  if (n.has("sweep")) {
    Node s = n.child("sweep");
    SweepSpec spec;
    s.read("param", spec.param);
    s.read_list("values", spec.values);
    s.finish();
    const auto& names = sweep_params();
    require(std::find(names.begin(), names.end(), spec.param) != names.end(), "sweep.param",
            "unknown sweep parameter '" + spec.param + "'");
    require(!spec.values.empty(), "sweep.values", "must not be empty");
    c.sweep = spec;
  }
  n.read("output_root", c.output_root);
  n.read("jobs", c.jobs);
  require(c.jobs > 0, "jobs", "must be positive");
  n.finish();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["preset"] = c.preset;
  const auto& d = c.data;
  j["data"] = {
      {"source", d.source == SourceKind::Csv ? "csv" : "synthetic"},
      {"synthetic",
       {{"dim", d.synthetic.dim},
        {"n_real", d.synthetic.n_real},
        {"n_twin", d.synthetic.n_twin},
        {"anomaly_rate", d.synthetic.anomaly_rate},
        {"shift", d.synthetic.shift},
        {"noise_scale", d.synthetic.noise_scale},
        {"separation", d.synthetic.separation},
        {"anomaly_spread", d.synthetic.anomaly_spread}}},
      {"csv", {{"real", d.csv.real.string()}, {"twin", d.csv.twin.string()}, {"schema", d.csv.schema}}},
      {"test_fraction", d.test_fraction},
      {"partition",
       {{"scheme", d.partition == data::PartitionScheme::Iid ? "iid" : "label_skew"},
        {"minority_fraction", d.minority_fraction}}},
      {"standardize", d.standardize}};
  j["model"] = {{"hidden", c.hidden}};
  const auto& f = c.fl;
  j["fl"] = {{"num_clients", f.num_clients},
             {"client_fraction", f.client_fraction},
             {"local_epochs", f.local_epochs},
             {"batch_size", f.batch_size},
             {"max_rounds", f.max_rounds},
             {"target_accuracy", f.target_accuracy},
             {"eval_cadence", f.eval_cadence},
             {"threads", f.threads},
             {"stop_at_target", f.stop_at_target},
             {"optimizer",
              {{"kind", f.optimizer.kind == nn::OptimizerKind::Adam ? "adam" : "sgd"},
               {"learning_rate", f.optimizer.learning_rate},
               {"beta1", f.optimizer.beta1},
               {"beta2", f.optimizer.beta2},
               {"epsilon", f.optimizer.epsilon}}}};
  j["strategies"] = c.strategies;
  j["seeds"] = c.seeds;
  const auto& s = c.settings;
  json custom = json::array();
  for (auto e : s.lpe.custom) custom.push_back(exchange_name(e));
  j["methods"] = {
      {"fedprox", {{"mu", s.fedprox_mu}}},
      {"hfl", {{"num_edges", s.hfl.num_edges}, {"assignment", s.hfl.assignment}, {"edge_period", s.hfl.edge_period}}},
      {"twin", {{"pretrain_epochs", s.twin.pretrain_epochs}, {"init_from_twin", s.twin.init_from_twin}}},
      {"dtml",
       {{"alpha", s.dtml.alpha ? json(*s.dtml.alpha) : json(nullptr)},
        {"beta", s.dtml.beta},
        {"meta_batch", s.dtml.meta_batch}}},
      {"fpf",
       {{"gamma", s.fpf.gamma},
        {"similarity", s.fpf.similarity == methods::Similarity::MatrixRV ? "matrix_rv" : "frobenius_cosine"}}},
      {"lpe",
       {{"policy", policy_name(s.lpe.kind)},
        {"low", s.lpe.low},
        {"high", s.lpe.high ? json(*s.lpe.high) : json(nullptr)},
        {"custom", custom}}},
      {"cwa", {{"simultaneous_swap", s.cwa.simultaneous_swap}}},
      {"dtkd",
       {{"teacher_pretrain_epochs", s.dtkd.teacher_pretrain_epochs}, {"soft_label_cache", s.dtkd.soft_label_cache}}}};
  j["alignment"] = {{"standardize", c.alignment.standardize},
                    {"projections", c.alignment.num_projections},
                    {"seed", c.alignment.seed}};
  j["sweep"] = c.sweep ? json{{"param", c.sweep->param}, {"values", c.sweep->values}} : json(nullptr);
  j["output_root"] = c.output_root;
  j["jobs"] = c.jobs;
  return j;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

json metrics_json(const std::optional<fl::RoundMetrics>& m) {
  if (!m) return nullptr;
  return {{"accuracy", m->accuracy},
          {"precision", m->precision},
          {"recall", m->recall},
          {"f1", m->f1},
          {"auc", m->auc ? json(*m->auc) : json(nullptr)}};
}

json cell_json(const Cell& c) {
  const auto& s = c.result.summary;
  json j{{"strategy", c.strategy}, {"seed", c.seed}};
  if (!c.sweep_value.empty()) j["value"] = c.sweep_value;
  j["rounds_to_target"] = s.rounds_to_target ? json(*s.rounds_to_target) : json(nullptr);
  j["rounds_run"] = s.rounds_run;
  j["final"] = metrics_json(s.final_metrics);
  j["params_up"] = s.total_up;
  j["params_down"] = s.total_down;
  json diag = json::array();
  bool any = false;
  for (const auto& r : c.result.records) {
    diag.push_back(r.diagnostic ? json(*r.diagnostic) : json(nullptr));
    any = any || r.diagnostic.has_value();
  }
  if (any) j["diagnostic"] = diag;
  return j;
}

std::optional<double> median_of(std::vector<double> xs) {
  if (xs.empty()) return std::nullopt;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Median rounds, count reaching target and median final accuracy/AUC over a
// group of cells.
json group_summary(const std::vector<const Cell*>& group, std::size_t max_rounds) {
  std::vector<std::optional<std::size_t>> rounds;
  std::vector<double> acc, auc;
  std::size_t reached = 0;
  for (const Cell* c : group) {
    const auto& s = c->result.summary;
    rounds.push_back(s.rounds_to_target);
    if (s.rounds_to_target) ++reached;
    if (s.final_metrics) {
      acc.push_back(s.final_metrics->accuracy);
      if (s.final_metrics->auc) auc.push_back(*s.final_metrics->auc);
    }
  }
  const auto med = median_rounds(rounds);
  json j;
  j["median_rounds_to_target"] = med ? json(*med) : json(">" + std::to_string(max_rounds));
  j["reached"] = reached;
  j["runs"] = group.size();
  const auto ma = median_of(acc);
  const auto mu = median_of(auc);
  j["median_final_accuracy"] = ma ? json(*ma) : json(nullptr);
  j["median_final_auc"] = mu ? json(*mu) : json(nullptr);
  return j;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + p.string() + "'");
}

std::string csv_name(const Cell& c) {
  std::string stem = c.sweep_value.empty() ? "" : c.sweep_value + "_";
  return stem + c.strategy + "_seed" + std::to_string(c.seed) + ".csv";
}

void write_cell_csvs(const std::filesystem::path& dir, const std::vector<Cell>& cells) {
  for (const auto& c : cells) {
    std::ostringstream os;
    write_rounds_csv(os, c.result.records);
    write_text(dir / csv_name(c), os.str());
  }
}

struct CellJob {
  ExperimentConfig config;
  std::string strategy;
  std::uint64_t seed;
  std::string value;
};

std::vector<Cell> execute(const std::vector<CellJob>& jobs, std::size_t workers) {
  std::vector<Cell> cells(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  auto work = [&](std::size_t i) {
    try {
      const auto& job = jobs[i];
      auto prepared = prepare_data(job.config, job.seed);
      auto strategy = make_strategy(job.strategy, job.config.settings);
      fl::FLConfig flc = job.config.fl;
      flc.seed = job.seed;
      cells[i] = Cell{job.strategy, job.seed, job.value, fl::run_experiment(flc, *strategy, prepared.federation)};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) work(i);
  } else {
    std::mutex m;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(m);
            if (next >= jobs.size()) return;
            i = next++;
          }
          work(i);
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cells;
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("", "config must be a JSON object");
  if (root.contains("preset") && !root["preset"].is_null()) {
    if (!root["preset"].is_string()) throw ConfigError("preset", "expected a string");
    const std::string name = root["preset"].get<std::string>();
    if (!name.empty()) {
      json merged = preset_patch(name);
      merged.merge_patch(root);
      root = std::move(merged);
    }
  }
  return from_json(root);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

std::string normalized_json(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

void apply_sweep_value(ExperimentConfig& config, const std::string& param, const std::string& value) {
  const std::string field = "sweep." + param;
  auto as_count = [&] {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != value.size() || value.empty() || value[0] == '-' || v == 0)
      throw ConfigError(field, "expected a positive integer, got '" + value + "'");
    return static_cast<std::size_t>(v);
  };
  auto as_real = [&] {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != value.size() || value.empty()) throw ConfigError(field, "expected a number, got '" + value + "'");
    return v;
  };
  if (param == "E") {
    config.fl.local_epochs = as_count();
  } else if (param == "B") {
    config.fl.batch_size = as_count();
  } else if (param == "C") {
    const double c = as_real();
    require(c > 0.0 && c <= 1.0, field, "must lie in (0, 1]");
    config.fl.client_fraction = c;
  } else if (param == "gamma") {
    const double g = as_real();
    require(g >= 0.0 && g <= 1.0, field, "must lie in [0, 1]");
    config.settings.fpf.gamma = g;
  } else if (param == "teacher_epochs") {
    config.settings.dtkd.teacher_pretrain_epochs = as_count();
  } else if (param == "exchange_policy") {
    config.settings.lpe.kind = parse_policy(value, field, false);
  } else {
    throw ConfigError("sweep.param", "unknown sweep parameter '" + param + "'");
  }
}

std::unique_ptr<fl::Strategy> make_strategy(const std::string& name, const StrategySettings& s) {
  if (name == "fedavg") return std::make_unique<fl::FedAvg>();
  if (name == "fedprox") return std::make_unique<fl::FedProx>(s.fedprox_mu);
  if (name == "hfl") return std::make_unique<fl::HierarchicalFL>(s.hfl);
  if (name == "dtml") return std::make_unique<methods::DTML>(s.dtml, s.twin);
  if (name == "fpf") return std::make_unique<methods::FPF>(s.fpf, s.twin);
  if (name == "lpe") return std::make_unique<methods::LPE>(s.lpe, s.twin);
  if (name == "cwa") return std::make_unique<methods::CWA>(s.cwa, s.twin);
  if (name == "dtkd") return std::make_unique<methods::DTKD>(s.dtkd);
  throw ConfigError("strategies", "unknown strategy '" + name + "'");
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  data::Dataset real;
  std::optional<data::Dataset> twin;
  const auto& d = config.data;
  if (d.source == SourceKind::Synthetic) {
    auto scenario = d.synthetic;
    scenario.seed = seed;
    checked("data.synthetic", [&] { scenario.validate(); });
    auto generated = data::generate_scenario(scenario);
    real = std::move(generated.real);
    twin = std::move(generated.twin);
  } else {
    const auto schema = data::CsvSchema::preset(d.csv.schema);
    real = data::load_csv(d.csv.real, schema);
    if (!d.csv.twin.empty()) {
      twin = data::load_csv(d.csv.twin, schema);
      if (twin->dim != real.dim)
        throw ConfigError("data.csv.twin", "twin has " + std::to_string(twin->dim) + " features, real has " +
                                               std::to_string(real.dim));
    }
  }

  if (d.standardize) {
    if (twin) {
      auto joint = data::standardize_jointly(real, *twin);
      real = std::move(joint.a);
      twin = std::move(joint.b);
    } else {
      const data::Dataset* pool[] = {&real};
      real = data::Standardizer::fit(pool).apply(real);
    }
  }

  auto [train, test] = data::train_test_split(real, d.test_fraction, seed);
  if (train.size() < config.fl.num_clients)
    throw ConfigError("fl.num_clients", "K=" + std::to_string(config.fl.num_clients) + " exceeds the " +
                                            std::to_string(train.size()) + " training rows");
  data::PartitionSpec ps{config.fl.num_clients, d.partition, d.minority_fraction, seed};

  PreparedData out;
  out.federation.arch = nn::ModelArch::mlp(real.dim, config.hidden);
  out.federation.clients = data::partition(train, ps);
  out.federation.test = std::move(test);
  out.federation.twin = std::move(twin);
  out.real = std::move(real);
  return out;
}

std::pair<data::Dataset, data::Dataset> alignment_pair(const ExperimentConfig& config) {
  const auto& d = config.data;
  if (d.source == SourceKind::Synthetic) {
    auto scenario = d.synthetic;
    scenario.seed = config.seeds.front();
    checked("data.synthetic", [&] { scenario.validate(); });
    auto g = data::generate_scenario(scenario);
    return {std::move(g.real), std::move(g.twin)};
  }
  if (d.csv.twin.empty()) throw ConfigError("data.csv.twin", "align needs a twin CSV");
  const auto schema = data::CsvSchema::preset(d.csv.schema);
  auto real = data::load_csv(d.csv.real, schema);
  auto twin = data::load_csv(d.csv.twin, schema);
  if (real.dim != twin.dim)
    throw ConfigError("data.csv.twin", "dimension mismatch: real has " + std::to_string(real.dim) +
                                           " features, twin has " + std::to_string(twin.dim));
  return {std::move(real), std::move(twin)};
}

std::vector<Cell> run_cells(const ExperimentConfig& config) {
  std::vector<CellJob> jobs;
  for (const auto& s : config.strategies)
    for (auto seed : config.seeds) jobs.push_back({config, s, seed, ""});
  return execute(jobs, config.jobs);
}

void write_rounds_csv(std::ostream& out, const std::vector<fl::RoundRecord>& records) {
  out << "round,accuracy,precision,recall,f1,auc,params_up,params_down,reached_target,wall_time_ms\n";
  for (const auto& r : records) {
    out << r.round << ',';
    if (r.metrics) {
      out << fmt(r.metrics->accuracy) << ',' << fmt(r.metrics->precision) << ',' << fmt(r.metrics->recall) << ','
          << fmt(r.metrics->f1) << ',' << (r.metrics->auc ? fmt(*r.metrics->auc) : "") << ',';
    } else {
      out << ",,,,,";
    }
    out << r.params_up << ',' << r.params_down << ',' << (r.reached_target ? 1 : 0) << ','
        << fmt(static_cast<double>(r.wall_time.count()) / 1e6) << '\n';
  }
}

std::optional<double> median_rounds(const std::vector<std::optional<std::size_t>>& rounds) {
  if (rounds.empty()) return std::nullopt;
  std::vector<std::optional<std::size_t>> sorted = rounds;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (!a) return false;
    if (!b) return true;
    return *a < *b;
  });
  const std::size_t n = sorted.size();
  if (n % 2) {
    const auto& m = sorted[n / 2];
    return m ? std::optional<double>(static_cast<double>(*m)) : std::nullopt;
  }
  const auto& lo = sorted[n / 2 - 1];
  const auto& hi = sorted[n / 2];
  if (!lo || !hi) return std::nullopt;
  return 0.5 * static_cast<double>(*lo + *hi);
}

std::filesystem::path bundle_dir(const ExperimentConfig& config) {
  std::filesystem::path root = config.output_root;
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') root = env;
  return root / config.name;
}

std::filesystem::path write_run_bundle(const ExperimentConfig& config, const std::vector<Cell>& cells) {
  const auto dir = bundle_dir(config);
  std::filesystem::create_directories(dir);
  write_cell_csvs(dir, cells);

  json summary;
  summary["config"] = to_json(config);
  summary["seeds"] = config.seeds;
  summary["cells"] = json::array();
  for (const auto& c : cells) summary["cells"].push_back(cell_json(c));
  summary["strategies"] = json::object();
  for (const auto& s : config.strategies) {
    std::vector<const Cell*> group;
    for (const auto& c : cells)
      if (c.strategy == s) group.push_back(&c);
    summary["strategies"][s] = group_summary(group, config.fl.max_rounds);
  }
  write_text(dir / "config.json", normalized_json(config));
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return dir;
}

std::filesystem::path run_sweep(ExperimentConfig config, const SweepSpec& sweep) {
  const auto& names = sweep_params();
  if (std::find(names.begin(), names.end(), sweep.param) == names.end())
    throw ConfigError("sweep.param", "unknown sweep parameter '" + sweep.param + "' (expected E, B, C, gamma, "
                                     "teacher_epochs or exchange_policy)");
  if (sweep.values.empty()) throw ConfigError("sweep.values", "must not be empty");
  config.sweep = sweep;

  std::vector<CellJob> jobs;
  for (const auto& v : sweep.values) {
    ExperimentConfig cell = config;
    apply_sweep_value(cell, sweep.param, v);
    for (const auto& s : cell.strategies)
      for (auto seed : cell.seeds) jobs.push_back({cell, s, seed, v});
  }
  const auto cells = execute(jobs, config.jobs);

  const auto dir = bundle_dir(config) / ("sweep_" + sweep.param);
  std::filesystem::create_directories(dir);
  write_cell_csvs(dir, cells);

  json out;
  out["config"] = to_json(config);
  out["param"] = sweep.param;
  out["values"] = sweep.values;
  out["seeds"] = config.seeds;
  out["cells"] = json::array();
  for (const auto& c : cells) out["cells"].push_back(cell_json(c));
  out["medians"] = json::array();
  for (const auto& v : sweep.values)
    for (const auto& s : config.strategies) {
      std::vector<const Cell*> group;
      for (const auto& c : cells)
        if (c.sweep_value == v && c.strategy == s) group.push_back(&c);
      json row = group_summary(group, config.fl.max_rounds);
      row["value"] = v;
      row["strategy"] = s;
      out["medians"].push_back(row);
    }
  write_text(dir / "config.json", normalized_json(config));
  write_text(dir / "sweep.json", out.dump(2) + "\n");
  return dir;
}

std::filesystem::path run_alignment(const ExperimentConfig& config) {
  auto [real, twin] = alignment_pair(config);
  const auto report = align::alignment_report(real, twin, config.alignment);
  const auto dir = bundle_dir(config);
  std::filesystem::create_directories(dir);
  write_text(dir / "alignment.json", align::report_json(report));
  std::ostringstream os;
  align::write_pca_csv(os, report.pca);
  write_text(dir / "pca.csv", os.str());
  write_text(dir / "config.json", normalized_json(config));
  return dir;
}

}  // namespace dtfl::experiment

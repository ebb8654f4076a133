#include "fmpestf/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "fmpestf/checkpoint.hpp"
#include "fmpestf/errors.hpp"
#include "fmpestf/gradcheck_suite.hpp"
#include "fmpestf/metrics.hpp"
#include "fmpestf/training.hpp"
#include "json_fields.hpp"

namespace fmpestf {

using detail::read_field;
using detail::reject_unknown;

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"series", c.series},
                     {"adjacency", c.adjacency},
                     {"split", c.split},
                     {"window_stride", c.window_stride}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  reject_unknown(j, {"series", "adjacency", "split", "window_stride"}, "data");
  read_field(j, "series", c.series);
  read_field(j, "adjacency", c.adjacency);
  read_field(j, "split", c.split);
  read_field(j, "window_stride", c.window_stride);
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"nodes", c.nodes},       {"days", c.days},         {"interval_min", c.interval_min},
                     {"noise", c.noise},       {"coupling", c.coupling}, {"weekly_amplitude", c.weekly_amplitude}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  reject_unknown(j, {"nodes", "days", "interval_min", "noise", "coupling", "weekly_amplitude"}, "synth");
  read_field(j, "nodes", c.nodes);
  read_field(j, "days", c.days);
  read_field(j, "interval_min", c.interval_min);
  read_field(j, "noise", c.noise);
  read_field(j, "coupling", c.coupling);
  read_field(j, "weekly_amplitude", c.weekly_amplitude);
}

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"command", m.command}, {"seed", m.seed},   {"ablation", m.ablation},
                     {"model", m.model},     {"train", m.train}, {"data", m.data},
                     {"synth", m.synth},     {"checkpoint", m.checkpoint}, {"op", m.op}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  reject_unknown(j, {"command", "seed", "ablation", "model", "train", "data", "synth", "checkpoint", "op"},
                 "manifest");
  read_field(j, "command", m.command);
  read_field(j, "seed", m.seed);
  read_field(j, "ablation", m.ablation);
  if (j.contains("model")) from_json(j.at("model"), m.model);
  if (j.contains("train")) from_json(j.at("train"), m.train);
  if (j.contains("data")) from_json(j.at("data"), m.data);
  if (j.contains("synth")) from_json(j.at("synth"), m.synth);
  read_field(j, "checkpoint", m.checkpoint);
  read_field(j, "op", m.op);
}

RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunManifest m;
  from_json(j, m);
  return m;
}

void save_manifest(const std::filesystem::path& dir, const RunManifest& manifest) {
  const nlohmann::json j = manifest;
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 1;
  std::string ablate;
  bool dump_graphs = false;

  // command specific
  std::size_t nodes = 8, days = 14;
  int interval = 5;
  double noise = 1.0, coupling = 1.0, weekly = 0.15;
  std::string data, adjacency, checkpoint;
  std::size_t epochs = 0, batch = 0, patience = 0, stride = 1;
  double lr = 0.0;
  std::string op = "model";
  std::string sign_flip;
};

struct Options {
  CLI::Option* config = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* out = nullptr;
  CLI::Option* threads = nullptr;
  CLI::Option* ablate = nullptr;
  std::map<std::string, CLI::Option*> named;

  bool given(const std::string& name) const {
    auto it = named.find(name);
    return it != named.end() && it->second->count() > 0;
  }
};

void add_shared(CLI::App* cmd, Flags& f, Options& o) {
  o.config = cmd->add_option("--config", f.config, "JSON config or manifest");
  o.seed = cmd->add_option("--seed", f.seed, "random seed");
  o.out = cmd->add_option("--out", f.out, "output directory");
  o.threads = cmd->add_option("--threads", f.threads, "worker threads (1 = deterministic reference)");
  o.ablate = cmd->add_option("--ablate", f.ablate, "no-att | no-adj | no-dyn");
  cmd->add_flag("--dump-graphs", f.dump_graphs, "write fusion matrices");
}

std::filesystem::path output_dir(const Flags& f, const std::string& fallback) {
  std::filesystem::path dir = f.out.empty() ? fallback : f.out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

// Starts from --config (when given) and applies explicit flags on top.
RunManifest resolve(const std::string& command, const Flags& f, const Options& o) {
  RunManifest m;
  if (!f.config.empty()) m = load_manifest(f.config);
  m.command = command;
  if (o.seed->count()) m.seed = f.seed;
  if (o.threads->count()) m.train.threads = f.threads;
  if (o.ablate->count()) m.ablation = ablation_name(parse_ablation(f.ablate));
  if (m.ablation == "full") m.ablation = "none";
  m.model.seed = m.seed;
  m.train.seed = m.seed;
  if (o.given("nodes")) m.synth.nodes = f.nodes;
  if (o.given("days")) m.synth.days = f.days;
  if (o.given("interval")) m.synth.interval_min = f.interval;
  if (o.given("noise")) m.synth.noise = f.noise;
  if (o.given("coupling")) m.synth.coupling = f.coupling;
  if (o.given("weekly-amplitude")) m.synth.weekly_amplitude = f.weekly;
  if (o.given("data")) m.data.series = f.data;
  if (o.given("adjacency")) m.data.adjacency = f.adjacency;
  if (o.given("stride")) m.data.window_stride = f.stride;
  if (o.given("epochs")) m.train.max_epochs = f.epochs;
  if (o.given("batch")) m.train.batch_size = f.batch;
  if (o.given("patience")) m.train.patience = f.patience;
  if (o.given("lr")) m.train.learning_rate = f.lr;
  if (o.given("checkpoint")) m.checkpoint = f.checkpoint;
  if (o.given("op")) m.op = f.op;
  return m;
}

void write_matrix(const std::filesystem::path& path, const Tensor& m) {
  std::ostringstream os;
  const std::size_t n = m.dim(0), cols = m.dim(1);
  char buf[40];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m[i * cols + j]);
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
  write_text_file(path, os.str());
}

void dump_graphs(const std::filesystem::path& dir, const GraphTrace& trace) {
  const auto graphs = dir / "graphs";
  std::filesystem::create_directories(graphs);
  for (const auto& [label, matrix] : trace.matrices) write_matrix(graphs / (label + ".csv"), matrix);
}

struct LoadedData {
  Series series;
  Tensor prompt;
  DatasetSplit split;
};

// Reads the series and the prompt graph, then fixes the data-derived model
// fields (nodes, channels, slots per day).
LoadedData load_data(RunManifest& m) {
  if (m.data.series.empty()) throw ConfigError("no series file given (--data)");
  LoadedData d;
  if (m.data.window_stride == 0) throw ConfigError("data.window_stride must be positive");
  d.series = load_series(m.data.series);
  m.model.nodes = d.series.nodes();
  m.model.input_channels = d.series.channels();
  m.model.slots_per_day = d.series.slots_per_day;
  m.model = apply_ablation(m.model, parse_ablation(m.ablation));
  if (m.model.use_prompt) {
    if (m.data.adjacency.empty()) {
      throw ConfigError("this model variant uses the adjacency prompt; pass --adjacency");
    }
    d.prompt = load_adjacency(m.data.adjacency, d.series.nodes()).adjacency;
  }
  m.model.validate();
  m.train.validate();
  d.split = split_chronological(make_windows(d.series, m.model.history, m.model.horizon, m.data.window_stride),
                                m.data.split);
  return d;
}

int cmd_synth(const RunManifest& base, const Flags& f, std::ostream& out) {
  RunManifest m = base;
  if (m.synth.nodes < 2) throw ConfigError("synth needs at least 2 nodes (graph coupling)");
  const auto dir = output_dir(f, "synth_out");
  SynthOptions so;
  so.n_nodes = m.synth.nodes;
  so.days = m.synth.days;
  so.interval_min = m.synth.interval_min;
  so.seed = m.seed;
  so.noise = m.synth.noise;
  so.coupling = m.synth.coupling;
  so.weekly_amplitude = m.synth.weekly_amplitude;
  const SyntheticDataset ds = synth_series(so);
  write_series(dir / "series.csv", ds.series);
  write_adjacency(dir / "adjacency.csv", ds.graph);
  m.data.series = (dir / "series.csv").string();
  m.data.adjacency = (dir / "adjacency.csv").string();
  save_manifest(dir, m);
  out << "Dataset,Nodes,Time interval,Samples,Time range\n";
  out << "synthetic," << ds.series.nodes() << ',' << ds.series.interval_min << "min," << ds.series.length() << ','
      << m.synth.days << " days\n";
  return kExitOk;
}

MetricReport baseline_report(const std::vector<SampleWindow>& windows, double threshold,
                             const std::function<Tensor(const SampleWindow&)>& forecast) {
  std::vector<Tensor> preds, targets;
  for (const auto& w : windows) {
    preds.push_back(forecast(w));
    targets.push_back(w.target);
  }
  return compute_metrics(preds, targets, threshold);
}

void write_reports(const std::filesystem::path& dir, const FmpestfModel& model, const LoadedData& d,
                   const RunManifest& m, std::ostream& out) {
  const double thr = m.train.mask_threshold;
  const std::size_t threads = m.train.threads;
  const MetricReport val = evaluate(model, d.split.val, d.prompt, thr, threads);
  const MetricReport test = evaluate(model, d.split.test, d.prompt, thr, threads);
  const std::size_t fit_steps = d.split.train.back().origin() + m.model.horizon + 1;
  const HistoricalAverage ha(d.series, fit_steps);
  const std::size_t h = m.model.horizon;
  const MetricReport ha_report =
      baseline_report(d.split.test, thr, [&](const SampleWindow& w) { return ha.forecast(w, h); });
  const MetricReport lv_report = baseline_report(
      d.split.test, thr, [&](const SampleWindow& w) { return last_value_forecast(d.series, w, h); });
  std::ostringstream table;
  write_metric_table(table, {{"val", val},
                             {"test", test},
                             {"historical_average", ha_report},
                             {"last_value", lv_report}});
  write_text_file(dir / "metrics.csv", table.str());
  std::ostringstream curve;
  write_horizon_curve(curve, test);
  write_text_file(dir / "horizon.csv", curve.str());
  out << table.str();
}

int cmd_train(const RunManifest& base, const Flags& f, std::ostream& out) {
  RunManifest m = base;
  LoadedData d = load_data(m);
  const auto dir = output_dir(f, "train_out");
  save_manifest(dir, m);
  FmpestfModel model = build_variant(m.model);
  std::ofstream log(dir / "train_log.txt");
  if (!log) throw IoError("cannot write " + (dir / "train_log.txt").string());
  for (const auto& w : d.split.warnings) out << "warning: " << w << '\n';
  const TrainResult r = train(model, d.split, d.prompt, m.train, &log);
  save_checkpoint(dir / "checkpoint.ckpt", model);
  out << "best_epoch=" << r.best_epoch << " epochs=" << r.log.size() << '\n';
  write_reports(dir, model, d, m, out);
  if (f.dump_graphs) {
    GraphTrace trace;
    model.predict(d.split.test.front(), d.prompt, &trace);
    dump_graphs(dir, trace);
  }
  return kExitOk;
}

// Loads the checkpoint, then the data. Without --config the checkpoint's
// model settings are used; either way the result must match the stored config.
std::pair<FmpestfModel, LoadedData> checkpoint_and_data(RunManifest& m, const Options& o) {
  if (m.checkpoint.empty()) throw ConfigError("no checkpoint given (--checkpoint)");
  FmpestfModel model = load_checkpoint(m.checkpoint);
  if (!o.config->count()) m.model = model.config();
  LoadedData d = load_data(m);
  const auto diffs = config_differences(model.config(), m.model);
  if (!diffs.empty()) {
    std::string names;
    for (const auto& name : diffs) names += (names.empty() ? "" : ", ") + name;
    throw ConfigError("checkpoint is incompatible with the config; differing fields: " + names);
  }
  return {std::move(model), std::move(d)};
}

int cmd_eval(const RunManifest& base, const Flags& f, const Options& o, std::ostream& out) {
  RunManifest m = base;
  auto [model, d] = checkpoint_and_data(m, o);
  const auto dir = output_dir(f, "eval_out");
  save_manifest(dir, m);
  write_reports(dir, model, d, m, out);
  return kExitOk;
}

int cmd_predict(const RunManifest& base, const Flags& f, const Options& o, std::ostream& out) {
  RunManifest m = base;
  auto [model, d] = checkpoint_and_data(m, o);
  const std::size_t len = model.config().history;
  if (d.series.length() < len) throw ContractError("series is shorter than the model history");
  SampleWindow w;
  w.start = d.series.length() - len;
  w.history = Tensor({d.series.channels(), d.series.nodes(), len}, 0.0);
  for (std::size_t c = 0; c < d.series.channels(); ++c) {
    for (std::size_t n = 0; n < d.series.nodes(); ++n) {
      for (std::size_t t = 0; t < len; ++t) w.history.at({c, n, t}) = d.series.values.at({c, n, w.start + t});
    }
  }
  for (std::size_t t = 0; t < len; ++t) w.time_index.push_back(d.series.time_at(w.start + t));
  model.normalizer().normalize(w.history);
  GraphTrace trace;
  const Tensor y = model.predict(w, d.prompt, f.dump_graphs ? &trace : nullptr);
  const auto dir = output_dir(f, "predict_out");
  save_manifest(dir, m);
  std::ostringstream os;
  const std::size_t horizon = y.dim(1);
  os << "node";
  for (std::size_t h = 0; h < horizon; ++h) os << ",h" << h + 1;
  os << '\n';
  char buf[40];
  for (std::size_t n = 0; n < y.dim(0); ++n) {
    os << n;
    for (std::size_t h = 0; h < horizon; ++h) {
      std::snprintf(buf, sizeof buf, "%.17g", y[n * horizon + h]);
      os << ',' << buf;
    }
    os << '\n';
  }
  write_text_file(dir / "predictions.csv", os.str());
  if (f.dump_graphs) dump_graphs(dir, trace);
  out << os.str();
  return kExitOk;
}

int cmd_gradcheck(const RunManifest& base, const Flags& f, std::ostream& out) {
  RunManifest m = base;
  m.model = toy_model_config(m.seed);
  const GradCheckReport r = run_toy_grad_check(m.op, m.seed, f.sign_flip);
  constexpr double kTolerance = 1e-4;
  for (const auto& p : r.per_parameter) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "param=%s max_rel_error=%.3e index=%zu analytic=%.6e numeric=%.6e\n",
                  p.id.c_str(), p.max_rel_error, p.worst_index, p.analytic, p.numeric);
    out << buf;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "scope=%s entries=%zu max_rel_error=%.3e worst=%s[%zu] status=%s\n",
                m.op.c_str(), r.entries_checked, r.max_rel_error, r.worst_parameter.c_str(), r.worst_index,
                r.passed(kTolerance) ? "PASS" : "FAIL");
  out << buf;
  if (!f.out.empty()) {
    const auto dir = output_dir(f, f.out);
    save_manifest(dir, m);
  }
  return r.passed(kTolerance) ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial-temporal traffic forecasting"};
  app.require_subcommand(1);
  Flags f;
  std::map<std::string, Options> opts;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_shared(synth, f, opts["synth"]);
  opts["synth"].named["nodes"] = synth->add_option("--nodes", f.nodes);
  opts["synth"].named["days"] = synth->add_option("--days", f.days);
  opts["synth"].named["interval"] = synth->add_option("--interval", f.interval, "minutes per step");
  opts["synth"].named["noise"] = synth->add_option("--noise", f.noise);
  opts["synth"].named["coupling"] = synth->add_option("--coupling", f.coupling);
  opts["synth"].named["weekly-amplitude"] = synth->add_option("--weekly-amplitude", f.weekly);

  auto data_flags = [&](CLI::App* cmd, Options& o) {
    o.named["data"] = cmd->add_option("--data", f.data, "series file");
    o.named["adjacency"] = cmd->add_option("--adjacency", f.adjacency, "adjacency file");
    o.named["stride"] = cmd->add_option("--stride", f.stride, "window stride");
  };
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_shared(train_cmd, f, opts["train"]);
  data_flags(train_cmd, opts["train"]);
  opts["train"].named["epochs"] = train_cmd->add_option("--epochs", f.epochs);
  opts["train"].named["batch"] = train_cmd->add_option("--batch", f.batch);
  opts["train"].named["patience"] = train_cmd->add_option("--patience", f.patience);
  opts["train"].named["lr"] = train_cmd->add_option("--lr", f.lr);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_shared(eval_cmd, f, opts["eval"]);
  data_flags(eval_cmd, opts["eval"]);
  opts["eval"].named["checkpoint"] = eval_cmd->add_option("--checkpoint", f.checkpoint);

  auto* predict_cmd = app.add_subcommand("predict", "forecast past the end of a series");
  add_shared(predict_cmd, f, opts["predict"]);
  data_flags(predict_cmd, opts["predict"]);
  opts["predict"].named["checkpoint"] = predict_cmd->add_option("--checkpoint", f.checkpoint);

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check on a toy model");
  add_shared(grad_cmd, f, opts["gradcheck"]);
  opts["gradcheck"].named["op"] =
      grad_cmd->add_option("--op", f.op, "model, embedding, attconv, fgraph, encoder, glu or head");
  grad_cmd->add_option("--inject-sign-flip", f.sign_flip, "negate this parameter's analytic gradient");

  std::vector<std::string> argv_store{"fmpestf"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    for (const auto& [name, o] : opts) {
      CLI::App* cmd = app.get_subcommand(name);
      if (!cmd->parsed()) continue;
      const RunManifest m = resolve(name, f, o);
      if (name == "synth") return cmd_synth(m, f, out);
      if (name == "train") return cmd_train(m, f, out);
      if (name == "eval") return cmd_eval(m, f, o, out);
      if (name == "predict") return cmd_predict(m, f, o, out);
      return cmd_gradcheck(m, f, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace fmpestf

#include "fmpestf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "fmpestf/errors.hpp"

namespace fmpestf {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  const char sep = line.find(',') != std::string_view::npos    ? ','
                   : line.find('\t') != std::string_view::npos ? '\t'
                                                               : ' ';
  if (sep == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\r') ++j;
      if (j > i) fields.push_back(line.substr(i, j - i));
      i = j;
    }
    return fields;
  }
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// key=value pairs from a `#` header line.
std::vector<std::pair<std::string, std::string>> header_pairs(std::string_view line) {
  std::vector<std::pair<std::string, std::string>> pairs;
  line.remove_prefix(1);
  for (std::string_view token : split_fields(trim(line))) {
    const std::size_t eq = token.find('=');
    if (eq == std::string_view::npos) continue;
    pairs.emplace_back(std::string(token.substr(0, eq)), std::string(token.substr(eq + 1)));
  }
  return pairs;
}

std::size_t parse_count(const std::string& key, const std::string& value, std::size_t line_no) {
  const auto v = parse_number(value);
  if (!v || *v < 0 || std::floor(*v) != *v) {
    throw FormatError("line " + std::to_string(line_no) + ": header " + key +
                      " must be a nonnegative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(*v);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

TimeIndex Series::time_at(std::size_t step) const {
  const std::size_t absolute = start_slot + step;
  return TimeIndex{absolute % slots_per_day,
                   (start_day_of_week + absolute / slots_per_day) % 7};
}

std::size_t slots_per_day_for(int interval_min) {
  if (interval_min <= 0 || 1440 % interval_min != 0) {
    throw ConfigError("interval of " + std::to_string(interval_min) +
                      " minutes does not divide a day");
  }
  return static_cast<std::size_t>(1440 / interval_min);
}

Series parse_series(std::istream& in, std::optional<std::size_t> expected_nodes) {
  std::string line;
  std::size_t line_no = 0;
  Series series;
  std::optional<int> interval;
  std::size_t channels = 0;
  bool have_header = false;
  std::vector<double> rows;  // row-major [T_total, D*N]
  std::size_t width = 0;
  std::size_t row_count = 0;

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      if (row_count > 0) continue;
      for (const auto& [key, value] : header_pairs(view)) {
        if (key == "interval_min") {
          interval = static_cast<int>(parse_count(key, value, line_no));
        } else if (key == "channels") {
          channels = parse_count(key, value, line_no);
        } else if (key == "start_slot") {
          series.start_slot = parse_count(key, value, line_no);
        } else if (key == "start_dow") {
          series.start_day_of_week = parse_count(key, value, line_no) % 7;
        }
      }
      have_header = true;
      continue;
    }
    if (!have_header || !interval || channels == 0) {
      throw FormatError("line " + std::to_string(line_no) +
                        ": data before a `#interval_min=<k> channels=<D>` header");
    }
    const auto fields = split_fields(view);
    if (row_count == 0) {
      width = fields.size();
      if (width % channels != 0) {
        throw FormatError("line " + std::to_string(line_no) + ": " + std::to_string(width) +
                          " columns is not a multiple of channels=" + std::to_string(channels));
      }
      if (expected_nodes && width / channels != *expected_nodes) {
        throw FormatError("line " + std::to_string(line_no) + ": series has " +
                          std::to_string(width / channels) + " nodes but adjacency has " +
                          std::to_string(*expected_nodes));
      }
    } else if (fields.size() != width) {
      throw FormatError("line " + std::to_string(line_no) + " (row " + std::to_string(row_count) +
                        "): ragged row with " + std::to_string(fields.size()) +
                        " columns, expected " + std::to_string(width));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto v = parse_number(fields[c]);
      if (!v) {
        throw FormatError("line " + std::to_string(line_no) + " (row " +
                          std::to_string(row_count) + ", column " + std::to_string(c) +
                          "): non-numeric cell '" + std::string(fields[c]) + "'");
      }
      rows.push_back(*v);
    }
    ++row_count;
  }
  if (!have_header || !interval) throw FormatError("series file has no `#interval_min=` header");
  if (row_count == 0) throw FormatError("series file has no data rows");

  series.interval_min = *interval;
  series.slots_per_day = slots_per_day_for(*interval);
  series.start_slot %= series.slots_per_day;
  const std::size_t nodes = width / channels;
  series.values = Tensor({channels, nodes, row_count});
  for (std::size_t t = 0; t < row_count; ++t) {
    for (std::size_t d = 0; d < channels; ++d) {
      for (std::size_t n = 0; n < nodes; ++n) {
        series.values[(d * nodes + n) * row_count + t] = rows[t * width + d * nodes + n];
      }
    }
  }
  return series;
}

Series load_series(const std::filesystem::path& path, std::optional<std::size_t> expected_nodes) {
  auto in = open_input(path);
  try {
    return parse_series(in, expected_nodes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_series(const std::filesystem::path& path, const Series& series) {
  auto out = open_output(path);
  const std::size_t channels = series.channels(), nodes = series.nodes(), len = series.length();
  out << "#interval_min=" << series.interval_min << " channels=" << channels;
  if (series.start_slot != 0) out << " start_slot=" << series.start_slot;
  if (series.start_day_of_week != 0) out << " start_dow=" << series.start_day_of_week;
  out << '\n';
  std::string row;
  for (std::size_t t = 0; t < len; ++t) {
    row.clear();
    for (std::size_t d = 0; d < channels; ++d) {
      for (std::size_t n = 0; n < nodes; ++n) {
        if (d || n) row += ',';
        row += format_number(series.values[(d * nodes + n) * len + t]);
      }
    }
    row += '\n';
    out << row;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TrafficGraph parse_adjacency(std::istream& in, std::optional<std::size_t> n_nodes, bool undirected) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<bool> edges;
  std::vector<std::pair<std::size_t, std::vector<std::string_view>>> data;
  std::vector<std::string> storage;

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      for (const auto& [key, value] : header_pairs(view)) {
        if (key == "format") {
          if (value == "edges") edges = true;
          else if (value == "dense") edges = false;
          else throw FormatError("line " + std::to_string(line_no) + ": unknown format '" + value + "'");
        }
      }
      continue;
    }
    storage.emplace_back(view);
    data.emplace_back(line_no, std::vector<std::string_view>{});
  }
  for (std::size_t i = 0; i < data.size(); ++i) data[i].second = split_fields(storage[i]);
  if (data.empty()) throw FormatError("adjacency file has no rows");

  // An edge list may start with a textual column header such as `from,to,cost`.
  if (data.front().second.size() == 3 && !parse_number(data.front().second[0])) {
    edges = true;
    data.erase(data.begin());
  }
  if (!edges) {
    const bool three_wide = std::all_of(data.begin(), data.end(),
                                        [](const auto& row) { return row.second.size() == 3; });
    const bool square = std::all_of(data.begin(), data.end(), [&](const auto& row) {
      return row.second.size() == data.size();
    });
    edges = three_wide && !square;
  }

  TrafficGraph graph;
  if (*edges) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> list;
    std::size_t max_index = 0;
    for (const auto& [no, fields] : data) {
      if (fields.size() != 3) {
        throw FormatError("line " + std::to_string(no) + ": edge line needs `src dst weight`, got " +
                          std::to_string(fields.size()) + " fields");
      }
      const auto src = parse_number(fields[0]);
      const auto dst = parse_number(fields[1]);
      const auto w = parse_number(fields[2]);
      if (!src || !dst || !w || *src < 0 || *dst < 0 || std::floor(*src) != *src ||
          std::floor(*dst) != *dst) {
        throw FormatError("line " + std::to_string(no) + ": malformed edge line");
      }
      if (*w < 0) throw FormatError("line " + std::to_string(no) + ": negative edge weight");
      list.emplace_back(static_cast<std::size_t>(*src), static_cast<std::size_t>(*dst), *w);
      max_index = std::max({max_index, static_cast<std::size_t>(*src), static_cast<std::size_t>(*dst)});
    }
    const std::size_t n = n_nodes.value_or(max_index + 1);
    if (max_index >= n) {
      throw FormatError("edge references node " + std::to_string(max_index) + " but graph has " +
                        std::to_string(n) + " nodes");
    }
    graph.n_nodes = n;
    graph.adjacency = Tensor({n, n}, 0.0);
    for (const auto& [s, d, w] : list) graph.adjacency[s * n + d] = w;
  } else {
    const std::size_t n = data.size();
    for (const auto& [no, fields] : data) {
      if (fields.size() != n) {
        throw FormatError("line " + std::to_string(no) + ": adjacency row has " +
                          std::to_string(fields.size()) + " entries, expected " + std::to_string(n));
      }
    }
    if (n_nodes && *n_nodes != n) {
      throw FormatError("adjacency is " + std::to_string(n) + "x" + std::to_string(n) +
                        " but series has " + std::to_string(*n_nodes) + " nodes");
    }
    graph.n_nodes = n;
    graph.adjacency = Tensor({n, n}, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const auto v = parse_number(data[r].second[c]);
        if (!v) {
          throw FormatError("line " + std::to_string(data[r].first) + ", column " + std::to_string(c) +
                            ": non-numeric cell '" + std::string(data[r].second[c]) + "'");
        }
        if (*v < 0) throw FormatError("line " + std::to_string(data[r].first) + ": negative weight");
        graph.adjacency[r * n + c] = *v;
      }
    }
  }

  const std::size_t n = graph.n_nodes;
  for (std::size_t i = 0; i < n; ++i) {
    graph.adjacency[i * n + i] = 0.0;
    if (!undirected) continue;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = std::max(graph.adjacency[i * n + j], graph.adjacency[j * n + i]);
      graph.adjacency[i * n + j] = m;
      graph.adjacency[j * n + i] = m;
    }
  }
  graph.node_ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) graph.node_ids.push_back(std::to_string(i));
  return graph;
}

TrafficGraph load_adjacency(const std::filesystem::path& path, std::optional<std::size_t> n_nodes,
                            bool undirected) {
  auto in = open_input(path);
  try {
    return parse_adjacency(in, n_nodes, undirected);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_adjacency(const std::filesystem::path& path, const TrafficGraph& graph) {
  auto out = open_output(path);
  const std::size_t n = graph.n_nodes;
  out << "#format=dense\n";
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (c) out << ',';
      out << format_number(graph.adjacency[r * n + c]);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

TrafficGraph random_coupling_graph(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ring_weight(0.5, 1.0);
  std::uniform_real_distribution<double> chord_weight(0.3, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  TrafficGraph graph;
  graph.n_nodes = n;
  graph.adjacency = Tensor({n, n}, 0.0);
  auto connect = [&](std::size_t i, std::size_t j, double w) {
    if (i == j) return;
    graph.adjacency[i * n + j] = w;
    graph.adjacency[j * n + i] = w;
  };
  for (std::size_t i = 0; i + 1 < n; ++i) connect(i, i + 1, ring_weight(rng));
  if (n > 2) connect(n - 1, 0, ring_weight(rng));
  for (std::size_t c = 0; c < n / 2; ++c) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    connect(i, j, chord_weight(rng));
  }
  for (std::size_t i = 0; i < n; ++i) graph.node_ids.push_back(std::to_string(i));
  return graph;
}

}  // namespace

SyntheticDataset synth_series(const SynthOptions& options) {
  if (options.n_nodes < 2) throw ConfigError("synthetic data needs at least 2 nodes for coupling");
  if (options.days < 2) throw ConfigError("synthetic data needs at least 2 days");
  if (options.noise < 0 || options.coupling < 0 || options.weekly_amplitude < 0) {
    throw ConfigError("noise, coupling and weekly amplitude must be nonnegative");
  }
  const std::size_t spd = slots_per_day_for(options.interval_min);
  const std::size_t n = options.n_nodes;
  const std::size_t len = options.days * spd;
  std::mt19937_64 rng(options.seed);

  SyntheticDataset out;
  if (options.graph) {
    if (options.graph->n_nodes != n) throw ConfigError("coupling graph size does not match n_nodes");
    out.graph = *options.graph;
  } else {
    out.graph = random_coupling_graph(n, rng);
  }

  std::uniform_real_distribution<double> level_dist(150.0, 300.0);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::vector<double> level(n), phase(n), week_phase(n);
  for (std::size_t i = 0; i < n; ++i) {
    level[i] = level_dist(rng);
    phase[i] = phase_dist(rng);
    week_phase[i] = phase_dist(rng);
  }

  // Row-normalized coupling weights.
  std::vector<double> coupling(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += out.graph.adjacency[i * n + j];
    if (row <= 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) coupling[i * n + j] = out.graph.adjacency[i * n + j] / row;
  }

  constexpr double kDailyAmplitude = 0.5;
  constexpr double kDayJitter = 0.12;
  constexpr double kPersistence = 0.7;
  constexpr double kSpillover = 0.25;
  constexpr double kInnovation = 0.02;

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> day_scale(n * options.days, 1.0);
  for (double& s : day_scale) s = 1.0 + options.noise * kDayJitter * gauss(rng);

  out.series.interval_min = options.interval_min;
  out.series.slots_per_day = spd;
  out.series.values = Tensor({1, n, len});
  std::vector<double> deviation(n, 0.0), next(n, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t day = t / spd;
    const double day_angle = two_pi * static_cast<double>(t % spd) / static_cast<double>(spd);
    const double week_angle = two_pi * static_cast<double>(t) / static_cast<double>(7 * spd);
    for (std::size_t i = 0; i < n; ++i) {
      double spill = 0.0;
      for (std::size_t j = 0; j < n; ++j) spill += coupling[i * n + j] * deviation[j];
      next[i] = kPersistence * deviation[i] + options.coupling * kSpillover * spill +
                options.noise * kInnovation * level[i] * gauss(rng);
    }
    deviation.swap(next);
    for (std::size_t i = 0; i < n; ++i) {
      const double daily = 1.0 + kDailyAmplitude * std::sin(day_angle + phase[i]);
      const double weekly = 1.0 + options.weekly_amplitude * std::sin(week_angle + week_phase[i]);
      const double base = level[i] * day_scale[i * options.days + day] * daily * weekly;
      out.series.values[i * len + t] = base + deviation[i];
    }
  }
  return out;
}

std::vector<SampleWindow> make_windows(const Series& series, std::size_t history, std::size_t horizon,
                                       std::size_t stride) {
  if (history == 0 || horizon == 0 || stride == 0) {
    throw ConfigError("history, horizon and stride must be positive");
  }
  const std::size_t total = series.length();
  if (total < history + horizon) {
    throw ContractError("series of length " + std::to_string(total) + " is too short: windows need at least " +
                        std::to_string(history + horizon) + " steps");
  }
  const std::size_t channels = series.channels(), nodes = series.nodes();
  std::vector<SampleWindow> windows;
  windows.reserve((total - history - horizon) / stride + 1);
  for (std::size_t start = 0; start + history + horizon <= total; start += stride) {
    SampleWindow w;
    w.start = start;
    w.history = Tensor({channels, nodes, history});
    w.target = Tensor({nodes, horizon});
    for (std::size_t d = 0; d < channels; ++d) {
      for (std::size_t n = 0; n < nodes; ++n) {
        const double* src = series.values.data() + (d * nodes + n) * total + start;
        std::copy_n(src, history, w.history.data() + (d * nodes + n) * history);
      }
    }
    for (std::size_t n = 0; n < nodes; ++n) {
      std::copy_n(series.values.data() + n * total + start + history, horizon,
                  w.target.data() + n * horizon);
    }
    w.time_index.reserve(history);
    for (std::size_t s = 0; s < history; ++s) w.time_index.push_back(series.time_at(start + s));
    windows.push_back(std::move(w));
  }
  return windows;
}

void Normalizer::normalize(Tensor& history) const {
  const std::size_t channels = history.dim(0);
  if (channels != mean.size()) throw DimensionError("normalizer channel count mismatch");
  const std::size_t per = history.size() / channels;
  for (std::size_t d = 0; d < channels; ++d) {
    for (std::size_t i = 0; i < per; ++i) {
      double& v = history[d * per + i];
      v = (v - mean[d]) / stddev[d];
    }
  }
}

void Normalizer::denormalize(Tensor& history) const {
  const std::size_t channels = history.dim(0);
  if (channels != mean.size()) throw DimensionError("normalizer channel count mismatch");
  const std::size_t per = history.size() / channels;
  for (std::size_t d = 0; d < channels; ++d) {
    for (std::size_t i = 0; i < per; ++i) {
      double& v = history[d * per + i];
      v = v * stddev[d] + mean[d];
    }
  }
}

Normalizer fit_normalizer(const std::vector<SampleWindow>& windows, std::vector<std::string>* warnings) {
  if (windows.empty()) throw ContractError("cannot fit a normalizer on zero windows");
  const std::size_t channels = windows.front().history.dim(0);
  Normalizer norm;
  norm.mean.assign(channels, 0.0);
  norm.stddev.assign(channels, 0.0);
  for (std::size_t d = 0; d < channels; ++d) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& w : windows) {
      const std::size_t per = w.history.size() / channels;
      for (std::size_t i = 0; i < per; ++i) total += w.history[d * per + i];
      count += per;
    }
    const double mean = total / static_cast<double>(count);
    double sq = 0.0;
    for (const auto& w : windows) {
      const std::size_t per = w.history.size() / channels;
      for (std::size_t i = 0; i < per; ++i) {
        const double dv = w.history[d * per + i] - mean;
        sq += dv * dv;
      }
    }
    double sd = std::sqrt(sq / static_cast<double>(count));
    if (!(sd > 1e-12)) {
      if (warnings) {
        warnings->push_back("channel " + std::to_string(d) + " has zero variance on train; std clamped to 1");
      }
      sd = 1.0;
    }
    norm.mean[d] = mean;
    norm.stddev[d] = sd;
  }
  return norm;
}

DatasetSplit split_chronological(std::vector<SampleWindow> windows, std::array<double, 3> ratios) {
  const std::size_t n = windows.size();
  if (n < 5) throw ContractError("chronological split needs at least 5 windows, got " + std::to_string(n));
  if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0) throw ConfigError("split ratios must be positive");
  std::sort(windows.begin(), windows.end(),
            [](const SampleWindow& a, const SampleWindow& b) { return a.start < b.start; });
  // Small epsilon so 0.6 * 10 floors to 6 despite binary rounding.
  const auto train_n = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(n) + 1e-9));
  const auto val_n = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n) + 1e-9));
  if (train_n == 0 || val_n == 0 || train_n + val_n >= n) {
    throw ContractError("split ratios leave an empty partition for " + std::to_string(n) + " windows");
  }
  DatasetSplit split;
  auto first = std::make_move_iterator(windows.begin());
  split.train.assign(first, first + static_cast<std::ptrdiff_t>(train_n));
  split.val.assign(first + static_cast<std::ptrdiff_t>(train_n),
                   first + static_cast<std::ptrdiff_t>(train_n + val_n));
  split.test.assign(first + static_cast<std::ptrdiff_t>(train_n + val_n), std::make_move_iterator(windows.end()));
  split.normalizer = fit_normalizer(split.train, &split.warnings);
  for (auto* part : {&split.train, &split.val, &split.test}) {
    for (auto& w : *part) split.normalizer.normalize(w.history);
  }
  return split;
}

}  // namespace fmpestf

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fmpestf/data.hpp"
#include "fmpestf/errors.hpp"
#include "test_util.hpp"

using namespace fmpestf;
using fmpestf::testing::scratch_dir;

namespace {

void write_constant_series(const std::filesystem::path& path, std::size_t rows, std::size_t cols, int interval,
                           std::size_t channels) {
  std::ofstream out(path);
  out << "#interval_min=" << interval << " channels=" << channels << '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << (c % 7);
    out << '\n';
  }
}

double autocorrelation(const std::vector<double>& x, std::size_t lag) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double num = 0, den = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    den += (x[t] - mean) * (x[t] - mean);
    if (t + lag < x.size()) num += (x[t] - mean) * (x[t + lag] - mean);
  }
  return num / den;
}

Series ramp_series(std::size_t length, std::size_t nodes = 2, std::size_t channels = 1) {
  Series s;
  s.values = Tensor({channels, nodes, length});
  for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = static_cast<double>(i % 97) * 0.5 + 1.0;
  return s;
}

}  // namespace

TEST(LoadSeries, Pems08Shape) {
  auto dir = scratch_dir("pems08");
  write_constant_series(dir / "pems08.csv", 17856, 170, 5, 1);
  Series s = load_series(dir / "pems08.csv");
  EXPECT_EQ(s.values.shape(), (Shape{1, 170, 17856}));
  EXPECT_EQ(s.slots_per_day, 288u);
  EXPECT_EQ(s.length(), 17856u);
}

TEST(LoadSeries, NycBikeShape) {
  auto dir = scratch_dir("nycbike");
  write_constant_series(dir / "bike.csv", 4368, 500, 30, 2);
  Series s = load_series(dir / "bike.csv", 250);
  EXPECT_EQ(s.values.shape(), (Shape{2, 250, 4368}));
  EXPECT_EQ(s.slots_per_day, 48u);
  // Column 250 opens the second channel block.
  EXPECT_EQ(s.values.at({1, 0, 0}), 250 % 7);
}

TEST(LoadSeries, SingleNodeConstant) {
  std::stringstream in("#interval_min=5 channels=1\n" + [] {
    std::string rows;
    for (int i = 0; i < 10; ++i) rows += "3.25\n";
    return rows;
  }());
  Series s = parse_series(in);
  EXPECT_EQ(s.values, Tensor({1, 1, 10}, 3.25));
}

TEST(LoadSeries, ErrorsCarryRowContext) {
  auto expect_format_error = [](const std::string& text, const std::string& fragment,
                                std::optional<std::size_t> nodes = std::nullopt) {
    std::stringstream in(text);
    try {
      parse_series(in, nodes);
      ADD_FAILURE() << "no error for: " << text;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_format_error("#interval_min=5 channels=1\n1,2\n3\n", "line 3");
  expect_format_error("#interval_min=5 channels=1\n1,2\n3,x\n", "line 3");
  expect_format_error("#interval_min=5 channels=1\n1,2\n3,4\n", "3", 3);
  EXPECT_THROW(
      [] {
        std::stringstream in("1,2\n");
        parse_series(in);
      }(),
      FormatError);
}

TEST(LoadSeries, WriteThenLoadRoundTrips) {
  auto dir = scratch_dir("roundtrip");
  Series s = synth_series(SynthOptions{.n_nodes = 3, .days = 2, .seed = 4}).series;
  write_series(dir / "s.csv", s);
  Series back = load_series(dir / "s.csv");
  EXPECT_EQ(back.values, s.values);
  EXPECT_EQ(back.slots_per_day, s.slots_per_day);
}

TEST(SlotsPerDay, FromInterval) {
  EXPECT_EQ(slots_per_day_for(5), 288u);
  EXPECT_EQ(slots_per_day_for(30), 48u);
  EXPECT_THROW(slots_per_day_for(7), ConfigError);
}

TEST(LoadAdjacency, DenseIsSymmetrizedWithZeroDiagonal) {
  std::stringstream in("1 2 0\n0 1 0\n0 5 1\n");
  TrafficGraph g = parse_adjacency(in);
  EXPECT_EQ(g.n_nodes, 3u);
  EXPECT_EQ(g.adjacency, Tensor::from_rows({{0, 2, 0}, {2, 0, 5}, {0, 5, 0}}));
}

TEST(LoadAdjacency, EdgeList) {
  std::stringstream in("0 1 0.5\n2 0 1.5\n");
  TrafficGraph g = parse_adjacency(in, 3);
  EXPECT_EQ(g.adjacency, Tensor::from_rows({{0, 0.5, 1.5}, {0.5, 0, 0}, {1.5, 0, 0}}));
}

TEST(LoadAdjacency, RejectsNegativeAndMismatchedSize) {
  std::stringstream neg("0 -1\n1 0\n");
  EXPECT_THROW(parse_adjacency(neg), FormatError);
  std::stringstream dense("0 1\n1 0\n");
  EXPECT_THROW(parse_adjacency(dense, 3), FormatError);
}

TEST(Synth, SameSeedIsBitwiseIdentical) {
  SynthOptions o{.n_nodes = 5, .days = 3, .seed = 11};
  auto a = synth_series(o), b = synth_series(o);
  EXPECT_EQ(a.series.values, b.series.values);
  EXPECT_EQ(a.graph.adjacency, b.graph.adjacency);
  o.seed = 12;
  EXPECT_NE(synth_series(o).series.values, a.series.values);
}

TEST(Synth, NoNoiseNoCouplingIsDailyPeriodic) {
  SynthOptions o{.n_nodes = 4, .days = 3, .interval_min = 30, .seed = 2, .noise = 0.0, .coupling = 0.0,
                 .weekly_amplitude = 0.0};
  Series s = synth_series(o).series;
  const std::size_t spd = s.slots_per_day, len = s.length();
  ASSERT_EQ(len, 3 * spd);
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t t = 0; t + spd < len; ++t) {
      EXPECT_EQ(s.values.at({0, n, t}), s.values.at({0, n, t + spd})) << "node " << n << " step " << t;
    }
  }
}

TEST(Synth, DailyLagAutocorrelationBeatsHalfDay) {
  Series s = synth_series(SynthOptions{.n_nodes = 6, .days = 14, .seed = 5}).series;
  const std::size_t spd = s.slots_per_day;
  for (std::size_t n = 0; n < s.nodes(); ++n) {
    std::vector<double> x(s.length());
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = s.values.at({0, n, t});
    EXPECT_GT(autocorrelation(x, spd), autocorrelation(x, spd / 2)) << "node " << n;
  }
}

TEST(Synth, ParameterValidation) {
  EXPECT_THROW(synth_series(SynthOptions{.n_nodes = 1}), ConfigError);
  EXPECT_THROW(synth_series(SynthOptions{.days = 1}), ConfigError);
}

TEST(MakeWindows, BoundaryCounts) {
  EXPECT_EQ(make_windows(ramp_series(24), 12, 12).size(), 1u);
  auto two = make_windows(ramp_series(25), 12, 12);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[1].start, 1u);
  EXPECT_EQ(two[1].history.at({0, 0, 0}), two[0].history.at({0, 0, 1}));
  EXPECT_THROW(make_windows(ramp_series(23), 12, 12), ContractError);
}

TEST(MakeWindows, CountFormulaAcrossShapes) {
  for (std::size_t total = 4; total < 40; total += 3) {
    for (std::size_t t = 1; t <= 6; ++t) {
      for (std::size_t h = 1; h <= 6; ++h) {
        if (total < t + h) continue;
        EXPECT_EQ(make_windows(ramp_series(total, 1), t, h).size(), total - t - h + 1);
      }
    }
  }
}

TEST(MakeWindows, HistoryAndTargetAreAdjacent) {
  Series s = ramp_series(40, 3, 2);
  for (const auto& w : make_windows(s, 5, 4, 3)) {
    for (std::size_t n = 0; n < 3; ++n) {
      for (std::size_t t = 0; t < 5; ++t) {
        EXPECT_EQ(w.history.at({1, n, t}), s.values.at({1, n, w.start + t}));
      }
      for (std::size_t h = 0; h < 4; ++h) EXPECT_EQ(w.target.at({n, h}), s.values.at({0, n, w.start + 5 + h}));
    }
  }
}

TEST(MakeWindows, SlotsAdvanceByOneModuloDay) {
  Series s = synth_series(SynthOptions{.n_nodes = 2, .days = 2, .interval_min = 60, .seed = 1}).series;
  s.start_slot = 20;
  s.start_day_of_week = 6;
  for (const auto& w : make_windows(s, 12, 3)) {
    for (std::size_t k = 0; k < w.time_index.size(); ++k) {
      const std::size_t step = w.start + k + 20;
      EXPECT_EQ(w.time_index[k].slot, step % 24);
      EXPECT_EQ(w.time_index[k].day_of_week, (6 + step / 24) % 7);
    }
  }
}

TEST(Split, ExactAndRemainderSizes) {
  auto sizes = [](std::size_t n) {
    auto s = split_chronological(make_windows(ramp_series(n + 1), 1, 1));
    return std::array<std::size_t, 3>{s.train.size(), s.val.size(), s.test.size()};
  };
  EXPECT_EQ(sizes(10), (std::array<std::size_t, 3>{6, 2, 2}));
  EXPECT_EQ(sizes(11), (std::array<std::size_t, 3>{6, 2, 3}));
  EXPECT_THROW(sizes(4), ContractError);
}

TEST(Split, ChronologicalAndDisjointOrigins) {
  auto s = split_chronological(make_windows(ramp_series(200), 12, 12));
  EXPECT_LT(s.train.back().origin(), s.val.front().origin());
  EXPECT_LT(s.val.back().origin(), s.test.front().origin());
}

TEST(Split, NormalizerMatchesBruteForceOnTrainOnly) {
  Series series = synth_series(SynthOptions{.n_nodes = 3, .days = 2, .seed = 9}).series;
  auto raw = make_windows(series, 12, 12);
  DatasetSplit s = split_chronological(raw);
  long double sum = 0, sq = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    for (double v : raw[i].history.values()) {
      sum += v;
      ++count;
    }
  }
  const long double mean = sum / count;
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    for (double v : raw[i].history.values()) sq += (v - mean) * (v - mean);
  }
  EXPECT_NEAR(s.normalizer.mean[0], static_cast<double>(mean), 1e-12 * std::abs(static_cast<double>(mean)));
  EXPECT_NEAR(s.normalizer.stddev[0], std::sqrt(static_cast<double>(sq / count)), 1e-12 * s.normalizer.stddev[0]);
  // Targets stay raw, histories are z-scored.
  EXPECT_EQ(s.test.back().target, raw.back().target);
  EXPECT_NEAR(s.val.front().history[0] * s.normalizer.stddev[0] + s.normalizer.mean[0],
              raw[s.train.size()].history[0], 1e-9);
}

TEST(Split, ConstantChannelClampsStd) {
  Series s;
  s.values = Tensor({1, 2, 30}, 4.0);
  auto split = split_chronological(make_windows(s, 3, 3));
  EXPECT_EQ(split.normalizer.stddev[0], 1.0);
  EXPECT_EQ(split.warnings.size(), 1u);
}

TEST(Normalizer, RoundTrip) {
  Normalizer n{{2.0, -1.0}, {3.0, 0.25}};
  Tensor x = fmpestf::testing::random_tensor({2, 3, 5}, 8, -50, 50);
  Tensor y = x;
  n.normalize(y);
  n.denormalize(y);
  EXPECT_LT(max_abs_diff(x, y), 1e-9);
}

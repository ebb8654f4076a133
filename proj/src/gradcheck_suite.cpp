#include "fmpestf/gradcheck_suite.hpp"

#include <algorithm>
#include <random>

#include "fmpestf/attconv.hpp"
#include "fmpestf/embedding.hpp"
#include "fmpestf/encoder.hpp"
#include "fmpestf/errors.hpp"
#include "fmpestf/fusion_graph.hpp"
#include "fmpestf/model.hpp"

namespace fmpestf {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Sum of out * R for a fixed random R; smooth in the output.
Var readout(Var out, const Tensor& weights) { return ops::sum_all(ops::mul(out, out.tape()->constant(weights))); }

Tensor toy_prompt(std::size_t n, std::mt19937_64& rng) {
  Tensor a = random_tensor({n, n}, rng, 0.1, 1.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 0.0;
  return a;
}

std::vector<TimeIndex> toy_times(std::size_t len, std::size_t slots) {
  std::vector<TimeIndex> times;
  for (std::size_t t = 0; t < len; ++t) times.push_back({(5 + 3 * t) % slots, (t / 3) % 7});
  return times;
}

}  // namespace

ModelConfig toy_model_config(std::uint64_t seed) {
  ModelConfig c;
  c.nodes = 4;
  c.input_channels = 1;
  c.history = 8;
  c.horizon = 4;
  c.d1 = 2;
  c.d2 = 2;
  c.slots_per_day = 24;
  c.kernel = {3, 2};
  c.diffusion_steps = 2;
  c.top_k = 3;
  c.depth = 1;
  c.seed = seed;
  return c;
}

const std::vector<std::string>& grad_check_scopes() {
  static const std::vector<std::string> scopes{"model", "embedding", "attconv", "fgraph", "encoder", "glu", "head"};
  return scopes;
}

GradCheckReport run_toy_grad_check(const std::string& scope, std::uint64_t seed,
                                   const std::string& sign_flip_parameter) {
  const auto& scopes = grad_check_scopes();
  if (std::find(scopes.begin(), scopes.end(), scope) == scopes.end()) {
    throw ConfigError("unknown gradient check scope '" + scope + "'");
  }
  const ModelConfig cfg = toy_model_config(seed);
  const std::size_t c = cfg.channels(), n = cfg.nodes, len = cfg.history;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Initializer init(seed);
  ParameterStore store;
  ScalarFunction f;

  // Owned blocks must outlive the check; each branch keeps its own.
  std::unique_ptr<FmpestfModel> model;
  std::unique_ptr<DataEmbedding> embedding;
  std::unique_ptr<AttConvBlock> attconv;
  std::unique_ptr<FusionGraphBlock> fgraph;
  std::unique_ptr<Encoder> encoder;

  const Tensor prompt = toy_prompt(n, rng);
  const Tensor hidden = random_tensor({c, n, len}, rng);
  const auto times = toy_times(len, cfg.slots_per_day);
  STCompConfig st{AttConvConfig{c, cfg.kernel[0], cfg.kernel[1], true},
                  FusionGraphConfig{c, n, cfg.diffusion_steps, cfg.top_k, true, true}};

  if (scope == "model" || scope == "glu" || scope == "head") {
    model = std::make_unique<FmpestfModel>(cfg);
    const Tensor raw = random_tensor({cfg.input_channels, n, len}, rng);
    if (scope == "model") {
      const Tensor w = random_tensor({n, cfg.horizon}, rng);
      f = [&, raw, w, times, prompt](Tape& t) {
        return readout(model->forward_normalized(t.constant(raw), times, t.constant(prompt)), w);
      };
    } else if (scope == "glu") {
      const Tensor w = random_tensor({c, n, len}, rng);
      f = [&, w](Tape& t) { return readout(model->glu(t.constant(hidden)), w); };
    } else {
      const Tensor w = random_tensor({n, cfg.horizon}, rng);
      f = [&, w](Tape& t) { return readout(model->regress(t.constant(hidden)), w); };
    }
  } else if (scope == "embedding") {
    embedding = std::make_unique<DataEmbedding>(
        store, "embedding", EmbeddingConfig{cfg.input_channels, cfg.d1, cfg.d2, cfg.slots_per_day}, init);
    const Tensor raw = random_tensor({cfg.input_channels, n, len}, rng);
    const Tensor w = random_tensor({c, n, len}, rng);
    f = [&, raw, w, times](Tape& t) { return readout(embedding->forward(t.constant(raw), times), w); };
  } else if (scope == "attconv") {
    attconv = std::make_unique<AttConvBlock>(store, "attconv", st.temporal, init);
    const Tensor w = random_tensor({c, n, len}, rng);
    f = [&, w](Tape& t) { return readout(attconv->forward(t.constant(hidden)), w); };
  } else if (scope == "fgraph") {
    fgraph = std::make_unique<FusionGraphBlock>(store, "fgraph", st.spatial, init);
    const Tensor w = random_tensor({c, n, len}, rng);
    f = [&, w, prompt](Tape& t) { return readout(fgraph->forward(t.constant(hidden), t.constant(prompt)), w); };
  } else {
    encoder = std::make_unique<Encoder>(store, "encoder", st, 2, init);
    const Tensor w = random_tensor({c, n, len}, rng);
    f = [&, w, prompt](Tape& t) { return readout(encoder->forward(t.constant(hidden), t.constant(prompt)), w); };
  }

  const ParameterStore& active = model ? model->parameters() : store;
  std::vector<Parameter*> params;
  for (Parameter* p : active.all()) {
    if (scope == "glu" && !p->id().starts_with("decoder.glu")) continue;
    if (scope == "head" && !p->id().starts_with("decoder.head")) continue;
    params.push_back(p);
  }
  GradCheckOptions options;
  if (!sign_flip_parameter.empty()) {
    if (!active.find(sign_flip_parameter)) throw ConfigError("no parameter named '" + sign_flip_parameter + "'");
    options.after_backward = [sign_flip_parameter](std::span<Parameter* const> ps) {
      for (Parameter* p : ps) {
        if (p->id() != sign_flip_parameter) continue;
        for (double& g : p->grad().values()) g = -g;
      }
    };
  }
  return grad_check(f, params, options);
}

}  // namespace fmpestf

#include "fmpestf/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "fmpestf/errors.hpp"

namespace fmpestf {
namespace {

struct Parsed {
  ModelConfig config;
  nlohmann::json body;
};

Parsed parse(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("checkpoint is empty");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  if (header != kCheckpointHeader) {
    throw FormatError("unrecognized checkpoint header '" + header + "' (expected " + kCheckpointHeader + ")");
  }
  Parsed p;
  try {
    in >> p.body;
    p.config = p.body.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
  return p;
}

void fill(const nlohmann::json& body, FmpestfModel& model) {
  try {
    Normalizer norm;
    body.at("normalizer").at("mean").get_to(norm.mean);
    body.at("normalizer").at("stddev").get_to(norm.stddev);
    model.set_normalizer(std::move(norm));

    const auto& stored = body.at("parameters");
    ParameterStore& store = model.parameters();
    if (stored.size() != store.size()) {
      throw FormatError("checkpoint has " + std::to_string(stored.size()) + " parameters, model has " +
                        std::to_string(store.size()));
    }
    for (const auto& entry : stored) {
      const std::string id = entry.at("id").get<std::string>();
      Parameter* p = store.find(id);
      if (!p) throw FormatError("checkpoint parameter '" + id + "' is not part of the model");
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != p->value().shape()) {
        throw FormatError("checkpoint parameter '" + id + "' has shape " + shape_string(shape) + ", model expects " +
                          shape_string(p->value().shape()));
      }
      p->value() = Tensor(shape, entry.at("values").get<std::vector<double>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace

void write_checkpoint(std::ostream& out, const FmpestfModel& model) {
  nlohmann::json body;
  body["config"] = model.config();
  body["normalizer"] = {{"mean", model.normalizer().mean}, {"stddev", model.normalizer().stddev}};
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter* p : model.parameters().all()) {
    const auto values = p->value().values();
    params.push_back({{"id", p->id()},
                      {"shape", p->value().shape()},
                      {"values", std::vector<double>(values.begin(), values.end())}});
  }
  body["parameters"] = std::move(params);
  out << kCheckpointHeader << '\n' << body.dump() << '\n';
}

void save_checkpoint(const std::filesystem::path& path, const FmpestfModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model);
  if (!out) throw IoError("failed writing " + path.string());
}

FmpestfModel read_checkpoint(std::istream& in) {
  Parsed p = parse(in);
  FmpestfModel model(p.config);
  fill(p.body, model);
  return model;
}

FmpestfModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void load_checkpoint_into(const std::filesystem::path& path, FmpestfModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Parsed p = parse(in);
  const auto diffs = config_differences(p.config, model.config());
  if (!diffs.empty()) {
    std::string names;
    for (const auto& d : diffs) names += (names.empty() ? "" : ", ") + d;
    throw ConfigError("checkpoint is incompatible with the model config; differing fields: " + names);
  }
  fill(p.body, model);
}

}  // namespace fmpestf

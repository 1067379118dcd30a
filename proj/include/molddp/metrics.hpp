#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "molddp/binio.hpp"
#include "molddp/ddp.hpp"
#include "molddp/gcnn.hpp"

namespace molddp {

inline constexpr std::string_view kMetricsSchema = "molddp.metrics";
inline constexpr int kMetricsMajor = 1;
inline constexpr int kMetricsMinor = 0;

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json aggs = nlohmann::json::array(), scalers = nlohmann::json::array();
  for (auto a : c.aggregators) aggs.push_back(std::string(to_string(a)));
  for (auto s : c.scalers) scalers.push_back(std::string(to_string(s)));
  return {{"node_features", c.node_features}, {"edge_features", c.edge_features},
          {"num_conv_layers", c.num_conv_layers}, {"hidden_width", c.hidden_width},
          {"fc_layers", c.fc_layers},         {"use_edge_features", c.use_edge_features},
          {"aggregators", aggs},              {"scalers", scalers}};
}

inline nlohmann::json to_json(const Hyper& h) {
  return {{"learning_rate", h.learning_rate}, {"local_batch_size", h.local_batch_size},
          {"max_epochs", h.max_epochs},       {"weight_decay", h.weight_decay},
          {"beta1", h.beta1},                 {"beta2", h.beta2},
          {"epsilon", h.epsilon}};
}

/// Hex CRC32 of the canonical JSON of model and optimiser settings.
inline std::string config_hash(const ModelConfig& c, const Hyper& h) {
  const std::string text = nlohmann::json{{"model", to_json(c)}, {"hyper", to_json(h)}}.dump();
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc32(std::as_bytes(std::span(text))));
  return buf;
}

inline nlohmann::json to_json(const PhaseTimings& t) {
  return {{"rank", t.rank},
          {"epoch", t.epoch},
          {"dataload_s", t.dataload},
          {"forward_s", t.forward},
          {"backward_s", t.backward},
          {"optimizer_s", t.optimizer},
          {"gradient_aggregation_s", t.gradient_aggregation},
          {"total_s", t.total},
          {"samples", t.samples},
          {"batches", t.batches}};
}

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},     {"train_loss", m.train_loss}, {"train_mae", m.train_mae},
          {"val_mse", m.val_mse}, {"val_mae", m.val_mae},       {"samples", m.samples}};
}

struct MetricsReport {
  std::string dataset;
  std::string backend;
  std::string precision;
  int world_size = 1;
  std::uint64_t seed = 0;
  ModelConfig model;
  Hyper hyper;
  double delta = 0;
  std::size_t num_parameters = 0;
  std::map<std::string, std::string> settings;  // resolved flag/env/config values
  std::vector<PhaseTimings> timings;
  std::vector<EpochMetrics> history;
  EvalResult train, val, test;
  double wall_seconds = 0;
};

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json timings = nlohmann::json::array(), history = nlohmann::json::array();
  for (const auto& t : r.timings) timings.push_back(to_json(t));
  for (const auto& h : r.history) history.push_back(to_json(h));
  auto summary = [](const EvalResult& e) {
    return nlohmann::json{{"count", e.count}, {"mse", e.mse}, {"mae", e.mae}};
  };
  return {{"schema", kMetricsSchema},
          {"version", std::to_string(kMetricsMajor) + "." + std::to_string(kMetricsMinor)},
          {"run",
           {{"dataset", r.dataset},
            {"backend", r.backend},
            {"precision", r.precision},
            {"world_size", r.world_size},
            {"seed", r.seed},
            {"config_hash", config_hash(r.model, r.hyper)},
            {"model", to_json(r.model)},
            {"hyper", to_json(r.hyper)},
            {"degree_statistic", r.delta},
            {"num_parameters", r.num_parameters},
            {"settings", r.settings}}},
          {"timings", timings},
          {"history", history},
          {"final",
           {{"train", summary(r.train)},
            {"val", summary(r.val)},
            {"test", summary(r.test)},
            {"wall_s", r.wall_seconds}}}};
}

/// True if `j` declares a metrics layout this build can read.
inline bool metrics_compatible(const nlohmann::json& j) {
  if (!j.contains("schema") || j["schema"] != kMetricsSchema || !j.contains("version")) return false;
  const std::string v = j["version"].get<std::string>();
  return std::atoi(v.c_str()) == kMetricsMajor;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot create " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorKind::Io, "write failed on " + path.string());
}

/// split,true_eV,predicted_eV
inline void write_parity_csv(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, const EvalResult*>>& splits) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot create " + path.string());
  out << "split,true_eV,predicted_eV\n";
  char line[96];
  for (const auto& [name, res] : splits)
    for (const auto& [t, p] : res->parity) {
      std::snprintf(line, sizeof line, ",%.9g,%.9g\n", t, p);
      out << name << line;
    }
}

/// epoch,train_loss,train_mae,val_mse,val_mae
inline void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot create " + path.string());
  out << "epoch,train_loss,train_mae,val_mse,val_mae\n";
  char line[160];
  for (const auto& h : history) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g\n", h.epoch, h.train_loss, h.train_mae, h.val_mse,
                  h.val_mae);
    out << line;
  }
}

}  // namespace molddp

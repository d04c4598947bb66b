/* Copyright 2026 The EmbraceNet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "embrace/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "json.hpp"

#include "embrace/log.hpp"
#include "embrace/metrics.hpp"

namespace embrace {

ScenarioKind parse_scenario(const std::string& name) {
  if (name == "none") return ScenarioKind::kNone;
  if (name == "modalities") return ScenarioKind::kModalities;
  if (name == "blockwise") return ScenarioKind::kBlockwise;
  throw ConfigError("unknown scenario '" + name + "' (none|modalities|blockwise)");
}

std::string scenario_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kNone: return "none";
    case ScenarioKind::kModalities: return "modalities";
    case ScenarioKind::kBlockwise: return "blockwise";
  }
  return "?";
}

std::vector<double> parse_rates(const std::string& text) {
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("rates '" + text + "': '" + s + "' is not a number");
    }
  };
  std::vector<double> percents;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const auto colon = text.find(':', dots);
    if (colon == std::string::npos) throw ConfigError("rates '" + text + "' must look like lo..hi:step");
    const double lo = number(text.substr(0, dots));
    const double hi = number(text.substr(dots + 2, colon - dots - 2));
    const double step = number(text.substr(colon + 1));
    if (!(step > 0.0) || hi < lo) throw ConfigError("rates '" + text + "' describe an empty range");
    for (std::size_t i = 0;; ++i) {
      const double v = lo + step * static_cast<double>(i);
      if (v > hi + 1e-9) break;
      percents.push_back(v);
    }
  } else {
    for (const auto& part : split(text, ',')) percents.push_back(number(part));
  }
  if (percents.empty()) throw ConfigError("no rates given");
  std::vector<double> out;
  for (double p : percents) {
    if (!(p >= 0.0 && p < 100.0)) throw ConfigError("missing rates must lie in [0, 100)");
    out.push_back(p / 100.0);
  }
  return out;
}

namespace {

std::size_t rate_key(double rate) { return static_cast<std::size_t>(std::lround(rate * 100.0)); }

bool uses_hold_fill(Strategy s) {
  return s == Strategy::kEarly || s == Strategy::kIntermediate || s == Strategy::kCmp;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::size_t, double> ExperimentReport::aggregate(const std::string& strategy) const {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& row : rows) {
    if (row.strategy != strategy) continue;
    const std::size_t key =
        scenario == ScenarioKind::kBlockwise ? rate_key(row.target_rate) : row.modalities;
    acc[key].first += row.f1;
    acc[key].second += 1;
  }
  std::map<std::size_t, double> out;
  for (const auto& [key, v] : acc) out[key] = v.first / static_cast<double>(v.second);
  return out;
}

double ExperimentReport::f1(const std::string& strategy, const std::string& point) const {
  for (const auto& row : rows) {
    if (row.strategy == strategy && row.point == point) return row.f1;
  }
  throw UsageError("report has no row for " + strategy + " at " + point);
}

ExperimentReport run_scenario(const std::vector<NamedModel>& models, const ScenarioSpec& scenario,
                              const ModalityBatch& test, const ModalityBatch& stream,
                              const std::string& data_digest) {
  if (models.empty()) throw UsageError("run_scenario: no models");
  const std::size_t m = test.modalities();
  for (const auto& nm : models) {
    if (!nm.model) throw UsageError("run_scenario: null model " + nm.name);
    if (!nm.model->trained()) throw UsageError("model '" + nm.name + "' has not been trained");
    if (nm.model->spec().modalities() != m) {
      throw UsageError("model '" + nm.name + "' expects " +
                       std::to_string(nm.model->spec().modalities()) + " modalities, data has " +
                       std::to_string(m));
    }
  }
  const auto t0 = std::chrono::steady_clock::now();

  ExperimentReport report;
  report.scenario = scenario.kind;
  report.data_digest = data_digest;
  report.seed = scenario.seed;
  report.cap = scenario.cap;
  for (const auto& nm : models) {
    report.strategies.push_back(nm.name);
    report.config_digests.push_back(nm.config_digest);
  }

  std::vector<std::uint32_t> masks;
  switch (scenario.kind) {
    case ScenarioKind::kNone: masks.push_back(m >= 32 ? ~0u : (1u << m) - 1u); break;
    case ScenarioKind::kModalities: masks = enumerate_combinations(m, scenario.cap, scenario.seed); break;
    case ScenarioKind::kBlockwise:
      if (scenario.rates.empty()) throw UsageError("blockwise scenario needs at least one rate");
      break;
  }
  const std::size_t points =
      scenario.kind == ScenarioKind::kBlockwise ? scenario.rates.size() : masks.size();
  const std::size_t S = models.size();
  report.points = points;
  report.rows.resize(points * S);

  auto evaluate_point = [&](std::size_t i) {
    const std::uint64_t eval_seed = scenario.seed * 0x9e3779b97f4a7c15ULL + i;
    if (scenario.kind == ScenarioKind::kBlockwise) {
      const double rate = scenario.rates[i];
      Rng rng = Rng::stream(scenario.seed, 0xb10c + i);
      auto [batch, pattern] = apply_blockwise_missing(stream, rate, rng, scenario.blocks);
      char label[32];
      std::snprintf(label, sizeof label, "rate=%.2f", rate);
      for (std::size_t s = 0; s < S; ++s) {
        const FusionModel& model = *models[s].model;
        const ModalityBatch input =
            uses_hold_fill(model.strategy()) ? hold_fill_missing(batch, model.means()) : batch;
        const auto pred = model.predict(input, eval_seed);
        report.rows[i * S + s] = {models[s].name, label, m, rate, pattern.realized_rate,
                                  weighted_f1(pred, batch.labels, model.spec().classes),
                                  batch.size()};
      }
      return;
    }
    const std::uint32_t mask = masks[i];
    const ModalityBatch batch = apply_missing_modalities(test, mask);
    const std::string label =
        scenario.kind == ScenarioKind::kNone ? std::string("full") : mask_str(mask, m);
    for (std::size_t s = 0; s < S; ++s) {
      const FusionModel& model = *models[s].model;
      const auto pred = model.predict(batch, eval_seed);
      report.rows[i * S + s] = {models[s].name, label, popcount(mask), 0.0, 0.0,
                                weighted_f1(pred, batch.labels, model.spec().classes),
                                batch.size()};
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(scenario.workers, points));
  if (workers == 1) {
    for (std::size_t i = 0; i < points; ++i) evaluate_point(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < points; i = next++) evaluate_point(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  logger()->info("event=scenario kind={} points={} strategies={} wall={:.2f}",
                 scenario_name(scenario.kind), points, S, report.seconds);
  return report;
}

DegradationRow degradation(const std::string& strategy, double full, double degraded) {
  DegradationRow row{strategy, full, degraded, 0.0, false};
  if (full == 0.0) {
    row.flagged = true;
    row.reduction = std::nan("");
    logger()->warn("event=degradation_undefined strategy={} full_f1=0", strategy);
  } else {
    row.reduction = (full - degraded) / full;
  }
  return row;
}

std::vector<DegradationRow> consistency_metrics(const ExperimentReport& report,
                                                std::size_t degraded_key) {
  std::vector<DegradationRow> out;
  for (const auto& name : report.strategies) {
    const auto agg = report.aggregate(name);
    if (agg.empty()) throw UsageError("report has no rows for " + name);
    const std::size_t full_key =
        report.scenario == ScenarioKind::kBlockwise ? agg.begin()->first : agg.rbegin()->first;
    if (report.scenario == ScenarioKind::kBlockwise && full_key != 0) {
      throw UsageError("blockwise report has no rate-0 point");
    }
    auto it = agg.find(degraded_key);
    if (it == agg.end()) {
      throw UsageError("report has no aggregate at " + std::to_string(degraded_key));
    }
    out.push_back(degradation(name, agg.at(full_key), it->second));
  }
  return out;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "report.csv");
    if (!csv) throw FormatError("cannot write " + (dir / "report.csv").string());
    csv << "strategy,point,modalities,target_rate,realized_rate,f1,n\n";
    for (const auto& r : report.rows) {
      csv << r.strategy << ',' << r.point << ',' << r.modalities << ',' << fmt_double(r.target_rate)
          << ',' << fmt_double(r.realized_rate) << ',' << fmt_double(r.f1) << ',' << r.n << '\n';
    }
  }
  nlohmann::ordered_json summary;
  summary["scenario"] = scenario_name(report.scenario);
  summary["data_digest"] = report.data_digest;
  summary["seed"] = report.seed;
  if (report.scenario == ScenarioKind::kModalities) summary["cap"] = report.cap;
  summary["points"] = report.points;
  nlohmann::ordered_json models = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < report.strategies.size(); ++s) {
    nlohmann::ordered_json entry;
    entry["name"] = report.strategies[s];
    entry["config_digest"] = report.config_digests[s];
    nlohmann::ordered_json agg;
    for (const auto& [key, f1] : report.aggregate(report.strategies[s])) {
      agg[std::to_string(key)] = f1;
    }
    entry[report.scenario == ScenarioKind::kBlockwise ? "mean_f1_by_rate_percent"
                                                      : "mean_f1_by_modalities"] = agg;
    models.push_back(entry);
  }
  summary["models"] = models;
  {
    std::ofstream js(dir / "summary.json");
    if (!js) throw FormatError("cannot write " + (dir / "summary.json").string());
    js << summary.dump(2) << '\n';
  }
  nlohmann::ordered_json timing;
  timing["wall_seconds"] = report.seconds;
  std::ofstream(dir / "timing.json") << timing.dump(2) << '\n';
}

std::vector<ActivationCell> embraced_activations(const FusionModel& model,
                                                 const ModalityBatch& data, std::size_t cap,
                                                 std::uint64_t seed) {
  if (model.strategy() != Strategy::kEmbrace) {
    throw UsageError("activation dumps need an embracenet model, got " +
                     strategy_name(model.strategy()));
  }
  const std::size_t m = data.modalities(), c = model.spec().fusion_width;
  std::map<std::pair<int, std::size_t>, ActivationCell> cells;
  for (std::uint32_t mask : enumerate_combinations(m, cap, seed)) {
    const std::size_t count = popcount(mask);
    const Tensorf e = model.embraced(apply_missing_modalities(data, mask), seed);
    for (std::size_t n = 0; n < data.size(); ++n) {
      const int y = data.labels[n];
      auto& cell = cells[{y, count}];
      if (cell.mean.empty()) {
        cell.cls = y;
        cell.modalities = count;
        cell.mean.assign(c, 0.0);
      }
      for (std::size_t i = 0; i < c; ++i) cell.mean[i] += e.at(n, i);
      ++cell.samples;
    }
  }
  std::vector<ActivationCell> out;
  for (auto& [key, cell] : cells) {
    for (auto& v : cell.mean) v /= static_cast<double>(cell.samples);
    out.push_back(std::move(cell));
  }
  return out;
}

void write_activation_grids(const std::vector<ActivationCell>& cells,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& cell : cells) {
    const std::size_t c = cell.mean.size();
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(c))));
    const bool square = side * side == c;
    const std::size_t rows = square ? side : 1, cols = square ? side : c;
    const auto path =
        dir / ("class" + std::to_string(cell.cls) + "_mods" + std::to_string(cell.modalities) + ".csv");
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t col = 0; col < cols; ++col) {
        out << (col ? "," : "") << fmt_double(cell.mean[r * cols + col]);
      }
      out << '\n';
    }
  }
}

}  // namespace embrace

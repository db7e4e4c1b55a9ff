#pragma once

#include "json.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcaus/multiscale/model.hpp"
#include "pcaus/multiscale/mo_loss.hpp"
#include "pcaus/nn/checkpoint.hpp"
#include "pcaus/nn/optim.hpp"

namespace pcaus::multiscale {

struct MultiScaleSchedule {
  int steps = 300;
  int batch_size = 16;
  float lr = 5e-4f;
  float weight_decay = 1e-4f;
  int warmup = 20;
  int eval_every = 25;  // validation interval for best-checkpoint selection; 0 disables
  std::uint64_t seed = 0;
};

struct MultiScaleRecord {
  int step = 0;
  float lr = 0;
  LossBreakdown loss;
  double validation_total = std::numeric_limits<double>::quiet_NaN();
};

struct MultiScaleResult {
  std::vector<MultiScaleRecord> history;
  int best_step = -1;
  double best_validation = std::numeric_limits<double>::quiet_NaN();
};

// Mean multi-objective loss over a set of cores, evaluated in batches without a graph.
inline LossBreakdown evaluate_mo(const MultiScaleModel& model, std::span<const CoreSequence> cores, double gamma,
                                 std::size_t chunk = 32) {
  if (cores.empty()) throw std::invalid_argument("evaluate_mo: no cores");
  nn::NoGradGuard no_grad;
  double core = 0, roi = 0;
  for (std::size_t start = 0; start < cores.size(); start += chunk) {
    std::vector<const CoreSequence*> batch;
    for (std::size_t i = start; i < std::min(cores.size(), start + chunk); ++i) batch.push_back(&cores[i]);
    const BatchOutput out = model.forward(batch);
    LossBreakdown part;
    mo_loss(out.core_logits, out.roi_logits, out.labels, out.valid, gamma, &part);
    core += part.at("core") * static_cast<double>(batch.size());
    roi += part.at("roi") * static_cast<double>(batch.size());
  }
  const double n = static_cast<double>(cores.size());
  core /= n;
  roi /= n;
  return {gamma * core + (1.0 - gamma) * roi, {{"core", core}, {"roi", roi}}};
}

// Minimizes the multi-objective loss on precomputed sequences. When validation
// cores are given, the model is restored to the state with the lowest
// validation loss at the end.
inline MultiScaleResult multiscale_train(MultiScaleModel& model, std::span<const CoreSequence> train,
                                         std::span<const CoreSequence> validation, const MultiScaleSchedule& schedule) {
  const MOConfig& cfg = model.config();
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("multiscale_train: no training cores");
  if (schedule.batch_size < 1) throw std::invalid_argument("multiscale_train: batch size must be positive");

  nn::AdamW optimizer(model.parameters(), {schedule.lr, 0.9f, 0.999f, 1e-8f, schedule.weight_decay});
  model.train();
  std::mt19937_64 rng(schedule.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(schedule.batch_size), order.size());
  std::size_t cursor = order.size();

  MultiScaleResult result;
  nn::StateSnapshot best;
  auto consider = [&](int step) {
    if (validation.empty() || schedule.eval_every <= 0) return;
    const double v = evaluate_mo(model, validation, cfg.gamma).total;
    if (!result.history.empty()) result.history.back().validation_total = v;
    if (!(v >= result.best_validation)) {  // also true while best is NaN
      result.best_validation = v;
      result.best_step = step;
      best = nn::snapshot_state(model);
    }
  };

  for (int step = 0; step < schedule.steps; ++step) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::vector<const CoreSequence*> cores;
    for (std::size_t i = 0; i < batch; ++i) cores.push_back(&train[order[cursor + i]]);
    cursor += batch;

    const float lr = nn::cosine_lr(schedule.lr, step, schedule.steps, schedule.warmup);
    optimizer.set_lr(lr);
    optimizer.zero_grad();
    const BatchOutput out = model.forward(cores);
    MultiScaleRecord rec{step, lr, {}, std::numeric_limits<double>::quiet_NaN()};
    nn::Tensor loss = mo_loss(out.core_logits, out.roi_logits, out.labels, out.valid, cfg.gamma, &rec.loss);
    if (const std::string bad = rec.loss.non_finite_part(); !bad.empty()) {
      throw std::runtime_error("multi-scale training diverged at step " + std::to_string(step) + ": " + bad +
                               " term is not finite");
    }
    loss.backward();
    optimizer.step();
    result.history.push_back(std::move(rec));
    if (schedule.eval_every > 0 && ((step + 1) % schedule.eval_every == 0 || step + 1 == schedule.steps)) consider(step + 1);
  }
  if (!best.empty()) nn::restore_state(model, best);
  model.eval();
  return result;
}

inline nlohmann::json history_json(const MultiScaleResult& result) {
  nlohmann::json log = nlohmann::json::array();
  for (const MultiScaleRecord& r : result.history) {
    nlohmann::json e{{"step", r.step}, {"lr", r.lr}, {"total", r.loss.total}};
    for (const auto& [name, v] : r.loss.terms) e[name] = v;
    if (!std::isnan(r.validation_total)) e["validation_total"] = r.validation_total;
    log.push_back(std::move(e));
  }
  return {{"best_step", result.best_step},
          {"best_validation", std::isnan(result.best_validation) ? nlohmann::json(nullptr) : nlohmann::json(result.best_validation)},
          {"history", log}};
}

}  // namespace pcaus::multiscale

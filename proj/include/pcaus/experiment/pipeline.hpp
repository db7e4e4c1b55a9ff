#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcaus/cv/splits.hpp"
#include "pcaus/data/dataset_io.hpp"
#include "pcaus/data/roi_bank.hpp"
#include "pcaus/data/synth.hpp"
#include "pcaus/eval/metrics.hpp"
#include "pcaus/eval/report.hpp"
#include "pcaus/experiment/config.hpp"
#include "pcaus/finetune/roi_finetune.hpp"
#include "pcaus/io/tensor_file.hpp"
#include "pcaus/models/backbone.hpp"
#include "pcaus/multiscale/model.hpp"
#include "pcaus/multiscale/train.hpp"
#include "pcaus/nn/checkpoint.hpp"
#include "pcaus/ssl/pretrain.hpp"

namespace pcaus::experiment {

// Random streams derived from the experiment seed.
enum class Stream : std::uint64_t {
  split = 1,
  undersample = 2,
  encoder_init = 3,
  pretrain = 4,
  projector_init = 5,
  head_init = 6,
  head_train = 7,
  finetune_batches = 8,
  multiscale_init = 9,
  multiscale_train = 10,
};

inline constexpr int kSharedUnit = -1;

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s, int unit) {
  const std::uint64_t u = unit < 0 ? 999u : static_cast<std::uint64_t>(unit);
  return data::detail::mix_seed(seed, static_cast<std::uint64_t>(s) * 1000u + u);
}

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"data",     "splits",     "pretrain", "features",
                                              "finetune", "multiscale", "metrics",  "report"};
  return names;
}

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)), message_(message) {}
  const std::string& stage() const { return stage_; }
  const std::string& message() const { return message_; }

 private:
  std::string stage_;
  std::string message_;
};

struct Prediction {
  std::string core_id;
  double probability = 0;
  int label = 0;
  int fold = 0;
  std::string split;
};

inline std::string prob_str(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9f", p);
  return buf;
}

inline void write_predictions(const fs::path& path, const std::vector<Prediction>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "core_id,probability,label,fold,split\n";
  for (const Prediction& p : rows) os << p.core_id << ',' << prob_str(p.probability) << ',' << p.label << ',' << p.fold << ',' << p.split << '\n';
}

inline std::vector<Prediction> read_predictions(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<Prediction> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = eval::detail::split_csv_line(line);
    if (c.size() != 5) throw std::runtime_error("malformed prediction line in " + path.string() + ": " + line);
    rows.push_back({c[0], std::stod(c[1]), std::stoi(c[2]), std::stoi(c[3]), c[4]});
  }
  return rows;
}

// Patches of a subset of cores, addressed by a flat index.
class CoreSubset {
 public:
  CoreSubset(const data::RoiBank& bank, std::vector<std::size_t> cores) : bank_(bank), cores_(std::move(cores)) {}
  std::size_t size() const { return cores_.size() * static_cast<std::size_t>(bank_.patches_per_core()); }
  data::Image patch(std::size_t i) const {
    const auto per = static_cast<std::size_t>(bank_.patches_per_core());
    return bank_.patch(cores_.at(i / per), static_cast<int>(i % per));
  }
  int label(std::size_t i) const { return bank_.core(cores_.at(i / static_cast<std::size_t>(bank_.patches_per_core()))).label; }

 private:
  const data::RoiBank& bank_;
  std::vector<std::size_t> cores_;
};

// One experiment run rooted at the configured output directory. Each stage
// reads its inputs from and writes its outputs to the run directory, and a
// stage whose completion marker carries the current configuration hash is
// skipped, which makes interrupted runs resumable.
class Run {
 public:
  explicit Run(ExperimentConfig config, std::ostream* log = &std::clog)
      : cfg_(std::move(config)), hash_(config_hash(cfg_)), root_(cfg_.output_dir), log_(log) {
    cfg_.validate();
    const fs::path existing = root_ / "effective_config.json";
    if (fs::exists(existing)) {
      std::string other;
      try {
        other = config_hash(parse_config(data::read_json(existing)));
      } catch (const std::exception& e) {
        throw std::runtime_error("existing run in " + root_.string() + " has an unreadable configuration: " + e.what());
      }
      if (other != hash_) {
        throw std::runtime_error("output directory " + root_.string() + " holds a run with a different configuration (hash " +
                                 other + ", now " + hash_ + "); choose another output directory");
      }
    }
    fs::create_directories(root_);
    data::write_json(existing, effective_config(cfg_));
  }

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& hash() const { return hash_; }
  const fs::path& root() const { return root_; }

  // ---- stages ----

  void data_stage() {
    timed("data", [&] {
      const fs::path dir = root_ / "data";
      if (done(dir)) return;
      if (cfg_.dataset.source == "synthetic") {
        say("data: generating synthetic cohort");
        const auto cores = data::synth_generate(cfg_.dataset.synthetic);
        data::write_dataset(dir, cores, cfg_.extraction, cfg_.dataset.write_rois, synth_json(cfg_.dataset.synthetic));
      } else {
        fs::create_directories(dir);
        data::write_json(dir / "source.json", {{"manifest", fs::absolute(cfg_.dataset.manifest).string()}});
      }
      mark_done(dir, "data");
    });
  }

  void split_stage() {
    timed("splits", [&] {
      const fs::path dir = root_ / "splits";
      if (done(dir)) return;
      const auto& cs = cores();
      cv::FoldPlan plan = cv::nested_kfold(cv::patients_of(cs), cfg_.k, stream_seed(cfg_.seed, Stream::split, 0));
      const cv::LeakageReport audit = cv::audit_leakage(plan, cs);
      if (!audit.clean()) {
        throw std::runtime_error("fold plan leaks patient " + audit.violations.front().patient_id + " (" +
                                 audit.violations.front().detail + ")");
      }
      fs::create_directories(dir);
      data::write_json(dir / "fold_plan.json", cv::to_json(plan));
      std::ofstream os(dir / "core_folds.csv");
      os << "core_id,patient_id,center_id,label,fold\n";
      for (const auto& c : cs) os << c.core_id << ',' << c.patient_id << ',' << c.center_id << ',' << c.label << ',' << plan.fold_of(c.patient_id) << '\n';
      os.close();
      plan_.reset();
      mark_done(dir, "splits");
    });
  }

  void pretrain_stage() {
    timed("pretrain", [&] {
      for (int unit : pretrain_units()) {
        const fs::path dir = root_ / "pretrain" / unit_name(unit);
        if (done(dir)) continue;
        fs::create_directories(dir);
        auto encoder = models::build_backbone(cfg_.backbone, stream_seed(cfg_.seed, Stream::encoder_init, unit));
        nlohmann::json log = {{"unit", unit_name(unit)}, {"enabled", cfg_.run_pretrain}};
        if (cfg_.run_pretrain) {
          const CoreSubset source(bank(), unit == kSharedUnit ? all_cores() : role_cores(unit, cv::Role::train));
          nn::Rng rng(stream_seed(cfg_.seed, Stream::projector_init, unit));
          ssl::Projector projector(encoder->feature_dim(), cfg_.pretrain.projector, rng);
          ssl::PretrainSchedule schedule = cfg_.pretrain.schedule;
          schedule.seed = stream_seed(cfg_.seed, Stream::pretrain, unit);
          say("pretrain " + unit_name(unit) + ": " + std::to_string(schedule.steps) + " steps on " + std::to_string(source.size()) +
              " patches");
          const auto history = ssl::pretrain(*encoder, projector, source, cfg_.pretrain.augmentation, cfg_.pretrain.vicreg, schedule);
          log["patches"] = source.size();
          log["history"] = ssl::history_json(history);
        }
        nn::save_checkpoint(*encoder, dir / "encoder.ckpt");
        data::write_json(dir / "log.json", log);
        mark_done(dir, "pretrain");
      }
    });
  }

  void features_stage() {
    timed("features", [&] {
      if (finetuned_features()) return;
      for (int unit : pretrain_units()) {
        const fs::path dir = root_ / "features" / unit_name(unit);
        if (done(dir)) continue;
        auto encoder = load_encoder(root_ / "pretrain" / unit_name(unit) / "encoder.ckpt");
        write_features(dir, *encoder);
      }
    });
  }

  void finetune_stage() {
    if (!cfg_.run_finetune) return;
    timed("finetune", [&] {
      for (int leg = 0; leg < cfg_.k; ++leg) {
        const fs::path dir = root_ / "finetune" / unit_name(leg);
        if (done(dir)) continue;
        fs::create_directories(dir);
        const std::vector<std::size_t> train = train_cores(leg);
        nn::Rng rng(stream_seed(cfg_.seed, Stream::head_init, leg));
        finetune::RoiHead head(cfg_.backbone.feature_dim(), rng);
        finetune::FinetuneSchedule schedule = cfg_.finetune.schedule;
        schedule.seed = stream_seed(cfg_.seed, Stream::head_train, leg);
        std::vector<LossBreakdown> history;
        say("finetune " + unit_name(leg) + ": " + finetune::mode_name(cfg_.finetune.mode) + " on " + std::to_string(train.size()) +
            " cores");
        if (cfg_.finetune.mode == finetune::FinetuneMode::linear_probe) {
          const auto& feats = features(feature_dir(leg));
          models::FeatureMatrix rows(static_cast<Eigen::Index>(train.size()) * patches(), cfg_.backbone.feature_dim());
          std::vector<int> labels;
          Eigen::Index r = 0;
          for (std::size_t c : train) {
            rows.middleRows(r, patches()) = feats[c];
            r += patches();
            labels.insert(labels.end(), static_cast<std::size_t>(patches()), cores()[c].label);
          }
          history = finetune::train_head(head, rows, labels, schedule);
        } else {
          auto encoder = load_encoder(root_ / "pretrain" / unit_name(pretrain_unit(leg)) / "encoder.ckpt");
          history = finetune_full(*encoder, head, train, schedule, stream_seed(cfg_.seed, Stream::finetune_batches, leg));
          nn::save_checkpoint(*encoder, dir / "encoder.ckpt");
          write_features(feature_dir(leg), *encoder);
        }
        nn::save_checkpoint(head, dir / "roi_head.ckpt");
        nlohmann::json log = nlohmann::json::array();
        for (std::size_t s = 0; s < history.size(); ++s) log.push_back({{"step", s}, {"loss", history[s].total}});
        data::write_json(dir / "log.json", {{"mode", finetune::mode_name(cfg_.finetune.mode)}, {"train_cores", train.size()}, {"history", log}});

        const auto& feats = features(feature_dir(leg));
        std::vector<Prediction> preds;
        std::ofstream roi_os(dir / "roi_probabilities.csv");
        roi_os << "core_id,roi,probability\n";
        for (cv::Role role : {cv::Role::validation, cv::Role::test}) {
          for (std::size_t c : role_cores(leg, role)) {
            const std::vector<double> p = finetune::head_probabilities(head, feats[c]);
            for (std::size_t i = 0; i < p.size(); ++i) roi_os << cores()[c].core_id << ',' << i << ',' << prob_str(p[i]) << '\n';
            preds.push_back(prediction(c, finetune::aggregate_core(p), role));
          }
        }
        roi_os.close();
        write_predictions(dir / "predictions.csv", preds);
        mark_done(dir, "finetune");
      }
    });
  }

  void multiscale_stage() {
    if (!cfg_.run_multiscale) return;
    timed("multiscale", [&] {
      for (double gamma : cfg_.multiscale.gammas) {
        for (int leg = 0; leg < cfg_.k; ++leg) {
          const fs::path dir = root_ / "multiscale" / gamma_tag(gamma) / unit_name(leg);
          if (done(dir)) continue;
          fs::create_directories(dir);
          const auto& feats = features(feature_dir(leg));
          auto sequences = [&](const std::vector<std::size_t>& idx) {
            std::vector<multiscale::CoreSequence> out;
            for (std::size_t c : idx) {
              out.push_back({feats[c], std::vector<std::uint8_t>(static_cast<std::size_t>(patches()), 1), cores()[c].label,
                             cores()[c].core_id});
            }
            return out;
          };
          const auto train = sequences(train_cores(leg));
          const auto validation = sequences(role_cores(leg, cv::Role::validation));

          multiscale::MOConfig mc = cfg_.multiscale.model;
          mc.gamma = gamma;
          nn::Rng rng(stream_seed(cfg_.seed, Stream::multiscale_init, leg));
          multiscale::MultiScaleModel model(cfg_.backbone.feature_dim(), mc, rng);
          const fs::path head_ckpt = root_ / "finetune" / unit_name(leg) / "roi_head.ckpt";
          if (cfg_.run_finetune && fs::exists(head_ckpt)) nn::load_checkpoint(model.roi_head(), head_ckpt);

          multiscale::MultiScaleSchedule schedule = cfg_.multiscale.schedule;
          schedule.seed = stream_seed(cfg_.seed, Stream::multiscale_train, leg);
          say("multiscale " + gamma_tag(gamma) + " " + unit_name(leg) + ": " + std::to_string(schedule.steps) + " steps on " +
              std::to_string(train.size()) + " cores");
          const multiscale::MultiScaleResult result = multiscale::multiscale_train(model, train, validation, schedule);
          nn::save_checkpoint(model, dir / "model.ckpt");
          data::write_json(dir / "log.json", multiscale::history_json(result));

          std::vector<Prediction> preds;
          for (cv::Role role : {cv::Role::validation, cv::Role::test}) {
            const std::vector<std::size_t> idx = role_cores(leg, role);
            const auto seqs = sequences(idx);
            const std::vector<double> p = multiscale::predict_cores(model, seqs);
            for (std::size_t i = 0; i < idx.size(); ++i) preds.push_back(prediction(idx[i], p[i], role));
          }
          write_predictions(dir / "predictions.csv", preds);
          mark_done(dir, "multiscale");
        }
      }
    });
  }

  void evaluate_stage() {
    timed("metrics", [&] {
      const fs::path dir = root_ / "metrics";
      if (done(dir)) return;
      fs::create_directories(dir);
      const std::string backbone = models::display_name(cfg_.backbone.variant);
      if (cfg_.run_finetune) {
        evaluate_row(eval::Scale::roi, backbone, finetune::mode_label(cfg_.finetune.mode),
                     "roi_" + finetune::mode_name(cfg_.finetune.mode), [&](int leg) { return root_ / "finetune" / unit_name(leg); });
      }
      if (cfg_.run_multiscale) {
        for (double gamma : cfg_.multiscale.gammas) {
          evaluate_row(eval::Scale::core, backbone, core_row_label(gamma), "core_" + gamma_tag(gamma),
                       [&](int leg) { return root_ / "multiscale" / gamma_tag(gamma) / unit_name(leg); });
        }
      }
      mark_done(dir, "metrics");
    });
  }

  void report_stage() {
    timed("report", [&] {
      const fs::path dir = root_ / "report";
      std::vector<fs::path> files;
      const fs::path metrics = root_ / "metrics";
      if (fs::exists(metrics)) {
        for (const auto& e : fs::directory_iterator(metrics)) {
          if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
        }
      }
      std::sort(files.begin(), files.end());
      const auto rows = eval::read_fold_csvs(files, cfg_.k);
      fs::create_directories(dir);
      std::ofstream(dir / "table.md") << eval::markdown_table(rows);
      std::ofstream(dir / "summary.csv") << eval::summary_csv(rows);
      mark_done(dir, "report");
    });
  }

  // Every stage in order. On failure the manifest records the failing stage
  // and the error is rethrown.
  void run_all() {
    run_guarded([&] {
      data_stage();
      split_stage();
      pretrain_stage();
      features_stage();
      finetune_stage();
      multiscale_stage();
      evaluate_stage();
      report_stage();
    });
  }

  // Runs `body`, then writes the manifest either way.
  template <class F>
  void run_guarded(F&& body) {
    try {
      body();
    } catch (const StageError& e) {
      write_manifest(e.stage(), e.message());
      throw;
    } catch (const std::exception& e) {
      write_manifest("unknown", e.what());
      throw;
    }
    write_manifest();
  }

  void write_manifest(const std::string& failed_stage = "", const std::string& message = "") const {
    nlohmann::json stages = nlohmann::json::object();
    for (const std::string& name : stage_names()) {
      const fs::path dir = root_ / name;
      nlohmann::json artifacts = nlohmann::json::array();
      for (const std::string& f : files_under(dir)) artifacts.push_back(f);
      std::string status = "pending";
      if (name == failed_stage) {
        status = "failed";
      } else if (stage_complete(name)) {
        status = "complete";
      } else if (stage_skipped(name)) {
        status = "skipped";
      }
      nlohmann::json s = {{"status", status}, {"artifacts", artifacts}};
      if (auto it = timings_.find(name); it != timings_.end()) s["seconds"] = it->second;
      stages[name] = s;
    }
    nlohmann::json files = nlohmann::json::array();
    for (const std::string& f : files_under(root_)) {
      if (f != "manifest.json") files.push_back(f);
    }
    files.push_back("manifest.json");
    nlohmann::json legs = nlohmann::json::array();
    for (int leg = 0; leg < cfg_.k; ++leg) legs.push_back(unit_seeds(leg));
    nlohmann::json m = {{"format", "pcaus-run/1"},
                        {"config_hash", hash_},
                        {"effective_config", "effective_config.json"},
                        {"fold_plan", "splits/fold_plan.json"},
                        {"seeds",
                         {{"experiment", cfg_.seed},
                          {"dataset", cfg_.dataset.synthetic.seed},
                          {"split", stream_seed(cfg_.seed, Stream::split, 0)},
                          {"shared", unit_seeds(kSharedUnit)},
                          {"legs", legs}}},
                        {"stages", stages},
                        {"files", files}};
    m["failure"] = failed_stage.empty() ? nlohmann::json(nullptr) : nlohmann::json{{"stage", failed_stage}, {"message", message}};
    data::write_json(root_ / "manifest.json", m);
  }

  // ---- dataset and split access ----

  const std::vector<data::BiopsyCore>& cores() {
    if (!dataset_) {
      const fs::path manifest = cfg_.dataset.source == "synthetic" ? root_ / "data" / "manifest.json" : fs::path(cfg_.dataset.manifest);
      if (!fs::exists(manifest)) throw std::runtime_error("dataset not found at " + manifest.string() + "; run the data stage first");
      dataset_ = data::load_dataset(manifest);
    }
    return dataset_->cores;
  }

  const cv::FoldPlan& plan() {
    if (!plan_) {
      const fs::path p = root_ / "splits" / "fold_plan.json";
      if (!fs::exists(p)) throw std::runtime_error("fold plan not found at " + p.string() + "; run the split stage first");
      plan_ = cv::fold_plan_from_json(data::read_json(p));
      if (plan_->k != cfg_.k) throw std::runtime_error("fold plan has k=" + std::to_string(plan_->k) + ", config has k=" + std::to_string(cfg_.k));
    }
    return *plan_;
  }

  int fold_of(std::size_t core) { return plan().fold_of(cores().at(core).patient_id); }

  std::vector<std::size_t> all_cores() {
    std::vector<std::size_t> out(cores().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return out;
  }

  std::vector<std::size_t> role_cores(int leg, cv::Role role) {
    const cv::Leg& l = plan().legs.at(static_cast<std::size_t>(leg));
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < cores().size(); ++c) {
      if (l.role_of_fold(fold_of(c)) == role) out.push_back(c);
    }
    return out;
  }

  // Training cores of a leg after benign undersampling.
  std::vector<std::size_t> train_cores(int leg) {
    const std::vector<std::size_t> train = role_cores(leg, cv::Role::train);
    std::vector<int> labels;
    for (std::size_t c : train) labels.push_back(cores()[c].label);
    std::vector<std::size_t> keep;
    try {
      keep = cv::undersample_benign(labels, stream_seed(cfg_.seed, Stream::undersample, leg));
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(unit_name(leg) + ": training folds contain no cancer cores");
    }
    std::vector<std::size_t> out;
    for (std::size_t i : keep) out.push_back(train[i]);
    return out;
  }

 private:
  using FeatureSet = std::vector<models::FeatureMatrix>;

  static std::string unit_name(int unit) { return unit == kSharedUnit ? "shared" : "leg" + std::to_string(unit); }

  int patches() const { return cfg_.extraction.n_patches; }

  std::vector<int> pretrain_units() const {
    if (cfg_.pretrain.scope == SslScope::shared) return {kSharedUnit};
    std::vector<int> u;
    for (int leg = 0; leg < cfg_.k; ++leg) u.push_back(leg);
    return u;
  }

  int pretrain_unit(int leg) const { return cfg_.pretrain.scope == SslScope::shared ? kSharedUnit : leg; }

  bool finetuned_features() const { return cfg_.run_finetune && cfg_.finetune.mode == finetune::FinetuneMode::full; }

  fs::path feature_dir(int leg) const {
    if (finetuned_features()) return root_ / "features" / ("finetuned_" + unit_name(leg));
    return root_ / "features" / unit_name(pretrain_unit(leg));
  }

  static std::string core_row_label(double gamma) {
    if (gamma == 1.0) return "BERT";
    char buf[64];
    std::snprintf(buf, sizeof buf, "BERT + MO (γ=%.2f)", gamma);
    return buf;
  }

  nlohmann::json unit_seeds(int unit) const {
    nlohmann::json s = {{"encoder_init", stream_seed(cfg_.seed, Stream::encoder_init, unit)},
                        {"pretrain", stream_seed(cfg_.seed, Stream::pretrain, unit)},
                        {"projector_init", stream_seed(cfg_.seed, Stream::projector_init, unit)}};
    if (unit != kSharedUnit) {
      s["undersample"] = stream_seed(cfg_.seed, Stream::undersample, unit);
      s["head_init"] = stream_seed(cfg_.seed, Stream::head_init, unit);
      s["head_train"] = stream_seed(cfg_.seed, Stream::head_train, unit);
      s["finetune_batches"] = stream_seed(cfg_.seed, Stream::finetune_batches, unit);
      s["multiscale_init"] = stream_seed(cfg_.seed, Stream::multiscale_init, unit);
      s["multiscale_train"] = stream_seed(cfg_.seed, Stream::multiscale_train, unit);
    }
    return s;
  }

  const data::RoiBank& bank() {
    if (!bank_) {
      data::ExtractionParams p = cfg_.extraction;
      bank_ = std::make_unique<data::RoiBank>(cores(), p);
    }
    return *bank_;
  }

  Prediction prediction(std::size_t core, double probability, cv::Role role) {
    return {cores()[core].core_id, probability, cores()[core].label, fold_of(core), cv::role_name(role)};
  }

  std::unique_ptr<models::Encoder> load_encoder(const fs::path& ckpt) const {
    if (!fs::exists(ckpt)) throw std::runtime_error("encoder checkpoint " + ckpt.string() + " not found; run the pretrain stage first");
    auto encoder = models::build_backbone(cfg_.backbone, 0);
    nn::load_checkpoint(*encoder, ckpt);
    return encoder;
  }

  void write_features(const fs::path& dir, models::Encoder& encoder) {
    if (done(dir)) return;
    say("features: encoding " + std::to_string(cores().size()) + " cores into " + fs::relative(dir, root_).generic_string());
    fs::create_directories(dir);
    nlohmann::json index = nlohmann::json::array();
    const data::RoiBank& b = bank();
    for (std::size_t c = 0; c < b.core_count(); ++c) {
      std::vector<data::Image> imgs;
      for (int r = 0; r < patches(); ++r) imgs.push_back(b.patch(c, r));
      const models::FeatureMatrix f = models::encode(encoder, data::stack_images(imgs), models::Mode::eval);
      const std::string file = b.core(c).core_id + ".pct";
      io::save_tensor_file(dir / file, {static_cast<std::uint64_t>(f.rows()), static_cast<std::uint64_t>(f.cols())}, f.data());
      index.push_back({{"core_id", b.core(c).core_id}, {"label", b.core(c).label}, {"file", file}, {"valid", patches()}});
    }
    data::write_json(dir / "index.json", {{"feature_dim", encoder.feature_dim()}, {"cores", index}});
    feature_cache_.erase(dir.string());
    mark_done(dir, "features");
  }

  const FeatureSet& features(const fs::path& dir) {
    auto it = feature_cache_.find(dir.string());
    if (it != feature_cache_.end()) return it->second;
    if (!done(dir)) throw std::runtime_error("features missing in " + dir.string() + "; run the features stage first");
    FeatureSet set;
    for (const auto& core : cores()) {
      const io::TensorData t = io::load_tensor_file(dir / (core.core_id + ".pct"));
      if (t.shape.size() != 2 || static_cast<int>(t.shape[0]) != patches() ||
          static_cast<int>(t.shape[1]) != cfg_.backbone.feature_dim()) {
        throw std::runtime_error("feature file for " + core.core_id + " has an unexpected shape");
      }
      models::FeatureMatrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
      std::copy(t.values.begin(), t.values.end(), m.data());
      set.push_back(std::move(m));
    }
    return feature_cache_.emplace(dir.string(), std::move(set)).first->second;
  }

  std::vector<LossBreakdown> finetune_full(models::Encoder& encoder, finetune::RoiHead& head, const std::vector<std::size_t>& train,
                                           const finetune::FinetuneSchedule& schedule, std::uint64_t batch_seed) {
    std::vector<nn::Tensor> params = encoder.parameters();
    for (const nn::Tensor& p : head.parameters()) params.push_back(p);
    nn::AdamW optimizer(params, {schedule.lr, 0.9f, 0.999f, 1e-8f, schedule.weight_decay});
    const CoreSubset source(bank(), train);
    std::mt19937_64 rng(batch_seed);
    std::uniform_int_distribution<std::size_t> pick(0, source.size() - 1);
    std::vector<LossBreakdown> history;
    for (int step = 0; step < schedule.steps; ++step) {
      std::vector<data::Image> imgs;
      std::vector<int> labels;
      for (int i = 0; i < schedule.batch_size; ++i) {
        const std::size_t flat = pick(rng);
        imgs.push_back(source.patch(flat));
        labels.push_back(source.label(flat));
      }
      optimizer.set_lr(nn::cosine_lr(schedule.lr, step, schedule.steps));
      history.push_back(finetune::finetune_step(encoder, head, data::stack_images(imgs), labels, optimizer, step));
    }
    encoder.eval();
    return history;
  }

  template <class DirOf>
  void evaluate_row(eval::Scale scale, const std::string& backbone, const std::string& label, const std::string& file, DirOf dir_of) {
    eval::ReportRow row{scale, {backbone, label, {}}};
    for (int leg = 0; leg < cfg_.k; ++leg) {
      const std::vector<Prediction> preds = read_predictions(dir_of(leg) / "predictions.csv");
      std::vector<double> vs, ts;
      std::vector<int> vl, tl;
      for (const Prediction& p : preds) {
        (p.split == "test" ? ts : vs).push_back(p.probability);
        (p.split == "test" ? tl : vl).push_back(p.label);
      }
      double threshold = 0.5;
      if (cfg_.threshold == ThresholdMode::tuned) threshold = eval::tune_threshold(vs, vl);
      const int test_fold = plan().legs.at(static_cast<std::size_t>(leg)).test_fold;
      try {
        row.metrics.per_fold.push_back(eval::fold_metrics(test_fold, ts, tl, threshold));
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error(file + " fold " + std::to_string(test_fold) + ": " + e.what());
      }
      if (cfg_.roc_curves) {
        fs::create_directories(root_ / "metrics" / "roc");
        std::ofstream(root_ / "metrics" / "roc" / (file + "_fold" + std::to_string(test_fold) + ".csv")) << eval::roc_curve_csv(ts, tl);
      }
    }
    std::ofstream os(root_ / "metrics" / (file + ".csv"));
    os << eval::fold_csv_header() << eval::fold_csv_rows(row);
  }

  // ---- completion markers ----

  bool done(const fs::path& dir) const {
    const fs::path marker = dir / "stage.json";
    if (!fs::exists(marker)) return false;
    try {
      return data::read_json(marker).value("config_hash", std::string()) == hash_;
    } catch (const std::exception&) {
      return false;
    }
  }

  void mark_done(const fs::path& dir, const std::string& stage) const {
    fs::create_directories(dir);
    data::write_json(dir / "stage.json", {{"stage", stage}, {"config_hash", hash_}, {"status", "complete"}});
  }

  bool stage_skipped(const std::string& name) const {
    if (name == "finetune") return !cfg_.run_finetune;
    if (name == "multiscale") return !cfg_.run_multiscale;
    return false;
  }

  bool stage_complete(const std::string& name) const {
    auto all = [&](const std::vector<fs::path>& dirs) {
      for (const auto& d : dirs) {
        if (!done(d)) return false;
      }
      return !dirs.empty();
    };
    std::vector<fs::path> dirs;
    if (name == "pretrain") {
      for (int u : pretrain_units()) dirs.push_back(root_ / "pretrain" / unit_name(u));
    } else if (name == "features") {
      if (finetuned_features()) {
        for (int leg = 0; leg < cfg_.k; ++leg) dirs.push_back(feature_dir(leg));
      } else {
        for (int u : pretrain_units()) dirs.push_back(root_ / "features" / unit_name(u));
      }
    } else if (name == "finetune") {
      if (!cfg_.run_finetune) return false;
      for (int leg = 0; leg < cfg_.k; ++leg) dirs.push_back(root_ / "finetune" / unit_name(leg));
    } else if (name == "multiscale") {
      if (!cfg_.run_multiscale) return false;
      for (double g : cfg_.multiscale.gammas) {
        for (int leg = 0; leg < cfg_.k; ++leg) dirs.push_back(root_ / "multiscale" / gamma_tag(g) / unit_name(leg));
      }
    } else {
      dirs.push_back(root_ / name);
    }
    return all(dirs);
  }

  std::vector<std::string> files_under(const fs::path& dir) const {
    std::vector<std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root_).generic_string());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  template <class F>
  void timed(const std::string& stage, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
    timings_[stage] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  void say(const std::string& msg) const {
    if (log_) *log_ << "[pcaus] " << msg << std::endl;
  }

  ExperimentConfig cfg_;
  std::string hash_;
  fs::path root_;
  std::ostream* log_;
  std::optional<data::LoadedDataset> dataset_;
  std::optional<cv::FoldPlan> plan_;
  std::unique_ptr<data::RoiBank> bank_;
  std::map<std::string, FeatureSet> feature_cache_;
  std::map<std::string, double> timings_;
};

}  // namespace pcaus::experiment

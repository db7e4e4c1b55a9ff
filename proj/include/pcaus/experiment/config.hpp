#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcaus/data/dataset_io.hpp"
#include "pcaus/data/roi.hpp"
#include "pcaus/data/synth.hpp"
#include "pcaus/finetune/roi_finetune.hpp"
#include "pcaus/models/encoder.hpp"
#include "pcaus/multiscale/model.hpp"
#include "pcaus/multiscale/train.hpp"
#include "pcaus/ssl/pretrain.hpp"

namespace pcaus::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reads one JSON object, checking types and rejecting keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    if (!has(key)) return;
    read(j_.at(key), key, out);
  }

  ObjectReader child(const std::string& key) {
    used_.insert(key);
    static const json empty = json::object();
    return ObjectReader(has(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown config key '" + (path_.empty() ? key : path_ + "." + key) + "'");
    }
  }

 private:
  std::string where(const std::string& key = "") const {
    const std::string p = key.empty() ? path_ : (path_.empty() ? key : path_ + "." + key);
    return "config " + (p.empty() ? std::string("root") : p);
  }

  void read(const json& v, const std::string& key, int& out) const {
    if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
    out = v.get<int>();
  }
  void read(const json& v, const std::string& key, std::uint64_t& out) const {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(where(key) + ": expected a nonnegative integer");
    }
    out = v.get<std::uint64_t>();
  }
  void read(const json& v, const std::string& key, double& out) const {
    if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    out = v.get<double>();
  }
  void read(const json& v, const std::string& key, float& out) const {
    double d = 0;
    read(v, key, d);
    out = static_cast<float>(d);
  }
  void read(const json& v, const std::string& key, bool& out) const {
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    out = v.get<bool>();
  }
  void read(const json& v, const std::string& key, std::string& out) const {
    if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    out = v.get<std::string>();
  }
  void read(const json& v, const std::string& key, std::vector<double>& out) const {
    if (!v.is_array()) throw ConfigError(where(key) + ": expected an array of numbers");
    out.clear();
    for (const json& e : v) {
      if (!e.is_number()) throw ConfigError(where(key) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }
  void read(const json& v, const std::string& key, std::array<int, 4>& out) const {
    if (!v.is_array() || v.size() != 4) throw ConfigError(where(key) + ": expected an array of 4 integers");
    for (std::size_t i = 0; i < 4; ++i) {
      if (!v[i].is_number_integer()) throw ConfigError(where(key) + ": expected an array of 4 integers");
      out[i] = v[i].get<int>();
    }
  }
  void read(const json& v, const std::string& key, ssl::Range& out) const {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(where(key) + ": expected [low, high]");
    }
    out = {v[0].get<double>(), v[1].get<double>()};
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

enum class SslScope { per_leg, shared };
enum class ThresholdMode { fixed, tuned };

struct DatasetSettings {
  std::string source = "synthetic";  // or "manifest"
  std::string manifest;
  data::SynthConfig synthetic;
  bool synthetic_seed_set = false;
  bool write_rois = false;
};

struct PretrainSettings {
  ssl::PretrainSchedule schedule;
  SslScope scope = SslScope::per_leg;
  ssl::ProjectorConfig projector;
  ssl::AugmentationPolicy augmentation;
  ssl::VICRegWeights vicreg;
};

struct FinetuneSettings {
  finetune::FinetuneMode mode = finetune::FinetuneMode::linear_probe;
  finetune::FinetuneSchedule schedule;
};

struct MultiScaleSettings {
  std::vector<double> gammas{0.5};
  multiscale::MOConfig model;
  multiscale::MultiScaleSchedule schedule;
};

struct ExperimentConfig {
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;
  int k = 5;
  DatasetSettings dataset;
  data::ExtractionParams extraction;
  models::BackboneConfig backbone;
  bool run_pretrain = true;
  bool run_finetune = true;
  bool run_multiscale = true;
  PretrainSettings pretrain;
  FinetuneSettings finetune;
  MultiScaleSettings multiscale;
  ThresholdMode threshold = ThresholdMode::fixed;
  bool roc_curves = true;

  void validate() const;
};

inline std::string gamma_tag(double gamma) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "gamma_%.2f", gamma);
  return buf;
}

inline void ExperimentConfig::validate() const {
  if (k < 2) throw ConfigError("config k: must be at least 2");
  if (output_dir.empty()) throw ConfigError("config output_dir: must not be empty");
  if (dataset.source == "synthetic") {
    dataset.synthetic.validate();
  } else if (dataset.source == "manifest") {
    if (dataset.manifest.empty()) throw ConfigError("config dataset.manifest: required when source is 'manifest'");
    if (!fs::exists(dataset.manifest)) throw ConfigError("config dataset.manifest: " + dataset.manifest + " does not exist");
  } else {
    throw ConfigError("config dataset.source: expected 'synthetic' or 'manifest'");
  }
  if (extraction.n_patches < 1 || !(extraction.roi_mm > 0) || extraction.out_size < 2) {
    throw ConfigError("config extraction: invalid parameters");
  }
  if (extraction.out_size != backbone.image_size) throw ConfigError("config extraction.out_size must equal the backbone image size");
  backbone.validate();
  pretrain.augmentation.validate();
  pretrain.vicreg.validate();
  pretrain.projector.validate();
  if (pretrain.schedule.steps < 0 || pretrain.schedule.batch_size < 2) throw ConfigError("config pretrain: batch_size must be at least 2");
  if (finetune.schedule.steps < 1 || finetune.schedule.batch_size < 1) throw ConfigError("config finetune: steps and batch_size must be positive");
  multiscale.model.validate();
  if (multiscale.model.sequence_length != extraction.n_patches) {
    throw ConfigError("config multiscale.sequence_length must equal extraction.n_patches");
  }
  if (multiscale.gammas.empty()) throw ConfigError("config multiscale.gammas: at least one value required");
  std::set<std::string> tags;
  for (double g : multiscale.gammas) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("config multiscale.gammas: values must lie in [0, 1]");
    if (!tags.insert(gamma_tag(g)).second) throw ConfigError("config multiscale.gammas: duplicate value " + gamma_tag(g));
  }
  if (multiscale.schedule.steps < 1 || multiscale.schedule.batch_size < 1) {
    throw ConfigError("config multiscale: steps and batch_size must be positive");
  }
}

namespace detail {

inline void read_texture(ObjectReader r, data::TextureParams& t) {
  r.get("spectral_slope", t.spectral_slope);
  r.get("variance", t.variance);
  r.get("speckle_scale", t.speckle_scale);
  r.finish();
}

inline json texture_json(const data::TextureParams& t) {
  return {{"spectral_slope", t.spectral_slope}, {"variance", t.variance}, {"speckle_scale", t.speckle_scale}};
}

inline json range_json(const ssl::Range& r) { return json::array({r.lo, r.hi}); }

}  // namespace detail

inline json synth_json(const data::SynthConfig& s) {
  return {{"n_patients", s.n_patients},
          {"cores_per_patient", s.cores_per_patient},
          {"n_centers", s.n_centers},
          {"cancer_core_rate", s.cancer_core_rate},
          {"involvement_range", json::array({s.involvement_min, s.involvement_max})},
          {"benign_texture", detail::texture_json(s.benign_texture)},
          {"cancer_texture", detail::texture_json(s.cancer_texture)},
          {"axial_samples", s.axial_samples},
          {"lateral_lines", s.lateral_lines},
          {"axial_spacing", s.axial_spacing},
          {"lateral_spacing", s.lateral_spacing},
          {"needle_angle_max", s.needle_angle_max},
          {"needle_depth_range", json::array({s.needle_depth_min, s.needle_depth_max})},
          {"needle_width", s.needle_width},
          {"roi_mm", s.roi_mm},
          {"seed", s.seed}};
}

inline void read_synth(ObjectReader r, data::SynthConfig& s, bool& seed_set) {
  r.get("n_patients", s.n_patients);
  r.get("cores_per_patient", s.cores_per_patient);
  r.get("n_centers", s.n_centers);
  r.get("cancer_core_rate", s.cancer_core_rate);
  ssl::Range inv{s.involvement_min, s.involvement_max};
  r.get("involvement_range", inv);
  s.involvement_min = inv.lo;
  s.involvement_max = inv.hi;
  detail::read_texture(r.child("benign_texture"), s.benign_texture);
  detail::read_texture(r.child("cancer_texture"), s.cancer_texture);
  r.get("axial_samples", s.axial_samples);
  r.get("lateral_lines", s.lateral_lines);
  r.get("axial_spacing", s.axial_spacing);
  r.get("lateral_spacing", s.lateral_spacing);
  r.get("needle_angle_max", s.needle_angle_max);
  ssl::Range depth{s.needle_depth_min, s.needle_depth_max};
  r.get("needle_depth_range", depth);
  s.needle_depth_min = depth.lo;
  s.needle_depth_max = depth.hi;
  r.get("needle_width", s.needle_width);
  r.get("roi_mm", s.roi_mm);
  seed_set = r.has("seed");
  r.get("seed", s.seed);
  r.finish();
}

inline json backbone_json(const models::BackboneConfig& b) {
  return {{"variant", models::variant_name(b.variant)},
          {"desk_scale", b.desk_scale},
          {"image_size", b.image_size},
          {"resnet",
           {{"widths", b.resnet.widths},
            {"blocks_per_stage", b.resnet.blocks_per_stage},
            {"stem_kernel", b.resnet.stem_kernel},
            {"stem_stride", b.resnet.stem_stride},
            {"stem_pool", b.resnet.stem_pool},
            {"two_conv_blocks", b.resnet.two_conv_blocks}}},
          {"vit",
           {{"patch", b.vit.patch}, {"width", b.vit.width}, {"depth", b.vit.depth}, {"heads", b.vit.heads}, {"mlp_ratio", b.vit.mlp_ratio}}},
          {"cct",
           {{"tokenizer_channels", b.cct.tokenizer_channels},
            {"width", b.cct.width},
            {"depth", b.cct.depth},
            {"heads", b.cct.heads},
            {"mlp_ratio", b.cct.mlp_ratio}}},
          {"pvt",
           {{"depths", b.pvt.depths},
            {"widths", b.pvt.widths},
            {"heads", b.pvt.heads},
            {"patch", b.pvt.patch},
            {"reduction", b.pvt.reduction},
            {"mlp_ratio", b.pvt.mlp_ratio}}},
          {"feature_dim", b.feature_dim()}};
}

// Variant and scale select a preset; explicit fields then override it.
inline models::BackboneConfig read_backbone(ObjectReader r) {
  std::string variant = "resnet18_slim";
  bool desk = true;
  r.get("variant", variant);
  r.get("desk_scale", desk);
  models::BackboneConfig b = models::BackboneConfig::preset(models::parse_variant(variant), desk);
  r.get("image_size", b.image_size);
  {
    ObjectReader s = r.child("resnet");
    s.get("widths", b.resnet.widths);
    s.get("blocks_per_stage", b.resnet.blocks_per_stage);
    s.get("stem_kernel", b.resnet.stem_kernel);
    s.get("stem_stride", b.resnet.stem_stride);
    s.get("stem_pool", b.resnet.stem_pool);
    s.get("two_conv_blocks", b.resnet.two_conv_blocks);
    s.finish();
  }
  {
    ObjectReader s = r.child("vit");
    s.get("patch", b.vit.patch);
    s.get("width", b.vit.width);
    s.get("depth", b.vit.depth);
    s.get("heads", b.vit.heads);
    s.get("mlp_ratio", b.vit.mlp_ratio);
    s.finish();
  }
  {
    ObjectReader s = r.child("cct");
    s.get("tokenizer_channels", b.cct.tokenizer_channels);
    s.get("width", b.cct.width);
    s.get("depth", b.cct.depth);
    s.get("heads", b.cct.heads);
    s.get("mlp_ratio", b.cct.mlp_ratio);
    s.finish();
  }
  {
    ObjectReader s = r.child("pvt");
    s.get("depths", b.pvt.depths);
    s.get("widths", b.pvt.widths);
    s.get("heads", b.pvt.heads);
    s.get("patch", b.pvt.patch);
    s.get("reduction", b.pvt.reduction);
    s.get("mlp_ratio", b.pvt.mlp_ratio);
    s.finish();
  }
  int feature_dim = b.feature_dim();
  r.get("feature_dim", feature_dim);
  if (feature_dim != b.feature_dim()) {
    throw ConfigError("config backbone.feature_dim: " + std::to_string(feature_dim) + " disagrees with the architecture (" +
                      std::to_string(b.feature_dim()) + ")");
  }
  r.finish();
  return b;
}

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  ObjectReader root(j, "");
  root.get("output_dir", c.output_dir);
  root.get("seed", c.seed);
  root.get("k", c.k);

  {
    ObjectReader d = root.child("dataset");
    d.get("source", c.dataset.source);
    d.get("manifest", c.dataset.manifest);
    d.get("write_rois", c.dataset.write_rois);
    read_synth(d.child("synthetic"), c.dataset.synthetic, c.dataset.synthetic_seed_set);
    d.finish();
  }
  if (!c.dataset.synthetic_seed_set) c.dataset.synthetic.seed = c.seed;
  {
    ObjectReader e = root.child("extraction");
    e.get("n_patches", c.extraction.n_patches);
    e.get("roi_mm", c.extraction.roi_mm);
    e.get("out_size", c.extraction.out_size);
    e.finish();
  }
  c.backbone = read_backbone(root.child("backbone"));
  {
    ObjectReader s = root.child("stages");
    s.get("pretrain", c.run_pretrain);
    s.get("roi_finetune", c.run_finetune);
    s.get("multiscale", c.run_multiscale);
    s.finish();
  }
  {
    ObjectReader p = root.child("pretrain");
    p.get("steps", c.pretrain.schedule.steps);
    p.get("batch_size", c.pretrain.schedule.batch_size);
    p.get("lr", c.pretrain.schedule.lr);
    p.get("weight_decay", c.pretrain.schedule.weight_decay);
    p.get("warmup", c.pretrain.schedule.warmup);
    std::string scope = "per_leg";
    p.get("scope", scope);
    if (scope == "per_leg") {
      c.pretrain.scope = SslScope::per_leg;
    } else if (scope == "shared") {
      c.pretrain.scope = SslScope::shared;
    } else {
      throw ConfigError("config pretrain.scope: expected 'per_leg' or 'shared'");
    }
    {
      ObjectReader pr = p.child("projector");
      pr.get("hidden", c.pretrain.projector.hidden);
      pr.get("out", c.pretrain.projector.out);
      pr.finish();
    }
    {
      ObjectReader a = p.child("augmentation");
      a.get("rotation_deg", c.pretrain.augmentation.rotation_deg);
      a.get("scale", c.pretrain.augmentation.scale);
      a.get("crop_area", c.pretrain.augmentation.crop_area);
      a.get("gamma", c.pretrain.augmentation.gamma);
      a.finish();
    }
    {
      ObjectReader v = p.child("vicreg");
      v.get("lambda_inv", c.pretrain.vicreg.lambda_inv);
      v.get("mu_var", c.pretrain.vicreg.mu_var);
      v.get("nu_cov", c.pretrain.vicreg.nu_cov);
      v.get("variance_target", c.pretrain.vicreg.variance_target);
      v.get("variance_eps", c.pretrain.vicreg.variance_eps);
      v.finish();
    }
    p.finish();
  }
  {
    ObjectReader f = root.child("finetune");
    std::string mode = "linear_probe";
    f.get("mode", mode);
    try {
      c.finetune.mode = finetune::parse_mode(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config finetune.mode: ") + e.what());
    }
    f.get("steps", c.finetune.schedule.steps);
    f.get("batch_size", c.finetune.schedule.batch_size);
    f.get("lr", c.finetune.schedule.lr);
    f.get("weight_decay", c.finetune.schedule.weight_decay);
    f.finish();
  }
  {
    ObjectReader m = root.child("multiscale");
    m.get("gammas", c.multiscale.gammas);
    m.get("layers", c.multiscale.model.layers);
    m.get("hidden", c.multiscale.model.hidden);
    m.get("heads", c.multiscale.model.heads);
    m.get("ffn", c.multiscale.model.ffn);
    m.get("sequence_length", c.multiscale.model.sequence_length);
    m.get("steps", c.multiscale.schedule.steps);
    m.get("batch_size", c.multiscale.schedule.batch_size);
    m.get("lr", c.multiscale.schedule.lr);
    m.get("weight_decay", c.multiscale.schedule.weight_decay);
    m.get("warmup", c.multiscale.schedule.warmup);
    m.get("eval_every", c.multiscale.schedule.eval_every);
    m.finish();
  }
  {
    ObjectReader e = root.child("evaluation");
    std::string threshold = "fixed";
    e.get("threshold", threshold);
    if (threshold == "fixed") {
      c.threshold = ThresholdMode::fixed;
    } else if (threshold == "tuned") {
      c.threshold = ThresholdMode::tuned;
    } else {
      throw ConfigError("config evaluation.threshold: expected 'fixed' or 'tuned'");
    }
    e.get("roc_curves", c.roc_curves);
    e.finish();
  }
  root.finish();
  c.multiscale.model.gamma = c.multiscale.gammas.front();
  c.validate();
  return c;
}

// Fully resolved configuration, defaults included.
inline json effective_config(const ExperimentConfig& c) {
  const auto& p = c.pretrain;
  const auto& m = c.multiscale;
  return {{"output_dir", c.output_dir},
          {"seed", c.seed},
          {"k", c.k},
          {"dataset",
           {{"source", c.dataset.source},
            {"manifest", c.dataset.manifest},
            {"write_rois", c.dataset.write_rois},
            {"synthetic", synth_json(c.dataset.synthetic)}}},
          {"extraction", data::extraction_json(c.extraction)},
          {"backbone", backbone_json(c.backbone)},
          {"stages", {{"pretrain", c.run_pretrain}, {"roi_finetune", c.run_finetune}, {"multiscale", c.run_multiscale}}},
          {"pretrain",
           {{"steps", p.schedule.steps},
            {"batch_size", p.schedule.batch_size},
            {"lr", p.schedule.lr},
            {"weight_decay", p.schedule.weight_decay},
            {"warmup", p.schedule.warmup},
            {"scope", p.scope == SslScope::shared ? "shared" : "per_leg"},
            {"projector", {{"hidden", p.projector.hidden}, {"out", p.projector.out}}},
            {"augmentation",
             {{"rotation_deg", detail::range_json(p.augmentation.rotation_deg)},
              {"scale", detail::range_json(p.augmentation.scale)},
              {"crop_area", detail::range_json(p.augmentation.crop_area)},
              {"gamma", detail::range_json(p.augmentation.gamma)}}},
            {"vicreg",
             {{"lambda_inv", p.vicreg.lambda_inv},
              {"mu_var", p.vicreg.mu_var},
              {"nu_cov", p.vicreg.nu_cov},
              {"variance_target", p.vicreg.variance_target},
              {"variance_eps", p.vicreg.variance_eps}}}}},
          {"finetune",
           {{"mode", finetune::mode_name(c.finetune.mode)},
            {"steps", c.finetune.schedule.steps},
            {"batch_size", c.finetune.schedule.batch_size},
            {"lr", c.finetune.schedule.lr},
            {"weight_decay", c.finetune.schedule.weight_decay}}},
          {"multiscale",
           {{"gammas", m.gammas},
            {"layers", m.model.layers},
            {"hidden", m.model.hidden},
            {"heads", m.model.heads},
            {"ffn", m.model.ffn},
            {"sequence_length", m.model.sequence_length},
            {"steps", m.schedule.steps},
            {"batch_size", m.schedule.batch_size},
            {"lr", m.schedule.lr},
            {"weight_decay", m.schedule.weight_decay},
            {"warmup", m.schedule.warmup},
            {"eval_every", m.schedule.eval_every}}},
          {"evaluation", {{"threshold", c.threshold == ThresholdMode::tuned ? "tuned" : "fixed"}, {"roc_curves", c.roc_curves}}}};
}

// 64-bit FNV-1a of the effective configuration without the output directory.
inline std::string config_hash(const ExperimentConfig& c) {
  json j = effective_config(c);
  j.erase("output_dir");
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = data::read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j);
}

}  // namespace pcaus::experiment

#pragma once

// On-disk dataset layout:
//   <root>/manifest.json               list of cores and extraction parameters
//   <root>/cores/<core_id>/core.json   sidecar metadata
//   <root>/cores/<core_id>/frame.pct   RF frame tensor [rows, cols]
//   <root>/cores/<core_id>/mask.pct    prostate mask tensor (0/1) [rows, cols]
//   <root>/cores/<core_id>/roi_XX.pct  preprocessed ROI tensors [256, 256] (optional)

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcaus/data/roi.hpp"
#include "pcaus/data/types.hpp"
#include "pcaus/io/tensor_file.hpp"

namespace pcaus::data {

namespace fs = std::filesystem;
using nlohmann::json;

inline json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline void save_image(const fs::path& path, const Image& img) {
  io::save_tensor_file(path, {static_cast<std::uint64_t>(img.rows()), static_cast<std::uint64_t>(img.cols())}, img.data());
}

inline Image load_image(const fs::path& path) {
  const io::TensorData t = io::load_tensor_file(path);
  if (t.shape.size() != 2) throw std::runtime_error(path.string() + ": expected a 2-d tensor");
  Image img(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  std::copy(t.values.begin(), t.values.end(), img.data());
  return img;
}

inline json extraction_json(const ExtractionParams& p) {
  return {{"n_patches", p.n_patches}, {"roi_mm", p.roi_mm}, {"out_size", p.out_size}};
}

inline json core_sidecar(const BiopsyCore& core, const ExtractionParams& params) {
  json j = {{"core_id", core.core_id},
            {"patient_id", core.patient_id},
            {"center_id", core.center_id},
            {"label", core.label},
            {"involvement", core.involvement},
            {"needle", {{"angle_deg", core.needle.angle_deg}, {"depth_mm", core.needle.depth_mm}, {"width_mm", core.needle.width_mm}}},
            {"frame",
             {{"rows", core.frame.rows()},
              {"cols", core.frame.cols()},
              {"axial_spacing", core.frame.axial_spacing},
              {"lateral_spacing", core.frame.lateral_spacing},
              {"probe_origin", {core.frame.probe_origin.row, core.frame.probe_origin.col}}}},
            {"extraction", extraction_json(params)},
            {"frame_file", "frame.pct"},
            {"mask_file", "mask.pct"}};
  if (core.cancer_segment) {
    j["cancer_segment"] = {{"start", core.cancer_segment->start}, {"end", core.cancer_segment->end}};
  } else {
    j["cancer_segment"] = nullptr;
  }
  return j;
}

// Writes the core directory; returns the files written, relative to `root`.
inline std::vector<std::string> write_core(const fs::path& root, const BiopsyCore& core, const ExtractionParams& params,
                                           bool write_rois) {
  const fs::path rel = fs::path("cores") / core.core_id;
  const fs::path dir = root / rel;
  fs::create_directories(dir);
  std::vector<std::string> files;
  save_image(dir / "frame.pct", core.frame.samples);
  files.push_back((rel / "frame.pct").generic_string());
  save_image(dir / "mask.pct", core.mask.mask.cast<float>());
  files.push_back((rel / "mask.pct").generic_string());
  json sidecar = core_sidecar(core, params);
  json rois = json::array();
  if (write_rois) {
    for (const ROIPatch& p : extract_patches(core, params)) {
      char name[32];
      std::snprintf(name, sizeof name, "roi_%02d.pct", p.index_along_needle);
      save_image(dir / name, p.pixels);
      files.push_back((rel / name).generic_string());
      json r = {{"file", name}, {"index", p.index_along_needle}, {"weak_label", p.weak_label}};
      r["synth_truth"] = p.synth_truth ? json(*p.synth_truth) : json(nullptr);
      rois.push_back(r);
    }
  }
  sidecar["rois"] = rois;
  write_json(dir / "core.json", sidecar);
  files.push_back((rel / "core.json").generic_string());
  return files;
}

inline std::vector<std::string> write_dataset(const fs::path& root, const std::vector<BiopsyCore>& cores,
                                              const ExtractionParams& params, bool write_rois,
                                              const json& generator = nullptr) {
  fs::create_directories(root);
  std::vector<std::string> files;
  json list = json::array();
  for (const BiopsyCore& core : cores) {
    auto written = write_core(root, core, params, write_rois);
    files.insert(files.end(), written.begin(), written.end());
    list.push_back({{"core_id", core.core_id},
                    {"patient_id", core.patient_id},
                    {"center_id", core.center_id},
                    {"label", core.label},
                    {"dir", (fs::path("cores") / core.core_id).generic_string()}});
  }
  json manifest = {{"format", "pcaus-dataset/1"}, {"extraction", extraction_json(params)}, {"cores", list}};
  if (!generator.is_null()) manifest["generator"] = generator;
  write_json(root / "manifest.json", manifest);
  files.push_back("manifest.json");
  return files;
}

inline BiopsyCore read_core(const fs::path& dir) {
  const json j = read_json(dir / "core.json");
  BiopsyCore core;
  core.core_id = j.at("core_id").get<std::string>();
  core.patient_id = j.at("patient_id").get<std::string>();
  core.center_id = j.at("center_id").get<int>();
  core.label = j.at("label").get<int>();
  core.involvement = j.at("involvement").get<double>();
  const json& n = j.at("needle");
  core.needle = {n.at("angle_deg").get<double>(), n.at("depth_mm").get<double>(), n.at("width_mm").get<double>()};
  const json& f = j.at("frame");
  core.frame.axial_spacing = f.at("axial_spacing").get<double>();
  core.frame.lateral_spacing = f.at("lateral_spacing").get<double>();
  core.frame.probe_origin = {f.at("probe_origin").at(0).get<double>(), f.at("probe_origin").at(1).get<double>()};
  core.frame.samples = load_image(dir / j.value("frame_file", "frame.pct"));
  core.mask.mask = (load_image(dir / j.value("mask_file", "mask.pct")).array() > 0.5f).cast<std::uint8_t>();
  if (j.contains("cancer_segment") && !j["cancer_segment"].is_null()) {
    core.cancer_segment = CancerSegment{j["cancer_segment"].at("start").get<double>(), j["cancer_segment"].at("end").get<double>()};
  }
  core.validate();
  return core;
}

struct LoadedDataset {
  std::vector<BiopsyCore> cores;
  ExtractionParams extraction;
};

inline LoadedDataset load_dataset(const fs::path& manifest_path) {
  const json m = read_json(manifest_path);
  const fs::path root = manifest_path.parent_path();
  LoadedDataset ds;
  if (m.contains("extraction")) {
    const json& e = m["extraction"];
    ds.extraction.n_patches = e.value("n_patches", kPatchesPerCore);
    ds.extraction.roi_mm = e.value("roi_mm", 5.0);
    ds.extraction.out_size = e.value("out_size", kRoiSize);
  }
  for (const json& c : m.at("cores")) ds.cores.push_back(read_core(root / c.at("dir").get<std::string>()));
  return ds;
}

}  // namespace pcaus::data

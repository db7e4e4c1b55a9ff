#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcaus/data/types.hpp"

namespace pcaus::cv {

using nlohmann::json;

struct PatientRef {
  std::string patient_id;
  int center_id = 0;
};

enum class Role { train, validation, test };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::validation: return "validation";
    case Role::test: return "test";
  }
  return "?";
}

// One experiment leg: test on one fold, validate on the next, train on the rest.
struct Leg {
  int index = 0;
  int test_fold = 0;
  int validation_fold = 0;
  std::vector<int> train_folds;

  Role role_of_fold(int fold) const {
    if (fold == test_fold) return Role::test;
    if (fold == validation_fold) return Role::validation;
    return Role::train;
  }
};

// Patient-level fold plan. `folds[f]` lists the patients of fold f; a valid
// plan lists every patient exactly once.
struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;
  std::vector<Leg> legs;

  int fold_of(const std::string& patient) const {
    for (int f = 0; f < static_cast<int>(folds.size()); ++f) {
      const auto& fold = folds[static_cast<std::size_t>(f)];
      if (std::find(fold.begin(), fold.end(), patient) != fold.end()) return f;
    }
    throw std::out_of_range("patient " + patient + " is not assigned to a fold");
  }

  std::map<std::string, int> assignments() const {
    std::map<std::string, int> out;
    for (int f = 0; f < static_cast<int>(folds.size()); ++f) {
      for (const auto& p : folds[static_cast<std::size_t>(f)]) out.emplace(p, f);
    }
    return out;
  }

  Role role(const std::string& patient, int leg) const { return legs.at(static_cast<std::size_t>(leg)).role_of_fold(fold_of(patient)); }
};

inline std::vector<Leg> rotation_legs(int k) {
  std::vector<Leg> legs;
  for (int i = 0; i < k; ++i) {
    Leg leg{i, i, (i + 1) % k, {}};
    for (int f = 0; f < k; ++f) {
      if (f != leg.test_fold && f != leg.validation_fold) leg.train_folds.push_back(f);
    }
    legs.push_back(std::move(leg));
  }
  return legs;
}

// Shuffles patients within each center and deals them round-robin to folds.
// The dealing position carries over between centers, so both per-center and
// total fold sizes differ by at most one.
inline FoldPlan nested_kfold(std::vector<PatientRef> patients, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("nested_kfold: k must be at least 2");
  std::sort(patients.begin(), patients.end(), [](const PatientRef& a, const PatientRef& b) { return a.patient_id < b.patient_id; });
  patients.erase(std::unique(patients.begin(), patients.end(),
                             [](const PatientRef& a, const PatientRef& b) { return a.patient_id == b.patient_id; }),
                 patients.end());
  if (static_cast<std::size_t>(k) > patients.size()) {
    throw std::invalid_argument("nested_kfold: k=" + std::to_string(k) + " exceeds the " + std::to_string(patients.size()) +
                                " patients");
  }
  std::map<int, std::vector<std::string>> by_center;
  for (const auto& p : patients) by_center[p.center_id].push_back(p.patient_id);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(static_cast<std::size_t>(k));
  std::mt19937_64 rng(seed);
  int next = 0;
  for (auto& [center, ids] : by_center) {
    std::shuffle(ids.begin(), ids.end(), rng);
    for (const auto& id : ids) {
      plan.folds[static_cast<std::size_t>(next)].push_back(id);
      next = (next + 1) % k;
    }
  }
  plan.legs = rotation_legs(k);
  return plan;
}

inline std::vector<PatientRef> patients_of(std::span<const data::BiopsyCore> cores) {
  std::vector<PatientRef> out;
  std::set<std::string> seen;
  for (const auto& c : cores) {
    if (seen.insert(c.patient_id).second) out.push_back({c.patient_id, c.center_id});
  }
  return out;
}

// Indices of the items kept after undersampling the benign class (label 0)
// down to the cancer count. Every cancer item is kept; there is no upsampling
// when benign items are the minority. Indices are returned in input order.
inline std::vector<std::size_t> undersample_benign(std::span<const int> labels, std::uint64_t seed) {
  std::vector<std::size_t> benign, cancer;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? cancer : benign).push_back(i);
  if (cancer.empty()) throw std::invalid_argument("undersample_benign: no cancer cores");
  if (benign.size() > cancer.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(benign.begin(), benign.end(), rng);
    benign.resize(cancer.size());
  }
  std::vector<std::size_t> keep = cancer;
  keep.insert(keep.end(), benign.begin(), benign.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

inline std::vector<data::BiopsyCore> undersample_benign(const std::vector<data::BiopsyCore>& cores, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& c : cores) labels.push_back(c.label);
  std::vector<data::BiopsyCore> out;
  for (std::size_t i : undersample_benign(labels, seed)) out.push_back(cores[i]);
  return out;
}

struct LeakageViolation {
  std::string patient_id;
  std::string detail;
};

struct LeakageReport {
  std::vector<LeakageViolation> violations;
  bool clean() const { return violations.empty(); }
};

// Flags patients whose cores would land in more than one role within a leg,
// and patients with cores but no fold.
inline LeakageReport audit_leakage(const FoldPlan& plan, std::span<const data::BiopsyCore> cores) {
  std::map<std::string, std::set<int>> folds_of;
  for (int f = 0; f < static_cast<int>(plan.folds.size()); ++f) {
    for (const auto& p : plan.folds[static_cast<std::size_t>(f)]) folds_of[p].insert(f);
  }
  LeakageReport report;
  std::set<std::string> reported;
  for (const auto& core : cores) {
    const std::string& pid = core.patient_id;
    if (reported.count(pid)) continue;
    auto it = folds_of.find(pid);
    if (it == folds_of.end()) {
      report.violations.push_back({pid, "patient has cores but no fold"});
      reported.insert(pid);
      continue;
    }
    for (const Leg& leg : plan.legs) {
      std::set<Role> roles;
      for (int f : it->second) roles.insert(leg.role_of_fold(f));
      if (roles.size() > 1) {
        std::string d = "leg " + std::to_string(leg.index) + " roles:";
        for (Role r : roles) d += std::string(" ") + role_name(r);
        report.violations.push_back({pid, d});
        reported.insert(pid);
        break;
      }
    }
  }
  return report;
}

inline json to_json(const FoldPlan& plan) {
  json legs = json::array();
  for (const Leg& l : plan.legs) {
    legs.push_back({{"leg", l.index}, {"test_fold", l.test_fold}, {"validation_fold", l.validation_fold}, {"train_folds", l.train_folds}});
  }
  json assignments = json::object();
  for (const auto& [p, f] : plan.assignments()) assignments[p] = f;
  return {{"k", plan.k}, {"seed", plan.seed}, {"folds", plan.folds}, {"assignments", assignments}, {"legs", legs}};
}

inline FoldPlan fold_plan_from_json(const json& j) {
  FoldPlan plan;
  plan.k = j.at("k").get<int>();
  plan.seed = j.value("seed", std::uint64_t{0});
  plan.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
  if (static_cast<int>(plan.folds.size()) != plan.k) throw std::runtime_error("fold plan: fold count differs from k");
  for (const json& l : j.at("legs")) {
    plan.legs.push_back({l.at("leg").get<int>(), l.at("test_fold").get<int>(), l.at("validation_fold").get<int>(),
                         l.at("train_folds").get<std::vector<int>>()});
  }
  return plan;
}

}  // namespace pcaus::cv

#pragma once

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "overlord/eval/harness.hpp"

namespace overlord::report {

inline nlohmann::json report_to_json(const eval::EvalReport& r) {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v)
      j[key] = *v;
    else
      j[key] = nullptr;
  };
  put("probe_acc_y_from_u", r.probe_acc_y_from_u);
  put("pose_regression_err", r.pose_regression_err);
  put("pose_regression_r2", r.pose_regression_r2);
  put("leakage_acc", r.leakage_acc);
  put("frechet_mean", r.frechet_mean);
  put("diversity", r.diversity);
  j["frechet_by_domain"] = r.frechet_by_domain;
  j["chance_level"] = r.chance_level;
  if (r.factor_transfer) {
    j["factor_transfer"] = {
        {"pose_err", r.factor_transfer->pose_err},
        {"pose_err_recon", r.factor_transfer->pose_err_recon},
        {"y_acc", r.factor_transfer->y_acc},
        {"corr_acc", r.factor_transfer->corr_acc},
    };
  } else {
    j["factor_transfer"] = nullptr;
  }
  return j;
}

inline eval::EvalReport report_from_json(const nlohmann::json& j) {
  eval::EvalReport r;
  auto get = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  r.probe_acc_y_from_u = get("probe_acc_y_from_u");
  r.pose_regression_err = get("pose_regression_err");
  r.pose_regression_r2 = get("pose_regression_r2");
  r.leakage_acc = get("leakage_acc");
  r.frechet_mean = get("frechet_mean");
  r.diversity = get("diversity");
  if (j.contains("frechet_by_domain"))
    r.frechet_by_domain = j.at("frechet_by_domain").get<std::vector<double>>();
  r.chance_level = j.value("chance_level", 0.0);
  if (j.contains("factor_transfer") && !j.at("factor_transfer").is_null()) {
    eval::FactorTransfer ft;
    const auto& f = j.at("factor_transfer");
    ft.pose_err = f.value("pose_err", 0.0);
    ft.pose_err_recon = f.value("pose_err_recon", 0.0);
    ft.y_acc = f.value("y_acc", 0.0);
    ft.corr_acc = f.value("corr_acc", 0.0);
    r.factor_transfer = ft;
  }
  return r;
}

inline std::string report_to_text(const eval::EvalReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  auto line = [&](const char* name, const std::optional<double>& v) {
    out << std::left << std::setw(26) << name << " ";
    if (v)
      out << *v;
    else
      out << "n/a";
    out << "\n";
  };
  out << "disentanglement report (chance level "
      << r.chance_level << ")\n";
  line("probe y<-u accuracy", r.probe_acc_y_from_u);
  line("pose regression err", r.pose_regression_err);
  line("pose regression r2", r.pose_regression_r2);
  line("source leakage acc", r.leakage_acc);
  line("desk-frechet mean", r.frechet_mean);
  if (!r.frechet_by_domain.empty()) {
    out << std::left << std::setw(26) << "desk-frechet by domain" << " ";
    for (double v : r.frechet_by_domain) out << v << " ";
    out << "\n";
  }
  line("diversity", r.diversity);
  if (r.factor_transfer) {
    out << std::left << std::setw(26) << "transfer y acc" << " "
        << r.factor_transfer->y_acc << "\n";
    out << std::left << std::setw(26) << "transfer corr acc" << " "
        << r.factor_transfer->corr_acc << "\n";
    out << std::left << std::setw(26) << "transfer pose err" << " "
        << r.factor_transfer->pose_err << "\n";
    out << std::left << std::setw(26) << "recon pose err" << " "
        << r.factor_transfer->pose_err_recon << "\n";
  }
  return out.str();
}

inline void save_report(const eval::EvalReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  {
    std::ofstream j(fs::path(dir) / "report.json");
    j << report_to_json(r).dump(2) << "\n";
  }
  {
    std::ofstream t(fs::path(dir) / "report.txt");
    t << report_to_text(r);
  }
}

inline eval::EvalReport load_report(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "report.json");
  if (!in) throw std::runtime_error("load_report: no report.json in " + dir);
  nlohmann::json j;
  in >> j;
  return report_from_json(j);
}

}  // namespace overlord::report

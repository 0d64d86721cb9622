#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ssvi/errors.hpp"

namespace ssvi {

/// One evaluation record of a training run. wall_time_s carries either real
/// elapsed seconds or the deterministic work-unit clock, depending on the run
/// configuration.
struct MetricsRow {
  double wall_time_s = 0.0;
  long epoch = 0;
  long iteration = 0;
  double neg_vlb_mc = 0.0;
  double test_nll = 0.0;
  double error_metric = 0.0;
  std::string notes;
};

class MetricsTrace {
 public:
  static constexpr const char* kHeader =
      "wall_time_s,epoch,iteration,neg_vlb_mc,test_nll,error_metric,notes";

  void add(const MetricsRow& row) {
    if (!rows_.empty() && row.wall_time_s < rows_.back().wall_time_s) {
      throw Error("MetricsTrace: wall_time_s must be nondecreasing");
    }
    rows_.push_back(row);
  }

  const std::vector<MetricsRow>& rows() const { return rows_; }

  std::string to_csv() const {
    std::ostringstream out;
    out << kHeader << '\n';
    out << std::setprecision(17);
    for (const auto& r : rows_) {
      out << r.wall_time_s << ',' << r.epoch << ',' << r.iteration << ',' << r.neg_vlb_mc << ','
          << r.test_nll << ',' << r.error_metric << ',' << r.notes << '\n';
    }
    return out.str();
  }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("MetricsTrace: cannot open " + path);
    out << to_csv();
  }

  static MetricsTrace read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("MetricsTrace: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kHeader) {
      throw Error("MetricsTrace: unexpected header in " + path);
    }
    MetricsTrace tr;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      MetricsRow r;
      std::istringstream ls(line);
      std::string field;
      auto next = [&]() {
        if (!std::getline(ls, field, ',')) throw Error("MetricsTrace: short row in " + path);
        return field;
      };
      r.wall_time_s = std::stod(next());
      r.epoch = std::stol(next());
      r.iteration = std::stol(next());
      r.neg_vlb_mc = std::stod(next());
      r.test_nll = std::stod(next());
      r.error_metric = std::stod(next());
      std::getline(ls, r.notes);
      tr.rows_.push_back(r);
    }
    return tr;
  }

 private:
  std::vector<MetricsRow> rows_;
};

/// Per-metric final values and time-to-threshold across traces.
struct CompareRow {
  std::string trace;
  double final_neg_vlb = 0.0;
  double final_test_nll = 0.0;
  double final_error = 0.0;
  std::string time_to_vlb = "n/a";
  std::string time_to_nll = "n/a";
  std::string time_to_error = "n/a";
};

struct CompareThresholds {
  bool has_vlb = false;
  double vlb = 0.0;
  bool has_nll = false;
  double nll = 0.0;
  bool has_error = false;
  double error = 0.0;
};

inline std::vector<CompareRow> compare_traces(const std::vector<std::string>& names,
                                              const std::vector<MetricsTrace>& traces,
                                              const CompareThresholds& th = {}) {
  std::vector<CompareRow> out;
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const auto& rows = traces[t].rows();
    if (rows.empty()) throw Error("compare_traces: empty trace " + names[t]);
    CompareRow row;
    row.trace = names[t];
    row.final_neg_vlb = rows.back().neg_vlb_mc;
    row.final_test_nll = rows.back().test_nll;
    row.final_error = rows.back().error_metric;
    auto first_at = [&](auto metric, double threshold) -> std::string {
      for (const auto& r : rows) {
        if (metric(r) <= threshold) {
          std::ostringstream s;
          s << r.wall_time_s;
          return s.str();
        }
      }
      return "n/a";
    };
    if (th.has_vlb) {
      row.time_to_vlb = first_at([](const MetricsRow& r) { return r.neg_vlb_mc; }, th.vlb);
    }
    if (th.has_nll) {
      row.time_to_nll = first_at([](const MetricsRow& r) { return r.test_nll; }, th.nll);
    }
    if (th.has_error) {
      row.time_to_error = first_at([](const MetricsRow& r) { return r.error_metric; }, th.error);
    }
    out.push_back(row);
  }
  return out;
}

inline std::string compare_table_text(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(28) << "trace" << std::setw(16) << "neg_vlb" << std::setw(16)
      << "test_nll" << std::setw(16) << "error" << std::setw(14) << "t(vlb)" << std::setw(14)
      << "t(nll)" << std::setw(14) << "t(err)" << '\n';
  out << std::setprecision(6);
  for (const auto& r : rows) {
    out << std::left << std::setw(28) << r.trace << std::setw(16) << r.final_neg_vlb
        << std::setw(16) << r.final_test_nll << std::setw(16) << r.final_error << std::setw(14)
        << r.time_to_vlb << std::setw(14) << r.time_to_nll << std::setw(14) << r.time_to_error
        << '\n';
  }
  return out.str();
}

inline std::string compare_table_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << "trace,final_neg_vlb,final_test_nll,final_error,time_to_vlb,time_to_nll,time_to_error\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.trace << ',' << r.final_neg_vlb << ',' << r.final_test_nll << ',' << r.final_error
        << ',' << r.time_to_vlb << ',' << r.time_to_nll << ',' << r.time_to_error << '\n';
  }
  return out.str();
}

}  // namespace ssvi

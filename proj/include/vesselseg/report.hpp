#pragma once

// Sweep summary records and accuracy/cost report emission: a stable CSV
// schema, the Pareto frontier subset, and scatter plots (SVG + PNG) of
// quality against compute and size.

#include <filesystem>
#include <string>
#include <vector>

#include "vesselseg/analysis.hpp"
#include "vesselseg/common.hpp"
#include "vesselseg/plot.hpp"

namespace vesselseg {

struct SweepSummaryRow {
  std::string label, encoder, decoder_family, attention;
  std::string status = "ok";  // "ok" | "failed"
  int64_t runs = 0;
  int64_t params = 0;
  int64_t flops = 0;
  double gds_mean = 0, gds_std = 0;
  double dsc_overall_mean = 0;
  double dsc_background_mean = 0;
  double dsc_artery_mean = 0, dsc_artery_std = 0;
  double dsc_catheter_mean = 0, dsc_catheter_std = 0;
};

inline const std::vector<std::string>& sweep_summary_columns() {
  static const std::vector<std::string> cols = {
      "label",          "encoder",          "decoder_family",
      "attention",      "status",           "runs",
      "params",         "flops",            "gds_mean",
      "gds_std",        "dsc_overall_mean", "dsc_background_mean",
      "dsc_artery_mean", "dsc_artery_std",  "dsc_catheter_mean",
      "dsc_catheter_std"};
  return cols;
}

inline std::string sweep_summary_header() { return join(sweep_summary_columns(), ","); }

inline std::string to_csv_row(const SweepSummaryRow& r) {
  std::vector<std::string> f = {r.label,
                                r.encoder,
                                r.decoder_family,
                                r.attention,
                                r.status,
                                std::to_string(r.runs),
                                std::to_string(r.params),
                                std::to_string(r.flops),
                                format_double(r.gds_mean),
                                format_double(r.gds_std),
                                format_double(r.dsc_overall_mean),
                                format_double(r.dsc_background_mean),
                                format_double(r.dsc_artery_mean),
                                format_double(r.dsc_artery_std),
                                format_double(r.dsc_catheter_mean),
                                format_double(r.dsc_catheter_std)};
  return join(f, ",");
}

inline void write_sweep_summary(const std::filesystem::path& path,
                                const std::vector<SweepSummaryRow>& rows) {
  std::string text = sweep_summary_header() + "\n";
  for (const auto& r : rows) text += to_csv_row(r) + "\n";
  write_text_file(path, text);
}

inline std::vector<SweepSummaryRow> read_sweep_summary(const std::filesystem::path& path) {
  auto lines = split(read_text_file(path), '\n');
  if (lines.empty() || trim(lines[0]) != sweep_summary_header()) {
    throw DataError("summary csv header mismatch in " + path.string() + " (expected '" +
                    sweep_summary_header() + "')");
  }
  std::vector<SweepSummaryRow> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    auto line = trim(lines[i]);
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != sweep_summary_columns().size()) {
      throw DataError("summary csv row " + std::to_string(i + 1) + " has " +
                      std::to_string(f.size()) + " fields in " + path.string());
    }
    try {
      SweepSummaryRow r;
      r.label = f[0];
      r.encoder = f[1];
      r.decoder_family = f[2];
      r.attention = f[3];
      r.status = f[4];
      r.runs = std::stoll(f[5]);
      r.params = std::stoll(f[6]);
      r.flops = std::stoll(f[7]);
      r.gds_mean = std::stod(f[8]);
      r.gds_std = std::stod(f[9]);
      r.dsc_overall_mean = std::stod(f[10]);
      r.dsc_background_mean = std::stod(f[11]);
      r.dsc_artery_mean = std::stod(f[12]);
      r.dsc_artery_std = std::stod(f[13]);
      r.dsc_catheter_mean = std::stod(f[14]);
      r.dsc_catheter_std = std::stod(f[15]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError("summary csv row " + std::to_string(i + 1) + " is malformed in " +
                      path.string());
    }
  }
  return rows;
}

// Writes frontier.csv plus the quality/compute and quality/size scatter
// plots into out_dir. Failed rows are excluded from the frontier but do
// not abort the report. Returns the frontier subset.
inline std::vector<SweepSummaryRow> emit_frontier_report(const std::vector<SweepSummaryRow>& rows,
                                                         const std::filesystem::path& out_dir) {
  std::vector<SweepSummaryRow> ok;
  for (const auto& r : rows) {
    if (r.status == "ok" && r.runs > 0) ok.push_back(r);
  }
  if (ok.empty()) throw DataError("frontier report: no successful sweep rows");
  std::filesystem::create_directories(out_dir);

  std::vector<ParetoPoint> points;
  for (const auto& r : ok) {
    points.push_back({r.label, double(r.flops), r.gds_mean, double(r.params)});
  }
  auto frontier = pareto_frontier(points);
  std::vector<SweepSummaryRow> frontier_rows;
  for (const auto& fp : frontier) {
    for (const auto& r : ok) {
      if (r.label == fp.label && double(r.flops) == fp.flops && r.gds_mean == fp.gds) {
        frontier_rows.push_back(r);
        break;
      }
    }
  }
  write_sweep_summary(out_dir / "frontier.csv", frontier_rows);

  auto on_frontier = [&](const SweepSummaryRow& r) {
    for (const auto& fr : frontier_rows) {
      if (fr.label == r.label) return true;
    }
    return false;
  };

  ScatterPlot flops_plot;
  flops_plot.title = "Quality vs compute";
  flops_plot.xlabel = "GFLOPs";
  flops_plot.ylabel = "GDS";
  for (const auto& r : ok) {
    flops_plot.points.push_back({double(r.flops) / 1e9, r.gds_mean, r.label, on_frontier(r)});
  }
  for (const auto& fp : frontier) flops_plot.line.push_back({fp.flops / 1e9, fp.gds});
  write_scatter_svg(out_dir / "gds_vs_flops.svg", flops_plot);
  write_scatter_png(out_dir / "gds_vs_flops.png", flops_plot);

  ScatterPlot params_plot;
  params_plot.title = "Quality vs size";
  params_plot.xlabel = "Parameters (M)";
  params_plot.ylabel = "GDS";
  for (const auto& r : ok) {
    params_plot.points.push_back({double(r.params) / 1e6, r.gds_mean, r.label, on_frontier(r)});
  }
  write_scatter_svg(out_dir / "gds_vs_params.svg", params_plot);
  write_scatter_png(out_dir / "gds_vs_params.png", params_plot);

  return frontier_rows;
}

}  // namespace vesselseg

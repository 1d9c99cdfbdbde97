#include "lnl/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lnl/errors.hpp"
#include "lnl/format.hpp"

namespace lnl {

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  return out;
}

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string matrix_file_name(Method m, std::uint64_t seed) {
  return std::string(method_name(m)) + "_seed" + std::to_string(seed) + ".txt";
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) {
    throw ContractViolation("box_stats: no values");
  }
  std::sort(values.begin(), values.end());
  BoxStats s;
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  const double reach = 1.5 * (s.q3 - s.q1);
  const double low_fence = s.q1 - reach;
  const double high_fence = s.q3 + reach;
  s.whisker_low = s.max;
  s.whisker_high = s.min;
  for (double v : values) {
    if (v < low_fence || v > high_fence) {
      s.outliers.push_back(v);
    } else {
      s.whisker_low = std::min(s.whisker_low, v);
      s.whisker_high = std::max(s.whisker_high, v);
    }
  }
  return s;
}

std::string box_plot_svg(const std::string& title, const std::string& y_label, const std::vector<BoxGroup>& groups) {
  constexpr double width = 640.0;
  constexpr double height = 480.0;
  constexpr double left = 80.0;
  constexpr double right = 20.0;
  constexpr double top = 50.0;
  constexpr double bottom = 70.0;
  constexpr double plot_w = width - left - right;
  constexpr double plot_h = height - top - bottom;
  constexpr int ticks = 5;

  std::vector<BoxStats> stats;
  double lo = 0.0;
  double hi = 0.0;
  bool first = true;
  for (const auto& g : groups) {
    stats.push_back(box_stats(g.values));
    lo = first ? stats.back().min : std::min(lo, stats.back().min);
    hi = first ? stats.back().max : std::max(hi, stats.back().max);
    first = false;
  }
  if (groups.empty()) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo <= 0.0) {
    const double pad = std::abs(hi) > 0.0 ? std::abs(hi) * 0.05 : 0.5;
    lo -= pad;
    hi += pad;
  } else {
    const double pad = (hi - lo) * 0.05;
    lo -= pad;
    hi += pad;
  }
  auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  svg << "<text x=\"320\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << escape_xml(title) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << fixed(top + plot_h / 2) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"12\" transform=\"rotate(-90 18 " << fixed(top + plot_h / 2) << ")\">" << escape_xml(y_label)
      << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= ticks; ++t) {
    const double v = lo + (hi - lo) * t / ticks;
    const double y = y_of(v);
    svg << "<line x1=\"" << left - 5 << "\" y1=\"" << fixed(y) << "\" x2=\"" << left << "\" y2=\"" << fixed(y)
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << fixed(y + 4) << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
        << "font-size=\"10\">" << escape_xml(fixed(v, 4)) << "</text>\n";
  }

  const double slot = groups.empty() ? plot_w : plot_w / static_cast<double>(groups.size());
  const double box_w = std::min(60.0, slot * 0.5);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const BoxStats& s = stats[i];
    const double cx = left + slot * (static_cast<double>(i) + 0.5);
    const double x0 = cx - box_w / 2;
    svg << "<g class=\"box\" data-label=\"" << escape_xml(groups[i].label) << "\">\n";
    svg << "<line class=\"whisker\" x1=\"" << fixed(cx) << "\" y1=\"" << fixed(y_of(s.whisker_high)) << "\" x2=\""
        << fixed(cx) << "\" y2=\"" << fixed(y_of(s.q3)) << "\" stroke=\"black\"/>\n";
    svg << "<line class=\"whisker\" x1=\"" << fixed(cx) << "\" y1=\"" << fixed(y_of(s.q1)) << "\" x2=\"" << fixed(cx)
        << "\" y2=\"" << fixed(y_of(s.whisker_low)) << "\" stroke=\"black\"/>\n";
    for (double w : {s.whisker_low, s.whisker_high}) {
      svg << "<line class=\"cap\" x1=\"" << fixed(cx - box_w / 4) << "\" y1=\"" << fixed(y_of(w)) << "\" x2=\""
          << fixed(cx + box_w / 4) << "\" y2=\"" << fixed(y_of(w)) << "\" stroke=\"black\"/>\n";
    }
    svg << "<rect class=\"iqr\" x=\"" << fixed(x0) << "\" y=\"" << fixed(y_of(s.q3)) << "\" width=\"" << fixed(box_w)
        << "\" height=\"" << fixed(y_of(s.q1) - y_of(s.q3)) << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    svg << "<line class=\"median\" x1=\"" << fixed(x0) << "\" y1=\"" << fixed(y_of(s.median)) << "\" x2=\""
        << fixed(x0 + box_w) << "\" y2=\"" << fixed(y_of(s.median)) << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    for (double o : s.outliers) {
      svg << "<circle class=\"outlier\" cx=\"" << fixed(cx) << "\" cy=\"" << fixed(y_of(o))
          << "\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n";
    }
    svg << "<text x=\"" << fixed(cx) << "\" y=\"" << fixed(top + plot_h + 20)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(groups[i].label)
        << "</text>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_trials_csv(const std::vector<TrialResult>& results, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  out << "method,dataset,seed,test_loss,test_acc,rre,wall_time\n";
  for (const auto& r : results) {
    out << method_name(r.method) << ',' << r.dataset << ',' << r.seed << ',' << format_double(r.test_loss) << ','
        << format_double(r.test_accuracy) << ',' << optional_field(r.rre) << ',' << format_double(r.wall_time_seconds)
        << '\n';
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

void write_summary_csv(const ExperimentSummary& summary, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  out << "method,n,loss_mean,loss_std,acc_mean,acc_std,rre_mean,rre_std,mean_matrix_rre,note\n";
  for (const auto& s : summary.methods) {
    out << method_name(s.method) << ',' << s.n << ',' << format_double(s.loss_mean) << ','
        << format_double(s.loss_std) << ',' << format_double(s.acc_mean) << ',' << format_double(s.acc_std) << ','
        << optional_field(s.rre_mean) << ',' << optional_field(s.rre_std) << ',' << optional_field(s.mean_matrix_rre)
        << ',' << (s.n == 1 ? "n=1" : "") << '\n';
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

namespace {

void write_plots(const ExperimentSummary& summary, const std::vector<TrialResult>& results,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  struct Metric {
    const char* file;
    const char* title;
    const char* axis;
    std::optional<double> (*pick)(const TrialResult&);
  };
  const Metric metrics[] = {
      {"test_acc.svg", "Clean test accuracy", "accuracy (%)",
       [](const TrialResult& r) -> std::optional<double> { return r.test_accuracy; }},
      {"test_loss.svg", "Clean test cross-entropy", "loss",
       [](const TrialResult& r) -> std::optional<double> { return r.test_loss; }},
      {"rre.svg", "Transition matrix RRE", "RRE", [](const TrialResult& r) { return r.rre; }},
  };
  for (const auto& metric : metrics) {
    std::vector<BoxGroup> groups;
    for (const auto& s : summary.methods) {
      BoxGroup g{method_name(s.method), {}};
      for (const auto& r : results) {
        if (r.method == s.method) {
          if (const auto v = metric.pick(r)) {
            g.values.push_back(*v);
          }
        }
      }
      if (!g.values.empty()) {
        groups.push_back(std::move(g));
      }
    }
    if (groups.empty()) {
      continue;
    }
    std::ofstream out = open_for_write(dir / metric.file);
    out << box_plot_svg(metric.title, metric.axis, groups);
  }
}

}  // namespace

void write_report(const ExperimentSummary& summary, const ExperimentRun& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_trials_csv(run.results, dir / "trials.csv");
  write_summary_csv(summary, dir / "summary.csv");

  const std::filesystem::path failures = dir / "failures.csv";
  if (!run.failures.empty()) {
    std::ofstream out = open_for_write(failures);
    out << "method,seed,message\n";
    for (const auto& f : run.failures) {
      std::string msg = f.message;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << method_name(f.method) << ',' << f.seed << ',' << msg << '\n';
    }
  } else {
    std::filesystem::remove(failures);
  }

  const std::filesystem::path matrices = dir / "matrices";
  std::filesystem::create_directories(matrices);
  if (run.true_t) {
    save_matrix(run.true_t->tensor(), dir / "true_t.txt");
  }
  for (const auto& r : run.results) {
    if (r.matrix) {
      save_matrix(*r.matrix, matrices / matrix_file_name(r.method, r.seed));
    }
  }
  for (const auto& s : summary.methods) {
    if (s.mean_matrix) {
      save_matrix(*s.mean_matrix, matrices / ("mean_" + std::string(method_name(s.method)) + ".txt"));
    }
  }

  const std::filesystem::path histories = dir / "histories";
  std::filesystem::create_directories(histories);
  for (const auto& r : run.results) {
    for (const auto& [stage, history] : r.histories) {
      history.write_csv(histories / (std::string(method_name(r.method)) + "_seed" + std::to_string(r.seed) + "_" +
                                     stage + ".csv"));
    }
  }
  write_plots(summary, run.results, dir / "plots");
}

std::vector<TrialResult> read_trials_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  const std::string source = path.string();
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || trim(line) != "method,dataset,seed,test_loss,test_acc,rre,wall_time") {
    throw ParseError(source, 1, "unexpected header");
  }
  const std::filesystem::path matrices = path.parent_path() / "matrices";
  std::vector<TrialResult> results;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) {
      fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
      fields.emplace_back();
    }
    if (fields.size() != 7) {
      throw ParseError(source, line_no, "expected 7 fields, got " + std::to_string(fields.size()));
    }
    try {
      TrialResult r{parse_method(fields[0]),
                    fields[1],
                    static_cast<std::uint64_t>(std::stoull(fields[2])),
                    parse_double(fields[3]),
                    parse_double(fields[4]),
                    {},
                    parse_double(fields[6]),
                    {},
                    {}};
      if (!trim(fields[5]).empty()) {
        r.rre = parse_double(fields[5]);
      }
      const std::filesystem::path m = matrices / matrix_file_name(r.method, r.seed);
      if (std::filesystem::exists(m)) {
        r.matrix = load_matrix_tensor(m);
      }
      results.push_back(std::move(r));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return results;
}

ExperimentSummary report_from_directory(const std::filesystem::path& dir) {
  ExperimentRun run;
  run.results = read_trials_csv(dir / "trials.csv");
  if (std::filesystem::exists(dir / "true_t.txt")) {
    run.true_t = TransitionMatrix(load_matrix_tensor(dir / "true_t.txt"));
  }
  ExperimentSummary summary = aggregate(run.results, run.true_t);
  write_summary_csv(summary, dir / "summary.csv");
  write_plots(summary, run.results, dir / "plots");
  return summary;
}

}  // namespace lnl

#include "transport_meta/results.hpp"

#include "transport_meta/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace tmeta {

using nlohmann::json;

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double get_num(const json& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(num(m(r, c)));
    rows.push_back(row);
  }
  return rows;
}

json summary_json(const ProbabilitySummary& s) {
  return {{"min", num(s.min)},       {"q05", num(s.q05)},           {"median", num(s.median)},
          {"q95", num(s.q95)},       {"max", num(s.max)},           {"below_0.01", s.below_01},
          {"below_0.05", s.below_05}};
}

}  // namespace

json estimate_to_json(const ContrastEstimate& e) {
  json j;
  j["estimator"] = std::string(estimator_name(e.estimator));
  j["z"] = e.z;
  j["zprime"] = e.z_prime;
  if (e.a) j["a"] = *e.a;
  if (e.a_prime) j["aprime"] = *e.a_prime;
  j["source"] = e.source;
  j["point"] = num(e.point);
  j["variance"] = num(e.variance);
  j["ci_lower"] = num(e.ci_lower);
  j["ci_upper"] = num(e.ci_upper);
  j["level"] = e.level;
  j["variance_method"] = e.variance_method;
  j["n_used"] = e.n_used;
  if (e.bootstrap) {
    const auto& b = *e.bootstrap;
    j["bootstrap"] = {{"requested", b.requested},
                      {"effective", b.effective},
                      {"failed", b.failed},
                      {"seed", b.seed},
                      {"stratified", b.stratified},
                      {"variance", num(b.variance)},
                      {"wald_lower", num(b.wald_lower)},
                      {"wald_upper", num(b.wald_upper)},
                      {"percentile_lower", num(b.percentile_lower)},
                      {"percentile_upper", num(b.percentile_upper)}};
  }
  if (e.bias_adjustment) j["bias_adjustment"] = num(*e.bias_adjustment);
  j["warnings"] = e.warnings;
  return j;
}

ContrastEstimate estimate_from_json(const json& j) {
  ContrastEstimate e;
  e.estimator = estimator_from_name(j.at("estimator").get<std::string>());
  e.z = j.at("z").get<std::string>();
  e.z_prime = j.at("zprime").get<std::string>();
  if (j.contains("a")) e.a = j.at("a").get<std::string>();
  if (j.contains("aprime")) e.a_prime = j.at("aprime").get<std::string>();
  e.source = j.at("source").get<std::string>();
  e.point = get_num(j, "point");
  e.variance = get_num(j, "variance");
  e.ci_lower = get_num(j, "ci_lower");
  e.ci_upper = get_num(j, "ci_upper");
  e.level = j.at("level").get<double>();
  e.variance_method = j.at("variance_method").get<std::string>();
  e.n_used = j.at("n_used").get<std::map<std::string, std::size_t>>();
  if (j.contains("bootstrap")) {
    const auto& b = j.at("bootstrap");
    BootstrapSummary s;
    s.requested = b.at("requested").get<std::size_t>();
    s.effective = b.at("effective").get<std::size_t>();
    s.failed = b.at("failed").get<std::size_t>();
    s.seed = b.at("seed").get<std::uint64_t>();
    s.stratified = b.at("stratified").get<bool>();
    s.variance = get_num(b, "variance");
    s.wald_lower = get_num(b, "wald_lower");
    s.wald_upper = get_num(b, "wald_upper");
    s.percentile_lower = get_num(b, "percentile_lower");
    s.percentile_upper = get_num(b, "percentile_upper");
    e.bootstrap = s;
  }
  if (j.contains("bias_adjustment")) e.bias_adjustment = get_num(j, "bias_adjustment");
  e.warnings = j.at("warnings").get<std::vector<std::string>>();
  return e;
}

json to_json(const WaldTest& t) {
  return {{"statistic", num(t.statistic)}, {"df", t.df}, {"p_value", num(t.p_value)}};
}

json to_json(const FalsificationReport& r) {
  json coefs = json::array();
  for (std::size_t k = 0; k < r.trials.size(); ++k) {
    std::vector<double> beta(r.coefficients[k].data(), r.coefficients[k].data() + r.coefficients[k].size());
    json b = json::array();
    for (double v : beta) b.push_back(num(v));
    coefs.push_back({{"trial", r.trials[k]},
                     {"coefficients", b},
                     {"covariance", matrix_json(r.covariances[k])},
                     {"rows_used", r.rows_used.at(r.trials[k])}});
  }
  return {{"statistic", num(r.statistic)},
          {"df", r.df},
          {"p_value", num(r.p_value)},
          {"columns", r.columns},
          {"restricted_support", r.restricted_support},
          {"trials", coefs}};
}

json to_json(const HomogeneityReport& r) {
  json rows = json::array();
  for (std::size_t k = 0; k < r.trials.size(); ++k)
    rows.push_back({{"trial", r.trials[k]},
                    {"transported", num(r.transported[k])},
                    {"transported_se", num(r.transported_se[k])},
                    {"self_standardized", num(r.self_standardized[k])},
                    {"self_se", num(r.self_se[k])}});
  return {{"trials", rows},
          {"transported_test", to_json(r.transported_test)},
          {"classical_test", to_json(r.classical_test)},
          {"transported_max_gap_se", num(r.transported_max_gap_se)},
          {"classical_max_gap_se", num(r.classical_max_gap_se)}};
}

json to_json(const ConstraintReport& r) {
  json pairs = json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"trial_a", p.trial_a}, {"trial_b", p.trial_b}, {"max_discrepancy", num(p.max_discrepancy)}});
  return {{"trials", r.trials}, {"max_discrepancy", num(r.max_discrepancy)}, {"pairs", pairs}};
}

json to_json(const PositivityReport& r) {
  json trials = json::array();
  for (const auto& t : r.trials) {
    json j = {{"trial", t.trial},
              {"min_odds_weight", num(t.min_odds_weight)},
              {"max_odds_weight", num(t.max_odds_weight)},
              {"flagged", t.flagged}};
    if (t.target_probabilities) j["target_probabilities"] = summary_json(*t.target_probabilities);
    if (t.failure) j["failure"] = *t.failure;
    trials.push_back(j);
  }
  json pooled = {{"min_odds_weight", num(r.pooled_min_odds_weight)},
                 {"max_odds_weight", num(r.pooled_max_odds_weight)},
                 {"flagged", r.pooled_flagged}};
  if (r.pooled) pooled["target_probabilities"] = summary_json(*r.pooled);
  if (r.pooled_failure) pooled["failure"] = *r.pooled_failure;
  return {{"threshold", kPositivityFlag}, {"trials", trials}, {"pooled", pooled}};
}

json to_json(const SweepFailure& f) {
  return {{"trial", f.trial},
          {"estimator", std::string(estimator_name(f.estimator))},
          {"code", f.code},
          {"message", f.message}};
}

json document_to_json(const ResultsDocument& doc) {
  json estimates = json::array();
  for (const auto& e : doc.estimates) estimates.push_back(estimate_to_json(e));
  return {{"schema_version", kResultsSchemaVersion},
          {"tool_version", doc.tool_version},
          {"analysis", doc.analysis},
          {"config", doc.config},
          {"estimates", estimates},
          {"diagnostics", doc.diagnostics},
          {"warnings", doc.warnings}};
}

ResultsDocument document_from_json(const json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kResultsSchemaVersion)
      fail(Errc::config, "unsupported results schema version " + std::to_string(version));
    ResultsDocument doc;
    doc.tool_version = j.at("tool_version").get<std::string>();
    doc.analysis = j.at("analysis").get<std::string>();
    doc.config = j.at("config");
    for (const auto& e : j.at("estimates")) doc.estimates.push_back(estimate_from_json(e));
    doc.diagnostics = j.at("diagnostics");
    doc.warnings = j.at("warnings").get<std::vector<std::string>>();
    return doc;
  } catch (const json::exception& e) {
    fail(Errc::config, std::string("malformed results document: ") + e.what());
  }
}

std::string serialize(const ResultsDocument& doc) { return document_to_json(doc).dump(2) + "\n"; }

ResultsDocument parse_results(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Errc::config, std::string("results JSON: ") + e.what());
  }
  return document_from_json(j);
}

ResultsDocument load_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_results(ss.str());
}

// ---------------------------------------------------------------------------
// Text renderers

namespace {

std::string fixed(double v, int digits = 3) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s == "-0.000") s = "0.000";
  return s;
}

std::string source_label(const std::string& source) {
  if (source == "pooled" || source == "target") return source;
  return "trial " + source;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

std::string cell(const ContrastEstimate& e) {
  return fixed(e.point) + " (" + fixed(e.ci_lower) + ", " + fixed(e.ci_upper) + ")";
}

enum class Column { unadjusted, outcome_model, weighting };

Column column_of(Estimator e) {
  switch (e) {
    case Estimator::unadjusted: return Column::unadjusted;
    case Estimator::psi_te:
    case Estimator::phi_te:
    case Estimator::pp_te: return Column::outcome_model;
    default: return Column::weighting;
  }
}

}  // namespace

std::string render_table(const ResultsDocument& doc) {
  std::ostringstream out;
  out << "analysis: " << doc.analysis << "\n";
  if (!doc.estimates.empty()) {
    const auto& first = doc.estimates.front();
    std::string contrast = first.z + " vs " + first.z_prime;
    if (first.a && first.a_prime)
      contrast = "(" + first.z + ", " + *first.a + ") vs (" + first.z_prime + ", " + *first.a_prime + ")";
    char level[32];
    std::snprintf(level, sizeof level, "%g%%", first.level * 100.0);
    out << "contrast: " << contrast << "; point estimates and " << level << " confidence intervals\n\n";

    // Sources in first-appearance order; sensitivity rows keep their own line.
    struct Line {
      std::string label;
      std::string cols[3];
    };
    std::vector<Line> lines;
    std::vector<std::string> keys;
    for (const auto& e : doc.estimates) {
      std::string key = e.source;
      std::string label = source_label(e.source);
      if (e.bias_adjustment) {
        key += "|bias " + fixed(*e.bias_adjustment);
        label += " + bias " + fixed(*e.bias_adjustment);
      }
      auto it = std::find(keys.begin(), keys.end(), key);
      std::size_t idx = static_cast<std::size_t>(it - keys.begin());
      if (it == keys.end()) {
        keys.push_back(key);
        lines.push_back({label, {"", "", ""}});
      }
      lines[idx].cols[static_cast<int>(column_of(e.estimator))] = cell(e);
    }
    std::size_t w0 = 6, w[3] = {10, 13, 9};
    for (const auto& l : lines) {
      w0 = std::max(w0, l.label.size());
      for (int c = 0; c < 3; ++c) w[c] = std::max(w[c], l.cols[c].size());
    }
    out << pad("Source", w0) << "  " << pad("Unadjusted", w[0]) << "  " << pad("Outcome model", w[1]) << "  "
        << "Weighting" << "\n";
    for (const auto& l : lines) {
      std::string row = pad(l.label, w0) + "  " + pad(l.cols[0].empty() ? "-" : l.cols[0], w[0]) + "  " +
                        pad(l.cols[1].empty() ? "-" : l.cols[1], w[1]) + "  " + (l.cols[2].empty() ? "-" : l.cols[2]);
      while (!row.empty() && row.back() == ' ') row.pop_back();
      out << row << "\n";
    }
  }
  if (doc.diagnostics.contains("falsification")) {
    const auto& f = doc.diagnostics["falsification"];
    out << "\nfalsification test: statistic " << fixed(f["statistic"].is_null() ? NAN : f["statistic"].get<double>())
        << ", df " << f["df"].get<std::size_t>() << ", p-value "
        << fixed(f["p_value"].is_null() ? NAN : f["p_value"].get<double>(), 4) << "\n";
  }
  if (doc.diagnostics.contains("homogeneity")) {
    const auto& h = doc.diagnostics["homogeneity"];
    out << "\nhomogeneity of transported effects\n";
    out << pad("Trial", 8) << pad("Transported (SE)", 22) << "Self-standardized (SE)\n";
    for (const auto& r : h["trials"])
      out << pad(std::to_string(r["trial"].get<int>()), 8)
          << pad(fixed(r["transported"].get<double>()) + " (" + fixed(r["transported_se"].get<double>()) + ")", 22)
          << fixed(r["self_standardized"].get<double>()) + " (" + fixed(r["self_se"].get<double>()) + ")" << "\n";
    for (const char* name : {"transported_test", "classical_test"}) {
      const auto& t = h[name];
      out << name << ": statistic " << fixed(t["statistic"].get<double>()) << ", df " << t["df"].get<std::size_t>()
          << ", p-value " << fixed(t["p_value"].get<double>(), 4) << "\n";
    }
  }
  if (doc.diagnostics.contains("positivity")) {
    const auto& p = doc.diagnostics["positivity"];
    out << "\nparticipation positivity (target rows below " << fixed(kPositivityFlag, 2) << ")\n";
    for (const auto& t : p["trials"]) {
      out << "trial " << t["trial"].get<int>() << ": ";
      if (t.contains("failure")) out << t["failure"].get<std::string>();
      else
        out << t["target_probabilities"]["below_0.01"].get<std::size_t>() << " flagged, max odds weight "
            << fixed(t["max_odds_weight"].get<double>());
      out << "\n";
    }
  }
  if (doc.diagnostics.contains("constraint")) {
    out << "\nbias-function constraint: max discrepancy "
        << fixed(doc.diagnostics["constraint"]["max_discrepancy"].get<double>(), 6) << "\n";
  }
  if (doc.diagnostics.contains("failures")) {
    out << "\nfailed estimates\n";
    for (const auto& f : doc.diagnostics["failures"])
      out << "trial " << f["trial"].get<int>() << " " << f["estimator"].get<std::string>() << ": "
          << f["code"].get<std::string>() << ": " << f["message"].get<std::string>() << "\n";
  }
  std::vector<std::string> warnings = doc.warnings;
  for (const auto& e : doc.estimates)
    for (const auto& w : e.warnings) warnings.push_back(source_label(e.source) + " " +
                                                        std::string(estimator_name(e.estimator)) + ": " + w);
  if (!warnings.empty()) {
    out << "\nwarnings\n";
    for (const auto& w : warnings) out << "- " << w << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Forest plot

namespace {

enum class Marker { open_square, black_square, gray_square, black_diamond, gray_diamond };

Marker marker_of(const ContrastEstimate& e) {
  const Column c = column_of(e.estimator);
  if (c == Column::unadjusted) return Marker::open_square;
  if (e.source == "pooled") return c == Column::outcome_model ? Marker::black_diamond : Marker::gray_diamond;
  return c == Column::outcome_model ? Marker::black_square : Marker::gray_square;
}

const ContrastEstimate* benchmark_of(const ResultsDocument& doc) {
  for (const auto& e : doc.estimates)
    if (e.estimator == Estimator::unadjusted && e.source == "target") return &e;
  return nullptr;
}

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
};

Axis axis_of(const ResultsDocument& doc) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& e : doc.estimates)
    for (double v : {e.ci_lower, e.ci_upper, e.point})
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (!std::isfinite(lo)) return {-1.0, 1.0};
  double pad = 0.1 * (hi - lo);
  if (pad == 0.0) pad = std::max(0.1 * std::abs(lo), 0.5);
  return {lo - pad, hi + pad};
}

std::string row_label(const ContrastEstimate& e) {
  std::string s = source_label(e.source) + "  " + std::string(estimator_name(e.estimator));
  if (e.bias_adjustment) s += " (bias " + fixed(*e.bias_adjustment) + ")";
  return s;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_forest_svg(const ResultsDocument& doc) {
  if (doc.estimates.empty()) fail(Errc::empty_results, "no estimates to plot");
  constexpr double kWidth = 760, kLabel = 16, kLeft = 230, kRight = 560, kRow = 24, kTop = 30, kBottom = 50;
  const Axis axis = axis_of(doc);
  const double height = kTop + kRow * static_cast<double>(doc.estimates.size()) + kBottom;
  auto px = [&](double v) { return kLeft + (v - axis.lo) / (axis.hi - axis.lo) * (kRight - kLeft); };
  auto f2 = [](double v) { return fixed(v, 2); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f2(kWidth) << "\" height=\"" << f2(height)
    << "\" viewBox=\"0 0 " << f2(kWidth) << " " << f2(height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << f2(kWidth) << "\" height=\"" << f2(height) << "\" fill=\"white\"/>\n";
  const double plot_bottom = kTop + kRow * static_cast<double>(doc.estimates.size());

  if (const auto* b = benchmark_of(doc)) {
    s << "<line class=\"benchmark\" x1=\"" << f2(px(b->point)) << "\" y1=\"" << f2(kTop - 10) << "\" x2=\""
      << f2(px(b->point)) << "\" y2=\"" << f2(plot_bottom) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (double v : {b->ci_lower, b->ci_upper})
      s << "<line class=\"benchmark-ci\" x1=\"" << f2(px(v)) << "\" y1=\"" << f2(kTop - 10) << "\" x2=\"" << f2(px(v))
        << "\" y2=\"" << f2(plot_bottom) << "\" stroke=\"black\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (std::size_t r = 0; r < doc.estimates.size(); ++r) {
    const auto& e = doc.estimates[r];
    const double y = kTop + kRow * (static_cast<double>(r) + 0.5);
    s << "<text x=\"" << f2(kLabel) << "\" y=\"" << f2(y + 4) << "\">" << xml_escape(row_label(e)) << "</text>\n";
    s << "<line class=\"ci\" x1=\"" << f2(px(e.ci_lower)) << "\" y1=\"" << f2(y) << "\" x2=\"" << f2(px(e.ci_upper))
      << "\" y2=\"" << f2(y) << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    for (double v : {e.ci_lower, e.ci_upper})
      s << "<line x1=\"" << f2(px(v)) << "\" y1=\"" << f2(y - 4) << "\" x2=\"" << f2(px(v)) << "\" y2=\""
        << f2(y + 4) << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    const double cx = px(e.point);
    const Marker m = marker_of(e);
    const char* fill = (m == Marker::open_square) ? "white"
                       : (m == Marker::black_square || m == Marker::black_diamond) ? "black"
                                                                                   : "gray";
    if (m == Marker::black_diamond || m == Marker::gray_diamond) {
      s << "<polygon class=\"marker\" points=\"" << f2(cx) << "," << f2(y - 7) << " " << f2(cx + 7) << "," << f2(y)
        << " " << f2(cx) << "," << f2(y + 7) << " " << f2(cx - 7) << "," << f2(y) << "\" fill=\"" << fill
        << "\" stroke=\"black\"/>\n";
    } else {
      s << "<rect class=\"marker\" x=\"" << f2(cx - 5) << "\" y=\"" << f2(y - 5)
        << "\" width=\"10.00\" height=\"10.00\" fill=\"" << fill << "\" stroke=\"black\"/>\n";
    }
    s << "<text x=\"" << f2(kRight + 20) << "\" y=\"" << f2(y + 4) << "\">" << cell(e) << "</text>\n";
  }

  const double ay = plot_bottom + 10;
  s << "<line class=\"axis\" x1=\"" << f2(kLeft) << "\" y1=\"" << f2(ay) << "\" x2=\"" << f2(kRight) << "\" y2=\""
    << f2(ay) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = axis.lo + (axis.hi - axis.lo) * t / 4.0;
    s << "<line x1=\"" << f2(px(v)) << "\" y1=\"" << f2(ay) << "\" x2=\"" << f2(px(v)) << "\" y2=\"" << f2(ay + 5)
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << f2(px(v)) << "\" y=\"" << f2(ay + 18) << "\" text-anchor=\"middle\">" << fixed(v, 2)
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string render_forest_text(const ResultsDocument& doc, std::size_t width) {
  if (doc.estimates.empty()) fail(Errc::empty_results, "no estimates to plot");
  width = std::max<std::size_t>(width, 10);
  const Axis axis = axis_of(doc);
  auto col = [&](double v) {
    const double t = (v - axis.lo) / (axis.hi - axis.lo) * static_cast<double>(width - 1);
    return static_cast<std::size_t>(std::clamp(std::lround(t), 0L, static_cast<long>(width - 1)));
  };
  std::size_t lw = 0;
  for (const auto& e : doc.estimates) lw = std::max(lw, row_label(e).size());
  const auto* bench = benchmark_of(doc);

  std::ostringstream out;
  for (const auto& e : doc.estimates) {
    std::string line(width, ' ');
    if (bench) {
      line[col(bench->ci_lower)] = ':';
      line[col(bench->ci_upper)] = ':';
      line[col(bench->point)] = '|';
    }
    const std::size_t a = col(e.ci_lower), b = col(e.ci_upper);
    for (std::size_t k = a; k <= b; ++k) line[k] = '-';
    line[a] = '[';
    line[b] = ']';
    char mark = 'o';
    switch (marker_of(e)) {
      case Marker::open_square: mark = 'o'; break;
      case Marker::black_square: mark = '#'; break;
      case Marker::gray_square: mark = '+'; break;
      case Marker::black_diamond: mark = 'D'; break;
      case Marker::gray_diamond: mark = 'd'; break;
    }
    line[col(e.point)] = mark;
    out << pad(row_label(e), lw) << "  " << line << "  " << cell(e) << "\n";
  }
  out << std::string(lw + 2, ' ') << pad(fixed(axis.lo, 2), width - fixed(axis.hi, 2).size()) << fixed(axis.hi, 2)
      << "\n";
  out << "o unadjusted  # outcome model  + weighting  D pooled outcome model  d pooled weighting";
  if (bench) out << "  | benchmark";
  out << "\n";
  return out.str();
}

void write_outputs(const ResultsDocument& doc, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(Errc::io, "cannot create '" + dir.string() + "': " + ec.message());
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) fail(Errc::io, "cannot write '" + (dir / name).string() + "'");
    out << text;
    if (!out) fail(Errc::io, "write failed for '" + (dir / name).string() + "'");
  };
  put("results.json", serialize(doc));
  put("results.txt", render_table(doc));
  if (!doc.estimates.empty()) {
    put("forest.svg", render_forest_svg(doc));
    put("forest.txt", render_forest_text(doc));
  }
}

}  // namespace tmeta

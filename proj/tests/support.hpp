#pragma once

#include "transport_meta/dataset.hpp"
#include "transport_meta/error.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(TMETA_FIXTURE_DIR) / name;
}

inline tmeta::SchemaConfig x_schema() {
  tmeta::SchemaConfig schema;
  schema.covariates = {"x"};
  return schema;
}

inline tmeta::CompositeDataset load_fixture(const std::string& name) {
  tmeta::SchemaConfig schema;
  schema.covariates = {"x"};
  if (name == "d3.csv") {
    schema.received = "A";
    schema.post_covariates = {"l"};
  }
  return tmeta::ingest_csv(fixture(name), schema);
}

// Fixture rows read without the library: every column as text.
struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw std::runtime_error("no column " + name);
  }
  double num(std::size_t r, const std::string& name) const { return std::stod(rows[r][col(name)]); }
  int integer(std::size_t r, const std::string& name) const { return std::stoi(rows[r][col(name)]); }
};

inline RawTable read_raw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  RawTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) t.header = cells, first = false;
    else t.rows.push_back(cells);
  }
  return t;
}

// Cell sums keyed by (stratum, x, z).
struct Cells {
  std::map<std::tuple<int, int, int>, double> sum;
  std::map<std::tuple<int, int, int>, int> count;
  std::map<std::pair<int, int>, int> by_sx;  // (stratum, x) row count

  double mean(int s, int x, int z) const { return sum.at({s, x, z}) / count.at({s, x, z}); }
  int n(int s, int x, int z) const {
    auto it = count.find({s, x, z});
    return it == count.end() ? 0 : it->second;
  }
};

inline Cells tabulate(const RawTable& t) {
  Cells c;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int s = t.integer(r, "S");
    const int x = t.integer(r, "x");
    ++c.by_sx[{s, x}];
    if (s == 0) continue;
    const int z = t.integer(r, "Z");
    c.sum[{s, x, z}] += t.num(r, "Y");
    ++c.count[{s, x, z}];
  }
  return c;
}

inline int target_n(const Cells& c) {
  int n0 = 0;
  for (const auto& [k, v] : c.by_sx)
    if (k.first == 0) n0 += v;
  return n0;
}

// Outcome form, one trial: target average of the trial's cell mean differences.
inline double psi_outcome(const Cells& c, int trial, int z, int zp) {
  double total = 0.0;
  for (const auto& [k, v] : c.by_sx)
    if (k.first == 0) total += v * (c.mean(trial, k.second, z) - c.mean(trial, k.second, zp));
  return total / target_n(c);
}

// Weighting form, one trial: sum over trial rows of odds * signed Y / p,
// odds and p at their empirical cell frequencies.
inline double psi_weighting(const RawTable& t, const Cells& c, int trial, int z, int zp) {
  double total = 0.0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.integer(r, "S") != trial) continue;
    const int x = t.integer(r, "x");
    const int zr = t.integer(r, "Z");
    if (zr != z && zr != zp) continue;
    const double odds = double(c.by_sx.at({0, x})) / c.by_sx.at({trial, x});
    const double p = double(c.n(trial, x, zr)) / c.by_sx.at({trial, x});
    total += odds * (zr == z ? 1.0 : -1.0) * t.num(r, "Y") / p;
  }
  return total / target_n(c);
}

// Pooled outcome form: target average of the pooled-trial mean of the
// inverse-probability transformed outcome within each X cell.
inline double phi_outcome(const RawTable& t, const Cells& c, int z, int zp) {
  std::map<int, double> u_sum;
  std::map<int, int> u_n;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int s = t.integer(r, "S");
    if (s == 0) continue;
    const int x = t.integer(r, "x");
    const int zr = t.integer(r, "Z");
    double u = 0.0;
    if (zr == z || zr == zp) {
      const double p = double(c.n(s, x, zr)) / c.by_sx.at({s, x});
      u = (zr == z ? 1.0 : -1.0) * t.num(r, "Y") / p;
    }
    u_sum[x] += u;
    ++u_n[x];
  }
  double total = 0.0;
  for (const auto& [k, v] : c.by_sx)
    if (k.first == 0) total += v * u_sum.at(k.second) / u_n.at(k.second);
  return total / target_n(c);
}

// Pooled weighting form: odds of target versus any trial within X cells.
inline double phi_weighting(const RawTable& t, const Cells& c, int z, int zp) {
  std::map<int, int> trial_n;
  for (const auto& [k, v] : c.by_sx)
    if (k.first != 0) trial_n[k.second] += v;
  double total = 0.0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int s = t.integer(r, "S");
    if (s == 0) continue;
    const int x = t.integer(r, "x");
    const int zr = t.integer(r, "Z");
    if (zr != z && zr != zp) continue;
    const double odds = double(c.by_sx.at({0, x})) / trial_n.at(x);
    const double p = double(c.n(s, x, zr)) / c.by_sx.at({s, x});
    total += odds * (zr == z ? 1.0 : -1.0) * t.num(r, "Y") / p;
  }
  return total / target_n(c);
}

// Nested per-protocol mean for (z, a) in one trial of a table with binary x,
// l columns: target average over x of sum_l Pr[l | x, z] * mean(Y | x, l, z, a).
inline double pp_theta(const RawTable& t, int trial, int z, int a) {
  std::map<std::pair<int, int>, double> y_sum;
  std::map<std::pair<int, int>, int> y_n;
  std::map<std::pair<int, int>, int> l_n;
  std::map<int, int> x_n, target_x;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int s = t.integer(r, "S");
    const int x = t.integer(r, "x");
    if (s == 0) {
      ++target_x[x];
      continue;
    }
    if (s != trial || t.integer(r, "Z") != z) continue;
    const int l = t.integer(r, "l");
    ++x_n[x];
    ++l_n[{x, l}];
    if (t.integer(r, "A") == a) {
      y_sum[{x, l}] += t.num(r, "Y");
      ++y_n[{x, l}];
    }
  }
  double total = 0.0;
  int n0 = 0;
  for (const auto& [x, nx] : target_x) {
    double inner = 0.0;
    for (int l = 0; l <= 1; ++l) {
      const auto it = l_n.find({x, l});
      if (it == l_n.end()) continue;
      inner += double(it->second) / x_n.at(x) * y_sum.at({x, l}) / y_n.at({x, l});
    }
    total += nx * inner;
    n0 += nx;
  }
  return total / n0;
}

}  // namespace testing

// Evaluates expr and returns the error code it raised, if any.
#define ERRC_OF(expr)                                         \
  ([&]() -> std::optional<tmeta::Errc> {                      \
    try {                                                     \
      (void)(expr);                                           \
    } catch (const tmeta::Error& e_) {                        \
      return e_.code();                                       \
    }                                                         \
    return std::nullopt;                                      \
  }())


namespace doctest {
template <>
struct StringMaker<std::optional<tmeta::Errc>> {
  static String convert(const std::optional<tmeta::Errc>& e) {
    return e ? String(std::string(tmeta::errc_name(*e)).c_str()) : String("no error");
  }
};
template <>
struct StringMaker<tmeta::Errc> {
  static String convert(tmeta::Errc e) { return String(std::string(tmeta::errc_name(e)).c_str()); }
};
}  // namespace doctest

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "../error.hpp"
#include "../optimize.hpp"

namespace rvrs::cli {

using Json = nlohmann::ordered_json;

// 17 significant digits; non-finite values as nan / inf / -inf.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Cell = std::variant<long long, double, std::string>;

inline std::string cell_text(const Cell& c) {
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&c)) return num(*d);
  return std::get<std::string>(c);
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path), width_(header.size()) {
    if (!out_) throw Error("cannot write '" + path.string() + "'");
    write_line(header);
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != width_) throw ShapeError("CsvWriter: row width does not match header");
    std::vector<std::string> text;
    text.reserve(cells.size());
    for (const auto& c : cells) text.push_back(cell_text(c));
    write_line(text);
  }

 private:
  void write_line(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
    out_ << '\n';
  }

  std::ofstream out_;
  std::size_t width_;
};

inline void write_trace(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  CsvWriter w(path, {"iter", "elbo_proxy", "T", "Zr_hat", "lr"});
  for (const auto& r : trace) w.row({r.iter, r.elbo_proxy, r.T, r.Zr_hat, r.lr});
}

inline void write_checkpoints(const std::filesystem::path& path, const std::vector<Checkpoint>& cps) {
  CsvWriter w(path, {"iter", "elbo", "Zr"});
  for (const auto& c : cps) w.row({c.iter, c.elbo, c.Zr});
}

namespace detail {

inline void dump_json(const Json& j, std::string& out, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string end_pad(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad + Json(it.key()).dump() + ": ";
        dump_json(it.value(), out, indent, depth + 1);
      }
      out += "\n" + end_pad + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[";
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ", ";
        first = false;
        dump_json(v, out, indent, depth + 1);
      }
      out += "]";
      return;
    }
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      out += std::isfinite(v) ? num(v) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// JSON text with every floating-point number printed to 17 significant digits.
inline std::string to_json_text(const Json& j) {
  std::string out;
  detail::dump_json(j, out, 2, 0);
  out += '\n';
  return out;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << to_json_text(j);
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector json_vector(const Json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace rvrs::cli

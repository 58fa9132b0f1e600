#include "robustssm/report.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "robustssm/errors.hpp"

#ifndef ROBUSTSSM_VERSION
#define ROBUSTSSM_VERSION "0.0.0"
#endif

namespace rssm {

std::string_view tool_version() noexcept { return ROBUSTSSM_VERSION; }

namespace {

struct KindInfo {
  ReportKind kind;
  std::string_view name;
  std::vector<std::string_view> columns;
};

const std::array<KindInfo, 8>& kinds() {
  static const std::array<KindInfo, 8> table{{
      {ReportKind::clean, "clean", {"split"}},
      {ReportKind::whitebox, "whitebox", {"attack", "epsilon", "steps", "alpha"}},
      {ReportKind::patchdrop, "patchdrop", {"ratio", "grid", "fill"}},
      {ReportKind::corruption, "corruption", {"family", "severity", "level"}},
      {ReportKind::bitflip_random, "bitflip_random", {"region", "budget"}},
      {ReportKind::bitflip_layerwise, "bitflip_layerwise", {"group", "region", "budget"}},
      {ReportKind::bitflip_worst, "bitflip_worst", {"region", "budget", "filter", "best_seed", "fast_accuracy"}},
      {ReportKind::bitflip_activations, "bitflip_activations", {"group", "region", "budget"}},
  }};
  return table;
}

const KindInfo& info(ReportKind k) {
  for (const auto& i : kinds()) {
    if (i.kind == k) return i;
  }
  return kinds()[0];
}

constexpr std::array<std::string_view, 4> kValueColumns{"accuracy", "std", "trials", "nonfinite"};

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Splits one CSV record starting at `pos`; advances pos past the newline.
std::vector<std::string> read_record(std::string_view text, std::size_t& pos, std::size_t line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  while (pos < text.size()) {
    const char c = text[pos++];
    if (quoted) {
      if (c == '"') {
        if (pos < text.size() && text[pos] == '"') {
          fields.back() += '"';
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c == '\n') {
      return fields;
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw SchemaError("unterminated quote on CSV line " + std::to_string(line));
  return fields;
}

template <typename T>
T parse_value(const std::string& s, std::string_view column, std::size_t line) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw SchemaError("bad " + std::string(column) + " value '" + s + "' on CSV line " + std::to_string(line));
  }
  return v;
}

double parse_double(const std::string& s, std::string_view column, std::size_t line) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  return parse_value<double>(s, column, line);
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string_view to_string(ReportKind k) noexcept { return info(k).name; }

ReportKind parse_report_kind(std::string_view s) {
  for (const auto& i : kinds()) {
    if (i.name == s) return i.kind;
  }
  throw SchemaError("unknown report kind '" + std::string(s) + "'");
}

std::span<const std::string_view> label_columns(ReportKind k) noexcept { return info(k).columns; }

void EvalReport::set_header(std::string key, std::string value) {
  for (auto& [k, v] : header) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  header.emplace_back(std::move(key), std::move(value));
}

std::optional<std::string> EvalReport::header_value(std::string_view key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void EvalReport::validate() const {
  const std::size_t n = label_columns(kind).size();
  for (const auto& row : rows) {
    if (row.labels.size() != n) {
      throw SchemaError(std::string(to_string(kind)) + " rows need " + std::to_string(n) + " labels, got " +
                        std::to_string(row.labels.size()));
    }
  }
  for (const auto& [k, v] : header) {
    if (k.find_first_of(":\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw SchemaError("report header entries must be single-line and colon-free keys");
    }
  }
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::string emit_csv(const EvalReport& r) {
  r.validate();
  std::string out = "# kind: " + std::string(to_string(r.kind)) + "\n";
  for (const auto& [k, v] : r.header) out += "# " + k + ": " + v + "\n";
  out += "dataset";
  for (auto c : label_columns(r.kind)) out += "," + std::string(c);
  for (auto c : kValueColumns) out += "," + std::string(c);
  out += "\n";
  for (const auto& row : r.rows) {
    out += csv_field(row.dataset);
    for (const auto& l : row.labels) out += "," + csv_field(l);
    out += "," + format_number(row.accuracy) + "," + format_number(row.std) + "," + std::to_string(row.trials) +
           "," + std::to_string(row.nonfinite) + "\n";
  }
  return out;
}

EvalReport parse_csv(std::string_view text) {
  EvalReport r;
  std::size_t pos = 0, line = 0;
  bool have_kind = false;
  while (pos < text.size() && text[pos] == '#') {
    ++line;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view body = text.substr(pos + 1, nl - pos - 1);
    if (!body.empty() && body.back() == '\r') body.remove_suffix(1);
    if (!body.empty() && body.front() == ' ') body.remove_prefix(1);
    const std::size_t colon = body.find(": ");
    if (colon == std::string_view::npos) throw SchemaError("malformed header line " + std::to_string(line));
    const std::string key(body.substr(0, colon)), value(body.substr(colon + 2));
    if (key == "kind") {
      r.kind = parse_report_kind(value);
      have_kind = true;
    } else {
      r.header.emplace_back(key, value);
    }
    pos = nl + 1;
  }
  if (!have_kind) throw SchemaError("CSV lacks a '# kind:' header");
  if (pos >= text.size()) throw SchemaError("CSV lacks a column header");
  const auto cols = read_record(text, pos, ++line);
  std::vector<std::string> expected{"dataset"};
  for (auto c : label_columns(r.kind)) expected.emplace_back(c);
  for (auto c : kValueColumns) expected.emplace_back(c);
  if (cols != expected) throw SchemaError("unexpected columns for kind " + std::string(to_string(r.kind)));
  const std::size_t n_labels = label_columns(r.kind).size();
  while (pos < text.size()) {
    const auto f = read_record(text, pos, ++line);
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != expected.size()) throw SchemaError("wrong field count on CSV line " + std::to_string(line));
    ReportRow row;
    row.dataset = f[0];
    row.labels.assign(f.begin() + 1, f.begin() + 1 + static_cast<std::ptrdiff_t>(n_labels));
    row.accuracy = parse_double(f[1 + n_labels], "accuracy", line);
    row.std = parse_double(f[2 + n_labels], "std", line);
    row.trials = parse_value<std::size_t>(f[3 + n_labels], "trials", line);
    row.nonfinite = parse_value<std::size_t>(f[4 + n_labels], "nonfinite", line);
    r.rows.push_back(std::move(row));
  }
  return r;
}

std::string emit_markdown(const EvalReport& r) {
  r.validate();
  const auto cols = label_columns(r.kind);
  std::vector<std::string> datasets, conditions;
  auto condition_of = [&](const ReportRow& row) {
    std::string s;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (!s.empty()) s += ' ';
      s += std::string(cols[i]) + "=" + row.labels[i];
    }
    return s.empty() ? std::string("accuracy") : s;
  };
  auto add_unique = [](std::vector<std::string>& v, const std::string& s) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] == s) return i;
    }
    v.push_back(s);
    return v.size() - 1;
  };
  for (const auto& row : r.rows) {
    add_unique(datasets, row.dataset);
    add_unique(conditions, condition_of(row));
  }
  std::vector<std::vector<std::string>> cells(datasets.size(), std::vector<std::string>(conditions.size(), "-"));
  for (const auto& row : r.rows) {
    std::string cell = percent(row.accuracy);
    if (row.trials > 1) cell += " ± " + percent(row.std);
    if (row.nonfinite > 0) cell += " (" + std::to_string(row.nonfinite) + " non-finite)";
    cells[add_unique(datasets, row.dataset)][add_unique(conditions, condition_of(row))] = cell;
  }

  std::ostringstream md;
  md << "## " << to_string(r.kind) << "\n\n";
  if (r.kind == ReportKind::bitflip_activations) md << "Activation faults (extension beyond weight faults).\n\n";
  for (const auto& [k, v] : r.header) md << "- " << k << ": " << v << "\n";
  md << "\n| Dataset |";
  for (const auto& c : conditions) md << ' ' << c << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < conditions.size(); ++i) md << "---|";
  md << "\n";
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    md << "| " << datasets[d] << " |";
    for (const auto& c : cells[d]) md << ' ' << c << " |";
    md << "\n";
  }
  return md.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

void write_report(const EvalReport& r, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(stem.parent_path(), ec);
    if (ec) throw IoError("cannot create '" + stem.parent_path().string() + "': " + ec.message());
  }
  write_text(std::filesystem::path(stem).concat(".csv"), emit_csv(r));
  write_text(std::filesystem::path(stem).concat(".md"), emit_markdown(r));
}

EvalReport read_report(const std::filesystem::path& csv) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw IoError("cannot open '" + csv.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

EvalReport merge_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) throw SchemaError("nothing to merge");
  EvalReport out;
  out.kind = reports.front().kind;
  out.set_header("tool_version", std::string(tool_version()));
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    if (r.kind != out.kind) {
      throw SchemaError("cannot merge " + std::string(to_string(r.kind)) + " into " +
                        std::string(to_string(out.kind)));
    }
    const std::string tag = "source" + std::to_string(i);
    for (const auto& [k, v] : r.header) {
      if (k == "config_hash" || k == "baseline" || k == "seeds") out.set_header(tag + "." + k, v);
    }
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  }
  out.set_header("sources", std::to_string(reports.size()));
  return out;
}

}  // namespace rssm

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rssm {

std::string_view tool_version() noexcept;

enum class ReportKind {
  clean,
  whitebox,
  patchdrop,
  corruption,
  bitflip_random,
  bitflip_layerwise,
  bitflip_worst,
  // Faults injected into intermediate activations rather than weights.
  bitflip_activations,
};

std::string_view to_string(ReportKind k) noexcept;
ReportKind parse_report_kind(std::string_view s);

// Condition-label column names of a kind, in CSV order. Every row of a
// report has one label per column.
std::span<const std::string_view> label_columns(ReportKind k) noexcept;

struct ReportRow {
  std::string dataset;
  std::vector<std::string> labels;
  double accuracy = 0.0;
  double std = 0.0;
  std::size_t trials = 1;
  std::size_t nonfinite = 0;

  bool operator==(const ReportRow&) const = default;
};

struct EvalReport {
  ReportKind kind = ReportKind::clean;
  // Ordered metadata written as "# key: value" comment lines.
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<ReportRow> rows;

  void set_header(std::string key, std::string value);
  std::optional<std::string> header_value(std::string_view key) const;
  // Throws SchemaError if a row's label count does not fit the kind.
  void validate() const;

  bool operator==(const EvalReport&) const = default;
};

// Shortest representation that parses back to the same double.
std::string format_number(double v);

std::string emit_csv(const EvalReport& r);
// Throws SchemaError on malformed input.
EvalReport parse_csv(std::string_view text);

// Rows grouped by dataset, one column per distinct condition, accuracy in
// percent with two decimals (and "± std" when trials > 1).
std::string emit_markdown(const EvalReport& r);

// Writes <stem>.csv and <stem>.md. Throws IoError.
void write_report(const EvalReport& r, const std::filesystem::path& stem);
EvalReport read_report(const std::filesystem::path& csv);

// Concatenates rows of reports of the same kind in argument order.
// Throws SchemaError on mixed kinds or an empty input list.
EvalReport merge_reports(std::span<const EvalReport> reports);

}  // namespace rssm

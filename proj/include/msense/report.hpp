#pragma once

#include <string>
#include <utility>
#include <vector>

namespace msense {

enum class BoundKind { upper, lower };

struct ReportItem {
  std::string id;
  double value = 0.0;
  double bound = 0.0;
  /// bound - value for upper bounds, value - bound for lower bounds.
  double margin = 0.0;
  bool pass = true;
  /// False when the item's hypothesis does not hold; inactive items pass.
  bool active = true;
  BoundKind kind = BoundKind::upper;
};

/// Ordered list of checks evaluated at one time point.
struct InvariantReport {
  double t = 0.0;
  std::vector<ReportItem> items;
  /// Free-form scalars that are reported but not checked.
  std::vector<std::pair<std::string, double>> info;

  /// Default slack is 1e-9 * max(1, |bound|).
  ReportItem& add(std::string id, double value, double bound, BoundKind kind = BoundKind::upper);
  /// Same, with an explicit absolute slack (0 for checks whose bound already
  /// is a tolerance).
  ReportItem& add_with_slack(std::string id, double value, double bound, BoundKind kind, double slack);
  ReportItem& add_inactive(std::string id, double value, double bound, BoundKind kind = BoundKind::upper);
  void note(std::string key, double value) { info.emplace_back(std::move(key), value); }

  bool all_pass() const;
  /// Throws InvalidArgument for an unknown id.
  const ReportItem& at(const std::string& id) const;
  bool contains(const std::string& id) const;
  double info_at(const std::string& key) const;
  /// Id of the first failing item, or empty.
  std::string first_failure() const;
};

double default_slack(double bound);

}  // namespace msense

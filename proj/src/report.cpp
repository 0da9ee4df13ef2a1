#include "msense/report.hpp"

#include <algorithm>
#include <cmath>

#include "msense/errors.hpp"

namespace msense {

double default_slack(double bound) { return 1e-9 * std::max(1.0, std::abs(bound)); }

ReportItem& InvariantReport::add(std::string id, double value, double bound, BoundKind kind) {
  return add_with_slack(std::move(id), value, bound, kind, default_slack(bound));
}

ReportItem& InvariantReport::add_with_slack(std::string id, double value, double bound, BoundKind kind,
                                            double slack) {
  ReportItem item;
  item.id = std::move(id);
  item.value = value;
  item.bound = bound;
  item.kind = kind;
  item.margin = kind == BoundKind::upper ? bound - value : value - bound;
  // NaN margins fail.
  item.pass = item.margin >= -slack;
  items.push_back(std::move(item));
  return items.back();
}

ReportItem& InvariantReport::add_inactive(std::string id, double value, double bound, BoundKind kind) {
  ReportItem& item = add(std::move(id), value, bound, kind);
  item.active = false;
  item.pass = true;
  return item;
}

bool InvariantReport::all_pass() const {
  return std::all_of(items.begin(), items.end(), [](const ReportItem& i) { return i.pass; });
}

const ReportItem& InvariantReport::at(const std::string& id) const {
  for (const auto& item : items) {
    if (item.id == id) return item;
  }
  throw InvalidArgument("report has no item '" + id + "'");
}

bool InvariantReport::contains(const std::string& id) const {
  return std::any_of(items.begin(), items.end(), [&](const ReportItem& i) { return i.id == id; });
}

double InvariantReport::info_at(const std::string& key) const {
  for (const auto& [k, v] : info) {
    if (k == key) return v;
  }
  throw InvalidArgument("report has no info '" + key + "'");
}

std::string InvariantReport::first_failure() const {
  for (const auto& item : items) {
    if (!item.pass) return item.id;
  }
  return {};
}

}  // namespace msense

#include "dpguard/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "dpguard/error.hpp"
#include "json.hpp"

namespace dpguard::metrics {

ClassCounts confusion_counts(const std::vector<CategorySet>& predictions,
                             const std::vector<CategorySet>& truths,
                             const std::vector<int>& classes) {
  if (predictions.size() != truths.size()) {
    throw Error(ErrorKind::kValidation,
                "confusion_counts: " + std::to_string(predictions.size()) + " predictions vs " +
                    std::to_string(truths.size()) + " truths");
  }
  ClassCounts counts;
  for (int c : classes) counts[c];
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& pred = predictions[i];
    const auto& truth = truths[i];
    for (int c : pred) {
      auto it = counts.find(c);
      if (it == counts.end()) continue;
      if (truth.count(c)) {
        ++it->second.tp;
      } else {
        ++it->second.fp;
      }
    }
    for (int c : truth) {
      auto it = counts.find(c);
      if (it != counts.end() && !pred.count(c)) ++it->second.fn;
    }
  }
  return counts;
}

PRF prf(const Counts& c) {
  PRF out;
  if (c.tp + c.fp > 0) out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (out.precision + out.recall > 0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

PRF micro_average(const ClassCounts& counts) {
  Counts pooled;
  for (const auto& [id, c] : counts) {
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.fn += c.fn;
  }
  return prf(pooled);
}

PRF macro_average(const std::vector<PRF>& per_class) {
  if (per_class.empty()) throw Error(ErrorKind::kValidation, "macro_average needs at least one class");
  PRF out;
  for (const auto& p : per_class) {
    out.precision += p.precision;
    out.recall += p.recall;
    out.f1 += p.f1;
  }
  const double n = static_cast<double>(per_class.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

EvalReport evaluate(const std::vector<CategorySet>& predictions,
                    const std::vector<CategorySet>& truths, const Taxonomy& taxonomy,
                    const EvalOptions& options) {
  std::vector<int> classes = taxonomy.detection_classes();
  if (!options.include_no_dp) classes.erase(classes.begin());
  const ClassCounts counts = confusion_counts(predictions, truths, classes);

  std::set<int> averaged(classes.begin(), classes.end());
  if (!options.supported.empty()) {
    std::set<int> keep;
    for (int c : options.supported) {
      if (averaged.count(c)) keep.insert(c);
    }
    averaged = std::move(keep);
  }

  EvalReport report;
  ClassCounts pooled;
  std::vector<PRF> per_class;
  for (int c : classes) {
    const Counts& k = counts.at(c);
    ClassRow row{c, taxonomy.at(c).name, prf(k), k.support()};
    report.classes.push_back(row);
    if (averaged.count(c)) {
      pooled[c] = k;
      per_class.push_back(row.scores);
    }
  }
  report.micro = micro_average(pooled);
  if (!per_class.empty()) report.macro = macro_average(per_class);
  return report;
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json doc;
  const auto prf_json = [](const PRF& p) {
    return nlohmann::ordered_json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
  };
  doc["classes"] = nlohmann::ordered_json::array();
  for (const auto& row : report.classes) {
    auto entry = prf_json(row.scores);
    entry["id"] = row.id;
    entry["name"] = row.name;
    entry["support"] = row.support;
    doc["classes"].push_back(entry);
  }
  doc["micro"] = prf_json(report.micro);
  doc["macro"] = prf_json(report.macro);
  return doc.dump(2);
}

std::string to_table(const EvalReport& report) {
  std::size_t width = 9;
  for (const auto& row : report.classes) width = std::max(width, row.name.size() + 5);
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s %10s %10s %10s %8s\n", static_cast<int>(width), "Category",
                "Precision", "Recall", "F1", "Support");
  out += buf;
  for (const auto& row : report.classes) {
    const std::string label = std::to_string(row.id) + " - " + row.name;
    std::snprintf(buf, sizeof buf, "%-*s %10.4f %10.4f %10.4f %8ld\n", static_cast<int>(width),
                  label.c_str(), row.scores.precision, row.scores.recall, row.scores.f1, row.support);
    out += buf;
  }
  for (const auto& [label, p] : {std::pair{"Micro avg", report.micro}, std::pair{"Macro avg", report.macro}}) {
    std::snprintf(buf, sizeof buf, "%-*s %10.4f %10.4f %10.4f\n", static_cast<int>(width), label,
                  p.precision, p.recall, p.f1);
    out += buf;
  }
  return out;
}

}  // namespace dpguard::metrics

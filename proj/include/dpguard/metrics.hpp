#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpguard/taxonomy.hpp"

namespace dpguard::metrics {

struct Counts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long support() const { return tp + fn; }
};

// Per class id.
using ClassCounts = std::map<int, Counts>;

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Multi-label counting over aligned (prediction, truth) pairs. Only ids in
// `classes` are counted; every listed class gets an entry.
ClassCounts confusion_counts(const std::vector<CategorySet>& predictions,
                             const std::vector<CategorySet>& truths,
                             const std::vector<int>& classes);

// Zero denominators yield 0.
PRF prf(const Counts& counts);
PRF micro_average(const ClassCounts& counts);
PRF macro_average(const std::vector<PRF>& per_class);

struct ClassRow {
  int id = 0;
  std::string name;
  PRF scores;
  long support = 0;
};

struct EvalReport {
  std::vector<ClassRow> classes;
  PRF micro;
  PRF macro;
};

struct EvalOptions {
  bool include_no_dp = true;
  // Restrict the averages to the classes a tool supports; empty = all classes.
  std::vector<int> supported;
};

EvalReport evaluate(const std::vector<CategorySet>& predictions,
                    const std::vector<CategorySet>& truths, const Taxonomy& taxonomy,
                    const EvalOptions& options = {});

std::string to_json(const EvalReport& report);
// Aligned text table: one row per class, then micro and macro rows.
std::string to_table(const EvalReport& report);

}  // namespace dpguard::metrics
